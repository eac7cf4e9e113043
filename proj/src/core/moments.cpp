#include "core/moments.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "core/error.hpp"

namespace pfc {
namespace {

constexpr int kMaxParams = 8;
constexpr int kMaxMoments = 9;

inline double at(const double* theta, int i) { return i >= 0 ? theta[i] : 0.0; }
inline void add(double* d, int i, double v) {
  if (i >= 0) d[i] += v;
}

// Residual r with gradient dr, multiplied by data instrument z.
inline void emit(double r, const double* dr, double z, int P, double* g,
                 double* jac, int& q) {
  g[q] = r * z;
  if (jac)
    for (int p = 0; p < P; ++p) jac[q * P + p] = dr[p] * z;
  ++q;
}

bool gnr_kernel(const LaggedRow& x, const double* th, const MomentSpec& sp,
                double* g, double* jac, GnrResiduals* out) {
  const int P = sp.num_params();
  const int ib3 = sp.index(Param::Beta3), iE = sp.index(Param::E);
  const int ib0 = sp.index(Param::Beta0), ib1 = sp.index(Param::Beta1);
  const int ib2 = sp.index(Param::Beta2), id0 = sp.index(Param::Delta0);
  const int id1 = sp.index(Param::Delta1);
  const double b3 = th[ib3], E = th[iE];
  if (!(b3 > 0.0) || !(E > 0.0)) return false;
  const double b0 = at(th, ib0), b1 = th[ib1], b2 = at(th, ib2);
  const double d0 = at(th, id0), d1 = th[id1];

  const double c = std::log(b3 * E);
  const double eps = c - x.s;
  const double eps_lag = c - x.s_lag;
  const double yr = x.y - b3 * x.m - eps;
  const double yr_lag = x.y_lag - b3 * x.m_lag - eps_lag;
  const double xl = yr_lag - b1 * x.k_lag - b2 * x.l_lag;
  const double eta = yr - b0 - b1 * x.k - b2 * x.l - d0 - d1 * xl;
  const double ee = std::exp(eps);
  if (out) *out = {eps, eta, yr, yr_lag};

  int q = 0;
  g[q++] = eps;
  g[q++] = ee - E;
  if (!jac) {
    g[q++] = eta;
    g[q++] = eta * x.k;
    if (sp.labor()) g[q++] = eta * x.l;
    g[q++] = eta * yr_lag;
    return true;
  }
  double d_eps[kMaxParams] = {}, d_eta[kMaxParams] = {}, d_yrl[kMaxParams] = {};
  d_eps[ib3] = 1.0 / b3;
  d_eps[iE] = 1.0 / E;
  d_yrl[ib3] = -x.m_lag - 1.0 / b3;
  d_yrl[iE] = -1.0 / E;
  d_eta[ib3] = (-x.m - 1.0 / b3) - d1 * (-x.m_lag - 1.0 / b3);
  d_eta[iE] = -1.0 / E + d1 / E;
  add(d_eta, ib0, -1.0);
  add(d_eta, id0, -1.0);
  d_eta[ib1] = -x.k + d1 * x.k_lag;
  add(d_eta, ib2, -x.l + d1 * x.l_lag);
  d_eta[id1] = -xl;

  for (int p = 0; p < P; ++p) {
    jac[0 * P + p] = d_eps[p];
    jac[1 * P + p] = ee * d_eps[p];
  }
  jac[1 * P + iE] -= 1.0;
  emit(eta, d_eta, 1.0, P, g, jac, q);
  emit(eta, d_eta, x.k, P, g, jac, q);
  if (sp.labor()) emit(eta, d_eta, x.l, P, g, jac, q);
  g[q] = eta * yr_lag;
  for (int p = 0; p < P; ++p) jac[q * P + p] = d_eta[p] * yr_lag + eta * d_yrl[p];
  return true;
}

void acf_kernel(const LaggedRow& x, const double* th, const MomentSpec& sp,
                double* g, double* jac, AcfResiduals* out) {
  const int P = sp.num_params();
  const int ia0 = sp.index(Param::Alpha0), ia1 = sp.index(Param::Alpha1);
  const int ia2 = sp.index(Param::Alpha2), ia3 = sp.index(Param::Alpha3);
  const int ib0 = sp.index(Param::Beta0), ib1 = sp.index(Param::Beta1);
  const int ib2 = sp.index(Param::Beta2), id = sp.index(Param::Delta1);
  const double a0 = th[ia0], a1 = th[ia1], a2 = at(th, ia2), a3 = th[ia3];
  const double b0 = th[ib0], b1 = th[ib1], b2 = at(th, ib2), dl = th[id];

  const double phi = a0 + a1 * x.k + a2 * x.l + a3 * x.m;
  const double phi_lag = a0 + a1 * x.k_lag + a2 * x.l_lag + a3 * x.m_lag;
  const double eps = x.y - phi;
  const double omega_lag = phi_lag - b0 - b1 * x.k_lag - b2 * x.l_lag;
  const double v = x.y - b0 - b1 * x.k - b2 * x.l - dl * omega_lag;
  if (out) *out = {eps, v};

  double d_eps[kMaxParams] = {}, d_v[kMaxParams] = {};
  if (jac) {
    d_eps[ia0] = -1.0;
    d_eps[ia1] = -x.k;
    add(d_eps, ia2, -x.l);
    d_eps[ia3] = -x.m;
    d_v[ia0] = -dl;
    d_v[ia1] = -dl * x.k_lag;
    add(d_v, ia2, -dl * x.l_lag);
    d_v[ia3] = -dl * x.m_lag;
    d_v[ib0] = -1.0 + dl;
    d_v[ib1] = -x.k + dl * x.k_lag;
    add(d_v, ib2, -x.l + dl * x.l_lag);
    d_v[id] = -omega_lag;
  }
  int q = 0;
  emit(eps, d_eps, 1.0, P, g, jac, q);
  emit(eps, d_eps, x.k, P, g, jac, q);
  if (sp.labor()) emit(eps, d_eps, x.l, P, g, jac, q);
  emit(eps, d_eps, x.m, P, g, jac, q);
  emit(v, d_v, 1.0, P, g, jac, q);
  emit(v, d_v, x.k, P, g, jac, q);
  emit(v, d_v, x.k_lag, P, g, jac, q);
  if (sp.labor()) emit(v, d_v, x.l_lag, P, g, jac, q);
  emit(v, d_v, x.m_lag, P, g, jac, q);
}

double dyn_kernel(const LaggedRow& x, const double* th, const MomentSpec& sp,
                  double* g, double* jac) {
  const int P = sp.num_params();
  const int ib0 = sp.index(Param::Beta0), ib1 = sp.index(Param::Beta1);
  const int ib2 = sp.index(Param::Beta2), ib3 = sp.index(Param::Beta3);
  const int id = sp.index(Param::Delta1);
  const double b0 = th[ib0], b1 = th[ib1], b2 = at(th, ib2), b3 = th[ib3];
  const double dl = th[id];
  const double w = (x.y - dl * x.y_lag) - (1.0 - dl) * b0 -
                   b1 * (x.k - dl * x.k_lag) - b2 * (x.l - dl * x.l_lag) -
                   b3 * (x.m - dl * x.m_lag);
  if (!g) return w;
  double d_w[kMaxParams] = {};
  if (jac) {
    d_w[ib0] = -(1.0 - dl);
    d_w[ib1] = -(x.k - dl * x.k_lag);
    add(d_w, ib2, -(x.l - dl * x.l_lag));
    d_w[ib3] = -(x.m - dl * x.m_lag);
    d_w[id] = -x.y_lag + b0 + b1 * x.k_lag + b2 * x.l_lag + b3 * x.m_lag;
  }
  int q = 0;
  emit(w, d_w, 1.0, P, g, jac, q);
  emit(w, d_w, x.k, P, g, jac, q);
  if (sp.labor()) emit(w, d_w, x.l, P, g, jac, q);
  emit(w, d_w, x.k_lag, P, g, jac, q);
  if (sp.labor()) emit(w, d_w, x.l_lag, P, g, jac, q);
  emit(w, d_w, x.m_lag, P, g, jac, q);
  return w;
}

void check_length(const ParamVector& theta, const MomentSpec& spec) {
  if (theta.size() != spec.num_params())
    fail(ErrorKind::Config, "parameter vector has length " +
                                std::to_string(theta.size()) + ", expected " +
                                std::to_string(spec.num_params()));
}

[[noreturn]] void domain_error() {
  fail(ErrorKind::Domain, "GNR parameters require beta3 > 0 and E > 0");
}

}  // namespace

std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::GNR: return "gnr";
    case Strategy::ACF: return "acf";
    case Strategy::DynamicPanel: return "dynpanel";
  }
  return "?";
}

Strategy strategy_from_string(const std::string& s) {
  if (s == "gnr") return Strategy::GNR;
  if (s == "acf") return Strategy::ACF;
  if (s == "dynpanel") return Strategy::DynamicPanel;
  fail(ErrorKind::Config, "unknown strategy '" + s + "' (expected gnr, acf or dynpanel)");
}

MomentSpec::MomentSpec(Strategy strategy, bool ar1_intercept, bool labor)
    : strategy_(strategy), ar1_intercept_(ar1_intercept), labor_(labor) {
  std::fill(std::begin(idx_), std::end(idx_), -1);
  auto push = [&](Param role, const char* name) {
    idx_[static_cast<int>(role)] = static_cast<int>(names_.size());
    names_.emplace_back(name);
  };
  if (ar1_intercept && strategy != Strategy::GNR)
    fail(ErrorKind::Config,
         "ar1_intercept is only identified for the gnr strategy; for " +
             to_string(strategy) + " the constant is not separable from beta0");
  switch (strategy) {
    case Strategy::GNR:
      push(Param::Beta3, "beta3");
      push(Param::E, "E");
      if (!ar1_intercept) push(Param::Beta0, "beta0");
      push(Param::Beta1, "beta1");
      if (labor) push(Param::Beta2, "beta2");
      if (ar1_intercept) {
        push(Param::Delta0, "delta0");
        push(Param::Delta1, "delta1");
      } else {
        push(Param::Delta1, "delta");
      }
      num_moments_ = labor ? 6 : 5;
      break;
    case Strategy::ACF:
      push(Param::Alpha0, "alpha0");
      push(Param::Alpha1, "alpha1");
      if (labor) push(Param::Alpha2, "alpha2");
      push(Param::Alpha3, "alpha3");
      push(Param::Beta0, "beta0");
      push(Param::Beta1, "beta1");
      if (labor) push(Param::Beta2, "beta2");
      push(Param::Delta1, "delta");
      num_moments_ = labor ? 9 : 7;
      break;
    case Strategy::DynamicPanel:
      push(Param::Beta0, "beta0");
      push(Param::Beta1, "beta1");
      if (labor) push(Param::Beta2, "beta2");
      push(Param::Beta3, "beta3");
      push(Param::Delta1, "delta");
      num_moments_ = labor ? 6 : 4;
      break;
  }
}

std::string MomentSpec::residual_name() const {
  switch (strategy_) {
    case Strategy::GNR: return "eta+eps";
    case Strategy::ACF: return "v+eps";
    case Strategy::DynamicPanel: return "w";
  }
  return "";
}

void check_compatible(const PanelData& panel, const MomentSpec& spec) {
  if (spec.labor() && !panel.has_labor())
    fail(ErrorKind::Config,
         "the moment specification uses labor but the panel has no l column; "
         "set \"labor\": false or add the column");
  if (spec.needs_share() && !panel.has_share())
    fail(ErrorKind::Config,
         "the gnr strategy requires the intermediate-expenditure share column s "
         "(or prices_normalized = true so that s = m - y)");
}

GnrResiduals gnr_residuals(const LaggedRow& row, const ParamVector& theta,
                           const MomentSpec& spec) {
  if (spec.strategy() != Strategy::GNR)
    fail(ErrorKind::Config, "gnr_residuals called with a non-GNR spec");
  check_length(theta, spec);
  double g[kMaxMoments];
  GnrResiduals r{};
  if (!gnr_kernel(row, theta.data(), spec, g, nullptr, &r)) domain_error();
  return r;
}

AcfResiduals acf_residuals(const LaggedRow& row, const ParamVector& theta,
                           const MomentSpec& spec) {
  if (spec.strategy() != Strategy::ACF)
    fail(ErrorKind::Config, "acf_residuals called with a non-ACF spec");
  check_length(theta, spec);
  double g[kMaxMoments];
  AcfResiduals r{};
  acf_kernel(row, theta.data(), spec, g, nullptr, &r);
  return r;
}

double dynpanel_residual(const LaggedRow& row, const ParamVector& theta,
                         const MomentSpec& spec) {
  if (spec.strategy() != Strategy::DynamicPanel)
    fail(ErrorKind::Config, "dynpanel_residual called with a non-dynpanel spec");
  check_length(theta, spec);
  return dyn_kernel(row, theta.data(), spec, nullptr, nullptr);
}

double composite_residual(const LaggedRow& row, const ParamVector& theta,
                          const MomentSpec& spec) {
  switch (spec.strategy()) {
    case Strategy::GNR: {
      auto r = gnr_residuals(row, theta, spec);
      return r.eta + r.eps;
    }
    case Strategy::ACF: {
      auto r = acf_residuals(row, theta, spec);
      return r.v + r.eps;
    }
    case Strategy::DynamicPanel:
      return dynpanel_residual(row, theta, spec);
  }
  return 0.0;
}

bool moment_kernel(const LaggedRow& row, const double* theta,
                   const MomentSpec& spec, double* g, double* jac) {
  switch (spec.strategy()) {
    case Strategy::GNR:
      return gnr_kernel(row, theta, spec, g, jac, nullptr);
    case Strategy::ACF:
      acf_kernel(row, theta, spec, g, jac, nullptr);
      return true;
    case Strategy::DynamicPanel:
      dyn_kernel(row, theta, spec, g, jac);
      return true;
  }
  return false;
}

MomentVector moment_vector(const LaggedRow& row, const ParamVector& theta,
                           const MomentSpec& spec) {
  check_length(theta, spec);
  MomentVector g(spec.num_moments());
  if (!moment_kernel(row, theta.data(), spec, g.data(), nullptr)) domain_error();
  return g;
}

MomentEval evaluate_moments(std::span<const LaggedRow> rows,
                            const ParamVector& theta, const MomentSpec& spec,
                            bool with_jacobian) {
  check_length(theta, spec);
  if (rows.empty()) fail(ErrorKind::Data, "moment average over an empty row set");
  const int P = spec.num_params(), Q = spec.num_moments();
  MomentEval out;
  out.gbar = MomentVector::Zero(Q);
  if (with_jacobian) out.jacobian = Eigen::MatrixXd::Zero(Q, P);
  double g[kMaxMoments];
  double jac[kMaxMoments * kMaxParams];
  double gs[kMaxMoments] = {};
  double js[kMaxMoments * kMaxParams] = {};
  for (const auto& row : rows) {
    if (!moment_kernel(row, theta.data(), spec, g, with_jacobian ? jac : nullptr)) {
      out.in_domain = false;
      return out;
    }
    for (int q = 0; q < Q; ++q) gs[q] += g[q];
    if (with_jacobian)
      for (int i = 0; i < Q * P; ++i) js[i] += jac[i];
  }
  const double inv = 1.0 / static_cast<double>(rows.size());
  for (int q = 0; q < Q; ++q) {
    out.gbar[q] = gs[q] * inv;
    if (with_jacobian)
      for (int p = 0; p < P; ++p) out.jacobian(q, p) = js[q * P + p] * inv;
  }
  return out;
}

MomentVector firm_avg_moments(std::span<const LaggedRow> rows,
                              const ParamVector& theta, const MomentSpec& spec) {
  auto ev = evaluate_moments(rows, theta, spec, false);
  if (!ev.in_domain) domain_error();
  return ev.gbar;
}

double gmm_objective(std::span<const LaggedRow> rows, const ParamVector& theta,
                     const Eigen::MatrixXd& W, const MomentSpec& spec) {
  auto gbar = firm_avg_moments(rows, theta, spec);
  if (W.rows() != gbar.size() || W.cols() != gbar.size())
    fail(ErrorKind::Config, "weighting matrix has the wrong shape");
  return gbar.dot(W * gbar);
}

Eigen::VectorXd gmm_gradient(std::span<const LaggedRow> rows,
                             const ParamVector& theta, const Eigen::MatrixXd& W,
                             const MomentSpec& spec) {
  auto ev = evaluate_moments(rows, theta, spec, true);
  if (!ev.in_domain) domain_error();
  if (W.rows() != ev.gbar.size() || W.cols() != ev.gbar.size())
    fail(ErrorKind::Config, "weighting matrix has the wrong shape");
  return 2.0 * ev.jacobian.transpose() * (W * ev.gbar);
}

Eigen::MatrixXd checked_weighting(const Eigen::MatrixXd& W) {
  if (W.rows() != W.cols() || W.rows() == 0)
    fail(ErrorKind::Config, "weighting matrix must be square and non-empty");
  if (!W.allFinite()) fail(ErrorKind::Config, "weighting matrix has non-finite entries");
  const double asym = (W - W.transpose()).cwiseAbs().maxCoeff();
  if (asym > 1e-10 * std::max(1.0, W.cwiseAbs().maxCoeff()))
    fail(ErrorKind::Config, "weighting matrix is not symmetric");
  Eigen::LLT<Eigen::MatrixXd> llt(0.5 * (W + W.transpose()));
  if (llt.info() != Eigen::Success)
    fail(ErrorKind::Config, "weighting matrix is not positive definite");
  return 0.5 * (W + W.transpose());
}

Weighting weighting_from_moments(const Eigen::MatrixXd& G) {
  if (G.rows() == 0) fail(ErrorKind::Data, "optimal weighting needs at least one row");
  const Eigen::Index Q = G.cols();
  Eigen::MatrixXd S = G.transpose() * G / static_cast<double>(G.rows());
  const double ridge = 1e-10 * S.trace() / static_cast<double>(Q);
  S.diagonal().array() += ridge;
  Weighting out;
  Eigen::LLT<Eigen::MatrixXd> llt(S);
  if (!(ridge > 0.0) || llt.info() != Eigen::Success) {
    out.W = Eigen::MatrixXd::Identity(Q, Q);
    out.fell_back_to_identity = true;
    return out;
  }
  Eigen::MatrixXd inv = llt.solve(Eigen::MatrixXd::Identity(Q, Q));
  out.W = 0.5 * (inv + inv.transpose());
  if (!out.W.allFinite()) {
    out.W = Eigen::MatrixXd::Identity(Q, Q);
    out.fell_back_to_identity = true;
  }
  return out;
}

Weighting optimal_weighting(std::span<const LaggedRow> rows,
                            const ParamVector& theta_first_step,
                            const MomentSpec& spec) {
  check_length(theta_first_step, spec);
  if (rows.empty()) fail(ErrorKind::Data, "optimal weighting needs at least one row");
  Eigen::MatrixXd G(static_cast<Eigen::Index>(rows.size()), spec.num_moments());
  for (std::size_t t = 0; t < rows.size(); ++t) {
    Eigen::VectorXd g(spec.num_moments());
    if (!moment_kernel(rows[t], theta_first_step.data(), spec, g.data(), nullptr))
      domain_error();
    G.row(static_cast<Eigen::Index>(t)) = g.transpose();
  }
  return weighting_from_moments(G);
}

}  // namespace pfc
