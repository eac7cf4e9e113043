#include "core/classo.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "core/error.hpp"
#include "core/geomedian.hpp"
#include "core/optim.hpp"
#include "core/parallel.hpp"
#include "core/rng.hpp"

namespace pfc {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr std::uint32_t kMultistartPurpose = 0x6d737472;  // "mstr"

using Rows = std::span<const LaggedRow>;

std::vector<Rows> all_firms(const EstimationData& data) {
  std::vector<Rows> out;
  out.reserve(data.num_firms());
  for (std::size_t i = 0; i < data.num_firms(); ++i) out.push_back(data.firm(i));
  return out;
}

std::vector<Rows> member_rows(const EstimationData& data,
                              const std::vector<std::size_t>& members) {
  std::vector<Rows> out;
  out.reserve(members.size());
  for (auto i : members) out.push_back(data.firm(i));
  return out;
}

// Least squares with a fallback for rank-deficient designs.
Eigen::VectorXd least_squares(const Eigen::MatrixXd& X, const Eigen::VectorXd& y) {
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
  qr.setThreshold(1e-10);
  Eigen::VectorXd b = qr.solve(y);
  if (!b.allFinite()) b.setZero(X.cols());
  return b;
}

// Group moment map: mean over firms of the firm-averaged moments.
ResidualMap group_map(const std::vector<Rows>& firms, const MomentSpec& spec) {
  return [&firms, &spec](const Eigen::VectorXd& x, Eigen::VectorXd& r,
                         Eigen::MatrixXd* jac) {
    const int P = spec.num_params(), Q = spec.num_moments();
    r = Eigen::VectorXd::Zero(Q);
    if (jac) *jac = Eigen::MatrixXd::Zero(Q, P);
    for (const auto& rows : firms) {
      auto ev = evaluate_moments(rows, x, spec, jac != nullptr);
      if (!ev.in_domain) return false;
      r += ev.gbar;
      if (jac) *jac += ev.jacobian;
    }
    const double inv = 1.0 / static_cast<double>(firms.size());
    r *= inv;
    if (jac) *jac *= inv;
    return r.allFinite();
  };
}

double penalty_product(const Eigen::RowVectorXd& pi, const Eigen::MatrixXd& theta) {
  double p = 1.0;
  for (Eigen::Index j = 0; j < theta.rows(); ++j) {
    const double d = (pi - theta.row(j)).norm();
    if (d == 0.0) return 0.0;
    p *= d;
  }
  return p;
}

std::vector<ParamVector> multistart_points(const ParamVector& base, const MomentSpec& spec,
                                           int count, double scale, std::uint64_t seed,
                                           std::uint32_t firm) {
  std::vector<ParamVector> out{base};
  RandomStream rs(seed, firm, kMultistartPurpose);
  const int b3 = spec.index(Param::Beta3), e = spec.index(Param::E);
  for (int s = 1; s < count; ++s) {
    ParamVector x = base;
    for (Eigen::Index p = 0; p < x.size(); ++p) {
      const double z = rs.normal();
      const double cand = base[p] * (1.0 + scale * z);
      const bool positive = spec.strategy() == Strategy::GNR && (p == b3 || p == e);
      if (!positive || cand > 0.0) x[p] = cand;
    }
    out.push_back(x);
  }
  return out;
}

}  // namespace

std::string to_string(WeightingScheme w) {
  return w == WeightingScheme::Identity ? "identity" : "two_step";
}

WeightingScheme weighting_from_string(const std::string& s) {
  if (s == "identity") return WeightingScheme::Identity;
  if (s == "two_step" || s == "two-step") return WeightingScheme::TwoStep;
  fail(ErrorKind::Config, "unknown weighting '" + s + "' (expected identity or two_step)");
}

void CLassoConfig::validate() const {
  if (J < 1) fail(ErrorKind::Config, "J must be at least 1");
  if (lambda && !(*lambda > 0.0 && std::isfinite(*lambda)))
    fail(ErrorKind::Config, "lambda must be positive and finite");
  if (!(outer_tol > 0.0) || !(inner_tol > 0.0))
    fail(ErrorKind::Config, "tolerances must be positive");
  if (max_outer < 1 || max_inner < 1)
    fail(ErrorKind::Config, "iteration caps must be at least 1");
  if (classification_threshold && !(*classification_threshold > 0.0))
    fail(ErrorKind::Config, "classification threshold must be positive");
  if (!(lambda_exponent > 0.0 && lambda_exponent < 0.5))
    fail(ErrorKind::Config, "lambda exponent must lie in (0, 0.5)");
  if (multistart < 1) fail(ErrorKind::Config, "multistart must be at least 1");
  if (!(multistart_scale >= 0.0)) fail(ErrorKind::Config, "multistart scale must be >= 0");
}

double default_lambda(const PanelData& panel, double exponent) {
  return std::pow(panel.mean_usable_periods(), -exponent);
}

EstimationData::EstimationData(const PanelData& panel, const MomentSpec& s)
    : spec(s), rows(build_lags(panel)) {
  check_compatible(panel, spec);
  firm_ids.reserve(panel.num_firms());
  for (const auto& f : panel.firms()) firm_ids.push_back(f.id);
}

// ---------------------------------------------------------------------------

namespace {

// Quasi-differenced regression (yc - d yl) = c + sum_k b_k (xc_k - d xl_k) + e.
// Cross products of Z = [1, xc, yc] and L = [0, xl, yl] give the normal
// equations for any d in O(K^3).
struct ArProfile {
  Eigen::MatrixXd ZZ, ZL, LL;
  int K = 0;

  void add(const double* xc, const double* xl, double yc, double yl) {
    Eigen::VectorXd z(K + 2), l(K + 2);
    z[0] = 1.0;
    l[0] = 0.0;
    for (int k = 0; k < K; ++k) {
      z[k + 1] = xc[k];
      l[k + 1] = xl[k];
    }
    z[K + 1] = yc;
    l[K + 1] = yl;
    ZZ.noalias() += z * z.transpose();
    ZL.noalias() += z * l.transpose();
    LL.noalias() += l * l.transpose();
  }

  explicit ArProfile(int k) : K(k) {
    ZZ = ZL = LL = Eigen::MatrixXd::Zero(K + 2, K + 2);
  }

  // Sum of squared residuals and coefficients (c, b_1..b_K) at slope d.
  double ssr(double d, Eigen::VectorXd* coef) const {
    const Eigen::MatrixXd M = ZZ - d * (ZL + ZL.transpose()) + d * d * LL;
    const int n = K + 1;
    Eigen::MatrixXd A = M.topLeftCorner(n, n);
    A.diagonal().array() += 1e-12 * std::max(A.diagonal().maxCoeff(), 1.0);
    const Eigen::VectorXd rhs = M.topRightCorner(n, 1);
    Eigen::VectorXd b = A.ldlt().solve(rhs);
    if (coef) *coef = b;
    const double v = M(n, n) - 2.0 * b.dot(rhs) + b.dot(M.topLeftCorner(n, n) * b);
    return std::isfinite(v) ? v : kInf;
  }

  // Global minimum over d on a grid in (-1, 1), refined by golden section.
  double best_slope() const {
    double best_d = 0.0, best_v = kInf;
    for (int g = -95; g <= 99; ++g) {
      const double d = 0.01 * g;
      const double v = ssr(d, nullptr);
      if (v < best_v) {
        best_v = v;
        best_d = d;
      }
    }
    double lo = std::max(best_d - 0.01, -0.99), hi = std::min(best_d + 0.01, 0.995);
    const double phi = 0.5 * (std::sqrt(5.0) - 1.0);
    double x1 = hi - phi * (hi - lo), x2 = lo + phi * (hi - lo);
    double f1 = ssr(x1, nullptr), f2 = ssr(x2, nullptr);
    for (int it = 0; it < 60; ++it) {
      if (f1 < f2) {
        hi = x2;
        x2 = x1;
        f2 = f1;
        x1 = hi - phi * (hi - lo);
        f1 = ssr(x1, nullptr);
      } else {
        lo = x1;
        x1 = x2;
        f1 = f2;
        x2 = lo + phi * (hi - lo);
        f2 = ssr(x2, nullptr);
      }
    }
    const double d = 0.5 * (lo + hi);
    return ssr(d, nullptr) <= best_v ? d : best_d;
  }
};

}  // namespace

ParamVector default_start(const std::vector<Rows>& firms, const MomentSpec& spec) {
  std::size_t n = 0;
  for (const auto& f : firms) n += f.size();
  if (n == 0) fail(ErrorKind::Data, "no usable rows for a starting point");
  const bool lab = spec.labor();
  const int P = spec.num_params();
  ParamVector theta = ParamVector::Zero(P);
  auto set = [&](Param role, double v) {
    const int i = spec.index(role);
    if (i >= 0) theta[i] = v;
  };
  auto for_rows = [&](auto&& fn) {
    for (const auto& f : firms)
      for (const auto& row : f) fn(row);
  };

  // Every strategy's dynamic residual is a quasi-differenced linear
  // equation; its least-squares fit profiled over the AR slope gives the
  // remaining coefficients. The intercept c maps to delta0 (GNR with AR
  // constant), beta0 (GNR) or (1 - delta) beta0 (ACF, dynamic panel).
  double c = 0.0, d = 0.0;
  Eigen::VectorXd b;
  switch (spec.strategy()) {
    case Strategy::GNR: {
      double sbar = 0.0;
      for_rows([&](const LaggedRow& row) { sbar += row.s; });
      sbar /= static_cast<double>(n);
      double E = 0.0;
      for_rows([&](const LaggedRow& row) { E += std::exp(sbar - row.s); });
      E /= static_cast<double>(n);
      const double b3 = std::exp(sbar) / E;
      ArProfile prof(lab ? 2 : 1);
      for_rows([&](const LaggedRow& row) {
        const double yr = row.y - b3 * row.m - (sbar - row.s);
        const double yr_lag = row.y_lag - b3 * row.m_lag - (sbar - row.s_lag);
        const double xc[2] = {row.k, row.l}, xl[2] = {row.k_lag, row.l_lag};
        prof.add(xc, xl, yr, yr_lag);
      });
      d = prof.best_slope();
      prof.ssr(d, &b);
      c = b[0];
      set(Param::Beta3, b3);
      set(Param::E, E);
      set(Param::Beta1, b[1]);
      if (lab) set(Param::Beta2, b[2]);
      set(spec.ar1_intercept() ? Param::Delta0 : Param::Beta0, c);
      set(Param::Delta1, d);
      break;
    }
    case Strategy::ACF: {
      const int c1 = lab ? 4 : 3;
      Eigen::MatrixXd X1(n, c1);
      Eigen::VectorXd yv(n);
      std::size_t r = 0;
      for_rows([&](const LaggedRow& row) {
        int k = 0;
        X1(r, k++) = 1.0;
        X1(r, k++) = row.k;
        if (lab) X1(r, k++) = row.l;
        X1(r, k++) = row.m;
        yv[r++] = row.y;
      });
      auto a = least_squares(X1, yv);
      const double a2 = lab ? a[2] : 0.0, a3 = a[c1 - 1];
      ArProfile prof(lab ? 2 : 1);
      for_rows([&](const LaggedRow& row) {
        const double phi_lag = a[0] + a[1] * row.k_lag + a2 * row.l_lag + a3 * row.m_lag;
        const double xc[2] = {row.k, row.l}, xl[2] = {row.k_lag, row.l_lag};
        prof.add(xc, xl, row.y, phi_lag);
      });
      d = prof.best_slope();
      prof.ssr(d, &b);
      set(Param::Alpha0, a[0]);
      set(Param::Alpha1, a[1]);
      if (lab) set(Param::Alpha2, a2);
      set(Param::Alpha3, a3);
      set(Param::Beta0, b[0] / (1.0 - d));
      set(Param::Beta1, b[1]);
      if (lab) set(Param::Beta2, b[2]);
      set(Param::Delta1, d);
      break;
    }
    case Strategy::DynamicPanel: {
      ArProfile prof(lab ? 3 : 2);
      for_rows([&](const LaggedRow& row) {
        if (lab) {
          const double xc[3] = {row.k, row.l, row.m}, xl[3] = {row.k_lag, row.l_lag, row.m_lag};
          prof.add(xc, xl, row.y, row.y_lag);
        } else {
          const double xc[2] = {row.k, row.m}, xl[2] = {row.k_lag, row.m_lag};
          prof.add(xc, xl, row.y, row.y_lag);
        }
      });
      d = prof.best_slope();
      prof.ssr(d, &b);
      set(Param::Beta0, b[0] / (1.0 - d));
      set(Param::Beta1, b[1]);
      if (lab) set(Param::Beta2, b[2]);
      set(Param::Beta3, b[lab ? 3 : 2]);
      set(Param::Delta1, d);
      break;
    }
  }
  if (!theta.allFinite()) fail(ErrorKind::Numerical, "starting point is not finite");
  return theta;
}

GmmSolution solve_group_gmm(const std::vector<Rows>& firms, const Eigen::MatrixXd& W,
                            const MomentSpec& spec, const ParamVector& start) {
  if (firms.empty()) fail(ErrorKind::Data, "GMM over an empty firm set");
  auto map = group_map(firms, spec);
  auto res = minimize_quadratic_form(map, W, start);
  GmmSolution out;
  out.theta = res.x;
  out.objective = res.value;
  out.converged = res.converged && std::isfinite(res.value);
  return out;
}

FirmwiseEstimates firmwise_estimates(const EstimationData& data,
                                     const CLassoConfig& config) {
  const auto& spec = data.spec;
  const std::size_t N = data.num_firms();
  const int Q = spec.num_moments();
  FirmwiseEstimates out;
  out.weighting = config.weighting;
  const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(Q, Q);

  auto firms = all_firms(data);
  auto pooled = solve_group_gmm(firms, I, spec, default_start(firms, spec));
  if (!std::isfinite(pooled.objective))
    fail(ErrorKind::Numerical, "pooled GMM failed to produce a finite objective");
  out.pooled = pooled.theta;

  out.theta.assign(N, ParamVector());
  out.objective.assign(N, kInf);
  out.W.assign(N, I);

  auto solve_firm = [&](std::size_t i, const Eigen::MatrixXd& W,
                        const std::vector<ParamVector>& starts) {
    std::vector<Rows> one{data.firm(i)};
    auto map = group_map(one, spec);
    // Just-identified moments can have several exact roots, so among
    // starts that reach the minimum the earliest one wins.
    std::vector<MinimizeResult> runs;
    double best = kInf;
    for (const auto& s : starts) {
      runs.push_back(minimize_quadratic_form(map, W, s));
      if (std::isfinite(runs.back().value)) best = std::min(best, runs.back().value);
    }
    ParamVector best_x;
    for (const auto& r : runs)
      if (std::isfinite(r.value) && r.value <= best + 1e-14 + 1e-6 * best) {
        best_x = r.x;
        best = r.value;
        break;
      }
    if (!std::isfinite(best))
      fail(ErrorKind::Numerical, "initial GMM failed for firm " + data.firm_ids[i]);
    out.theta[i] = best_x;
    out.objective[i] = best;
  };

  parallel_for(N, [&](std::size_t i) {
    auto starts = multistart_points(out.pooled, spec, config.multistart,
                                    config.multistart_scale, config.seed,
                                    static_cast<std::uint32_t>(i));
    solve_firm(i, I, starts);
    if (config.weighting == WeightingScheme::TwoStep) {
      auto w = optimal_weighting(data.firm(i), out.theta[i], spec);
      out.W[i] = w.W;
      solve_firm(i, w.W, {out.theta[i]});
    }
  });
  return out;
}

// ---------------------------------------------------------------------------

double pgmm_objective(const EstimationData& data, const Eigen::MatrixXd& pi,
                      const Eigen::MatrixXd& theta, double lambda,
                      const std::vector<Eigen::MatrixXd>& W) {
  const std::size_t N = data.num_firms();
  const int P = data.spec.num_params();
  if (static_cast<std::size_t>(pi.rows()) != N || pi.cols() != P || theta.cols() != P ||
      W.size() != N)
    fail(ErrorKind::Config, "pgmm_objective: shape mismatch");
  double total = 0.0;
  for (std::size_t i = 0; i < N; ++i) {
    const ParamVector p = pi.row(i).transpose();
    auto ev = evaluate_moments(data.firm(i), p, data.spec, false);
    if (!ev.in_domain) return kInf;
    total += ev.gbar.dot(W[i] * ev.gbar) + lambda * penalty_product(pi.row(i), theta);
  }
  return total / static_cast<double>(N);
}

double firm_penalized_value(Rows rows, const ParamVector& pi, const ParamVector& theta_j,
                            double lambda_zeta, const Eigen::MatrixXd& W,
                            const MomentSpec& spec) {
  auto ev = evaluate_moments(rows, pi, spec, false);
  if (!ev.in_domain) return kInf;
  double v = ev.gbar.dot(W * ev.gbar);
  if (lambda_zeta != 0.0) v += lambda_zeta * (pi - theta_j).norm();
  return std::isfinite(v) ? v : kInf;
}

FirmSubproblemResult solve_firm_subproblem(Rows rows, const ParamVector& theta_j,
                                           double lambda, double zeta,
                                           const Eigen::MatrixXd& W,
                                           const MomentSpec& spec,
                                           const ParamVector& init) {
  if (zeta < 0.0 || lambda < 0.0)
    fail(ErrorKind::Config, "penalty weight must be non-negative");
  const double lz = lambda * zeta;
  FirmSubproblemResult best;
  best.pi = init;
  best.value = firm_penalized_value(rows, init, theta_j, lz, W, spec);
  best.at_center = (init == theta_j);

  auto consider = [&](const ParamVector& x, bool at_center) {
    const double v = firm_penalized_value(rows, x, theta_j, lz, W, spec);
    if (v < best.value) {
      best.pi = x;
      best.value = v;
      best.at_center = at_center;
      return true;
    }
    return false;
  };

  if (lz == 0.0) {
    std::vector<Rows> one{rows};
    auto r = minimize_quadratic_form(group_map(one, spec), W, init);
    consider(r.x, false);
    best.converged = r.converged;
    return best;
  }

  // theta_j minimizes the penalized problem locally when the GMM gradient
  // there is dominated by the penalty's subdifferential ball.
  auto at = evaluate_moments(rows, theta_j, spec, true);
  if (at.in_domain && at.gbar.allFinite()) {
    const Eigen::VectorXd grad = 2.0 * at.jacobian.transpose() * (W * at.gbar);
    const bool kink = grad.norm() <= lz;
    if (consider(theta_j, true) && kink) return best;
    if (best.at_center && kink) return best;
  }

  const double mu2 = kNormSmoothing * kNormSmoothing;
  Objective f = [&](const Eigen::VectorXd& x, Eigen::VectorXd* g) {
    auto ev = evaluate_moments(rows, x, spec, g != nullptr);
    if (!ev.in_domain) return kInf;
    const Eigen::VectorXd Wg = W * ev.gbar;
    const Eigen::VectorXd d = x - theta_j;
    const double nrm = std::sqrt(d.squaredNorm() + mu2);
    const double v = ev.gbar.dot(Wg) + lz * nrm;
    if (!std::isfinite(v)) return kInf;
    if (g) *g = 2.0 * ev.jacobian.transpose() * Wg + (lz / nrm) * d;
    return v;
  };

  const ParamVector start = best.pi;
  Eigen::MatrixXd H0;
  const Eigen::MatrixXd* H0p = nullptr;
  {
    auto ev = evaluate_moments(rows, start, spec, true);
    if (ev.in_domain) {
      const int P = spec.num_params();
      Eigen::MatrixXd H = 2.0 * ev.jacobian.transpose() * W * ev.jacobian;
      const Eigen::VectorXd d = start - theta_j;
      const double nrm = std::sqrt(d.squaredNorm() + mu2);
      H += (lz / nrm) * (Eigen::MatrixXd::Identity(P, P) - d * d.transpose() / (nrm * nrm));
      H.diagonal().array() += 1e-8 * std::max(H.diagonal().maxCoeff(), 1e-12);
      Eigen::LDLT<Eigen::MatrixXd> ldlt(H);
      if (ldlt.info() == Eigen::Success && ldlt.isPositive()) {
        H0 = ldlt.solve(Eigen::MatrixXd::Identity(P, P));
        if (H0.allFinite()) H0p = &H0;
      }
    }
  }
  BfgsOptions opt;
  opt.max_iterations = 300;
  opt.grad_tol = 1e-11;
  auto r = minimize_bfgs(f, start, opt, H0p);
  consider(r.x, false);
  best.converged = r.converged;
  return best;
}

AcsResult alternate_convex_search(const EstimationData& data, const ParamVector& theta_init,
                                  const Eigen::MatrixXd& pi_init,
                                  const Eigen::VectorXd& zeta, double lambda,
                                  const std::vector<Eigen::MatrixXd>& W, double inner_tol,
                                  int max_inner) {
  const std::size_t N = data.num_firms();
  const int P = data.spec.num_params();
  if (static_cast<std::size_t>(pi_init.rows()) != N || pi_init.cols() != P ||
      theta_init.size() != P || static_cast<std::size_t>(zeta.size()) != N ||
      W.size() != N)
    fail(ErrorKind::Config, "alternate_convex_search: shape mismatch");

  AcsResult out;
  out.pi = pi_init;
  out.theta = theta_init;
  std::vector<double> values(N);
  std::vector<char> flagged(N, 0);

  auto objective = [&]() {
    double total = 0.0;
    for (std::size_t i = 0; i < N; ++i) {
      const ParamVector p = out.pi.row(i).transpose();
      total += firm_penalized_value(data.firm(i), p, out.theta, lambda * zeta[i], W[i],
                                    data.spec);
    }
    return total / static_cast<double>(N);
  };

  double prev = objective();
  out.trace.push_back(prev);
  const bool any_weight = (zeta.array() > 0.0).any();

  for (int r = 1; r <= max_inner; ++r) {
    out.iterations = r;
    if (any_weight && lambda > 0.0) {
      ParamVector start = out.theta;
      auto gm = weighted_geometric_median(out.pi, zeta, 1e-12, &start);
      out.theta = gm.point;
    }
    parallel_for(N, [&](std::size_t i) {
      const ParamVector init = out.pi.row(i).transpose();
      auto s = solve_firm_subproblem(data.firm(i), out.theta, lambda, zeta[i], W[i],
                                     data.spec, init);
      out.pi.row(i) = s.pi.transpose();
      values[i] = s.value;
      if (!s.converged) flagged[i] = 1;
    });
    double q = 0.0;
    for (std::size_t i = 0; i < N; ++i) q += values[i];
    q /= static_cast<double>(N);
    out.trace.push_back(q);
    const bool stop = std::abs(q - prev) / (prev + 1.0) < inner_tol;
    prev = q;
    if (stop) {
      out.converged = true;
      break;
    }
  }
  for (std::size_t i = 0; i < N; ++i)
    if (flagged[i]) out.flagged_firms.push_back(i);
  return out;
}

// ---------------------------------------------------------------------------

std::size_t Classification::num_classified() const {
  return static_cast<std::size_t>(
      std::count_if(group.begin(), group.end(), [](int g) { return g != kUnclassified; }));
}

std::vector<std::size_t> Classification::members(int j) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < group.size(); ++i)
    if (group[i] == j) out.push_back(i);
  return out;
}

Classification classify_distances(const Eigen::MatrixXd& D, std::optional<double> threshold) {
  if (D.cols() < 1) fail(ErrorKind::Config, "classification needs at least one center");
  Classification c;
  c.num_groups = static_cast<int>(D.cols());
  c.group.resize(D.rows());
  c.distance.resize(D.rows());
  for (Eigen::Index i = 0; i < D.rows(); ++i) {
    int best = 0;
    for (Eigen::Index j = 1; j < D.cols(); ++j)
      if (D(i, j) < D(i, best)) best = static_cast<int>(j);
    c.distance[i] = D(i, best);
    c.group[i] = (threshold && D(i, best) > *threshold) ? kUnclassified : best;
  }
  return c;
}

Classification classify(const Eigen::MatrixXd& pi_hat, const Eigen::MatrixXd& theta_hat,
                        std::optional<double> threshold) {
  if (pi_hat.cols() != theta_hat.cols())
    fail(ErrorKind::Config, "classify: parameter dimensions differ");
  Eigen::MatrixXd D(pi_hat.rows(), theta_hat.rows());
  for (Eigen::Index i = 0; i < pi_hat.rows(); ++i)
    for (Eigen::Index j = 0; j < theta_hat.rows(); ++j)
      D(i, j) = (pi_hat.row(i) - theta_hat.row(j)).norm();
  return classify_distances(D, threshold);
}

std::size_t GroupEstimates::residual_count() const {
  std::size_t n = 0;
  for (const auto& r : residuals) n += r.size();
  return n;
}

double GroupEstimates::residual_sum_squares() const {
  double s = 0.0;
  for (const auto& r : residuals)
    for (double v : r) s += v * v;
  return s;
}

Sandwich sandwich_covariance(const std::vector<Eigen::VectorXd>& firm_gbar,
                             const Eigen::MatrixXd& D, const Eigen::MatrixXd& W) {
  if (firm_gbar.empty()) fail(ErrorKind::Data, "sandwich covariance over no firms");
  const double n = static_cast<double>(firm_gbar.size());
  Eigen::MatrixXd S = Eigen::MatrixXd::Zero(D.rows(), D.rows());
  for (const auto& g : firm_gbar) S.noalias() += g * g.transpose();
  S /= n;
  // With W = L'L and G = (L D)^+ L, (D'WD)^-1 D'W = G, so the sandwich is
  // G S G' / n: positive semidefinite by construction and free of the
  // squared condition number of D'WD.
  Sandwich out;
  Eigen::LLT<Eigen::MatrixXd> llt(W);
  if (llt.info() != Eigen::Success) fail(ErrorKind::Numerical, "weighting matrix is not PD");
  const Eigen::MatrixXd L = llt.matrixU();
  const Eigen::MatrixXd LD = L * D;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(LD, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto& sv = svd.singularValues();
  const double cutoff = 1e-10 * std::max(sv.size() ? sv[0] : 0.0, 1e-300);
  Eigen::VectorXd inv(sv.size());
  for (Eigen::Index i = 0; i < sv.size(); ++i) {
    if (sv[i] <= cutoff) {
      inv[i] = 0.0;
      out.pseudo_inverse = true;
    } else {
      inv[i] = 1.0 / sv[i];
    }
  }
  if (D.cols() > D.rows()) out.pseudo_inverse = true;
  const Eigen::MatrixXd G =
      svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose() * L;
  Eigen::MatrixXd V = G * S * G.transpose() / n;
  out.covariance = 0.5 * (V + V.transpose());
  return out;
}

Sandwich sandwich_se(const std::vector<Rows>& members, const ParamVector& theta,
                     const Eigen::MatrixXd& W, const MomentSpec& spec) {
  std::vector<Eigen::VectorXd> gbars;
  gbars.reserve(members.size());
  Eigen::MatrixXd D = Eigen::MatrixXd::Zero(spec.num_moments(), spec.num_params());
  for (const auto& rows : members) {
    auto ev = evaluate_moments(rows, theta, spec, true);
    if (!ev.in_domain) fail(ErrorKind::Domain, "covariance evaluated outside the domain");
    gbars.push_back(ev.gbar);
    D += ev.jacobian;
  }
  D /= static_cast<double>(members.size());
  return sandwich_covariance(gbars, D, W);
}

GroupEstimates post_lasso(const EstimationData& data, const Classification& cls,
                          WeightingScheme weighting,
                          const std::vector<ParamVector>* start_hints) {
  const auto& spec = data.spec;
  const int P = spec.num_params(), Q = spec.num_moments();
  if (cls.group.size() != data.num_firms())
    fail(ErrorKind::Config, "classification does not match the panel");
  GroupEstimates out;
  out.groups.resize(cls.num_groups);
  out.residuals.assign(data.num_firms(), {});
  bool any = false;
  for (int j = 0; j < cls.num_groups; ++j) {
    auto& ge = out.groups[j];
    ge.members = cls.members(j);
    ge.W = Eigen::MatrixXd::Identity(Q, Q);
    if (ge.members.empty()) {
      ge.empty = true;
      out.warnings.push_back("group " + std::to_string(j + 1) + " is empty; skipped");
      continue;
    }
    auto rows = member_rows(data, ge.members);
    std::size_t usable = 0;
    for (const auto& r : rows) usable += r.size();
    if (usable < static_cast<std::size_t>(P)) {
      ge.underidentified = true;
      out.warnings.push_back("group " + std::to_string(j + 1) +
                             " has fewer usable periods than parameters; skipped");
      continue;
    }
    // The start depends only on the member data so that a given partition
    // always yields the same estimate.
    auto sol = solve_group_gmm(rows, ge.W, spec, default_start(rows, spec));
    if (!sol.converged && start_hints && static_cast<int>(start_hints->size()) > j) {
      auto alt = solve_group_gmm(rows, ge.W, spec, (*start_hints)[j]);
      if (alt.objective < sol.objective) sol = alt;
    }
    if (weighting == WeightingScheme::TwoStep && std::isfinite(sol.objective)) {
      std::vector<LaggedRow> pooled;
      for (const auto& r : rows) pooled.insert(pooled.end(), r.begin(), r.end());
      auto w = optimal_weighting(pooled, sol.theta, spec);
      if (w.fell_back_to_identity)
        out.warnings.push_back("group " + std::to_string(j + 1) +
                               ": optimal weighting fell back to identity");
      ge.W = w.W;
      sol = solve_group_gmm(rows, ge.W, spec, sol.theta);
    }
    if (!std::isfinite(sol.objective)) {
      out.warnings.push_back("group " + std::to_string(j + 1) + ": GMM failed");
      ge.underidentified = true;
      continue;
    }
    ge.theta = sol.theta;
    ge.objective = sol.objective;
    ge.converged = sol.converged;
    auto sw = sandwich_se(rows, ge.theta, ge.W, spec);
    ge.covariance = sw.covariance;
    ge.covariance_pseudo_inverse = sw.pseudo_inverse;
    if (sw.pseudo_inverse)
      out.warnings.push_back("group " + std::to_string(j + 1) +
                             ": singular D'WD, covariance uses a pseudo-inverse");
    for (auto i : ge.members) {
      auto& res = out.residuals[i];
      res.reserve(data.rows[i].size());
      for (const auto& row : data.rows[i])
        res.push_back(composite_residual(row, ge.theta, spec));
    }
    any = true;
  }
  if (!any) fail(ErrorKind::Numerical, "post-Lasso produced no estimable group");
  return out;
}

LabelMatch match_labels(const std::vector<int>& estimated, const std::vector<int>& truth,
                        int J) {
  if (estimated.size() != truth.size())
    fail(ErrorKind::Config, "label matching: firm sets differ in size");
  if (J < 1 || J > 8) fail(ErrorKind::Config, "label matching supports 1 <= J <= 8");
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] < 0 || truth[i] >= J || estimated[i] >= J || estimated[i] < kUnclassified)
      fail(ErrorKind::Config, "label matching: group count mismatch");
  }
  // counts[e][t]
  std::vector<std::vector<std::size_t>> counts(J, std::vector<std::size_t>(J, 0));
  for (std::size_t i = 0; i < truth.size(); ++i)
    if (estimated[i] != kUnclassified) ++counts[estimated[i]][truth[i]];
  std::vector<int> perm(J);
  std::iota(perm.begin(), perm.end(), 0);
  LabelMatch best;
  std::size_t best_hits = 0;
  bool first = true;
  do {
    std::size_t hits = 0;
    for (int e = 0; e < J; ++e) hits += counts[e][perm[e]];
    if (first || hits > best_hits) {
      best_hits = hits;
      best.permutation = perm;
      first = false;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  best.accuracy = truth.empty() ? 1.0
                                : static_cast<double>(best_hits) /
                                      static_cast<double>(truth.size());
  return best;
}

// ---------------------------------------------------------------------------

namespace {

Eigen::VectorXd zeta_column(const CLassoState& st, int j) {
  const Eigen::Index N = st.pi[0].rows();
  Eigen::VectorXd z = Eigen::VectorXd::Ones(N);
  for (int jj = 0; jj < static_cast<int>(st.pi.size()); ++jj) {
    if (jj == j) continue;
    for (Eigen::Index i = 0; i < N; ++i)
      z[i] *= (st.pi[jj].row(i) - st.theta.row(jj)).norm();
  }
  return z;
}

}  // namespace

FitResult fit(const EstimationData& data, const CLassoConfig& config, double lambda,
              const FirmwiseEstimates* cache) {
  config.validate();
  if (!(lambda > 0.0) || !std::isfinite(lambda))
    fail(ErrorKind::Config, "lambda must be positive and finite");
  const std::size_t N = data.num_firms();
  const int J = config.J;
  const int P = data.spec.num_params();
  if (static_cast<std::size_t>(J) > N) fail(ErrorKind::Config, "J exceeds the number of firms");

  FirmwiseEstimates local;
  if (!cache || cache->theta.size() != N || cache->weighting != config.weighting) {
    local = firmwise_estimates(data, config);
    cache = &local;
  }

  FitResult out;
  out.config = config;
  out.spec = data.spec;
  out.lambda = lambda;
  out.firm_ids = data.firm_ids;

  Eigen::MatrixXd vartheta(N, P);
  for (std::size_t i = 0; i < N; ++i) vartheta.row(i) = cache->theta[i].transpose();

  CLassoState st;
  st.pi.assign(J, vartheta);
  st.theta = Eigen::MatrixXd::Zero(J, P);
  st.zeta = Eigen::MatrixXd::Zero(N, J);
  st.outer_value = kInf;

  double prev = kInf;
  for (int r = 1; r <= config.max_outer; ++r) {
    CLassoState saved = st;
    std::vector<std::vector<double>> traces;
    double q_outer = 0.0;
    for (int j = 0; j < J; ++j) {
      Eigen::VectorXd z = zeta_column(st, j);
      st.zeta.col(j) = z;
      auto acs = alternate_convex_search(data, st.theta.row(j).transpose(), st.pi[j], z,
                                         lambda, cache->W, config.inner_tol,
                                         config.max_inner);
      st.pi[j] = acs.pi;
      st.theta.row(j) = acs.theta.transpose();
      q_outer += acs.trace.back();
      traces.push_back(std::move(acs.trace));
      if (!acs.converged)
        out.warnings.push_back("outer " + std::to_string(r) + ", subproblem " +
                               std::to_string(j + 1) + ": inner loop hit max_inner");
    }
    if (r > 1 && q_outer > prev * (1.0 + 1e-9) + 1e-12) {
      st = saved;
      out.warnings.push_back("outer objective increased at iteration " + std::to_string(r) +
                             "; kept the previous iterate");
      break;
    }
    st.outer_value = q_outer;
    out.outer_trace.push_back(q_outer);
    for (auto& t : traces) out.inner_traces.push_back(std::move(t));
    out.outer_iterations = r;
    const bool stop = r > 1 && std::abs(q_outer - prev) / (prev + 1.0) < config.outer_tol;
    prev = q_outer;
    if (stop) {
      out.converged = true;
      break;
    }
  }
  if (!out.converged && out.outer_iterations == config.max_outer)
    out.warnings.push_back("outer loop hit max_outer");

  Eigen::MatrixXd D(N, J);
  for (std::size_t i = 0; i < N; ++i)
    for (int j = 0; j < J; ++j) D(i, j) = (st.pi[j].row(i) - st.theta.row(j)).norm();
  out.classification = classify_distances(D, config.classification_threshold);
  out.pi_hat.resize(N, P);
  for (std::size_t i = 0; i < N; ++i) {
    int g = out.classification.group[i];
    if (g == kUnclassified) {
      D.row(i).minCoeff(&g);
    }
    out.pi_hat.row(i) = st.pi[g].row(i);
  }
  std::vector<ParamVector> hints;
  for (int j = 0; j < J; ++j) hints.push_back(st.theta.row(j).transpose());
  out.estimates = post_lasso(data, out.classification, config.weighting, &hints);
  for (const auto& w : out.estimates.warnings) out.warnings.push_back(w);
  out.state = std::move(st);
  return out;
}

FitResult fit(const PanelData& panel, const CLassoConfig& config, const MomentSpec& spec) {
  EstimationData data(panel, spec);
  const double lambda = config.lambda ? *config.lambda : default_lambda(panel, config.lambda_exponent);
  return fit(data, config, lambda);
}

FitResult fit_partition(const EstimationData& data, const std::vector<int>& groups,
                        int num_groups, WeightingScheme weighting) {
  if (groups.size() != data.num_firms())
    fail(ErrorKind::Config, "partition does not match the panel");
  if (num_groups < 1) fail(ErrorKind::Config, "partition needs at least one group");
  FitResult out;
  out.config.J = num_groups;
  out.config.weighting = weighting;
  out.spec = data.spec;
  out.firm_ids = data.firm_ids;
  out.converged = true;
  out.classification.num_groups = num_groups;
  out.classification.group = groups;
  out.classification.distance.assign(groups.size(), 0.0);
  for (int g : groups)
    if (g < kUnclassified || g >= num_groups)
      fail(ErrorKind::Config, "partition label out of range");
  out.estimates = post_lasso(data, out.classification, weighting);
  out.warnings = out.estimates.warnings;
  const int P = data.spec.num_params();
  out.state.theta = Eigen::MatrixXd::Zero(num_groups, P);
  for (int j = 0; j < num_groups; ++j)
    if (out.estimates.groups[j].theta.size() == P)
      out.state.theta.row(j) = out.estimates.groups[j].theta.transpose();
  return out;
}

}  // namespace pfc
