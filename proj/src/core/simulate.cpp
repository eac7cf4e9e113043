#include "core/simulate.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "core/error.hpp"
#include "core/format.hpp"
#include "core/parallel.hpp"
#include "core/rng.hpp"

namespace pfc {

double GroupParams::E() const { return std::exp(0.5 * sigma_eps * sigma_eps); }

void GroupParams::validate() const {
  if (!(share > 0.0 && share < 1.0) && share != 1.0)
    fail(ErrorKind::Config, "group share must lie in (0, 1]");
  if (!(gamma > 0.0 && gamma < 1.0)) fail(ErrorKind::Config, "gamma must lie in (0, 1)");
  if (!(std::abs(delta) < 1.0)) fail(ErrorKind::Config, "|delta| must be below 1");
  if (!(sigma_eps >= 0.0) || !(sigma_eta >= 0.0))
    fail(ErrorKind::Config, "shock standard deviations must be non-negative");
  if (!std::isfinite(alpha)) fail(ErrorKind::Config, "alpha must be finite");
}

SimConfig SimConfig::standard(int N, int T, std::uint64_t seed) {
  SimConfig c;
  c.N = N;
  c.T = T;
  c.seed = seed;
  c.groups = {
      {0.30, 0.35, 0.02, 0.00, 0.90, 0.01},
      {0.40, 0.50, 0.04, 0.20, 0.80, 0.01},
      {0.30, 0.65, 0.02, 0.40, 0.70, 0.01},
  };
  return c;
}

void SimConfig::validate() const {
  if (groups.empty()) fail(ErrorKind::Config, "simulation needs at least one group");
  double total = 0.0;
  for (const auto& g : groups) {
    g.validate();
    total += g.share;
  }
  if (std::abs(total - 1.0) > 1e-9)
    fail(ErrorKind::Config, "group shares must sum to 1 (got " + format_double(total) + ")");
  if (!(b > 0.0 && b < 1.0)) fail(ErrorKind::Config, "discount factor b must lie in (0, 1)");
  if (!(d > 0.0 && d < 1.0)) fail(ErrorKind::Config, "depreciation d must lie in (0, 1)");
  if (!(b * (1.0 - d) < 1.0)) fail(ErrorKind::Config, "b(1 - d) must be below 1");
  if (N < 1) fail(ErrorKind::Config, "N must be at least 1");
  if (T < 2) fail(ErrorKind::Config, "T must be at least 2");
  if (burn_in < 1) fail(ErrorKind::Config, "burn_in must be at least 1 (K starts at 0)");
  if (series_terms < 1) fail(ErrorKind::Config, "series_terms must be at least 1");
}

double optimal_intermediate(double omega, double K, double gamma, double beta, double E) {
  if (!(K > 0.0)) fail(ErrorKind::Domain, "capital must be positive");
  if (!(E > 0.0) || !(beta > 0.0) || !(gamma > 0.0))
    fail(ErrorKind::Domain, "gamma, beta and E must be positive");
  return std::exp((std::log(gamma) + omega + std::log(E)) / beta) * K;
}

namespace {

struct SeriesTerms {
  double log_q;
  double a_coef;   // alpha / beta
  double v_coef;   // sigma_eta^2 / (2 beta^2)
  double delta;
  double beta;

  // A_tau and B_tau of term tau.
  void at(int tau, double& A, double& B) const {
    const double dp = std::pow(delta, tau + 1);
    const double s1 = delta == 0.0 ? 1.0 : (1.0 - dp) / (1.0 - delta);
    const double s2 = delta == 0.0 ? 1.0 : (1.0 - dp * dp) / (1.0 - delta * delta);
    A = tau * log_q + a_coef * s1 + v_coef * s2;
    B = dp / beta;
  }
};

SeriesTerms series_terms(const GroupParams& g, double b, double d) {
  if (!(b * (1.0 - d) < 1.0) || !(b * (1.0 - d) > 0.0))
    fail(ErrorKind::Config, "investment series diverges: b(1 - d) must lie in (0, 1)");
  const double beta = g.beta();
  return {std::log(b * (1.0 - d)), g.alpha / beta,
          g.sigma_eta * g.sigma_eta / (2.0 * beta * beta), g.delta, beta};
}

double investment_scale(const GroupParams& g, double b) {
  const double beta = g.beta();
  return b * beta * std::pow(g.gamma * g.E(), g.gamma / beta);
}

}  // namespace

double optimal_investment(double omega, const GroupParams& g, double phi, double b, double d,
                          int terms) {
  if (terms < 1) fail(ErrorKind::Config, "series needs at least one term");
  if (!(phi > 0.0)) fail(ErrorKind::Domain, "phi must be positive");
  const auto st = series_terms(g, b, d);
  double sum = 0.0;
  for (int tau = 0; tau < terms; ++tau) {
    double A, B;
    st.at(tau, A, B);
    sum += std::exp(A + B * omega);
  }
  return investment_scale(g, b) / phi * sum;
}

InvestmentSeries::InvestmentSeries(const GroupParams& g, double b, double d, int terms) {
  if (terms < 1) fail(ErrorKind::Config, "series needs at least one term");
  const auto st = series_terms(g, b, d);
  scale_ = investment_scale(g, b);
  beta_ = g.beta();
  delta_ = g.delta;
  log_weight_.resize(terms);
  slope_.resize(terms);
  for (int tau = 0; tau < terms; ++tau) st.at(tau, log_weight_[tau], slope_[tau]);
  suffix_.assign(kOrder + 1, std::vector<double>(terms + 1, 0.0));
  for (int k = 0; k <= kOrder; ++k)
    for (int tau = terms - 1; tau >= 0; --tau)
      suffix_[k][tau] =
          suffix_[k][tau + 1] + std::exp(log_weight_[tau]) * std::pow(slope_[tau], k);
}

double InvestmentSeries::operator()(double omega, double phi) const {
  if (!(phi > 0.0)) fail(ErrorKind::Domain, "phi must be positive");
  const int n = terms();
  // |slope_tau| decreases in tau; sum exactly until the exponent is small.
  int tau = 0;
  double head = 0.0;
  while (tau < n && std::abs(slope_[tau] * omega) > 0.05) {
    head += std::exp(log_weight_[tau] + slope_[tau] * omega);
    ++tau;
  }
  double tail = 0.0;
  if (tau < n) {
    double coef = 1.0;
    for (int k = 0; k <= kOrder; ++k) {
      tail += coef * suffix_[k][tau];
      coef *= omega / (k + 1);
    }
  }
  return scale_ / phi * (head + tail);
}

std::vector<int> group_sizes(const std::vector<double>& shares, int N) {
  std::vector<int> sizes(shares.size());
  std::vector<double> rem(shares.size());
  int assigned = 0;
  for (std::size_t j = 0; j < shares.size(); ++j) {
    const double exact = shares[j] * N;
    sizes[j] = static_cast<int>(std::floor(exact + 1e-9));
    rem[j] = exact - sizes[j];
    assigned += sizes[j];
  }
  std::vector<std::size_t> order(shares.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return rem[a] > rem[b]; });
  for (std::size_t k = 0; assigned < N; ++k, ++assigned) ++sizes[order[k % order.size()]];
  return sizes;
}

namespace {

struct FirmDraw {
  FirmSeries series;
  double phi = 0.0;
  std::vector<double> omega, eps, eta, capital, investment;
};

bool simulate_firm(const SimConfig& cfg, const GroupParams& g, const InvestmentSeries& inv,
                   std::uint32_t firm, std::uint32_t attempt, FirmDraw& out) {
  RandomStream rs(cfg.seed, firm, attempt);
  const double beta = g.beta(), gamma = g.gamma, E = g.E();
  out.phi = std::exp(-rs.normal());  // log(1/phi) ~ N(0, 1)
  const double sd0 = g.sigma_eta / std::sqrt(1.0 - g.delta * g.delta);
  double omega = g.alpha / (1.0 - g.delta) + sd0 * rs.normal();
  double K = 0.0, I_prev = 0.0;
  const int total = cfg.burn_in + cfg.T + 1;
  const int keep = cfg.T + 1;
  auto& s = out.series;
  s.first_period = 0;
  for (auto* v : {&s.y, &s.k, &s.m, &s.s, &out.omega, &out.eps, &out.eta, &out.capital,
                  &out.investment})
    v->clear();
  for (int t = 0; t < total; ++t) {
    double eta = 0.0;
    if (t > 0) {
      eta = g.sigma_eta * rs.normal();
      omega = g.alpha + g.delta * omega + eta;
      K = (1.0 - cfg.d) * K + I_prev;
    }
    const double eps = g.sigma_eps * rs.normal();
    const double I = inv(omega, out.phi);
    I_prev = I;
    if (t < total - keep) continue;
    if (!(K > 0.0) || !std::isfinite(K)) return false;
    const double k = std::log(K);
    const double m = (std::log(gamma) + omega + std::log(E)) / beta + k;
    const double y = beta * k + gamma * m + omega + eps;
    s.y.push_back(y);
    s.k.push_back(k);
    s.m.push_back(m);
    s.s.push_back(m - y);
    out.omega.push_back(omega);
    out.eps.push_back(eps);
    out.eta.push_back(eta);
    out.capital.push_back(K);
    out.investment.push_back(I);
  }
  return true;
}

}  // namespace

SimulatedPanel draw_panel(const SimConfig& cfg) {
  cfg.validate();
  std::vector<double> shares;
  for (const auto& g : cfg.groups) shares.push_back(g.share);
  const auto sizes = group_sizes(shares, cfg.N);
  std::vector<int> group;
  for (std::size_t j = 0; j < sizes.size(); ++j)
    group.insert(group.end(), sizes[j], static_cast<int>(j));

  std::vector<InvestmentSeries> series;
  for (const auto& g : cfg.groups) series.emplace_back(g, cfg.b, cfg.d, cfg.series_terms);

  std::vector<FirmDraw> draws(cfg.N);
  parallel_for(static_cast<std::size_t>(cfg.N), [&](std::size_t i) {
    const auto& g = cfg.groups[group[i]];
    auto& fd = draws[i];
    fd.series.id = std::to_string(i + 1);
    if (!simulate_firm(cfg, g, series[group[i]], static_cast<std::uint32_t>(i), 0, fd) &&
        !simulate_firm(cfg, g, series[group[i]], static_cast<std::uint32_t>(i), 1, fd))
      fail(ErrorKind::Numerical, "firm " + fd.series.id +
                                     ": capital not positive after burn-in, also after resampling");
  });

  std::vector<FirmSeries> firms;
  firms.reserve(cfg.N);
  for (auto& fd : draws) firms.push_back(std::move(fd.series));
  SimulatedPanel out{PanelData(std::move(firms), false, true, true), group, {}, {}, {}, {}, {}, {}};
  for (auto& fd : draws) {
    out.phi.push_back(fd.phi);
    out.omega.push_back(std::move(fd.omega));
    out.eps.push_back(std::move(fd.eps));
    out.eta.push_back(std::move(fd.eta));
    out.capital.push_back(std::move(fd.capital));
    out.investment.push_back(std::move(fd.investment));
  }
  return out;
}

ParamVector true_theta(const GroupParams& g) {
  ParamVector th(5);
  th << g.gamma, g.E(), g.beta(), g.alpha, g.delta;
  return th;
}

MomentSpec simulation_spec() { return MomentSpec(Strategy::GNR, true, false); }

void write_truth_csv(const SimulatedPanel& sim, const std::string& path) {
  std::ofstream os(path);
  if (!os) fail(ErrorKind::Io, "cannot write " + path);
  os << "firm,group,phi\n";
  for (std::size_t i = 0; i < sim.group.size(); ++i)
    os << sim.panel.firm(i).id << ',' << (sim.group[i] + 1) << ',' << format_double(sim.phi[i])
       << '\n';
  if (!os) fail(ErrorKind::Io, "failed writing " + path);
}

void write_latent_csv(const SimulatedPanel& sim, const std::string& path) {
  std::ofstream os(path);
  if (!os) fail(ErrorKind::Io, "cannot write " + path);
  os << "firm,period,omega,eps,eta,capital,investment\n";
  for (std::size_t i = 0; i < sim.group.size(); ++i) {
    const auto& f = sim.panel.firm(i);
    for (std::size_t t = 0; t < f.size(); ++t)
      os << f.id << ',' << (f.first_period + static_cast<long>(t)) << ','
         << format_double(sim.omega[i][t]) << ',' << format_double(sim.eps[i][t]) << ','
         << format_double(sim.eta[i][t]) << ',' << format_double(sim.capital[i][t]) << ','
         << format_double(sim.investment[i][t]) << '\n';
  }
  if (!os) fail(ErrorKind::Io, "failed writing " + path);
}

}  // namespace pfc
