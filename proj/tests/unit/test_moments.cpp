#include <doctest.h>

#include <cmath>
#include <vector>

#include "core/moments.hpp"
#include "core/rng.hpp"
#include "core/simulate.hpp"
#include "fixtures.hpp"

using namespace pfc;
using pfc::testing::error_kind;
using pfc::testing::all_specs;
using pfc::testing::random_row;
using pfc::testing::random_spd;
using pfc::testing::random_theta;

namespace {

// Direct transcription of the ACF two-equation system.
std::pair<double, double> acf_oracle(const LaggedRow& r, const ParamVector& th) {
  const double a0 = th[0], a1 = th[1], a2 = th[2], a3 = th[3];
  const double b0 = th[4], b1 = th[5], b2 = th[6], d = th[7];
  const double phi_t = a0 + a1 * r.k + a2 * r.l + a3 * r.m;
  const double phi_l = a0 + a1 * r.k_lag + a2 * r.l_lag + a3 * r.m_lag;
  const double eps = r.y - phi_t;
  const double v = r.y - b0 - b1 * r.k - b2 * r.l - d * (phi_l - b0 - b1 * r.k_lag - b2 * r.l_lag);
  return {eps, v};
}

}  // namespace

TEST_CASE("parameter layouts and moment counts") {
  MomentSpec gnr(Strategy::GNR, false, true);
  CHECK(gnr.num_params() == 6);
  CHECK(gnr.num_moments() == 6);
  CHECK(gnr.param_names() == std::vector<std::string>{"beta3", "E", "beta0", "beta1", "beta2", "delta"});
  MomentSpec gnr_c(Strategy::GNR, true, true);
  CHECK(gnr_c.param_names() ==
        std::vector<std::string>{"beta3", "E", "beta1", "beta2", "delta0", "delta1"});
  MomentSpec acf(Strategy::ACF, false, true);
  CHECK(acf.num_params() == 8);
  CHECK(acf.num_moments() == 9);
  MomentSpec dyn(Strategy::DynamicPanel, false, true);
  CHECK(dyn.num_params() == 5);
  CHECK(dyn.num_moments() == 6);
  CHECK(dyn.param_names() == std::vector<std::string>{"beta0", "beta1", "beta2", "beta3", "delta"});
  for (const auto& s : all_specs()) CHECK(s.num_moments() >= s.num_params());
  CHECK(error_kind([] { MomentSpec(Strategy::ACF, true, true); }) == ErrorKind::Config);
  CHECK(strategy_from_string("dynpanel") == Strategy::DynamicPanel);
  CHECK(error_kind([] { strategy_from_string("olley"); }) == ErrorKind::Config);
}

TEST_CASE("moment vector length matches the spec on every row") {
  RandomStream rs(11, 0);
  for (const auto& spec : all_specs())
    for (int i = 0; i < 20; ++i) {
      auto row = random_row(rs);
      CHECK(moment_vector(row, random_theta(rs, spec), spec).size() == spec.num_moments());
    }
}

TEST_CASE("GNR residuals") {
  MomentSpec spec(Strategy::GNR, false, true);
  SUBCASE("share at log(beta3 E) gives eps = 0") {
    ParamVector th(6);
    th << 0.4, 1.3, 0.1, 0.5, 0.2, 0.7;
    LaggedRow r{};
    r.s = r.s_lag = std::log(0.4 * 1.3);
    r.y = 2.0;
    CHECK(std::abs(gnr_residuals(r, th, spec).eps) < 1e-15);
  }
  SUBCASE("hand case") {
    ParamVector th(6);
    th << 0.5, 1.0, 0.0, 0.5, 0.0, 0.0;
    LaggedRow r{};
    r.s = r.s_lag = std::log(0.5);
    r.y = 1.0;
    r.m = 0.8;
    r.k = 1.2;
    auto res = gnr_residuals(r, th, spec);
    CHECK(std::abs(res.eps) < 1e-15);
    CHECK(res.yr == doctest::Approx(0.6));
    CHECK(std::abs(res.eta) < 1e-15);
  }
  SUBCASE("all residuals zero with E = 1 gives the zero vector") {
    ParamVector th(6);
    th << 0.5, 1.0, 0.0, 0.5, 0.0, 0.0;
    LaggedRow r{};
    r.s = r.s_lag = std::log(0.5);
    r.y = 1.0;
    r.m = 0.8;
    r.k = 1.2;
    r.y_lag = 0.3;
    auto g = moment_vector(r, th, spec);
    CHECK(g.cwiseAbs().maxCoeff() < 1e-15);
  }
  SUBCASE("second entry is 1 - E when eps = 0") {
    ParamVector th(6);
    th << 0.25, 2.0, 0.0, 0.5, 0.0, 0.0;
    LaggedRow r{};
    r.s = r.s_lag = std::log(0.5);
    auto g = moment_vector(r, th, spec);
    CHECK(g[1] == doctest::Approx(1.0 - 2.0));
  }
  SUBCASE("domain errors") {
    ParamVector th(6);
    th << -0.1, 1.0, 0.0, 0.5, 0.0, 0.0;
    LaggedRow r{};
    CHECK(error_kind([&] { gnr_residuals(r, th, spec); }) == ErrorKind::Domain);
    th[0] = 0.5;
    th[1] = 0.0;
    CHECK(error_kind([&] { gnr_residuals(r, th, spec); }) == ErrorKind::Domain);
  }
  SUBCASE("d eps / d beta3 = 1 / beta3") {
    ParamVector th(6);
    th << 0.5, 1.0, 0.0, 0.5, 0.0, 0.0;
    LaggedRow r{};
    r.s = r.s_lag = -0.5;
    double g[9], jac[9 * 8];
    REQUIRE(moment_kernel(r, th.data(), spec, g, jac));
    CHECK(jac[0 * 6 + 0] == doctest::Approx(2.0));
  }
}

TEST_CASE("ACF residuals") {
  MomentSpec spec(Strategy::ACF, false, true);
  RandomStream rs(5, 1);
  SUBCASE("y equal to the first stage gives eps = 0") {
    ParamVector th = random_theta(rs, spec);
    auto r = random_row(rs);
    r.y = th[0] + th[1] * r.k + th[2] * r.l + th[3] * r.m;
    CHECK(std::abs(acf_residuals(r, th, spec).eps) < 1e-14);
  }
  SUBCASE("delta = 0 and y on the production line give v = 0") {
    ParamVector th = random_theta(rs, spec);
    th[7] = 0.0;
    auto r = random_row(rs);
    r.y = th[4] + th[5] * r.k + th[6] * r.l;
    CHECK(std::abs(acf_residuals(r, th, spec).v) < 1e-14);
  }
  SUBCASE("random draws match the direct transcription") {
    for (int i = 0; i < 50; ++i) {
      ParamVector th = random_theta(rs, spec);
      auto r = random_row(rs);
      auto [eps, v] = acf_oracle(r, th);
      auto got = acf_residuals(r, th, spec);
      CHECK(got.eps == doctest::Approx(eps).epsilon(1e-13));
      CHECK(got.v == doctest::Approx(v).epsilon(1e-13));
    }
  }
}

TEST_CASE("dynamic panel residual") {
  MomentSpec spec(Strategy::DynamicPanel, false, true);
  RandomStream rs(8, 2);
  SUBCASE("delta = 0 is the static residual") {
    ParamVector th = random_theta(rs, spec);
    th[4] = 0.0;
    auto r = random_row(rs);
    const double expect = r.y - th[0] - th[1] * r.k - th[2] * r.l - th[3] * r.m;
    CHECK(dynpanel_residual(r, th, spec) == doctest::Approx(expect));
  }
  SUBCASE("delta = 1 removes beta0") {
    ParamVector th = random_theta(rs, spec);
    th[4] = 1.0;
    auto r = random_row(rs);
    const double w1 = dynpanel_residual(r, th, spec);
    th[0] += 17.0;
    CHECK(dynpanel_residual(r, th, spec) == w1);
  }
  SUBCASE("w = 2 with fixed instruments") {
    // Zero parameters: w = y = 2.
    ParamVector th(5);
    th << 0.0, 0.0, 0.0, 0.0, 0.0;
    LaggedRow r{};
    r.y = 2.0;
    r.k = 1.0;
    r.l = 0.5;
    r.k_lag = 1.0;
    r.l_lag = 0.5;
    r.m_lag = 3.0;
    auto g = moment_vector(r, th, spec);
    Eigen::VectorXd expect(6);
    expect << 2, 2, 1, 2, 1, 6;
    CHECK((g - expect).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("firm averages") {
  MomentSpec spec(Strategy::DynamicPanel, false, true);
  RandomStream rs(3, 3);
  ParamVector th = random_theta(rs, spec);
  SUBCASE("single row equals the row moment") {
    std::vector<LaggedRow> rows{random_row(rs)};
    CHECK((firm_avg_moments(rows, th, spec) - moment_vector(rows[0], th, spec)).norm() == 0.0);
  }
  SUBCASE("rows with opposite moments average to zero") {
    // With zero parameters w = y; flipping y flips every moment.
    ParamVector zero = ParamVector::Zero(5);
    LaggedRow a = random_row(rs), b = a;
    b.y = -a.y;
    std::vector<LaggedRow> rows{a, b};
    CHECK(firm_avg_moments(rows, zero, spec).cwiseAbs().maxCoeff() < 1e-15);
  }
  SUBCASE("unbalanced firm with four rows divides by four") {
    std::vector<LaggedRow> rows;
    MomentVector sum = MomentVector::Zero(6);
    for (int i = 0; i < 4; ++i) {
      rows.push_back(random_row(rs));
      sum += moment_vector(rows.back(), th, spec);
    }
    CHECK((firm_avg_moments(rows, th, spec) - sum / 4.0).cwiseAbs().maxCoeff() < 1e-14);
  }
  SUBCASE("empty firm is an error") {
    std::vector<LaggedRow> rows;
    CHECK(error_kind([&] { firm_avg_moments(rows, th, spec); }) == ErrorKind::Data);
  }
}

TEST_CASE("GMM objective") {
  SUBCASE("W = I and gbar = (1, 2) gives 5") {
    // Dynamic panel without labor has 4 moments; build a row whose average is (1, 2, 0, 0).
    MomentSpec spec(Strategy::DynamicPanel, false, false);
    LaggedRow r{};
    r.y = 1.0;
    r.k = 2.0;
    ParamVector th = ParamVector::Zero(4);
    std::vector<LaggedRow> rows{r};
    CHECK(gmm_objective(rows, th, Eigen::MatrixXd::Identity(4, 4), spec) == 5.0);
  }
  SUBCASE("objective is a quadratic form matching matrix arithmetic") {
    MomentSpec spec(Strategy::GNR, false, true);
    RandomStream rs(12, 0);
    for (int i = 0; i < 20; ++i) {
      std::vector<LaggedRow> rows;
      for (int t = 0; t < 8; ++t) rows.push_back(random_row(rs));
      ParamVector th = random_theta(rs, spec);
      Eigen::MatrixXd W = random_spd(rs, 6);
      const auto g = firm_avg_moments(rows, th, spec);
      const double q = gmm_objective(rows, th, W, spec);
      CHECK(q == doctest::Approx(g.transpose() * W * g).epsilon(1e-12));
      CHECK(q >= 0.0);
    }
  }
}

TEST_CASE("property: analytic gradients match central differences") {
  for (const auto& spec : all_specs()) {
    RandomStream rs(1000 + static_cast<int>(spec.strategy()) * 10 + spec.num_params(), 4);
    int checked = 0;
    for (int draw = 0; draw < 100; ++draw) {
      std::vector<LaggedRow> rows;
      for (int t = 0; t < 6; ++t) rows.push_back(random_row(rs));
      ParamVector th = random_theta(rs, spec);
      Eigen::MatrixXd W = random_spd(rs, spec.num_moments());
      const auto grad = gmm_gradient(rows, th, W, spec);
      for (int p = 0; p < th.size(); ++p) {
        const double h = 1e-6 * std::max(1.0, std::abs(th[p]));
        ParamVector a = th, b = th;
        a[p] += h;
        b[p] -= h;
        const double fd = (gmm_objective(rows, a, W, spec) - gmm_objective(rows, b, W, spec)) / (2 * h);
        const double scale = std::max(1.0, grad.cwiseAbs().maxCoeff());
        CHECK(std::abs(grad[p] - fd) <= 1e-5 * scale);
        ++checked;
      }
    }
    CHECK(checked == 100 * spec.num_params());
  }
}

TEST_CASE("gradient vanishes where gbar = 0") {
  auto np = pfc::testing::noiseless_panel(pfc::testing::noiseless_groups(), 1, 12, 3);
  auto rows = build_lags(np.panel)[1];
  GroupParams g = pfc::testing::noiseless_groups()[1];
  g.sigma_eps = 0.0;
  const auto spec = simulation_spec();
  const auto th = true_theta(g);
  const Eigen::MatrixXd W = Eigen::MatrixXd::Identity(spec.num_moments(), spec.num_moments());
  CHECK(gmm_objective(rows, th, W, spec) < 1e-28);
  CHECK(gmm_gradient(rows, th, W, spec).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("optimal weighting") {
  SUBCASE("two orthogonal unit moments give W = 2I") {
    Eigen::MatrixXd G(2, 2);
    G << 1, 0, 0, 1;
    auto w = weighting_from_moments(G);
    CHECK_FALSE(w.fell_back_to_identity);
    CHECK((w.W - 2.0 * Eigen::MatrixXd::Identity(2, 2)).cwiseAbs().maxCoeff() < 1e-8);
  }
  SUBCASE("constant e1 moments shrink coordinate 1 the most") {
    Eigen::MatrixXd G = Eigen::MatrixXd::Zero(5, 3);
    G.col(0).setOnes();
    auto w = weighting_from_moments(G);
    // S = e1 e1' + ridge I: W_11 = 1 / (1 + ridge), others 1 / ridge.
    CHECK(w.W(0, 0) < 1.0 + 1e-6);
    CHECK(w.W(1, 1) > 1e8);
    CHECK(w.W(2, 2) > 1e8);
  }
  SUBCASE("all-zero moments fall back to identity") {
    auto w = weighting_from_moments(Eigen::MatrixXd::Zero(4, 3));
    CHECK(w.fell_back_to_identity);
    CHECK(w.W == Eigen::MatrixXd::Identity(3, 3));
  }
  SUBCASE("W = S^-1 quadratic form matches matrix arithmetic") {
    RandomStream rs(21, 0);
    MomentSpec spec(Strategy::GNR, false, true);
    std::vector<LaggedRow> rows;
    for (int t = 0; t < 30; ++t) rows.push_back(random_row(rs));
    ParamVector th = random_theta(rs, spec);
    auto w = optimal_weighting(rows, th, spec);
    Eigen::MatrixXd S = Eigen::MatrixXd::Zero(6, 6);
    for (const auto& r : rows) {
      auto g = moment_vector(r, th, spec);
      S += g * g.transpose();
    }
    S /= 30.0;
    S.diagonal().array() += 1e-10 * S.trace() / 6.0;
    const auto gbar = firm_avg_moments(rows, th, spec);
    const double expect = gbar.dot(S.ldlt().solve(gbar));
    CHECK(gmm_objective(rows, th, w.W, spec) == doctest::Approx(expect).epsilon(1e-8));
  }
  SUBCASE("simulated firms give positive definite W") {
    auto cfg = SimConfig::standard(100, 10, 4);
    auto sim = draw_panel(cfg);
    auto lags = build_lags(sim.panel);
    const auto spec = simulation_spec();
    for (std::size_t i = 0; i < lags.size(); ++i) {
      const auto th = true_theta(cfg.groups[sim.group[i]]);
      auto w = optimal_weighting(lags[i], th, spec);
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(w.W);
      CHECK(es.eigenvalues().minCoeff() > 0.0);
    }
  }
  SUBCASE("non positive definite W is rejected") {
    Eigen::MatrixXd W(2, 2);
    W << 1, 2, 2, 1;
    CHECK(error_kind([&] { checked_weighting(W); }) == ErrorKind::Config);
  }
}

TEST_CASE("zero-shock simulated panel has zero GNR moments at the truth") {
  SimConfig cfg = SimConfig::standard(30, 8, 5);
  for (auto& g : cfg.groups) {
    g.sigma_eps = 0.0;
    g.sigma_eta = 0.0;
  }
  auto sim = draw_panel(cfg);
  auto lags = build_lags(sim.panel);
  const auto spec = simulation_spec();
  const Eigen::MatrixXd W = Eigen::MatrixXd::Identity(spec.num_moments(), spec.num_moments());
  for (std::size_t i = 0; i < lags.size(); ++i) {
    const auto th = true_theta(cfg.groups[sim.group[i]]);
    CHECK(gmm_objective(lags[i], th, W, spec) < 1e-18);
  }
}

TEST_CASE("long simulated firm: averaged moments at the truth are within 3 standard errors") {
  SimConfig cfg;
  GroupParams g2 = SimConfig::standard().groups[1];
  g2.share = 1.0;
  cfg.groups = {g2};
  cfg.N = 1;
  cfg.T = 10000;
  cfg.seed = 17;
  auto sim = draw_panel(cfg);
  auto rows = build_lags(sim.panel)[0];
  const auto spec = simulation_spec();
  const auto th = true_theta(g2);
  const double T = static_cast<double>(rows.size());
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(spec.num_moments());
  Eigen::VectorXd sq = Eigen::VectorXd::Zero(spec.num_moments());
  for (const auto& r : rows) {
    auto g = moment_vector(r, th, spec);
    mean += g;
    sq += g.cwiseProduct(g);
  }
  mean /= T;
  for (int p = 0; p < mean.size(); ++p) {
    const double sd = std::sqrt(sq[p] / T - mean[p] * mean[p]);
    CHECK(std::abs(mean[p]) < 3.0 * sd / std::sqrt(T));
  }
}

TEST_CASE("panel compatibility") {
  auto np = pfc::testing::noiseless_panel(pfc::testing::noiseless_groups(), 1, 5, 1);
  CHECK(error_kind([&] { check_compatible(np.panel, MomentSpec(Strategy::GNR, false, true)); }) ==
        ErrorKind::Config);
  FirmSeries f{"a", 0, {1, 2, 3}, {1, 2, 3}, {}, {1, 2, 3}, {}, {}};
  PanelData no_share({f}, false, false, false);
  try {
    check_compatible(no_share, MomentSpec(Strategy::GNR, true, false));
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("share column s") != std::string::npos);
  }
  CHECK_NOTHROW(check_compatible(no_share, MomentSpec(Strategy::DynamicPanel, false, false)));
}
