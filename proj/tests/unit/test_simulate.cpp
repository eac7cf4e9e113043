#include <doctest.h>

#include <cmath>
#include <numeric>

#include "core/moments.hpp"
#include "core/parallel.hpp"
#include "core/simulate.hpp"
#include "fixtures.hpp"

using namespace pfc;

TEST_CASE("optimal intermediate input") {
  CHECK(optimal_intermediate(std::log(2.0), 3.7, 0.5, 0.5, 1.0) == doctest::Approx(3.7));
  const double E2 = std::exp(0.04 * 0.04 / 2);
  CHECK(optimal_intermediate(1.0, 1.0, 0.5, 0.5, E2) ==
        doctest::Approx(1.850222012931757).epsilon(1e-13));
  CHECK(optimal_intermediate(-30.0, 1.0, 0.5, 0.5, 1.0) < 1e-20);
  double prev = 0.0;
  for (double w = -5; w <= 5; w += 0.5) {
    const double m = optimal_intermediate(w, 2.0, 0.35, 0.65, 1.0);
    CHECK(m > prev);
    prev = m;
  }
  CHECK(testing::error_kind([] { optimal_intermediate(0.0, 0.0, 0.5, 0.5, 1.0); }) ==
        ErrorKind::Domain);
}

TEST_CASE("optimal investment series") {
  GroupParams g{1.0, 0.5, 0.0, 0.0, 0.0, 0.0};
  CHECK(optimal_investment(0.0, g, 1.0, 0.985, 0.1, 1001) ==
        doctest::Approx(2.169603524229075).epsilon(1e-13));

  const auto std3 = SimConfig::standard().groups;
  for (const auto& p : std3) {
    const double w0 = p.alpha / (1 - p.delta);
    CHECK(optimal_investment(w0 + 1, p, 1.0, 0.985, 0.1, 1001) >
          optimal_investment(w0, p, 1.0, 0.985, 0.1, 1001));
  }

  const auto& g1 = std3[0];
  const double w1 = g1.alpha / (1 - g1.delta);
  const double a = optimal_investment(w1, g1, 1.0, 0.985, 0.1, 1001);
  const double b = optimal_investment(w1, g1, 1.0, 0.985, 0.1, 2000);
  CHECK(std::abs(a - b) / a < 1e-8);

  CHECK(optimal_investment(0.3, g1, 2.0, 0.985, 0.1, 50) ==
        doctest::Approx(optimal_investment(0.3, g1, 1.0, 0.985, 0.1, 50) / 2));
  CHECK(testing::error_kind([&] { optimal_investment(0.0, g1, 0.0, 0.985, 0.1, 10); }) ==
        ErrorKind::Domain);
  CHECK(testing::error_kind([&] { optimal_investment(0.0, g1, 1.0, 2.0, -0.1, 10); }) ==
        ErrorKind::Config);
}

TEST_CASE("precomputed series agrees with the direct sum") {
  for (const auto& p : SimConfig::standard().groups) {
    InvestmentSeries s(p, 0.985, 0.1, 1001);
    for (double w = -1.0; w <= 3.0; w += 0.25)
      for (double phi : {0.2, 1.0, 4.0})
        CHECK(s(w, phi) ==
              doctest::Approx(optimal_investment(w, p, phi, 0.985, 0.1, 1001)).epsilon(1e-12));
  }
}

TEST_CASE("true parameters per group") {
  const auto g = SimConfig::standard().groups;
  const std::vector<std::vector<double>> expect = {
      {0.35, std::exp(0.0002), 0.65, 0.0, 0.9},
      {0.50, std::exp(0.0008), 0.50, 0.2, 0.8},
      {0.65, std::exp(0.0002), 0.35, 0.4, 0.7}};
  for (int j = 0; j < 3; ++j) {
    const auto th = true_theta(g[j]);
    REQUIRE(th.size() == 5);
    for (int p = 0; p < 5; ++p) CHECK(th[p] == doctest::Approx(expect[j][p]).epsilon(1e-15));
    CHECK(g[j].beta() + g[j].gamma == doctest::Approx(1.0));
  }
}

TEST_CASE("group sizes by largest remainder") {
  CHECK(group_sizes({0.3, 0.4, 0.3}, 200) == std::vector<int>{60, 80, 60});
  CHECK(group_sizes({0.3, 0.4, 0.3}, 571) == std::vector<int>{171, 229, 171});
  CHECK(group_sizes({1.0 / 3, 1.0 / 3, 1.0 / 3}, 10) == std::vector<int>{4, 3, 3});
  for (int N : {1, 7, 99, 1000}) {
    const auto s = group_sizes({0.25, 0.35, 0.4}, N);
    CHECK(std::accumulate(s.begin(), s.end(), 0) == N);
  }
}

TEST_CASE("drawn panel satisfies the model identities") {
  const auto cfg = SimConfig::standard(200, 15, 3);
  const auto sim = draw_panel(cfg);
  REQUIRE(sim.panel.num_firms() == 200);
  CHECK(sim.panel.num_usable_rows() == 200u * 15u);
  std::vector<int> count(3, 0);
  for (int g : sim.group) ++count[g];
  CHECK(count == std::vector<int>{60, 80, 60});
  double worst_y = 0, worst_k = 0, worst_s = 0;
  for (std::size_t i = 0; i < sim.panel.num_firms(); ++i) {
    const auto& f = sim.panel.firm(i);
    const auto& p = cfg.groups[sim.group[i]];
    REQUIRE(f.size() == 16u);
    for (std::size_t t = 0; t < f.size(); ++t) {
      worst_y = std::max(worst_y, std::abs(f.y[t] - (p.beta() * f.k[t] + p.gamma * f.m[t] +
                                                     sim.omega[i][t] + sim.eps[i][t])));
      worst_s = std::max(worst_s, std::abs(f.s[t] - (f.m[t] - f.y[t])));
      if (t > 0) {
        const double K = (1 - cfg.d) * sim.capital[i][t - 1] + sim.investment[i][t - 1];
        worst_k = std::max(worst_k, std::abs(sim.capital[i][t] - K) / K);
      }
      CHECK(std::abs(f.k[t] - std::log(sim.capital[i][t])) < 1e-14);
    }
  }
  CHECK(worst_y < 1e-12);
  CHECK(worst_s == 0.0);
  CHECK(worst_k < 1e-15);
}

TEST_CASE("post-burn-in productivity is stationary") {
  const auto cfg = SimConfig::standard(600, 15, 8);
  const auto sim = draw_panel(cfg);
  const auto& g3 = cfg.groups[2];
  const double mu = g3.alpha / (1 - g3.delta);
  const double var = g3.sigma_eta * g3.sigma_eta / (1 - g3.delta * g3.delta);
  std::vector<double> firm_mean;
  double ss = 0, num = 0, den = 0;
  int n = 0, pairs = 0;
  for (std::size_t i = 0; i < sim.group.size(); ++i) {
    if (sim.group[i] != 2) continue;
    const auto& w = sim.omega[i];
    firm_mean.push_back(std::accumulate(w.begin(), w.end(), 0.0) / w.size());
    for (std::size_t t = 0; t < w.size(); ++t) {
      ss += (w[t] - mu) * (w[t] - mu);
      ++n;
      if (t > 0) {
        num += (w[t] - mu) * (w[t - 1] - mu);
        den += (w[t - 1] - mu) * (w[t - 1] - mu);
        ++pairs;
      }
    }
  }
  const double grand = std::accumulate(firm_mean.begin(), firm_mean.end(), 0.0) / firm_mean.size();
  double v = 0;
  for (double m : firm_mean) v += (m - grand) * (m - grand);
  const double se = std::sqrt(v / (firm_mean.size() - 1) / firm_mean.size());
  CHECK(std::abs(grand - mu) < 3 * se);
  CHECK(ss / n == doctest::Approx(var).epsilon(0.15));
  const double rho = num / den;
  CHECK(std::abs(rho - g3.delta) < 3 * std::sqrt((1 - g3.delta * g3.delta) / pairs));
}

TEST_CASE("noise-free configuration") {
  auto cfg = SimConfig::standard(60, 6, 2);
  for (auto& g : cfg.groups) g.sigma_eps = g.sigma_eta = 0.0;
  const auto sim = draw_panel(cfg);
  const auto spec = simulation_spec();
  const auto lags = build_lags(sim.panel);
  for (std::size_t i = 0; i < sim.group.size(); ++i) {
    const auto& p = cfg.groups[sim.group[i]];
    for (std::size_t t = 0; t < sim.omega[i].size(); ++t) {
      CHECK(sim.eps[i][t] == 0.0);
      CHECK(sim.eta[i][t] == 0.0);
      CHECK(sim.omega[i][t] == doctest::Approx(p.alpha / (1 - p.delta)).epsilon(1e-12));
    }
    const auto g = firm_avg_moments(lags[i], true_theta(p), spec);
    CHECK(g.lpNorm<Eigen::Infinity>() < 1e-10);
  }
}

TEST_CASE("fixed seed is reproducible across runs and thread counts") {
  const auto cfg = SimConfig::standard(90, 10, 77);
  set_num_threads(1);
  const auto a = to_csv(draw_panel(cfg).panel);
  set_num_threads(4);
  const auto b = to_csv(draw_panel(cfg).panel);
  set_num_threads(0);
  const auto c = to_csv(draw_panel(cfg).panel);
  CHECK(a == b);
  CHECK(a == c);
  auto other = cfg;
  other.seed = 78;
  CHECK(to_csv(draw_panel(other).panel) != a);
}

TEST_CASE("invalid configurations are rejected") {
  auto cfg = SimConfig::standard();
  cfg.groups[0].share = 0.5;
  CHECK(testing::error_kind([&] { draw_panel(cfg); }) == ErrorKind::Config);
  cfg = SimConfig::standard();
  cfg.groups[1].delta = 1.0;
  CHECK(testing::error_kind([&] { draw_panel(cfg); }) == ErrorKind::Config);
  cfg = SimConfig::standard();
  cfg.groups[2].gamma = 1.2;
  CHECK(testing::error_kind([&] { draw_panel(cfg); }) == ErrorKind::Config);
  cfg = SimConfig::standard();
  cfg.groups[0].sigma_eps = -0.1;
  CHECK(testing::error_kind([&] { draw_panel(cfg); }) == ErrorKind::Config);
}
