#include <doctest.h>

#include <cmath>
#include <limits>
#include <sstream>

#include "core/selection.hpp"
#include "core/simulate.hpp"
#include "fixtures.hpp"

using namespace pfc;

namespace {

GroupEstimates residuals_of(const std::vector<std::vector<double>>& r) {
  GroupEstimates g;
  g.residuals = r;
  return g;
}

std::size_t count_lines(const std::string& s) {
  std::size_t n = 0;
  for (char c : s) n += c == '\n';
  return n;
}

}  // namespace

TEST_CASE("penalty values") {
  PenaltySpec p1{PenaltyForm::P1, 1.0};
  CHECK(p1.value(200, 25) == doctest::Approx(0.0141421356237).epsilon(1e-10));
  CHECK(p1.value(571, 17) == doctest::Approx(0.0101498).epsilon(1e-5));
  CHECK(std::round(p1.value(571, 17) * 1e4) / 1e4 == doctest::Approx(0.0101));
  PenaltySpec p2{PenaltyForm::P2, 0.25};
  CHECK(p2.value(571, 17) == doctest::Approx(0.0153149).epsilon(1e-5));
  CHECK(std::round(p2.value(571, 17) * 1e4) / 1e4 == doctest::Approx(0.0153));
  CHECK(PenaltySpec{PenaltyForm::P1, 0.5}.value(200, 25) == doctest::Approx(0.5 * p1.value(200, 25)));
  CHECK(penalty_from_string("p2", 0.25).form == PenaltyForm::P2);
  CHECK(penalty_from_string("p1", 0.5).label() == "p1(r=0.5)");
  CHECK(testing::error_kind([] { penalty_from_string("p3", 1.0); }) == ErrorKind::Config);
}

TEST_CASE("information criterion") {
  const PenaltySpec p1{PenaltyForm::P1, 1.0};
  SUBCASE("unit residuals leave only the penalty") {
    auto g = residuals_of(std::vector<std::vector<double>>(200, std::vector<double>(25, 1.0)));
    auto ic = information_criterion(g, 1, 200, 25, 5, p1);
    CHECK(ic.msr == 1.0);
    CHECK(ic.count == 5000u);
    CHECK(ic.value == doctest::Approx(5 * 0.0141421356237).epsilon(1e-12));
  }
  SUBCASE("exact decomposition and monotonicity") {
    RandomStream rs(1, 0);
    std::vector<std::vector<double>> r(20, std::vector<double>(10));
    double ss = 0.0;
    for (auto& f : r)
      for (auto& v : f) {
        v = rs.normal();
        ss += v * v;
      }
    auto base = information_criterion(residuals_of(r), 2, 20, 10, 5, p1);
    CHECK(base.value == doctest::Approx(std::log(ss / 200) + 2 * 5 * p1.value(20, 10)).epsilon(1e-14));
    auto shifted = r;
    for (auto& f : shifted)
      for (auto& v : f) v = std::sqrt(v * v + 0.1);
    CHECK(information_criterion(residuals_of(shifted), 2, 20, 10, 5, p1).value > base.value);
    double prev = -std::numeric_limits<double>::infinity();
    for (int J = 1; J <= 8; ++J) {
      const double v = information_criterion(residuals_of(r), J, 20, 10, 5, p1).value;
      CHECK(v > prev);
      prev = v;
    }
  }
  SUBCASE("unclassified firms are left out of the mean") {
    std::vector<std::vector<double>> r{{2.0, 2.0}, {}, {2.0, 2.0}};
    auto ic = information_criterion(residuals_of(r), 1, 3, 2, 5, p1);
    CHECK(ic.count == 4u);
    CHECK(ic.msr == 4.0);
  }
  SUBCASE("zero residuals give minus infinity with a flag") {
    auto ic = information_criterion(residuals_of({{0.0, 0.0}, {0.0}}), 1, 2, 2, 5, p1);
    CHECK(ic.zero_residuals);
    CHECK(std::isinf(ic.value));
    CHECK(ic.value < 0);
  }
}

TEST_CASE("homogeneous panel selects one group") {
  SimConfig cfg = SimConfig::standard(90, 15, 4);
  auto g = cfg.groups[1];
  g.share = 1.0;
  cfg.groups = {g};
  const auto sim = draw_panel(cfg);
  const EstimationData data(sim.panel, simulation_spec());
  CLassoConfig base;
  const double lambda = std::pow(15.0, -0.25);
  auto res = select_J(data, lambda, {1, 2, 3},
                      {{PenaltyForm::P1, 1.0}, {PenaltyForm::P2, 0.25}}, base);
  REQUIRE(res.rows.size() == 3u);
  CHECK(res.best_J(0) == 1);
  CHECK(res.best_J(1) == 1);
  CHECK(res.best_lambda(0) == doctest::Approx(lambda));
  // a larger J is only chosen against a strictly smaller MSR
  for (std::size_t p = 0; p < 2; ++p)
    for (const auto& row : res.rows)
      if (row.J > res.best_J(p)) CHECK(row.ic[p] >= res.rows[res.best[p]].ic[p]);
}

TEST_CASE("ties go to the smallest J") {
  auto groups = testing::noiseless_groups();
  for (auto& p : groups) p.sigma_eps = p.sigma_eta = 0.02;
  const auto np = testing::noiseless_panel(groups, 1, 20, 6);
  const auto& f0 = np.panel.firm(0);
  std::vector<FirmSeries> copies;
  for (int i = 0; i < 8; ++i) {
    auto f = f0;
    f.id = "c" + std::to_string(i);
    copies.push_back(f);
  }
  const EstimationData data(PanelData(std::move(copies), false, true, true), simulation_spec());
  auto res = select_J(data, 0.3, {3, 1, 2}, {{PenaltyForm::P1, 0.0}}, CLassoConfig{});
  REQUIRE(res.rows.size() == 3u);
  CHECK(res.rows[0].J == 1);
  CHECK(res.rows[0].msr == doctest::Approx(res.rows[1].msr).epsilon(1e-12));
  CHECK(res.rows[0].ic[0] == doctest::Approx(res.rows[2].ic[0]).epsilon(1e-12));
  CHECK(res.best_J(0) == 1);
}

TEST_CASE("joint surface") {
  const auto sim = draw_panel(SimConfig::standard(30, 12, 9));
  const EstimationData data(sim.panel, simulation_spec());
  CLassoConfig base;
  const auto fw = firmwise_estimates(data, base);
  SUBCASE("shape follows the grid") {
    SelectionGrid grid{{1, 2, 3, 4, 5, 6, 7, 8}, {0.2, 0.25, 0.3, 0.35, 0.4}};
    auto res = select_joint(data, grid, {{PenaltyForm::P1, 1.0}, {PenaltyForm::P2, 0.25}}, base,
                            &fw);
    CHECK(res.rows.size() == 40u);
    const auto csv = surface_csv(res);
    CHECK(count_lines(csv) == 41u);
    CHECK(csv.substr(0, csv.find('\n')) == "a,lambda,J,IC1,IC2,msr,converged");
    for (const auto& row : res.rows)
      CHECK(row.lambda == doctest::Approx(std::pow(12.0, -row.a)));
  }
  SUBCASE("single point returns that point") {
    SelectionGrid grid{{2}, {0.3}};
    auto res = select_joint(data, grid, {{PenaltyForm::P1, 1.0}}, base, &fw);
    REQUIRE(res.rows.size() == 1u);
    CHECK(res.best_J() == 2);
    CHECK(res.best_lambda() == doctest::Approx(std::pow(12.0, -0.3)));
  }
  SUBCASE("invalid grids") {
    CHECK(testing::error_kind([&] { select_joint(data, {{}, {0.3}}, {{}}, base, &fw); }) ==
          ErrorKind::Config);
    CHECK(testing::error_kind([&] { select_joint(data, {{0}, {0.3}}, {{}}, base, &fw); }) ==
          ErrorKind::Config);
    CHECK(testing::error_kind([&] { select_joint(data, {{1}, {0.7}}, {{}}, base, &fw); }) ==
          ErrorKind::Config);
    CHECK(testing::error_kind([&] { select_joint(data, {{1}, {0.3}}, {}, base, &fw); }) ==
          ErrorKind::Config);
  }
}
