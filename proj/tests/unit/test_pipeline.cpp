#include <doctest.h>

#include <cmath>
#include <json.hpp>
#include <numeric>

#include "core/fit_io.hpp"
#include "core/pipeline.hpp"
#include "fixtures.hpp"

using namespace pfc;

TEST_CASE("crosstab") {
  const std::vector<std::string> ids{"a", "b", "c", "d", "e", "f", "g"};
  SUBCASE("labels equal to groups give a diagonal table") {
    std::map<std::string, std::string> lab{{"a", "x"}, {"b", "y"}, {"c", "z"}, {"d", "x"},
                                           {"e", "y"}, {"f", "z"}, {"g", "x"}};
    auto c = crosstab(ids, {0, 1, 2, 0, 1, 2, 0}, 3, lab);
    CHECK(c.labels == std::vector<std::string>{"x", "y", "z"});
    CHECK(c.counts == std::vector<std::vector<int>>{{3, 0, 0}, {0, 2, 0}, {0, 0, 2}});
    CHECK(c.total() == 7);
  }
  SUBCASE("mixed assignment matches a hand tally") {
    std::map<std::string, std::string> lab{{"a", "p"}, {"b", "p"}, {"c", "q"}, {"d", "q"},
                                           {"e", "q"}, {"f", "p"}};
    auto c = crosstab(ids, {1, 0, 1, 1, kUnclassified, 1, 0}, 2, lab);
    CHECK(c.counts == std::vector<std::vector<int>>{{1, 2}, {0, 2}});
    CHECK(c.unlabeled == 1);
    CHECK(crosstab_csv(c) == "label,group_1,group_2,total\np,1,2,3\nq,0,2,2\ntotal,1,4,5\n");
  }
  SUBCASE("label tables from CSV") {
    auto m = labels_from_csv("id,ind\nf1,food\nf1,wood\nf2,metal\n", "id", "ind");
    CHECK(m.size() == 2u);
    CHECK(m.at("f1") == "food");
    CHECK(testing::error_kind([] { labels_from_csv("id,ind\n", "firm", "ind"); }) ==
          ErrorKind::Config);
  }
}

TEST_CASE("industry mimic: crosstab row sums equal industry sizes") {
  const auto sim = draw_panel(SimConfig::standard(100, 6, 2));
  const std::vector<std::string> names{"food", "textile", "wood", "paper", "metal"};
  std::vector<std::string> label(100);
  std::vector<int> size(5, 0);
  for (int i = 0; i < 100; ++i) {
    const int k = (i * 7 + sim.group[i]) % 5;
    label[i] = names[k];
    ++size[k];
  }
  const auto panel = with_firm_labels(sim.panel, "industry", label);
  const auto fl = labels_from_column(panel, "industry");
  CHECK(fl.label == label);
  CHECK(fl.levels == std::vector<std::string>{"food", "metal", "paper", "textile", "wood"});
  std::map<std::string, std::string> lab;
  for (std::size_t i = 0; i < panel.num_firms(); ++i) lab[panel.firm(i).id] = fl.label[i];
  std::vector<std::string> ids;
  for (const auto& f : panel.firms()) ids.push_back(f.id);
  auto c = crosstab(ids, sim.group, 3, lab);
  for (std::size_t r = 0; r < c.labels.size(); ++r) {
    const auto k = std::find(names.begin(), names.end(), c.labels[r]) - names.begin();
    CHECK(std::accumulate(c.counts[r].begin(), c.counts[r].end(), 0) == size[k]);
  }
  CHECK(c.total() == 100);
  CHECK(testing::error_kind([&] { labels_from_column(panel, "sector"); }) == ErrorKind::Config);
}

TEST_CASE("fit comparison") {
  const auto sim = draw_panel(SimConfig::standard(60, 10, 6));
  const EstimationData data(sim.panel, simulation_spec());
  auto truth = fit_partition(data, sim.group, 3, WeightingScheme::Identity);
  SUBCASE("identical fits give identical MSR") {
    auto a = evaluate_fit(data, truth);
    auto b = evaluate_fit(data, fit_from_json(fit_to_json(truth)));
    CHECK(a.msr == b.msr);
    CHECK(a.residuals == 60u * 10u);
    CHECK(a.groups == 3);
    CHECK(a.parameters == 15);
  }
  SUBCASE("true partition beats a scrambled one") {
    std::vector<int> scrambled(sim.group.size());
    for (std::size_t i = 0; i < scrambled.size(); ++i) scrambled[i] = static_cast<int>(i % 3);
    auto s = fit_partition(data, scrambled, 3, WeightingScheme::Identity);
    CHECK(evaluate_fit(data, truth).msr < evaluate_fit(data, s).msr);
  }
  SUBCASE("noise-free panel at the true parameters") {
    const auto groups = testing::noiseless_groups();
    const auto np = testing::noiseless_panel(groups, 3, 8, 4);
    const EstimationData nd(np.panel, simulation_spec());
    auto f = fit_partition(nd, np.group, 3, WeightingScheme::Identity);
    for (int j = 0; j < 3; ++j) f.estimates.groups[j].theta = true_theta(groups[j]);
    CHECK(evaluate_fit(nd, f).msr < 1e-28);
  }
}

TEST_CASE("TFP levels") {
  const auto groups = testing::noiseless_groups();
  const auto np = testing::noiseless_panel(groups, 3, 8, 4);
  const EstimationData nd(np.panel, simulation_spec());
  auto f = fit_partition(nd, np.group, 3, WeightingScheme::Identity);
  for (int j = 0; j < 3; ++j) f.estimates.groups[j].theta = true_theta(groups[j]);
  const int b1 = nd.spec.index(Param::Beta1), b3 = nd.spec.index(Param::Beta3);

  SUBCASE("noise-free firms recover exp(omega)") {
    auto rows = tfp_levels(np.panel, f);
    REQUIRE(rows.size() == 9u * 9u);
    double worst = 0.0;
    for (const auto& r : rows) {
      const auto i = *np.panel.find_firm(r.firm);
      CHECK(r.group == np.group[i] + 1);
      worst = std::max(worst, std::abs(r.tfp / std::exp(np.omega[i][r.period]) - 1));
    }
    CHECK(worst < 1e-12);
  }
  SUBCASE("zero elasticities give exp(y)") {
    for (auto& g : f.estimates.groups) g.theta[b1] = g.theta[b3] = 0.0;
    for (const auto& r : tfp_levels(np.panel, f)) {
      const auto& firm = np.panel.firm(*np.panel.find_firm(r.firm));
      CHECK(r.tfp == doctest::Approx(std::exp(firm.y[r.period])).epsilon(1e-15));
    }
  }
  SUBCASE("estimated fit on a noisy panel gives positive levels") {
    const auto sim = draw_panel(SimConfig::standard(30, 8, 3));
    const EstimationData d(sim.panel, simulation_spec());
    auto g = fit_partition(d, sim.group, 3, WeightingScheme::Identity);
    auto rows = tfp_levels(sim.panel, g);
    CHECK(rows.size() == 30u * 9u);
    for (const auto& r : rows) CHECK(r.tfp > 0.0);
    const auto csv = tfp_csv(rows);
    CHECK(csv.substr(0, csv.find('\n')) == "firm_id,period,group,tfp");
  }
}

TEST_CASE("Monte Carlo accounting") {
  SUBCASE("selection mode") {
    auto cfg = mc_config_from_json(
        R"({"mode":"selection","replications":3,"base_seed":5,"sim":{"N":45,"T":10},
            "penalties":[{"form":"p1","r":1},{"form":"p2","r":0.25}],"J_values":[1,2,3,4]})");
    auto s = run_montecarlo(cfg);
    CHECK(s.replications == 3);
    CHECK(s.true_J == 3);
    REQUIRE(s.penalties.size() == 2u);
    for (const auto& p : s.penalties) {
      const auto n = static_cast<double>(p.selected.size());
      REQUIRE(n == 3 - s.failed);
      const double eq = std::count(p.selected.begin(), p.selected.end(), 3) / n;
      const double ge = std::count_if(p.selected.begin(), p.selected.end(),
                                      [](int J) { return J >= 3; }) / n;
      CHECK(p.pr_equal == eq);
      CHECK(p.pr_at_least == ge);
      CHECK(p.mean_J == doctest::Approx(std::accumulate(p.selected.begin(), p.selected.end(), 0.0) / n));
    }
    auto j = nlohmann::json::parse(mc_summary_json(s));
    CHECK(j["mode"] == "selection");
  }
  SUBCASE("estimation mode") {
    McConfig cfg;
    cfg.replications = 3;
    cfg.sim = SimConfig::standard(45, 10, 1);
    cfg.base_seed = 9;
    auto s = run_montecarlo(cfg);
    CHECK(s.failed == 0);
    CHECK(s.accuracy.size() == 3u);
    CHECK(s.mean_accuracy ==
          doctest::Approx(std::accumulate(s.accuracy.begin(), s.accuracy.end(), 0.0) / 3));
    REQUIRE(s.params.size() == 2u);
    CHECK(s.params[0].name == "gamma");
    CHECK(s.params[1].name == "beta");
    for (const auto& p : s.params) {
      CHECK(p.rel_sd >= 0.0);
      CHECK(p.coverage >= 0.0);
      CHECK(p.coverage <= 1.0);
      CHECK(p.max_rmse_gap < 1e-9);
    }
    const auto csv = mc_summary_csv(s);
    CHECK(!csv.empty());
    CHECK(mc_summary_csv(run_montecarlo(cfg)) == csv);
  }
  SUBCASE("bad configs") {
    CHECK(testing::error_kind([] { mc_config_from_json(R"({"reps":3})"); }) == ErrorKind::Config);
    CHECK(testing::error_kind([] { mc_config_from_json(R"({"mode":"both"})"); }) ==
          ErrorKind::Config);
    CHECK(testing::error_kind([] { mc_config_from_json(R"({"replications":0})"); }) ==
          ErrorKind::Config);
  }
}
