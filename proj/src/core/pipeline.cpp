#include "core/pipeline.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_map>

#include "core/error.hpp"
#include "core/fit_io.hpp"
#include "core/format.hpp"

namespace pfc {

using nlohmann::json;

void McConfig::validate() const {
  if (replications < 1) fail(ErrorKind::Config, "replications must be at least 1");
  sim.validate();
  classo.validate();
  if (mode == McMode::Selection) {
    if (penalties.empty()) fail(ErrorKind::Config, "selection mode needs at least one penalty");
    if (J_values.empty()) fail(ErrorKind::Config, "selection mode needs a J grid");
    for (int J : J_values)
      if (J < 1) fail(ErrorKind::Config, "J values must be >= 1");
  }
  if (sim.groups.size() > 8) fail(ErrorKind::Config, "label matching supports at most 8 groups");
}

McConfig mc_config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    fail(ErrorKind::Config, std::string("invalid JSON in Monte Carlo config: ") + e.what());
  }
  if (!j.is_object()) fail(ErrorKind::Config, "Monte Carlo config must be a JSON object");
  static const std::set<std::string> allowed{"replications", "mode", "base_seed", "sim",
                                             "classo", "penalties", "J_values"};
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!allowed.count(it.key()))
      fail(ErrorKind::Config, "unknown key '" + it.key() + "' in Monte Carlo config");
  McConfig c;
  try {
    if (j.contains("replications")) c.replications = j["replications"].get<int>();
    if (j.contains("base_seed")) c.base_seed = j["base_seed"].get<std::uint64_t>();
    if (j.contains("mode")) {
      const auto m = j["mode"].get<std::string>();
      if (m == "selection") c.mode = McMode::Selection;
      else if (m == "estimation") c.mode = McMode::Estimation;
      else fail(ErrorKind::Config, "mode must be 'selection' or 'estimation'");
    }
    if (j.contains("J_values")) c.J_values = j["J_values"].get<std::vector<int>>();
  } catch (const json::exception& e) {
    fail(ErrorKind::Config, std::string("bad value in Monte Carlo config: ") + e.what());
  }
  if (j.contains("sim")) c.sim = sim_config_from_json(j["sim"].dump());
  if (j.contains("classo")) c.classo = classo_config_from_json(j["classo"].dump());
  if (j.contains("penalties")) c.penalties = penalties_from_json(j["penalties"].dump());
  c.validate();
  return c;
}

namespace {

struct Draws {
  std::vector<double> est, se;
};

ParamSummary summarize(const std::string& name, const std::vector<Draws>& firms,
                       const std::vector<double>& truth) {
  ParamSummary out;
  out.name = name;
  double bias = 0, sd = 0, rmse = 0, ratio = 0, cover = 0;
  std::size_t n_firms = 0, n_ratio = 0;
  for (std::size_t i = 0; i < firms.size(); ++i) {
    const auto& d = firms[i];
    const std::size_t R = d.est.size();
    if (R < 2) continue;
    const double t = truth[i];
    double mean = 0, mse = 0, mean_se = 0, hits = 0;
    for (std::size_t r = 0; r < R; ++r) {
      mean += d.est[r];
      mse += (d.est[r] - t) * (d.est[r] - t);
      mean_se += d.se[r];
      if (std::abs(d.est[r] - t) <= 1.959963984540054 * d.se[r]) hits += 1;
    }
    mean /= R;
    mse /= R;
    mean_se /= R;
    double var = 0;
    for (double e : d.est) var += (e - mean) * (e - mean);
    var /= static_cast<double>(R - 1);
    const double b = mean - t, s = std::sqrt(var);
    out.max_rmse_gap = std::max(out.max_rmse_gap,
                                std::abs(mse - b * b - var * (R - 1.0) / R));
    bias += 100.0 * b / t;
    sd += 100.0 * s / std::abs(t);
    rmse += 100.0 * std::sqrt(mse) / std::abs(t);
    cover += hits / R;
    if (s > 0) {
      ratio += mean_se / s;
      ++n_ratio;
    }
    ++n_firms;
  }
  if (n_firms > 0) {
    out.rel_bias = bias / n_firms;
    out.rel_sd = sd / n_firms;
    out.rel_rmse = rmse / n_firms;
    out.coverage = cover / n_firms;
  }
  out.se_sd = n_ratio > 0 ? ratio / n_ratio : std::nan("");
  return out;
}

}  // namespace

McSummary run_montecarlo(const McConfig& config) {
  config.validate();
  McSummary out;
  out.mode = config.mode;
  out.replications = config.replications;
  const int J0 = static_cast<int>(config.sim.groups.size());
  out.true_J = J0;
  const MomentSpec spec = simulation_spec();
  const int ib3 = spec.index(Param::Beta3), ib1 = spec.index(Param::Beta1);

  const std::size_t N = static_cast<std::size_t>(config.sim.N);
  std::vector<Draws> gamma(N), beta(N);
  std::vector<double> gamma_true(N), beta_true(N);
  for (const auto& p : config.penalties) out.penalties.push_back({p, 0, 0, 0, {}});

  for (int r = 0; r < config.replications; ++r) {
    SimConfig sc = config.sim;
    sc.seed = config.base_seed + static_cast<std::uint64_t>(r);
    try {
      auto sim = draw_panel(sc);
      EstimationData data(sim.panel, spec);
      CLassoConfig cc = config.classo;
      const double lambda =
          cc.lambda ? *cc.lambda : default_lambda(sim.panel, cc.lambda_exponent);
      if (config.mode == McMode::Selection) {
        auto cache = firmwise_estimates(data, cc);
        auto sel = select_J(data, lambda, config.J_values, config.penalties, cc, &cache);
        std::vector<int> picks;
        for (std::size_t p = 0; p < config.penalties.size(); ++p) picks.push_back(sel.best_J(p));
        for (std::size_t p = 0; p < picks.size(); ++p) out.penalties[p].selected.push_back(picks[p]);
        continue;
      }
      cc.J = J0;
      auto f = fit(data, cc, lambda);
      auto match = match_labels(f.classification.group, sim.group, J0);
      out.accuracy.push_back(match.accuracy);
      for (std::size_t i = 0; i < N; ++i) {
        const auto& g = config.sim.groups[sim.group[i]];
        gamma_true[i] = g.gamma;
        beta_true[i] = g.beta();
        const int est = f.classification.group[i];
        if (est == kUnclassified) continue;
        const auto& ge = f.estimates.groups[est];
        if (ge.theta.size() == 0) continue;
        gamma[i].est.push_back(ge.theta[ib3]);
        gamma[i].se.push_back(std::sqrt(std::max(ge.covariance(ib3, ib3), 0.0)));
        beta[i].est.push_back(ge.theta[ib1]);
        beta[i].se.push_back(std::sqrt(std::max(ge.covariance(ib1, ib1), 0.0)));
      }
      if (match.accuracy == 1.0) {
        auto oracle = fit_partition(data, sim.group, J0, cc.weighting);
        double gap = 0.0;
        for (int g = 0; g < J0; ++g) {
          const auto& a = f.estimates.groups[g].theta;
          const auto& b = oracle.estimates.groups[match.permutation[g]].theta;
          if (a.size() != b.size() || a.size() == 0) {
            gap = INFINITY;
            break;
          }
          gap = std::max(gap, (a - b).cwiseAbs().maxCoeff());
        }
        out.max_oracle_gap = std::max(out.max_oracle_gap, gap);
        ++out.perfect_replications;
      }
    } catch (const Error& e) {
      ++out.failed;
      out.failures.push_back("replication " + std::to_string(r) + ": " + e.what());
    }
  }

  if (config.mode == McMode::Selection) {
    for (auto& ps : out.penalties) {
      const double n = static_cast<double>(ps.selected.size());
      if (n == 0) continue;
      double sum = 0, eq = 0, ge = 0;
      for (int J : ps.selected) {
        sum += J;
        eq += (J == J0);
        ge += (J >= J0);
      }
      ps.mean_J = sum / n;
      ps.pr_equal = eq / n;
      ps.pr_at_least = ge / n;
    }
  } else {
    if (!out.accuracy.empty())
      out.mean_accuracy = std::accumulate(out.accuracy.begin(), out.accuracy.end(), 0.0) /
                          static_cast<double>(out.accuracy.size());
    out.params.push_back(summarize("gamma", gamma, gamma_true));
    out.params.push_back(summarize("beta", beta, beta_true));
  }
  return out;
}

std::string mc_summary_csv(const McSummary& s) {
  std::ostringstream os;
  if (s.mode == McMode::Selection) {
    os << "penalty,r,mean_J,pr_J_equal,pr_J_at_least,replications,failed\n";
    for (const auto& p : s.penalties)
      os << (p.penalty.form == PenaltyForm::P1 ? "p1" : "p2") << ','
         << format_double(p.penalty.r) << ',' << format_double(p.mean_J) << ','
         << format_double(p.pr_equal) << ',' << format_double(p.pr_at_least) << ','
         << s.replications << ',' << s.failed << '\n';
  } else {
    os << "parameter,accuracy,rel_bias_pct,rel_sd_pct,rel_rmse_pct,se_sd,coverage95,"
          "replications,failed\n";
    for (const auto& p : s.params)
      os << p.name << ',' << format_double(s.mean_accuracy) << ',' << format_double(p.rel_bias)
         << ',' << format_double(p.rel_sd) << ',' << format_double(p.rel_rmse) << ','
         << format_double(p.se_sd) << ',' << format_double(p.coverage) << ','
         << s.replications << ',' << s.failed << '\n';
  }
  return os.str();
}

std::string mc_summary_json(const McSummary& s) {
  auto num = [](double v) { return std::isfinite(v) ? json(v) : json(format_double(v)); };
  json j;
  j["mode"] = s.mode == McMode::Selection ? "selection" : "estimation";
  j["replications"] = s.replications;
  j["failed"] = s.failed;
  j["failures"] = s.failures;
  j["true_J"] = s.true_J;
  if (s.mode == McMode::Selection) {
    json ps = json::array();
    for (const auto& p : s.penalties)
      ps.push_back({{"penalty", p.penalty.label()},
                    {"mean_J", num(p.mean_J)},
                    {"pr_J_equal", num(p.pr_equal)},
                    {"pr_J_at_least", num(p.pr_at_least)},
                    {"selected", p.selected}});
    j["penalties"] = ps;
  } else {
    j["accuracy"] = s.accuracy;
    j["mean_accuracy"] = num(s.mean_accuracy);
    json ps = json::array();
    for (const auto& p : s.params)
      ps.push_back({{"parameter", p.name},
                    {"rel_bias_pct", num(p.rel_bias)},
                    {"rel_sd_pct", num(p.rel_sd)},
                    {"rel_rmse_pct", num(p.rel_rmse)},
                    {"se_sd", num(p.se_sd)},
                    {"coverage95", num(p.coverage)},
                    {"max_rmse_identity_gap", num(p.max_rmse_gap)}});
    j["parameters"] = ps;
    j["perfect_replications"] = s.perfect_replications;
    j["max_oracle_gap"] = num(s.max_oracle_gap);
    j["metadata"] = {{"se_sd_aggregation", "mean over firms of mean(SE)/sd"},
                     {"sd_denominator", "R - 1"},
                     {"coverage", "per firm, assigned group estimate and SE, then averaged"}};
  }
  return j.dump(2);
}

// ---------------------------------------------------------------------------

std::vector<int> FirmLabels::index() const {
  std::vector<int> out;
  out.reserve(label.size());
  for (const auto& l : label)
    out.push_back(static_cast<int>(std::lower_bound(levels.begin(), levels.end(), l) -
                                   levels.begin()));
  return out;
}

FirmLabels labels_from_column(const PanelData& panel, const std::string& column) {
  auto idx = panel.extra_index(column);
  if (!idx) fail(ErrorKind::Config, "panel has no column '" + column + "'");
  FirmLabels out;
  for (const auto& f : panel.firms()) out.label.push_back(f.extras[*idx].front());
  out.levels = out.label;
  std::sort(out.levels.begin(), out.levels.end());
  out.levels.erase(std::unique(out.levels.begin(), out.levels.end()), out.levels.end());
  return out;
}

std::map<std::string, std::string> labels_from_csv(const std::string& text,
                                                   const std::string& firm_column,
                                                   const std::string& label_column) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line)) fail(ErrorKind::Data, "label file is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  auto header = split_csv_line(line, ',');
  auto find = [&](const std::string& name) {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) fail(ErrorKind::Config, "label file has no column '" + name + "'");
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::size_t fc = find(firm_column), lc = find(label_column);
  std::map<std::string, std::string> out;
  std::size_t row = 1;
  while (std::getline(is, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto cells = split_csv_line(line, ',');
    if (cells.size() != header.size())
      fail(ErrorKind::Data, "label file row " + std::to_string(row) + " has " +
                                std::to_string(cells.size()) + " fields");
    out.emplace(cells[fc], cells[lc]);
  }
  return out;
}

PanelData with_firm_labels(const PanelData& panel, const std::string& column,
                           const std::vector<std::string>& labels) {
  if (labels.size() != panel.num_firms())
    fail(ErrorKind::Config, "one label per firm is required");
  if (panel.extra_index(column)) fail(ErrorKind::Config, "column '" + column + "' exists");
  std::vector<FirmSeries> firms = panel.firms();
  for (std::size_t i = 0; i < firms.size(); ++i)
    firms[i].extras.emplace_back(firms[i].size(), labels[i]);
  auto cols = panel.extra_columns();
  cols.push_back(column);
  return PanelData(std::move(firms), panel.has_labor(), panel.has_share(),
                   panel.prices_normalized(), std::move(cols));
}

int Crosstab::total() const {
  int t = 0;
  for (const auto& r : counts)
    for (int c : r) t += c;
  return t;
}

Crosstab crosstab(const std::vector<std::string>& firm_ids, const std::vector<int>& groups,
                  int num_groups, const std::map<std::string, std::string>& labels) {
  if (firm_ids.size() != groups.size()) fail(ErrorKind::Config, "ids and groups differ in size");
  Crosstab c;
  c.num_groups = num_groups;
  std::set<std::string> levels;
  for (const auto& [id, l] : labels) levels.insert(l);
  c.labels.assign(levels.begin(), levels.end());
  c.counts.assign(c.labels.size(), std::vector<int>(num_groups, 0));
  for (std::size_t i = 0; i < groups.size(); ++i) {
    if (groups[i] == kUnclassified) continue;
    if (groups[i] < 0 || groups[i] >= num_groups)
      fail(ErrorKind::Data, "group label out of range for firm " + firm_ids[i]);
    auto it = labels.find(firm_ids[i]);
    if (it == labels.end()) {
      ++c.unlabeled;
      continue;
    }
    const auto row = std::lower_bound(c.labels.begin(), c.labels.end(), it->second) -
                     c.labels.begin();
    ++c.counts[row][groups[i]];
  }
  return c;
}

std::string crosstab_csv(const Crosstab& c) {
  std::ostringstream os;
  os << "label";
  for (int j = 0; j < c.num_groups; ++j) os << ",group_" << (j + 1);
  os << ",total\n";
  std::vector<int> col(c.num_groups, 0);
  for (std::size_t r = 0; r < c.labels.size(); ++r) {
    os << c.labels[r];
    int row = 0;
    for (int j = 0; j < c.num_groups; ++j) {
      os << ',' << c.counts[r][j];
      row += c.counts[r][j];
      col[j] += c.counts[r][j];
    }
    os << ',' << row << '\n';
  }
  os << "total";
  for (int v : col) os << ',' << v;
  os << ',' << c.total() << '\n';
  return os.str();
}

FitComparison evaluate_fit(const EstimationData& data, const FitResult& fit) {
  if (!(fit.spec == data.spec))
    fail(ErrorKind::Config, "fit was estimated with a different moment specification");
  std::unordered_map<std::string, std::size_t> pos;
  for (std::size_t i = 0; i < fit.firm_ids.size(); ++i) pos.emplace(fit.firm_ids[i], i);
  FitComparison out;
  double ss = 0.0;
  for (std::size_t i = 0; i < data.num_firms(); ++i) {
    auto it = pos.find(data.firm_ids[i]);
    if (it == pos.end()) continue;
    const int g = fit.classification.group[it->second];
    if (g == kUnclassified) continue;
    const auto& theta = fit.estimates.groups[g].theta;
    if (theta.size() == 0) continue;
    for (const auto& row : data.rows[i]) {
      const double r = composite_residual(row, theta, data.spec);
      ss += r * r;
      ++out.residuals;
    }
  }
  if (out.residuals == 0) fail(ErrorKind::Data, "fit shares no classified firm with the panel");
  out.msr = ss / static_cast<double>(out.residuals);
  for (const auto& g : fit.estimates.groups)
    if (g.theta.size() > 0) ++out.groups;
  out.parameters = out.groups * data.spec.num_params();
  return out;
}

std::vector<TfpRow> tfp_levels(const PanelData& panel, const FitResult& fit) {
  std::unordered_map<std::string, std::size_t> pos;
  for (std::size_t i = 0; i < fit.firm_ids.size(); ++i) pos.emplace(fit.firm_ids[i], i);
  const int i1 = fit.spec.index(Param::Beta1), i2 = fit.spec.index(Param::Beta2),
            i3 = fit.spec.index(Param::Beta3);
  std::vector<TfpRow> out;
  for (const auto& f : panel.firms()) {
    auto it = pos.find(f.id);
    if (it == pos.end()) continue;
    const int g = fit.classification.group[it->second];
    if (g == kUnclassified) continue;
    const auto& th = fit.estimates.groups[g].theta;
    if (th.size() == 0)
      fail(ErrorKind::Data, "group " + std::to_string(g + 1) + " has no estimate");
    const double b1 = i1 >= 0 ? th[i1] : 0.0, b2 = i2 >= 0 ? th[i2] : 0.0,
                 b3 = i3 >= 0 ? th[i3] : 0.0;
    for (std::size_t t = 0; t < f.size(); ++t)
      out.push_back({f.id, f.first_period + static_cast<long>(t), g + 1,
                     std::exp(f.y[t] - b1 * f.k[t] - b2 * f.l[t] - b3 * f.m[t])});
  }
  return out;
}

std::string tfp_csv(const std::vector<TfpRow>& rows) {
  std::ostringstream os;
  os << "firm_id,period,group,tfp\n";
  for (const auto& r : rows)
    os << r.firm << ',' << r.period << ',' << r.group << ',' << format_double(r.tfp) << '\n';
  return os.str();
}

}  // namespace pfc
