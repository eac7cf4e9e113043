#include "pfclasso/pfclasso.h"

#include <json.hpp>

#include <cstdlib>
#include <cstring>
#include <memory>
#include <new>
#include <optional>
#include <string>
#include <utility>

#include "core/classo.hpp"
#include "core/error.hpp"
#include "core/fit_io.hpp"
#include "core/panel.hpp"
#include "core/parallel.hpp"
#include "core/pipeline.hpp"
#include "core/selection.hpp"
#include "core/simulate.hpp"

struct pfc_panel {
  pfc::PanelData data;
};

struct pfc_fit {
  pfc::FitResult result;
};

struct pfc_selection {
  pfc::SelectionResult result;
};

struct pfc_simulation {
  pfc::SimulatedPanel sim;
  pfc_panel view;
};

namespace {

thread_local std::string g_last_error;

pfc_status status_of(pfc::ErrorKind k) {
  switch (k) {
    case pfc::ErrorKind::Config: return PFC_ERR_CONFIG;
    case pfc::ErrorKind::Io: return PFC_ERR_IO;
    case pfc::ErrorKind::Data: return PFC_ERR_DATA;
    case pfc::ErrorKind::Domain: return PFC_ERR_DOMAIN;
    case pfc::ErrorKind::Numerical: return PFC_ERR_NUMERICAL;
  }
  return PFC_ERR_INTERNAL;
}

template <class F>
pfc_status guard(F&& f) {
  g_last_error.clear();
  try {
    f();
    return PFC_OK;
  } catch (const pfc::Error& e) {
    g_last_error = e.what();
    return status_of(e.kind());
  } catch (const nlohmann::json::exception& e) {
    g_last_error = std::string("invalid JSON: ") + e.what();
    return PFC_ERR_CONFIG;
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return PFC_ERR_INTERNAL;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return PFC_ERR_INTERNAL;
  } catch (...) {
    g_last_error = "unknown error";
    return PFC_ERR_INTERNAL;
  }
}

void need(const void* p, const char* what) {
  if (!p) pfc::fail(pfc::ErrorKind::Config, std::string(what) + " must not be NULL");
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

// Missing fields default to GNR with an AR(1) constant; labor follows the panel.
pfc::MomentSpec spec_for(const pfc::PanelData& panel, const char* text) {
  nlohmann::json j = text ? nlohmann::json::parse(text) : nlohmann::json::object();
  if (!j.is_object()) pfc::fail(pfc::ErrorKind::Config, "moment spec must be a JSON object");
  if (!j.contains("strategy")) j["strategy"] = "gnr";
  if (!j.contains("ar1_intercept")) j["ar1_intercept"] = true;
  if (!j.contains("labor")) j["labor"] = panel.has_labor();
  return pfc::spec_from_json(j.dump());
}

pfc::CLassoConfig classo_or_default(const char* json) {
  return json ? pfc::classo_config_from_json(json) : pfc::CLassoConfig();
}

pfc::WeightingScheme weighting_or_default(const char* w) {
  return w ? pfc::weighting_from_string(w) : pfc::WeightingScheme::Identity;
}

std::vector<pfc::PenaltySpec> default_penalties() {
  return {{pfc::PenaltyForm::P1, 1.0}, {pfc::PenaltyForm::P2, 0.25}};
}

const pfc::GroupEstimate& group_at(const pfc::FitResult& f, int group) {
  if (group < 1 || group > static_cast<int>(f.estimates.groups.size()))
    pfc::fail(pfc::ErrorKind::Config, "group index out of range");
  return f.estimates.groups[group - 1];
}

}  // namespace

extern "C" {

const char* pfc_last_error(void) { return g_last_error.c_str(); }

void pfc_string_free(char* s) { std::free(s); }

const char* pfc_version(void) { return "1.0.0"; }

pfc_status pfc_set_threads(unsigned n) {
  return guard([&] { pfc::set_num_threads(n); });
}

pfc_status pfc_panel_load_csv(const char* path, const char* schema_json, pfc_panel** out) {
  return guard([&] {
    need(path, "path");
    need(out, "out");
    pfc::CsvSchema schema = schema_json ? pfc::schema_from_json(schema_json) : pfc::CsvSchema{};
    *out = new pfc_panel{pfc::load_csv(path, schema)};
  });
}

pfc_status pfc_panel_write_csv(const pfc_panel* panel, const char* path) {
  return guard([&] {
    need(panel, "panel");
    need(path, "path");
    pfc::write_csv(panel->data, path);
  });
}

pfc_status pfc_panel_info(const pfc_panel* panel, char** json_out) {
  return guard([&] {
    need(panel, "panel");
    need(json_out, "json_out");
    const auto& p = panel->data;
    nlohmann::json j = {{"firms", p.num_firms()},
                        {"observations", p.num_observations()},
                        {"usable_rows", p.num_usable_rows()},
                        {"mean_usable_periods", p.mean_usable_periods()},
                        {"balanced", p.balanced()},
                        {"has_labor", p.has_labor()},
                        {"has_share", p.has_share()},
                        {"extra_columns", p.extra_columns()}};
    *json_out = dup_string(j.dump(2));
  });
}

pfc_status pfc_panel_subset_balanced(const pfc_panel* panel, long t0, long t1,
                                     pfc_panel** out) {
  return guard([&] {
    need(panel, "panel");
    need(out, "out");
    *out = new pfc_panel{pfc::subset_balanced(panel->data, t0, t1)};
  });
}

void pfc_panel_free(pfc_panel* panel) { delete panel; }

pfc_status pfc_simulate(const char* sim_json, pfc_simulation** out) {
  return guard([&] {
    need(out, "out");
    pfc::SimConfig cfg = sim_json ? pfc::sim_config_from_json(sim_json)
                                  : pfc::SimConfig::standard();
    auto sim = pfc::draw_panel(cfg);
    pfc::PanelData copy = sim.panel;
    *out = new pfc_simulation{std::move(sim), pfc_panel{std::move(copy)}};
  });
}

pfc_status pfc_simulation_panel(const pfc_simulation* sim, const pfc_panel** out) {
  return guard([&] {
    need(sim, "simulation");
    need(out, "out");
    *out = &sim->view;
  });
}

pfc_status pfc_simulation_write(const pfc_simulation* sim, const char* prefix, int latent) {
  return guard([&] {
    need(sim, "simulation");
    need(prefix, "prefix");
    const std::string p = prefix;
    pfc::write_csv(sim->sim.panel, p + "panel.csv");
    pfc::write_truth_csv(sim->sim, p + "truth.csv");
    if (latent) pfc::write_latent_csv(sim->sim, p + "latent.csv");
  });
}

pfc_status pfc_simulation_groups(const pfc_simulation* sim, int* groups, size_t n) {
  return guard([&] {
    need(sim, "simulation");
    need(groups, "groups");
    if (n != sim->sim.group.size())
      pfc::fail(pfc::ErrorKind::Config, "buffer length differs from the number of firms");
    for (size_t i = 0; i < n; ++i) groups[i] = sim->sim.group[i] + 1;
  });
}

void pfc_simulation_free(pfc_simulation* sim) { delete sim; }

pfc_status pfc_fit_run(const pfc_panel* panel, const char* spec_json, const char* classo_json,
                       pfc_fit** out) {
  return guard([&] {
    need(panel, "panel");
    need(out, "out");
    auto spec = spec_for(panel->data, spec_json);
    auto cfg = classo_or_default(classo_json);
    *out = new pfc_fit{pfc::fit(panel->data, cfg, spec)};
  });
}

pfc_status pfc_fit_partition(const pfc_panel* panel, const char* spec_json, const int* groups,
                             size_t n, int num_groups, const char* weighting, pfc_fit** out) {
  return guard([&] {
    need(panel, "panel");
    need(groups, "groups");
    need(out, "out");
    if (n != panel->data.num_firms())
      pfc::fail(pfc::ErrorKind::Config, "partition length differs from the number of firms");
    if (num_groups < 1) pfc::fail(pfc::ErrorKind::Config, "num_groups must be >= 1");
    std::vector<int> g(n);
    for (size_t i = 0; i < n; ++i) {
      if (groups[i] < 0 || groups[i] > num_groups)
        pfc::fail(pfc::ErrorKind::Config, "partition label out of range");
      g[i] = groups[i] == 0 ? pfc::kUnclassified : groups[i] - 1;
    }
    pfc::EstimationData data(panel->data, spec_for(panel->data, spec_json));
    *out = new pfc_fit{pfc::fit_partition(data, g, num_groups, weighting_or_default(weighting))};
  });
}

pfc_status pfc_fit_partition_column(const pfc_panel* panel, const char* spec_json,
                                    const char* column, const char* weighting, pfc_fit** out) {
  return guard([&] {
    need(panel, "panel");
    need(column, "column");
    need(out, "out");
    auto labels = pfc::labels_from_column(panel->data, column);
    pfc::EstimationData data(panel->data, spec_for(panel->data, spec_json));
    *out = new pfc_fit{pfc::fit_partition(data, labels.index(),
                                          static_cast<int>(labels.levels.size()),
                                          weighting_or_default(weighting))};
  });
}

pfc_status pfc_fit_load_json(const char* path, pfc_fit** out) {
  return guard([&] {
    need(path, "path");
    need(out, "out");
    *out = new pfc_fit{pfc::fit_from_json(pfc::read_file(path))};
  });
}

pfc_status pfc_fit_to_json(const pfc_fit* fit, char** json_out) {
  return guard([&] {
    need(fit, "fit");
    need(json_out, "json_out");
    *json_out = dup_string(pfc::fit_to_json(fit->result));
  });
}

pfc_status pfc_fit_write_assignments(const pfc_fit* fit, const char* path) {
  return guard([&] {
    need(fit, "fit");
    need(path, "path");
    pfc::write_file(path, pfc::assignments_csv(fit->result));
  });
}

pfc_status pfc_fit_write_residuals(const pfc_fit* fit, const pfc_panel* panel,
                                   const char* path) {
  return guard([&] {
    need(fit, "fit");
    need(panel, "panel");
    need(path, "path");
    pfc::EstimationData data(panel->data, fit->result.spec);
    pfc::write_file(path, pfc::residuals_csv(fit->result, data));
  });
}

pfc_status pfc_fit_num_groups(const pfc_fit* fit, int* out) {
  return guard([&] {
    need(fit, "fit");
    need(out, "out");
    *out = static_cast<int>(fit->result.estimates.groups.size());
  });
}

pfc_status pfc_fit_num_params(const pfc_fit* fit, int* out) {
  return guard([&] {
    need(fit, "fit");
    need(out, "out");
    *out = fit->result.spec.num_params();
  });
}

pfc_status pfc_fit_group(const pfc_fit* fit, int group, double* theta, double* covariance) {
  return guard([&] {
    need(fit, "fit");
    const auto& g = group_at(fit->result, group);
    const int P = fit->result.spec.num_params();
    if (g.theta.size() != P)
      pfc::fail(pfc::ErrorKind::Numerical, "group " + std::to_string(group) + " has no estimate");
    if (theta)
      for (int p = 0; p < P; ++p) theta[p] = g.theta[p];
    if (covariance)
      for (int r = 0; r < P; ++r)
        for (int c = 0; c < P; ++c) covariance[r * P + c] = g.covariance(r, c);
  });
}

pfc_status pfc_fit_assignments(const pfc_fit* fit, int* groups, size_t n) {
  return guard([&] {
    need(fit, "fit");
    need(groups, "groups");
    const auto& g = fit->result.classification.group;
    if (n != g.size())
      pfc::fail(pfc::ErrorKind::Config, "buffer length differs from the number of firms");
    for (size_t i = 0; i < n; ++i) groups[i] = g[i] == pfc::kUnclassified ? 0 : g[i] + 1;
  });
}

void pfc_fit_free(pfc_fit* fit) { delete fit; }

pfc_status pfc_select_run(const pfc_panel* panel, const char* spec_json, const char* classo_json,
                          const char* grid_json, const char* penalties_json,
                          pfc_selection** out) {
  return guard([&] {
    need(panel, "panel");
    need(grid_json, "grid_json");
    need(out, "out");
    auto cfg = classo_or_default(classo_json);
    auto grid = pfc::grid_from_json(grid_json);
    auto penalties = penalties_json ? pfc::penalties_from_json(penalties_json)
                                    : default_penalties();
    pfc::EstimationData data(panel->data, spec_for(panel->data, spec_json));
    *out = new pfc_selection{pfc::select_joint(data, grid, penalties, cfg)};
  });
}

pfc_status pfc_selection_best(const pfc_selection* sel, size_t penalty, double* lambda, int* J) {
  return guard([&] {
    need(sel, "selection");
    const auto& r = sel->result;
    if (penalty >= r.penalties.size())
      pfc::fail(pfc::ErrorKind::Config, "penalty index out of range");
    if (r.best[penalty] < 0)
      pfc::fail(pfc::ErrorKind::Numerical, "every fit in the selection grid failed");
    if (lambda) *lambda = r.best_lambda(penalty);
    if (J) *J = r.best_J(penalty);
  });
}

pfc_status pfc_selection_write_surface(const pfc_selection* sel, const char* path) {
  return guard([&] {
    need(sel, "selection");
    need(path, "path");
    pfc::write_file(path, pfc::surface_csv(sel->result));
  });
}

pfc_status pfc_selection_to_json(const pfc_selection* sel, char** json_out) {
  return guard([&] {
    need(sel, "selection");
    need(json_out, "json_out");
    const auto& r = sel->result;
    nlohmann::json best = nlohmann::json::array();
    for (std::size_t p = 0; p < r.penalties.size(); ++p) {
      nlohmann::json b = {{"penalty", r.penalties[p].label()}};
      if (r.best[p] >= 0) {
        const auto& row = r.rows[r.best[p]];
        b["a"] = row.a;
        b["lambda"] = row.lambda;
        b["J"] = row.J;
        b["ic"] = row.ic[p];
      } else {
        b["J"] = nullptr;
      }
      best.push_back(b);
    }
    nlohmann::json j = {{"best", best}, {"rows", r.rows.size()}, {"warnings", r.warnings}};
    *json_out = dup_string(j.dump(2));
  });
}

void pfc_selection_free(pfc_selection* sel) { delete sel; }

pfc_status pfc_montecarlo_run(const char* mc_json, const char* prefix, char** summary_json_out) {
  return guard([&] {
    need(mc_json, "mc_json");
    auto cfg = pfc::mc_config_from_json(mc_json);
    auto summary = pfc::run_montecarlo(cfg);
    auto js = pfc::mc_summary_json(summary);
    if (prefix) {
      const std::string p = prefix;
      pfc::write_file(p + "summary.csv", pfc::mc_summary_csv(summary));
      pfc::write_file(p + "summary.json", js);
    }
    if (summary_json_out) *summary_json_out = dup_string(js);
  });
}

pfc_status pfc_crosstab(const char* assignments_path, const char* labels_path,
                        const char* firm_column, const char* label_column, const char* out_path) {
  return guard([&] {
    need(assignments_path, "assignments_path");
    need(label_column, "label_column");
    need(out_path, "out_path");
    const std::string firm_col = firm_column ? firm_column : "firm_id";
    const std::string assign_text = pfc::read_file(assignments_path);
    auto groups_by_firm = pfc::labels_from_csv(assign_text, "firm_id", "group");
    auto labels = labels_path
                      ? pfc::labels_from_csv(pfc::read_file(labels_path), firm_col, label_column)
                      : pfc::labels_from_csv(assign_text, "firm_id", label_column);
    std::vector<std::string> ids;
    std::vector<int> groups;
    int J = 0;
    for (const auto& [id, g] : groups_by_firm) {
      ids.push_back(id);
      if (g.empty()) {
        groups.push_back(pfc::kUnclassified);
        continue;
      }
      int v = 0;
      try {
        std::size_t used = 0;
        v = std::stoi(g, &used);
        if (used != g.size()) throw std::invalid_argument(g);
      } catch (const std::exception&) {
        pfc::fail(pfc::ErrorKind::Data, "non-integer group '" + g + "' for firm " + id);
      }
      if (v < 1) pfc::fail(pfc::ErrorKind::Data, "group labels must be >= 1 (firm " + id + ")");
      groups.push_back(v - 1);
      J = std::max(J, v);
    }
    auto table = pfc::crosstab(ids, groups, J, labels);
    pfc::write_file(out_path, pfc::crosstab_csv(table));
  });
}

pfc_status pfc_compare_fits(const pfc_panel* panel, const pfc_fit* const* fits, size_t count,
                            char** json_out) {
  return guard([&] {
    need(panel, "panel");
    need(fits, "fits");
    need(json_out, "json_out");
    if (count == 0) pfc::fail(pfc::ErrorKind::Config, "no fits to compare");
    nlohmann::json arr = nlohmann::json::array();
    std::optional<pfc::EstimationData> data;
    for (size_t k = 0; k < count; ++k) {
      need(fits[k], "fit");
      const auto& f = fits[k]->result;
      if (!data || !(data->spec == f.spec)) data.emplace(panel->data, f.spec);
      auto c = pfc::evaluate_fit(*data, f);
      arr.push_back({{"msr", c.msr},
                     {"residuals", c.residuals},
                     {"groups", c.groups},
                     {"parameters", c.parameters}});
    }
    *json_out = dup_string(nlohmann::json{{"fits", arr}}.dump(2));
  });
}

pfc_status pfc_tfp_write(const pfc_panel* panel, const pfc_fit* fit, const char* path) {
  return guard([&] {
    need(panel, "panel");
    need(fit, "fit");
    need(path, "path");
    pfc::write_file(path, pfc::tfp_csv(pfc::tfp_levels(panel->data, fit->result)));
  });
}

}  // extern "C"
