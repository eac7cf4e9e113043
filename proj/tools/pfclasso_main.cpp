// Command-line driver over the C API.

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "pfclasso/pfclasso.h"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInternal = 1;
constexpr int kExitConfig = 2;
constexpr int kExitNumerical = 3;

struct CliError {
  int code;
  std::string message;
};

int exit_code(pfc_status s) {
  switch (s) {
    case PFC_OK: return kExitOk;
    case PFC_ERR_CONFIG:
    case PFC_ERR_IO:
    case PFC_ERR_DATA:
    case PFC_ERR_DOMAIN: return kExitConfig;
    case PFC_ERR_NUMERICAL: return kExitNumerical;
    default: return kExitInternal;
  }
}

void check(pfc_status s) {
  if (s != PFC_OK) throw CliError{exit_code(s), pfc_last_error()};
}

[[noreturn]] void config_error(const std::string& msg) { throw CliError{kExitConfig, msg}; }

// Owns a library-allocated string.
struct CString {
  char* p = nullptr;
  ~CString() { pfc_string_free(p); }
  std::string str() const { return p ? p : ""; }
};

template <class T, void (*Free)(T*)>
struct Handle {
  T* p = nullptr;
  Handle() = default;
  Handle(const Handle&) = delete;
  Handle& operator=(const Handle&) = delete;
  Handle(Handle&& o) noexcept : p(o.p) { o.p = nullptr; }
  ~Handle() { Free(p); }
};
using Panel = Handle<pfc_panel, pfc_panel_free>;
using Fit = Handle<pfc_fit, pfc_fit_free>;
using Selection = Handle<pfc_selection, pfc_selection_free>;
using Simulation = Handle<pfc_simulation, pfc_simulation_free>;

struct Globals {
  std::optional<std::uint64_t> seed;
  unsigned threads = 0;
  std::string out_dir = ".";
  std::string config_path;
};

// Sections of the --config file: schema, spec, classo, grid, penalties,
// sim, mc. A subcommand reads the ones it needs.
json load_config(const Globals& g) {
  if (g.config_path.empty()) return json::object();
  std::ifstream in(g.config_path);
  if (!in) config_error("cannot open config file " + g.config_path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    config_error("invalid JSON in " + g.config_path + ": " + e.what());
  }
  if (!j.is_object()) config_error("config file must hold a JSON object");
  static const std::vector<std::string> known{"schema", "spec",      "classo", "grid",
                                              "penalties", "sim", "mc"};
  for (auto it = j.begin(); it != j.end(); ++it)
    if (std::find(known.begin(), known.end(), it.key()) == known.end())
      config_error("unknown section '" + it.key() + "' in " + g.config_path);
  return j;
}

std::optional<std::string> section(const json& cfg, const char* key) {
  if (!cfg.contains(key)) return std::nullopt;
  return cfg[key].dump();
}

const char* cstr(const std::optional<std::string>& s) { return s ? s->c_str() : nullptr; }

std::string out_path(const Globals& g, const std::string& name) {
  fs::path dir(g.out_dir);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw CliError{kExitConfig, "cannot create output directory " + g.out_dir};
  return (dir / name).string();
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out || !(out << text)) throw CliError{kExitConfig, "cannot write " + path};
}

Panel load_panel(const std::string& path, const json& cfg) {
  auto schema = section(cfg, "schema");
  Panel p;
  check(pfc_panel_load_csv(path.c_str(), cstr(schema), &p.p));
  return p;
}

Fit load_fit(const std::string& path) {
  Fit f;
  check(pfc_fit_load_json(path.c_str(), &f.p));
  return f;
}

// classo section with command-line overrides applied.
std::string classo_json(const json& cfg, const Globals& g, std::optional<int> J,
                        std::optional<double> lambda) {
  json c = cfg.contains("classo") ? cfg["classo"] : json::object();
  if (g.seed) c["seed"] = *g.seed;
  if (J) c["J"] = *J;
  if (lambda) c["lambda"] = *lambda;
  return c.dump();
}

void cmd_simulate(const Globals& g, int N, int T, bool latent) {
  json cfg = load_config(g);
  json sim = cfg.contains("sim") ? cfg["sim"] : json::object();
  if (N > 0) sim["N"] = N;
  if (T > 0) sim["T"] = T;
  if (g.seed) sim["seed"] = *g.seed;
  const std::string text = sim.dump();
  Simulation s;
  check(pfc_simulate(text.c_str(), &s.p));
  const std::string prefix = out_path(g, "");
  check(pfc_simulation_write(s.p, prefix.c_str(), latent ? 1 : 0));
  std::cout << "wrote " << out_path(g, "panel.csv") << " and " << out_path(g, "truth.csv")
            << "\n";
}

void cmd_estimate(const Globals& g, const std::string& panel_path, std::optional<int> J,
                  std::optional<double> lambda, const std::string& partition_column,
                  const std::string& weighting) {
  json cfg = load_config(g);
  Panel panel = load_panel(panel_path, cfg);
  auto spec = section(cfg, "spec");
  Fit f;
  if (!partition_column.empty()) {
    check(pfc_fit_partition_column(panel.p, cstr(spec), partition_column.c_str(),
                                   weighting.c_str(), &f.p));
  } else {
    const std::string classo = classo_json(cfg, g, J, lambda);
    check(pfc_fit_run(panel.p, cstr(spec), classo.c_str(), &f.p));
  }
  CString js;
  check(pfc_fit_to_json(f.p, &js.p));
  write_text(out_path(g, "fit.json"), js.str() + "\n");
  check(pfc_fit_write_assignments(f.p, out_path(g, "assignments.csv").c_str()));
  check(pfc_fit_write_residuals(f.p, panel.p, out_path(g, "residuals.csv").c_str()));

  int groups = 0, P = 0;
  check(pfc_fit_num_groups(f.p, &groups));
  check(pfc_fit_num_params(f.p, &P));
  json parsed = json::parse(js.str());
  const auto& names = parsed["param_names"];
  for (int j = 1; j <= groups; ++j) {
    std::vector<double> theta(P);
    if (pfc_fit_group(f.p, j, theta.data(), nullptr) != PFC_OK) {
      std::cout << "group " << j << ": no estimate\n";
      continue;
    }
    std::cout << "group " << j << ":";
    for (int p = 0; p < P; ++p) std::cout << ' ' << names[p].get<std::string>() << '=' << theta[p];
    std::cout << '\n';
  }
}

void cmd_select(const Globals& g, const std::string& panel_path, std::vector<int> J_values,
                std::vector<double> a_values) {
  json cfg = load_config(g);
  Panel panel = load_panel(panel_path, cfg);
  json grid = cfg.contains("grid") ? cfg["grid"] : json::object();
  if (!J_values.empty()) grid["J_values"] = J_values;
  if (!a_values.empty()) grid["a_values"] = a_values;
  if (!grid.contains("J_values")) grid["J_values"] = {1, 2, 3, 4, 5};
  if (!grid.contains("a_values")) grid["a_values"] = {0.25};
  const std::string grid_text = grid.dump();
  const std::string classo = classo_json(cfg, g, std::nullopt, std::nullopt);
  auto spec = section(cfg, "spec");
  auto penalties = section(cfg, "penalties");
  Selection sel;
  check(pfc_select_run(panel.p, cstr(spec), classo.c_str(), grid_text.c_str(), cstr(penalties),
                       &sel.p));
  check(pfc_selection_write_surface(sel.p, out_path(g, "ic_surface.csv").c_str()));
  CString js;
  check(pfc_selection_to_json(sel.p, &js.p));
  write_text(out_path(g, "selection.json"), js.str() + "\n");
  for (const auto& b : json::parse(js.str())["best"]) {
    std::cout << b["penalty"].get<std::string>() << ": ";
    if (b["J"].is_null())
      std::cout << "no successful fit\n";
    else
      std::cout << "J=" << b["J"] << " lambda=" << b["lambda"] << " a=" << b["a"] << '\n';
  }
}

void cmd_montecarlo(const Globals& g, const std::string& mode, int reps, int N, int T) {
  json cfg = load_config(g);
  json mc = cfg.contains("mc") ? cfg["mc"] : json::object();
  if (!mode.empty()) mc["mode"] = mode;
  if (reps > 0) mc["replications"] = reps;
  if (g.seed) mc["base_seed"] = *g.seed;
  if (N > 0) mc["sim"]["N"] = N;
  if (T > 0) mc["sim"]["T"] = T;
  const std::string text = mc.dump();
  const std::string prefix = out_path(g, "mc_");
  CString js;
  check(pfc_montecarlo_run(text.c_str(), prefix.c_str(), &js.p));
  std::cout << js.str() << '\n';
}

void cmd_crosstab(const Globals& g, const std::string& assignments, const std::string& labels,
                  const std::string& firm_column, const std::string& label_column) {
  const std::string out = out_path(g, "crosstab.csv");
  check(pfc_crosstab(assignments.c_str(), labels.empty() ? nullptr : labels.c_str(),
                     firm_column.c_str(), label_column.c_str(), out.c_str()));
  std::ifstream in(out);
  std::cout << in.rdbuf();
}

void cmd_compare(const Globals& g, const std::string& panel_path,
                 const std::vector<std::string>& fit_paths) {
  json cfg = load_config(g);
  Panel panel = load_panel(panel_path, cfg);
  std::vector<Fit> fits;
  std::vector<const pfc_fit*> ptrs;
  for (const auto& p : fit_paths) {
    fits.push_back(load_fit(p));
    ptrs.push_back(fits.back().p);
  }
  CString js;
  check(pfc_compare_fits(panel.p, ptrs.data(), ptrs.size(), &js.p));
  json report = json::parse(js.str());
  for (std::size_t k = 0; k < fit_paths.size(); ++k) report["fits"][k]["path"] = fit_paths[k];
  write_text(out_path(g, "compare.json"), report.dump(2) + "\n");
  for (const auto& f : report["fits"])
    std::cout << f["path"].get<std::string>() << ": msr=" << f["msr"] << " groups=" << f["groups"]
              << " parameters=" << f["parameters"] << '\n';
}

void cmd_tfp(const Globals& g, const std::string& panel_path, const std::string& fit_path) {
  json cfg = load_config(g);
  Panel panel = load_panel(panel_path, cfg);
  Fit f = load_fit(fit_path);
  const std::string out = out_path(g, "tfp.csv");
  check(pfc_tfp_write(panel.p, f.p, out.c_str()));
  std::cout << "wrote " << out << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Grouped production-function estimation with classifier-Lasso GMM"};
  app.require_subcommand(1);
  Globals g;
  std::uint64_t seed = 0;
  auto* seed_opt = app.add_option("--seed", seed, "Random seed (overrides config)");
  app.add_option("--threads", g.threads, "Worker threads (0 = all cores)");
  app.add_option("--out-dir", g.out_dir, "Output directory");
  app.add_option("--config", g.config_path, "JSON config with optional sections "
                                            "schema, spec, classo, grid, penalties, sim, mc")
      ->check(CLI::ExistingFile);
  app.fallthrough();

  int sim_N = 0, sim_T = 0;
  bool latent = false;
  auto* sim = app.add_subcommand("simulate", "Draw a panel from the firm model");
  sim->add_option("--N", sim_N, "Number of firms");
  sim->add_option("--T", sim_T, "Periods after the initial one");
  sim->add_flag("--latent", latent, "Also write latent series");

  std::string panel_path, partition_column, weighting = "identity";
  std::optional<int> est_J;
  std::optional<double> est_lambda;
  auto* est = app.add_subcommand("estimate", "Fit classifier-Lasso GMM to a panel");
  est->add_option("--panel", panel_path, "Panel CSV")->required()->check(CLI::ExistingFile);
  est->add_option("--J", est_J, "Number of groups");
  est->add_option("--lambda", est_lambda, "Tuning parameter (default T^-a)");
  est->add_option("--partition-column", partition_column,
                  "Skip classification and fit groups given by this panel column");
  est->add_option("--weighting", weighting, "identity or two-step (partition fits)");

  std::vector<int> J_values;
  std::vector<double> a_values;
  auto* sel = app.add_subcommand("select", "Information-criterion surface over (lambda, J)");
  sel->add_option("--panel", panel_path, "Panel CSV")->required()->check(CLI::ExistingFile);
  sel->add_option("--J-values", J_values, "Candidate group counts");
  sel->add_option("--a-values", a_values, "Exponents a with lambda = T^-a");

  std::string mc_mode;
  int mc_reps = 0;
  auto* mc = app.add_subcommand("montecarlo", "Monte Carlo replications on simulated panels");
  mc->add_option("--mode", mc_mode, "selection or estimation");
  mc->add_option("--replications", mc_reps, "Number of replications");
  mc->add_option("--N", sim_N, "Number of firms");
  mc->add_option("--T", sim_T, "Periods after the initial one");

  std::string assignments, labels, firm_column = "firm_id", label_column;
  auto* ct = app.add_subcommand("crosstab", "Cross-tabulate estimated groups against labels");
  ct->add_option("--assignments", assignments, "Assignment CSV from estimate")
      ->required()
      ->check(CLI::ExistingFile);
  ct->add_option("--labels", labels, "CSV with firm labels (default: the assignment file)")
      ->check(CLI::ExistingFile);
  ct->add_option("--firm-column", firm_column, "Firm column in the label file");
  ct->add_option("--label-column", label_column, "Label column")->required();

  std::vector<std::string> fit_paths;
  auto* cmp = app.add_subcommand("compare-fits", "Mean squared residual of stored fits");
  cmp->add_option("--panel", panel_path, "Panel CSV")->required()->check(CLI::ExistingFile);
  cmp->add_option("--fit", fit_paths, "Fit JSON (repeatable)")
      ->required()
      ->check(CLI::ExistingFile);

  std::string fit_path;
  auto* tfp = app.add_subcommand("tfp", "TFP levels from a stored fit");
  tfp->add_option("--panel", panel_path, "Panel CSV")->required()->check(CLI::ExistingFile);
  tfp->add_option("--fit", fit_path, "Fit JSON")->required()->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }
  if (seed_opt->count()) g.seed = seed;

  try {
    check(pfc_set_threads(g.threads));
    if (*sim) cmd_simulate(g, sim_N, sim_T, latent);
    else if (*est) cmd_estimate(g, panel_path, est_J, est_lambda, partition_column, weighting);
    else if (*sel) cmd_select(g, panel_path, J_values, a_values);
    else if (*mc) cmd_montecarlo(g, mc_mode, mc_reps, sim_N, sim_T);
    else if (*ct) cmd_crosstab(g, assignments, labels, firm_column, label_column);
    else if (*cmp) cmd_compare(g, panel_path, fit_paths);
    else if (*tfp) cmd_tfp(g, panel_path, fit_path);
  } catch (const CliError& e) {
    std::cerr << "error: " << e.message << '\n';
    return e.code;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitInternal;
  }
  return kExitOk;
}
