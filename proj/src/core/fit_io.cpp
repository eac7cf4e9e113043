#include "core/fit_io.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "core/error.hpp"
#include "core/format.hpp"

namespace pfc {

using nlohmann::json;

namespace {

json parse(const std::string& text, const char* what) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    fail(ErrorKind::Config, std::string("invalid JSON in ") + what + ": " + e.what());
  }
}

void check_keys(const json& j, const std::set<std::string>& allowed, const char* what) {
  if (!j.is_object()) fail(ErrorKind::Config, std::string(what) + " must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!allowed.count(it.key()))
      fail(ErrorKind::Config, std::string("unknown key '") + it.key() + "' in " + what);
}

template <typename T>
T get(const json& j, const char* key, const char* what) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    fail(ErrorKind::Config, std::string("bad or missing '") + key + "' in " + what);
  }
}

template <typename T>
void maybe(const json& j, const char* key, T& out, const char* what) {
  if (j.contains(key) && !j.at(key).is_null()) out = get<T>(j, key, what);
}

// nlohmann writes non-finite numbers as null; keep them explicit.
json number(double v) {
  if (std::isfinite(v)) return v;
  return format_double(v);
}

double read_number(const json& j) {
  if (j.is_number()) return j.get<double>();
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "nan") return std::nan("");
    if (s == "inf") return INFINITY;
    if (s == "-inf") return -INFINITY;
  }
  if (j.is_null()) return std::nan("");
  fail(ErrorKind::Config, "expected a number in fit JSON");
}

json vector_json(const Eigen::VectorXd& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(number(v[i]));
  return a;
}

Eigen::VectorXd vector_from(const json& a) {
  Eigen::VectorXd v(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) v[i] = read_number(a[i]);
  return v;
}

json spec_json(const MomentSpec& s) {
  std::string st = s.strategy() == Strategy::GNR   ? "gnr"
                   : s.strategy() == Strategy::ACF ? "acf"
                                                   : "dynpanel";
  return {{"strategy", st}, {"ar1_intercept", s.ar1_intercept()}, {"labor", s.labor()}};
}

MomentSpec spec_from(const json& j) {
  check_keys(j, {"strategy", "ar1_intercept", "labor"}, "moment spec");
  const auto strategy = strategy_from_string(get<std::string>(j, "strategy", "moment spec"));
  bool intercept = false, labor = true;
  maybe(j, "ar1_intercept", intercept, "moment spec");
  maybe(j, "labor", labor, "moment spec");
  return MomentSpec(strategy, intercept, labor);
}

json classo_json(const CLassoConfig& c) {
  json j = {{"J", c.J},
            {"lambda_exponent", c.lambda_exponent},
            {"outer_tol", c.outer_tol},
            {"inner_tol", c.inner_tol},
            {"max_outer", c.max_outer},
            {"max_inner", c.max_inner},
            {"weighting", to_string(c.weighting)},
            {"multistart", c.multistart},
            {"multistart_scale", c.multistart_scale},
            {"seed", c.seed}};
  j["lambda"] = c.lambda ? json(*c.lambda) : json(nullptr);
  j["classification_threshold"] =
      c.classification_threshold ? json(*c.classification_threshold) : json(nullptr);
  return j;
}

CLassoConfig classo_from(const json& j) {
  const char* w = "classo config";
  check_keys(j,
             {"J", "lambda", "lambda_exponent", "outer_tol", "inner_tol", "max_outer",
              "max_inner", "classification_threshold", "weighting", "multistart",
              "multistart_scale", "seed"},
             w);
  CLassoConfig c;
  maybe(j, "J", c.J, w);
  if (j.contains("lambda") && !j["lambda"].is_null()) c.lambda = get<double>(j, "lambda", w);
  maybe(j, "lambda_exponent", c.lambda_exponent, w);
  maybe(j, "outer_tol", c.outer_tol, w);
  maybe(j, "inner_tol", c.inner_tol, w);
  maybe(j, "max_outer", c.max_outer, w);
  maybe(j, "max_inner", c.max_inner, w);
  if (j.contains("classification_threshold") && !j["classification_threshold"].is_null())
    c.classification_threshold = get<double>(j, "classification_threshold", w);
  if (j.contains("weighting")) c.weighting = weighting_from_string(get<std::string>(j, "weighting", w));
  maybe(j, "multistart", c.multistart, w);
  maybe(j, "multistart_scale", c.multistart_scale, w);
  maybe(j, "seed", c.seed, w);
  c.validate();
  return c;
}

}  // namespace

MomentSpec spec_from_json(const std::string& text) { return spec_from(parse(text, "moment spec")); }
std::string spec_to_json(const MomentSpec& spec) { return spec_json(spec).dump(); }

CLassoConfig classo_config_from_json(const std::string& text) {
  return classo_from(parse(text, "classo config"));
}
std::string classo_config_to_json(const CLassoConfig& c) { return classo_json(c).dump(2); }

SimConfig sim_config_from_json(const std::string& text) {
  const char* w = "simulation config";
  auto j = parse(text, w);
  check_keys(j, {"groups", "b", "d", "N", "T", "burn_in", "series_terms", "seed"}, w);
  SimConfig c = SimConfig::standard();
  maybe(j, "b", c.b, w);
  maybe(j, "d", c.d, w);
  maybe(j, "N", c.N, w);
  maybe(j, "T", c.T, w);
  maybe(j, "burn_in", c.burn_in, w);
  maybe(j, "series_terms", c.series_terms, w);
  maybe(j, "seed", c.seed, w);
  if (j.contains("groups")) {
    if (!j["groups"].is_array()) fail(ErrorKind::Config, "'groups' must be an array");
    c.groups.clear();
    for (const auto& g : j["groups"]) {
      const char* gw = "simulation group";
      check_keys(g, {"share", "gamma", "sigma_eps", "alpha", "delta", "sigma_eta"}, gw);
      GroupParams p;
      p.share = get<double>(g, "share", gw);
      p.gamma = get<double>(g, "gamma", gw);
      maybe(g, "sigma_eps", p.sigma_eps, gw);
      maybe(g, "alpha", p.alpha, gw);
      maybe(g, "delta", p.delta, gw);
      maybe(g, "sigma_eta", p.sigma_eta, gw);
      c.groups.push_back(p);
    }
  }
  c.validate();
  return c;
}

std::string sim_config_to_json(const SimConfig& c) {
  json groups = json::array();
  for (const auto& g : c.groups)
    groups.push_back({{"share", g.share},
                      {"gamma", g.gamma},
                      {"sigma_eps", g.sigma_eps},
                      {"alpha", g.alpha},
                      {"delta", g.delta},
                      {"sigma_eta", g.sigma_eta}});
  json j = {{"groups", groups}, {"b", c.b},           {"d", c.d},
            {"N", c.N},         {"T", c.T},           {"burn_in", c.burn_in},
            {"series_terms", c.series_terms}, {"seed", c.seed}};
  return j.dump(2);
}

CsvSchema schema_from_json(const std::string& text) {
  const char* w = "CSV schema";
  auto j = parse(text, w);
  check_keys(j, {"firm", "period", "y", "k", "l", "m", "s", "delimiter", "prices_normalized"}, w);
  CsvSchema s;
  maybe(j, "firm", s.firm, w);
  maybe(j, "period", s.period, w);
  maybe(j, "y", s.y, w);
  maybe(j, "k", s.k, w);
  maybe(j, "l", s.l, w);
  maybe(j, "m", s.m, w);
  maybe(j, "s", s.s, w);
  maybe(j, "prices_normalized", s.prices_normalized, w);
  if (j.contains("delimiter")) {
    auto d = get<std::string>(j, "delimiter", w);
    if (d == "\\t" || d == "tab") d = "\t";
    if (d.size() != 1) fail(ErrorKind::Config, "delimiter must be a single character");
    s.delimiter = d[0];
  }
  return s;
}

SelectionGrid grid_from_json(const std::string& text) {
  const char* w = "selection grid";
  auto j = parse(text, w);
  check_keys(j, {"J_values", "a_values"}, w);
  SelectionGrid g;
  g.J_values = get<std::vector<int>>(j, "J_values", w);
  g.a_values = get<std::vector<double>>(j, "a_values", w);
  g.validate();
  return g;
}

std::vector<PenaltySpec> penalties_from_json(const std::string& text) {
  const char* w = "penalty list";
  auto j = parse(text, w);
  if (!j.is_array()) fail(ErrorKind::Config, "penalties must be a JSON array");
  std::vector<PenaltySpec> out;
  for (const auto& p : j) {
    check_keys(p, {"form", "r"}, w);
    out.push_back(penalty_from_string(get<std::string>(p, "form", w), get<double>(p, "r", w)));
  }
  if (out.empty()) fail(ErrorKind::Config, "penalty list is empty");
  return out;
}

std::string fit_to_json(const FitResult& fit) {
  json j;
  j["config"] = classo_json(fit.config);
  j["config"]["spec"] = spec_json(fit.spec);
  j["lambda"] = number(fit.lambda);
  j["param_names"] = fit.spec.param_names();
  json groups = json::array();
  for (std::size_t g = 0; g < fit.estimates.groups.size(); ++g) {
    const auto& ge = fit.estimates.groups[g];
    json o = {{"group", g + 1},
              {"members", ge.members.size()},
              {"converged", ge.converged},
              {"empty", ge.empty},
              {"underidentified", ge.underidentified},
              {"covariance_pseudo_inverse", ge.covariance_pseudo_inverse}};
    if (ge.theta.size() > 0) {
      o["theta"] = vector_json(ge.theta);
      o["objective"] = number(ge.objective);
      Eigen::VectorXd se = ge.covariance.diagonal().cwiseMax(0.0).cwiseSqrt();
      o["se"] = vector_json(se);
      json cov = json::array();
      for (Eigen::Index r = 0; r < ge.covariance.rows(); ++r)
        cov.push_back(vector_json(ge.covariance.row(r).transpose()));
      o["covariance"] = cov;
    } else {
      o["theta"] = nullptr;
    }
    groups.push_back(o);
  }
  j["groups"] = groups;
  json assign = json::array();
  const auto& cls = fit.classification;
  for (std::size_t i = 0; i < cls.group.size(); ++i) {
    json a = {{"firm_id", fit.firm_ids.at(i)}, {"distance", number(cls.distance[i])}};
    a["group"] = cls.group[i] == kUnclassified ? json(nullptr) : json(cls.group[i] + 1);
    assign.push_back(a);
  }
  j["assignments"] = assign;
  json trace = json::array();
  for (double v : fit.outer_trace) trace.push_back(number(v));
  j["outer_trace"] = trace;
  j["outer_iterations"] = fit.outer_iterations;
  j["converged"] = fit.converged;
  j["warnings"] = fit.warnings;
  return j.dump(2);
}

FitResult fit_from_json(const std::string& text) {
  auto j = parse(text, "fit");
  FitResult fit;
  try {
    json cfg = j.at("config");
    fit.spec = spec_from(cfg.at("spec"));
    cfg.erase("spec");
    fit.config = classo_from(cfg);
    fit.lambda = read_number(j.at("lambda"));
    const int P = fit.spec.num_params();
    for (const auto& g : j.at("groups")) {
      GroupEstimate ge;
      ge.converged = g.value("converged", false);
      ge.empty = g.value("empty", false);
      ge.underidentified = g.value("underidentified", false);
      ge.covariance_pseudo_inverse = g.value("covariance_pseudo_inverse", false);
      if (!g.at("theta").is_null()) {
        ge.theta = vector_from(g.at("theta"));
        if (ge.theta.size() != P) fail(ErrorKind::Config, "fit JSON: theta has the wrong length");
        ge.objective = read_number(g.at("objective"));
        ge.covariance.resize(P, P);
        const auto& cov = g.at("covariance");
        for (int r = 0; r < P; ++r) ge.covariance.row(r) = vector_from(cov.at(r)).transpose();
      }
      fit.estimates.groups.push_back(ge);
    }
    fit.classification.num_groups = static_cast<int>(fit.estimates.groups.size());
    for (const auto& a : j.at("assignments")) {
      fit.firm_ids.push_back(a.at("firm_id").get<std::string>());
      const auto& g = a.at("group");
      const int grp = g.is_null() ? kUnclassified : g.get<int>() - 1;
      if (grp != kUnclassified && (grp < 0 || grp >= fit.classification.num_groups))
        fail(ErrorKind::Config, "fit JSON: group label out of range");
      fit.classification.group.push_back(grp);
      fit.classification.distance.push_back(read_number(a.at("distance")));
    }
    for (std::size_t i = 0; i < fit.classification.group.size(); ++i) {
      const int g = fit.classification.group[i];
      if (g != kUnclassified) fit.estimates.groups[g].members.push_back(i);
    }
    for (const auto& v : j.at("outer_trace")) fit.outer_trace.push_back(read_number(v));
    fit.outer_iterations = j.value("outer_iterations", 0);
    fit.converged = j.value("converged", false);
    if (j.contains("warnings")) fit.warnings = j["warnings"].get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    fail(ErrorKind::Config, std::string("malformed fit JSON: ") + e.what());
  }
  return fit;
}

std::string assignments_csv(const FitResult& fit) {
  std::ostringstream os;
  os << "firm_id,group,distance\n";
  const auto& cls = fit.classification;
  for (std::size_t i = 0; i < cls.group.size(); ++i) {
    os << fit.firm_ids.at(i) << ',';
    if (cls.group[i] != kUnclassified) os << cls.group[i] + 1;
    os << ',' << format_double(cls.distance[i]) << '\n';
  }
  return os.str();
}

std::string residuals_csv(const FitResult& fit, const EstimationData& data) {
  if (fit.classification.group.size() != data.num_firms())
    fail(ErrorKind::Config, "fit and panel have different firm counts");
  std::ostringstream os;
  os << "firm_id,period,group," << data.spec.residual_name() << '\n';
  for (std::size_t i = 0; i < data.num_firms(); ++i) {
    const int g = fit.classification.group[i];
    if (g == kUnclassified) continue;
    const auto& theta = fit.estimates.groups[g].theta;
    if (theta.size() == 0) continue;
    for (const auto& row : data.rows[i])
      os << data.firm_ids[i] << ',' << row.period << ',' << g + 1 << ','
         << format_double(composite_residual(row, theta, data.spec)) << '\n';
  }
  return os.str();
}

std::string read_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(ErrorKind::Io, "cannot open " + path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream os(path, std::ios::binary);
  if (!os) fail(ErrorKind::Io, "cannot write " + path);
  os << content;
  if (!os) fail(ErrorKind::Io, "failed writing " + path);
}

}  // namespace pfc
