#include "core/selection.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "core/error.hpp"
#include "core/format.hpp"

namespace pfc {

double PenaltySpec::value(double N, double T) const {
  if (form == PenaltyForm::P1) return r / std::sqrt(N * T);
  return r * std::log(std::log(T)) / T;
}

std::string PenaltySpec::label() const {
  return std::string(form == PenaltyForm::P1 ? "p1" : "p2") + "(r=" + format_double(r) + ")";
}

PenaltySpec penalty_from_string(const std::string& form, double r) {
  if (!(r > 0.0) || !std::isfinite(r)) fail(ErrorKind::Config, "penalty factor r must be > 0");
  if (form == "p1") return {PenaltyForm::P1, r};
  if (form == "p2") return {PenaltyForm::P2, r};
  fail(ErrorKind::Config, "unknown penalty form '" + form + "' (expected p1 or p2)");
}

IcValue information_criterion(const GroupEstimates& estimates, int J, double N, double T,
                              int P, const PenaltySpec& penalty) {
  IcValue out;
  out.count = estimates.residual_count();
  if (out.count == 0) fail(ErrorKind::Numerical, "information criterion without residuals");
  out.msr = estimates.residual_sum_squares() / static_cast<double>(out.count);
  const double pen = J * P * penalty.value(N, T);
  if (out.msr == 0.0) {
    out.zero_residuals = true;
    out.value = -std::numeric_limits<double>::infinity();
  } else {
    out.value = std::log(out.msr) + pen;
  }
  return out;
}

int SelectionResult::best_J(std::size_t p) const {
  if (p >= best.size() || best[p] < 0) fail(ErrorKind::Numerical, "no successful fit in the grid");
  return rows[best[p]].J;
}

double SelectionResult::best_lambda(std::size_t p) const {
  if (p >= best.size() || best[p] < 0) fail(ErrorKind::Numerical, "no successful fit in the grid");
  return rows[best[p]].lambda;
}

void SelectionGrid::validate() const {
  if (J_values.empty() || a_values.empty()) fail(ErrorKind::Config, "selection grid is empty");
  for (int J : J_values)
    if (J < 1) fail(ErrorKind::Config, "grid J values must be >= 1");
  for (double a : a_values)
    if (!(a > 0.0 && a < 0.5)) fail(ErrorKind::Config, "grid a values must lie in (0, 0.5)");
}

namespace {

SelectionRow evaluate_point(const EstimationData& data, double a, double lambda, int J,
                            const std::vector<PenaltySpec>& penalties,
                            const CLassoConfig& base, const FirmwiseEstimates* cache,
                            std::vector<std::string>& warnings) {
  SelectionRow row;
  row.a = a;
  row.lambda = lambda;
  row.J = J;
  CLassoConfig cfg = base;
  cfg.J = J;
  cfg.lambda = lambda;
  try {
    auto fit_result = fit(data, cfg, lambda, cache);
    const double N = static_cast<double>(data.num_firms());
    double usable = 0.0;
    for (const auto& r : data.rows) usable += static_cast<double>(r.size());
    const double T = usable / N;
    for (const auto& p : penalties) {
      auto ic = information_criterion(fit_result.estimates, J, N, T, data.spec.num_params(), p);
      row.ic.push_back(ic.value);
      row.msr = ic.msr;
    }
    row.converged = fit_result.converged;
    if (fit_result.classification.num_classified() < data.num_firms())
      warnings.push_back("J=" + std::to_string(J) +
                         ": unclassified firms excluded from the residual mean");
  } catch (const Error& e) {
    row.failed = true;
    row.message = e.what();
    row.ic.assign(penalties.size(), std::numeric_limits<double>::quiet_NaN());
    row.msr = std::numeric_limits<double>::quiet_NaN();
    warnings.push_back("fit failed at lambda=" + format_double(lambda) +
                       ", J=" + std::to_string(J) + ": " + e.what());
  }
  return row;
}

void pick_best(SelectionResult& res) {
  res.best.assign(res.penalties.size(), -1);
  for (std::size_t p = 0; p < res.penalties.size(); ++p) {
    for (std::size_t k = 0; k < res.rows.size(); ++k) {
      const auto& row = res.rows[k];
      if (row.failed || std::isnan(row.ic[p])) continue;
      if (res.best[p] < 0 || row.ic[p] < res.rows[res.best[p]].ic[p])
        res.best[p] = static_cast<int>(k);
    }
  }
}

}  // namespace

SelectionResult select_J(const EstimationData& data, double lambda,
                         const std::vector<int>& J_values,
                         const std::vector<PenaltySpec>& penalties,
                         const CLassoConfig& base, const FirmwiseEstimates* cache) {
  if (J_values.empty()) fail(ErrorKind::Config, "J grid is empty");
  if (penalties.empty()) fail(ErrorKind::Config, "no penalty given");
  FirmwiseEstimates local;
  if (!cache) {
    local = firmwise_estimates(data, base);
    cache = &local;
  }
  std::vector<int> Js = J_values;
  std::sort(Js.begin(), Js.end());
  Js.erase(std::unique(Js.begin(), Js.end()), Js.end());
  SelectionResult res;
  res.penalties = penalties;
  double usable = 0.0;
  for (const auto& r : data.rows) usable += static_cast<double>(r.size());
  const double T = usable / static_cast<double>(data.num_firms());
  const double a = -std::log(lambda) / std::log(T);
  for (int J : Js)
    res.rows.push_back(evaluate_point(data, a, lambda, J, penalties, base, cache, res.warnings));
  pick_best(res);
  return res;
}

SelectionResult select_joint(const EstimationData& data, const SelectionGrid& grid,
                             const std::vector<PenaltySpec>& penalties,
                             const CLassoConfig& base, const FirmwiseEstimates* cache) {
  grid.validate();
  if (penalties.empty()) fail(ErrorKind::Config, "no penalty given");
  FirmwiseEstimates local;
  if (!cache) {
    local = firmwise_estimates(data, base);
    cache = &local;
  }
  double usable = 0.0;
  for (const auto& r : data.rows) usable += static_cast<double>(r.size());
  const double T = usable / static_cast<double>(data.num_firms());
  SelectionResult res;
  res.penalties = penalties;
  for (double a : grid.a_values)
    for (int J : grid.J_values)
      res.rows.push_back(evaluate_point(data, a, std::pow(T, -a), J, penalties, base, cache,
                                        res.warnings));
  pick_best(res);
  return res;
}

std::string surface_csv(const SelectionResult& result) {
  std::ostringstream os;
  os << "a,lambda,J";
  for (std::size_t p = 0; p < result.penalties.size(); ++p) os << ",IC" << (p + 1);
  os << ",msr,converged\n";
  for (const auto& row : result.rows) {
    os << format_double(row.a) << ',' << format_double(row.lambda) << ',' << row.J;
    for (double v : row.ic) os << ',' << format_double(v);
    os << ',' << format_double(row.msr) << ',' << (row.failed ? "failed" : (row.converged ? "true" : "false"))
       << '\n';
  }
  return os.str();
}

}  // namespace pfc
