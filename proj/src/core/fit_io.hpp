#pragma once

#include <map>
#include <string>

#include "core/classo.hpp"
#include "core/selection.hpp"
#include "core/simulate.hpp"

namespace pfc {

// JSON configuration blocks. Unknown keys are rejected so typos surface as
// config errors.
MomentSpec spec_from_json(const std::string& json);
std::string spec_to_json(const MomentSpec& spec);
CLassoConfig classo_config_from_json(const std::string& json);
std::string classo_config_to_json(const CLassoConfig& config);
SimConfig sim_config_from_json(const std::string& json);
std::string sim_config_to_json(const SimConfig& config);
CsvSchema schema_from_json(const std::string& json);
SelectionGrid grid_from_json(const std::string& json);
std::vector<PenaltySpec> penalties_from_json(const std::string& json);

// Fit result with config echo, per-group estimates and covariances, the
// assignment table and the outer-loop trace.
std::string fit_to_json(const FitResult& fit);
// Restores spec, config, group estimates and assignments (no residuals).
FitResult fit_from_json(const std::string& json);

// firm_id, group, distance. Unclassified firms have an empty group.
std::string assignments_csv(const FitResult& fit);
// firm_id, period, group, <residual name> for every classified firm-period.
std::string residuals_csv(const FitResult& fit, const EstimationData& data);

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& content);

}  // namespace pfc
