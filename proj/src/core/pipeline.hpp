#pragma once

#include <map>
#include <string>
#include <vector>

#include "core/classo.hpp"
#include "core/selection.hpp"
#include "core/simulate.hpp"

namespace pfc {

enum class McMode { Selection, Estimation };

struct McConfig {
  int replications = 20;
  SimConfig sim = SimConfig::standard();
  CLassoConfig classo;           // J is overridden by the true J in estimation mode
  std::vector<PenaltySpec> penalties{{PenaltyForm::P1, 1.0}};
  std::vector<int> J_values{1, 2, 3, 4, 5};
  McMode mode = McMode::Estimation;
  std::uint64_t base_seed = 1;   // replication r uses seed base_seed + r

  void validate() const;
};

McConfig mc_config_from_json(const std::string& json);

// Per-parameter statistics averaged over firms; relative quantities in %.
struct ParamSummary {
  std::string name;
  double rel_bias = 0.0;
  double rel_sd = 0.0;
  double rel_rmse = 0.0;
  double se_sd = 0.0;       // mean over firms of mean(SE) / sd
  double coverage = 0.0;    // mean over firms of the 95% coverage rate
  double max_rmse_gap = 0.0;  // max_i |rmse_i^2 - bias_i^2 - sd_i^2 (R-1)/R|
};

struct PenaltySummary {
  PenaltySpec penalty;
  double mean_J = 0.0;
  double pr_equal = 0.0;
  double pr_at_least = 0.0;
  std::vector<int> selected;   // per successful replication
};

struct McSummary {
  McMode mode = McMode::Estimation;
  int replications = 0;
  int failed = 0;
  int true_J = 0;
  std::vector<std::string> failures;
  // Estimation mode.
  std::vector<double> accuracy;          // per successful replication
  double mean_accuracy = 0.0;
  std::vector<ParamSummary> params;      // gamma, beta
  // Largest |post-Lasso - oracle| over replications with accuracy exactly 1;
  // negative when no such replication.
  double max_oracle_gap = -1.0;
  int perfect_replications = 0;
  // Selection mode.
  std::vector<PenaltySummary> penalties;
};

McSummary run_montecarlo(const McConfig& config);
std::string mc_summary_csv(const McSummary& s);
std::string mc_summary_json(const McSummary& s);

// Label per firm from an extra panel column (value at the firm's first
// period). Labels map to groups in sorted order.
struct FirmLabels {
  std::vector<std::string> label;   // per firm
  std::vector<std::string> levels;  // sorted distinct labels
  std::vector<int> index() const;   // per firm index into levels
};
FirmLabels labels_from_column(const PanelData& panel, const std::string& column);
// Labels from a CSV keyed by firm id (first occurrence per firm).
std::map<std::string, std::string> labels_from_csv(const std::string& text,
                                                   const std::string& firm_column,
                                                   const std::string& label_column);

// Panel copy with a firm-constant extra column appended.
PanelData with_firm_labels(const PanelData& panel, const std::string& column,
                           const std::vector<std::string>& labels);

struct Crosstab {
  std::vector<std::string> labels;  // rows
  int num_groups = 0;               // columns 1..J
  std::vector<std::vector<int>> counts;
  int unlabeled = 0;                // classified firms without a label

  int total() const;
};

// Rows: ex-ante labels; columns: estimated groups. Unclassified firms are
// not counted.
Crosstab crosstab(const std::vector<std::string>& firm_ids, const std::vector<int>& groups,
                  int num_groups, const std::map<std::string, std::string>& labels);
std::string crosstab_csv(const Crosstab& c);

struct FitComparison {
  double msr = 0.0;
  std::size_t residuals = 0;
  int groups = 0;
  int parameters = 0;   // estimated groups x P
};

// Mean squared composite residual of a stored fit on a panel. Firms are
// matched by id; firms missing from the fit or unclassified are skipped.
FitComparison evaluate_fit(const EstimationData& data, const FitResult& fit);

struct TfpRow {
  std::string firm;
  long period;
  int group;   // 1-based
  double tfp;
};

// exp(y - beta1 k - beta2 l - beta3 m) per observation of every classified
// firm, with the firm's group elasticities; absent slots count as 0.
std::vector<TfpRow> tfp_levels(const PanelData& panel, const FitResult& fit);
std::string tfp_csv(const std::vector<TfpRow>& rows);

}  // namespace pfc
