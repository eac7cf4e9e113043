#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "core/moments.hpp"
#include "core/panel.hpp"

namespace pfc {

enum class WeightingScheme { Identity, TwoStep };

std::string to_string(WeightingScheme w);
WeightingScheme weighting_from_string(const std::string& s);

struct CLassoConfig {
  int J = 1;
  std::optional<double> lambda;          // defaults to T^-lambda_exponent
  double lambda_exponent = 0.25;
  double outer_tol = 1e-6;
  double inner_tol = 1e-6;
  int max_outer = 200;
  int max_inner = 100;
  std::optional<double> classification_threshold;  // strict rule when set
  WeightingScheme weighting = WeightingScheme::Identity;
  int multistart = 5;                    // firm-wise starts incl. pooled point
  double multistart_scale = 0.2;
  std::uint64_t seed = 20240611;

  void validate() const;
};

// T^-0.25 with T the mean number of usable periods per firm.
double default_lambda(const PanelData& panel, double exponent = 0.25);

// Lagged rows and weighting matrices bound to one moment specification.
struct EstimationData {
  MomentSpec spec;
  std::vector<FirmRows> rows;
  std::vector<std::string> firm_ids;

  EstimationData(const PanelData& panel, const MomentSpec& spec);
  std::size_t num_firms() const { return rows.size(); }
  std::span<const LaggedRow> firm(std::size_t i) const { return rows[i]; }
};

// ---------------------------------------------------------------------------
// Unpenalized GMM

struct GmmSolution {
  ParamVector theta;
  double objective = 0.0;
  bool converged = false;
};

// Strategy-specific least-squares starting point computed from the rows of
// one or more firms.
ParamVector default_start(const std::vector<std::span<const LaggedRow>>& firms,
                          const MomentSpec& spec);

// Minimizes gbar_G' W gbar_G, gbar_G the mean of the member firms' averaged
// moments.
GmmSolution solve_group_gmm(const std::vector<std::span<const LaggedRow>>& firms,
                            const Eigen::MatrixXd& W, const MomentSpec& spec,
                            const ParamVector& start);

// Firm-wise estimates used to initialise the penalized problem, with the
// weighting matrices used for each firm.
struct FirmwiseEstimates {
  ParamVector pooled;
  std::vector<ParamVector> theta;
  std::vector<double> objective;
  std::vector<Eigen::MatrixXd> W;
  WeightingScheme weighting = WeightingScheme::Identity;
};

FirmwiseEstimates firmwise_estimates(const EstimationData& data,
                                     const CLassoConfig& config);

// ---------------------------------------------------------------------------
// Penalized GMM

// (1/N) sum_i [ gbar_i' W_i gbar_i + lambda prod_j ||pi_i - theta_j|| ].
double pgmm_objective(const EstimationData& data, const Eigen::MatrixXd& pi,
                      const Eigen::MatrixXd& theta, double lambda,
                      const std::vector<Eigen::MatrixXd>& W);

// Smoothing constant of the Euclidean norm in the firm subproblem.
inline constexpr double kNormSmoothing = 1e-8;

struct FirmSubproblemResult {
  ParamVector pi;
  double value = 0.0;       // exact (unsmoothed) objective at pi
  bool converged = true;
  bool at_center = false;   // pi == theta_j exactly
};

// gbar(pi)' W gbar(pi) + lambda zeta ||pi - theta_j||, +inf outside domain.
double firm_penalized_value(std::span<const LaggedRow> rows, const ParamVector& pi,
                            const ParamVector& theta_j, double lambda_zeta,
                            const Eigen::MatrixXd& W, const MomentSpec& spec);

// Never returns a point worse than `init`.
FirmSubproblemResult solve_firm_subproblem(std::span<const LaggedRow> rows,
                                           const ParamVector& theta_j, double lambda,
                                           double zeta, const Eigen::MatrixXd& W,
                                           const MomentSpec& spec,
                                           const ParamVector& init);

struct AcsResult {
  Eigen::MatrixXd pi;          // N x P
  ParamVector theta;           // P
  std::vector<double> trace;   // Q_inner, starting with the initial value
  int iterations = 0;
  bool converged = false;
  std::vector<std::size_t> flagged_firms;
};

AcsResult alternate_convex_search(const EstimationData& data,
                                  const ParamVector& theta_init,
                                  const Eigen::MatrixXd& pi_init,
                                  const Eigen::VectorXd& zeta, double lambda,
                                  const std::vector<Eigen::MatrixXd>& W,
                                  double inner_tol, int max_inner);

// ---------------------------------------------------------------------------
// Classification and post-Lasso

inline constexpr int kUnclassified = -1;

struct Classification {
  std::vector<int> group;        // 0-based group or kUnclassified
  std::vector<double> distance;  // min_j distance
  int num_groups = 0;

  std::size_t num_classified() const;
  std::vector<std::size_t> members(int j) const;
};

Classification classify(const Eigen::MatrixXd& pi_hat, const Eigen::MatrixXd& theta_hat,
                        std::optional<double> threshold = std::nullopt);
// Same rule on a precomputed N x J distance matrix.
Classification classify_distances(const Eigen::MatrixXd& distances,
                                  std::optional<double> threshold = std::nullopt);

struct GroupEstimate {
  std::vector<std::size_t> members;
  ParamVector theta;
  Eigen::MatrixXd covariance;
  Eigen::MatrixXd W;
  double objective = 0.0;
  bool converged = false;
  bool empty = false;
  bool underidentified = false;
  bool covariance_pseudo_inverse = false;
};

struct GroupEstimates {
  std::vector<GroupEstimate> groups;
  // Composite residual series per firm (empty for unclassified firms).
  std::vector<std::vector<double>> residuals;
  std::vector<std::string> warnings;

  std::size_t residual_count() const;
  double residual_sum_squares() const;
};

GroupEstimates post_lasso(const EstimationData& data, const Classification& cls,
                          WeightingScheme weighting,
                          const std::vector<ParamVector>* start_hints = nullptr);

struct Sandwich {
  Eigen::MatrixXd covariance;
  bool pseudo_inverse = false;
};

// (D'WD)^-1 D'W S W D (D'WD)^-1 / n with S = (1/n) sum_i gbar_i gbar_i'.
Sandwich sandwich_covariance(const std::vector<Eigen::VectorXd>& firm_gbar,
                             const Eigen::MatrixXd& D, const Eigen::MatrixXd& W);

Sandwich sandwich_se(const std::vector<std::span<const LaggedRow>>& members,
                     const ParamVector& theta, const Eigen::MatrixXd& W,
                     const MomentSpec& spec);

struct LabelMatch {
  std::vector<int> permutation;  // estimated label -> true label
  double accuracy = 0.0;
};

// Exhaustive over J! permutations (J <= 8). Unclassified firms count as
// misclassified.
LabelMatch match_labels(const std::vector<int>& estimated, const std::vector<int>& truth,
                        int J);

// ---------------------------------------------------------------------------
// Full pipeline

struct CLassoState {
  std::vector<Eigen::MatrixXd> pi;  // J matrices N x P
  Eigen::MatrixXd theta;            // J x P
  Eigen::MatrixXd zeta;             // N x J
  double outer_value = 0.0;
};

struct FitResult {
  CLassoConfig config;
  MomentSpec spec;
  double lambda = 0.0;
  CLassoState state;
  Eigen::MatrixXd pi_hat;           // N x P, pi_i of the assigned subproblem
  Classification classification;
  GroupEstimates estimates;
  std::vector<double> outer_trace;
  std::vector<std::vector<double>> inner_traces;
  int outer_iterations = 0;
  bool converged = false;
  std::vector<std::string> firm_ids;
  std::vector<std::string> warnings;
};

FitResult fit(const EstimationData& data, const CLassoConfig& config, double lambda,
              const FirmwiseEstimates* cache = nullptr);
FitResult fit(const PanelData& panel, const CLassoConfig& config, const MomentSpec& spec);

// Third-step estimation on a given partition (ex-ante or true groups).
FitResult fit_partition(const EstimationData& data, const std::vector<int>& groups,
                        int num_groups, WeightingScheme weighting);

}  // namespace pfc
