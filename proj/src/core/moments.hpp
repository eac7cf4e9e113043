#pragma once

#include <Eigen/Dense>
#include <span>
#include <string>
#include <vector>

#include "core/panel.hpp"

namespace pfc {

using ParamVector = Eigen::VectorXd;
using MomentVector = Eigen::VectorXd;

enum class Strategy { GNR, ACF, DynamicPanel };

std::string to_string(Strategy s);
Strategy strategy_from_string(const std::string& s);

// Roles a parameter slot can play. Absent roles have index -1.
enum class Param {
  Beta0, Beta1, Beta2, Beta3, E, Delta0, Delta1,
  Alpha0, Alpha1, Alpha2, Alpha3,
};

// Identification strategy plus functional-form flags; fixes the parameter
// layout and the moment count.
//
// Layouts (slots in brackets exist only when `labor` is set):
//   GNR            (beta3, E, beta0, beta1, [beta2], delta)
//   GNR + AR const (beta3, E, beta1, [beta2], delta0, delta1)
//   ACF            (alpha0, alpha1, [alpha2], alpha3, beta0, beta1, [beta2], delta)
//   DynamicPanel   (beta0, beta1, [beta2], beta3, delta)
// In the GNR share-equation system beta0 and an AR(1) constant enter the
// productivity residual only through their sum, so the AR-constant layout
// carries delta0 in place of beta0.
class MomentSpec {
 public:
  explicit MomentSpec(Strategy strategy = Strategy::GNR,
                      bool ar1_intercept = false, bool labor = true);

  Strategy strategy() const { return strategy_; }
  bool ar1_intercept() const { return ar1_intercept_; }
  bool labor() const { return labor_; }
  int num_params() const { return static_cast<int>(names_.size()); }
  int num_moments() const { return num_moments_; }
  const std::vector<std::string>& param_names() const { return names_; }
  int index(Param role) const { return idx_[static_cast<int>(role)]; }
  bool needs_share() const { return strategy_ == Strategy::GNR; }
  // Name of the composite residual used for fit statistics.
  std::string residual_name() const;

  bool operator==(const MomentSpec& o) const {
    return strategy_ == o.strategy_ && ar1_intercept_ == o.ar1_intercept_ &&
           labor_ == o.labor_;
  }

 private:
  Strategy strategy_;
  bool ar1_intercept_;
  bool labor_;
  int num_moments_ = 0;
  std::vector<std::string> names_;
  int idx_[11];
};

// Checks that the panel carries what the strategy needs.
void check_compatible(const PanelData& panel, const MomentSpec& spec);

struct GnrResiduals {
  double eps;       // share-equation shock at t
  double eta;       // productivity innovation at t
  double yr;        // y - beta3 m - eps at t
  double yr_lag;    // same at t-1
};
struct AcfResiduals {
  double eps;
  double v;
};

// Throw Error(Domain) when beta3 <= 0 or E <= 0.
GnrResiduals gnr_residuals(const LaggedRow& row, const ParamVector& theta,
                           const MomentSpec& spec);
AcfResiduals acf_residuals(const LaggedRow& row, const ParamVector& theta,
                           const MomentSpec& spec);
double dynpanel_residual(const LaggedRow& row, const ParamVector& theta,
                         const MomentSpec& spec);

// Residual entering fit statistics: eta + eps (GNR), v + eps (ACF), w.
double composite_residual(const LaggedRow& row, const ParamVector& theta,
                          const MomentSpec& spec);

MomentVector moment_vector(const LaggedRow& row, const ParamVector& theta,
                           const MomentSpec& spec);

// Raw kernel: writes g (length P') and, if jac is non-null, the row-major
// P' x P Jacobian. Returns false outside the parameter domain.
bool moment_kernel(const LaggedRow& row, const double* theta,
                   const MomentSpec& spec, double* g, double* jac);

MomentVector firm_avg_moments(std::span<const LaggedRow> rows,
                              const ParamVector& theta, const MomentSpec& spec);

// Averaged moments and their Jacobian dgbar/dtheta (P' x P).
struct MomentEval {
  MomentVector gbar;
  Eigen::MatrixXd jacobian;
  bool in_domain = true;
};
MomentEval evaluate_moments(std::span<const LaggedRow> rows,
                            const ParamVector& theta, const MomentSpec& spec,
                            bool with_jacobian);

double gmm_objective(std::span<const LaggedRow> rows, const ParamVector& theta,
                     const Eigen::MatrixXd& W, const MomentSpec& spec);
Eigen::VectorXd gmm_gradient(std::span<const LaggedRow> rows,
                             const ParamVector& theta, const Eigen::MatrixXd& W,
                             const MomentSpec& spec);

struct Weighting {
  Eigen::MatrixXd W;
  bool fell_back_to_identity = false;
};

// Symmetric positive definite weighting; throws Error(Config) otherwise.
Eigen::MatrixXd checked_weighting(const Eigen::MatrixXd& W);

// Inverse of (1/T sum_t g_t g_t' + ridge I), ridge = 1e-10 trace(S)/P'.
// `moments` holds one g_t per row.
Weighting weighting_from_moments(const Eigen::MatrixXd& moments);
Weighting optimal_weighting(std::span<const LaggedRow> rows,
                            const ParamVector& theta_first_step,
                            const MomentSpec& spec);

}  // namespace pfc
