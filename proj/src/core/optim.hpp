#pragma once

#include <Eigen/Dense>
#include <functional>
#include <string>

namespace pfc {

// Objective returning +inf outside its domain. When `grad` is non-null and
// the value is finite, the gradient must be written to it.
using Objective = std::function<double(const Eigen::VectorXd& x, Eigen::VectorXd* grad)>;

struct MinimizeResult {
  Eigen::VectorXd x;
  double value = 0.0;
  int iterations = 0;
  int evaluations = 0;
  bool converged = false;
  std::string message;
};

struct BfgsOptions {
  int max_iterations = 500;
  int max_evaluations = 5000;
  double grad_tol = 1e-10;      // on the infinity norm of the gradient
  double step_tol = 1e-15;      // relative step length
  double armijo = 1e-4;
};

// BFGS on the inverse Hessian with an Armijo backtracking line search that
// expands while the curvature condition is unmet. `inverse_hessian0`, when
// given, seeds the inverse-Hessian approximation.
MinimizeResult minimize_bfgs(const Objective& f, const Eigen::VectorXd& x0,
                             const BfgsOptions& options = {},
                             const Eigen::MatrixXd* inverse_hessian0 = nullptr);

// Residual map for quadratic-form problems r(x)' W r(x). Returns false outside
// the domain; fills `jac` (dim r x dim x) when non-null.
using ResidualMap =
    std::function<bool(const Eigen::VectorXd& x, Eigen::VectorXd& r, Eigen::MatrixXd* jac)>;

struct LevenbergOptions {
  int max_iterations = 200;
  double grad_tol = 1e-13;
  double step_tol = 1e-15;
};

// Levenberg-Marquardt on r' W r (W symmetric positive definite).
MinimizeResult minimize_quadratic_form(const ResidualMap& r, const Eigen::MatrixXd& W,
                                       const Eigen::VectorXd& x0,
                                       const LevenbergOptions& options = {});

}  // namespace pfc
