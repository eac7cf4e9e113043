#pragma once

#include <Eigen/Dense>

namespace pfc {

struct GeometricMedian {
  Eigen::VectorXd point;
  double objective = 0.0;   // sum_i w_i ||x_i - point||
  int iterations = 0;
  bool converged = false;
};

// Minimizer of sum_i w_i ||x_i - theta|| (rows of `points` are the x_i) by
// Weiszfeld iteration. When an iterate sits on a data point, that point's
// subgradient condition decides between stopping and a Vardi-Zhang step
// along the descent direction. Iterates are monotone in the objective, so
// a `start` never ends worse than where it began.
GeometricMedian weighted_geometric_median(const Eigen::MatrixXd& points,
                                          const Eigen::VectorXd& weights,
                                          double tol = 1e-10,
                                          const Eigen::VectorXd* start = nullptr,
                                          int max_iterations = 20000);

double fermat_weber_objective(const Eigen::MatrixXd& points,
                              const Eigen::VectorXd& weights,
                              const Eigen::VectorXd& theta);

}  // namespace pfc
