#include "core/geomedian.hpp"

#include <cmath>
#include <vector>

#include "core/error.hpp"

namespace pfc {
namespace {

constexpr double kAnchorRadius = 1e-12;

// Subgradient test at data point k: optimal iff ||R_k|| <= weight on k.
bool vertex_optimal(const Eigen::MatrixXd& pts, const Eigen::VectorXd& w,
                    Eigen::Index k) {
  const Eigen::VectorXd xk = pts.row(k).transpose();
  Eigen::VectorXd R = Eigen::VectorXd::Zero(pts.cols());
  double anchored = 0.0;
  for (Eigen::Index i = 0; i < pts.rows(); ++i) {
    if (w[i] <= 0.0) continue;
    const Eigen::VectorXd diff = pts.row(i).transpose() - xk;
    const double d = diff.norm();
    if (d <= kAnchorRadius)
      anchored += w[i];
    else
      R += w[i] * diff / d;
  }
  return R.norm() <= anchored;
}

}  // namespace

double fermat_weber_objective(const Eigen::MatrixXd& points,
                              const Eigen::VectorXd& weights,
                              const Eigen::VectorXd& theta) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < points.rows(); ++i)
    if (weights[i] > 0.0) s += weights[i] * (points.row(i).transpose() - theta).norm();
  return s;
}

GeometricMedian weighted_geometric_median(const Eigen::MatrixXd& pts,
                                          const Eigen::VectorXd& w, double tol,
                                          const Eigen::VectorXd* start,
                                          int max_iterations) {
  const Eigen::Index n = pts.rows(), p = pts.cols();
  if (w.size() != n) fail(ErrorKind::Config, "geometric median: weight count mismatch");
  double wsum = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!(w[i] >= 0.0) || !std::isfinite(w[i]))
      fail(ErrorKind::Config, "geometric median: weights must be finite and non-negative");
    wsum += w[i];
  }
  if (!(wsum > 0.0))
    fail(ErrorKind::Config, "geometric median: at least one weight must be positive");

  GeometricMedian out;
  Eigen::VectorXd x(p);
  if (start) {
    x = *start;
  } else {
    x.setZero();
    for (Eigen::Index i = 0; i < n; ++i) x += w[i] * pts.row(i).transpose();
    x /= wsum;
  }

  std::vector<double> dist(static_cast<std::size_t>(n));
  Eigen::VectorXd num(p), R(p), next(p);
  for (int it = 0; it < max_iterations; ++it) {
    out.iterations = it + 1;
    num.setZero();
    R.setZero();
    double denom = 0.0, anchored = 0.0;
    Eigen::Index nearest = -1;
    double nearest_d = INFINITY;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (w[i] <= 0.0) continue;
      const double d = (pts.row(i).transpose() - x).norm();
      dist[static_cast<std::size_t>(i)] = d;
      if (d < nearest_d) {
        nearest_d = d;
        nearest = i;
      }
      if (d <= kAnchorRadius) {
        anchored += w[i];
        continue;
      }
      num += (w[i] / d) * pts.row(i).transpose();
      R += (w[i] / d) * (pts.row(i).transpose() - x);
      denom += w[i] / d;
    }
    if (denom == 0.0) {  // every weighted point coincides with x
      out.converged = true;
      break;
    }
    if (anchored > 0.0) {
      const double r = R.norm();
      if (r <= anchored) {
        out.converged = true;
        break;
      }
      // Vardi-Zhang step off the anchor.
      const Eigen::VectorXd T = num / denom;
      next = (1.0 - anchored / r) * T + (anchored / r) * x;
    } else {
      next = num / denom;
      // Vertex solutions are approached only sublinearly; test the nearest
      // data point directly once close.
      if (nearest >= 0 && nearest_d < 1e-4 * (1.0 + x.norm()) &&
          vertex_optimal(pts, w, nearest)) {
        x = pts.row(nearest).transpose();
        out.converged = true;
        break;
      }
    }
    const double step = (next - x).norm();
    x = next;
    if (step < tol) {
      out.converged = true;
      break;
    }
  }
  out.point = x;
  out.objective = fermat_weber_objective(pts, w, x);
  return out;
}

}  // namespace pfc
