#include "core/optim.hpp"

#include <cmath>
#include <limits>

namespace pfc {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

}  // namespace

MinimizeResult minimize_bfgs(const Objective& f, const Eigen::VectorXd& x0,
                             const BfgsOptions& opt,
                             const Eigen::MatrixXd* inverse_hessian0) {
  const Eigen::Index n = x0.size();
  MinimizeResult res;
  res.x = x0;
  Eigen::VectorXd g(n), g_new(n), x_new(n);
  double fx = f(res.x, &g);
  res.evaluations = 1;
  if (!std::isfinite(fx)) {
    res.value = fx;
    res.message = "objective not finite at the starting point";
    return res;
  }
  Eigen::MatrixXd H;
  bool scaled = false;
  if (inverse_hessian0 && inverse_hessian0->allFinite()) {
    H = *inverse_hessian0;
    scaled = true;
  } else {
    H = Eigen::MatrixXd::Identity(n, n);
  }

  for (int it = 0; it < opt.max_iterations; ++it) {
    res.iterations = it;
    if (g.lpNorm<Eigen::Infinity>() <= opt.grad_tol) {
      res.converged = true;
      res.message = "gradient tolerance reached";
      break;
    }
    if (res.evaluations >= opt.max_evaluations) {
      res.message = "evaluation limit reached";
      break;
    }
    Eigen::VectorXd dir = -H * g;
    double slope = g.dot(dir);
    if (!(slope < 0.0)) {
      H.setIdentity();
      scaled = false;
      dir = -g;
      slope = -g.squaredNorm();
    }
    double step = 1.0;
    if (!scaled) step = std::min(1.0, 1.0 / std::max(dir.norm(), 1e-300));

    // Armijo backtracking; expand while the curvature condition fails.
    double f_new = kInf;
    bool accepted = false;
    double best_step = 0.0, best_f = fx;
    Eigen::VectorXd best_g;
    for (int ls = 0; ls < 60 && res.evaluations < opt.max_evaluations; ++ls) {
      x_new = res.x + step * dir;
      f_new = f(x_new, &g_new);
      ++res.evaluations;
      if (std::isfinite(f_new) && f_new <= fx + opt.armijo * step * slope) {
        best_step = step;
        best_f = f_new;
        best_g = g_new;
        accepted = true;
        if (g_new.dot(dir) < 0.9 * slope && ls < 8 && step < 1e6) {
          step *= 2.0;
          continue;
        }
        break;
      }
      if (accepted) break;
      if (!std::isfinite(f_new)) {
        step *= 0.1;
      } else {
        // Quadratic interpolation, safeguarded.
        const double denom = 2.0 * (f_new - fx - slope * step);
        double trial = denom > 0.0 ? -slope * step * step / denom : 0.5 * step;
        step = std::clamp(trial, 0.1 * step, 0.5 * step);
      }
      if (step * dir.norm() <= opt.step_tol * (1.0 + res.x.norm())) break;
    }
    if (!accepted) {
      res.message = "line search failed";
      res.converged = g.lpNorm<Eigen::Infinity>() <= std::sqrt(opt.grad_tol);
      break;
    }
    const Eigen::VectorXd s = best_step * dir;
    const Eigen::VectorXd y = best_g - g;
    res.x += s;
    const double f_old = fx;
    fx = best_f;
    g = best_g;
    const double sy = s.dot(y);
    if (sy > 1e-14 * s.norm() * y.norm() && sy > 0.0) {
      if (!scaled) {
        H *= sy / y.squaredNorm();
        scaled = true;
      }
      const double rho = 1.0 / sy;
      const Eigen::VectorXd Hy = H * y;
      H += (rho * rho * y.dot(Hy) + rho) * (s * s.transpose()) -
           rho * (Hy * s.transpose() + s * Hy.transpose());
    }
    if (s.norm() <= opt.step_tol * (1.0 + res.x.norm())) {
      res.converged = true;
      res.message = "step tolerance reached";
      res.iterations = it + 1;
      break;
    }
    if (f_old - fx <= 1e-16 * std::abs(fx) && fx != 0.0) {
      res.converged = true;
      res.message = "no further decrease";
      res.iterations = it + 1;
      break;
    }
    if (it + 1 == opt.max_iterations) {
      res.iterations = it + 1;
      res.message = "iteration limit reached";
    }
  }
  res.value = fx;
  return res;
}

MinimizeResult minimize_quadratic_form(const ResidualMap& rmap, const Eigen::MatrixXd& W,
                                       const Eigen::VectorXd& x0,
                                       const LevenbergOptions& opt) {
  const Eigen::Index n = x0.size();
  MinimizeResult res;
  res.x = x0;
  Eigen::VectorXd r, r_new;
  Eigen::MatrixXd J, J_new;
  if (!rmap(res.x, r, &J)) {
    res.value = kInf;
    res.message = "residual map outside its domain at the starting point";
    return res;
  }
  res.evaluations = 1;
  Eigen::VectorXd Wr = W * r;
  double fx = r.dot(Wr);
  double mu = 1e-3;
  for (int it = 0; it < opt.max_iterations; ++it) {
    res.iterations = it;
    const Eigen::MatrixXd A = J.transpose() * W * J;
    const Eigen::VectorXd grad = J.transpose() * Wr;  // half the gradient
    // A small gradient alone is not enough when J'WJ is ill-conditioned; the
    // Gauss-Newton step must be small too.
    bool small_step = false;
    if (2.0 * grad.lpNorm<Eigen::Infinity>() <= opt.grad_tol) {
      const Eigen::VectorXd gn = A.ldlt().solve(grad);
      small_step = gn.allFinite() && gn.norm() <= 1e-9 * (1.0 + res.x.norm());
    }
    if (small_step || fx == 0.0) {
      res.converged = true;
      res.message = "gradient tolerance reached";
      break;
    }
    const double scale = std::max(A.diagonal().maxCoeff(), 1e-300);
    bool improved = false;
    for (int tries = 0; tries < 40; ++tries) {
      Eigen::MatrixXd M = A;
      M.diagonal().array() += mu * scale;
      const Eigen::VectorXd step = M.ldlt().solve(-grad);
      if (!step.allFinite()) {
        mu *= 10.0;
        continue;
      }
      const Eigen::VectorXd x_new = res.x + step;
      ++res.evaluations;
      if (rmap(x_new, r_new, &J_new)) {
        const Eigen::VectorXd Wr_new = W * r_new;
        const double f_new = r_new.dot(Wr_new);
        if (std::isfinite(f_new) && f_new < fx) {
          const bool tiny = step.norm() <= opt.step_tol * (1.0 + res.x.norm());
          res.x = x_new;
          r = r_new;
          J = J_new;
          Wr = Wr_new;
          fx = f_new;
          mu = std::max(mu / 5.0, 1e-15);
          improved = true;
          if (tiny) {
            res.converged = true;
            res.message = "step tolerance reached";
          }
          break;
        }
      }
      mu *= 8.0;
      if (mu > 1e16) break;
    }
    if (!improved) {
      res.converged = true;
      res.message = "no further decrease";
      break;
    }
    if (res.converged) break;
    if (it + 1 == opt.max_iterations) res.message = "iteration limit reached";
  }
  (void)n;
  res.value = fx;
  return res;
}

}  // namespace pfc
