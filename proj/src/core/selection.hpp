#pragma once

#include <optional>
#include <string>
#include <vector>

#include "core/classo.hpp"

namespace pfc {

enum class PenaltyForm { P1, P2 };

// p1(N, T) = r (NT)^-0.5, p2(N, T) = r log(log T) / T.
struct PenaltySpec {
  PenaltyForm form = PenaltyForm::P1;
  double r = 1.0;

  double value(double N, double T) const;
  std::string label() const;  // e.g. "p1(r=0.5)"
};

PenaltySpec penalty_from_string(const std::string& form, double r);

struct IcValue {
  double value = 0.0;
  double msr = 0.0;            // mean squared composite residual
  std::size_t count = 0;       // residuals entering the mean
  bool zero_residuals = false; // log(0): value is -inf
};

// log(mean squared residual) + J P p(N, T). The mean runs over the
// residuals of classified firms only.
IcValue information_criterion(const GroupEstimates& estimates, int J, double N, double T,
                              int P, const PenaltySpec& penalty);

struct SelectionRow {
  double a = 0.0;       // lambda = T^-a
  double lambda = 0.0;
  int J = 0;
  std::vector<double> ic;  // one per penalty
  double msr = 0.0;
  bool converged = false;
  bool failed = false;
  std::string message;
};

struct SelectionResult {
  std::vector<PenaltySpec> penalties;
  std::vector<SelectionRow> rows;
  // Per penalty: index into rows of the minimizer, or -1 if every row failed.
  std::vector<int> best;
  std::vector<std::string> warnings;

  int best_J(std::size_t penalty = 0) const;
  double best_lambda(std::size_t penalty = 0) const;
};

struct SelectionGrid {
  std::vector<int> J_values;
  std::vector<double> a_values;
  void validate() const;
};

// Fits every J at fixed lambda. Ties go to the smallest J (rows are
// ordered by J); failed fits are excluded with a warning.
SelectionResult select_J(const EstimationData& data, double lambda,
                         const std::vector<int>& J_values,
                         const std::vector<PenaltySpec>& penalties,
                         const CLassoConfig& base, const FirmwiseEstimates* cache = nullptr);

// Full (lambda, J) surface, lambda = T^-a. Ties go to the first row in
// (a, J) order.
SelectionResult select_joint(const EstimationData& data, const SelectionGrid& grid,
                             const std::vector<PenaltySpec>& penalties,
                             const CLassoConfig& base,
                             const FirmwiseEstimates* cache = nullptr);

// Columns a, lambda, J, IC1..ICk, msr, converged.
std::string surface_csv(const SelectionResult& result);

}  // namespace pfc
