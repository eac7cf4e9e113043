#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "core/moments.hpp"
#include "core/panel.hpp"

namespace pfc {

struct GroupParams {
  double share = 1.0;
  double gamma = 0.5;       // intermediate elasticity; capital gets 1 - gamma
  double sigma_eps = 0.0;   // sd of the ex-post shock
  double alpha = 0.0;       // AR(1) constant
  double delta = 0.0;       // AR(1) slope
  double sigma_eta = 0.0;   // sd of the AR(1) innovation

  double beta() const { return 1.0 - gamma; }
  double E() const;         // exp(sigma_eps^2 / 2)
  void validate() const;
};

struct SimConfig {
  std::vector<GroupParams> groups;
  double b = 0.985;
  double d = 0.100;
  int N = 200;
  int T = 15;
  int burn_in = 1000;
  int series_terms = 1001;
  std::uint64_t seed = 1;

  // Three-group design: shares .3/.4/.3, gamma .35/.5/.65, sigma_eps
  // .02/.04/.02, alpha 0/.2/.4, delta .9/.8/.7, sigma_eta .01.
  static SimConfig standard(int N = 200, int T = 15, std::uint64_t seed = 1);
  void validate() const;
};

// (gamma e^omega E)^(1/beta) K.
double optimal_intermediate(double omega, double K, double gamma, double beta, double E);

// Direct truncated series with `terms` terms.
double optimal_investment(double omega, const GroupParams& g, double phi, double b, double d,
                          int terms);

// Same series evaluated with precomputed term weights: terms whose omega
// exponent is small are summed through a Taylor expansion in omega.
class InvestmentSeries {
 public:
  InvestmentSeries(const GroupParams& g, double b, double d, int terms);
  double operator()(double omega, double phi) const;
  int terms() const { return static_cast<int>(log_weight_.size()); }

 private:
  static constexpr int kOrder = 10;
  double scale_ = 0.0;
  double beta_ = 1.0;
  double delta_ = 0.0;
  std::vector<double> log_weight_;  // tau log(b(1-d)) + A_tau
  std::vector<double> slope_;       // delta^(tau+1) / beta
  // suffix_[k][tau] = sum_{s >= tau} exp(log_weight_s) slope_s^k
  std::vector<std::vector<double>> suffix_;
};

struct SimulatedPanel {
  PanelData panel;
  std::vector<int> group;     // 0-based true group per firm
  std::vector<double> phi;
  // Post-burn-in latent series per firm, T + 1 entries each.
  std::vector<std::vector<double>> omega, eps, eta, capital, investment;
};

SimulatedPanel draw_panel(const SimConfig& config);

// Largest-remainder apportionment of N over the shares.
std::vector<int> group_sizes(const std::vector<double>& shares, int N);

// GNR parameters of a group for the two-input, AR-constant layout
// (beta3, E, beta1, delta0, delta1).
ParamVector true_theta(const GroupParams& g);
MomentSpec simulation_spec();

void write_truth_csv(const SimulatedPanel& sim, const std::string& path);
void write_latent_csv(const SimulatedPanel& sim, const std::string& path);

}  // namespace pfc
