#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "core/error.hpp"
#include "core/moments.hpp"
#include "core/panel.hpp"
#include "core/rng.hpp"
#include "core/simulate.hpp"

namespace pfc::testing {

inline ErrorKind error_kind(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  throw std::runtime_error("expected a pfc::Error");
}

// Two-input GNR panel with a random-walk capital path and omega started away
// from its stationary mean, so every slot of the AR-constant layout is
// identified from a single group, and from a single long firm. Shocks are
// drawn only for groups with positive sigmas; with zero sigmas the panel is
// noise-free (E = 1).
struct NoiselessPanel {
  PanelData panel;
  std::vector<int> group;                   // 0-based
  std::vector<std::vector<double>> omega;   // per firm, per period
};

inline NoiselessPanel noiseless_panel(const std::vector<GroupParams>& groups, int per_group,
                                      int T, std::uint64_t seed) {
  std::vector<FirmSeries> firms;
  std::vector<int> group;
  std::vector<std::vector<double>> omega;
  int id = 0;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const auto& p = groups[g];
    for (int i = 0; i < per_group; ++i, ++id) {
      RandomStream rs(seed, static_cast<std::uint32_t>(id), 7);
      FirmSeries f;
      f.id = "n" + std::to_string(id + 1);
      f.first_period = 0;
      double w = p.alpha / (1.0 - p.delta) + (rs.uniform() - 0.5);
      double k = rs.normal();
      std::vector<double> ws;
      for (int t = 0; t <= T; ++t) {
        if (t > 0) {
          w = p.alpha + p.delta * w + (p.sigma_eta > 0 ? p.sigma_eta * rs.normal() : 0.0);
          k += 0.2 * rs.normal();
        }
        const double eps = p.sigma_eps > 0 ? p.sigma_eps * rs.normal() : 0.0;
        const double M = optimal_intermediate(w, std::exp(k), p.gamma, p.beta(), p.E());
        const double m = std::log(M);
        const double y = p.beta() * k + p.gamma * m + w + eps;
        f.y.push_back(y);
        f.k.push_back(k);
        f.m.push_back(m);
        f.s.push_back(m - y);
        ws.push_back(w);
      }
      firms.push_back(std::move(f));
      group.push_back(static_cast<int>(g));
      omega.push_back(std::move(ws));
    }
  }
  return {PanelData(std::move(firms), false, true, true), std::move(group), std::move(omega)};
}

inline LaggedRow random_row(RandomStream& rs) {
  LaggedRow r{};
  r.period = 1;
  r.y = rs.normal();
  r.k = rs.normal();
  r.l = rs.normal();
  r.m = rs.normal();
  r.s = rs.normal(-0.7, 0.2);
  r.y_lag = rs.normal();
  r.k_lag = rs.normal();
  r.l_lag = rs.normal();
  r.m_lag = rs.normal();
  r.s_lag = rs.normal(-0.7, 0.2);
  return r;
}

// Interior point: GNR keeps beta3 and E positive.
inline ParamVector random_theta(RandomStream& rs, const MomentSpec& spec) {
  ParamVector th(spec.num_params());
  for (int p = 0; p < th.size(); ++p) th[p] = rs.normal(0.3, 0.5);
  if (spec.strategy() == Strategy::GNR) {
    th[spec.index(Param::Beta3)] = 0.2 + 0.6 * rs.uniform();
    th[spec.index(Param::E)] = 0.8 + 0.4 * rs.uniform();
  }
  return th;
}

inline Eigen::MatrixXd random_spd(RandomStream& rs, int n) {
  Eigen::MatrixXd A(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) A(i, j) = rs.normal();
  return A * A.transpose() + n * Eigen::MatrixXd::Identity(n, n);
}

inline std::vector<MomentSpec> all_specs() {
  return {MomentSpec(Strategy::GNR, false, true),  MomentSpec(Strategy::GNR, true, true),
          MomentSpec(Strategy::GNR, true, false),  MomentSpec(Strategy::GNR, false, false),
          MomentSpec(Strategy::ACF, false, true),  MomentSpec(Strategy::ACF, false, false),
          MomentSpec(Strategy::DynamicPanel, false, true),
          MomentSpec(Strategy::DynamicPanel, false, false)};
}

inline std::vector<GroupParams> noiseless_groups() {
  std::vector<GroupParams> g(3);
  g[0] = {1.0 / 3, 0.35, 0.0, 0.0, 0.9, 0.0};
  g[1] = {1.0 / 3, 0.50, 0.0, 0.2, 0.8, 0.0};
  g[2] = {1.0 / 3, 0.65, 0.0, 0.4, 0.7, 0.0};
  return g;
}

}  // namespace pfc::testing
