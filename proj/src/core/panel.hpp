#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

namespace pfc {

// Column mapping for panel CSV ingestion. Missing `l` yields a two-input
// panel; missing `s` is filled with m - y only when prices are normalized.
struct CsvSchema {
  std::string firm = "firm";
  std::string period = "period";
  std::string y = "y";
  std::string k = "k";
  std::string l = "l";
  std::string m = "m";
  std::string s = "s";
  char delimiter = ',';
  bool prices_normalized = false;
};

// One firm's consecutive log series, periods first_period .. last_period().
struct FirmSeries {
  std::string id;
  long first_period = 0;
  std::vector<double> y, k, l, m, s;
  // Extra columns in PanelData::extra_columns() order, one string per period.
  std::vector<std::vector<std::string>> extras;

  std::size_t size() const { return y.size(); }
  long last_period() const {
    return first_period + static_cast<long>(y.size()) - 1;
  }
};

// Immutable after construction; the constructor validates every invariant.
class PanelData {
 public:
  PanelData(std::vector<FirmSeries> firms, bool has_labor, bool has_share,
            bool prices_normalized,
            std::vector<std::string> extra_columns = {});

  const std::vector<FirmSeries>& firms() const { return firms_; }
  const FirmSeries& firm(std::size_t i) const { return firms_.at(i); }
  std::size_t num_firms() const { return firms_.size(); }
  std::size_t num_observations() const;
  // Rows available for moments: sum over firms of (T_i - t_i).
  std::size_t num_usable_rows() const;
  double mean_usable_periods() const;

  bool balanced() const { return balanced_; }
  bool has_labor() const { return has_labor_; }
  bool has_share() const { return has_share_; }
  bool prices_normalized() const { return prices_normalized_; }
  const std::vector<std::string>& extra_columns() const { return extra_columns_; }
  // Index of an extra column, or nullopt.
  std::optional<std::size_t> extra_index(const std::string& name) const;
  // Firm index by id, or nullopt.
  std::optional<std::size_t> find_firm(const std::string& id) const;

  // Copy restricted to the given firm indices (in the given order).
  PanelData select_firms(const std::vector<std::size_t>& indices) const;

 private:
  std::vector<FirmSeries> firms_;
  std::vector<std::string> extra_columns_;
  bool has_labor_;
  bool has_share_;
  bool prices_normalized_;
  bool balanced_ = true;
};

// Current values and one-period lags for one firm-period.
struct LaggedRow {
  long period;
  double y, k, l, m, s;
  double y_lag, k_lag, l_lag, m_lag, s_lag;
};

using FirmRows = std::vector<LaggedRow>;

PanelData load_csv(const std::string& path, const CsvSchema& schema = {});
PanelData parse_csv(const std::string& text, const CsvSchema& schema = {});

// Canonical layout: firm, period, y, k, [l], m, [s], extras...
void write_csv(const PanelData& panel, const std::string& path,
               char delimiter = ',');
std::string to_csv(const PanelData& panel, char delimiter = ',');

// One vector of lagged rows per firm, T_i - t_i rows each.
std::vector<FirmRows> build_lags(const PanelData& panel);

// Firms observed at every period of [t0, t1], restricted to that window.
PanelData subset_balanced(const PanelData& panel, long t0, long t1);

// Splits one CSV record; honours double quotes.
std::vector<std::string> split_csv_line(const std::string& line, char delim);

}  // namespace pfc
