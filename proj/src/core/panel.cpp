#include "core/panel.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <unordered_map>

#include "core/error.hpp"
#include "core/format.hpp"

namespace pfc {
namespace {

std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && (s[b] == ' ' || s[b] == '\t' || s[b] == '\r')) ++b;
  while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t' || s[e - 1] == '\r')) --e;
  return s.substr(b, e - b);
}

bool parse_double(const std::string& text, double& out) {
  const std::string t = trim(text);
  if (t.empty()) return false;
  const char* first = t.data();
  if (*first == '+') ++first;
  auto res = std::from_chars(first, t.data() + t.size(), out);
  return res.ec == std::errc() && res.ptr == t.data() + t.size();
}

bool parse_long(const std::string& text, long& out) {
  const std::string t = trim(text);
  if (t.empty()) return false;
  auto res = std::from_chars(t.data(), t.data() + t.size(), out);
  return res.ec == std::errc() && res.ptr == t.data() + t.size();
}

std::string quote_if_needed(const std::string& s, char delim) {
  if (s.find(delim) == std::string::npos && s.find('"') == std::string::npos &&
      s.find('\n') == std::string::npos)
    return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

}  // namespace

std::vector<std::string> split_csv_line(const std::string& line, char delim) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == delim) {
      fields.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  fields.push_back(cur);
  return fields;
}

PanelData::PanelData(std::vector<FirmSeries> firms, bool has_labor,
                     bool has_share, bool prices_normalized,
                     std::vector<std::string> extra_columns)
    : firms_(std::move(firms)),
      extra_columns_(std::move(extra_columns)),
      has_labor_(has_labor),
      has_share_(has_share),
      prices_normalized_(prices_normalized) {
  if (firms_.empty()) fail(ErrorKind::Data, "panel has no firms");
  std::unordered_map<std::string, std::size_t> seen;
  for (std::size_t i = 0; i < firms_.size(); ++i) {
    FirmSeries& f = firms_[i];
    if (!seen.emplace(f.id, i).second)
      fail(ErrorKind::Data, "duplicate firm id '" + f.id + "'");
    const std::size_t n = f.y.size();
    if (n < 3)
      fail(ErrorKind::Data, "firm '" + f.id + "' has " + std::to_string(n) +
                                " observations; at least 3 are required");
    if (f.k.size() != n || f.m.size() != n)
      fail(ErrorKind::Data, "firm '" + f.id + "' has ragged series");
    if (!has_labor_) f.l.assign(n, 0.0);
    if (!has_share_) f.s.assign(n, 0.0);
    if (f.l.size() != n || f.s.size() != n)
      fail(ErrorKind::Data, "firm '" + f.id + "' has ragged series");
    if (f.extras.size() != extra_columns_.size())
      f.extras.resize(extra_columns_.size(), std::vector<std::string>(n));
    for (const auto& col : f.extras)
      if (col.size() != n)
        fail(ErrorKind::Data, "firm '" + f.id + "' has ragged extra column");
    for (std::size_t t = 0; t < n; ++t) {
      const double v[5] = {f.y[t], f.k[t], f.l[t], f.m[t], f.s[t]};
      for (double x : v)
        if (!std::isfinite(x))
          fail(ErrorKind::Data, "firm '" + f.id + "' period " +
                                    std::to_string(f.first_period + long(t)) +
                                    ": non-finite value");
      if (prices_normalized_ && has_share_) {
        const double expect = f.m[t] - f.y[t];
        if (std::abs(f.s[t] - expect) > 1e-9 * (1.0 + std::abs(expect)))
          fail(ErrorKind::Data,
               "firm '" + f.id + "' period " +
                   std::to_string(f.first_period + long(t)) +
                   ": s differs from m - y although prices are normalized");
      }
    }
  }
  const long t0 = firms_.front().first_period;
  const long t1 = firms_.front().last_period();
  for (const auto& f : firms_)
    if (f.first_period != t0 || f.last_period() != t1) balanced_ = false;
}

std::size_t PanelData::num_observations() const {
  std::size_t n = 0;
  for (const auto& f : firms_) n += f.size();
  return n;
}

std::size_t PanelData::num_usable_rows() const {
  return num_observations() - firms_.size();
}

double PanelData::mean_usable_periods() const {
  return static_cast<double>(num_usable_rows()) /
         static_cast<double>(firms_.size());
}

std::optional<std::size_t> PanelData::extra_index(const std::string& name) const {
  for (std::size_t i = 0; i < extra_columns_.size(); ++i)
    if (extra_columns_[i] == name) return i;
  return std::nullopt;
}

std::optional<std::size_t> PanelData::find_firm(const std::string& id) const {
  for (std::size_t i = 0; i < firms_.size(); ++i)
    if (firms_[i].id == id) return i;
  return std::nullopt;
}

PanelData PanelData::select_firms(const std::vector<std::size_t>& indices) const {
  std::vector<FirmSeries> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back(firms_.at(i));
  return PanelData(std::move(out), has_labor_, has_share_, prices_normalized_,
                   extra_columns_);
}

PanelData parse_csv(const std::string& text, const CsvSchema& schema) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) fail(ErrorKind::Data, "empty CSV input");
  if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF &&
      static_cast<unsigned char>(line[1]) == 0xBB &&
      static_cast<unsigned char>(line[2]) == 0xBF)
    line.erase(0, 3);
  std::vector<std::string> header = split_csv_line(line, schema.delimiter);
  for (auto& h : header) h = trim(h);

  auto column = [&](const std::string& name) -> std::optional<std::size_t> {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    return std::nullopt;
  };
  auto required = [&](const std::string& role, const std::string& name) {
    auto c = column(name);
    if (!c)
      fail(ErrorKind::Config, "schema error: required column '" + role +
                                  "' mapped to '" + name +
                                  "' not found in header");
    return *c;
  };
  const std::size_t c_firm = required("firm", schema.firm);
  const std::size_t c_period = required("period", schema.period);
  const std::size_t c_y = required("y", schema.y);
  const std::size_t c_k = required("k", schema.k);
  const std::size_t c_m = required("m", schema.m);
  const auto c_l = column(schema.l);
  const auto c_s = column(schema.s);

  std::vector<std::size_t> extra_cols;
  std::vector<std::string> extra_names;
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (i == c_firm || i == c_period || i == c_y || i == c_k || i == c_m ||
        (c_l && i == *c_l) || (c_s && i == *c_s))
      continue;
    extra_cols.push_back(i);
    extra_names.push_back(header[i]);
  }

  struct Row {
    long period;
    double y, k, l, m, s;
    std::vector<std::string> extras;
  };
  std::vector<std::string> order;
  std::unordered_map<std::string, std::vector<Row>> rows;

  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto fields = split_csv_line(line, schema.delimiter);
    if (fields.size() != header.size())
      fail(ErrorKind::Data, "parse error at row " + std::to_string(line_no) +
                                ": expected " + std::to_string(header.size()) +
                                " fields, found " + std::to_string(fields.size()));
    auto num = [&](std::size_t col, const char* what) {
      double v;
      if (!parse_double(fields[col], v) || !std::isfinite(v))
        fail(ErrorKind::Data, "parse error at row " + std::to_string(line_no) +
                                  ": non-finite or invalid value '" +
                                  fields[col] + "' in column " + what);
      return v;
    };
    Row r;
    if (!parse_long(fields[c_period], r.period))
      fail(ErrorKind::Data, "parse error at row " + std::to_string(line_no) +
                                ": period '" + fields[c_period] +
                                "' is not an integer");
    r.y = num(c_y, "y");
    r.k = num(c_k, "k");
    r.m = num(c_m, "m");
    r.l = c_l ? num(*c_l, "l") : 0.0;
    if (c_s) {
      r.s = num(*c_s, "s");
    } else {
      r.s = schema.prices_normalized ? r.m - r.y : 0.0;
    }
    for (std::size_t c : extra_cols) r.extras.push_back(trim(fields[c]));
    const std::string id = trim(fields[c_firm]);
    if (id.empty())
      fail(ErrorKind::Data, "parse error at row " + std::to_string(line_no) +
                                ": empty firm id");
    auto [it, inserted] = rows.try_emplace(id);
    if (inserted) order.push_back(id);
    it->second.push_back(std::move(r));
  }

  std::vector<FirmSeries> firms;
  firms.reserve(order.size());
  for (const auto& id : order) {
    auto& rs = rows[id];
    std::stable_sort(rs.begin(), rs.end(),
                     [](const Row& a, const Row& b) { return a.period < b.period; });
    FirmSeries f;
    f.id = id;
    f.first_period = rs.front().period;
    f.extras.assign(extra_cols.size(), {});
    for (std::size_t t = 0; t < rs.size(); ++t) {
      if (t > 0 && rs[t].period == rs[t - 1].period)
        fail(ErrorKind::Data, "duplicate period " + std::to_string(rs[t].period) +
                                  " for firm '" + id + "'");
      if (t > 0 && rs[t].period != rs[t - 1].period + 1)
        fail(ErrorKind::Data, "gap error: firm '" + id + "' is not observed at period " +
                                  std::to_string(rs[t - 1].period + 1) +
                                  " (periods must be consecutive)");
      f.y.push_back(rs[t].y);
      f.k.push_back(rs[t].k);
      f.l.push_back(rs[t].l);
      f.m.push_back(rs[t].m);
      f.s.push_back(rs[t].s);
      for (std::size_t e = 0; e < extra_cols.size(); ++e)
        f.extras[e].push_back(rs[t].extras[e]);
    }
    firms.push_back(std::move(f));
  }
  const bool has_share = c_s.has_value() || schema.prices_normalized;
  return PanelData(std::move(firms), c_l.has_value(), has_share,
                   schema.prices_normalized, std::move(extra_names));
}

PanelData load_csv(const std::string& path, const CsvSchema& schema) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot open panel file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_csv(ss.str(), schema);
}

std::string to_csv(const PanelData& panel, char d) {
  std::ostringstream out;
  out << "firm" << d << "period" << d << "y" << d << "k";
  if (panel.has_labor()) out << d << "l";
  out << d << "m";
  if (panel.has_share()) out << d << "s";
  for (const auto& e : panel.extra_columns()) out << d << quote_if_needed(e, d);
  out << '\n';
  for (const auto& f : panel.firms()) {
    const std::string id = quote_if_needed(f.id, d);
    for (std::size_t t = 0; t < f.size(); ++t) {
      out << id << d << (f.first_period + long(t)) << d << format_double(f.y[t])
          << d << format_double(f.k[t]);
      if (panel.has_labor()) out << d << format_double(f.l[t]);
      out << d << format_double(f.m[t]);
      if (panel.has_share()) out << d << format_double(f.s[t]);
      for (const auto& col : f.extras) out << d << quote_if_needed(col[t], d);
      out << '\n';
    }
  }
  return out.str();
}

void write_csv(const PanelData& panel, const std::string& path, char delimiter) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::Io, "cannot write '" + path + "'");
  out << to_csv(panel, delimiter);
  if (!out) fail(ErrorKind::Io, "write failed for '" + path + "'");
}

std::vector<FirmRows> build_lags(const PanelData& panel) {
  std::vector<FirmRows> out;
  out.reserve(panel.num_firms());
  for (const auto& f : panel.firms()) {
    FirmRows rows;
    rows.reserve(f.size() - 1);
    for (std::size_t t = 1; t < f.size(); ++t) {
      rows.push_back({f.first_period + long(t), f.y[t], f.k[t], f.l[t], f.m[t],
                      f.s[t], f.y[t - 1], f.k[t - 1], f.l[t - 1], f.m[t - 1],
                      f.s[t - 1]});
    }
    out.push_back(std::move(rows));
  }
  return out;
}

PanelData subset_balanced(const PanelData& panel, long t0, long t1) {
  if (t0 >= t1)
    fail(ErrorKind::Config, "subset_balanced requires t0 < t1");
  std::vector<FirmSeries> keep;
  for (const auto& f : panel.firms()) {
    if (f.first_period > t0 || f.last_period() < t1) continue;
    const std::size_t b = static_cast<std::size_t>(t0 - f.first_period);
    const std::size_t e = static_cast<std::size_t>(t1 - f.first_period) + 1;
    FirmSeries g;
    g.id = f.id;
    g.first_period = t0;
    auto cut = [&](const std::vector<double>& v) {
      return std::vector<double>(v.begin() + long(b), v.begin() + long(e));
    };
    g.y = cut(f.y);
    g.k = cut(f.k);
    g.l = cut(f.l);
    g.m = cut(f.m);
    g.s = cut(f.s);
    for (const auto& col : f.extras)
      g.extras.emplace_back(col.begin() + long(b), col.begin() + long(e));
    keep.push_back(std::move(g));
  }
  if (keep.empty())
    fail(ErrorKind::Data, "empty panel: no firm is observed over every period of [" +
                              std::to_string(t0) + ", " + std::to_string(t1) + "]");
  return PanelData(std::move(keep), panel.has_labor(), panel.has_share(),
                   panel.prices_normalized(), panel.extra_columns());
}

}  // namespace pfc
