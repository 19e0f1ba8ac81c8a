#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "fdag/errors.hpp"

namespace fdag {

/// One observed curve: values W(m) at grid points w(m), ascending in [0, 1].
struct Curve {
  std::vector<double> grid;
  std::vector<double> values;
};

/// n subjects x p functions, each curve on its own grid.
class FunctionalDataset {
 public:
  FunctionalDataset() = default;
  FunctionalDataset(int n, int p, std::vector<Curve> curves, std::vector<std::string> labels = {},
                    std::vector<std::string> subject_ids = {})
      : n_(n), p_(p), curves_(std::move(curves)), labels_(std::move(labels)),
        subject_ids_(std::move(subject_ids)) {
    if (labels_.empty())
      for (int j = 0; j < p_; ++j) labels_.push_back("X" + std::to_string(j + 1));
    if (subject_ids_.empty())
      for (int i = 0; i < n_; ++i) subject_ids_.push_back(std::to_string(i + 1));
    validate();
  }

  int n() const { return n_; }
  int p() const { return p_; }
  const Curve& curve(int i, int j) const { return curves_[static_cast<std::size_t>(i * p_ + j)]; }
  const std::vector<Curve>& curves() const { return curves_; }
  const std::vector<std::string>& labels() const { return labels_; }
  const std::vector<std::string>& subject_ids() const { return subject_ids_; }

  std::size_t observation_count(int j) const {
    std::size_t total = 0;
    for (int i = 0; i < n_; ++i) total += curve(i, j).grid.size();
    return total;
  }

  void validate() const {
    if (n_ < 0 || p_ < 1) throw InvalidConfiguration("dataset needs n >= 0 and p >= 1");
    if (curves_.size() != static_cast<std::size_t>(n_) * static_cast<std::size_t>(p_))
      throw InvalidConfiguration("dataset has the wrong number of curves");
    if (labels_.size() != static_cast<std::size_t>(p_)) throw InvalidConfiguration("need one label per function");
    for (int i = 0; i < n_; ++i)
      for (int j = 0; j < p_; ++j) {
        const Curve& c = curve(i, j);
        const std::string where = " (subject " + std::to_string(i) + ", function " + std::to_string(j) + ")";
        if (c.grid.empty()) throw InvalidConfiguration("empty curve" + where);
        if (c.grid.size() != c.values.size()) throw InvalidConfiguration("grid/value length mismatch" + where);
        for (std::size_t m = 0; m < c.grid.size(); ++m) {
          if (!(c.grid[m] >= 0.0 && c.grid[m] <= 1.0)) throw DomainError("grid point outside [0, 1]" + where);
          if (m > 0 && c.grid[m] < c.grid[m - 1]) throw InvalidConfiguration("grid not sorted" + where);
          if (!std::isfinite(c.values[m])) throw InvalidConfiguration("non-finite value" + where);
        }
      }
  }

 private:
  int n_ = 0;
  int p_ = 0;
  std::vector<Curve> curves_;
  std::vector<std::string> labels_;
  std::vector<std::string> subject_ids_;
};

inline constexpr std::string_view kDatasetHeader = "subject_id,function_id,grid_point,value";

inline std::string format_double(double x) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, res.ptr);
}

inline void write_dataset_csv(std::ostream& os, const FunctionalDataset& data) {
  os << kDatasetHeader << '\n';
  for (int i = 0; i < data.n(); ++i)
    for (int j = 0; j < data.p(); ++j) {
      const Curve& c = data.curve(i, j);
      for (std::size_t m = 0; m < c.grid.size(); ++m)
        os << data.subject_ids()[i] << ',' << data.labels()[j] << ',' << format_double(c.grid[m]) << ','
           << format_double(c.values[m]) << '\n';
    }
}

namespace detail {

inline double parse_double(std::string_view s, std::size_t line, const char* field) {
  double x = 0.0;
  while (!s.empty() && s.front() == ' ') s.remove_prefix(1);
  while (!s.empty() && s.back() == ' ') s.remove_suffix(1);
  auto res = std::from_chars(s.data(), s.data() + s.size(), x);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw ParseError(line, std::string("cannot parse ") + field + " '" + std::string(s) + "'");
  return x;
}

}  // namespace detail

/// Long-format CSV with header subject_id,function_id,grid_point,value.
/// Subjects and functions are indexed in order of first appearance; every
/// (subject, function) pair must have at least one row.
inline FunctionalDataset read_dataset_csv(std::istream& is) {
  std::string line;
  std::size_t lineno = 0;
  if (!std::getline(is, line)) throw ParseError(1, "empty dataset file");
  ++lineno;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) line.erase(0, 3);  // BOM
  if (line != kDatasetHeader) throw ParseError(lineno, "expected header '" + std::string(kDatasetHeader) + "'");

  std::map<std::string, int> subject_index, function_index;
  std::vector<std::string> subjects, functions;
  struct Row {
    int i, j;
    double w, v;
  };
  std::vector<Row> rows;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string_view> fields;
    std::string_view rest(line);
    for (;;) {
      auto pos = rest.find(',');
      fields.push_back(rest.substr(0, pos));
      if (pos == std::string_view::npos) break;
      rest.remove_prefix(pos + 1);
    }
    if (fields.size() != 4) throw ParseError(lineno, "expected 4 fields, found " + std::to_string(fields.size()));
    if (fields[0].empty() || fields[1].empty()) throw ParseError(lineno, "empty subject or function id");
    auto [sit, snew] = subject_index.emplace(std::string(fields[0]), static_cast<int>(subjects.size()));
    if (snew) subjects.emplace_back(fields[0]);
    auto [fit, fnew] = function_index.emplace(std::string(fields[1]), static_cast<int>(functions.size()));
    if (fnew) functions.emplace_back(fields[1]);
    double w = detail::parse_double(fields[2], lineno, "grid_point");
    double v = detail::parse_double(fields[3], lineno, "value");
    if (!(w >= 0.0 && w <= 1.0)) throw ParseError(lineno, "grid_point outside [0, 1]");
    if (!std::isfinite(v)) throw ParseError(lineno, "value is not finite");
    rows.push_back({sit->second, fit->second, w, v});
  }
  const int n = static_cast<int>(subjects.size()), p = static_cast<int>(functions.size());
  if (p == 0) throw ParseError(lineno, "dataset contains no observations");
  std::vector<Curve> curves(static_cast<std::size_t>(n) * static_cast<std::size_t>(p));
  for (const Row& r : rows) {
    Curve& c = curves[static_cast<std::size_t>(r.i * p + r.j)];
    c.grid.push_back(r.w);
    c.values.push_back(r.v);
  }
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < p; ++j) {
      Curve& c = curves[static_cast<std::size_t>(i * p + j)];
      if (c.grid.empty())
        throw ParseError(lineno, "subject '" + subjects[i] + "' has no observations for function '" + functions[j] + "'");
      std::vector<std::size_t> idx(c.grid.size());
      std::iota(idx.begin(), idx.end(), 0);
      std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return c.grid[a] < c.grid[b]; });
      Curve sorted;
      for (auto k : idx) {
        sorted.grid.push_back(c.grid[k]);
        sorted.values.push_back(c.values[k]);
      }
      c = std::move(sorted);
    }
  return FunctionalDataset(n, p, std::move(curves), std::move(functions), std::move(subjects));
}

inline FunctionalDataset read_dataset_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidConfiguration("cannot open dataset " + path);
  return read_dataset_csv(in);
}

}  // namespace fdag
