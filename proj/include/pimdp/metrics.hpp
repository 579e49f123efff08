#pragma once

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace pimdp {

// One logging row of a training run. Fields that do not apply at a given step
// are NaN and serialize as empty cells.
struct MetricsRow {
  long step = 0;
  double train_return = std::nan("");
  double eval_return_mean = std::nan("");
  double eval_return_stderr = std::nan("");
  double td_loss = std::nan("");
  double gate_rate = std::nan("");
  double state_gate_rate = std::nan("");
  double disagreement_mean = std::nan("");
  double disagreement_p95 = std::nan("");
  double threshold = std::nan("");
  double label_fraction = std::nan("");
  double epsilon_or_alpha = std::nan("");
};

inline const char* kMetricsHeader =
    "step,train_return,eval_return_mean,eval_return_stderr,td_loss,gate_rate,"
    "state_gate_rate,disagreement_mean,disagreement_p95,threshold,label_fraction,"
    "epsilon_or_alpha";

namespace detail {
inline std::string format_cell(double v) {
  if (std::isnan(v)) return "";
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}
inline double parse_cell(const std::string& s) {
  if (s.empty()) return std::nan("");
  return std::stod(s);
}
}  // namespace detail

inline std::string metrics_to_csv(const std::vector<MetricsRow>& rows) {
  std::ostringstream os;
  os << kMetricsHeader << "\n";
  for (const auto& r : rows) {
    os << r.step << ',' << detail::format_cell(r.train_return) << ','
       << detail::format_cell(r.eval_return_mean) << ','
       << detail::format_cell(r.eval_return_stderr) << ',' << detail::format_cell(r.td_loss)
       << ',' << detail::format_cell(r.gate_rate) << ','
       << detail::format_cell(r.state_gate_rate) << ','
       << detail::format_cell(r.disagreement_mean) << ','
       << detail::format_cell(r.disagreement_p95) << ',' << detail::format_cell(r.threshold)
       << ',' << detail::format_cell(r.label_fraction) << ','
       << detail::format_cell(r.epsilon_or_alpha) << "\n";
  }
  return os.str();
}

inline std::vector<MetricsRow> metrics_from_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw std::runtime_error("metrics csv: empty stream");
  if (line != kMetricsHeader) throw std::runtime_error("metrics csv: unexpected header");
  std::vector<MetricsRow> rows;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ls(line);
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    cells.resize(12);
    MetricsRow r;
    r.step = std::stol(cells[0]);
    r.train_return = detail::parse_cell(cells[1]);
    r.eval_return_mean = detail::parse_cell(cells[2]);
    r.eval_return_stderr = detail::parse_cell(cells[3]);
    r.td_loss = detail::parse_cell(cells[4]);
    r.gate_rate = detail::parse_cell(cells[5]);
    r.state_gate_rate = detail::parse_cell(cells[6]);
    r.disagreement_mean = detail::parse_cell(cells[7]);
    r.disagreement_p95 = detail::parse_cell(cells[8]);
    r.threshold = detail::parse_cell(cells[9]);
    r.label_fraction = detail::parse_cell(cells[10]);
    r.epsilon_or_alpha = detail::parse_cell(cells[11]);
    rows.push_back(r);
  }
  return rows;
}

inline void write_metrics_file(const std::string& path, const std::vector<MetricsRow>& rows) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  os << metrics_to_csv(rows);
}

inline std::vector<MetricsRow> read_metrics_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open for reading: " + path);
  return metrics_from_csv(is);
}

}  // namespace pimdp
