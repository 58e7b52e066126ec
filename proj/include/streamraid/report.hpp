#pragma once

// Metrics report rows, CSV serialization and a dependency-free SVG chart.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "streamraid/errors.hpp"

namespace streamraid {

struct ReportRow {
  std::string dataset;
  std::string attack;
  std::string objective;
  double epsilon = 0.0;
  std::size_t k = 0;
  std::size_t max_count = 0;
  double eta = 0.0;
  std::uint64_t seed = 0;
  std::string metric;
  double value = 0.0;
  double wall_time_s = 0.0;

  auto sort_key() const { return std::tie(dataset, attack, objective, epsilon, k, max_count, eta, seed, metric); }
};

inline const std::vector<std::string>& metric_names() {
  static const std::vector<std::string> names = {"tasr",           "tmse",      "fool_rate", "fool_mse",
                                                 "surprise_error", "clean_acc", "clean_mse"};
  return names;
}

inline constexpr const char* kCsvHeader = "dataset,attack,objective,epsilon,k,max_count,eta,seed,metric,value,wall_time_s";

struct MetricsReport {
  std::vector<ReportRow> rows;

  void add(ReportRow row) {
    const auto& names = metric_names();
    if (std::find(names.begin(), names.end(), row.metric) == names.end()) {
      throw DomainError("report: unknown metric '" + row.metric + "'");
    }
    rows.push_back(std::move(row));
  }
  void append(const MetricsReport& other) { rows.insert(rows.end(), other.rows.begin(), other.rows.end()); }
  void sort() {
    std::stable_sort(rows.begin(), rows.end(), [](const ReportRow& a, const ReportRow& b) { return a.sort_key() < b.sort_key(); });
  }
  bool empty() const { return rows.empty(); }
};

// Shortest decimal that round-trips, '.' separator, no locale.
inline std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  for (int precision = 1; precision <= 17; ++precision) {
    std::snprintf(buf, sizeof buf, "%.*g", precision, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return buf;
}

namespace detail {
inline std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}
}  // namespace detail

inline std::string to_csv(MetricsReport report) {
  report.sort();
  std::ostringstream os;
  os << kCsvHeader << "\n";
  for (const auto& r : report.rows) {
    os << detail::csv_escape(r.dataset) << ',' << detail::csv_escape(r.attack) << ',' << detail::csv_escape(r.objective)
       << ',' << format_number(r.epsilon) << ',' << r.k << ',' << r.max_count << ',' << format_number(r.eta) << ','
       << r.seed << ',' << r.metric << ',' << format_number(r.value) << ',' << format_number(r.wall_time_s) << "\n";
  }
  return os.str();
}

inline void write_csv(const MetricsReport& report, const std::string& path) {
  if (report.empty()) throw DomainError("write_csv: report is empty");
  const std::string text = to_csv(report);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("write_csv: cannot write " + path);
  out << text;
}

inline MetricsReport parse_csv_report(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kCsvHeader) throw DataError("report csv: unexpected header");
  MetricsReport report;
  std::size_t row_no = 1;
  while (std::getline(in, line)) {
    ++row_no;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::string cell;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
      const char c = line[i];
      if (quoted) {
        if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
          cell += '"';
          ++i;
        } else if (c == '"') {
          quoted = false;
        } else {
          cell += c;
        }
      } else if (c == '"') {
        quoted = true;
      } else if (c == ',') {
        cells.push_back(cell);
        cell.clear();
      } else {
        cell += c;
      }
    }
    cells.push_back(cell);
    if (cells.size() != 11) throw DataError("report csv: row " + std::to_string(row_no) + " has wrong cell count");
    try {
      ReportRow r{cells[0],
                  cells[1],
                  cells[2],
                  std::stod(cells[3]),
                  std::stoul(cells[4]),
                  std::stoul(cells[5]),
                  std::stod(cells[6]),
                  std::stoull(cells[7]),
                  cells[8],
                  std::stod(cells[9]),
                  std::stod(cells[10])};
      report.add(std::move(r));
    } catch (const std::logic_error&) {
      throw DataError("report csv: unparsable number in row " + std::to_string(row_no));
    }
  }
  return report;
}

inline MetricsReport read_csv_report(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("report csv: cannot open " + path);
  return parse_csv_report(in);
}

// ------------------------------------------------------------------ svg --

enum class SweepAxis { kEpsilon, kK, kMaxCount, kEta, kTargetFrequency };

inline const char* axis_name(SweepAxis a) {
  switch (a) {
    case SweepAxis::kEpsilon: return "epsilon";
    case SweepAxis::kK: return "k";
    case SweepAxis::kMaxCount: return "max_count";
    case SweepAxis::kEta: return "eta";
    case SweepAxis::kTargetFrequency: return "target_frequency";
  }
  return "?";
}

inline double axis_value(const ReportRow& r, SweepAxis a) {
  switch (a) {
    case SweepAxis::kEpsilon: return r.epsilon;
    case SweepAxis::kK: return static_cast<double>(r.k);
    case SweepAxis::kMaxCount: return static_cast<double>(r.max_count);
    case SweepAxis::kEta: return r.eta;
    case SweepAxis::kTargetFrequency: {
      const auto pos = r.objective.rfind(":f");
      return pos == std::string::npos ? 0.0 : std::stod(r.objective.substr(pos + 2));
    }
  }
  return 0.0;
}

namespace detail {
inline std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

inline std::string fixed(double v, int digits = 2) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}
}  // namespace detail

// 800x500 line chart of `metric` against `axis`, one polyline per attack,
// values averaged over seeds and any other varying columns.
inline std::string render_svg(const MetricsReport& report, SweepAxis axis, const std::string& metric) {
  std::map<std::string, std::map<double, std::pair<double, int>>> series;
  for (const auto& r : report.rows) {
    if (r.metric != metric) continue;
    auto& cell = series[r.attack][axis_value(r, axis)];
    cell.first += r.value;
    cell.second += 1;
  }
  if (series.empty()) throw DomainError("render_svg: no rows for metric '" + metric + "'");

  double xmin = INFINITY, xmax = -INFINITY, ymin = INFINITY, ymax = -INFINITY;
  for (auto& [name, points] : series) {
    for (auto& [x, acc] : points) {
      const double y = acc.first / acc.second;
      xmin = std::min(xmin, x); xmax = std::max(xmax, x);
      ymin = std::min(ymin, y); ymax = std::max(ymax, y);
    }
  }
  if (xmax == xmin) { xmin -= 0.5; xmax += 0.5; }
  if (ymax == ymin) { ymin -= 0.5; ymax += 0.5; }

  constexpr double kWidth = 800, kHeight = 500, kLeft = 80, kRight = 720, kTop = 50, kBottom = 450;
  auto px = [&](double x) { return kLeft + (x - xmin) / (xmax - xmin) * (kRight - kLeft); };
  auto py = [&](double y) { return kBottom - (y - ymin) / (ymax - ymin) * (kBottom - kTop); };
  static const char* palette[] = {"#d62728", "#2ca02c", "#1f77b4", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};

  std::ostringstream os;
  os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
     << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"800\" height=\"500\" viewBox=\"0 0 " << kWidth << ' '
     << kHeight << "\">\n"
     << "<rect x=\"0\" y=\"0\" width=\"800\" height=\"500\" fill=\"white\"/>\n"
     << "<line x1=\"80\" y1=\"450\" x2=\"720\" y2=\"450\" stroke=\"black\"/>\n"
     << "<line x1=\"80\" y1=\"50\" x2=\"80\" y2=\"450\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double xv = xmin + (xmax - xmin) * i / 4.0, yv = ymin + (ymax - ymin) * i / 4.0;
    os << "<text x=\"" << detail::fixed(px(xv)) << "\" y=\"470\" font-size=\"12\" text-anchor=\"middle\">"
       << detail::fixed(xv, 3) << "</text>\n"
       << "<text x=\"72\" y=\"" << detail::fixed(py(yv) + 4) << "\" font-size=\"12\" text-anchor=\"end\">"
       << detail::fixed(yv, 3) << "</text>\n";
  }
  os << "<text x=\"400\" y=\"492\" font-size=\"14\" text-anchor=\"middle\">" << axis_name(axis) << "</text>\n"
     << "<text x=\"20\" y=\"250\" font-size=\"14\" text-anchor=\"middle\" transform=\"rotate(-90 20 250)\">"
     << detail::xml_escape(metric) << "</text>\n";
  std::size_t idx = 0;
  for (auto& [name, points] : series) {
    const char* color = palette[idx % 8];
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" data-attack=\""
       << detail::xml_escape(name) << "\" points=\"";
    bool first = true;
    for (auto& [x, acc] : points) {
      os << (first ? "" : " ") << detail::fixed(px(x)) << ',' << detail::fixed(py(acc.first / acc.second));
      first = false;
    }
    os << "\"/>\n"
       << "<text x=\"730\" y=\"" << 60 + 18 * idx << "\" font-size=\"12\" fill=\"" << color << "\">"
       << detail::xml_escape(name) << "</text>\n";
    ++idx;
  }
  os << "</svg>\n";
  return os.str();
}

inline void write_svg(const MetricsReport& report, SweepAxis axis, const std::string& metric, const std::string& path) {
  const std::string svg = render_svg(report, axis, metric);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("render_svg: cannot write " + path);
  out << svg;
}

}  // namespace streamraid
