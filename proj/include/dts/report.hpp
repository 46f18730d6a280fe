#pragma once

// Folding metrics CSVs into tables and SVG line charts.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <iomanip>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "dts/dataset.hpp"
#include "dts/error.hpp"

namespace dts {

struct MetricsTable {
  std::string run_id;
  std::vector<std::string> columns;
  std::vector<std::vector<std::optional<double>>> rows;

  int column(const std::string& name) const {
    const auto it = std::find(columns.begin(), columns.end(), name);
    return it == columns.end() ? -1 : static_cast<int>(it - columns.begin());
  }
  int num_classes() const {
    int n = 0;
    while (column("iou_" + std::to_string(n)) >= 0) ++n;
    return n;
  }
  std::vector<std::pair<double, double>> series(const std::string& name) const {
    const int x = column("iter"), y = column(name);
    std::vector<std::pair<double, double>> out;
    if (x < 0 || y < 0) return out;
    for (const auto& r : rows)
      if (r[static_cast<std::size_t>(x)] && r[static_cast<std::size_t>(y)])
        out.emplace_back(*r[static_cast<std::size_t>(x)], *r[static_cast<std::size_t>(y)]);
    return out;
  }
  const std::vector<std::optional<double>>& last() const {
    if (rows.empty()) throw FormatError("metrics table '" + run_id + "' has no rows");
    return rows.back();
  }
};

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline MetricsTable parse_metrics_csv(const std::string& text, const std::string& source) {
  MetricsTable t;
  t.run_id = source;
  std::stringstream ss(text);
  std::string line;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cells = split_csv_line(line);
    if (t.columns.empty()) {
      t.columns = std::move(cells);
      if (t.column("iter") != 0 || t.column("miou") < 0) {
        throw FormatError(source + ":1: metrics header must start with iter and contain miou");
      }
      continue;
    }
    if (cells.size() != t.columns.size()) {
      throw FormatError(source + ":" + std::to_string(lineno) + ": expected " + std::to_string(t.columns.size()) +
                        " fields, found " + std::to_string(cells.size()));
    }
    std::vector<std::optional<double>> row;
    for (const std::string& c : cells) {
      if (c.empty()) {
        row.emplace_back();
        continue;
      }
      try {
        std::size_t used = 0;
        const double v = std::stod(c, &used);
        if (used != c.size()) throw std::invalid_argument(c);
        row.emplace_back(v);
      } catch (const std::exception&) {
        throw FormatError(source + ":" + std::to_string(lineno) + ": not a number: '" + c + "'");
      }
    }
    if (!row[0]) throw FormatError(source + ":" + std::to_string(lineno) + ": missing iteration");
    if (!t.rows.empty() && *row[0] <= *t.rows.back()[0]) {
      throw FormatError(source + ":" + std::to_string(lineno) + ": iterations must be strictly increasing");
    }
    t.rows.push_back(std::move(row));
  }
  if (t.columns.empty()) throw FormatError(source + ": empty metrics file");
  return t;
}

inline MetricsTable read_metrics_csv(const std::filesystem::path& path, std::string run_id = {}) {
  MetricsTable t = parse_metrics_csv(io::slurp(path), path.string());
  t.run_id = run_id.empty() ? path.parent_path().filename().string() : std::move(run_id);
  return t;
}

/// Runs as columns, classes as rows, mIoU last; values in percent.
inline std::string per_class_table(const std::vector<MetricsTable>& runs, const std::vector<std::string>& class_names = {}) {
  if (runs.empty()) throw ConfigError("report needs at least one run");
  int classes = 0;
  for (const MetricsTable& r : runs) classes = std::max(classes, r.num_classes());
  std::size_t label_w = 6;
  for (int c = 0; c < classes; ++c) {
    const std::string n = c < static_cast<int>(class_names.size()) ? class_names[static_cast<std::size_t>(c)] : "class " + std::to_string(c);
    label_w = std::max(label_w, n.size());
  }
  std::vector<std::size_t> widths;
  for (const MetricsTable& r : runs) widths.push_back(std::max<std::size_t>(7, r.run_id.size()));

  std::ostringstream os;
  const auto cell = [&](std::size_t i, const std::optional<double>& v) {
    std::ostringstream c;
    if (v && !std::isnan(*v)) c << std::fixed << std::setprecision(1) << 100.0 * *v;
    else c << "-";
    os << "  " << std::setw(static_cast<int>(widths[i])) << c.str();
  };
  os << std::left << std::setw(static_cast<int>(label_w)) << "" << std::right;
  for (std::size_t i = 0; i < runs.size(); ++i) os << "  " << std::setw(static_cast<int>(widths[i])) << runs[i].run_id;
  os << '\n';
  for (int c = 0; c < classes; ++c) {
    const std::string n = c < static_cast<int>(class_names.size()) ? class_names[static_cast<std::size_t>(c)] : "class " + std::to_string(c);
    os << std::left << std::setw(static_cast<int>(label_w)) << n << std::right;
    for (std::size_t i = 0; i < runs.size(); ++i) {
      const int col = runs[i].column("iou_" + std::to_string(c));
      cell(i, col < 0 ? std::nullopt : runs[i].last()[static_cast<std::size_t>(col)]);
    }
    os << '\n';
  }
  os << std::left << std::setw(static_cast<int>(label_w)) << "mIoU" << std::right;
  for (std::size_t i = 0; i < runs.size(); ++i) cell(i, runs[i].last()[static_cast<std::size_t>(runs[i].column("miou"))]);
  os << '\n';
  return os.str();
}

struct ChartSeries {
  std::string label;
  std::vector<std::pair<double, double>> points;
  bool dashed = false;
};

inline std::string svg_escape(const std::string& s) {
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

/// Line chart with y fixed to [0, 1].
inline std::string svg_line_chart(const std::vector<ChartSeries>& series, const std::string& title,
                                  const std::string& x_label = "iteration") {
  constexpr double kW = 720, kH = 420, kLeft = 60, kRight = 190, kTop = 40, kBottom = 50;
  constexpr const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                                     "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
  double x_max = 1.0;
  for (const ChartSeries& s : series)
    for (const auto& p : s.points) x_max = std::max(x_max, p.first);
  const double pw = kW - kLeft - kRight, ph = kH - kTop - kBottom;
  const auto sx = [&](double x) { return kLeft + pw * x / x_max; };
  const auto sy = [&](double y) { return kTop + ph * (1.0 - std::clamp(y, 0.0, 1.0)); };

  std::ostringstream os;
  os << std::fixed << std::setprecision(2);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH << "\" viewBox=\"0 0 " << kW
     << ' ' << kH << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << kW / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << svg_escape(title)
     << "</text>\n";
  for (int i = 0; i <= 5; ++i) {
    const double v = i / 5.0;
    os << "<line x1=\"" << kLeft << "\" x2=\"" << kLeft + pw << "\" y1=\"" << sy(v) << "\" y2=\"" << sy(v)
       << "\" stroke=\"#ddd\"/>\n";
    os << "<text x=\"" << kLeft - 6 << "\" y=\"" << sy(v) + 4 << "\" text-anchor=\"end\">" << std::setprecision(1) << v
       << std::setprecision(2) << "</text>\n";
  }
  for (int i = 0; i <= 4; ++i) {
    const double v = x_max * i / 4.0;
    os << "<text x=\"" << sx(v) << "\" y=\"" << kTop + ph + 18 << "\" text-anchor=\"middle\">"
       << static_cast<long long>(std::llround(v)) << "</text>\n";
  }
  os << "<rect x=\"" << kLeft << "\" y=\"" << kTop << "\" width=\"" << pw << "\" height=\"" << ph
     << "\" fill=\"none\" stroke=\"#333\"/>\n";
  os << "<text x=\"" << kLeft + pw / 2 << "\" y=\"" << kH - 12 << "\" text-anchor=\"middle\">" << svg_escape(x_label)
     << "</text>\n";

  for (std::size_t i = 0; i < series.size(); ++i) {
    const ChartSeries& s = series[i];
    const char* color = kColors[i % std::size(kColors)];
    if (!s.points.empty()) {
      os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\""
         << (s.dashed ? " stroke-dasharray=\"6 4\"" : "") << " points=\"";
      for (const auto& p : s.points) os << sx(p.first) << ',' << sy(p.second) << ' ';
      os << "\"/>\n";
    }
    const double ly = kTop + 10 + 18.0 * static_cast<double>(i);
    os << "<line x1=\"" << kLeft + pw + 12 << "\" x2=\"" << kLeft + pw + 36 << "\" y1=\"" << ly << "\" y2=\"" << ly
       << "\" stroke=\"" << color << "\" stroke-width=\"2\"" << (s.dashed ? " stroke-dasharray=\"6 4\"" : "")
       << "/>\n";
    os << "<text x=\"" << kLeft + pw + 42 << "\" y=\"" << ly + 4 << "\">" << svg_escape(s.label) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

/// mIoU solid and Prob dashed, one colour pair per run.
inline std::string metrics_chart(const std::vector<MetricsTable>& runs) {
  std::vector<ChartSeries> series;
  for (const MetricsTable& r : runs) {
    series.push_back({r.run_id + " mIoU", r.series("miou"), false});
    auto prob = r.series("prob");
    if (!prob.empty()) series.push_back({r.run_id + " Prob", std::move(prob), true});
  }
  return svg_line_chart(series, "target mIoU / Prob");
}

}  // namespace dts
