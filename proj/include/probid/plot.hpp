#pragma once

// Static SVG charts rendered from the CSV outputs: objective-space scatter
// with the frontier overlaid, and line charts for parameter sweeps.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "probid/core_types.hpp"

namespace probid {

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string& name) const {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw ConfigError("CSV has no column '" + name + "'");
    return static_cast<std::size_t>(it - header.begin());
  }

  /// Numeric column; empty or non-numeric cells become NaN.
  std::vector<double> numbers(const std::string& name) const {
    const std::size_t c = column(name);
    std::vector<double> out;
    out.reserve(rows.size());
    for (const auto& r : rows) {
      double v = std::numeric_limits<double>::quiet_NaN();
      if (c < r.size() && !r[c].empty()) {
        try {
          std::size_t used = 0;
          v = std::stod(r[c], &used);
          if (used != r[c].size()) v = std::numeric_limits<double>::quiet_NaN();
        } catch (const std::exception&) {
        }
      }
      out.push_back(v);
    }
    return out;
  }
};

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  for (std::string cell; std::getline(ss, cell, ',');) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline CsvTable read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open CSV '" + path + "'");
  CsvTable t;
  std::string line;
  if (!std::getline(in, line) || line.empty()) throw ConfigError("CSV '" + path + "' is empty");
  t.header = split_csv_line(line);
  while (std::getline(in, line)) {
    if (!line.empty()) t.rows.push_back(split_csv_line(line));
  }
  if (t.rows.empty()) throw ConfigError("CSV '" + path + "' has no data rows");
  return t;
}

struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};

namespace detail {

struct Axis {
  double lo = 0.0;
  double hi = 1.0;
  std::vector<double> ticks;
};

inline Axis nice_axis(double lo, double hi) {
  if (!std::isfinite(lo) || !std::isfinite(hi)) lo = 0.0, hi = 1.0;
  if (hi <= lo) {
    const double pad = lo == 0.0 ? 1.0 : 0.5 * std::abs(lo);
    lo -= pad;
    hi += pad;
  }
  const double raw = (hi - lo) / 5.0;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  double step = mag;
  for (double m : {1.0, 2.0, 5.0, 10.0}) {
    step = m * mag;
    if (step >= raw) break;
  }
  Axis a;
  a.lo = std::floor(lo / step) * step;
  a.hi = std::ceil(hi / step) * step;
  for (double v = a.lo; v <= a.hi + 0.5 * step; v += step) a.ticks.push_back(std::abs(v) < 1e-12 * step ? 0.0 : v);
  return a;
}

inline std::string fmt(double v) {
  std::ostringstream ss;
  ss.precision(4);
  ss << v;
  return ss.str();
}

inline std::string escape(const std::string& s) {
  std::string out;
  for (char ch : s) {
    switch (ch) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += ch;
    }
  }
  return out;
}

inline const char* palette(std::size_t i) {
  static const char* colors[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#9467bd", "#8c564b", "#e377c2", "#17becf"};
  return colors[i % 7];
}

/// Plot frame shared by both chart kinds.
class Canvas {
 public:
  static constexpr double kWidth = 720, kHeight = 480, kLeft = 70, kRight = 180, kTop = 40, kBottom = 55;

  Canvas(const std::string& title, const std::string& xlabel, const std::string& ylabel, Axis x, Axis y)
      : x_(std::move(x)), y_(std::move(y)) {
    svg_ << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
         << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
         << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
         << "<text x=\"" << kLeft << "\" y=\"22\" font-size=\"15\">" << escape(title) << "</text>\n";
    const double x0 = kLeft, x1 = kWidth - kRight, y0 = kHeight - kBottom, y1 = kTop;
    svg_ << "<rect x=\"" << x0 << "\" y=\"" << y1 << "\" width=\"" << x1 - x0 << "\" height=\"" << y0 - y1
         << "\" fill=\"none\" stroke=\"#333\"/>\n";
    for (double t : x_.ticks) {
      const double px = sx(t);
      svg_ << "<line x1=\"" << px << "\" y1=\"" << y0 << "\" x2=\"" << px << "\" y2=\"" << y1
           << "\" stroke=\"#e5e5e5\"/>\n<text x=\"" << px << "\" y=\"" << y0 + 16 << "\" text-anchor=\"middle\">"
           << fmt(t) << "</text>\n";
    }
    for (double t : y_.ticks) {
      const double py = sy(t);
      svg_ << "<line x1=\"" << x0 << "\" y1=\"" << py << "\" x2=\"" << x1 << "\" y2=\"" << py
           << "\" stroke=\"#e5e5e5\"/>\n<text x=\"" << x0 - 6 << "\" y=\"" << py + 4 << "\" text-anchor=\"end\">"
           << fmt(t) << "</text>\n";
    }
    svg_ << "<text x=\"" << (x0 + x1) / 2 << "\" y=\"" << kHeight - 15 << "\" text-anchor=\"middle\">" << escape(xlabel)
         << "</text>\n<text transform=\"translate(18," << (y0 + y1) / 2
         << ") rotate(-90)\" text-anchor=\"middle\">" << escape(ylabel) << "</text>\n";
  }

  double sx(double v) const { return kLeft + (v - x_.lo) / (x_.hi - x_.lo) * (kWidth - kRight - kLeft); }
  double sy(double v) const { return kHeight - kBottom - (v - y_.lo) / (y_.hi - y_.lo) * (kHeight - kBottom - kTop); }

  void circle(double x, double y, double r, const char* fill, double opacity = 1.0) {
    svg_ << "<circle cx=\"" << sx(x) << "\" cy=\"" << sy(y) << "\" r=\"" << r << "\" fill=\"" << fill
         << "\" fill-opacity=\"" << opacity << "\"/>\n";
  }

  void diamond(double x, double y, double r, const char* fill) {
    const double cx = sx(x), cy = sy(y);
    svg_ << "<polygon points=\"" << cx << ',' << cy - r << ' ' << cx + r << ',' << cy << ' ' << cx << ',' << cy + r
         << ' ' << cx - r << ',' << cy << "\" fill=\"" << fill << "\" stroke=\"black\" stroke-width=\"0.5\"/>\n";
  }

  void polyline(const std::vector<std::pair<double, double>>& pts, const char* stroke, bool dashed = false) {
    svg_ << "<polyline fill=\"none\" stroke=\"" << stroke << "\" stroke-width=\"1.8\""
         << (dashed ? " stroke-dasharray=\"5,3\"" : "") << " points=\"";
    for (const auto& [x, y] : pts) svg_ << sx(x) << ',' << sy(y) << ' ';
    svg_ << "\"/>\n";
  }

  enum class Marker { circle, diamond, line };

  void legend(const std::vector<std::pair<std::string, std::pair<Marker, const char*>>>& entries) {
    const double x = kWidth - kRight + 15;
    double y = kTop + 10;
    svg_ << "<g class=\"legend\">\n";
    for (const auto& [label, style] : entries) {
      const auto [marker, color] = style;
      if (marker == Marker::circle) {
        svg_ << "<circle cx=\"" << x + 6 << "\" cy=\"" << y << "\" r=\"4\" fill=\"" << color << "\"/>\n";
      } else if (marker == Marker::diamond) {
        svg_ << "<polygon points=\"" << x + 6 << ',' << y - 6 << ' ' << x + 12 << ',' << y << ' ' << x + 6 << ','
             << y + 6 << ' ' << x << ',' << y << "\" fill=\"" << color << "\" stroke=\"black\" stroke-width=\"0.5\"/>\n";
      } else {
        svg_ << "<line x1=\"" << x << "\" y1=\"" << y << "\" x2=\"" << x + 14 << "\" y2=\"" << y << "\" stroke=\"" << color
             << "\" stroke-width=\"2\"/>\n";
      }
      svg_ << "<text x=\"" << x + 20 << "\" y=\"" << y + 4 << "\">" << escape(label) << "</text>\n";
      y += 20;
    }
    svg_ << "</g>\n";
  }

  std::string finish() {
    svg_ << "</svg>\n";
    return svg_.str();
  }

 private:
  Axis x_, y_;
  std::ostringstream svg_;
};

inline std::pair<double, double> finite_range(std::initializer_list<const std::vector<double>*> cols) {
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto* c : cols) {
    for (double v : *c) {
      if (std::isfinite(v)) lo = std::min(lo, v), hi = std::max(hi, v);
    }
  }
  return {lo, hi};
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  out << text;
  if (!out) throw Error("write failed for '" + path + "'");
}

}  // namespace detail

struct ScatterInput {
  std::vector<double> cost, value;
  std::vector<bool> on_frontier;
  std::vector<Series> overlays;  // e.g. model episodes, x = cost, y = value
};

/// Dataset cloud in grey, frontier members as diamonds joined in cost order,
/// overlays as colored points.
inline std::string render_scatter(const ScatterInput& in, const std::string& title = "Objective space") {
  if (in.cost.empty()) throw ConfigError("scatter plot has no points");
  std::vector<double> xs = in.cost, ys = in.value;
  for (const Series& s : in.overlays) {
    xs.insert(xs.end(), s.x.begin(), s.x.end());
    ys.insert(ys.end(), s.y.begin(), s.y.end());
  }
  const auto [xlo, xhi] = detail::finite_range({&xs});
  const auto [ylo, yhi] = detail::finite_range({&ys});
  detail::Canvas cv(title, "cost", "return", detail::nice_axis(std::min(0.0, xlo), xhi),
                    detail::nice_axis(std::min(0.0, ylo), yhi));
  std::vector<std::pair<double, double>> front;
  for (std::size_t i = 0; i < in.cost.size(); ++i) {
    if (in.on_frontier[i]) front.emplace_back(in.cost[i], in.value[i]);
    else cv.circle(in.cost[i], in.value[i], 2.5, "#9a9a9a", 0.6);
  }
  for (std::size_t k = 0; k < in.overlays.size(); ++k) {
    const Series& s = in.overlays[k];
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (std::isfinite(s.x[i]) && std::isfinite(s.y[i])) cv.circle(s.x[i], s.y[i], 3.0, detail::palette(k + 1), 0.8);
    }
  }
  std::sort(front.begin(), front.end());
  cv.polyline(front, "#d62728", true);
  for (const auto& [x, y] : front) cv.diamond(x, y, 5.0, "#d62728");

  std::vector<std::pair<std::string, std::pair<detail::Canvas::Marker, const char*>>> legend{
      {"dataset", {detail::Canvas::Marker::circle, "#9a9a9a"}},
      {"Pareto frontier", {detail::Canvas::Marker::diamond, "#d62728"}}};
  for (std::size_t k = 0; k < in.overlays.size(); ++k) {
    legend.push_back({in.overlays[k].label, {detail::Canvas::Marker::circle, detail::palette(k + 1)}});
  }
  cv.legend(legend);
  return cv.finish();
}

/// One line per series.
inline std::string render_lines(const std::vector<Series>& series, const std::string& title, const std::string& xlabel,
                                const std::string& ylabel) {
  if (series.empty()) throw ConfigError("line chart has no series");
  std::vector<double> xs, ys;
  for (const Series& s : series) {
    if (s.x.empty()) throw ConfigError("series '" + s.label + "' has no points");
    xs.insert(xs.end(), s.x.begin(), s.x.end());
    ys.insert(ys.end(), s.y.begin(), s.y.end());
  }
  const auto [xlo, xhi] = detail::finite_range({&xs});
  const auto [ylo, yhi] = detail::finite_range({&ys});
  detail::Canvas cv(title, xlabel, ylabel, detail::nice_axis(xlo, xhi), detail::nice_axis(std::min(0.0, ylo), yhi));
  std::vector<std::pair<std::string, std::pair<detail::Canvas::Marker, const char*>>> legend;
  for (std::size_t k = 0; k < series.size(); ++k) {
    const Series& s = series[k];
    std::vector<std::pair<double, double>> pts;
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (std::isfinite(s.x[i]) && std::isfinite(s.y[i])) pts.emplace_back(s.x[i], s.y[i]);
    }
    cv.polyline(pts, detail::palette(k));
    for (const auto& [x, y] : pts) cv.circle(x, y, 3.0, detail::palette(k));
    legend.push_back({s.label, {detail::Canvas::Marker::line, detail::palette(k)}});
  }
  cv.legend(legend);
  return cv.finish();
}

/// Scatter from the pareto diagnostic CSV plus optional per-episode CSVs
/// (columns value, cost). Nothing is written if any input is unusable.
inline void plot_scatter_files(const std::string& pareto_csv, const std::vector<std::string>& episode_csvs,
                               const std::vector<std::string>& labels, const std::string& out_path) {
  const CsvTable t = read_csv(pareto_csv);
  ScatterInput in;
  in.cost = t.numbers("c");
  in.value = t.numbers("r");
  for (double f : t.numbers("on_frontier")) in.on_frontier.push_back(f == 1.0);
  for (std::size_t i = 0; i < episode_csvs.size(); ++i) {
    const CsvTable e = read_csv(episode_csvs[i]);
    const std::size_t ep = e.column("episode");
    Series s;
    s.label = i < labels.size() ? labels[i] : episode_csvs[i];
    const auto cost = e.numbers("cost");
    const auto value = e.numbers("value");
    for (std::size_t r = 0; r < e.rows.size(); ++r) {
      if (e.rows[r][ep] == "mean") continue;
      s.x.push_back(cost[r]);
      s.y.push_back(value[r]);
    }
    in.overlays.push_back(std::move(s));
  }
  detail::write_text(out_path, render_scatter(in));
}

/// Line chart of `metric` against `x_column` with one series per CSV.
inline void plot_sweep_files(const std::vector<std::string>& csvs, const std::vector<std::string>& labels,
                             const std::string& x_column, const std::string& metric, const std::string& out_path) {
  if (csvs.empty()) throw ConfigError("sweep plot needs at least one CSV");
  std::vector<Series> series;
  for (std::size_t i = 0; i < csvs.size(); ++i) {
    const CsvTable t = read_csv(csvs[i]);
    series.push_back({i < labels.size() ? labels[i] : csvs[i], t.numbers(x_column), t.numbers(metric)});
  }
  detail::write_text(out_path, render_lines(series, metric + " vs " + x_column, x_column, metric));
}

}  // namespace probid
