#include "contraj/plot.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include "contraj/errors.hpp"

namespace contraj::plot {

namespace fs = std::filesystem;

namespace {

constexpr int kWidth = 640;
constexpr int kHeight = 420;
constexpr int kMargin = 56;

const char* kPalette[] = {"#3b6fb6", "#d1662f", "#4d9a51", "#b8442c",
                          "#7b5ea7", "#8c7b3e", "#c46a9b", "#5a5a5a"};

double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double quantile(std::vector<double> v, double q) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const double pos = q * (v.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(pos);
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - lo) * (v[hi] - v[lo]);
}

class Svg {
 public:
  Svg() {
    out_ << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\""
         << kHeight << "\" viewBox=\"0 0 " << kWidth << ' ' << kHeight << "\">\n";
    out_ << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  }

  void line(double x1, double y1, double x2, double y2, const std::string& stroke,
            double width = 1.0) {
    out_ << "<line x1=\"" << x1 << "\" y1=\"" << y1 << "\" x2=\"" << x2 << "\" y2=\"" << y2
         << "\" stroke=\"" << stroke << "\" stroke-width=\"" << width << "\"/>\n";
  }

  void polyline(const std::vector<std::pair<double, double>>& pts, const std::string& stroke) {
    out_ << "<polyline fill=\"none\" stroke=\"" << stroke << "\" stroke-width=\"1.5\" points=\"";
    for (const auto& [x, y] : pts) out_ << x << ',' << y << ' ';
    out_ << "\"/>\n";
  }

  void circle(double x, double y, double r, const std::string& fill) {
    out_ << "<circle cx=\"" << x << "\" cy=\"" << y << "\" r=\"" << r << "\" fill=\"" << fill
         << "\"/>\n";
  }

  void rect(double x, double y, double w, double h, const std::string& fill,
            const std::string& stroke = "none") {
    out_ << "<rect x=\"" << x << "\" y=\"" << y << "\" width=\"" << w << "\" height=\"" << h
         << "\" fill=\"" << fill << "\" stroke=\"" << stroke << "\"/>\n";
  }

  void text(double x, double y, const std::string& s, int size = 12,
            const std::string& anchor = "start") {
    out_ << "<text x=\"" << x << "\" y=\"" << y << "\" font-family=\"sans-serif\" font-size=\""
         << size << "\" text-anchor=\"" << anchor << "\">" << s << "</text>\n";
  }

  void polygon(const std::vector<std::pair<double, double>>& pts, const std::string& stroke) {
    out_ << "<polygon fill=\"" << stroke << "22\" stroke=\"" << stroke << "\" points=\"";
    for (const auto& [x, y] : pts) out_ << x << ',' << y << ' ';
    out_ << "\"/>\n";
  }

  void save(const fs::path& path) {
    out_ << "</svg>\n";
    std::ofstream f(path);
    if (!f) throw ParseError("cannot open for writing: " + path.string());
    f << out_.str();
  }

 private:
  std::ostringstream out_;
};

struct Axes {
  double min_x, max_x, min_y, max_y;
  double px(double x) const {
    return kMargin + (x - min_x) / std::max(1e-12, max_x - min_x) * (kWidth - 2 * kMargin);
  }
  double py(double y) const {
    return kHeight - kMargin -
           (y - min_y) / std::max(1e-12, max_y - min_y) * (kHeight - 2 * kMargin);
  }
  void draw(Svg& svg, const std::string& xlabel, const std::string& ylabel) const {
    svg.line(kMargin, kHeight - kMargin, kWidth - kMargin, kHeight - kMargin, "#222");
    svg.line(kMargin, kMargin, kMargin, kHeight - kMargin, "#222");
    svg.text(kWidth / 2.0, kHeight - 12, xlabel, 13, "middle");
    svg.text(14, kMargin - 10, ylabel, 13);
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.3g", max_y);
    svg.text(kMargin - 6, kMargin + 4, buf, 10, "end");
    std::snprintf(buf, sizeof(buf), "%.3g", min_y);
    svg.text(kMargin - 6, kHeight - kMargin, buf, 10, "end");
  }
};

double finite_or(double v, double fallback) { return std::isfinite(v) ? v : fallback; }

}  // namespace

void error_vs_task(const RunLog& log, const fs::path& svg_path, const fs::path& csv_path) {
  if (log.records.empty()) throw ContractError("error_vs_task: empty log");
  const int n = log.n_tasks();

  // median error per (train, eval) over demos and seeds
  std::map<std::pair<int, int>, std::vector<double>> cell;
  for (const RunRecord& r : log.records)
    for (double v : r.dtw) cell[{r.train_task, r.eval_task}].push_back(v);

  std::vector<std::vector<std::pair<int, double>>> series(n);  // per eval task
  double max_y = 0.0;
  for (auto& [key, values] : cell) {
    double m = median(values);
    if (!std::isfinite(m)) m = -1.0;  // plotted at the top band below
    series[key.second].push_back({key.first, m});
    if (std::isfinite(m)) max_y = std::max(max_y, m);
  }
  if (max_y <= 0.0) max_y = 1.0;

  std::ofstream csv(csv_path);
  csv << "eval_task,train_task,median_dtw\n";

  Svg svg;
  Axes ax{0.0, static_cast<double>(std::max(1, n - 1)), 0.0, max_y * 1.05};
  ax.draw(svg, "training stage", "median DTW");
  for (int j = 0; j < n; ++j) {
    std::sort(series[j].begin(), series[j].end());
    std::vector<std::pair<double, double>> pts;
    const std::string color = kPalette[j % 8];
    for (const auto& [stage, value] : series[j]) {
      const double y = value < 0.0 ? max_y * 1.05 : value;
      pts.push_back({ax.px(stage), ax.py(y)});
      csv << j << ',' << stage << ',' << (value < 0.0 ? "inf" : std::to_string(value)) << '\n';
    }
    if (pts.size() > 1) svg.polyline(pts, color);
    for (const auto& [x, y] : pts) svg.circle(x, y, 3.0, color);
    svg.text(kWidth - kMargin + 4, kMargin + 14 * j + 10, "task " + std::to_string(j), 10);
  }
  svg.save(svg_path);
}

void method_boxplot(const std::vector<std::pair<std::string, RunLog>>& logs,
                    const fs::path& svg_path, const fs::path& csv_path) {
  if (logs.empty()) throw ContractError("method_boxplot: no logs");
  struct Box {
    std::string name;
    double lo, q1, med, q3, hi;
  };
  std::vector<Box> boxes;
  double max_y = 0.0;
  for (const auto& [name, log] : logs) {
    if (log.records.empty()) throw ContractError("method_boxplot: empty log for " + name);
    std::vector<double> values;
    for (const RunRecord& r : log.records)
      for (double v : r.dtw) values.push_back(finite_or(v, 1e9));
    Box b{name, quantile(values, 0.05), quantile(values, 0.25), median(values),
          quantile(values, 0.75), quantile(values, 0.95)};
    max_y = std::max(max_y, b.hi);
    boxes.push_back(b);
  }
  if (max_y <= 0.0) max_y = 1.0;

  std::ofstream csv(csv_path);
  csv << "method,p5,q1,median,q3,p95\n";

  Svg svg;
  Axes ax{-0.5, boxes.size() - 0.5, 0.0, max_y * 1.05};
  ax.draw(svg, "method", "DTW");
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    const Box& b = boxes[i];
    const std::string color = kPalette[i % 8];
    const double cx = ax.px(static_cast<double>(i));
    const double half = 18.0;
    svg.line(cx, ax.py(b.lo), cx, ax.py(b.hi), color);
    svg.rect(cx - half, ax.py(b.q3), 2 * half, ax.py(b.q1) - ax.py(b.q3), color + "33", color);
    svg.line(cx - half, ax.py(b.med), cx + half, ax.py(b.med), color, 2.0);
    svg.text(cx, kHeight - kMargin + 16, b.name, 11, "middle");
    csv << b.name << ',' << b.lo << ',' << b.q1 << ',' << b.med << ',' << b.q3 << ',' << b.hi
        << '\n';
  }
  svg.save(svg_path);
}

void cl_radar(const std::vector<std::pair<std::string, metrics::CLReport>>& reports,
              const fs::path& svg_path) {
  if (reports.empty()) throw ContractError("cl_radar: no reports");
  const std::vector<std::string> axes_full{"ACC", "REM", "MS", "SSS", "TE", "FS"};
  const std::size_t k = reports.front().second.values().size();
  const double cx = kWidth / 2.0, cy = kHeight / 2.0, radius = 140.0;

  Svg svg;
  for (std::size_t a = 0; a < k; ++a) {
    const double ang = 2.0 * M_PI * a / k - M_PI / 2.0;
    svg.line(cx, cy, cx + radius * std::cos(ang), cy + radius * std::sin(ang), "#bbb");
    svg.text(cx + (radius + 16) * std::cos(ang), cy + (radius + 16) * std::sin(ang),
             axes_full[a % axes_full.size()], 11, "middle");
  }
  for (std::size_t i = 0; i < reports.size(); ++i) {
    const auto values = reports[i].second.values();
    std::vector<std::pair<double, double>> pts;
    for (std::size_t a = 0; a < values.size(); ++a) {
      const double ang = 2.0 * M_PI * a / values.size() - M_PI / 2.0;
      pts.push_back({cx + radius * values[a] * std::cos(ang),
                     cy + radius * values[a] * std::sin(ang)});
    }
    svg.polygon(pts, kPalette[i % 8]);
    svg.text(kMargin, kMargin + 14 * i, reports[i].first, 11);
  }
  svg.save(svg_path);
}

void timing_bars(const RunLog& log, const fs::path& svg_path, const fs::path& csv_path) {
  if (log.records.empty()) throw ContractError("timing_bars: empty log");
  const int n = log.n_tasks();
  std::vector<double> times(n, 0.0);
  for (const RunRecord& r : log.records) times[r.train_task] = r.wall_time_s;
  const double max_y = std::max(1e-12, *std::max_element(times.begin(), times.end()));

  std::ofstream csv(csv_path);
  csv << "task,wall_time_s\n";

  Svg svg;
  Axes ax{-0.5, n - 0.5, 0.0, max_y * 1.05};
  ax.draw(svg, "task", "training time [s]");
  for (int i = 0; i < n; ++i) {
    const double cx = ax.px(i);
    svg.rect(cx - 14, ax.py(times[i]), 28, ax.py(0) - ax.py(times[i]), "#3b6fb6");
    svg.text(cx, kHeight - kMargin + 16, std::to_string(i + 1), 11, "middle");
    csv << i << ',' << times[i] << '\n';
  }
  svg.save(svg_path);
}

}  // namespace contraj::plot
