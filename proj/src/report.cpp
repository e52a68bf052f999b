#include "densemtl/report.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <set>
#include <sstream>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

namespace densemtl {

namespace fs = std::filesystem;

namespace {

constexpr int kWidth = 800;
constexpr int kHeight = 500;
constexpr int kMargin = 60;

cv::Scalar palette(size_t i) {
  static const std::vector<cv::Scalar> colors{{180, 119, 31}, {14, 127, 255}, {44, 160, 44},  {40, 39, 214},
                                              {189, 103, 148}, {75, 86, 140},  {194, 119, 227}, {127, 127, 127},
                                              {34, 189, 188},  {207, 190, 23}};
  return colors[i % colors.size()];
}

cv::Mat canvas(const std::string& title) {
  cv::Mat img(kHeight, kWidth, CV_8UC3, cv::Scalar(255, 255, 255));
  cv::rectangle(img, {kMargin, kMargin / 2}, {kWidth - kMargin / 2, kHeight - kMargin}, {0, 0, 0}, 1);
  cv::putText(img, title, {kMargin, kMargin / 2 - 8}, cv::FONT_HERSHEY_SIMPLEX, 0.5, {0, 0, 0}, 1, cv::LINE_AA);
  return img;
}

void save_png(const fs::path& path, const cv::Mat& img) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), img)) throw std::runtime_error("cannot write " + path.string());
}

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(4) << v;
  return os.str();
}

}  // namespace

void write_results_table(const fs::path& path, const std::vector<RunReport>& reports) {
  std::set<Task> tasks;
  for (const auto& r : reports) {
    for (const auto& [t, _] : r.metrics) tasks.insert(t);
  }
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << std::setprecision(8) << "name,architecture,iterations";
  for (Task t : tasks) os << ',' << task_code(t) << '_' << metric_name(t);
  os << ",delta\n";
  for (const auto& r : reports) {
    os << r.name << ',' << r.architecture << ',' << r.iterations;
    for (Task t : tasks) {
      os << ',';
      if (auto it = r.metrics.find(t); it != r.metrics.end()) os << it->second;
    }
    os << ',';
    if (r.delta) os << r.delta->delta;
    os << '\n';
  }
}

void plot_loss_curves(const fs::path& path, const std::vector<RunReport>& reports) {
  cv::Mat img = canvas("training loss (log10)");
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  size_t longest = 1;
  for (const auto& r : reports) {
    for (double v : r.losses) {
      if (v > 0 && std::isfinite(v)) {
        lo = std::min(lo, std::log10(v));
        hi = std::max(hi, std::log10(v));
      }
    }
    longest = std::max(longest, r.losses.size());
  }
  if (!std::isfinite(lo)) {
    save_png(path, img);
    return;
  }
  if (hi - lo < 1e-9) hi = lo + 1.0;
  const double x0 = kMargin, x1 = kWidth - kMargin / 2, y0 = kHeight - kMargin, y1 = kMargin / 2;
  cv::putText(img, fmt(hi), {4, static_cast<int>(y1) + 10}, cv::FONT_HERSHEY_SIMPLEX, 0.4, {0, 0, 0});
  cv::putText(img, fmt(lo), {4, static_cast<int>(y0)}, cv::FONT_HERSHEY_SIMPLEX, 0.4, {0, 0, 0});
  for (size_t k = 0; k < reports.size(); ++k) {
    std::vector<cv::Point> pts;
    const auto& losses = reports[k].losses;
    for (size_t i = 0; i < losses.size(); ++i) {
      if (!(losses[i] > 0) || !std::isfinite(losses[i])) continue;
      const double x = x0 + (x1 - x0) * static_cast<double>(i) / static_cast<double>(std::max<size_t>(longest - 1, 1));
      const double y = y0 + (y1 - y0) * (std::log10(losses[i]) - lo) / (hi - lo);
      pts.emplace_back(static_cast<int>(x), static_cast<int>(y));
    }
    if (pts.size() > 1) cv::polylines(img, pts, false, palette(k), 1, cv::LINE_AA);
    cv::putText(img, reports[k].name, {kWidth - 260, kMargin / 2 + 16 + 14 * static_cast<int>(k)},
                cv::FONT_HERSHEY_SIMPLEX, 0.4, palette(k), 1, cv::LINE_AA);
  }
  save_png(path, img);
}

void plot_metric_bars(const fs::path& path, const std::vector<RunReport>& reports, Task task) {
  std::vector<std::pair<std::string, double>> bars;
  for (const auto& r : reports) {
    if (auto it = r.metrics.find(task); it != r.metrics.end()) bars.emplace_back(r.name, it->second);
  }
  cv::Mat img = canvas(std::string(task_code(task)) + " " + std::string(metric_name(task)));
  double hi = 0;
  for (const auto& [_, v] : bars) hi = std::max(hi, v);
  if (hi <= 0) hi = 1;
  const int plot_w = kWidth - kMargin - kMargin / 2;
  const int plot_h = kHeight - kMargin - kMargin / 2;
  for (size_t k = 0; k < bars.size(); ++k) {
    const int slot = plot_w / static_cast<int>(bars.size());
    const int x = kMargin + slot * static_cast<int>(k) + slot / 6;
    const int h = static_cast<int>(plot_h * std::max(bars[k].second, 0.0) / hi);
    cv::rectangle(img, {x, kHeight - kMargin - h}, {x + slot * 2 / 3, kHeight - kMargin}, palette(k), cv::FILLED);
    cv::putText(img, fmt(bars[k].second), {x, kHeight - kMargin - h - 4}, cv::FONT_HERSHEY_SIMPLEX, 0.35, {0, 0, 0});
    cv::putText(img, bars[k].first.substr(0, 18), {x, kHeight - kMargin + 14 + 12 * static_cast<int>(k % 3)},
                cv::FONT_HERSHEY_SIMPLEX, 0.3, {0, 0, 0});
  }
  save_png(path, img);
}

std::vector<RunReport> collect_reports(const fs::path& runs_dir) {
  if (!fs::is_directory(runs_dir)) throw std::runtime_error("not a directory: " + runs_dir.string());
  std::vector<fs::path> paths;
  for (const auto& e : fs::recursive_directory_iterator(runs_dir)) {
    if (e.is_regular_file() && e.path().filename() == "report.json") paths.push_back(e.path());
  }
  std::sort(paths.begin(), paths.end());
  std::vector<RunReport> out;
  for (const auto& p : paths) out.push_back(read_report(p));
  return out;
}

size_t write_report_bundle(const fs::path& runs_dir, const fs::path& out_dir) {
  const auto reports = collect_reports(runs_dir);
  fs::create_directories(out_dir);
  write_results_table(out_dir / "results.csv", reports);
  std::set<Task> tasks;
  for (const auto& r : reports) {
    std::ofstream os(out_dir / ("metrics_" + r.name + ".csv"));
    write_metric_csv(os, r.metrics);
    for (const auto& [t, _] : r.metrics) tasks.insert(t);
  }
  plot_loss_curves(out_dir / "loss_curves.png", reports);
  for (Task t : tasks) plot_metric_bars(out_dir / ("metric_" + std::string(task_code(t)) + ".png"), reports, t);
  return reports.size();
}

}  // namespace densemtl
