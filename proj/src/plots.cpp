#include "posenorm/plots.hpp"

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace posenorm {

namespace {

const cv::Scalar kColors[] = {
    {180, 119, 31}, {14, 127, 255}, {44, 160, 44}, {40, 39, 214},
    {189, 103, 148}, {75, 86, 140}, {194, 119, 227}, {127, 127, 127},
};

std::string fmt(double v) {
  std::ostringstream s;
  s << std::setprecision(3) << v;
  return s.str();
}

std::vector<double> nice_ticks(double lo, double hi) {
  const double span = hi - lo;
  const double raw = span / 5;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  double step = mag;
  for (double m : {1.0, 2.0, 5.0, 10.0})
    if (m * mag >= raw) {
      step = m * mag;
      break;
    }
  std::vector<double> out;
  for (double t = std::ceil(lo / step) * step; t <= hi + 1e-9 * span; t += step)
    out.push_back(std::abs(t) < 1e-9 * span ? 0.0 : t);
  return out;
}

void check_figure(const Figure& f) {
  if (f.series.empty()) throw std::invalid_argument("plot '" + f.title + "': no series");
  for (const auto& s : f.series) {
    if (s.x.empty()) throw std::invalid_argument("plot '" + f.title + "': series '" + s.label + "' is empty");
    if (s.x.size() != s.y.size() || (!s.err.empty() && s.err.size() != s.y.size()))
      throw std::invalid_argument("plot '" + f.title + "': series '" + s.label + "' has mismatched lengths");
  }
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) out += c == '"' ? std::string("\"\"") : std::string(1, c);
  return out + "\"";
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        out.back() += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        out.back() += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.emplace_back();
    } else {
      out.back() += c;
    }
  }
  return out;
}

}  // namespace

void render_figure(const std::filesystem::path& png, const Figure& figure) {
  check_figure(figure);
  const int W = 720, H = 480, left = 70, right = 180, top = 56, bottom = 60;
  cv::Mat img(H, W, CV_8UC3, cv::Scalar(255, 255, 255));

  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const auto& s : figure.series)
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      const double e = s.err.empty() ? 0.0 : s.err[i];
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, s.y[i] - e);
      y1 = std::max(y1, s.y[i] + e);
    }
  if (figure.y_range) std::tie(y0, y1) = *figure.y_range;
  if (x1 - x0 < 1e-12) x0 -= 0.5, x1 += 0.5;
  if (y1 - y0 < 1e-12) y0 -= 0.5, y1 += 0.5;
  const double xpad = 0.05 * (x1 - x0), ypad = figure.y_range ? 0.0 : 0.05 * (y1 - y0);
  x0 -= xpad, x1 += xpad, y0 -= ypad, y1 += ypad;

  const int pw = W - left - right, ph = H - top - bottom;
  const auto px = [&](double x) { return cvRound(left + (x - x0) / (x1 - x0) * pw); };
  const auto py = [&](double y) { return cvRound(top + ph - (y - y0) / (y1 - y0) * ph); };
  const auto font = cv::FONT_HERSHEY_SIMPLEX;
  const cv::Scalar ink(40, 40, 40), grid(225, 225, 225);

  const auto xticks = [&] {
    std::vector<std::pair<double, std::string>> t;
    if (!figure.x_ticks.empty())
      for (const auto& [x, name] : figure.x_ticks) t.emplace_back(x, name);
    else
      for (double x : nice_ticks(x0, x1)) t.emplace_back(x, fmt(x));
    return t;
  }();
  for (const auto& [x, name] : xticks) {
    cv::line(img, {px(x), top}, {px(x), top + ph}, grid, 1);
    int base = 0;
    const auto size = cv::getTextSize(name, font, 0.4, 1, &base);
    cv::putText(img, name, {px(x) - size.width / 2, top + ph + 18}, font, 0.4, ink, 1, cv::LINE_AA);
  }
  for (double y : nice_ticks(y0, y1)) {
    cv::line(img, {left, py(y)}, {left + pw, py(y)}, grid, 1);
    const std::string name = fmt(y);
    int base = 0;
    const auto size = cv::getTextSize(name, font, 0.4, 1, &base);
    cv::putText(img, name, {left - size.width - 6, py(y) + 4}, font, 0.4, ink, 1, cv::LINE_AA);
  }
  cv::rectangle(img, {left, top}, {left + pw, top + ph}, ink, 1);
  cv::putText(img, figure.title, {left, top - 30}, font, 0.55, ink, 1, cv::LINE_AA);
  cv::putText(img, figure.x_name, {left + pw / 2 - 30, H - 18}, font, 0.45, ink, 1, cv::LINE_AA);
  cv::putText(img, figure.y_name, {8, top - 8}, font, 0.45, ink, 1, cv::LINE_AA);

  for (std::size_t k = 0; k < figure.series.size(); ++k) {
    const auto& s = figure.series[k];
    const cv::Scalar color = kColors[k % std::size(kColors)];
    std::vector<std::size_t> order(s.x.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return s.x[a] < s.x[b]; });
    for (std::size_t i = 0; i + 1 < order.size(); ++i)
      cv::line(img, {px(s.x[order[i]]), py(s.y[order[i]])}, {px(s.x[order[i + 1]]), py(s.y[order[i + 1]])},
               color, 2, cv::LINE_AA);
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      const cv::Point p(px(s.x[i]), py(s.y[i]));
      if (!s.err.empty() && s.err[i] > 0) {
        cv::line(img, {p.x, py(s.y[i] - s.err[i])}, {p.x, py(s.y[i] + s.err[i])}, color, 1, cv::LINE_AA);
        cv::line(img, {p.x - 4, py(s.y[i] - s.err[i])}, {p.x + 4, py(s.y[i] - s.err[i])}, color, 1);
        cv::line(img, {p.x - 4, py(s.y[i] + s.err[i])}, {p.x + 4, py(s.y[i] + s.err[i])}, color, 1);
      }
      cv::circle(img, p, 3, color, cv::FILLED, cv::LINE_AA);
    }
    const int ly = top + 14 + 20 * static_cast<int>(k);
    cv::line(img, {left + pw + 12, ly - 4}, {left + pw + 32, ly - 4}, color, 2);
    cv::putText(img, s.label, {left + pw + 38, ly}, font, 0.4, ink, 1, cv::LINE_AA);
  }

  bool ok = false;
  try {
    ok = cv::imwrite(png.string(), img);
  } catch (const cv::Exception&) {
    ok = false;
  }
  if (!ok) throw std::runtime_error("cannot write " + png.string());
}

void write_figure(const std::filesystem::path& dir, const std::string& stem, const Figure& figure) {
  check_figure(figure);
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  const auto csv = dir / (stem + ".csv");
  std::ofstream out(csv);
  if (!out) throw std::runtime_error("cannot write " + csv.string());
  out << "series," << csv_field(figure.x_name) << ",x_label," << csv_field(figure.y_name) << ",ci95\n";
  out << std::setprecision(17);
  for (const auto& s : figure.series)
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      const auto tick = figure.x_ticks.find(s.x[i]);
      out << csv_field(s.label) << ',' << s.x[i] << ',' << (tick == figure.x_ticks.end() ? "" : csv_field(tick->second))
          << ',' << s.y[i] << ',' << (s.err.empty() ? 0.0 : s.err[i]) << '\n';
    }
  if (!out) throw std::runtime_error("cannot write " + csv.string());
  out.close();
  render_figure(dir / (stem + ".png"), figure);
}

Figure read_figure_table(const std::filesystem::path& csv) {
  std::ifstream in(csv);
  if (!in) throw std::runtime_error("cannot open " + csv.string());
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error(csv.string() + ": empty table");
  const auto header = split_csv(line);
  if (header.size() != 5 || header[0] != "series" || header[2] != "x_label" || header[4] != "ci95")
    throw std::runtime_error(csv.string() + ": bad header");
  Figure f;
  f.x_name = header[1];
  f.y_name = header[3];
  bool any_err = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cells = split_csv(line);
    if (cells.size() != 5) throw std::runtime_error(csv.string() + ": malformed row '" + line + "'");
    if (f.series.empty() || f.series.back().label != cells[0]) f.series.push_back({cells[0], {}, {}, {}});
    Series& s = f.series.back();
    try {
      s.x.push_back(std::stod(cells[1]));
      s.y.push_back(std::stod(cells[3]));
      s.err.push_back(std::stod(cells[4]));
    } catch (const std::exception&) {
      throw std::runtime_error(csv.string() + ": malformed row '" + line + "'");
    }
    any_err = any_err || s.err.back() != 0.0;
    if (!cells[2].empty()) f.x_ticks[s.x.back()] = cells[2];
  }
  if (!any_err)
    for (auto& s : f.series) s.err.clear();
  return f;
}

Figure accuracy_vs_shots(const std::map<std::string, std::vector<EvalReport>>& groups) {
  Figure f;
  f.title = "All-way accuracy";
  f.x_name = "shots";
  f.y_name = "accuracy";
  std::vector<int> shots;
  for (const auto& [_, reports] : groups)
    for (const auto& r : reports) shots.push_back(r.shots == kAllShots ? std::numeric_limits<int>::max() : r.shots);
  std::sort(shots.begin(), shots.end());
  shots.erase(std::unique(shots.begin(), shots.end()), shots.end());
  const auto position = [&](int s) {
    const int key = s == kAllShots ? std::numeric_limits<int>::max() : s;
    return double(std::lower_bound(shots.begin(), shots.end(), key) - shots.begin() + 1);
  };
  for (int s : shots) {
    const int raw = s == std::numeric_limits<int>::max() ? kAllShots : s;
    f.x_ticks[position(raw)] = shots_name(raw);
  }
  for (const auto& [label, reports] : groups) {
    Series s{label, {}, {}, {}};
    for (const auto& r : reports) {
      s.x.push_back(position(r.shots));
      s.y.push_back(r.mean_accuracy);
      s.err.push_back(r.ci95);
    }
    f.series.push_back(std::move(s));
  }
  return f;
}

Figure pck_vs_threshold(const std::map<std::string, std::vector<PckPoint>>& curves) {
  Figure f;
  f.title = "Pose estimation (normalized PCK)";
  f.x_name = "threshold";
  f.y_name = "accuracy";
  f.y_range = std::make_pair(0.0, 1.0);
  for (const auto& [label, curve] : curves) {
    Series s{label, {}, {}, {}};
    for (const auto& p : curve) {
      s.x.push_back(p.threshold);
      s.y.push_back(p.accuracy);
    }
    f.series.push_back(std::move(s));
  }
  return f;
}

Figure accuracy_vs_fraction(const std::vector<std::pair<double, EvalReport>>& points,
                            const std::optional<EvalReport>& baseline) {
  Figure f;
  f.title = "Accuracy vs part-annotation fraction";
  f.x_name = "fraction";
  f.y_name = "accuracy";
  Series s{"pose", {}, {}, {}};
  for (const auto& [fraction, r] : points) {
    s.x.push_back(fraction);
    s.y.push_back(r.mean_accuracy);
    s.err.push_back(r.ci95);
  }
  if (!s.x.empty()) {
    if (baseline) {
      const auto [lo, hi] = std::minmax_element(s.x.begin(), s.x.end());
      f.series.push_back({"avg baseline", {*lo, *hi}, {baseline->mean_accuracy, baseline->mean_accuracy}, {}});
    }
    f.series.insert(f.series.begin(), std::move(s));
  }
  return f;
}

void write_heatmap_image(const std::filesystem::path& png, const ImageSample& sample, const PartHeatmap& heatmap) {
  const int h = sample.image.height, w = sample.image.width, m = heatmap.num_parts();
  if (h == 0 || w == 0 || m == 0) throw std::invalid_argument("heatmap image: empty input");
  cv::Mat canvas(h, w * (m + 1), CV_8UC3, cv::Scalar(0, 0, 0));
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      const auto p = sample.image.at(r, c);
      canvas.at<cv::Vec3b>(r, c) = {cv::saturate_cast<uchar>(p[2] * 255), cv::saturate_cast<uchar>(p[1] * 255),
                                    cv::saturate_cast<uchar>(p[0] * 255)};
    }
  for (int i = 0; i < m; ++i) {
    cv::Mat cells(heatmap.height, heatmap.width, CV_8UC1);
    for (int r = 0; r < heatmap.height; ++r)
      for (int c = 0; c < heatmap.width; ++c)
        cells.at<uchar>(r, c) = cv::saturate_cast<uchar>(heatmap.values(i, r * heatmap.width + c) * 255);
    cv::Mat big, colored;
    cv::resize(cells, big, {w, h}, 0, 0, cv::INTER_NEAREST);
    cv::applyColorMap(big, colored, cv::COLORMAP_VIRIDIS);
    colored.copyTo(canvas(cv::Rect(w * (i + 1), 0, w, h)));
  }
  bool ok = false;
  try {
    ok = cv::imwrite(png.string(), canvas);
  } catch (const cv::Exception&) {
    ok = false;
  }
  if (!ok) throw std::runtime_error("cannot write " + png.string());
}

}  // namespace posenorm
