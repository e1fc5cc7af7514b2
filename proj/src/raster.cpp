#include "vitst/raster.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "vitst/common.hpp"

namespace vitst {

const std::array<Rgb, 20>& palette() {
  // matplotlib tab20 cycle
  static const std::array<Rgb, 20> p = {{
      {31, 119, 180},  {174, 199, 232}, {255, 127, 14},  {255, 187, 120}, {44, 160, 44},
      {152, 223, 138}, {214, 39, 40},   {255, 152, 150}, {148, 103, 189}, {197, 176, 213},
      {140, 86, 75},   {196, 156, 148}, {227, 119, 194}, {247, 182, 210}, {127, 127, 127},
      {199, 199, 199}, {188, 189, 34},  {219, 219, 141}, {23, 190, 207},  {158, 218, 229},
  }};
  return p;
}

LimitStrategy limit_strategy_from_string(const std::string& s) {
  if (s == "default") return LimitStrategy::Default;
  if (s == "iqr") return LimitStrategy::Iqr;
  if (s == "sd") return LimitStrategy::Sd;
  if (s == "mzs") return LimitStrategy::Mzs;
  fail("unknown limit strategy '" + s + "' (expected default|iqr|sd|mzs)");
}

std::string to_string(LimitStrategy s) {
  switch (s) {
    case LimitStrategy::Default: return "default";
    case LimitStrategy::Iqr: return "iqr";
    case LimitStrategy::Sd: return "sd";
    case LimitStrategy::Mzs: return "mzs";
  }
  return "default";
}

GridLayout grid_layout(size_t num_variables) {
  if (num_variables == 0) fail("grid_layout: need at least one variable");
  size_t l = 1;
  while (l * l < num_variables) ++l;
  if (num_variables > l * (l - 1)) return {l, l};
  return {l - 1, l};
}

ImageBuffer::ImageBuffer(size_t h, size_t w, Rgb fill) : height(h), width(w) {
  pixels.resize(h * w * 3);
  for (size_t i = 0; i < h * w; ++i) {
    pixels[i * 3 + 0] = fill.r;
    pixels[i * 3 + 1] = fill.g;
    pixels[i * 3 + 2] = fill.b;
  }
}

void ImageBuffer::set(size_t y, size_t x, Rgb c) {
  uint8_t* p = at(y, x);
  p[0] = c.r;
  p[1] = c.g;
  p[2] = c.b;
}

Rgb ImageBuffer::get(size_t y, size_t x) const {
  const uint8_t* p = at(y, x);
  return {p[0], p[1], p[2]};
}

namespace {

// Type-7 quantile (linear interpolation between order statistics).
double quantile_sorted(const std::vector<double>& sorted, double q) {
  const size_t n = sorted.size();
  if (n == 1) return sorted[0];
  double h = q * static_cast<double>(n - 1);
  size_t lo = static_cast<size_t>(std::floor(h));
  size_t hi = std::min(lo + 1, n - 1);
  double frac = h - std::floor(h);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

double median_sorted(const std::vector<double>& sorted) {
  const size_t n = sorted.size();
  if (n % 2 == 1) return sorted[n / 2];
  return 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
}

AxisLimits::Range strategy_range(std::vector<double>& values, LimitStrategy strategy) {
  std::sort(values.begin(), values.end());
  const double obs_lo = values.front();
  const double obs_hi = values.back();
  double lo = obs_lo, hi = obs_hi;
  const size_t n = values.size();

  switch (strategy) {
    case LimitStrategy::Default:
      break;
    case LimitStrategy::Iqr: {
      double q1 = quantile_sorted(values, 0.25);
      double q3 = quantile_sorted(values, 0.75);
      double iqr = q3 - q1;
      lo = q1 - 1.5 * iqr;
      hi = q3 + 1.5 * iqr;
      break;
    }
    case LimitStrategy::Sd: {
      double mean = 0.0;
      for (double v : values) mean += v;
      mean /= static_cast<double>(n);
      double ss = 0.0;
      for (double v : values) ss += (v - mean) * (v - mean);
      double sd = n > 1 ? std::sqrt(ss / static_cast<double>(n - 1)) : 0.0;
      lo = mean - 3.0 * sd;
      hi = mean + 3.0 * sd;
      break;
    }
    case LimitStrategy::Mzs: {
      double med = median_sorted(values);
      std::vector<double> dev(values.size());
      for (size_t i = 0; i < values.size(); ++i) dev[i] = std::abs(values[i] - med);
      std::sort(dev.begin(), dev.end());
      double mad = median_sorted(dev);
      double spread = 3.5 * mad / 0.6745;
      lo = med - spread;
      hi = med + spread;
      break;
    }
  }

  // Narrowing strategies never extend past the observed range.
  lo = std::max(lo, obs_lo);
  hi = std::min(hi, obs_hi);
  if (lo == hi) {
    lo -= 0.5;
    hi += 0.5;
  }
  return {lo, hi, false};
}

}  // namespace

AxisLimits fit_axis_limits(const Dataset& ds, const std::vector<size_t>& train_indices,
                           LimitStrategy strategy) {
  const size_t d = ds.num_variables();
  AxisLimits limits;
  limits.y.resize(d);

  bool any_time = false;
  double t_lo = 0.0, t_hi = 0.0;
  for (size_t v = 0; v < d; ++v) {
    std::vector<double> values;
    for (size_t idx : train_indices) {
      for (const Observation& o : ds.samples.at(idx).series[v]) {
        values.push_back(o.value);
        if (!any_time) {
          t_lo = t_hi = o.time;
          any_time = true;
        } else {
          t_lo = std::min(t_lo, o.time);
          t_hi = std::max(t_hi, o.time);
        }
      }
    }
    if (values.empty()) {
      limits.y[v] = {0.0, 1.0, true};
      continue;
    }
    limits.y[v] = strategy_range(values, strategy);
  }

  if (!any_time) {
    limits.t_min = 0.0;
    limits.t_max = 1.0;
  } else if (t_lo == t_hi) {
    limits.t_min = t_lo - 0.5;
    limits.t_max = t_hi + 0.5;
  } else {
    limits.t_min = t_lo;
    limits.t_max = t_hi;
  }
  return limits;
}

void save_axis_limits(const AxisLimits& limits, const std::vector<std::string>& variable_names,
                      const std::string& path) {
  if (limits.y.size() != variable_names.size())
    fail("save_axis_limits: limits/variable count mismatch");
  std::ofstream out(path, std::ios::binary);
  if (!out) fail("cannot open for writing: " + path);
  for (size_t v = 0; v < variable_names.size(); ++v) {
    const std::string& name = variable_names[v];
    if (name.find(',') != std::string::npos || name.find('\n') != std::string::npos)
      fail("save_axis_limits: variable name '" + name + "' contains a delimiter");
    out << name << "," << format_double(limits.y[v].lo) << "," << format_double(limits.y[v].hi)
        << "\n";
  }
  out << "__time__," << format_double(limits.t_min) << "," << format_double(limits.t_max) << "\n";
  if (!out) fail("write failed: " + path);
}

AxisLimits load_axis_limits(const std::string& path,
                            const std::vector<std::string>& variable_names) {
  std::ifstream in(path);
  if (!in) fail("cannot open limits file: " + path);
  AxisLimits limits;
  limits.y.resize(variable_names.size());
  std::vector<bool> seen(variable_names.size(), false);
  bool seen_time = false;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    size_t c1 = line.find(',');
    size_t c2 = line.find(',', c1 == std::string::npos ? c1 : c1 + 1);
    if (c1 == std::string::npos || c2 == std::string::npos)
      fail(path + ":" + std::to_string(lineno) + ": expected name,lo,hi");
    std::string name = line.substr(0, c1);
    double lo = std::strtod(line.substr(c1 + 1, c2 - c1 - 1).c_str(), nullptr);
    double hi = std::strtod(line.substr(c2 + 1).c_str(), nullptr);
    if (name == "__time__") {
      limits.t_min = lo;
      limits.t_max = hi;
      seen_time = true;
      continue;
    }
    auto it = std::find(variable_names.begin(), variable_names.end(), name);
    if (it == variable_names.end())
      fail(path + ":" + std::to_string(lineno) + ": unknown variable '" + name + "'");
    size_t v = static_cast<size_t>(it - variable_names.begin());
    limits.y[v] = {lo, hi, false};
    seen[v] = true;
  }
  if (!seen_time) fail(path + ": missing __time__ row");
  for (size_t v = 0; v < seen.size(); ++v)
    if (!seen[v]) fail(path + ": missing limits for variable '" + variable_names[v] + "'");
  return limits;
}

namespace {

long map_to_pixel(double value, double lo, double hi, size_t extent) {
  double span = hi - lo;
  double u = span > 0.0 ? (value - lo) / span : 0.5;
  return std::lround(u * static_cast<double>(extent - 1));
}

void draw_line(ImageBuffer& cell, long x0, long y0, long x1, long y1, Rgb color) {
  // Bresenham, 1 px, no anti-aliasing.
  long dx = std::abs(x1 - x0);
  long dy = -std::abs(y1 - y0);
  long sx = x0 < x1 ? 1 : -1;
  long sy = y0 < y1 ? 1 : -1;
  long err = dx + dy;
  for (;;) {
    cell.set(static_cast<size_t>(y0), static_cast<size_t>(x0), color);
    if (x0 == x1 && y0 == y1) break;
    long e2 = 2 * err;
    if (e2 >= dy) {
      err += dy;
      x0 += sx;
    }
    if (e2 <= dx) {
      err += dx;
      y0 += sy;
    }
  }
}

}  // namespace

const std::array<std::array<int, 2>, 9> kMarkerOffsets = {{
    {0, 0},
    {-1, 0},
    {-2, 0},
    {1, 0},
    {2, 0},
    {0, -1},
    {0, -2},
    {0, 1},
    {0, 2},
}};

ImageBuffer render_cell(const std::vector<Observation>& series, AxisLimits::Range y_limits,
                        double t_min, double t_max, Rgb color, const RenderConfig& config) {
  if (config.cell_h < 8 || config.cell_w < 8) fail("render_cell: cell must be at least 8x8");
  if (!(y_limits.lo <= y_limits.hi) || !(t_min <= t_max)) fail("render_cell: invalid limits");
  ImageBuffer cell(config.cell_h, config.cell_w);

  struct Point {
    long x, y;
  };
  std::vector<Point> pts;
  pts.reserve(series.size());
  for (const Observation& o : series) {
    double t = o.time, v = o.value;
    if (config.oob == OobPolicy::Clip) {
      if (v < y_limits.lo || v > y_limits.hi || t < t_min || t > t_max) continue;
    } else {
      v = std::clamp(v, y_limits.lo, y_limits.hi);
      t = std::clamp(t, t_min, t_max);
    }
    long px = map_to_pixel(t, t_min, t_max, config.cell_w);
    long py = static_cast<long>(config.cell_h - 1) -
              map_to_pixel(v, y_limits.lo, y_limits.hi, config.cell_h);
    pts.push_back({px, py});
  }

  if (config.interpolate) {
    for (size_t i = 1; i < pts.size(); ++i)
      draw_line(cell, pts[i - 1].x, pts[i - 1].y, pts[i].x, pts[i].y, color);
  }
  if (config.markers) {
    const long h = static_cast<long>(config.cell_h);
    const long w = static_cast<long>(config.cell_w);
    for (const Point& p : pts) {
      for (const auto& off : kMarkerOffsets) {
        long y = p.y + off[0];
        long x = p.x + off[1];
        if (y < 0 || y >= h || x < 0 || x >= w) continue;
        cell.set(static_cast<size_t>(y), static_cast<size_t>(x), color);
      }
    }
  }
  return cell;
}

ImageBuffer render_sample(const Sample& sample, const AxisLimits& limits, const GridLayout& layout,
                          const std::vector<size_t>& order, const RenderConfig& config) {
  const size_t d = sample.series.size();
  if (limits.y.size() != d) fail("render_sample: limits/variable count mismatch");
  if (layout.cells() < d) fail("render_sample: layout too small for variable count");
  if (order.size() != d) fail("render_sample: order must be a permutation of all variables");
  std::vector<bool> seen(d, false);
  for (size_t v : order) {
    if (v >= d || seen[v]) fail("render_sample: order is not a permutation");
    seen[v] = true;
  }

  ImageBuffer img(layout.rows * config.cell_h, layout.cols * config.cell_w);
  for (size_t cell_idx = 0; cell_idx < layout.cells(); ++cell_idx) {
    if (cell_idx >= d) break;  // trailing cells stay blank
    size_t v = order[cell_idx];
    Rgb color = config.colors ? palette()[v % palette().size()] : palette()[0];
    ImageBuffer cell =
        render_cell(sample.series[v], limits.y[v], limits.t_min, limits.t_max, color, config);
    size_t r0 = (cell_idx / layout.cols) * config.cell_h;
    size_t c0 = (cell_idx % layout.cols) * config.cell_w;
    for (size_t y = 0; y < config.cell_h; ++y) {
      std::copy(cell.at(y, 0), cell.at(y, 0) + config.cell_w * 3, img.at(r0 + y, c0));
    }
  }
  return img;
}

void write_image(const ImageBuffer& img, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail("cannot open for writing: " + path);
  out << "P6\n" << img.width << " " << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.pixels.data()),
            static_cast<std::streamsize>(img.pixels.size()));
  if (!out) fail("write failed: " + path);
}

namespace {

int ppm_token(std::istream& in, const std::string& path) {
  // Skips whitespace and '#' comments, then reads one decimal integer.
  int c = in.get();
  while (c != EOF && (std::isspace(c) || c == '#')) {
    if (c == '#') {
      while (c != EOF && c != '\n') c = in.get();
    }
    c = in.get();
  }
  if (c == EOF || !std::isdigit(c)) fail(path + ": malformed PPM header");
  int value = 0;
  while (c != EOF && std::isdigit(c)) {
    value = value * 10 + (c - '0');
    c = in.get();
  }
  return value;
}

}  // namespace

ImageBuffer read_image(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail("cannot open image: " + path);
  char m0 = static_cast<char>(in.get());
  char m1 = static_cast<char>(in.get());
  if (m0 != 'P' || m1 != '6')
    fail(path + ": unsupported magic '" + std::string{m0, m1} + "' (want P6)");
  size_t w = static_cast<size_t>(ppm_token(in, path));
  size_t h = static_cast<size_t>(ppm_token(in, path));
  int maxval = ppm_token(in, path);
  if (maxval != 255) fail(path + ": unsupported maxval " + std::to_string(maxval));
  in.get();  // single whitespace after maxval
  ImageBuffer img;
  img.width = w;
  img.height = h;
  img.pixels.resize(w * h * 3);
  in.read(reinterpret_cast<char*>(img.pixels.data()),
          static_cast<std::streamsize>(img.pixels.size()));
  if (static_cast<size_t>(in.gcount()) != img.pixels.size())
    fail(path + ": truncated pixel payload");
  return img;
}

void cell_size_for_image(size_t image_h, size_t image_w, const GridLayout& layout, size_t& cell_h,
                         size_t& cell_w) {
  cell_h = image_h / layout.rows;
  cell_w = image_w / layout.cols;
  if (cell_h < 8 || cell_w < 8)
    fail("image size " + std::to_string(image_h) + "x" + std::to_string(image_w) +
         " leaves cells below the 8x8 minimum for a " + std::to_string(layout.rows) + "x" +
         std::to_string(layout.cols) + " grid");
}

}  // namespace vitst
