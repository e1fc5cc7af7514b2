#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "vitst/dataset.hpp"

namespace vitst {

struct Rgb {
  uint8_t r = 0, g = 0, b = 0;
  bool operator==(const Rgb&) const = default;
};

inline constexpr Rgb kBackground{255, 255, 255};

// Fixed 20-entry color cycle; variable d draws in palette()[d % 20].
const std::array<Rgb, 20>& palette();

enum class LimitStrategy { Default, Iqr, Sd, Mzs };

LimitStrategy limit_strategy_from_string(const std::string& s);
std::string to_string(LimitStrategy s);

// Per-variable value ranges plus the shared time range, fitted on the
// training split and reused verbatim at eval time.
struct AxisLimits {
  double t_min = 0.0, t_max = 1.0;
  struct Range {
    double lo = 0.0, hi = 1.0;
    bool degenerate = false;  // no training observations for this variable
  };
  std::vector<Range> y;
};

struct GridLayout {
  size_t rows = 1, cols = 1;
  size_t cells() const { return rows * cols; }
};

// Near-square grid: (l,l) when l(l-1) < D <= l^2, else (l,l+1) when
// l^2 < D <= l(l+1).
GridLayout grid_layout(size_t num_variables);

enum class OobPolicy { Clamp, Clip };

struct RenderConfig {
  size_t cell_h = 64, cell_w = 64;
  bool markers = true;
  bool interpolate = true;
  bool colors = true;  // false: every variable uses palette()[0]
  OobPolicy oob = OobPolicy::Clamp;
};

struct ImageBuffer {
  size_t height = 0, width = 0;
  std::vector<uint8_t> pixels;  // row-major H x W x 3

  ImageBuffer() = default;
  ImageBuffer(size_t h, size_t w, Rgb fill = kBackground);
  uint8_t* at(size_t y, size_t x) { return &pixels[(y * width + x) * 3]; }
  const uint8_t* at(size_t y, size_t x) const { return &pixels[(y * width + x) * 3]; }
  void set(size_t y, size_t x, Rgb c);
  Rgb get(size_t y, size_t x) const;
  bool operator==(const ImageBuffer&) const = default;
};

AxisLimits fit_axis_limits(const Dataset& ds, const std::vector<size_t>& train_indices,
                           LimitStrategy strategy);

void save_axis_limits(const AxisLimits& limits, const std::vector<std::string>& variable_names,
                      const std::string& path);
AxisLimits load_axis_limits(const std::string& path, const std::vector<std::string>& variable_names);

// Draws one variable's line graph into a cell_h x cell_w block.
ImageBuffer render_cell(const std::vector<Observation>& series, AxisLimits::Range y_limits,
                        double t_min, double t_max, Rgb color, const RenderConfig& config);

// Composites one cell per variable, row-major in `order`; trailing cells are
// left blank. Pure function of its inputs.
ImageBuffer render_sample(const Sample& sample, const AxisLimits& limits, const GridLayout& layout,
                          const std::vector<size_t>& order, const RenderConfig& config);

// Binary PPM (P6, maxval 255). write_image emits a canonical header so that
// read(write(buffer)) is the identity and write(read(file)) reproduces any
// canonically written file byte for byte.
void write_image(const ImageBuffer& img, const std::string& path);
ImageBuffer read_image(const std::string& path);

// Cell size for a requested final image size: floor(H/rows) x floor(W/cols).
// The rendered image is rows*cell_h x cols*cell_w (never resampled).
void cell_size_for_image(size_t image_h, size_t image_w, const GridLayout& layout,
                         size_t& cell_h, size_t& cell_w);

// 5x5 marker stamp: center pixel plus 2-pixel arms in the four axis
// directions, clipped at cell borders.
extern const std::array<std::array<int, 2>, 9> kMarkerOffsets;

}  // namespace vitst
