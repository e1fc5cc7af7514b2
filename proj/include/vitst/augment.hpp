#pragma once

#include <cstdint>
#include <vector>

#include "vitst/common.hpp"
#include "vitst/dataset.hpp"
#include "vitst/raster.hpp"

namespace vitst {

struct CutoutRegion {
  size_t top = 0, left = 0, h = 0, w = 0;
};

// Blanks n_regions random region_h x region_w squares to the background
// color. Regions may overlap and may straddle cell borders. Returns the
// squares that were erased.
std::vector<CutoutRegion> cutout(ImageBuffer& image, size_t n_regions, size_t region_h,
                                 size_t region_w, Rng& rng);

enum class SensorMaskMode { Fixed, Random };

struct SensorMaskSpec {
  SensorMaskMode mode = SensorMaskMode::Fixed;
  std::vector<size_t> fixed_set;  // variable indices, Fixed mode
  double ratio = 0.0;             // fraction of variables, Random mode
  uint64_t seed = 0;
};

// Empties the selected variables' observation lists. Random mode draws a
// fresh ceil(ratio*D) subset per sample, seeded by (spec.seed, sample_index).
// Never applied to training data (the harness only routes val/test copies
// through it).
Sample drop_sensors(const Sample& sample, const SensorMaskSpec& spec, size_t num_variables,
                    size_t sample_index);

// The exact variable set drop_sensors empties for this sample.
std::vector<size_t> dropped_set(const SensorMaskSpec& spec, size_t num_variables,
                                size_t sample_index);

// Patch-aligned mask for masked-image pretraining: full-cell-height column
// bands, col_width px wide, each selected independently with the given ratio.
struct MimMask {
  size_t rows = 0, cols = 0;  // patch grid: H/patch x W/patch
  std::vector<uint8_t> masked;
  size_t masked_count = 0;  // number of true entries (masked patches)

  bool at(size_t r, size_t c) const { return masked[r * cols + c] != 0; }
};

MimMask mim_mask(const GridLayout& layout, size_t cell_h, size_t cell_w, size_t patch_size,
                 size_t col_width, double ratio, Rng& rng);

}  // namespace vitst
