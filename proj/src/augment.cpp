#include "vitst/augment.hpp"

#include <algorithm>
#include <cmath>

#include "vitst/common.hpp"

namespace vitst {

std::vector<CutoutRegion> cutout(ImageBuffer& image, size_t n_regions, size_t region_h,
                                 size_t region_w, Rng& rng) {
  if (region_h > image.height || region_w > image.width)
    fail("cutout: region larger than image");
  std::vector<CutoutRegion> regions;
  regions.reserve(n_regions);
  for (size_t k = 0; k < n_regions; ++k) {
    size_t top = static_cast<size_t>(rng.bounded(image.height - region_h + 1));
    size_t left = static_cast<size_t>(rng.bounded(image.width - region_w + 1));
    for (size_t y = top; y < top + region_h; ++y)
      for (size_t x = left; x < left + region_w; ++x) image.set(y, x, kBackground);
    regions.push_back({top, left, region_h, region_w});
  }
  return regions;
}

std::vector<size_t> dropped_set(const SensorMaskSpec& spec, size_t num_variables,
                                size_t sample_index) {
  if (spec.mode == SensorMaskMode::Fixed) {
    for (size_t v : spec.fixed_set)
      if (v >= num_variables) fail("drop_sensors: fixed_set index out of range");
    std::vector<size_t> set(spec.fixed_set);
    std::sort(set.begin(), set.end());
    set.erase(std::unique(set.begin(), set.end()), set.end());
    if (set.size() >= num_variables) fail("drop_sensors: cannot drop all sensors");
    return set;
  }
  if (spec.ratio < 0.0 || spec.ratio > 1.0) fail("drop_sensors: ratio must be in [0,1]");
  size_t k = static_cast<size_t>(std::ceil(spec.ratio * static_cast<double>(num_variables)));
  if (k >= num_variables && k > 0) fail("drop_sensors: cannot drop all sensors");
  std::vector<size_t> all(num_variables);
  for (size_t i = 0; i < num_variables; ++i) all[i] = i;
  Rng rng(derive_seed(spec.seed, {hash_str("drop_sensors"), sample_index}));
  // Partial Fisher-Yates: the first k entries are a uniform subset.
  for (size_t i = 0; i < k; ++i) {
    size_t j = i + static_cast<size_t>(rng.bounded(num_variables - i));
    std::swap(all[i], all[j]);
  }
  std::vector<size_t> set(all.begin(), all.begin() + static_cast<long>(k));
  std::sort(set.begin(), set.end());
  return set;
}

Sample drop_sensors(const Sample& sample, const SensorMaskSpec& spec, size_t num_variables,
                    size_t sample_index) {
  if (sample.series.size() != num_variables) fail("drop_sensors: variable count mismatch");
  Sample out = sample;
  for (size_t v : dropped_set(spec, num_variables, sample_index)) out.series[v].clear();
  return out;
}

MimMask mim_mask(const GridLayout& layout, size_t cell_h, size_t cell_w, size_t patch_size,
                 size_t col_width, double ratio, Rng& rng) {
  if (patch_size == 0 || col_width % patch_size != 0)
    fail("mim_mask: col_width must be divisible by patch_size");
  if (cell_w % col_width != 0) fail("mim_mask: cell width must be divisible by col_width");
  if (cell_h % patch_size != 0 || cell_w % patch_size != 0)
    fail("mim_mask: cell size must be divisible by patch_size");
  if (ratio < 0.0 || ratio > 1.0) fail("mim_mask: ratio must be in [0,1]");

  MimMask mask;
  mask.rows = layout.rows * cell_h / patch_size;
  mask.cols = layout.cols * cell_w / patch_size;
  mask.masked.assign(mask.rows * mask.cols, 0);

  const size_t bands_per_cell = cell_w / col_width;
  const size_t band_patches = col_width / patch_size;
  const size_t cell_patch_rows = cell_h / patch_size;
  const size_t cell_patch_cols = cell_w / patch_size;

  for (size_t gr = 0; gr < layout.rows; ++gr) {
    for (size_t gc = 0; gc < layout.cols; ++gc) {
      for (size_t band = 0; band < bands_per_cell; ++band) {
        bool selected = ratio >= 1.0 || (ratio > 0.0 && rng.uniform() < ratio);
        if (!selected) continue;
        size_t pc0 = gc * cell_patch_cols + band * band_patches;
        for (size_t pr = gr * cell_patch_rows; pr < (gr + 1) * cell_patch_rows; ++pr) {
          for (size_t pc = pc0; pc < pc0 + band_patches; ++pc) {
            if (!mask.masked[pr * mask.cols + pc]) {
              mask.masked[pr * mask.cols + pc] = 1;
              ++mask.masked_count;
            }
          }
        }
      }
    }
  }
  return mask;
}

}  // namespace vitst
