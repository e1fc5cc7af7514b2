#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "vitst/swin.hpp"
#include "vitst/train.hpp"

namespace vitst {

// Flat key=value run configuration. Every knob is addressable as
// "section.key" in the config file and via --set; unknown keys are rejected
// and the effective config is echoed into every output artifact.
struct RunConfig {
  uint64_t seed = 1;
  int threads = 1;

  std::string split_ratios = "0.8,0.1,0.1";

  size_t raster_cell_h = 64, raster_cell_w = 64;
  size_t raster_image_h = 0, raster_image_w = 0;
  bool raster_markers = true, raster_interpolate = true, raster_colors = true;
  bool raster_sorted = true;
  std::string raster_oob = "clamp";
  std::string raster_limit_strategy = "default";

  bool augment_cutout = false;
  size_t augment_cutout_regions = 16, augment_cutout_h = 16, augment_cutout_w = 16;

  size_t model_patch_size = 4, model_window = 7;
  std::string model_depths = "2,2", model_heads = "2,4";
  size_t model_embed_dim = 32, model_mlp_ratio = 4;
  size_t model_num_classes = 0;  // 0: take the dataset's class count
  size_t model_static_dim = 0;
  bool model_gelu_exact = false;

  size_t train_epochs = 20, train_batch_size = 16;
  double train_lr = 2e-5, train_weight_decay = 0.01;
  bool train_upsample = true, train_balance_batches = false;
  std::string train_static_template;

  size_t mim_epochs = 10, mim_batch_size = 16, mim_col_width = 32;
  double mim_lr = 2e-5, mim_weight_decay = 0.01, mim_ratio = 0.5;

  std::string eval_mode = "random";
  std::string eval_ratios = "0.1,0.2,0.3,0.4,0.5";
  size_t eval_drop_seeds = 3;
  std::string eval_split = "test";

  std::set<std::string> touched;  // keys explicitly assigned

  void set(const std::string& key, const std::string& value);
  std::string get(const std::string& key) const;
  static std::vector<std::string> keys();

  // Sorted "key=value" lines; the canonical reproducibility header.
  std::string echo() const;

  void apply_file(const std::string& path);
  void apply_line(const std::string& line, const std::string& where);
  // Applies every known key found in `text`, ignoring unknown lines.
  void apply_echo(const std::string& text);

  // Derived views.
  ModelConfig model_config(size_t dataset_classes) const;
  RasterOptions raster_options() const;
  TrainConfig train_config() const;
  MimConfig mim_config() const;
  void split_fractions(double& train, double& val, double& test) const;
  std::vector<double> eval_ratio_list() const;
};

std::vector<double> parse_double_list(const std::string& s);

}  // namespace vitst
