#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vitst/augment.hpp"
#include "vitst/dataset.hpp"
#include "vitst/raster.hpp"
#include "vitst/swin.hpp"

namespace vitst {

// ---- metrics ---------------------------------------------------------------

// Mann-Whitney AUROC with tie handling: (#{pos>neg} + 0.5*#{pos=neg})/(P*N).
double auroc(const std::vector<double>& scores, const std::vector<int>& labels);

// Average precision over descending-score thresholds, ties as one block.
double auprc(const std::vector<double>& scores, const std::vector<int>& labels);

struct MulticlassMetrics {
  double accuracy = 0.0, precision = 0.0, recall = 0.0, f1 = 0.0;
};

// Macro-averaged precision/recall/F1; classes absent from the confusion
// matrix contribute 0 to the macro means.
MulticlassMetrics multiclass_metrics(const std::vector<int>& preds, const std::vector<int>& labels,
                                     int num_classes);

struct Metrics {
  double auroc = 0.0, auprc = 0.0;  // populated for binary tasks
  double accuracy = 0.0, precision = 0.0, recall = 0.0, f1 = 0.0;
};

struct MetricsAggregate {
  Metrics mean, sd;  // sample sd over runs (0 for a single run)
};

MetricsAggregate aggregate_metrics(const std::vector<Metrics>& runs);

// ---- rendering plan ----------------------------------------------------------

struct RasterOptions {
  size_t cell_h = 64, cell_w = 64;
  size_t image_h = 0, image_w = 0;  // nonzero: derive cell size from these
  bool markers = true, interpolate = true, colors = true;
  bool sorted_order = true;  // order variables by ascending missing ratio
  OobPolicy oob = OobPolicy::Clamp;
};

// Everything needed to render any sample consistently: config, layout,
// train-fitted limits, variable order, and background padding that brings
// the image to a patch-size multiple.
struct RenderPlan {
  RenderConfig config;
  GridLayout layout;
  AxisLimits limits;
  std::vector<size_t> order;
  size_t pad_h = 0, pad_w = 0;

  size_t image_h() const { return layout.rows * config.cell_h + pad_h; }
  size_t image_w() const { return layout.cols * config.cell_w + pad_w; }
};

RenderPlan make_render_plan(const Dataset& ds, const std::vector<size_t>& fit_indices,
                            LimitStrategy strategy, const RasterOptions& opt, size_t patch_size);

// Renders and background-pads one sample per the plan.
ImageBuffer render_planned(const Dataset& ds, const Sample& sample, const RenderPlan& plan);

// ---- training -----------------------------------------------------------------

struct TrainConfig {
  size_t epochs = 20;
  size_t batch_size = 16;
  double lr = 2e-5;
  double weight_decay = 0.01;
  uint64_t seed = 1;
  bool cutout = false;
  size_t cutout_regions = 16, cutout_h = 16, cutout_w = 16;
  bool upsample = true;
  bool balance_batches = false;  // per-batch balancing instead of upsampling
  std::string static_template;  // sentence template when the static branch is on

  void validate() const;
};

struct TrainLogEntry {
  size_t epoch = 0;
  double loss = 0.0;
  double val_metric = 0.0;
};

struct TrainResult {
  std::vector<TrainLogEntry> log;
  size_t best_epoch = 0;
  double best_val = 0.0;
};

// Fine-tuning loop: upsample -> render -> cutout -> forward -> CE -> AdamW.
// On return the model holds the best-validation-metric weights.
TrainResult train_classifier(SwinModel& model, const Dataset& ds, const SplitSpec& splits,
                             const RenderPlan& plan, const TrainConfig& cfg);

struct MimConfig {
  size_t epochs = 10;
  size_t batch_size = 16;
  double lr = 2e-5;
  double weight_decay = 0.01;
  uint64_t seed = 1;
  size_t col_width = 32;
  double ratio = 0.5;
};

struct MimResult {
  std::vector<double> epoch_loss;
};

MimResult pretrain_mim(SwinModel& model, const Dataset& ds, const std::vector<size_t>& indices,
                       const RenderPlan& plan, const MimConfig& cfg);

// Inference over `indices`; fills per-sample class probabilities.
Metrics evaluate(SwinModel& model, const Dataset& ds, const std::vector<size_t>& indices,
                 const RenderPlan& plan, const std::string& static_template,
                 std::vector<std::vector<double>>* probs_out = nullptr);

// ---- leave-sensors-out ----------------------------------------------------------

struct MaskEvalRow {
  double ratio = 0.0;
  std::vector<Metrics> runs;  // one per drop seed
  MetricsAggregate agg;
  std::vector<std::vector<size_t>> dropped_sets;  // echoed exact sets (fixed mode)
};

// Drops sensors in copies of the evaluated split only, re-renders with the
// train-fitted plan, and evaluates per ratio. Random mode redraws the set
// per sample (noted in reports); fixed mode uses one seeded set for all.
std::vector<MaskEvalRow> leave_sensors_out_eval(SwinModel& model, const Dataset& ds,
                                                const std::vector<size_t>& eval_indices,
                                                const RenderPlan& plan, SensorMaskMode mode,
                                                const std::vector<double>& ratios,
                                                const std::vector<uint64_t>& drop_seeds,
                                                const std::string& static_template);

// ---- synthetic data ----------------------------------------------------------

// Class-conditioned multivariate signals on a jittered time grid with a
// fraction of observations removed; deterministic per seed.
Dataset synth_generate(size_t n, size_t num_variables, int classes, double drop_ratio,
                       uint64_t seed);

// Sentence used for a sample when no template is configured.
std::string default_static_sentence(const Sample& s, const std::vector<std::string>& schema);
std::string sentence_for(const Sample& s, const Dataset& ds, const std::string& tmpl);

}  // namespace vitst
