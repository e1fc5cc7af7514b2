#include "vitst/train.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "vitst/parallel.hpp"

namespace vitst {

// ---- metrics ---------------------------------------------------------------

double auroc(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size()) fail("auroc: scores/labels length mismatch");
  size_t pos = 0, neg = 0;
  for (int l : labels) (l ? pos : neg)++;
  if (pos == 0 || neg == 0) fail("auroc: both classes must be present");

  std::vector<size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](size_t a, size_t b) { return scores[a] < scores[b]; });

  double correct = 0.0;
  size_t neg_below = 0;
  for (size_t i = 0; i < idx.size();) {
    size_t j = i;
    size_t pos_g = 0, neg_g = 0;
    while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) {
      (labels[idx[j]] ? pos_g : neg_g)++;
      ++j;
    }
    correct += static_cast<double>(pos_g) * static_cast<double>(neg_below);
    correct += 0.5 * static_cast<double>(pos_g) * static_cast<double>(neg_g);
    neg_below += neg_g;
    i = j;
  }
  return correct / (static_cast<double>(pos) * static_cast<double>(neg));
}

double auprc(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size()) fail("auprc: scores/labels length mismatch");
  size_t total_pos = 0;
  for (int l : labels) total_pos += l ? 1 : 0;
  if (total_pos == 0) fail("auprc: need at least one positive");

  std::vector<size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](size_t a, size_t b) { return scores[a] > scores[b]; });

  double ap = 0.0, recall_prev = 0.0;
  size_t tp = 0, seen = 0;
  for (size_t i = 0; i < idx.size();) {
    size_t j = i;
    while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) {
      tp += labels[idx[j]] ? 1 : 0;
      ++seen;
      ++j;
    }
    const double recall = static_cast<double>(tp) / static_cast<double>(total_pos);
    const double precision = static_cast<double>(tp) / static_cast<double>(seen);
    ap += (recall - recall_prev) * precision;
    recall_prev = recall;
    i = j;
  }
  return ap;
}

MulticlassMetrics multiclass_metrics(const std::vector<int>& preds, const std::vector<int>& labels,
                                     int num_classes) {
  if (preds.size() != labels.size()) fail("multiclass_metrics: length mismatch");
  if (num_classes < 1) fail("multiclass_metrics: num_classes must be positive");
  std::vector<size_t> tp(num_classes, 0), fp(num_classes, 0), fn(num_classes, 0);
  size_t hits = 0;
  for (size_t i = 0; i < preds.size(); ++i) {
    const int p = preds[i], l = labels[i];
    if (p < 0 || p >= num_classes || l < 0 || l >= num_classes)
      fail("multiclass_metrics: class index out of range");
    if (p == l) {
      ++tp[p];
      ++hits;
    } else {
      ++fp[p];
      ++fn[l];
    }
  }
  MulticlassMetrics m;
  m.accuracy = preds.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(preds.size());
  for (int c = 0; c < num_classes; ++c) {
    const double denom_p = static_cast<double>(tp[c] + fp[c]);
    const double denom_r = static_cast<double>(tp[c] + fn[c]);
    const double prec = denom_p > 0 ? static_cast<double>(tp[c]) / denom_p : 0.0;
    const double rec = denom_r > 0 ? static_cast<double>(tp[c]) / denom_r : 0.0;
    const double f1 = prec + rec > 0 ? 2.0 * prec * rec / (prec + rec) : 0.0;
    m.precision += prec;
    m.recall += rec;
    m.f1 += f1;
  }
  m.precision /= num_classes;
  m.recall /= num_classes;
  m.f1 /= num_classes;
  return m;
}

MetricsAggregate aggregate_metrics(const std::vector<Metrics>& runs) {
  if (runs.empty()) fail("aggregate_metrics: no runs");
  MetricsAggregate out;
  auto fields = {&Metrics::auroc, &Metrics::auprc, &Metrics::accuracy,
                 &Metrics::precision, &Metrics::recall, &Metrics::f1};
  for (auto field : fields) {
    double mean = 0.0;
    for (const Metrics& r : runs) mean += r.*field;
    mean /= static_cast<double>(runs.size());
    double ss = 0.0;
    for (const Metrics& r : runs) ss += (r.*field - mean) * (r.*field - mean);
    out.mean.*field = mean;
    out.sd.*field =
        runs.size() > 1 ? std::sqrt(ss / static_cast<double>(runs.size() - 1)) : 0.0;
  }
  return out;
}

// ---- rendering plan -----------------------------------------------------------

RenderPlan make_render_plan(const Dataset& ds, const std::vector<size_t>& fit_indices,
                            LimitStrategy strategy, const RasterOptions& opt, size_t patch_size) {
  RenderPlan plan;
  plan.layout = grid_layout(ds.num_variables());
  plan.config.markers = opt.markers;
  plan.config.interpolate = opt.interpolate;
  plan.config.colors = opt.colors;
  plan.config.oob = opt.oob;
  if (opt.image_h > 0 && opt.image_w > 0) {
    cell_size_for_image(opt.image_h, opt.image_w, plan.layout, plan.config.cell_h,
                        plan.config.cell_w);
  } else {
    plan.config.cell_h = opt.cell_h;
    plan.config.cell_w = opt.cell_w;
  }
  plan.limits = fit_axis_limits(ds, fit_indices, strategy);
  if (opt.sorted_order && !fit_indices.empty()) {
    plan.order = sort_variables(ds, fit_indices);
  } else {
    plan.order.resize(ds.num_variables());
    std::iota(plan.order.begin(), plan.order.end(), 0);
  }
  if (patch_size > 0) {
    const size_t h = plan.layout.rows * plan.config.cell_h;
    const size_t w = plan.layout.cols * plan.config.cell_w;
    plan.pad_h = (patch_size - h % patch_size) % patch_size;
    plan.pad_w = (patch_size - w % patch_size) % patch_size;
  }
  return plan;
}

ImageBuffer render_planned(const Dataset& ds, const Sample& sample, const RenderPlan& plan) {
  ImageBuffer base = render_sample(sample, plan.limits, plan.layout, plan.order, plan.config);
  if (plan.pad_h == 0 && plan.pad_w == 0) return base;
  ImageBuffer out(base.height + plan.pad_h, base.width + plan.pad_w);
  for (size_t y = 0; y < base.height; ++y)
    std::copy(base.at(y, 0), base.at(y, 0) + base.width * 3, out.at(y, 0));
  return out;
}

// ---- shared helpers -------------------------------------------------------------

void TrainConfig::validate() const {
  if (epochs < 1) fail("train config: epochs must be >= 1");
  if (batch_size < 1) fail("train config: batch_size must be >= 1");
  if (!(lr >= 0.0)) fail("train config: lr must be >= 0");
}

std::string default_static_sentence(const Sample& s, const std::vector<std::string>& schema) {
  std::string out;
  for (const std::string& name : schema) {
    auto it = s.static_fields.find(name);
    if (it == s.static_fields.end()) continue;
    if (!out.empty()) out += " ";
    out += name + " is " + static_value_to_string(it->second) + ".";
  }
  return out;
}

std::string sentence_for(const Sample& s, const Dataset& ds, const std::string& tmpl) {
  if (tmpl.empty()) return default_static_sentence(s, ds.static_schema);
  return render_template(s.static_fields, tmpl);
}

namespace {

// Pre-rendered byte images for a set of samples (parallel across samples).
std::vector<ImageBuffer> render_all(const Dataset& ds, const std::vector<size_t>& indices,
                                    const RenderPlan& plan) {
  std::vector<ImageBuffer> images(indices.size());
  parallel_for(indices.size(),
               [&](size_t i) { images[i] = render_planned(ds, ds.samples[indices[i]], plan); });
  return images;
}

Tensor to_float_batch(const std::vector<const ImageBuffer*>& images) {
  const size_t b = images.size();
  const size_t h = images[0]->height, w = images[0]->width;
  Tensor t = Tensor::zeros({b, h, w, 3});
  float* out = t.data().data();
  const float inv = 1.0f / 255.0f;
  for (size_t i = 0; i < b; ++i) {
    const uint8_t* src = images[i]->pixels.data();
    float* dst = out + i * h * w * 3;
    for (size_t j = 0; j < h * w * 3; ++j) dst[j] = static_cast<float>(src[j]) * inv;
  }
  return t;
}

std::vector<std::vector<double>> batched_probs(SwinModel& model,
                                               const std::vector<ImageBuffer>& images,
                                               const std::vector<std::string>& sentences,
                                               size_t batch_size) {
  const size_t n = images.size();
  const size_t classes = model.config().num_classes;
  std::vector<std::vector<double>> probs(n, std::vector<double>(classes, 0.0));
  for (size_t start = 0; start < n; start += batch_size) {
    const size_t b = std::min(batch_size, n - start);
    std::vector<const ImageBuffer*> ptrs(b);
    for (size_t i = 0; i < b; ++i) ptrs[i] = &images[start + i];
    Tensor batch = to_float_batch(ptrs);
    std::vector<std::string> sents;
    if (model.config().static_dim > 0)
      sents.assign(sentences.begin() + static_cast<long>(start),
                   sentences.begin() + static_cast<long>(start + b));
    Tensor logits = model.forward_classify(batch, sents);
    Tensor p = softmax_lastdim(logits);
    for (size_t i = 0; i < b; ++i)
      for (size_t c = 0; c < classes; ++c)
        probs[start + i][c] = static_cast<double>(p.data()[i * classes + c]);
  }
  return probs;
}

Metrics metrics_from_probs(const std::vector<std::vector<double>>& probs,
                           const std::vector<int>& labels, int num_classes) {
  Metrics m;
  std::vector<int> preds(probs.size());
  for (size_t i = 0; i < probs.size(); ++i) {
    size_t best = 0;
    for (size_t c = 1; c < probs[i].size(); ++c)
      if (probs[i][c] > probs[i][best]) best = c;
    preds[i] = static_cast<int>(best);
  }
  MulticlassMetrics mm = multiclass_metrics(preds, labels, num_classes);
  m.accuracy = mm.accuracy;
  m.precision = mm.precision;
  m.recall = mm.recall;
  m.f1 = mm.f1;
  if (num_classes == 2) {
    std::vector<double> scores(probs.size());
    for (size_t i = 0; i < probs.size(); ++i) scores[i] = probs[i][1];
    bool pos = false, neg = false;
    for (int l : labels) (l ? pos : neg) = true;
    if (pos && neg) {
      m.auroc = auroc(scores, labels);
      m.auprc = auprc(scores, labels);
    }
  }
  return m;
}

std::vector<std::string> sentences_for_indices(const Dataset& ds,
                                               const std::vector<size_t>& indices,
                                               const std::string& tmpl, bool enabled) {
  std::vector<std::string> out;
  if (!enabled) return out;
  out.reserve(indices.size());
  for (size_t idx : indices) out.push_back(sentence_for(ds.samples[idx], ds, tmpl));
  return out;
}

}  // namespace

Metrics evaluate(SwinModel& model, const Dataset& ds, const std::vector<size_t>& indices,
                 const RenderPlan& plan, const std::string& static_template,
                 std::vector<std::vector<double>>* probs_out) {
  if (indices.empty()) fail("evaluate: empty index set");
  std::vector<ImageBuffer> images = render_all(ds, indices, plan);
  std::vector<std::string> sentences =
      sentences_for_indices(ds, indices, static_template, model.config().static_dim > 0);
  auto probs = batched_probs(model, images, sentences, 32);
  std::vector<int> labels;
  labels.reserve(indices.size());
  for (size_t idx : indices) labels.push_back(ds.samples[idx].label);
  if (probs_out) *probs_out = probs;
  return metrics_from_probs(probs, labels, ds.num_classes);
}

// ---- training ---------------------------------------------------------------------

TrainResult train_classifier(SwinModel& model, const Dataset& ds, const SplitSpec& splits,
                             const RenderPlan& plan, const TrainConfig& cfg) {
  cfg.validate();
  if (splits.train.empty()) fail("train_classifier: empty train split");
  const bool use_static = model.config().static_dim > 0;

  std::vector<int> all_labels(ds.samples.size());
  for (size_t i = 0; i < ds.samples.size(); ++i) all_labels[i] = ds.samples[i].label;

  // Epoch stream. Upsampling duplicates minority indices once, up front.
  std::vector<size_t> stream = splits.train;
  if (cfg.upsample && !cfg.balance_batches) {
    std::map<int, size_t> counts;
    for (size_t idx : stream) counts[all_labels[idx]]++;
    if (counts.size() >= 2) stream = upsample_minority(stream, all_labels, cfg.seed);
  }

  // Map dataset index -> position in the rendered cache.
  std::vector<size_t> cache_keys = splits.train;
  std::map<size_t, size_t> cache_pos;
  for (size_t i = 0; i < cache_keys.size(); ++i) cache_pos[cache_keys[i]] = i;
  std::vector<ImageBuffer> train_images = render_all(ds, cache_keys, plan);
  std::vector<std::string> train_sentences =
      sentences_for_indices(ds, cache_keys, cfg.static_template, use_static);

  std::vector<ImageBuffer> val_images = render_all(ds, splits.val, plan);
  std::vector<std::string> val_sentences =
      sentences_for_indices(ds, splits.val, cfg.static_template, use_static);
  std::vector<int> val_labels;
  for (size_t idx : splits.val) val_labels.push_back(all_labels[idx]);

  std::vector<Tensor> params = model.trainable();
  AdamWState opt_state;
  TrainResult result;
  std::vector<std::vector<float>> best_weights;
  double best_val = -1.0;
  size_t best_epoch = 0;

  // Per-class pools for the optional balanced-batch mode.
  std::map<int, std::vector<size_t>> class_pools;
  if (cfg.balance_batches)
    for (size_t idx : splits.train) class_pools[all_labels[idx]].push_back(idx);

  for (size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<size_t> order = stream;
    Rng shuffle_rng(derive_seed(cfg.seed, {hash_str("epoch_shuffle"), epoch}));
    if (cfg.balance_batches) {
      order.clear();
      std::vector<std::vector<size_t>> pools;
      size_t max_pool = 0;
      for (auto& [c, members] : class_pools) {
        pools.push_back(members);
        shuffle_rng.shuffle(pools.back());
        max_pool = std::max(max_pool, members.size());
      }
      for (size_t i = 0; i < max_pool; ++i)
        for (auto& pool : pools) order.push_back(pool[i % pool.size()]);
    } else {
      shuffle_rng.shuffle(order);
    }

    double epoch_loss = 0.0;
    size_t batches = 0;
    for (size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const size_t b = std::min(cfg.batch_size, order.size() - start);
      std::vector<ImageBuffer> scratch(b);
      std::vector<const ImageBuffer*> ptrs(b);
      std::vector<size_t> lbls(b);
      std::vector<std::string> sents;
      for (size_t i = 0; i < b; ++i) {
        const size_t idx = order[start + i];
        const ImageBuffer& base = train_images[cache_pos[idx]];
        lbls[i] = static_cast<size_t>(all_labels[idx]);
        if (use_static) sents.push_back(train_sentences[cache_pos[idx]]);
        if (cfg.cutout && cfg.cutout_regions > 0) {
          scratch[i] = base;
          Rng crng(derive_seed(cfg.seed, {hash_str("cutout"), epoch, start + i}));
          cutout(scratch[i], cfg.cutout_regions, cfg.cutout_h, cfg.cutout_w, crng);
          ptrs[i] = &scratch[i];
        } else {
          ptrs[i] = &base;
        }
      }
      Tensor batch = to_float_batch(ptrs);

      Tape tape;
      double loss_value;
      {
        TapeScope scope(tape);
        Tensor logits = model.forward_classify(batch, sents);
        Tensor loss = cross_entropy(logits, lbls);
        loss_value = static_cast<double>(loss.item());
        if (!std::isfinite(loss_value))
          fail("train_classifier: non-finite loss at epoch " + std::to_string(epoch + 1));
        backward(tape, loss);
      }
      adamw_step(params, opt_state, cfg.lr, 0.9, 0.999, 1e-8, cfg.weight_decay);
      for (Tensor& p : params) p.zero_grad();
      epoch_loss += loss_value;
      ++batches;
    }
    epoch_loss /= static_cast<double>(std::max<size_t>(batches, 1));

    double val_metric = 0.0;
    if (!splits.val.empty()) {
      auto probs = batched_probs(model, val_images, val_sentences, 32);
      Metrics m = metrics_from_probs(probs, val_labels, ds.num_classes);
      bool pos = false, neg = false;
      for (int l : val_labels) (l ? pos : neg) = true;
      val_metric = (ds.num_classes == 2 && pos && neg) ? m.auroc : m.accuracy;
    }
    result.log.push_back({epoch + 1, epoch_loss, val_metric});
    log_info("epoch " + std::to_string(epoch + 1) + " loss " + format_double(epoch_loss) +
             " val " + format_double(val_metric));

    // Best-val selection; without a validation split the final weights stand.
    if (!splits.val.empty() && val_metric > best_val) {
      best_val = val_metric;
      best_epoch = epoch + 1;
      best_weights.clear();
      for (Tensor& p : params) best_weights.push_back(p.data());
    }
  }

  if (!best_weights.empty()) {
    for (size_t i = 0; i < params.size(); ++i) params[i].data() = best_weights[i];
  } else {
    best_epoch = cfg.epochs;
  }
  result.best_epoch = best_epoch;
  result.best_val = best_val;
  return result;
}

MimResult pretrain_mim(SwinModel& model, const Dataset& ds, const std::vector<size_t>& indices,
                       const RenderPlan& plan, const MimConfig& cfg) {
  if (indices.empty()) fail("pretrain_mim: empty index set");
  if (plan.pad_h != 0 || plan.pad_w != 0)
    fail("pretrain_mim: image padding is incompatible with column masks; use cell sizes "
         "divisible by the patch size");
  const size_t patch = model.config().patch_size;
  if (plan.config.cell_h % patch != 0 || plan.config.cell_w % patch != 0)
    fail("pretrain_mim: cell size must be divisible by the patch size");

  std::vector<ImageBuffer> images = render_all(ds, indices, plan);
  std::vector<Tensor> params = model.trainable();
  AdamWState opt_state;
  MimResult result;

  for (size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<size_t> order(indices.size());
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng(derive_seed(cfg.seed, {hash_str("mim_shuffle"), epoch}));
    shuffle_rng.shuffle(order);

    double epoch_loss = 0.0;
    size_t batches = 0;
    for (size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const size_t b = std::min(cfg.batch_size, order.size() - start);
      std::vector<const ImageBuffer*> ptrs(b);
      std::vector<MimMask> masks(b);
      for (size_t i = 0; i < b; ++i) {
        const size_t pos = order[start + i];
        ptrs[i] = &images[pos];
        Rng mrng(derive_seed(cfg.seed, {hash_str("mim_mask"), epoch, indices[pos]}));
        masks[i] = mim_mask(plan.layout, plan.config.cell_h, plan.config.cell_w, patch,
                            cfg.col_width, cfg.ratio, mrng);
        if (masks[i].masked_count == 0) {
          // An all-empty draw would make the loss undefined; mask one band.
          Rng retry(derive_seed(cfg.seed, {hash_str("mim_mask_retry"), epoch, indices[pos]}));
          masks[i] = mim_mask(plan.layout, plan.config.cell_h, plan.config.cell_w, patch,
                              cfg.col_width, 1.0, retry);
        }
      }
      Tensor batch = to_float_batch(ptrs);

      Tape tape;
      double loss_value;
      {
        TapeScope scope(tape);
        auto out = model.forward_mim(batch, masks);
        loss_value = static_cast<double>(out.loss.item());
        if (!std::isfinite(loss_value))
          fail("pretrain_mim: non-finite loss at epoch " + std::to_string(epoch + 1));
        backward(tape, out.loss);
      }
      adamw_step(params, opt_state, cfg.lr, 0.9, 0.999, 1e-8, cfg.weight_decay);
      for (Tensor& p : params) p.zero_grad();
      epoch_loss += loss_value;
      ++batches;
    }
    epoch_loss /= static_cast<double>(std::max<size_t>(batches, 1));
    result.epoch_loss.push_back(epoch_loss);
    log_info("mim epoch " + std::to_string(epoch + 1) + " loss " + format_double(epoch_loss));
  }
  return result;
}

// ---- leave-sensors-out ----------------------------------------------------------------

std::vector<MaskEvalRow> leave_sensors_out_eval(SwinModel& model, const Dataset& ds,
                                                const std::vector<size_t>& eval_indices,
                                                const RenderPlan& plan, SensorMaskMode mode,
                                                const std::vector<double>& ratios,
                                                const std::vector<uint64_t>& drop_seeds,
                                                const std::string& static_template) {
  if (eval_indices.empty()) fail("leave_sensors_out_eval: empty eval split");
  if (drop_seeds.empty()) fail("leave_sensors_out_eval: need at least one drop seed");
  const size_t d = ds.num_variables();
  const bool use_static = model.config().static_dim > 0;

  std::vector<int> labels;
  for (size_t idx : eval_indices) labels.push_back(ds.samples[idx].label);
  std::vector<std::string> sentences =
      sentences_for_indices(ds, eval_indices, static_template, use_static);

  std::vector<MaskEvalRow> rows;
  for (double ratio : ratios) {
    MaskEvalRow row;
    row.ratio = ratio;
    for (uint64_t seed : drop_seeds) {
      SensorMaskSpec spec;
      spec.mode = mode;
      spec.ratio = ratio;
      spec.seed = seed;
      if (mode == SensorMaskMode::Fixed) {
        const size_t k = static_cast<size_t>(std::ceil(ratio * static_cast<double>(d)));
        if (k >= d && k > 0) fail("leave_sensors_out_eval: ratio drops all sensors");
        std::vector<size_t> perm(d);
        std::iota(perm.begin(), perm.end(), 0);
        Rng rng(derive_seed(seed, {hash_str("fixed_set")}));
        rng.shuffle(perm);
        spec.fixed_set.assign(perm.begin(), perm.begin() + static_cast<long>(k));
        std::sort(spec.fixed_set.begin(), spec.fixed_set.end());
        row.dropped_sets.push_back(spec.fixed_set);
      }

      std::vector<ImageBuffer> images(eval_indices.size());
      parallel_for(eval_indices.size(), [&](size_t i) {
        Sample copy = drop_sensors(ds.samples[eval_indices[i]], spec, d, eval_indices[i]);
        images[i] = render_planned(ds, copy, plan);
      });
      auto probs = batched_probs(model, images, sentences, 32);
      row.runs.push_back(metrics_from_probs(probs, labels, ds.num_classes));
    }
    row.agg = aggregate_metrics(row.runs);
    rows.push_back(std::move(row));
  }
  return rows;
}

// ---- synthetic data ------------------------------------------------------------------

Dataset synth_generate(size_t n, size_t num_variables, int classes, double drop_ratio,
                       uint64_t seed) {
  if (n == 0 || num_variables == 0 || classes < 1) fail("synth_generate: parameters must be positive");
  if (drop_ratio < 0.0 || drop_ratio >= 1.0) fail("synth_generate: drop_ratio must be in [0,1)");

  constexpr size_t kGridLen = 48;
  constexpr double kSpan = 48.0;

  Dataset ds;
  ds.num_classes = classes;
  for (size_t v = 0; v < num_variables; ++v) ds.variable_names.push_back("v" + std::to_string(v));

  for (size_t i = 0; i < n; ++i) {
    const int label = static_cast<int>(i % static_cast<size_t>(classes));
    Rng rng(derive_seed(seed, {hash_str("synth"), i}));
    Sample s;
    s.id = "synth-" + std::to_string(i);
    s.label = label;
    s.series.resize(num_variables);
    // Class-specific frequency and trend; variable-specific offset and phase.
    const double freq = 0.5 + 1.5 * static_cast<double>(label);
    const double trend = (static_cast<double>(label) - 0.5 * (classes - 1)) * 1.2;
    for (size_t v = 0; v < num_variables; ++v) {
      const double amp = 1.0 + 0.3 * static_cast<double>(v % 3);
      const double phase = 0.7 * static_cast<double>(v);
      const double offset = 2.0 * static_cast<double>(v);
      for (size_t j = 0; j < kGridLen; ++j) {
        if (drop_ratio > 0.0 && rng.uniform() < drop_ratio) continue;
        const double t = static_cast<double>(j) + rng.range(-0.3, 0.3);
        const double u = t / kSpan;
        const double value = offset + amp * std::sin(2.0 * M_PI * freq * u + phase) +
                             trend * u + 0.15 * rng.normal();
        s.series[v].push_back({t, value});
      }
    }
    ds.samples.push_back(std::move(s));
  }
  ds.validate();
  return ds;
}

}  // namespace vitst
