#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "vitst/config.hpp"
#include "vitst/parallel.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace vitst {
namespace {

struct GlobalArgs {
  std::string config_path;
  std::vector<std::string> overrides;
  int64_t seed = -1;
  int threads = 0;
};

RunConfig build_config(const GlobalArgs& g) {
  RunConfig cfg;
  if (!g.config_path.empty()) cfg.apply_file(g.config_path);
  for (const std::string& kv : g.overrides) cfg.apply_line(kv, "--set");
  if (g.seed >= 0) cfg.set("seed", std::to_string(g.seed));
  if (g.threads > 0) cfg.set("threads", std::to_string(g.threads));
  set_max_threads(cfg.threads);
  return cfg;
}

SplitSpec splits_for(const Dataset& ds, const RunConfig& cfg) {
  double tr, va, te;
  cfg.split_fractions(tr, va, te);
  return make_splits(ds, cfg.seed, tr, va, te);
}

const std::vector<size_t>& split_indices(const SplitSpec& s, const std::string& name) {
  if (name == "train") return s.train;
  if (name == "val") return s.val;
  if (name == "test") return s.test;
  fail("unknown split '" + name + "' (expected train|val|test)");
}

json config_json(const RunConfig& cfg) {
  json j = json::object();
  for (const std::string& k : RunConfig::keys()) j[k] = cfg.get(k);
  return j;
}

json metrics_json(const Metrics& m, int num_classes) {
  json j = json::object();
  if (num_classes == 2) {
    j["auroc"] = m.auroc;
    j["auprc"] = m.auprc;
  }
  j["accuracy"] = m.accuracy;
  j["precision"] = m.precision;
  j["recall"] = m.recall;
  j["f1"] = m.f1;
  return j;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail("cannot open for writing: " + path);
  out << text;
  if (!out) fail("write failed: " + path);
}

// Checkpoints carry the full effective config; evaluation commands start
// from it so a checkpoint is usable without re-supplying the train config.
RunConfig config_from_checkpoint(const std::string& path, const GlobalArgs& g) {
  std::string text;
  std::vector<std::pair<std::string, Tensor>> tensors;
  load_checkpoint<float>(path, text, tensors);
  RunConfig stored;
  stored.apply_echo(text);

  RunConfig user;
  if (!g.config_path.empty()) user.apply_file(g.config_path);
  for (const std::string& kv : g.overrides) user.apply_line(kv, "--set");
  for (const std::string& key : user.touched) {
    if (key.rfind("model.", 0) == 0 && user.get(key) != stored.get(key))
      fail("checkpoint/config mismatch: " + key + " is " + stored.get(key) +
           " in the checkpoint but " + user.get(key) + " was requested");
    stored.set(key, user.get(key));
  }
  if (g.seed >= 0) stored.set("seed", std::to_string(g.seed));
  if (g.threads > 0) stored.set("threads", std::to_string(g.threads));
  set_max_threads(stored.threads);
  return stored;
}

SwinModel load_model(const std::string& path, const RunConfig& cfg) {
  std::string text;
  std::vector<std::pair<std::string, Tensor>> tensors;
  load_checkpoint<float>(path, text, tensors);
  ModelConfig mc = ModelConfig::from_text(text);
  SwinModel model(mc, cfg.seed);
  model.load(path);
  model.set_requires_grad(false);
  return model;
}

int cmd_synth(const GlobalArgs& g, size_t n, size_t vars, int classes, double drop,
              const std::string& out) {
  RunConfig cfg = build_config(g);
  Dataset ds = synth_generate(n, vars, classes, drop, cfg.seed);
  write_dataset(ds, out);
  log_info("wrote " + std::to_string(ds.samples.size()) + " samples to " + out);
  return 0;
}

int cmd_convert(const GlobalArgs& g, const std::string& series, const std::string& meta,
                int num_classes, const std::string& dup, const std::string& out) {
  build_config(g);
  DuplicatePolicy policy = DuplicatePolicy::Reject;
  if (dup == "mean")
    policy = DuplicatePolicy::Mean;
  else if (dup == "first")
    policy = DuplicatePolicy::First;
  else if (dup != "error")
    fail("--dup must be error|mean|first");
  Dataset ds = convert_wide_csv(series, meta, num_classes, policy);
  write_dataset(ds, out);
  log_info("converted " + std::to_string(ds.samples.size()) + " samples to " + out);
  return 0;
}

int cmd_fit_limits(const GlobalArgs& g, const std::string& data, const std::string& split,
                   const std::string& out) {
  RunConfig cfg = build_config(g);
  Dataset ds = load_dataset(data);
  std::vector<size_t> indices;
  if (split == "all") {
    indices.resize(ds.samples.size());
    std::iota(indices.begin(), indices.end(), 0);
  } else {
    SplitSpec s = splits_for(ds, cfg);
    indices = split_indices(s, split);
  }
  AxisLimits limits =
      fit_axis_limits(ds, indices, limit_strategy_from_string(cfg.raster_limit_strategy));
  save_axis_limits(limits, ds.variable_names, out);
  log_info("wrote limits for " + std::to_string(ds.num_variables()) + " variables to " + out);
  return 0;
}

RenderPlan plan_for(const Dataset& ds, const SplitSpec& splits, const RunConfig& cfg,
                    size_t patch) {
  return make_render_plan(ds, splits.train,
                          limit_strategy_from_string(cfg.raster_limit_strategy),
                          cfg.raster_options(), patch);
}

int cmd_render(const GlobalArgs& g, const std::string& data, const std::string& limits_path,
               const std::string& split, const std::string& out_dir) {
  RunConfig cfg = build_config(g);
  Dataset ds = load_dataset(data);
  SplitSpec splits = splits_for(ds, cfg);
  RenderPlan plan = plan_for(ds, splits, cfg, cfg.model_patch_size);
  if (!limits_path.empty()) plan.limits = load_axis_limits(limits_path, ds.variable_names);

  std::vector<size_t> indices;
  if (split == "all") {
    indices.resize(ds.samples.size());
    std::iota(indices.begin(), indices.end(), 0);
  } else {
    indices = split_indices(splits, split);
  }

  fs::create_directories(out_dir);
  parallel_for(indices.size(), [&](size_t i) {
    const Sample& s = ds.samples[indices[i]];
    ImageBuffer img = render_planned(ds, s, plan);
    write_image(img, (fs::path(out_dir) / (s.id + ".ppm")).string());
  });

  json manifest;
  manifest["config"] = config_json(cfg);
  manifest["seed"] = cfg.seed;
  manifest["split"] = split;
  manifest["count"] = indices.size();
  json order = json::array();
  for (size_t v : plan.order) order.push_back(v);
  manifest["variable_order"] = order;
  write_text((fs::path(out_dir) / "render_manifest.json").string(), manifest.dump(2) + "\n");
  log_info("rendered " + std::to_string(indices.size()) + " images to " + out_dir);
  return 0;
}

std::string train_log_csv(const RunConfig& cfg, const TrainResult& result) {
  std::ostringstream out;
  std::istringstream echo(cfg.echo());
  std::string line;
  while (std::getline(echo, line)) out << "# " << line << "\n";
  out << "epoch,loss,val_metric\n";
  for (const TrainLogEntry& e : result.log)
    out << e.epoch << "," << format_double(e.loss) << "," << format_double(e.val_metric) << "\n";
  return out.str();
}

int cmd_train(const GlobalArgs& g, const std::string& data, const std::string& out,
              const std::string& log_path, const std::string& warm_start_path) {
  RunConfig cfg = build_config(g);
  Dataset ds = load_dataset(data);
  SplitSpec splits = splits_for(ds, cfg);
  ModelConfig mc = cfg.model_config(static_cast<size_t>(ds.num_classes));
  cfg.set("model.num_classes", std::to_string(mc.num_classes));

  RenderPlan plan = plan_for(ds, splits, cfg, mc.patch_size);
  SwinModel model(mc, cfg.seed);
  if (!warm_start_path.empty()) {
    auto names = model.warm_start(warm_start_path);
    log_info("warm start loaded " + std::to_string(names.size()) + " tensors");
  }
  TrainResult result = train_classifier(model, ds, splits, plan, cfg.train_config());
  model.save(out, cfg.echo());
  write_text(log_path.empty() ? out + ".log.csv" : log_path, train_log_csv(cfg, result));
  log_info("best val " + format_double(result.best_val) + " at epoch " +
           std::to_string(result.best_epoch));
  return 0;
}

int cmd_pretrain(const GlobalArgs& g, const std::string& data, const std::string& out,
                 const std::string& log_path) {
  RunConfig cfg = build_config(g);
  Dataset ds = load_dataset(data);
  SplitSpec splits = splits_for(ds, cfg);
  ModelConfig mc = cfg.model_config(static_cast<size_t>(ds.num_classes));
  cfg.set("model.num_classes", std::to_string(mc.num_classes));

  RenderPlan plan = plan_for(ds, splits, cfg, mc.patch_size);
  SwinModel model(mc, cfg.seed);
  MimResult result = pretrain_mim(model, ds, splits.train, plan, cfg.mim_config());
  model.save(out, cfg.echo());

  std::ostringstream log;
  std::istringstream echo(cfg.echo());
  std::string line;
  while (std::getline(echo, line)) log << "# " << line << "\n";
  log << "epoch,loss\n";
  for (size_t i = 0; i < result.epoch_loss.size(); ++i)
    log << (i + 1) << "," << format_double(result.epoch_loss[i]) << "\n";
  write_text(log_path.empty() ? out + ".log.csv" : log_path, log.str());
  return 0;
}

int cmd_eval(const GlobalArgs& g, const std::string& checkpoint, const std::string& data,
             const std::string& split, const std::string& out) {
  RunConfig cfg = config_from_checkpoint(checkpoint, g);
  Dataset ds = load_dataset(data);
  SplitSpec splits = splits_for(ds, cfg);
  SwinModel model = load_model(checkpoint, cfg);
  RenderPlan plan = plan_for(ds, splits, cfg, model.config().patch_size);

  Metrics m = evaluate(model, ds, split_indices(splits, split), plan, cfg.train_static_template);
  json j;
  j["command"] = "eval";
  j["config"] = config_json(cfg);
  j["seed"] = cfg.seed;
  j["split"] = split;
  j["metrics"] = metrics_json(m, ds.num_classes);
  j["sensor_mask"] = nullptr;
  write_text(out, j.dump(2) + "\n");
  log_info("metrics written to " + out);
  return 0;
}

int cmd_mask_eval(const GlobalArgs& g, const std::string& checkpoint, const std::string& data,
                  const std::string& out) {
  RunConfig cfg = config_from_checkpoint(checkpoint, g);
  Dataset ds = load_dataset(data);
  SplitSpec splits = splits_for(ds, cfg);
  SwinModel model = load_model(checkpoint, cfg);
  RenderPlan plan = plan_for(ds, splits, cfg, model.config().patch_size);

  SensorMaskMode mode;
  if (cfg.eval_mode == "fixed")
    mode = SensorMaskMode::Fixed;
  else if (cfg.eval_mode == "random")
    mode = SensorMaskMode::Random;
  else
    fail("eval.mode must be fixed or random");

  std::vector<uint64_t> drop_seeds;
  for (size_t i = 0; i < std::max<size_t>(cfg.eval_drop_seeds, 1); ++i)
    drop_seeds.push_back(cfg.seed + i);

  auto rows = leave_sensors_out_eval(model, ds, split_indices(splits, cfg.eval_split), plan,
                                     mode, cfg.eval_ratio_list(), drop_seeds,
                                     cfg.train_static_template);

  std::ostringstream csv;
  std::istringstream echo(cfg.echo());
  std::string line;
  while (std::getline(echo, line)) csv << "# " << line << "\n";
  csv << "# averaging=macro auprc=average_precision random_mode=per_sample_redraw\n";
  csv << "# drop_seeds=";
  for (size_t i = 0; i < drop_seeds.size(); ++i) csv << (i ? "," : "") << drop_seeds[i];
  csv << "\n";
  for (const MaskEvalRow& row : rows) {
    for (size_t i = 0; i < row.dropped_sets.size(); ++i) {
      csv << "# ratio=" << format_double(row.ratio) << " seed=" << drop_seeds[i]
          << " fixed_set=";
      for (size_t k = 0; k < row.dropped_sets[i].size(); ++k)
        csv << (k ? "," : "") << row.dropped_sets[i][k];
      csv << "\n";
    }
  }
  if (ds.num_classes == 2) {
    csv << "ratio,auroc,auprc\n";
    for (const MaskEvalRow& row : rows)
      csv << format_double(row.ratio) << "," << format_double(row.agg.mean.auroc) << ","
          << format_double(row.agg.mean.auprc) << "\n";
  } else {
    csv << "ratio,accuracy,precision,recall,f1\n";
    for (const MaskEvalRow& row : rows)
      csv << format_double(row.ratio) << "," << format_double(row.agg.mean.accuracy) << ","
          << format_double(row.agg.mean.precision) << "," << format_double(row.agg.mean.recall)
          << "," << format_double(row.agg.mean.f1) << "\n";
  }
  write_text(out, csv.str());
  log_info("mask-eval table written to " + out);
  return 0;
}

int cmd_attn(const GlobalArgs& g, const std::string& checkpoint, const std::string& data,
             const std::string& sample_id, const std::string& out) {
  RunConfig cfg = config_from_checkpoint(checkpoint, g);
  Dataset ds = load_dataset(data);
  SplitSpec splits = splits_for(ds, cfg);
  SwinModel model = load_model(checkpoint, cfg);
  RenderPlan plan = plan_for(ds, splits, cfg, model.config().patch_size);

  const Sample* sample = nullptr;
  for (const Sample& s : ds.samples)
    if (s.id == sample_id) sample = &s;
  if (!sample) fail("sample id '" + sample_id + "' not found in " + data);

  ImageBuffer img = render_planned(ds, *sample, plan);
  Tensor batch = Tensor::zeros({1, img.height, img.width, 3});
  for (size_t i = 0; i < img.pixels.size(); ++i)
    batch.data()[i] = static_cast<float>(img.pixels[i]) / 255.0f;

  size_t hh = 0, ww = 0;
  std::vector<double> heat = model.attention_summary(batch, &hh, &ww);

  // Original on the left, grayscale heat map on the right.
  ImageBuffer side(img.height, img.width * 2);
  for (size_t y = 0; y < img.height; ++y) {
    std::copy(img.at(y, 0), img.at(y, 0) + img.width * 3, side.at(y, 0));
    for (size_t x = 0; x < img.width; ++x) {
      const auto v = static_cast<uint8_t>(std::lround(heat[y * ww + x] * 255.0));
      side.set(y, img.width + x, {v, v, v});
    }
  }
  write_image(side, out);
  log_info("attention diagnostic written to " + out);
  return 0;
}

int run(int argc, char** argv) {
  CLI::App app{"vitst: irregular time series -> line-graph images -> shifted-window transformer"};
  app.require_subcommand(1);

  GlobalArgs g;
  app.add_option("--config", g.config_path, "key=value config file");
  app.add_option("--set", g.overrides, "override, e.g. --set train.lr=1e-3")->take_all();
  app.add_option("--seed", g.seed, "global seed");
  app.add_option("--threads", g.threads, "worker cap (1 = bit-reproducible training)");

  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  size_t synth_n = 600, synth_vars = 8;
  int synth_classes = 2;
  double synth_drop = 0.6;
  std::string synth_out;
  synth->add_option("--n", synth_n, "sample count");
  synth->add_option("--vars", synth_vars, "variable count");
  synth->add_option("--classes", synth_classes, "class count");
  synth->add_option("--drop", synth_drop, "fraction of observations removed");
  synth->add_option("--out", synth_out, "output dataset path")->required();

  auto* convert = app.add_subcommand("convert", "wide CSV -> canonical dataset");
  std::string conv_series, conv_meta, conv_out, conv_dup = "error";
  int conv_classes = 0;
  convert->add_option("--series", conv_series, "series csv (id,time,var...)")->required();
  convert->add_option("--meta", conv_meta, "meta csv (id,label[,static...])")->required();
  convert->add_option("--num-classes", conv_classes, "class count (default: max label + 1)");
  convert->add_option("--dup", conv_dup, "duplicate timestamp policy: error|mean|first");
  convert->add_option("--out", conv_out, "output dataset path")->required();

  auto* fit = app.add_subcommand("fit-limits", "fit axis limits on a split");
  std::string fit_data, fit_split = "train", fit_out;
  fit->add_option("--data", fit_data)->required();
  fit->add_option("--split", fit_split, "train|val|test|all");
  fit->add_option("--out", fit_out)->required();

  auto* render = app.add_subcommand("render", "render samples to PPM images");
  std::string render_data, render_limits, render_split = "all", render_dir;
  render->add_option("--data", render_data)->required();
  render->add_option("--limits", render_limits, "axis-limits file (default: fit on train)");
  render->add_option("--split", render_split, "train|val|test|all");
  render->add_option("--out-dir", render_dir)->required();

  auto* train = app.add_subcommand("train", "fine-tune a classifier");
  std::string train_data, train_out, train_log, train_warm;
  train->add_option("--data", train_data)->required();
  train->add_option("--out", train_out, "checkpoint path")->required();
  train->add_option("--log", train_log, "training log csv (default <out>.log.csv)");
  train->add_option("--warm-start", train_warm, "checkpoint to warm-start the encoder from");

  auto* pretrain = app.add_subcommand("pretrain", "masked-image pretraining");
  std::string pre_data, pre_out, pre_log;
  pretrain->add_option("--data", pre_data)->required();
  pretrain->add_option("--out", pre_out, "checkpoint path")->required();
  pretrain->add_option("--log", pre_log, "loss log csv (default <out>.log.csv)");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  std::string eval_ckpt, eval_data, eval_split_arg = "test", eval_out;
  eval->add_option("--checkpoint", eval_ckpt)->required();
  eval->add_option("--data", eval_data)->required();
  eval->add_option("--split", eval_split_arg, "train|val|test");
  eval->add_option("--out", eval_out, "metrics json path")->required();

  auto* mask_eval = app.add_subcommand("mask-eval", "leave-sensors-out evaluation");
  std::string me_ckpt, me_data, me_out;
  mask_eval->add_option("--checkpoint", me_ckpt)->required();
  mask_eval->add_option("--data", me_data)->required();
  mask_eval->add_option("--out", me_out, "csv path")->required();

  auto* attn = app.add_subcommand("attn", "attention heat map for one sample");
  std::string attn_ckpt, attn_data, attn_id, attn_out;
  attn->add_option("--checkpoint", attn_ckpt)->required();
  attn->add_option("--data", attn_data)->required();
  attn->add_option("--id", attn_id, "sample id")->required();
  attn->add_option("--out", attn_out, "side-by-side ppm path")->required();

  for (CLI::App* sub : app.get_subcommands({})) sub->fallthrough();

  CLI11_PARSE(app, argc, argv);

  if (synth->parsed()) return cmd_synth(g, synth_n, synth_vars, synth_classes, synth_drop, synth_out);
  if (convert->parsed()) return cmd_convert(g, conv_series, conv_meta, conv_classes, conv_dup, conv_out);
  if (fit->parsed()) return cmd_fit_limits(g, fit_data, fit_split, fit_out);
  if (render->parsed()) return cmd_render(g, render_data, render_limits, render_split, render_dir);
  if (train->parsed()) return cmd_train(g, train_data, train_out, train_log, train_warm);
  if (pretrain->parsed()) return cmd_pretrain(g, pre_data, pre_out, pre_log);
  if (eval->parsed()) return cmd_eval(g, eval_ckpt, eval_data, eval_split_arg, eval_out);
  if (mask_eval->parsed()) return cmd_mask_eval(g, me_ckpt, me_data, me_out);
  if (attn->parsed()) return cmd_attn(g, attn_ckpt, attn_data, attn_id, attn_out);
  return 1;
}

}  // namespace
}  // namespace vitst

int main(int argc, char** argv) {
  try {
    return vitst::run(argc, argv);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
