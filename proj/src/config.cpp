#include "vitst/config.hpp"

#include <algorithm>
#include <fstream>
#include <functional>
#include <sstream>

namespace vitst {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "1" || v == "true" || v == "on" || v == "yes") return true;
  if (v == "0" || v == "false" || v == "off" || v == "no") return false;
  fail("config: bad boolean for " + key + ": '" + v + "'");
}

size_t parse_size(const std::string& v, const std::string& key) {
  try {
    return static_cast<size_t>(std::stoull(v));
  } catch (const std::exception&) {
    fail("config: bad integer for " + key + ": '" + v + "'");
  }
}

double parse_real(const std::string& v, const std::string& key) {
  try {
    return std::stod(v);
  } catch (const std::exception&) {
    fail("config: bad number for " + key + ": '" + v + "'");
  }
}

struct Entry {
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

const std::vector<std::pair<std::string, Entry>>& registry() {
  static const std::vector<std::pair<std::string, Entry>> table = [] {
    std::vector<std::pair<std::string, Entry>> t;
    auto add = [&](const std::string& key, auto getter, auto setter) {
      t.emplace_back(key, Entry{getter, setter});
    };
    auto size_field = [&](const std::string& key, size_t RunConfig::*f) {
      add(key, [f](const RunConfig& c) { return std::to_string(c.*f); },
          [f, key](RunConfig& c, const std::string& v) { c.*f = parse_size(v, key); });
    };
    auto real_field = [&](const std::string& key, double RunConfig::*f) {
      add(key, [f](const RunConfig& c) { return format_double(c.*f); },
          [f, key](RunConfig& c, const std::string& v) { c.*f = parse_real(v, key); });
    };
    auto bool_field = [&](const std::string& key, bool RunConfig::*f) {
      add(key, [f](const RunConfig& c) { return std::string(c.*f ? "1" : "0"); },
          [f, key](RunConfig& c, const std::string& v) { c.*f = parse_bool(v, key); });
    };
    auto string_field = [&](const std::string& key, std::string RunConfig::*f) {
      add(key, [f](const RunConfig& c) { return c.*f; },
          [f](RunConfig& c, const std::string& v) { c.*f = v; });
    };

    add("seed", [](const RunConfig& c) { return std::to_string(c.seed); },
        [](RunConfig& c, const std::string& v) {
          c.seed = static_cast<uint64_t>(parse_size(v, "seed"));
        });
    add("threads", [](const RunConfig& c) { return std::to_string(c.threads); },
        [](RunConfig& c, const std::string& v) {
          c.threads = static_cast<int>(parse_size(v, "threads"));
        });
    string_field("split.ratios", &RunConfig::split_ratios);

    size_field("raster.cell_h", &RunConfig::raster_cell_h);
    size_field("raster.cell_w", &RunConfig::raster_cell_w);
    size_field("raster.image_h", &RunConfig::raster_image_h);
    size_field("raster.image_w", &RunConfig::raster_image_w);
    bool_field("raster.markers", &RunConfig::raster_markers);
    bool_field("raster.interpolate", &RunConfig::raster_interpolate);
    bool_field("raster.colors", &RunConfig::raster_colors);
    bool_field("raster.sorted", &RunConfig::raster_sorted);
    string_field("raster.oob", &RunConfig::raster_oob);
    string_field("raster.limit_strategy", &RunConfig::raster_limit_strategy);

    bool_field("augment.cutout", &RunConfig::augment_cutout);
    size_field("augment.cutout_regions", &RunConfig::augment_cutout_regions);
    size_field("augment.cutout_h", &RunConfig::augment_cutout_h);
    size_field("augment.cutout_w", &RunConfig::augment_cutout_w);

    size_field("model.patch_size", &RunConfig::model_patch_size);
    size_field("model.window", &RunConfig::model_window);
    string_field("model.depths", &RunConfig::model_depths);
    string_field("model.heads", &RunConfig::model_heads);
    size_field("model.embed_dim", &RunConfig::model_embed_dim);
    size_field("model.mlp_ratio", &RunConfig::model_mlp_ratio);
    size_field("model.num_classes", &RunConfig::model_num_classes);
    size_field("model.static_dim", &RunConfig::model_static_dim);
    bool_field("model.gelu_exact", &RunConfig::model_gelu_exact);

    size_field("train.epochs", &RunConfig::train_epochs);
    size_field("train.batch_size", &RunConfig::train_batch_size);
    real_field("train.lr", &RunConfig::train_lr);
    real_field("train.weight_decay", &RunConfig::train_weight_decay);
    bool_field("train.upsample", &RunConfig::train_upsample);
    bool_field("train.balance_batches", &RunConfig::train_balance_batches);
    string_field("train.static_template", &RunConfig::train_static_template);

    size_field("mim.epochs", &RunConfig::mim_epochs);
    size_field("mim.batch_size", &RunConfig::mim_batch_size);
    size_field("mim.col_width", &RunConfig::mim_col_width);
    real_field("mim.lr", &RunConfig::mim_lr);
    real_field("mim.weight_decay", &RunConfig::mim_weight_decay);
    real_field("mim.ratio", &RunConfig::mim_ratio);

    string_field("eval.mode", &RunConfig::eval_mode);
    string_field("eval.ratios", &RunConfig::eval_ratios);
    size_field("eval.drop_seeds", &RunConfig::eval_drop_seeds);
    string_field("eval.split", &RunConfig::eval_split);
    return t;
  }();
  return table;
}

const Entry* find_entry(const std::string& key) {
  for (const auto& [k, e] : registry())
    if (k == key) return &e;
  return nullptr;
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) {
  const Entry* e = find_entry(key);
  if (!e) fail("config: unknown key '" + key + "'");
  e->set(*this, value);
  touched.insert(key);
}

std::string RunConfig::get(const std::string& key) const {
  const Entry* e = find_entry(key);
  if (!e) fail("config: unknown key '" + key + "'");
  return e->get(*this);
}

std::vector<std::string> RunConfig::keys() {
  std::vector<std::string> out;
  for (const auto& [k, e] : registry()) out.push_back(k);
  std::sort(out.begin(), out.end());
  return out;
}

std::string RunConfig::echo() const {
  std::string out;
  for (const std::string& k : keys()) out += k + "=" + get(k) + "\n";
  return out;
}

void RunConfig::apply_line(const std::string& raw, const std::string& where) {
  std::string line = trim(raw);
  if (line.empty() || line[0] == '#') return;
  size_t eq = line.find('=');
  if (eq == std::string::npos) fail(where + ": expected key=value, got '" + line + "'");
  std::string key = trim(line.substr(0, eq));
  std::string value = trim(line.substr(eq + 1));
  set(key, value);
}

void RunConfig::apply_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail("cannot open config file: " + path);
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    apply_line(line, path + ":" + std::to_string(lineno));
  }
}

void RunConfig::apply_echo(const std::string& text) {
  std::stringstream ss(text);
  std::string line;
  while (std::getline(ss, line)) {
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    size_t eq = line.find('=');
    if (eq == std::string::npos) continue;
    std::string key = trim(line.substr(0, eq));
    if (!find_entry(key)) continue;
    set(key, trim(line.substr(eq + 1)));
  }
}

std::vector<double> parse_double_list(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    out.push_back(parse_real(item, "list"));
  }
  return out;
}

ModelConfig RunConfig::model_config(size_t dataset_classes) const {
  ModelConfig m;
  m.patch_size = model_patch_size;
  m.window = model_window;
  m.embed_dim = model_embed_dim;
  m.mlp_ratio = model_mlp_ratio;
  m.num_classes = model_num_classes > 0 ? model_num_classes : dataset_classes;
  m.static_dim = model_static_dim;
  m.gelu_exact = model_gelu_exact;
  m.depths.clear();
  for (double v : parse_double_list(model_depths)) m.depths.push_back(static_cast<size_t>(v));
  m.heads.clear();
  for (double v : parse_double_list(model_heads)) m.heads.push_back(static_cast<size_t>(v));
  m.validate();
  return m;
}

RasterOptions RunConfig::raster_options() const {
  RasterOptions o;
  o.cell_h = raster_cell_h;
  o.cell_w = raster_cell_w;
  o.image_h = raster_image_h;
  o.image_w = raster_image_w;
  o.markers = raster_markers;
  o.interpolate = raster_interpolate;
  o.colors = raster_colors;
  o.sorted_order = raster_sorted;
  if (raster_oob == "clamp")
    o.oob = OobPolicy::Clamp;
  else if (raster_oob == "clip")
    o.oob = OobPolicy::Clip;
  else
    fail("config: raster.oob must be clamp or clip");
  return o;
}

TrainConfig RunConfig::train_config() const {
  TrainConfig t;
  t.epochs = train_epochs;
  t.batch_size = train_batch_size;
  t.lr = train_lr;
  t.weight_decay = train_weight_decay;
  t.seed = seed;
  t.cutout = augment_cutout;
  t.cutout_regions = augment_cutout_regions;
  t.cutout_h = augment_cutout_h;
  t.cutout_w = augment_cutout_w;
  t.upsample = train_upsample;
  t.balance_batches = train_balance_batches;
  t.static_template = train_static_template;
  t.validate();
  return t;
}

MimConfig RunConfig::mim_config() const {
  MimConfig m;
  m.epochs = mim_epochs;
  m.batch_size = mim_batch_size;
  m.lr = mim_lr;
  m.weight_decay = mim_weight_decay;
  m.seed = seed;
  m.col_width = mim_col_width;
  m.ratio = mim_ratio;
  return m;
}

void RunConfig::split_fractions(double& train, double& val, double& test) const {
  auto parts = parse_double_list(split_ratios);
  if (parts.size() != 3) fail("config: split.ratios must have three comma-separated values");
  train = parts[0];
  val = parts[1];
  test = parts[2];
}

std::vector<double> RunConfig::eval_ratio_list() const { return parse_double_list(eval_ratios); }

}  // namespace vitst
