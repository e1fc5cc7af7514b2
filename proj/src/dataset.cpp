#include "vitst/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "vitst/common.hpp"

namespace vitst {

using json = nlohmann::json;

namespace {

void check_finite(double v, const std::string& where) {
  if (!std::isfinite(v)) fail(where + ": non-finite value");
}

std::string locus(const std::string& path, size_t line) {
  return path + ":" + std::to_string(line);
}

json parse_line(const std::string& text, const std::string& path, size_t line) {
  json j = json::parse(text, nullptr, false);
  if (j.is_discarded()) fail(locus(path, line) + ": malformed record");
  if (!j.is_object()) fail(locus(path, line) + ": record is not an object");
  return j;
}

StaticValue static_from_json(const json& v, const std::string& where) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number()) return v.get<double>();
  fail(where + ": static field must be a string or number");
}

}  // namespace

void Dataset::validate() const {
  if (num_classes < 1) fail("dataset: num_classes must be >= 1");
  const size_t d = num_variables();
  for (size_t i = 0; i < samples.size(); ++i) {
    const Sample& s = samples[i];
    const std::string where = "sample '" + s.id + "'";
    if (s.series.size() != d)
      fail(where + ": has " + std::to_string(s.series.size()) + " series, dataset declares " +
           std::to_string(d));
    if (s.label < 0 || s.label >= num_classes) fail(where + ": label out of range");
    for (size_t v = 0; v < d; ++v) {
      const auto& seq = s.series[v];
      for (size_t j = 0; j < seq.size(); ++j) {
        check_finite(seq[j].time, where + " time");
        check_finite(seq[j].value, where + " value");
        if (j > 0) {
          if (seq[j].time == seq[j - 1].time)
            fail(where + ": duplicate timestamp in variable '" + variable_names[v] + "'");
          if (seq[j].time < seq[j - 1].time)
            fail(where + ": times not increasing in variable '" + variable_names[v] + "'");
        }
      }
    }
  }
}

Dataset load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail("cannot open dataset file: " + path);

  Dataset ds;
  std::string line;
  size_t lineno = 0;

  if (!std::getline(in, line)) fail(path + ": empty file, missing header record");
  ++lineno;
  json header = parse_line(line, path, lineno);
  if (!header.contains("variables") || !header["variables"].is_array())
    fail(locus(path, lineno) + ": header lacks 'variables' array");
  for (const auto& v : header["variables"]) ds.variable_names.push_back(v.get<std::string>());
  if (!header.contains("num_classes") || !header["num_classes"].is_number_integer())
    fail(locus(path, lineno) + ": header lacks integer 'num_classes'");
  ds.num_classes = header["num_classes"].get<int>();
  if (header.contains("static_schema")) {
    for (const auto& v : header["static_schema"]) ds.static_schema.push_back(v.get<std::string>());
  }

  const size_t d = ds.num_variables();
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j = parse_line(line, path, lineno);
    Sample s;
    const std::string where = locus(path, lineno);
    if (!j.contains("id")) fail(where + ": record lacks 'id'");
    s.id = j["id"].is_string() ? j["id"].get<std::string>() : j["id"].dump();
    if (!j.contains("label") || !j["label"].is_number_integer())
      fail(where + ": record lacks integer 'label'");
    s.label = j["label"].get<int>();
    if (s.label < 0 || s.label >= ds.num_classes) fail(where + ": label out of range");
    if (j.contains("static") && !j["static"].is_null()) {
      for (auto it = j["static"].begin(); it != j["static"].end(); ++it)
        s.static_fields[it.key()] = static_from_json(it.value(), where);
    }
    if (!j.contains("series") || !j["series"].is_array())
      fail(where + ": record lacks 'series' array");
    if (j["series"].size() != d)
      fail(where + ": series count " + std::to_string(j["series"].size()) +
           " != declared variable count " + std::to_string(d));
    s.series.resize(d);
    for (size_t v = 0; v < d; ++v) {
      for (const auto& pair : j["series"][v]) {
        if (!pair.is_array() || pair.size() != 2 || !pair[0].is_number() || !pair[1].is_number())
          fail(where + ": observation must be a [time, value] pair");
        Observation o{pair[0].get<double>(), pair[1].get<double>()};
        check_finite(o.time, where);
        check_finite(o.value, where);
        if (!s.series[v].empty()) {
          if (o.time == s.series[v].back().time)
            fail(where + ": duplicate timestamp within variable '" + ds.variable_names[v] + "'");
          if (o.time < s.series[v].back().time)
            fail(where + ": times not increasing in variable '" + ds.variable_names[v] + "'");
        }
        s.series[v].push_back(o);
      }
    }
    ds.samples.push_back(std::move(s));
  }
  ds.validate();
  return ds;
}

void write_dataset(const Dataset& ds, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail("cannot open for writing: " + path);
  json header;
  header["variables"] = ds.variable_names;
  header["num_classes"] = ds.num_classes;
  header["static_schema"] = ds.static_schema;
  out << header.dump() << "\n";
  for (const Sample& s : ds.samples) {
    json j;
    j["id"] = s.id;
    j["label"] = s.label;
    json st = json::object();
    for (const auto& [k, v] : s.static_fields) {
      if (std::holds_alternative<double>(v))
        st[k] = std::get<double>(v);
      else
        st[k] = std::get<std::string>(v);
    }
    j["static"] = st;
    json series = json::array();
    for (const auto& seq : s.series) {
      json sj = json::array();
      for (const Observation& o : seq) sj.push_back(json::array({o.time, o.value}));
      series.push_back(sj);
    }
    j["series"] = series;
    out << j.dump() << "\n";
  }
  if (!out) fail("write failed: " + path);
}

namespace {

std::vector<std::string> split_csv_row(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace

Dataset convert_wide_csv(const std::string& series_csv, const std::string& meta_csv,
                         int num_classes, DuplicatePolicy dup) {
  std::ifstream meta(meta_csv);
  if (!meta) fail("cannot open meta csv: " + meta_csv);
  std::string line;
  if (!std::getline(meta, line)) fail(meta_csv + ": empty");
  auto meta_header = split_csv_row(line);
  if (meta_header.size() < 2 || meta_header[0] != "id" || meta_header[1] != "label")
    fail(meta_csv + ": header must start with id,label");

  Dataset ds;
  for (size_t i = 2; i < meta_header.size(); ++i) ds.static_schema.push_back(meta_header[i]);

  std::map<std::string, size_t> index_of;
  size_t lineno = 1;
  while (std::getline(meta, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto row = split_csv_row(line);
    if (row.size() != meta_header.size())
      fail(locus(meta_csv, lineno) + ": expected " + std::to_string(meta_header.size()) +
           " columns");
    Sample s;
    s.id = row[0];
    try {
      s.label = std::stoi(row[1]);
    } catch (const std::exception&) {
      fail(locus(meta_csv, lineno) + ": label is not an integer");
    }
    for (size_t i = 2; i < row.size(); ++i) {
      if (row[i].empty()) continue;
      char* end = nullptr;
      double v = std::strtod(row[i].c_str(), &end);
      if (end && *end == '\0' && std::isfinite(v))
        s.static_fields[meta_header[i]] = v;
      else
        s.static_fields[meta_header[i]] = row[i];
    }
    if (index_of.count(s.id)) fail(locus(meta_csv, lineno) + ": duplicate sample id " + s.id);
    index_of[s.id] = ds.samples.size();
    ds.samples.push_back(std::move(s));
  }

  std::ifstream series(series_csv);
  if (!series) fail("cannot open series csv: " + series_csv);
  if (!std::getline(series, line)) fail(series_csv + ": empty");
  auto header = split_csv_row(line);
  if (header.size() < 3 || header[0] != "id" || header[1] != "time")
    fail(series_csv + ": header must start with id,time followed by variable names");
  for (size_t i = 2; i < header.size(); ++i) ds.variable_names.push_back(header[i]);
  const size_t d = ds.num_variables();
  for (Sample& s : ds.samples) s.series.resize(d);

  // Collected per (sample, variable, time) so the duplicate policy can act.
  lineno = 1;
  std::vector<std::vector<std::vector<Observation>>> raw(ds.samples.size());
  for (auto& r : raw) r.resize(d);
  while (std::getline(series, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto row = split_csv_row(line);
    if (row.size() != header.size())
      fail(locus(series_csv, lineno) + ": expected " + std::to_string(header.size()) + " columns");
    auto it = index_of.find(row[0]);
    if (it == index_of.end())
      fail(locus(series_csv, lineno) + ": sample id '" + row[0] + "' not present in meta csv");
    char* end = nullptr;
    double t = std::strtod(row[1].c_str(), &end);
    if (!end || *end != '\0' || !std::isfinite(t))
      fail(locus(series_csv, lineno) + ": bad time value '" + row[1] + "'");
    for (size_t v = 0; v < d; ++v) {
      const std::string& cell = row[2 + v];
      if (cell.empty()) continue;
      double val = std::strtod(cell.c_str(), &end);
      if (!end || *end != '\0' || !std::isfinite(val))
        fail(locus(series_csv, lineno) + ": bad value '" + cell + "'");
      raw[it->second][v].push_back({t, val});
    }
  }

  for (size_t i = 0; i < raw.size(); ++i) {
    for (size_t v = 0; v < d; ++v) {
      auto& seq = raw[i][v];
      std::stable_sort(seq.begin(), seq.end(),
                       [](const Observation& a, const Observation& b) { return a.time < b.time; });
      std::vector<Observation> out;
      for (size_t j = 0; j < seq.size();) {
        size_t k = j;
        double sum = 0.0;
        while (k < seq.size() && seq[k].time == seq[j].time) sum += seq[k++].value;
        if (k - j > 1 && dup == DuplicatePolicy::Reject)
          fail("sample '" + ds.samples[i].id + "': duplicate timestamp " +
               format_double(seq[j].time) + " in variable '" + ds.variable_names[v] +
               "' (use --dup mean|first)");
        double value = (dup == DuplicatePolicy::Mean) ? sum / static_cast<double>(k - j)
                                                      : seq[j].value;
        out.push_back({seq[j].time, value});
        j = k;
      }
      ds.samples[i].series[v] = std::move(out);
    }
  }

  if (num_classes > 0) {
    ds.num_classes = num_classes;
  } else {
    int max_label = -1;
    for (const Sample& s : ds.samples) max_label = std::max(max_label, s.label);
    ds.num_classes = max_label + 1;
  }
  ds.validate();
  return ds;
}

SplitSpec make_splits(const Dataset& ds, uint64_t seed, double train_ratio, double val_ratio,
                      double test_ratio) {
  const double sum = train_ratio + val_ratio + test_ratio;
  if (std::abs(sum - 1.0) > 1e-9) fail("make_splits: ratios must sum to 1");
  if (train_ratio < 0 || val_ratio < 0 || test_ratio < 0) fail("make_splits: negative ratio");
  const size_t n = ds.samples.size();
  if (n < 3) fail("make_splits: need at least 3 samples");

  std::vector<std::vector<size_t>> by_class(ds.num_classes);
  for (size_t i = 0; i < n; ++i) by_class[ds.samples[i].label].push_back(i);

  const double ratios[3] = {train_ratio, val_ratio, test_ratio};
  SplitSpec spec;
  spec.seed = seed;
  std::vector<size_t>* outs[3] = {&spec.train, &spec.val, &spec.test};

  for (int c = 0; c < ds.num_classes; ++c) {
    auto& members = by_class[c];
    if (members.empty()) continue;
    Rng rng(derive_seed(seed, {hash_str("split"), static_cast<uint64_t>(c)}));
    rng.shuffle(members);

    // Largest-remainder allocation keeps each class's per-split share within
    // one sample of the exact proportion.
    size_t counts[3];
    double frac[3];
    size_t assigned = 0;
    for (int s = 0; s < 3; ++s) {
      double exact = ratios[s] * static_cast<double>(members.size());
      counts[s] = static_cast<size_t>(std::floor(exact));
      frac[s] = exact - std::floor(exact);
      assigned += counts[s];
    }
    int order[3] = {0, 1, 2};
    std::sort(order, order + 3, [&](int a, int b) {
      if (frac[a] != frac[b]) return frac[a] > frac[b];
      return a < b;
    });
    for (size_t r = 0; r < members.size() - assigned; ++r) counts[order[r % 3]]++;

    for (int s = 0; s < 3; ++s) {
      if (ratios[s] > 0 && counts[s] == 0)
        fail("make_splits: class " + std::to_string(c) +
             " cannot be stratified into all requested splits");
    }
    size_t pos = 0;
    for (int s = 0; s < 3; ++s)
      for (size_t k = 0; k < counts[s]; ++k) outs[s]->push_back(members[pos++]);
  }
  for (auto* out : outs) std::sort(out->begin(), out->end());
  return spec;
}

std::vector<double> missing_ratios(const Dataset& ds, const std::vector<size_t>& indices) {
  if (indices.empty()) fail("missing_ratios: indices must be non-empty");
  const size_t d = ds.num_variables();
  std::vector<double> observed(d, 0.0);
  double opportunities = 0.0;
  for (size_t idx : indices) {
    const Sample& s = ds.samples.at(idx);
    std::set<double> distinct;
    for (size_t v = 0; v < d; ++v) {
      observed[v] += static_cast<double>(s.series[v].size());
      for (const Observation& o : s.series[v]) distinct.insert(o.time);
    }
    opportunities += static_cast<double>(distinct.size());
  }
  std::vector<double> out(d, 1.0);
  if (opportunities > 0.0) {
    for (size_t v = 0; v < d; ++v)
      out[v] = std::clamp(1.0 - observed[v] / opportunities, 0.0, 1.0);
  }
  return out;
}

std::vector<size_t> sort_variables(const Dataset& ds, const std::vector<size_t>& indices) {
  const size_t d = ds.num_variables();
  std::vector<size_t> perm(d);
  for (size_t i = 0; i < d; ++i) perm[i] = i;
  if (indices.empty()) return perm;
  std::vector<double> ratios = missing_ratios(ds, indices);
  std::stable_sort(perm.begin(), perm.end(),
                   [&](size_t a, size_t b) { return ratios[a] < ratios[b]; });
  return perm;
}

std::vector<size_t> upsample_minority(const std::vector<size_t>& train_indices,
                                      const std::vector<int>& labels, uint64_t seed) {
  std::map<int, std::vector<size_t>> by_class;
  for (size_t idx : train_indices) by_class[labels.at(idx)].push_back(idx);
  if (by_class.size() < 2) fail("upsample_minority: need at least 2 classes");

  size_t majority = 0;
  for (const auto& [c, members] : by_class) majority = std::max(majority, members.size());

  std::vector<size_t> out(train_indices);
  for (const auto& [c, members] : by_class) {
    std::vector<size_t> cycle(members);
    Rng rng(derive_seed(seed, {hash_str("upsample"), static_cast<uint64_t>(c)}));
    rng.shuffle(cycle);
    for (size_t k = 0; k < majority - members.size(); ++k) out.push_back(cycle[k % cycle.size()]);
  }
  return out;
}

std::string static_value_to_string(const StaticValue& v) {
  if (std::holds_alternative<std::string>(v)) return std::get<std::string>(v);
  double x = std::get<double>(v);
  if (std::isfinite(x) && x == std::floor(x) && std::abs(x) < 1e15) {
    long long i = static_cast<long long>(x);
    return std::to_string(i);
  }
  return format_double(x);
}

std::string render_template(const std::map<std::string, StaticValue>& static_fields,
                            const std::string& tmpl) {
  std::string out;
  out.reserve(tmpl.size());
  for (size_t i = 0; i < tmpl.size();) {
    char c = tmpl[i];
    if (c == '{') {
      size_t close = tmpl.find('}', i + 1);
      if (close == std::string::npos) fail("render_template: unclosed '{'");
      std::string name = tmpl.substr(i + 1, close - i - 1);
      auto it = static_fields.find(name);
      if (it == static_fields.end()) fail("render_template: missing field '" + name + "'");
      out += static_value_to_string(it->second);
      i = close + 1;
    } else if (c == '}') {
      fail("render_template: stray '}'");
    } else {
      out.push_back(c);
      ++i;
    }
  }
  return out;
}

}  // namespace vitst
