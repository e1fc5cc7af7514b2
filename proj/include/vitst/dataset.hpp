#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace vitst {

// One (time, value) measurement in dataset-native units.
struct Observation {
  double time = 0.0;
  double value = 0.0;
};

using StaticValue = std::variant<std::string, double>;

// A multivariate irregularly sampled series with its label. Every sample in
// a dataset carries exactly D per-variable sequences (possibly empty), each
// strictly increasing in time.
struct Sample {
  std::string id;
  std::vector<std::vector<Observation>> series;
  std::map<std::string, StaticValue> static_fields;
  int label = 0;
};

struct Dataset {
  std::vector<Sample> samples;
  std::vector<std::string> variable_names;
  int num_classes = 0;
  std::vector<std::string> static_schema;

  size_t num_variables() const { return variable_names.size(); }
  void validate() const;
};

struct SplitSpec {
  std::vector<size_t> train;
  std::vector<size_t> val;
  std::vector<size_t> test;
  uint64_t seed = 0;
};

// Canonical newline-delimited format: a header record followed by one record
// per sample (see README for the schema).
Dataset load_dataset(const std::string& path);
void write_dataset(const Dataset& ds, const std::string& path);

// Wide-CSV ingestion: `series_csv` has columns id,time,<variable...> with one
// row per (sample, timestamp) and blank cells for missing values; `meta_csv`
// has columns id,label[,<static field>...].
enum class DuplicatePolicy { Reject, Mean, First };
Dataset convert_wide_csv(const std::string& series_csv, const std::string& meta_csv,
                         int num_classes = 0,
                         DuplicatePolicy dup = DuplicatePolicy::Reject);

// Deterministic stratified split; ratios must sum to 1 (tolerance 1e-9) and
// every class must land at least one sample in each nonzero-ratio split.
SplitSpec make_splits(const Dataset& ds, uint64_t seed,
                      double train_ratio, double val_ratio, double test_ratio);

// Per-variable missing ratio over the given sample indices:
// 1 - (total observations of d) / (total distinct timestamps per sample).
std::vector<double> missing_ratios(const Dataset& ds, const std::vector<size_t>& indices);

// Permutation of {0..D-1} ordering variables by ascending missing ratio,
// ties broken by original index.
std::vector<size_t> sort_variables(const Dataset& ds, const std::vector<size_t>& indices);

// Duplicates minority-class indices by seeded cycling until every class
// matches the majority count. Originals are retained in order; duplicates
// are appended.
std::vector<size_t> upsample_minority(const std::vector<size_t>& train_indices,
                                      const std::vector<int>& labels, uint64_t seed);

// Substitutes {Name} placeholders from static_fields; numbers are printed in
// shortest round-trip form with integral values printed without a decimal
// point.
std::string render_template(const std::map<std::string, StaticValue>& static_fields,
                            const std::string& tmpl);

std::string static_value_to_string(const StaticValue& v);

}  // namespace vitst
