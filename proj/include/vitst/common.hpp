#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace vitst {

// All recoverable failures surface as vitst::Error; the CLI turns them into
// a one-line message and a nonzero exit code.
class Error : public std::runtime_error {
public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

[[noreturn]] void fail(const std::string& msg);

enum class LogLevel { Error = 0, Info = 1, Debug = 2 };

// Level comes from VITST_KIT_LOG={error,info,debug}; default info.
LogLevel log_level();
void set_log_level(LogLevel lvl);
void log_info(const std::string& msg);
void log_debug(const std::string& msg);
void log_error(const std::string& msg);

// Deterministic RNG. The engine is std::mt19937_64 (fully specified by the
// standard); all draws below are hand-rolled so results do not depend on the
// standard library's distribution implementations.
class Rng {
public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  uint64_t next() { return engine_(); }

  // Unbiased draw in [0, n) by rejection.
  uint64_t bounded(uint64_t n);

  // [0, 1) with 53 random bits.
  double uniform();

  double range(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal via the Marsaglia polar method (no trig calls).
  double normal();

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(bounded(i));
      std::swap(v[i - 1], v[j]);
    }
  }

private:
  std::mt19937_64 engine_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

// Stable stream derivation: mixes a base seed with tag words so submodules
// (splits, cutout, sensor drops, ...) get independent deterministic streams.
uint64_t derive_seed(uint64_t base, std::initializer_list<uint64_t> tags);
uint64_t hash_str(const std::string& s);

// Shortest round-trip decimal form of a double (std::to_chars).
std::string format_double(double v);

}  // namespace vitst
