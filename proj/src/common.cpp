#include "vitst/common.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <mutex>

namespace vitst {

void fail(const std::string& msg) { throw Error(msg); }

namespace {

LogLevel g_level = [] {
  const char* env = std::getenv("VITST_KIT_LOG");
  if (!env) return LogLevel::Info;
  std::string v(env);
  if (v == "error") return LogLevel::Error;
  if (v == "debug") return LogLevel::Debug;
  return LogLevel::Info;
}();

std::mutex g_log_mutex;

void emit(const char* tag, const std::string& msg) {
  std::lock_guard<std::mutex> lock(g_log_mutex);
  std::fprintf(stderr, "[%s] %s\n", tag, msg.c_str());
}

}  // namespace

LogLevel log_level() { return g_level; }
void set_log_level(LogLevel lvl) { g_level = lvl; }

void log_info(const std::string& msg) {
  if (g_level >= LogLevel::Info) emit("info", msg);
}

void log_debug(const std::string& msg) {
  if (g_level >= LogLevel::Debug) emit("debug", msg);
}

void log_error(const std::string& msg) { emit("error", msg); }

uint64_t Rng::bounded(uint64_t n) {
  if (n == 0) fail("Rng::bounded: n must be positive");
  uint64_t threshold = (0 - n) % n;  // 2^64 mod n
  for (;;) {
    uint64_t r = next();
    if (r >= threshold) return r % n;
  }
}

double Rng::uniform() {
  return static_cast<double>(next() >> 11) * 0x1.0p-53;
}

double Rng::normal() {
  if (have_spare_) {
    have_spare_ = false;
    return spare_;
  }
  double u, v, s;
  do {
    u = 2.0 * uniform() - 1.0;
    v = 2.0 * uniform() - 1.0;
    s = u * u + v * v;
  } while (s >= 1.0 || s == 0.0);
  double m = std::sqrt(-2.0 * std::log(s) / s);
  spare_ = v * m;
  have_spare_ = true;
  return u * m;
}

namespace {
uint64_t splitmix64(uint64_t& x) {
  x += 0x9e3779b97f4a7c15ULL;
  uint64_t z = x;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}
}  // namespace

uint64_t derive_seed(uint64_t base, std::initializer_list<uint64_t> tags) {
  uint64_t state = base;
  uint64_t out = splitmix64(state);
  for (uint64_t t : tags) {
    state ^= t;
    out ^= splitmix64(state);
  }
  return out;
}

uint64_t hash_str(const std::string& s) {
  // FNV-1a 64-bit
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

}  // namespace vitst
