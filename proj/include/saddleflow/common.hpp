// Shared plumbing: error taxonomy, the extended-real sentinel, deterministic
// per-trial RNG streams, and a slot-based parallel map whose result does not
// depend on the thread schedule.
#pragma once

#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace saddleflow {

// ---------------------------------------------------------------------------
// Error taxonomy. The CLI maps these onto its exit codes: configuration and
// argument problems exit 2, certificate failures exit 1, oracle give-ups
// exit 3. Structural/numeric errors are programming or data errors.
// ---------------------------------------------------------------------------

struct StructuralError : std::runtime_error {
  explicit StructuralError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ArgumentError : std::invalid_argument {
  explicit ArgumentError(const std::string& msg) : std::invalid_argument(msg) {}
};

struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DomainViolation : std::runtime_error {
  explicit DomainViolation(const std::string& msg) : std::runtime_error(msg) {}
};

struct OracleError : std::runtime_error {
  explicit OracleError(const std::string& msg) : std::runtime_error(msg) {}
};

// ---------------------------------------------------------------------------
// Extended real: +inf is carried as a tag, never as a float that could leak
// into arithmetic. Finite values are always finite doubles.
// ---------------------------------------------------------------------------

class ExtReal {
 public:
  ExtReal() : value_(0.0), inf_(false) {}
  ExtReal(double v) : value_(v), inf_(false) {  // NOLINT(google-explicit-constructor)
    if (!std::isfinite(v)) throw NumericError("ExtReal: non-finite value");
  }
  static ExtReal infinity() {
    ExtReal r;
    r.inf_ = true;
    return r;
  }

  bool is_inf() const { return inf_; }
  bool is_finite() const { return !inf_; }
  double value() const {
    if (inf_) throw NumericError("ExtReal: value() on +inf");
    return value_;
  }
  // For reporting only: +inf prints as "inf".
  double value_or(double if_inf) const { return inf_ ? if_inf : value_; }

  friend ExtReal operator+(const ExtReal& a, const ExtReal& b) {
    if (a.inf_ || b.inf_) return infinity();
    return ExtReal(a.value_ + b.value_);
  }
  friend bool operator==(const ExtReal& a, const ExtReal& b) {
    if (a.inf_ || b.inf_) return a.inf_ == b.inf_;
    return a.value_ == b.value_;
  }

 private:
  double value_;
  bool inf_;
};

// ---------------------------------------------------------------------------
// Deterministic RNG streams. Every sampled trial draws from its own engine
// seeded by (base seed, trial index), so results are independent of how
// trials are scheduled across threads.
// ---------------------------------------------------------------------------

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::mt19937_64 trial_rng(std::uint64_t seed, std::uint64_t trial) {
  return std::mt19937_64(splitmix64(seed ^ splitmix64(trial + 1)));
}

// Thread budget: min(hardware, SADDLEFLOW_THREADS if set). At least 1.
inline unsigned thread_budget() {
  unsigned hw = std::thread::hardware_concurrency();
  if (hw == 0) hw = 1;
  if (const char* env = std::getenv("SADDLEFLOW_THREADS")) {
    char* end = nullptr;
    long v = std::strtol(env, &end, 10);
    if (end != env && v > 0 && static_cast<unsigned long>(v) < hw) hw = static_cast<unsigned>(v);
  }
  return hw;
}

// Runs fn(i) for i in [0, count) across the thread budget. Each index writes
// into its own slot, so the caller can reduce sequentially afterwards and get
// schedule-independent results.
template <typename T>
std::vector<T> parallel_map(std::size_t count, const std::function<T(std::size_t)>& fn) {
  std::vector<T> out(count);
  unsigned threads = thread_budget();
  if (threads <= 1 || count < 2) {
    for (std::size_t i = 0; i < count; ++i) out[i] = fn(i);
    return out;
  }
  std::vector<std::thread> pool;
  std::size_t chunk = (count + threads - 1) / threads;
  for (unsigned t = 0; t < threads; ++t) {
    std::size_t lo = t * chunk;
    std::size_t hi = std::min(count, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([&, lo, hi] {
      for (std::size_t i = lo; i < hi; ++i) out[i] = fn(i);
    });
  }
  for (auto& th : pool) th.join();
  return out;
}

}  // namespace saddleflow
