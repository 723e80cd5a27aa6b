#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace loopnet {

// ----------------------------- errors -----------------------------

struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Shape/dimension mismatch between tensors.
struct ShapeError : Error {
  using Error::Error;
};

// Out-of-range index (e.g. a target id outside the vocabulary).
struct IndexError : Error {
  using Error::Error;
};

// Violated operation precondition.
struct ContractError : Error {
  using Error::Error;
};

// NaN/Inf surfaced where only finite values are allowed.
struct NonFiniteError : Error {
  using Error::Error;
};

// Bad configuration (schema violation, invalid hyperparameter).
struct ConfigError : Error {
  using Error::Error;
};

// Filesystem / IO failure.
struct IoError : Error {
  using Error::Error;
};

// ----------------------------- runtime knobs -----------------------------

namespace runtime {

// Strict deterministic mode: single-threaded kernels, timing columns zeroed.
inline std::atomic<bool> strict{false};

// Requested kernel thread cap (0 = use LOOPNET_THREADS / hardware default).
inline std::atomic<int> thread_cap{0};

// Finite-value check cadence: 0 = off, 1 = every op output, n = every nth.
inline std::atomic<int> finite_check_every{0};
inline std::atomic<uint64_t> finite_check_counter{0};

inline void set_strict(bool on) { strict.store(on); }
inline bool is_strict() { return strict.load(); }
inline void set_threads(int n) { thread_cap.store(n); }
inline void set_finite_check_every(int n) { finite_check_every.store(n); }

inline int kernel_threads() {
  if (is_strict()) {
    return 1;
  }
  int cap = thread_cap.load();
  if (cap <= 0) {
    if (const char* env = std::getenv("LOOPNET_THREADS")) {
      cap = std::atoi(env);
    }
  }
  if (cap <= 0) {
    cap = 1;
  }
  unsigned hw = std::thread::hardware_concurrency();
  if (hw > 0 && cap > static_cast<int>(hw)) {
    cap = static_cast<int>(hw);
  }
  return cap;
}

}  // namespace runtime

// Runs fn(i) for i in [0, n). Threads write disjoint index ranges, so the
// result is bit-identical for any thread count.
inline void parallel_for(int64_t n, const std::function<void(int64_t)>& fn) {
  const int threads = runtime::kernel_threads();
  if (threads <= 1 || n < 2) {
    for (int64_t i = 0; i < n; ++i) {
      fn(i);
    }
    return;
  }
  const int used = static_cast<int>(std::min<int64_t>(threads, n));
  std::vector<std::thread> pool;
  pool.reserve(used);
  for (int t = 0; t < used; ++t) {
    pool.emplace_back([&, t]() {
      const int64_t lo = n * t / used;
      const int64_t hi = n * (t + 1) / used;
      for (int64_t i = lo; i < hi; ++i) {
        fn(i);
      }
    });
  }
  for (auto& th : pool) {
    th.join();
  }
}

// ----------------------------- rng -----------------------------

// xoshiro256** with splitmix64 seeding. Self-contained so that streams are
// bit-identical across platforms and standard-library versions.
class Rng {
 public:
  explicit Rng(uint64_t seed) { reseed(seed); }

  void reseed(uint64_t seed) {
    uint64_t x = seed;
    for (auto& word : state_) {
      word = splitmix64(x);
    }
    has_spare_ = false;
    spare_ = 0.0;
  }

  uint64_t next_u64() {
    const uint64_t result = rotl(state_[1] * 5, 7) * 9;
    const uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Unbiased uniform integer in [0, n).
  uint64_t bounded(uint64_t n) {
    if (n == 0) {
      return 0;
    }
    const uint64_t threshold = (0 - n) % n;
    for (;;) {
      const uint64_t r = next_u64();
      if (r >= threshold) {
        return r % n;
      }
    }
  }

  // Standard normal via Box-Muller with a cached spare.
  double gaussian() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u = 1.0 - uniform();  // avoid log(0)
    const double v = uniform();
    const double r = std::sqrt(-2.0 * std::log(u));
    const double theta = 2.0 * 3.14159265358979323846 * v;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  std::string state_string() const {
    std::ostringstream os;
    os << state_[0] << ' ' << state_[1] << ' ' << state_[2] << ' ' << state_[3]
       << ' ' << (has_spare_ ? 1 : 0) << ' ';
    os.precision(17);
    os << spare_;
    return os.str();
  }

  void restore_state(const std::string& s) {
    std::istringstream is(s);
    int spare_flag = 0;
    is >> state_[0] >> state_[1] >> state_[2] >> state_[3] >> spare_flag >>
        spare_;
    if (!is) {
      throw ConfigError("rng state string is malformed: \"" + s + "\"");
    }
    has_spare_ = spare_flag != 0;
  }

 private:
  static uint64_t splitmix64(uint64_t& x) {
    uint64_t z = (x += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  static uint64_t rotl(uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
  }

  uint64_t state_[4] = {};
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// ----------------------------- small helpers -----------------------------

inline std::string shape_string(const std::vector<int64_t>& shape) {
  std::string s = "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) {
      s += ",";
    }
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

inline int64_t numel_of(const std::vector<int64_t>& shape) {
  int64_t n = 1;
  for (int64_t d : shape) {
    n *= d;
  }
  return n;
}

}  // namespace loopnet
