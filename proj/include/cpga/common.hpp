#pragma once

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <condition_variable>
#include <cstdint>
#include <cstdlib>
#include <cstring>
#include <deque>
#include <fstream>
#include <functional>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

namespace cpga {

inline constexpr const char* kToolVersion = "0.1.0";

// ---------------------------------------------------------------- errors

/// Bad configuration (unknown keys, invalid parameter combinations).
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Missing or inconsistent data artifacts.
struct DataError : std::runtime_error {
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Numeric failure (NaN loss, divergence, degenerate input).
struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// ---------------------------------------------------------------- hashing

inline std::uint64_t fnv1a64(std::string_view s, std::uint64_t h = 0xcbf29ce484222325ull) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<size_t>(i)] = digits[v & 0xf];
    v >>= 4;
  }
  return out;
}

// ---------------------------------------------------------------- rng
//
// Deterministic generator used everywhere randomness is needed: splits,
// weight init, dropout masks, target noise. Not std::mt19937 because the
// standard distributions are implementation-defined and would break
// byte-identical artifact reproduction across standard libraries.

inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ull);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) {
    std::uint64_t sm = seed;
    for (auto& w : s_) w = splitmix64(sm);
  }

  /// Derive an independent stream, e.g. per record id or per epoch.
  static Rng derive(std::uint64_t seed, std::string_view tag) {
    return Rng(fnv1a64(tag, seed ^ 0x9e3779b97f4a7c15ull));
  }

  std::uint64_t next_u64() {
    // xoshiro256++
    auto rotl = [](std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); };
    const std::uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  /// Uniform in [0,1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform in [lo,hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0,n).
  std::uint64_t uniform_index(std::uint64_t n) { return next_u64() % n; }

  /// Standard normal via Box-Muller (pair-cached).
  double normal() {
    if (have_cached_) {
      have_cached_ = false;
      return cached_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * 3.14159265358979323846 * u2;
    cached_ = r * std::sin(a);
    have_cached_ = true;
    return r * std::cos(a);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      const size_t j = static_cast<size_t>(uniform_index(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::uint64_t s_[4] = {};
  double cached_ = 0.0;
  bool have_cached_ = false;
};

// ---------------------------------------------------------------- threads

/// Static chunking so results never depend on the worker count: every
/// index is processed exactly once by exactly one task body.
class ThreadPool {
 public:
  static ThreadPool& instance() {
    static ThreadPool pool;
    return pool;
  }

  int size() const { return static_cast<int>(workers_.size()) + 1; }

  void parallel_for(std::int64_t n, const std::function<void(std::int64_t, std::int64_t)>& body) {
    if (n <= 0) return;
    const int nthreads = size();
    if (nthreads == 1 || n == 1) {
      body(0, n);
      return;
    }
    const std::int64_t chunk = (n + nthreads - 1) / nthreads;
    std::vector<std::pair<std::int64_t, std::int64_t>> ranges;
    for (std::int64_t lo = 0; lo < n; lo += chunk) ranges.emplace_back(lo, std::min(n, lo + chunk));

    std::mutex m;
    std::condition_variable cv;
    size_t remaining = ranges.size();
    std::exception_ptr err;

    for (size_t i = 1; i < ranges.size(); ++i) {
      submit([&, i] {
        try {
          body(ranges[i].first, ranges[i].second);
        } catch (...) {
          std::lock_guard<std::mutex> lk(m);
          if (!err) err = std::current_exception();
        }
        std::lock_guard<std::mutex> lk(m);
        if (--remaining == 0) cv.notify_one();
      });
    }
    try {
      body(ranges[0].first, ranges[0].second);
    } catch (...) {
      std::lock_guard<std::mutex> lk(m);
      if (!err) err = std::current_exception();
    }
    {
      std::unique_lock<std::mutex> lk(m);
      --remaining;
      cv.wait(lk, [&] { return remaining == 0; });
    }
    if (err) std::rethrow_exception(err);
  }

  ~ThreadPool() {
    {
      std::lock_guard<std::mutex> lk(mutex_);
      stop_ = true;
    }
    cv_.notify_all();
    for (auto& t : workers_) t.join();
  }

 private:
  ThreadPool() {
    int n = static_cast<int>(std::thread::hardware_concurrency());
    if (const char* env = std::getenv("CPGA_THREADS")) n = std::max(1, std::atoi(env));
    for (int i = 1; i < n; ++i) workers_.emplace_back([this] { worker(); });
  }

  void submit(std::function<void()> task) {
    {
      std::lock_guard<std::mutex> lk(mutex_);
      queue_.push_back(std::move(task));
    }
    cv_.notify_one();
  }

  void worker() {
    for (;;) {
      std::function<void()> task;
      {
        std::unique_lock<std::mutex> lk(mutex_);
        cv_.wait(lk, [this] { return stop_ || !queue_.empty(); });
        if (stop_ && queue_.empty()) return;
        task = std::move(queue_.front());
        queue_.pop_front();
      }
      task();
    }
  }

  std::vector<std::thread> workers_;
  std::deque<std::function<void()>> queue_;
  std::mutex mutex_;
  std::condition_variable cv_;
  bool stop_ = false;
};

inline void parallel_for(std::int64_t n, const std::function<void(std::int64_t, std::int64_t)>& body) {
  ThreadPool::instance().parallel_for(n, body);
}

// ---------------------------------------------------------------- strings

inline std::string trim(std::string_view s) {
  size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

inline std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  size_t start = 0;
  for (size_t i = 0; i <= s.size(); ++i) {
    if (i == s.size() || s[i] == sep) {
      out.emplace_back(s.substr(start, i - start));
      start = i + 1;
    }
  }
  return out;
}

inline std::string to_lower(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

// Shortest round-trip decimal form, so emitted CSV/JSON is reproducible.
inline std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open file: " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

inline void write_text_file(const std::string& path, std::string_view content) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write file: " + path);
  f.write(content.data(), static_cast<std::streamsize>(content.size()));
}

}  // namespace cpga
