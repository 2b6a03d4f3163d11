#ifndef BTS_COMMON_HPP
#define BTS_COMMON_HPP

#include <atomic>
#include <cmath>
#include <cstdint>
#include <mutex>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace bts {

// Numerically stable logistic sigmoid.
inline double stable_sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    double e = std::exp(x);
    return e / (1.0 + e);
}

// Exact (erf-based) GELU and its derivative.
inline double gelu_exact(double x) { return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2)); }

inline double gelu_exact_grad(double x) {
    double phi = std::exp(-0.5 * x * x) * 0.3989422804014327; // 1/sqrt(2*pi)
    return 0.5 * (1.0 + std::erf(x * M_SQRT1_2)) + x * phi;
}

// Error taxonomy. ShapeError covers geometry/shape mismatches, ValueError
// covers out-of-range or invalid values, ParseError covers malformed file
// contents, IoError covers OS-level read/write failures.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ShapeError : Error {
    using Error::Error;
};
struct ValueError : Error {
    using Error::Error;
};
struct ParseError : Error {
    using Error::Error;
};
struct IoError : Error {
    using Error::Error;
};

// Deterministic 64-bit PRNG (splitmix64). The standard <random>
// distributions are implementation-defined, so anything that must be
// reproducible across toolchains (augmentation, weight init, fold
// shuffles, synthetic data) draws from this generator instead.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    // Uniform double in [0, 1).
    double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    // Uniform integer in [0, n). Masked rejection keeps the draw unbiased.
    std::uint64_t uniform_int(std::uint64_t n) {
        if (n == 0) throw ValueError("Rng::uniform_int: n must be positive");
        if (n == 1) return 0;
        std::uint64_t mask = n - 1;
        mask |= mask >> 1;
        mask |= mask >> 2;
        mask |= mask >> 4;
        mask |= mask >> 8;
        mask |= mask >> 16;
        mask |= mask >> 32;
        for (;;) {
            std::uint64_t v = next_u64() & mask;
            if (v < n) return v;
        }
    }

    bool bernoulli(double p) { return uniform01() < p; }

    // Derives an independent stream, e.g. one per case or per parameter.
    Rng fork(std::uint64_t salt) {
        Rng r(state_ ^ (0xA0761D6478BD642Full * (salt + 1)));
        r.next_u64();
        return r;
    }

private:
    std::uint64_t state_;
};

// Runs fn(0..n-1) on up to `jobs` worker threads. Each index is processed by
// exactly one worker, so results are identical for any job count as long as
// fn(i) only writes state owned by index i. The first exception is rethrown
// after all workers join.
template <typename Fn>
void parallel_for_indices(std::size_t n, int jobs, Fn&& fn) {
    if (jobs < 1) jobs = 1;
    if (jobs == 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::mutex err_mutex;
    std::exception_ptr first_error;
    auto work = [&] {
        for (;;) {
            std::size_t i = next.fetch_add(1);
            if (i >= n) return;
            try {
                fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(err_mutex);
                if (!first_error) first_error = std::current_exception();
                return;
            }
        }
    };
    std::vector<std::thread> workers;
    std::size_t count = std::min<std::size_t>(static_cast<std::size_t>(jobs), n);
    workers.reserve(count);
    for (std::size_t w = 0; w < count; ++w) workers.emplace_back(work);
    for (auto& t : workers) t.join();
    if (first_error) std::rethrow_exception(first_error);
}

// FNV-1a 64-bit, used for provenance hashes in run records.
inline std::uint64_t fnv1a64(const void* data, std::size_t len) {
    const auto* p = static_cast<const unsigned char*>(data);
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (std::size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

} // namespace bts

#endif
