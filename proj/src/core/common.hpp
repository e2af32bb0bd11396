// Shared error types, deterministic RNG and index-ordered parallel loops.
#pragma once

#include <cmath>
#include <cstdint>
#include <mutex>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace occ {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Tensor/layer dimension contract violated.
class ShapeError : public Error {
public:
    using Error::Error;
};

// Input data unusable: missing files, unpaired frames, empty splits.
class DataError : public Error {
public:
    using Error::Error;
};

// On-disk artifact malformed: bad magic, version mismatch, truncation.
class FormatError : public Error {
public:
    using Error::Error;
};

// Non-finite value produced where the contract requires finite output.
class NumericError : public Error {
public:
    using Error::Error;
};

// Invalid configuration or usage.
class ConfigError : public Error {
public:
    using Error::Error;
};

// Deterministic RNG used for weight init, shuffling and subsampling.
// Built on mt19937_64 (fully specified by the standard) with a hand-rolled
// Box-Muller transform and Fisher-Yates shuffle, so that saved models and
// shuffled orders are reproducible across standard library versions.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    // Uniform in [0, 1).
    double uniform() {
        return (gen_() >> 11) * 0x1.0p-53;
    }

    double gaussian() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    // Uniform integer in [0, n). Modulo bias is irrelevant for n << 2^64.
    std::uint64_t below(std::uint64_t n) {
        return gen_() % n;
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::swap(v[i - 1], v[below(i)]);
        }
    }

private:
    std::mt19937_64 gen_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

// Runs fn(begin, end) over contiguous chunks of [0, count). Results written
// to disjoint per-index slots are identical regardless of the thread count;
// callers that reduce must do so in index order afterwards.
template <typename Fn>
void parallel_for(std::size_t count, int threads, Fn&& fn) {
    if (count == 0) {
        return;
    }
    const std::size_t want = threads < 1 ? 1 : static_cast<std::size_t>(threads);
    const std::size_t n = std::min(want, count);
    if (n <= 1) {
        fn(std::size_t{0}, count);
        return;
    }
    std::vector<std::thread> workers;
    workers.reserve(n);
    std::exception_ptr first_error;
    std::mutex err_mutex;
    const std::size_t chunk = (count + n - 1) / n;
    for (std::size_t t = 0; t < n; ++t) {
        const std::size_t begin = t * chunk;
        const std::size_t end = std::min(begin + chunk, count);
        if (begin >= end) {
            break;
        }
        workers.emplace_back([&, begin, end] {
            try {
                fn(begin, end);
            } catch (...) {
                std::lock_guard<std::mutex> lock(err_mutex);
                if (!first_error) {
                    first_error = std::current_exception();
                }
            }
        });
    }
    for (auto& w : workers) {
        w.join();
    }
    if (first_error) {
        std::rethrow_exception(first_error);
    }
}

inline int hardware_threads() {
    const unsigned n = std::thread::hardware_concurrency();
    return n == 0 ? 1 : static_cast<int>(n);
}

}  // namespace occ
