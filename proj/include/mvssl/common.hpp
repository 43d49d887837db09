#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace mvssl {

// Row-major so that rows of a packed batch are contiguous patches.
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec = Eigen::VectorXd;
using Rng = std::mt19937_64;

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class DivergenceError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// splitmix64 finalizer; used to derive independent stream seeds.
inline std::uint64_t mix_seed(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0) {
    return mix_seed(mix_seed(mix_seed(base) ^ a) ^ (b * 0xd6e8feb86659fd93ULL));
}

inline double uniform(Rng& rng, double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline bool bernoulli(Rng& rng, double p) {
    return std::uniform_real_distribution<double>(0.0, 1.0)(rng) < p;
}

// Keeps large training temporaries on the heap instead of fresh mmap pages.
// Process-wide; executables call it once at startup.
void tune_allocator();

}  // namespace mvssl
