#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace mnde {

/// 64-bit FNV-1a.
std::uint64_t fnv1a(std::string_view text);

/// Named random stream derived from a master seed. Distributions are computed
/// here rather than with <random> adaptors so sequences match across standard libraries.
class Rng {
public:
    Rng(std::uint64_t seed, std::string_view stream);

    std::uint64_t next() { return engine_(); }
    /// Uniform on [0, 1).
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    double normal();
    /// Uniform integer on [0, n).
    std::size_t below(std::size_t n);
    bool bernoulli(double p) { return uniform() < p; }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[below(i)]);
    }

private:
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

} // namespace mnde
