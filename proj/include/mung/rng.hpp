#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "mung/tensor.hpp"

namespace mung {

// Seeded RNG wrapper. All stochastic behavior in the project flows through
// this so runs are reproducible from a single seed.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    double normal() { return normal_(engine_); }
    double uniform() { return uniform_(engine_); }
    // Uniform integer in [0, n).
    int below(int n) { return static_cast<int>(engine_() % static_cast<std::uint64_t>(n)); }

    Tensor normal_tensor(std::vector<int> shape, double stddev = 1.0, bool requires_grad = false) {
        std::size_t n = 1;
        for (int d : shape) n *= static_cast<std::size_t>(d);
        std::vector<double> data(n);
        for (double& x : data) x = normal_(engine_) * stddev;
        return Tensor(std::move(shape), std::move(data), requires_grad);
    }

    Tensor uniform_tensor(std::vector<int> shape, double lo, double hi,
                          bool requires_grad = false) {
        std::size_t n = 1;
        for (int d : shape) n *= static_cast<std::size_t>(d);
        std::vector<double> data(n);
        for (double& x : data) x = lo + (hi - lo) * uniform_(engine_);
        return Tensor(std::move(shape), std::move(data), requires_grad);
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = engine_() % i;
            std::swap(v[i - 1], v[j]);
        }
    }

    std::uint64_t next_seed() { return engine_(); }

private:
    std::mt19937_64 engine_;
    std::normal_distribution<double> normal_{0.0, 1.0};
    std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

// Deterministic seed salting for independent streams (splits, workers, draws).
inline std::uint64_t salt_seed(std::uint64_t seed, std::uint64_t salt) {
    std::uint64_t x = seed ^ (0x9e3779b97f4a7c15ULL + salt * 0xbf58476d1ce4e5b9ULL);
    x ^= x >> 30;
    x *= 0xbf58476d1ce4e5b9ULL;
    x ^= x >> 27;
    x *= 0x94d049bb133111ebULL;
    x ^= x >> 31;
    return x;
}

}  // namespace mung
