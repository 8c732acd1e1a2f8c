#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace vqamoe {

// Deterministic RNG with named sub-streams so that toggling one consumer
// (masking, sampling, init, ...) does not perturb the draws of another.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    static Rng stream(std::uint64_t seed, std::string_view name) {
        std::uint64_t h = 1469598103934665603ull;
        for (char c : name) {
            h ^= static_cast<std::uint64_t>(static_cast<unsigned char>(c));
            h *= 1099511628211ull;
        }
        return Rng(seed ^ h);
    }

    double uniform(double lo = 0.0, double hi = 1.0) {
        return std::uniform_real_distribution<double>(lo, hi)(engine_);
    }

    double normal(double mean = 0.0, double stddev = 1.0) {
        return std::normal_distribution<double>(mean, stddev)(engine_);
    }

    // Inclusive bounds.
    std::int64_t randint(std::int64_t lo, std::int64_t hi) {
        return std::uniform_int_distribution<std::int64_t>(lo, hi)(engine_);
    }

    bool bernoulli(double p) {
        return std::bernoulli_distribution(p)(engine_);
    }

    // Uniform sample of `count` distinct indices from [0, n), returned ascending.
    std::vector<std::size_t> sample_indices(std::size_t n, std::size_t count);

    template <typename T>
    void shuffle(std::vector<T>& v) {
        std::shuffle(v.begin(), v.end(), engine_);
    }

    std::mt19937_64& engine() { return engine_; }

private:
    std::mt19937_64 engine_;
};

} // namespace vqamoe
