#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

#include "scene4d/tensor.hpp"

namespace scene4d {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

// Folds a seed and a list of counters (t, k, step, operator id, ...) into one key.
inline std::uint64_t stream_key(std::uint64_t seed, std::initializer_list<std::uint64_t> counters) {
    std::uint64_t h = splitmix64(seed);
    for (auto c : counters) h = splitmix64(h ^ splitmix64(c + 0x632BE59BD9B4E019ull));
    return h;
}

// Operator ids for the keyed noise streams.
enum class NoiseOp : std::uint64_t {
    initial = 1,
    pcgd = 2,
    rlr = 3,
    refine = 4,
    field = 5,
    misc = 6,
};

// Standard-normal draws from a stream keyed by (seed, counters...). The same key always
// yields the same sequence, independent of thread scheduling.
class NoiseStream {
public:
    explicit NoiseStream(std::uint64_t key) : engine_(key) {}
    NoiseStream(std::uint64_t seed, std::initializer_list<std::uint64_t> counters)
        : engine_(stream_key(seed, counters)) {}

    double normal() { return dist_(engine_); }
    double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }
    std::mt19937_64& engine() { return engine_; }

    template <typename T>
    Tensor<T> normal_like(const std::vector<std::size_t>& shape) {
        Tensor<T> out(shape);
        for (auto& v : out.storage()) v = static_cast<T>(normal());
        return out;
    }

private:
    std::mt19937_64 engine_;
    std::normal_distribution<double> dist_{0.0, 1.0};
};

}  // namespace scene4d
