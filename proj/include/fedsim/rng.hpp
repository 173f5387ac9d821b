#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "fedsim/errors.hpp"

namespace fedsim {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

// Combines a seed with a stream tag (round index, speaker index, ...).
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
    return splitmix64(seed ^ (0x9E3779B97F4A7C15ULL + (stream << 6) + (stream >> 2)));
}

// Distinct stream tags so unrelated consumers of the same user seed never
// share a sequence.
namespace seed_stream {
constexpr std::uint64_t kSampleClients = 0xC11E57A11ULL;
constexpr std::uint64_t kLocalTrain = 0x7EA1717A13ULL;
constexpr std::uint64_t kHoldout = 0x401D0075ULL;
constexpr std::uint64_t kPartition = 0x9A777170ULL;
constexpr std::uint64_t kCorpus = 0xC0990503ULL;
constexpr std::uint64_t kAudio = 0xA0D10ULL;
constexpr std::uint64_t kKmeans = 0x43A35ULL;
}  // namespace seed_stream

// Deterministic RNG. The raw mt19937_64 stream is fully specified by the
// standard and every derived draw below is implemented by hand, so sequences
// are reproducible across compilers and standard libraries.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(splitmix64(seed)) {}

    std::uint64_t next_u64() { return engine_(); }

    // [0, 1)
    double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

    // Inclusive bounds, unbiased via rejection.
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
        if (lo > hi) throw config_error("uniform_int: empty range");
        const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
        if (span == 0) return static_cast<std::int64_t>(next_u64());  // full 64-bit range
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % span;
        std::uint64_t x;
        do {
            x = next_u64();
        } while (x >= limit);
        return lo + static_cast<std::int64_t>(x % span);
    }

    // Box-Muller, one value per call; no cached state.
    double normal() {
        double u1 = next_double();
        while (u1 <= 0.0) u1 = next_double();
        const double u2 = next_double();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    double normal(double mean, double std) { return mean + std * normal(); }

    // Marsaglia-Tsang; shape < 1 boosted through shape + 1.
    double gamma(double shape) {
        if (shape <= 0.0) throw config_error("gamma: shape must be positive");
        if (shape < 1.0) {
            const double u = next_double();
            return gamma(shape + 1.0) * std::pow(u > 0.0 ? u : 1e-300, 1.0 / shape);
        }
        const double d = shape - 1.0 / 3.0;
        const double c = 1.0 / std::sqrt(9.0 * d);
        for (;;) {
            double x;
            double v;
            do {
                x = normal();
                v = 1.0 + c * x;
            } while (v <= 0.0);
            v = v * v * v;
            const double u = next_double();
            if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
            if (u > 0.0 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
        }
    }

    // Symmetric Dirichlet over n categories.
    std::vector<double> dirichlet(double concentration, std::size_t n) {
        std::vector<double> g(n);
        double total = 0.0;
        for (auto& v : g) {
            v = gamma(concentration);
            total += v;
        }
        if (total <= 0.0) {
            for (auto& v : g) v = 1.0 / static_cast<double>(n);
            return g;
        }
        for (auto& v : g) v /= total;
        return g;
    }

    // Fisher-Yates.
    template <typename T>
    void shuffle(std::vector<T>& items) {
        for (std::size_t i = items.size(); i > 1; --i) {
            const auto j = static_cast<std::size_t>(uniform_int(0, static_cast<std::int64_t>(i) - 1));
            std::swap(items[i - 1], items[j]);
        }
    }

    // k distinct indices from [0, n), unsorted draw order.
    std::vector<std::size_t> sample_indices(std::size_t n, std::size_t k) {
        if (k > n) throw config_error("sample_indices: k exceeds population");
        std::vector<std::size_t> ids(n);
        for (std::size_t i = 0; i < n; ++i) ids[i] = i;
        for (std::size_t i = 0; i < k; ++i) {
            const auto j = static_cast<std::size_t>(
                uniform_int(static_cast<std::int64_t>(i), static_cast<std::int64_t>(n) - 1));
            std::swap(ids[i], ids[j]);
        }
        ids.resize(k);
        return ids;
    }

private:
    std::mt19937_64 engine_;
};

}  // namespace fedsim
