#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "fedsim/errors.hpp"
#include "fedsim/types.hpp"

namespace fedsim {

struct WerScore {
    long long errors = 0;  // S + D + I
    long long ref_len = 0;
    double wer = 0.0;      // may exceed 1
};

// Levenshtein distance with unit costs, two-row DP.
inline long long edit_distance(std::span<const int> ref, std::span<const int> hyp) {
    const std::size_t n = ref.size();
    const std::size_t m = hyp.size();
    std::vector<long long> prev(m + 1);
    std::vector<long long> cur(m + 1);
    for (std::size_t j = 0; j <= m; ++j) prev[j] = static_cast<long long>(j);
    for (std::size_t i = 0; i < n; ++i) {
        cur[0] = static_cast<long long>(i) + 1;
        for (std::size_t j = 0; j < m; ++j) {
            const long long sub = prev[j] + (ref[i] == hyp[j] ? 0 : 1);
            cur[j + 1] = std::min({prev[j + 1] + 1, cur[j] + 1, sub});
        }
        std::swap(prev, cur);
    }
    return prev[m];
}

inline long long edit_distance(const std::vector<int>& ref, const std::vector<int>& hyp) {
    return edit_distance(std::span<const int>(ref), std::span<const int>(hyp));
}

inline WerScore wer(const Transcript& ref, const Transcript& hyp) {
    if (ref.tokens.empty()) throw data_error("wer: empty reference");
    WerScore score;
    score.errors = edit_distance(ref.tokens, hyp.tokens);
    score.ref_len = static_cast<long long>(ref.tokens.size());
    score.wer = static_cast<double>(score.errors) / static_cast<double>(score.ref_len);
    return score;
}

// Corpus-level WER: total errors over total reference length.
struct WerAccumulator {
    long long errors = 0;
    long long ref_len = 0;

    void add(const Transcript& ref, const Transcript& hyp) {
        if (ref.tokens.empty()) throw data_error("WerAccumulator: empty reference");
        errors += edit_distance(ref.tokens, hyp.tokens);
        ref_len += static_cast<long long>(ref.tokens.size());
    }

    WerScore score() const {
        if (ref_len == 0) throw data_error("WerAccumulator: no references accumulated");
        return {errors, ref_len, static_cast<double>(errors) / static_cast<double>(ref_len)};
    }
};

inline double mean(std::span<const double> xs) {
    if (xs.empty()) throw data_error("mean: empty sample");
    double s = 0.0;
    for (double x : xs) s += x;
    return s / static_cast<double>(xs.size());
}

// Population standard deviation.
inline double stddev(std::span<const double> xs) {
    const double m = mean(xs);
    double s = 0.0;
    for (double x : xs) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(xs.size()));
}

inline double mean(const std::vector<double>& xs) { return mean(std::span<const double>(xs)); }
inline double stddev(const std::vector<double>& xs) { return stddev(std::span<const double>(xs)); }

// Fisher excess kurtosis, biased moment estimator m4/m2^2 - 3.
inline double excess_kurtosis(std::span<const double> xs) {
    if (xs.size() < 4) throw data_error("excess_kurtosis: needs at least 4 samples");
    const double m = mean(xs);
    double m2 = 0.0;
    double m4 = 0.0;
    for (double x : xs) {
        const double d = x - m;
        m2 += d * d;
        m4 += d * d * d * d;
    }
    m2 /= static_cast<double>(xs.size());
    m4 /= static_cast<double>(xs.size());
    if (m2 <= 0.0) throw numeric_error("excess_kurtosis: zero variance");
    return m4 / (m2 * m2) - 3.0;
}

inline double excess_kurtosis(const std::vector<double>& xs) {
    return excess_kurtosis(std::span<const double>(xs));
}

}  // namespace fedsim
