#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "fedsim/errors.hpp"
#include "fedsim/metrics.hpp"
#include "fedsim/rng.hpp"
#include "fedsim/types.hpp"

namespace fedsim {

constexpr double kLoudnessFloorDb = -100.0;
constexpr double kHnrMinDb = -20.0;
constexpr double kHnrMaxDb = 40.0;

struct FrameParams {
    double frame_ms = 32.0;
    double hop_ms = 10.0;
    double f0_lo_hz = 75.0;
    double f0_hi_hz = 400.0;
    double yin_threshold = 0.15;

    int frame_samples(int sample_rate) const {
        return std::max(1, static_cast<int>(std::lround(frame_ms * sample_rate / 1000.0)));
    }
    int hop_samples(int sample_rate) const {
        return std::max(1, static_cast<int>(std::lround(hop_ms * sample_rate / 1000.0)));
    }
};

struct UtteranceProfile {
    double loudness_db = kLoudnessFloorDb;
    double log_hnr_db = std::numeric_limits<double>::quiet_NaN();
    double perm_entropy = 0.0;
    double blind_snr_db = std::numeric_limits<double>::quiet_NaN();
    double voiced_fraction = 0.0;
    bool silent = false;

    static constexpr int kFeatureCount = 5;
    double feature(int i) const {
        switch (i) {
            case 0: return loudness_db;
            case 1: return log_hnr_db;
            case 2: return perm_entropy;
            case 3: return blind_snr_db;
            default: return voiced_fraction;
        }
    }
    static const char* feature_name(int i) {
        static constexpr std::array<const char*, 5> names = {
            "loudness_db", "log_hnr_db", "perm_entropy", "blind_snr_db", "voiced_fraction"};
        return names[static_cast<std::size_t>(i)];
    }
};

namespace detail {

inline int frame_count(std::size_t n, int frame_len, int hop) {
    if (n < static_cast<std::size_t>(frame_len)) return 0;
    return 1 + static_cast<int>((n - frame_len) / hop);
}

inline std::span<const double> frame_view(const Waveform& w, int frame_len, int hop, int index) {
    return {w.samples.data() + static_cast<std::size_t>(index) * hop,
            static_cast<std::size_t>(frame_len)};
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Loudness: per-frame RMS in dBFS, floored for silence; utterance value is
// the mean over frames.
// ---------------------------------------------------------------------------

struct LoudnessResult {
    std::vector<double> per_frame_db;
    double mean_db = kLoudnessFloorDb;
    bool silent = false;
};

inline LoudnessResult loudness(const Waveform& w, double frame_ms = 32.0, double hop_ms = 10.0) {
    if (w.samples.empty()) throw data_error("loudness: empty waveform");
    FrameParams fp;
    fp.frame_ms = frame_ms;
    fp.hop_ms = hop_ms;
    const int frame_len = fp.frame_samples(w.sample_rate);
    const int hop = fp.hop_samples(w.sample_rate);
    int n_frames = detail::frame_count(w.samples.size(), frame_len, hop);

    LoudnessResult out;
    double total = 0.0;
    if (n_frames == 0) {
        // Shorter than one frame: treat the whole signal as a single frame.
        double e = 0.0;
        for (double s : w.samples) e += s * s;
        const double rms = std::sqrt(e / static_cast<double>(w.samples.size()));
        out.per_frame_db.push_back(rms > 0.0 ? std::max(kLoudnessFloorDb, 20.0 * std::log10(rms))
                                             : kLoudnessFloorDb);
        total = out.per_frame_db.back();
        n_frames = 1;
    } else {
        for (int f = 0; f < n_frames; ++f) {
            const auto frame = detail::frame_view(w, frame_len, hop, f);
            double e = 0.0;
            for (double s : frame) e += s * s;
            const double rms = std::sqrt(e / static_cast<double>(frame.size()));
            const double db =
                rms > 0.0 ? std::max(kLoudnessFloorDb, 20.0 * std::log10(rms)) : kLoudnessFloorDb;
            out.per_frame_db.push_back(db);
            total += db;
        }
    }
    out.mean_db = total / static_cast<double>(n_frames);
    out.silent = out.per_frame_db.end() ==
                 std::find_if(out.per_frame_db.begin(), out.per_frame_db.end(),
                              [](double db) { return db > kLoudnessFloorDb; });
    return out;
}

// ---------------------------------------------------------------------------
// YIN voiced/unvoiced decision: cumulative-mean-normalized difference,
// frame voiced iff the minimum over the F0 lag range is below the threshold.
// ---------------------------------------------------------------------------

inline std::vector<bool> voiced_frames(const Waveform& w, const FrameParams& fp = {}) {
    if (w.samples.empty()) throw data_error("voiced_frames: empty waveform");
    const int frame_len = fp.frame_samples(w.sample_rate);
    const int hop = fp.hop_samples(w.sample_rate);
    const int n_frames = detail::frame_count(w.samples.size(), frame_len, hop);
    const int tau_min = std::max(1, static_cast<int>(std::floor(w.sample_rate / fp.f0_hi_hz)));
    const int tau_max = static_cast<int>(std::ceil(w.sample_rate / fp.f0_lo_hz));
    if (tau_max >= frame_len)
        throw config_error("voiced_frames: frame too short for the lowest F0 lag");
    const int window = frame_len - tau_max;  // integration window

    std::vector<bool> voiced(static_cast<std::size_t>(n_frames), false);
    std::vector<double> diff(static_cast<std::size_t>(tau_max) + 1, 0.0);
    for (int f = 0; f < n_frames; ++f) {
        const auto x = detail::frame_view(w, frame_len, hop, f);
        double running = 0.0;
        double best = std::numeric_limits<double>::infinity();
        for (int tau = 1; tau <= tau_max; ++tau) {
            double d = 0.0;
            for (int j = 0; j < window; ++j) {
                const double delta = x[j] - x[j + tau];
                d += delta * delta;
            }
            diff[tau] = d;
            running += d;
            // Cumulative mean normalization; silent frames (running == 0)
            // normalize to 1 and stay unvoiced.
            const double cmnd = running > 0.0 ? d * tau / running : 1.0;
            if (tau >= tau_min) best = std::min(best, cmnd);
        }
        voiced[static_cast<std::size_t>(f)] = best < fp.yin_threshold;
    }
    return voiced;
}

// ---------------------------------------------------------------------------
// logHNR: per voiced frame, peak normalized autocorrelation r over the F0
// lag range; HNR = 10*log10(r / (1 - r)), clamped.
// ---------------------------------------------------------------------------

struct HnrResult {
    std::vector<double> per_frame_db;  // NaN for unvoiced frames
    double mean_db = std::numeric_limits<double>::quiet_NaN();
    int voiced_count = 0;
    bool defined = false;
};

inline HnrResult log_hnr(const Waveform& w, const FrameParams& fp = {}) {
    if (w.samples.empty()) throw data_error("log_hnr: empty waveform");
    const int frame_len = fp.frame_samples(w.sample_rate);
    const int hop = fp.hop_samples(w.sample_rate);
    const int n_frames = detail::frame_count(w.samples.size(), frame_len, hop);
    const int tau_min = std::max(1, static_cast<int>(std::floor(w.sample_rate / fp.f0_hi_hz)));
    const int tau_max = static_cast<int>(std::ceil(w.sample_rate / fp.f0_lo_hz));
    if (tau_max >= frame_len) throw config_error("log_hnr: frame too short for the lowest F0 lag");

    const auto voiced = voiced_frames(w, fp);
    HnrResult out;
    out.per_frame_db.assign(static_cast<std::size_t>(n_frames),
                            std::numeric_limits<double>::quiet_NaN());
    double total = 0.0;
    for (int f = 0; f < n_frames; ++f) {
        if (!voiced[static_cast<std::size_t>(f)]) continue;
        const auto x = detail::frame_view(w, frame_len, hop, f);
        const int n = static_cast<int>(x.size());
        double best_r = 0.0;
        for (int tau = tau_min; tau <= tau_max; ++tau) {
            double num = 0.0;
            double e0 = 0.0;
            double e1 = 0.0;
            for (int j = 0; j + tau < n; ++j) {
                num += x[j] * x[j + tau];
                e0 += x[j] * x[j];
                e1 += x[j + tau] * x[j + tau];
            }
            const double denom = std::sqrt(e0 * e1);
            if (denom > 0.0) best_r = std::max(best_r, num / denom);
        }
        double hnr;
        if (best_r >= 1.0 - 1e-12) {
            hnr = kHnrMaxDb;
        } else if (best_r <= 0.0) {
            hnr = kHnrMinDb;
        } else {
            hnr = std::clamp(10.0 * std::log10(best_r / (1.0 - best_r)), kHnrMinDb, kHnrMaxDb);
        }
        out.per_frame_db[static_cast<std::size_t>(f)] = hnr;
        total += hnr;
        out.voiced_count++;
    }
    if (out.voiced_count > 0) {
        out.mean_db = total / out.voiced_count;
        out.defined = true;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Permutation entropy (Bandt-Pompe), normalized by log(m!). Ties broken by
// the earlier-index-smaller rule.
// ---------------------------------------------------------------------------

inline double permutation_entropy(std::span<const double> x, int order, int delay) {
    if (order < 2 || order > 7) throw config_error("permutation_entropy: order must lie in [2,7]");
    if (delay < 1) throw config_error("permutation_entropy: delay must be >= 1");
    const std::size_t span = static_cast<std::size_t>(order - 1) * delay;
    if (x.size() < span + 2) throw data_error("permutation_entropy: sequence too short");

    int factorial = 1;
    for (int i = 2; i <= order; ++i) factorial *= i;
    std::vector<long long> counts(static_cast<std::size_t>(factorial), 0);
    std::array<int, 7> rank{};
    const std::size_t windows = x.size() - span;
    for (std::size_t start = 0; start < windows; ++start) {
        // Lehmer code of the argsort; stable comparison implements the
        // earlier-index-smaller tie rule.
        for (int i = 0; i < order; ++i) rank[static_cast<std::size_t>(i)] = i;
        std::stable_sort(rank.begin(), rank.begin() + order, [&](int a, int b) {
            return x[start + static_cast<std::size_t>(a) * delay] <
                   x[start + static_cast<std::size_t>(b) * delay];
        });
        int code = 0;
        for (int i = 0; i < order; ++i) {
            int smaller = 0;
            for (int j = i + 1; j < order; ++j) {
                if (rank[static_cast<std::size_t>(j)] < rank[static_cast<std::size_t>(i)]) ++smaller;
            }
            code = code * (order - i) + smaller;
        }
        counts[static_cast<std::size_t>(code)]++;
    }

    double h = 0.0;
    for (long long c : counts) {
        if (c == 0) continue;
        const double p = static_cast<double>(c) / static_cast<double>(windows);
        h -= p * std::log(p);
    }
    return h / std::log(static_cast<double>(factorial));
}

inline double permutation_entropy(const std::vector<double>& x, int order, int delay) {
    return permutation_entropy(std::span<const double>(x), order, delay);
}

// ---------------------------------------------------------------------------
// Blind SNR: 10th-order LPC via the autocorrelation method and
// Levinson-Durbin; noise is the residual between the signal and its LPC
// prediction, measured over voiced frames only.
// ---------------------------------------------------------------------------

namespace detail {

// Returns predictor coefficients a[1..p] with A(z) = 1 + sum a_j z^-j,
// or empty on singular autocorrelation.
inline std::vector<double> levinson_durbin(std::span<const double> r, int order) {
    if (r[0] <= 0.0) return {};
    std::vector<double> a(static_cast<std::size_t>(order) + 1, 0.0);
    std::vector<double> tmp(a.size(), 0.0);
    a[0] = 1.0;
    double err = r[0];
    for (int i = 1; i <= order; ++i) {
        double acc = r[static_cast<std::size_t>(i)];
        for (int j = 1; j < i; ++j) acc += a[static_cast<std::size_t>(j)] * r[static_cast<std::size_t>(i - j)];
        if (err <= 0.0) return {};
        const double k = -acc / err;
        for (int j = 0; j <= i; ++j) tmp[static_cast<std::size_t>(j)] = a[static_cast<std::size_t>(j)];
        for (int j = 1; j < i; ++j)
            a[static_cast<std::size_t>(j)] = tmp[static_cast<std::size_t>(j)] + k * tmp[static_cast<std::size_t>(i - j)];
        a[static_cast<std::size_t>(i)] = k;
        err *= (1.0 - k * k);
        if (!(err > 0.0)) return {};
    }
    return a;
}

}  // namespace detail

// LPC prediction SNR of one frame (Hann-windowed); NaN on singular frames.
inline double lpc_frame_snr_db(std::span<const double> frame, int lpc_order) {
    const int n = static_cast<int>(frame.size());
    if (n <= 2 * lpc_order) return std::numeric_limits<double>::quiet_NaN();
    std::vector<double> x(frame.begin(), frame.end());
    for (int i = 0; i < n; ++i) {
        x[static_cast<std::size_t>(i)] *= 0.5 - 0.5 * std::cos(2.0 * M_PI * i / (n - 1));
    }
    std::vector<double> r(static_cast<std::size_t>(lpc_order) + 1, 0.0);
    for (int lag = 0; lag <= lpc_order; ++lag) {
        double acc = 0.0;
        for (int i = 0; i + lag < n; ++i) acc += x[static_cast<std::size_t>(i)] * x[static_cast<std::size_t>(i + lag)];
        r[static_cast<std::size_t>(lag)] = acc;
    }
    const auto a = detail::levinson_durbin(r, lpc_order);
    if (a.empty()) return std::numeric_limits<double>::quiet_NaN();

    double signal_power = 0.0;
    double residual_power = 0.0;
    for (int i = lpc_order; i < n; ++i) {
        double e = x[static_cast<std::size_t>(i)];
        for (int j = 1; j <= lpc_order; ++j)
            e += a[static_cast<std::size_t>(j)] * x[static_cast<std::size_t>(i - j)];
        signal_power += x[static_cast<std::size_t>(i)] * x[static_cast<std::size_t>(i)];
        residual_power += e * e;
    }
    if (residual_power <= 0.0 || signal_power <= 0.0) return std::numeric_limits<double>::quiet_NaN();
    return 10.0 * std::log10(signal_power / residual_power);
}

struct BlindSnrResult {
    std::vector<double> per_frame_db;  // NaN for unvoiced or skipped frames
    double mean_db = std::numeric_limits<double>::quiet_NaN();
    int voiced_count = 0;
    bool defined = false;
};

inline BlindSnrResult blind_snr(const Waveform& w, int lpc_order = 10, const FrameParams& fp = {}) {
    if (w.samples.empty()) throw data_error("blind_snr: empty waveform");
    const int frame_len = fp.frame_samples(w.sample_rate);
    const int hop = fp.hop_samples(w.sample_rate);
    const int n_frames = detail::frame_count(w.samples.size(), frame_len, hop);
    const auto voiced = voiced_frames(w, fp);

    BlindSnrResult out;
    out.per_frame_db.assign(static_cast<std::size_t>(n_frames),
                            std::numeric_limits<double>::quiet_NaN());
    double total = 0.0;
    for (int f = 0; f < n_frames; ++f) {
        if (!voiced[static_cast<std::size_t>(f)]) continue;
        const double snr = lpc_frame_snr_db(detail::frame_view(w, frame_len, hop, f), lpc_order);
        if (!std::isfinite(snr)) continue;  // singular frame skipped
        out.per_frame_db[static_cast<std::size_t>(f)] = snr;
        total += snr;
        out.voiced_count++;
    }
    if (out.voiced_count > 0) {
        out.mean_db = total / out.voiced_count;
        out.defined = true;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Full per-utterance profile.
// ---------------------------------------------------------------------------

struct ProfileParams {
    FrameParams framing;
    int pe_order = 3;
    int pe_delay = 1;
    int lpc_order = 10;
};

inline UtteranceProfile profile_waveform(const Waveform& w, const ProfileParams& pp = {}) {
    UtteranceProfile profile;
    const auto loud = loudness(w, pp.framing.frame_ms, pp.framing.hop_ms);
    profile.loudness_db = loud.mean_db;
    profile.silent = loud.silent;

    const auto voiced = voiced_frames(w, pp.framing);
    long long n_voiced = std::count(voiced.begin(), voiced.end(), true);
    profile.voiced_fraction =
        voiced.empty() ? 0.0 : static_cast<double>(n_voiced) / static_cast<double>(voiced.size());

    const auto hnr = log_hnr(w, pp.framing);
    profile.log_hnr_db = hnr.mean_db;

    const auto snr = blind_snr(w, pp.lpc_order, pp.framing);
    profile.blind_snr_db = snr.mean_db;

    // Mean per-frame permutation entropy over the same framing.
    const int frame_len = pp.framing.frame_samples(w.sample_rate);
    const int hop = pp.framing.hop_samples(w.sample_rate);
    const int n_frames = detail::frame_count(w.samples.size(), frame_len, hop);
    double pe_total = 0.0;
    int pe_frames = 0;
    for (int f = 0; f < n_frames; ++f) {
        const auto frame = detail::frame_view(w, frame_len, hop, f);
        pe_total += permutation_entropy(frame, pp.pe_order, pp.pe_delay);
        pe_frames++;
    }
    if (pe_frames == 0) {
        profile.perm_entropy = permutation_entropy(std::span<const double>(w.samples), pp.pe_order,
                                                   pp.pe_delay);
    } else {
        profile.perm_entropy = pe_total / pe_frames;
    }
    return profile;
}

// ---------------------------------------------------------------------------
// Inter/intra-client variation statistics for one scalar feature.
// ---------------------------------------------------------------------------

struct ClientVariationReport {
    double mean_of_means = 0.0;
    double std_of_means = 0.0;  // inter-client
    // Intra-client statistics; NaN when no client has two defined values.
    double mean_of_stds = std::numeric_limits<double>::quiet_NaN();
    double std_of_stds = std::numeric_limits<double>::quiet_NaN();
    double kurtosis_of_means = std::numeric_limits<double>::quiet_NaN();
    int clients = 0;
    int single_value_clients = 0;  // contribute a mean but no std
};

// values_by_client: per client, the defined per-utterance feature values.
inline ClientVariationReport client_variation(const std::vector<std::vector<double>>& values_by_client) {
    std::vector<double> means;
    std::vector<double> stds;
    int singles = 0;
    for (const auto& values : values_by_client) {
        if (values.empty()) continue;
        means.push_back(mean(values));
        if (values.size() >= 2) {
            stds.push_back(stddev(values));
        } else {
            ++singles;
        }
    }
    if (means.empty()) throw data_error("client_variation: no clients with defined values");

    ClientVariationReport report;
    report.clients = static_cast<int>(means.size());
    report.single_value_clients = singles;
    report.mean_of_means = mean(means);
    report.std_of_means = stddev(means);
    if (!stds.empty()) {
        report.mean_of_stds = mean(stds);
        report.std_of_stds = stddev(stds);
    }
    if (means.size() >= 4) {
        try {
            report.kurtosis_of_means = excess_kurtosis(means);
        } catch (const numeric_error&) {
            // zero variance across clients; left undefined
        }
    }
    return report;
}

// ---------------------------------------------------------------------------
// K-means++ / Lloyd clustering purity.
// ---------------------------------------------------------------------------

namespace detail {

inline double sq_dist(std::span<const double> a, std::span<const double> b) {
    double d = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double delta = a[i] - b[i];
        d += delta * delta;
    }
    return d;
}

}  // namespace detail

struct ClusteringResult {
    double purity = 0.0;
    std::vector<int> assignment;
    int iterations = 0;
};

// points: row-major n x dim. labels: true client per point. k-means++
// seeding, Lloyd to convergence (shift < 1e-6) or 300 iterations; empty
// clusters re-seeded from the farthest point. Purity is the fraction of
// points sharing their cluster's majority label (ties toward the smaller
// label id).
inline ClusteringResult clustering_purity(const std::vector<double>& points, int dim,
                                          const std::vector<int>& labels, int k,
                                          std::uint64_t seed) {
    if (dim < 1) throw config_error("clustering_purity: dim must be >= 1");
    const std::size_t n = points.size() / static_cast<std::size_t>(dim);
    if (n * static_cast<std::size_t>(dim) != points.size())
        throw config_error("clustering_purity: point buffer not a multiple of dim");
    if (labels.size() != n) throw config_error("clustering_purity: one label per point required");
    if (k < 1 || static_cast<std::size_t>(k) > n)
        throw config_error("clustering_purity: need 1 <= k <= point count");

    auto point = [&](std::size_t i) {
        return std::span<const double>(points.data() + i * dim, static_cast<std::size_t>(dim));
    };

    Rng rng(mix_seed(seed, seed_stream::kKmeans));
    std::vector<double> centroids(static_cast<std::size_t>(k) * dim);
    auto centroid = [&](int c) {
        return std::span<double>(centroids.data() + static_cast<std::size_t>(c) * dim,
                                 static_cast<std::size_t>(dim));
    };

    // k-means++ seeding.
    std::vector<double> min_dist(n, std::numeric_limits<double>::infinity());
    {
        const auto first = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(n) - 1));
        std::copy_n(point(first).data(), dim, centroid(0).data());
        for (int c = 1; c < k; ++c) {
            double total = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                min_dist[i] = std::min(min_dist[i], detail::sq_dist(point(i), centroid(c - 1)));
                total += min_dist[i];
            }
            std::size_t chosen = 0;
            if (total > 0.0) {
                const double target = rng.next_double() * total;
                double run = 0.0;
                for (std::size_t i = 0; i < n; ++i) {
                    run += min_dist[i];
                    if (run >= target) {
                        chosen = i;
                        break;
                    }
                    chosen = i;
                }
            } else {
                chosen = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(n) - 1));
            }
            std::copy_n(point(chosen).data(), dim, centroid(c).data());
        }
    }

    ClusteringResult result;
    result.assignment.assign(n, 0);
    std::vector<double> next(centroids.size());
    std::vector<long long> counts(static_cast<std::size_t>(k));
    for (int iter = 0; iter < 300; ++iter) {
        result.iterations = iter + 1;
        for (std::size_t i = 0; i < n; ++i) {
            int best = 0;
            double best_d = detail::sq_dist(point(i), centroid(0));
            for (int c = 1; c < k; ++c) {
                const double d = detail::sq_dist(point(i), centroid(c));
                if (d < best_d) {
                    best_d = d;
                    best = c;
                }
            }
            result.assignment[i] = best;
        }

        std::fill(next.begin(), next.end(), 0.0);
        std::fill(counts.begin(), counts.end(), 0);
        for (std::size_t i = 0; i < n; ++i) {
            const int c = result.assignment[i];
            counts[static_cast<std::size_t>(c)]++;
            const auto p = point(i);
            double* dst = next.data() + static_cast<std::size_t>(c) * dim;
            for (int d = 0; d < dim; ++d) dst[d] += p[static_cast<std::size_t>(d)];
        }

        bool reseeded = false;
        for (int c = 0; c < k; ++c) {
            if (counts[static_cast<std::size_t>(c)] > 0) continue;
            // Re-seed the empty cluster from the farthest point.
            std::size_t farthest = 0;
            double far_d = -1.0;
            for (std::size_t i = 0; i < n; ++i) {
                const double d = detail::sq_dist(point(i), centroid(result.assignment[i]));
                if (d > far_d) {
                    far_d = d;
                    farthest = i;
                }
            }
            const auto p = point(farthest);
            double* dst = next.data() + static_cast<std::size_t>(c) * dim;
            for (int d = 0; d < dim; ++d) dst[d] = p[static_cast<std::size_t>(d)];
            counts[static_cast<std::size_t>(c)] = 1;
            reseeded = true;
        }

        double shift = 0.0;
        for (int c = 0; c < k; ++c) {
            double* dst = next.data() + static_cast<std::size_t>(c) * dim;
            const double inv = 1.0 / static_cast<double>(counts[static_cast<std::size_t>(c)]);
            for (int d = 0; d < dim; ++d) dst[d] *= inv;
            shift = std::max(shift, detail::sq_dist(
                                        std::span<const double>(dst, static_cast<std::size_t>(dim)),
                                        centroid(c)));
        }
        centroids = next;
        if (!reseeded && std::sqrt(shift) < 1e-6) break;
    }

    // Purity: majority true label per cluster.
    std::vector<std::map<int, long long>> tallies(static_cast<std::size_t>(k));
    for (std::size_t i = 0; i < n; ++i)
        tallies[static_cast<std::size_t>(result.assignment[i])][labels[i]]++;
    long long agree = 0;
    for (const auto& tally : tallies) {
        long long best = 0;
        for (const auto& [label, count] : tally) {
            // std::map iterates labels ascending, so ties resolve toward the
            // smaller id.
            if (count > best) best = count;
        }
        agree += best;
    }
    result.purity = static_cast<double>(agree) / static_cast<double>(n);
    return result;
}

}  // namespace fedsim
