#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include "fedsim/errors.hpp"
#include "fedsim/metrics.hpp"
#include "fedsim/rng.hpp"
#include "fedsim/types.hpp"

namespace fedsim {

// Sentinel for log(0); keeps the DP free of inf - inf.
constexpr double kLogZero = -1e30;

inline double log_sum_exp(double a, double b) {
    if (a < b) std::swap(a, b);
    if (b <= kLogZero * 0.5) return a;
    return a + std::log1p(std::exp(b - a));
}

inline double safe_log(double p) { return p > 0.0 ? std::log(p) : kLogZero; }

// ---------------------------------------------------------------------------
// Forward pass: frame-synchronous linear softmax classifier.
// Weights: V x D matrix row-major, then V biases.
// ---------------------------------------------------------------------------

inline FramePosteriors forward(const ParameterVector& weights, const FeatureSequence& x, int vocab) {
    const int d = x.dim;
    if (vocab < 2) throw config_error("forward: vocab must include blank plus one token");
    if (weights.size() != parameter_count(vocab, d))
        throw config_error("forward: weight length does not match (V, D)");
    const int t_x = x.frames();
    if (t_x < 1) throw data_error("forward: empty feature sequence");

    FramePosteriors post;
    post.vocab = vocab;
    post.probs.resize(static_cast<std::size_t>(t_x) * vocab);
    const double* w = weights.values.data();
    const double* bias = w + static_cast<std::size_t>(vocab) * d;
    std::vector<double> logits(vocab);
    for (int t = 0; t < t_x; ++t) {
        const auto xt = x.frame(t);
        double max_logit = -std::numeric_limits<double>::infinity();
        for (int v = 0; v < vocab; ++v) {
            double z = bias[v];
            const double* row = w + static_cast<std::size_t>(v) * d;
            for (int j = 0; j < d; ++j) z += row[j] * xt[j];
            logits[v] = z;
            max_logit = std::max(max_logit, z);
        }
        double denom = 0.0;
        for (int v = 0; v < vocab; ++v) denom += std::exp(logits[v] - max_logit);
        double* out = post.probs.data() + static_cast<std::size_t>(t) * vocab;
        for (int v = 0; v < vocab; ++v) out[v] = std::exp(logits[v] - max_logit) / denom;
    }
    return post;
}

// ---------------------------------------------------------------------------
// CTC loss: forward DP in log space over the blank-augmented label sequence.
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<int> augment_labels(const Transcript& y) {
    std::vector<int> aug;
    aug.reserve(2 * y.tokens.size() + 1);
    aug.push_back(kBlankId);
    for (int tok : y.tokens) {
        aug.push_back(tok);
        aug.push_back(kBlankId);
    }
    return aug;
}

inline void check_ctc_inputs(const FramePosteriors& post, const Transcript& y) {
    if (y.tokens.empty()) throw data_error("ctc: empty transcript");
    for (int tok : y.tokens) {
        if (tok == kBlankId) throw data_error("ctc: transcript contains the blank id");
        if (tok < 0 || tok >= post.vocab) throw data_error("ctc: token id out of range");
    }
}

}  // namespace detail

// Minimum frame count for a valid alignment: |y| plus one blank between each
// pair of equal adjacent labels.
inline int ctc_min_frames(const Transcript& y) {
    int need = y.length();
    for (std::size_t i = 1; i < y.tokens.size(); ++i) {
        if (y.tokens[i] == y.tokens[i - 1]) ++need;
    }
    return need;
}

inline bool ctc_feasible(int frames, const Transcript& y) { return frames >= ctc_min_frames(y); }

// Returns -log P(y | posteriors); +infinity when no alignment exists.
inline double ctc_loss(const FramePosteriors& post, const Transcript& y) {
    detail::check_ctc_inputs(post, y);
    const int t_x = post.frames();
    if (!ctc_feasible(t_x, y)) return std::numeric_limits<double>::infinity();

    const auto aug = detail::augment_labels(y);
    const int s_len = static_cast<int>(aug.size());
    std::vector<double> alpha(static_cast<std::size_t>(t_x) * s_len, kLogZero);
    auto a = [&](int t, int s) -> double& { return alpha[static_cast<std::size_t>(t) * s_len + s]; };

    a(0, 0) = safe_log(post.at(0, aug[0]));
    if (s_len > 1) a(0, 1) = safe_log(post.at(0, aug[1]));
    for (int t = 1; t < t_x; ++t) {
        for (int s = 0; s < s_len; ++s) {
            double acc = a(t - 1, s);
            if (s >= 1) acc = log_sum_exp(acc, a(t - 1, s - 1));
            if (s >= 2 && aug[s] != kBlankId && aug[s] != aug[s - 2]) acc = log_sum_exp(acc, a(t - 1, s - 2));
            a(t, s) = acc <= kLogZero * 0.5 ? kLogZero : acc + safe_log(post.at(t, aug[s]));
        }
    }
    double log_p = a(t_x - 1, s_len - 1);
    if (s_len > 1) log_p = log_sum_exp(log_p, a(t_x - 1, s_len - 2));
    if (log_p <= kLogZero * 0.5) return std::numeric_limits<double>::infinity();
    return -log_p;
}

// ---------------------------------------------------------------------------
// Frame-level CE loss against a supplied alignment (mean over frames).
// ---------------------------------------------------------------------------

inline double ce_loss(const FramePosteriors& post, const FrameAlignment& alignment) {
    const int t_x = post.frames();
    if (static_cast<int>(alignment.labels.size()) != t_x)
        throw data_error("ce_loss: alignment length does not match frame count");
    double total = 0.0;
    for (int t = 0; t < t_x; ++t) {
        const int label = alignment.labels[t];
        if (label < 0 || label >= post.vocab) throw data_error("ce_loss: label id out of range");
        total += -safe_log(post.at(t, label));
    }
    return total / static_cast<double>(t_x);
}

inline double joint_loss(const FramePosteriors& post, const Transcript& y,
                         const FrameAlignment& alignment, const LossConfig& cfg) {
    cfg.validate();
    const double ce = cfg.mu > 0.0 ? ce_loss(post, alignment) : 0.0;
    const double ctc = cfg.mu < 1.0 ? ctc_loss(post, y) : 0.0;
    return cfg.mu * ce + (1.0 - cfg.mu) * ctc;
}

// ---------------------------------------------------------------------------
// Analytic gradient of the joint loss w.r.t. the flat parameter vector.
// CTC part via full forward-backward; CE part is softmax cross entropy.
// ---------------------------------------------------------------------------

namespace detail {

// Adds d(-log P(y))/d(logits) into grad_logits (T x V, row-major).
// Returns the CTC loss, +inf when infeasible (gradient left untouched).
inline double ctc_grad_logits(const FramePosteriors& post, const Transcript& y,
                              double scale, std::vector<double>& grad_logits) {
    check_ctc_inputs(post, y);
    const int t_x = post.frames();
    const int vocab = post.vocab;
    if (!ctc_feasible(t_x, y)) return std::numeric_limits<double>::infinity();

    const auto aug = augment_labels(y);
    const int s_len = static_cast<int>(aug.size());
    std::vector<double> alpha(static_cast<std::size_t>(t_x) * s_len, kLogZero);
    std::vector<double> beta(static_cast<std::size_t>(t_x) * s_len, kLogZero);
    auto a = [&](int t, int s) -> double& { return alpha[static_cast<std::size_t>(t) * s_len + s]; };
    auto b = [&](int t, int s) -> double& { return beta[static_cast<std::size_t>(t) * s_len + s]; };

    a(0, 0) = safe_log(post.at(0, aug[0]));
    if (s_len > 1) a(0, 1) = safe_log(post.at(0, aug[1]));
    for (int t = 1; t < t_x; ++t) {
        for (int s = 0; s < s_len; ++s) {
            double acc = a(t - 1, s);
            if (s >= 1) acc = log_sum_exp(acc, a(t - 1, s - 1));
            if (s >= 2 && aug[s] != kBlankId && aug[s] != aug[s - 2]) acc = log_sum_exp(acc, a(t - 1, s - 2));
            a(t, s) = acc <= kLogZero * 0.5 ? kLogZero : acc + safe_log(post.at(t, aug[s]));
        }
    }
    double log_p = a(t_x - 1, s_len - 1);
    if (s_len > 1) log_p = log_sum_exp(log_p, a(t_x - 1, s_len - 2));
    if (log_p <= kLogZero * 0.5) return std::numeric_limits<double>::infinity();

    b(t_x - 1, s_len - 1) = safe_log(post.at(t_x - 1, aug[s_len - 1]));
    if (s_len > 1) b(t_x - 1, s_len - 2) = safe_log(post.at(t_x - 1, aug[s_len - 2]));
    for (int t = t_x - 2; t >= 0; --t) {
        for (int s = 0; s < s_len; ++s) {
            double acc = b(t + 1, s);
            if (s + 1 < s_len) acc = log_sum_exp(acc, b(t + 1, s + 1));
            if (s + 2 < s_len && aug[s + 2] != kBlankId && aug[s + 2] != aug[s])
                acc = log_sum_exp(acc, b(t + 1, s + 2));
            b(t, s) = acc <= kLogZero * 0.5 ? kLogZero : acc + safe_log(post.at(t, aug[s]));
        }
    }

    // gamma_t(v) = sum over augmented states with label v of alpha*beta/p,
    // normalised by P(y). Gradient w.r.t. logits: p - gamma.
    std::vector<double> gamma(vocab);
    for (int t = 0; t < t_x; ++t) {
        std::fill(gamma.begin(), gamma.end(), kLogZero);
        for (int s = 0; s < s_len; ++s) {
            const double lp = safe_log(post.at(t, aug[s]));
            const double term = a(t, s) + b(t, s) - lp;
            if (term > kLogZero * 0.5) gamma[aug[s]] = log_sum_exp(gamma[aug[s]], term);
        }
        double* g = grad_logits.data() + static_cast<std::size_t>(t) * vocab;
        for (int v = 0; v < vocab; ++v) {
            const double occupancy = gamma[v] <= kLogZero * 0.5 ? 0.0 : std::exp(gamma[v] - log_p);
            g[v] += scale * (post.at(t, v) - occupancy);
        }
    }
    return -log_p;
}

// Adds d(ce_loss)/d(logits) into grad_logits, returns the CE loss.
inline double ce_grad_logits(const FramePosteriors& post, const FrameAlignment& alignment,
                             double scale, std::vector<double>& grad_logits) {
    const int t_x = post.frames();
    const int vocab = post.vocab;
    if (static_cast<int>(alignment.labels.size()) != t_x)
        throw data_error("ce_loss: alignment length does not match frame count");
    const double inv_t = 1.0 / static_cast<double>(t_x);
    double total = 0.0;
    for (int t = 0; t < t_x; ++t) {
        const int label = alignment.labels[t];
        if (label < 0 || label >= vocab) throw data_error("ce_loss: label id out of range");
        total += -safe_log(post.at(t, label));
        double* g = grad_logits.data() + static_cast<std::size_t>(t) * vocab;
        for (int v = 0; v < vocab; ++v) {
            g[v] += scale * inv_t * (post.at(t, v) - (v == label ? 1.0 : 0.0));
        }
    }
    return total * inv_t;
}

}  // namespace detail

struct LossAndGrad {
    double loss = 0.0;
    ParameterVector grad;
};

// Joint loss and its gradient for a single utterance. An infeasible CTC
// alignment yields loss = +inf with a zero CTC gradient contribution so the
// poisoned loss (not NaN weights) carries the failure signal.
inline LossAndGrad joint_loss_grad(const ParameterVector& weights, const Utterance& utt,
                                   const LossConfig& cfg, int vocab) {
    cfg.validate();
    const FramePosteriors post = forward(weights, utt.features, vocab);
    const int t_x = post.frames();
    const int d = utt.features.dim;

    std::vector<double> grad_logits(static_cast<std::size_t>(t_x) * vocab, 0.0);
    double loss = 0.0;
    if (cfg.mu > 0.0) loss += cfg.mu * detail::ce_grad_logits(post, utt.alignment, cfg.mu, grad_logits);
    if (cfg.mu < 1.0) {
        const double ctc = detail::ctc_grad_logits(post, utt.transcript, 1.0 - cfg.mu, grad_logits);
        loss += (1.0 - cfg.mu) * ctc;  // may be +inf
    }

    LossAndGrad out;
    out.loss = loss;
    out.grad.values.assign(weights.size(), 0.0);
    double* gw = out.grad.values.data();
    double* gb = gw + static_cast<std::size_t>(vocab) * d;
    for (int t = 0; t < t_x; ++t) {
        const auto xt = utt.features.frame(t);
        const double* gl = grad_logits.data() + static_cast<std::size_t>(t) * vocab;
        for (int v = 0; v < vocab; ++v) {
            const double g = gl[v];
            if (g == 0.0) continue;
            double* row = gw + static_cast<std::size_t>(v) * d;
            for (int j = 0; j < d; ++j) row[j] += g * xt[j];
            gb[v] += g;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Local mini-batch SGD.
// ---------------------------------------------------------------------------

struct TrainResult {
    ParameterVector weights;
    double mean_loss = 0.0;  // mean joint loss over the final epoch
};

// Plain SGD over `epochs` passes; batch order reshuffled each epoch from the
// seed. Deterministic given (weights, data, cfg, seed).
inline TrainResult local_train(const ParameterVector& weights, const std::vector<Utterance>& data,
                               const LossConfig& cfg, std::uint64_t seed, int vocab) {
    cfg.validate();
    if (data.empty()) throw data_error("local_train: empty dataset");

    TrainResult result;
    result.weights = weights;
    Rng rng(seed);
    std::vector<std::size_t> order(data.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    double epoch_loss = 0.0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(order);
        epoch_loss = 0.0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), start + cfg.batch_size);
            const double inv_batch = 1.0 / static_cast<double>(end - start);
            ParameterVector batch_grad;
            batch_grad.values.assign(weights.size(), 0.0);
            for (std::size_t i = start; i < end; ++i) {
                const auto lg = joint_loss_grad(result.weights, data[order[i]], cfg, vocab);
                epoch_loss += lg.loss;
                for (std::size_t p = 0; p < batch_grad.size(); ++p)
                    batch_grad.values[p] += inv_batch * lg.grad.values[p];
            }
            for (std::size_t p = 0; p < batch_grad.size(); ++p)
                result.weights.values[p] -= cfg.learning_rate * batch_grad.values[p];
        }
    }
    if (cfg.epochs == 0) {
        // Degenerate config used in tests: report the loss at the given weights.
        for (const auto& utt : data)
            epoch_loss += joint_loss(forward(result.weights, utt.features, vocab), utt.transcript,
                                     utt.alignment, cfg);
    }
    result.mean_loss = epoch_loss / static_cast<double>(data.size());
    return result;
}

// ---------------------------------------------------------------------------
// Greedy CTC decoding: per-frame argmax (ties toward the lowest id),
// collapse repeats, strip blanks.
// ---------------------------------------------------------------------------

inline Transcript greedy_decode(const FramePosteriors& post) {
    Transcript out;
    int prev = -1;
    for (int t = 0; t < post.frames(); ++t) {
        const auto row = post.frame(t);
        int best = 0;
        for (int v = 1; v < post.vocab; ++v) {
            if (row[v] > row[best]) best = v;
        }
        if (best != prev && best != kBlankId) out.tokens.push_back(best);
        prev = best;
    }
    return out;
}

// Corpus-level WER of greedy decoding with the given weights.
inline WerScore evaluate_wer(const ParameterVector& weights, const std::vector<Utterance>& data,
                             int vocab) {
    if (data.empty()) throw data_error("evaluate_wer: empty dataset");
    WerAccumulator acc;
    for (const auto& utt : data) {
        const auto hyp = greedy_decode(forward(weights, utt.features, vocab));
        acc.add(utt.transcript, hyp);
    }
    return acc.score();
}

}  // namespace fedsim
