#include <catch2/catch.hpp>

#include <cmath>
#include <limits>
#include <vector>

#include "fedsim/model.hpp"
#include "fedsim/rng.hpp"
#include "oracles.hpp"

using namespace fedsim;

namespace {

FramePosteriors uniform_posteriors(int frames, int vocab) {
    FramePosteriors post;
    post.vocab = vocab;
    post.probs.assign(static_cast<std::size_t>(frames) * vocab, 1.0 / vocab);
    return post;
}

FeatureSequence random_features(Rng& rng, int frames, int dim, double scale = 1.0) {
    FeatureSequence x;
    x.dim = dim;
    x.data.resize(static_cast<std::size_t>(frames) * dim);
    for (auto& v : x.data) v = scale * rng.normal();
    return x;
}

ParameterVector random_weights(Rng& rng, int vocab, int dim, double scale = 0.5) {
    ParameterVector w;
    w.values.resize(parameter_count(vocab, dim));
    for (auto& v : w.values) v = scale * rng.normal();
    return w;
}

// Random posteriors via a softmax of random logits.
FramePosteriors random_posteriors(Rng& rng, int frames, int vocab) {
    FramePosteriors post;
    post.vocab = vocab;
    post.probs.resize(static_cast<std::size_t>(frames) * vocab);
    for (int t = 0; t < frames; ++t) {
        double denom = 0.0;
        std::vector<double> e(static_cast<std::size_t>(vocab));
        for (auto& v : e) {
            v = std::exp(rng.uniform(-2.0, 2.0));
            denom += v;
        }
        for (int v = 0; v < vocab; ++v)
            post.probs[static_cast<std::size_t>(t) * vocab + v] = e[static_cast<std::size_t>(v)] / denom;
    }
    return post;
}

Utterance random_utterance(Rng& rng, int vocab, int dim) {
    // A feasible random instance: alignment drawn first, transcript derived
    // by collapsing it.
    Utterance utt;
    const int frames = static_cast<int>(rng.uniform_int(2, 5));
    utt.features = random_features(rng, frames, dim);
    for (int t = 0; t < frames; ++t)
        utt.alignment.labels.push_back(static_cast<int>(rng.uniform_int(0, vocab - 1)));
    utt.transcript.tokens = oracles::collapse_path(utt.alignment.labels, kBlankId);
    if (utt.transcript.tokens.empty()) {
        utt.alignment.labels.back() = 1;
        utt.transcript.tokens = oracles::collapse_path(utt.alignment.labels, kBlankId);
    }
    return utt;
}

}  // namespace

TEST_CASE("forward yields uniform rows for zero weights") {
    const int vocab = 4;
    const int dim = 3;
    ParameterVector w;
    w.values.assign(parameter_count(vocab, dim), 0.0);
    Rng rng(1);
    const auto x = random_features(rng, 5, dim);
    const auto post = forward(w, x, vocab);
    for (int t = 0; t < post.frames(); ++t) {
        for (int v = 0; v < vocab; ++v) CHECK(post.at(t, v) == Approx(0.25));
    }
}

TEST_CASE("forward concentrates on a dominant logit") {
    const int vocab = 3;
    const int dim = 2;
    ParameterVector w;
    w.values.assign(parameter_count(vocab, dim), 0.0);
    // Large bias on token 2 dominates every frame.
    w.values[static_cast<std::size_t>(vocab) * dim + 2] = 50.0;
    Rng rng(2);
    const auto x = random_features(rng, 4, dim, 0.1);
    const auto post = forward(w, x, vocab);
    for (int t = 0; t < post.frames(); ++t) CHECK(post.at(t, 2) > 0.99);
}

TEST_CASE("forward is deterministic and rows sum to one") {
    Rng rng(3);
    const int vocab = 5;
    const int dim = 4;
    const auto w = random_weights(rng, vocab, dim);
    const auto x = random_features(rng, 6, dim);
    const auto a = forward(w, x, vocab);
    const auto b = forward(w, x, vocab);
    CHECK(a.probs == b.probs);
    for (int t = 0; t < a.frames(); ++t) {
        double row = 0.0;
        for (int v = 0; v < vocab; ++v) row += a.at(t, v);
        CHECK(row == Approx(1.0).epsilon(0).margin(1e-9));
    }
    ParameterVector bad;
    bad.values.assign(3, 0.0);
    CHECK_THROWS_AS(forward(bad, x, vocab), config_error);
}

TEST_CASE("ctc_loss frozen examples") {
    // V=2 (blank + 'a'), uniform rows: expected values frozen from the
    // brute-force path enumeration oracle.
    Transcript y{{1}};
    {
        const auto post = uniform_posteriors(1, 2);
        const double oracle = oracles::ctc_path_sum(post, y.tokens, kBlankId);
        CHECK(oracle == Approx(0.5));
        CHECK(ctc_loss(post, y) == Approx(-std::log(0.5)).margin(1e-12));
    }
    {
        const auto post = uniform_posteriors(2, 2);
        const double oracle = oracles::ctc_path_sum(post, y.tokens, kBlankId);
        CHECK(oracle == Approx(0.75));
        CHECK(ctc_loss(post, y) == Approx(-std::log(0.75)).margin(1e-12));
    }
}

TEST_CASE("ctc_loss is zero on a certain path") {
    FramePosteriors post;
    post.vocab = 3;
    // Path: 1 blank 2 with probability one -> collapses to "1 2".
    post.probs = {0, 1, 0, 1, 0, 0, 0, 0, 1};
    Transcript y{{1, 2}};
    CHECK(ctc_loss(post, y) == Approx(0.0).margin(1e-12));
}

TEST_CASE("ctc_loss signals infeasible alignments with infinite loss") {
    // "1 1" needs at least 3 frames (blank separator).
    Transcript y{{1, 1}};
    const auto post = uniform_posteriors(2, 2);
    CHECK(std::isinf(ctc_loss(post, y)));
    CHECK_FALSE(ctc_feasible(2, y));
    CHECK(ctc_feasible(3, y));
}

TEST_CASE("ctc_loss rejects blank-bearing transcripts") {
    const auto post = uniform_posteriors(3, 2);
    CHECK_THROWS_AS(ctc_loss(post, Transcript{{0}}), data_error);
    CHECK_THROWS_AS(ctc_loss(post, Transcript{}), data_error);
}

TEST_CASE("ctc_loss equals brute-force enumeration on random instances") {
    Rng rng(42);
    for (int trial = 0; trial < 200; ++trial) {
        const int vocab = static_cast<int>(rng.uniform_int(2, 3));
        const int frames = static_cast<int>(rng.uniform_int(1, 6));
        const int t_y = static_cast<int>(rng.uniform_int(1, 3));
        Transcript y;
        for (int i = 0; i < t_y; ++i)
            y.tokens.push_back(static_cast<int>(rng.uniform_int(1, vocab - 1)));
        const auto post = random_posteriors(rng, frames, vocab);
        const double total = oracles::ctc_path_sum(post, y.tokens, kBlankId);
        const double loss = ctc_loss(post, y);
        if (total == 0.0) {
            CHECK(std::isinf(loss));
        } else {
            CHECK(loss == Approx(-std::log(total)).epsilon(0).margin(1e-9));
        }
    }
}

TEST_CASE("ce_loss values") {
    {
        const auto post = uniform_posteriors(3, 4);
        FrameAlignment a{{0, 1, 2}};
        CHECK(ce_loss(post, a) == Approx(-std::log(0.25)).margin(1e-12));
    }
    {
        FramePosteriors post;
        post.vocab = 2;
        post.probs = {0.5, 0.5, 0.25, 0.75};
        FrameAlignment a{{0, 0}};  // probs 0.5 then 0.25
        CHECK(ce_loss(post, a) == Approx((-std::log(0.5) - std::log(0.25)) / 2.0).margin(1e-12));
    }
    {
        FramePosteriors post;
        post.vocab = 2;
        post.probs = {1.0, 0.0, 0.0, 1.0};
        FrameAlignment a{{0, 1}};
        CHECK(ce_loss(post, a) == Approx(0.0).margin(1e-12));
    }
    const auto post = uniform_posteriors(2, 3);
    CHECK_THROWS_AS(ce_loss(post, FrameAlignment{{0}}), data_error);
    CHECK_THROWS_AS(ce_loss(post, FrameAlignment{{0, 7}}), data_error);
}

TEST_CASE("joint_loss respects the mixing weight") {
    Rng rng(11);
    const auto post = random_posteriors(rng, 4, 3);
    Transcript y{{1, 2}};
    FrameAlignment a{{1, 1, 0, 2}};
    LossConfig cfg;

    cfg.mu = 0.0;
    CHECK(joint_loss(post, y, a, cfg) == Approx(ctc_loss(post, y)));
    cfg.mu = 1.0;
    CHECK(joint_loss(post, y, a, cfg) == Approx(ce_loss(post, a)));

    const double ce = ce_loss(post, a);
    const double ctc = ctc_loss(post, y);
    for (double mu : {0.25, 0.4, 0.5, 0.9}) {
        cfg.mu = mu;
        CHECK(joint_loss(post, y, a, cfg) == Approx(mu * ce + (1 - mu) * ctc).margin(1e-12));
    }
}

TEST_CASE("joint loss gradient matches central finite differences") {
    Rng rng(1234);
    for (double mu : {0.0, 0.3, 1.0}) {
        for (int trial = 0; trial < 20; ++trial) {
            const int vocab = static_cast<int>(rng.uniform_int(2, 4));
            const int dim = static_cast<int>(rng.uniform_int(2, 4));
            const auto utt = random_utterance(rng, vocab, dim);
            const auto w = random_weights(rng, vocab, dim);
            LossConfig cfg;
            cfg.mu = mu;

            const auto analytic = joint_loss_grad(w, utt, cfg, vocab);
            REQUIRE(std::isfinite(analytic.loss));
            const auto fd = oracles::finite_difference_gradient(
                [&](const ParameterVector& p) {
                    return joint_loss(forward(p, utt.features, vocab), utt.transcript, utt.alignment,
                                      cfg);
                },
                w, 1e-5);
            CHECK(oracles::relative_error(analytic.grad.values, fd) < 1e-4);
        }
    }
}

TEST_CASE("local_train with zero learning rate leaves weights unchanged") {
    Rng rng(55);
    const int vocab = 3;
    const int dim = 3;
    std::vector<Utterance> data{random_utterance(rng, vocab, dim), random_utterance(rng, vocab, dim)};
    const auto w = random_weights(rng, vocab, dim);
    LossConfig cfg;
    cfg.learning_rate = 0.0;
    cfg.epochs = 2;

    const auto result = local_train(w, data, cfg, 9, vocab);
    CHECK(result.weights.values == w.values);

    double expected = 0.0;
    for (const auto& utt : data)
        expected += joint_loss(forward(w, utt.features, vocab), utt.transcript, utt.alignment, cfg);
    CHECK(result.mean_loss == Approx(expected / data.size()).margin(1e-12));
}

TEST_CASE("one SGD step equals learning_rate times the analytic gradient") {
    Rng rng(77);
    const int vocab = 3;
    const int dim = 2;
    const auto utt = random_utterance(rng, vocab, dim);
    const auto w = random_weights(rng, vocab, dim);
    LossConfig cfg;
    cfg.epochs = 1;
    cfg.batch_size = 1;
    cfg.learning_rate = 0.05;

    const auto result = local_train(w, {utt}, cfg, 1, vocab);
    const auto lg = joint_loss_grad(w, utt, cfg, vocab);
    const auto fd = oracles::finite_difference_gradient(
        [&](const ParameterVector& p) {
            return joint_loss(forward(p, utt.features, vocab), utt.transcript, utt.alignment, cfg);
        },
        w, 1e-5);
    CHECK(oracles::relative_error(lg.grad.values, fd) < 1e-4);
    for (std::size_t i = 0; i < w.size(); ++i) {
        CHECK(result.weights.values[i] ==
              Approx(w.values[i] - cfg.learning_rate * lg.grad.values[i]).margin(1e-12));
    }
}

TEST_CASE("local_train is deterministic given the seed") {
    Rng rng(6);
    const int vocab = 4;
    const int dim = 3;
    std::vector<Utterance> data;
    for (int i = 0; i < 7; ++i) data.push_back(random_utterance(rng, vocab, dim));
    const auto w = random_weights(rng, vocab, dim);
    LossConfig cfg;
    cfg.epochs = 3;
    cfg.batch_size = 2;

    const auto a = local_train(w, data, cfg, 321, vocab);
    const auto b = local_train(w, data, cfg, 321, vocab);
    CHECK(a.weights.values == b.weights.values);
    CHECK(a.mean_loss == b.mean_loss);

    CHECK_THROWS_AS(local_train(w, {}, cfg, 0, vocab), data_error);
}

TEST_CASE("greedy_decode collapse rules") {
    auto one_hot = [](const std::vector<int>& path, int vocab) {
        FramePosteriors post;
        post.vocab = vocab;
        post.probs.assign(path.size() * static_cast<std::size_t>(vocab), 0.0);
        for (std::size_t t = 0; t < path.size(); ++t)
            post.probs[t * static_cast<std::size_t>(vocab) + static_cast<std::size_t>(path[t])] = 1.0;
        return post;
    };

    CHECK(greedy_decode(one_hot({0, 1, 1, 0, 2}, 3)).tokens == std::vector<int>{1, 2});
    CHECK(greedy_decode(one_hot({0, 0, 0}, 3)).tokens.empty());
    CHECK(greedy_decode(one_hot({1, 1, 0, 1}, 3)).tokens == std::vector<int>{1, 1});

    // Ties break toward the lowest token id: uniform rows decode to blank.
    CHECK(greedy_decode(uniform_posteriors(4, 3)).tokens.empty());
}

TEST_CASE("greedy_decode is idempotent on collapsed paths") {
    Rng rng(8);
    for (int trial = 0; trial < 50; ++trial) {
        // A path with no blanks and no consecutive repeats.
        std::vector<int> path;
        int prev = 0;
        const int len = static_cast<int>(rng.uniform_int(1, 6));
        for (int i = 0; i < len; ++i) {
            int v;
            do {
                v = static_cast<int>(rng.uniform_int(1, 3));
            } while (v == prev);
            path.push_back(v);
            prev = v;
        }
        FramePosteriors post;
        post.vocab = 4;
        post.probs.assign(path.size() * 4, 0.0);
        for (std::size_t t = 0; t < path.size(); ++t)
            post.probs[t * 4 + static_cast<std::size_t>(path[t])] = 1.0;
        CHECK(greedy_decode(post).tokens == path);
    }
}
