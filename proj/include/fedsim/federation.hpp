#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <thread>
#include <vector>

#include "fedsim/errors.hpp"
#include "fedsim/metrics.hpp"
#include "fedsim/model.hpp"
#include "fedsim/rng.hpp"
#include "fedsim/types.hpp"

namespace fedsim {

enum class Strategy { fedavg, loss_softmax, wer_softmax };

inline std::string to_string(Strategy s) {
    switch (s) {
        case Strategy::fedavg: return "fedavg";
        case Strategy::loss_softmax: return "loss";
        case Strategy::wer_softmax: return "wer";
    }
    return "fedavg";
}

inline Strategy strategy_from_string(const std::string& s) {
    if (s == "fedavg") return Strategy::fedavg;
    if (s == "loss" || s == "loss_softmax") return Strategy::loss_softmax;
    if (s == "wer" || s == "wer_softmax") return Strategy::wer_softmax;
    throw config_error("unknown strategy: " + s);
}

struct FederationConfig {
    int rounds = 30;             // T
    int clients_per_round = 10;  // K
    int total_clients = 0;       // M; 0 = take from the client list
    double server_lr = 1.0;      // eta_s
    LossConfig local;            // eta_l, t_local, mu, batch size
    Strategy strategy = Strategy::fedavg;
    bool server_finetune = false;
    std::uint64_t seed = 0;
    int workers = 1;

    void validate() const {
        if (rounds < 1) throw config_error("FederationConfig: rounds must be >= 1");
        if (clients_per_round < 1) throw config_error("FederationConfig: clients_per_round must be >= 1");
        if (server_lr < 0.0) throw config_error("FederationConfig: server_lr must be >= 0");
        if (workers < 1) throw config_error("FederationConfig: workers must be >= 1");
        local.validate();
    }
};

struct ClientUpdate {
    int client_id = 0;
    ParameterVector new_weights;  // w_T^(k)
    long long n_k = 0;
    double train_loss = 0.0;  // L_k, mean joint loss of the final local epoch
    double val_wer = 0.0;     // wer_k on the client's local holdout
};

struct RoundRecord {
    int round_index = 0;
    std::vector<int> sampled_ids;  // survivors, sorted
    std::vector<int> skipped_ids;  // sampled but excluded (non-finite metrics)
    std::vector<double> alphas;    // one per surviving client, same order as sampled_ids
    double delta_norm = 0.0;
    ParameterVector global_weights_after;
    double centralized_val_wer = std::numeric_limits<double>::quiet_NaN();
    double mean_client_loss = std::numeric_limits<double>::quiet_NaN();
    bool empty_round = false;  // zero surviving clients; global model unchanged
};

// ---------------------------------------------------------------------------
// Client sampling: K distinct ids, uniform without replacement, returned
// sorted. Deterministic given (seed, round).
// ---------------------------------------------------------------------------

inline std::vector<int> sample_clients(int total, int k, int round, std::uint64_t seed) {
    if (k < 1 || k > total) throw config_error("sample_clients: need 1 <= K <= M");
    Rng rng(mix_seed(mix_seed(seed, seed_stream::kSampleClients), static_cast<std::uint64_t>(round)));
    auto picked = rng.sample_indices(static_cast<std::size_t>(total), static_cast<std::size_t>(k));
    std::vector<int> ids(picked.begin(), picked.end());
    std::sort(ids.begin(), ids.end());
    return ids;
}

// ---------------------------------------------------------------------------
// Weighting strategies. All return probability vectors.
// ---------------------------------------------------------------------------

inline std::vector<double> weights_fedavg(const std::vector<long long>& n) {
    if (n.empty()) throw data_error("weights_fedavg: empty input");
    long long total = 0;
    for (long long v : n) {
        if (v < 1) throw data_error("weights_fedavg: sample counts must be >= 1");
        total += v;
    }
    std::vector<double> alpha(n.size());
    for (std::size_t i = 0; i < n.size(); ++i)
        alpha[i] = static_cast<double>(n[i]) / static_cast<double>(total);
    return alpha;
}

namespace detail {

// Max-shifted softmax over raw scores.
inline std::vector<double> softmax(const std::vector<double>& scores) {
    double hi = -std::numeric_limits<double>::infinity();
    for (double s : scores) hi = std::max(hi, s);
    std::vector<double> alpha(scores.size());
    double denom = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        alpha[i] = std::exp(scores[i] - hi);
        denom += alpha[i];
    }
    for (auto& a : alpha) a /= denom;
    return alpha;
}

}  // namespace detail

// alpha_k = exp(-L_k) / sum_j exp(-L_j)
inline std::vector<double> weights_loss_softmax(const std::vector<double>& losses) {
    if (losses.empty()) throw data_error("weights_loss_softmax: empty input");
    std::vector<double> scores(losses.size());
    for (std::size_t i = 0; i < losses.size(); ++i) {
        if (!std::isfinite(losses[i])) throw data_error("weights_loss_softmax: non-finite loss");
        scores[i] = -losses[i];
    }
    return detail::softmax(scores);
}

// alpha_k = exp(1 - wer_k) / sum_j exp(1 - wer_j)
inline std::vector<double> weights_wer_softmax(const std::vector<double>& wers) {
    if (wers.empty()) throw data_error("weights_wer_softmax: empty input");
    std::vector<double> scores(wers.size());
    for (std::size_t i = 0; i < wers.size(); ++i) {
        if (!std::isfinite(wers[i]) || wers[i] < 0.0)
            throw data_error("weights_wer_softmax: WER must be finite and >= 0");
        scores[i] = 1.0 - wers[i];
    }
    return detail::softmax(scores);
}

// ---------------------------------------------------------------------------
// Aggregation. Pseudo-gradient over (w_prev - w_k) so eta_s = 1 recovers
// FedAvg; updates are sorted by client id first, making the result
// independent of arrival order.
// ---------------------------------------------------------------------------

inline std::pair<ParameterVector, RoundRecord> aggregate(const ParameterVector& prev_global,
                                                         std::vector<ClientUpdate> updates,
                                                         Strategy strategy, double server_lr) {
    if (updates.empty()) throw numeric_error("aggregate: empty round (no surviving clients)");
    std::sort(updates.begin(), updates.end(),
              [](const ClientUpdate& a, const ClientUpdate& b) { return a.client_id < b.client_id; });
    for (const auto& u : updates) {
        if (u.new_weights.size() != prev_global.size())
            throw protocol_error("aggregate: client weight length mismatch");
    }

    std::vector<double> alphas;
    switch (strategy) {
        case Strategy::fedavg: {
            std::vector<long long> n;
            n.reserve(updates.size());
            for (const auto& u : updates) n.push_back(u.n_k);
            alphas = weights_fedavg(n);
            break;
        }
        case Strategy::loss_softmax: {
            std::vector<double> losses;
            losses.reserve(updates.size());
            for (const auto& u : updates) losses.push_back(u.train_loss);
            alphas = weights_loss_softmax(losses);
            break;
        }
        case Strategy::wer_softmax: {
            std::vector<double> wers;
            wers.reserve(updates.size());
            for (const auto& u : updates) wers.push_back(u.val_wer);
            alphas = weights_wer_softmax(wers);
            break;
        }
    }

    std::vector<double> delta(prev_global.size(), 0.0);
    for (std::size_t k = 0; k < updates.size(); ++k) {
        const auto& w_k = updates[k].new_weights.values;
        for (std::size_t p = 0; p < delta.size(); ++p)
            delta[p] += alphas[k] * (prev_global.values[p] - w_k[p]);
    }

    RoundRecord rec;
    rec.alphas = alphas;
    rec.sampled_ids.reserve(updates.size());
    double loss_sum = 0.0;
    for (const auto& u : updates) {
        rec.sampled_ids.push_back(u.client_id);
        loss_sum += u.train_loss;
    }
    rec.mean_client_loss = loss_sum / static_cast<double>(updates.size());

    ParameterVector next = prev_global;
    double norm_sq = 0.0;
    for (std::size_t p = 0; p < delta.size(); ++p) {
        next.values[p] -= server_lr * delta[p];
        norm_sq += delta[p] * delta[p];
    }
    rec.delta_norm = std::sqrt(norm_sq);
    rec.global_weights_after = next;
    return {std::move(next), std::move(rec)};
}

// One mini-batch SGD step on the server's held-out batch, applied after the
// server update. The supplied dataset is the batch.
inline ParameterVector server_finetune(const ParameterVector& weights, const ClientDataset& held_out,
                                       const LossConfig& cfg, int vocab) {
    if (held_out.train.empty()) throw config_error("server_finetune: empty held-out set");
    LossConfig one_step = cfg;
    one_step.epochs = 1;
    one_step.batch_size = static_cast<int>(held_out.train.size());
    return local_train(weights, held_out.train, one_step, /*seed=*/0, vocab).weights;
}

// ---------------------------------------------------------------------------
// Experiment loop: sample -> local train (parallelizable) -> aggregate
// [-> server fine-tune] -> evaluate, for T rounds.
// ---------------------------------------------------------------------------

struct ExperimentResult {
    double initial_wer = std::numeric_limits<double>::quiet_NaN();
    std::vector<RoundRecord> rounds;
    ParameterVector final_weights;
};

namespace detail {

// Index-stable parallel for; results dropped into caller-owned slots, so the
// outcome is independent of scheduling.
template <typename Fn>
inline void parallel_for(std::size_t count, int workers, Fn&& fn) {
    if (workers <= 1 || count <= 1) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    const int n_threads = std::min<int>(workers, static_cast<int>(count));
    std::vector<std::thread> pool;
    pool.reserve(n_threads);
    for (int t = 0; t < n_threads; ++t) {
        pool.emplace_back([&] {
            for (;;) {
                const std::size_t i = next.fetch_add(1);
                if (i >= count) return;
                fn(i);
            }
        });
    }
    for (auto& th : pool) th.join();
}

}  // namespace detail

// Runs the four-step round protocol. All clients in a round share the same
// derived training seed, so identical shards produce identical updates.
// Clients with non-finite loss, WER or weights are excluded before weighting.
inline ExperimentResult run_experiment(const FederationConfig& cfg,
                                       const std::vector<ClientDataset>& clients,
                                       const ClientDataset& server_holdout,
                                       const std::vector<Utterance>& central_val,
                                       const ParameterVector& init, int vocab) {
    cfg.validate();
    if (clients.empty()) throw config_error("run_experiment: no clients");
    const int total = cfg.total_clients > 0 ? cfg.total_clients : static_cast<int>(clients.size());
    if (total != static_cast<int>(clients.size()))
        throw config_error("run_experiment: total_clients does not match client list");
    if (cfg.clients_per_round > total) throw config_error("run_experiment: K exceeds client count");
    if (cfg.server_finetune && server_holdout.train.empty())
        throw config_error("run_experiment: server_finetune enabled with empty holdout");
    if (central_val.empty()) throw config_error("run_experiment: empty centralized validation set");

    ExperimentResult result;
    result.final_weights = init;
    result.initial_wer = evaluate_wer(init, central_val, vocab).wer;

    for (int round = 1; round <= cfg.rounds; ++round) {
        const auto ids = sample_clients(total, cfg.clients_per_round, round, cfg.seed);
        const std::uint64_t train_seed =
            mix_seed(mix_seed(cfg.seed, seed_stream::kLocalTrain), static_cast<std::uint64_t>(round));

        std::vector<ClientUpdate> updates(ids.size());
        std::vector<char> ok(ids.size(), 0);
        const ParameterVector& global = result.final_weights;
        detail::parallel_for(ids.size(), cfg.workers, [&](std::size_t i) {
            const ClientDataset& ds = clients[ids[i]];
            if (ds.train.empty()) return;  // skipped, logged via skipped_ids
            auto trained = local_train(global, ds.train, cfg.local, train_seed, vocab);
            ClientUpdate u;
            u.client_id = ds.client_id;
            u.new_weights = std::move(trained.weights);
            u.n_k = ds.sample_count();
            u.train_loss = trained.mean_loss;
            // wer_k on the local holdout with the locally trained weights;
            // degenerate clients without a holdout fall back to their train split.
            const auto& eval_set = ds.local_test.empty() ? ds.train : ds.local_test;
            u.val_wer = evaluate_wer(u.new_weights, eval_set, vocab).wer;
            if (std::isfinite(u.train_loss) && std::isfinite(u.val_wer) && u.new_weights.all_finite())
                ok[i] = 1;
            updates[i] = std::move(u);
        });

        std::vector<ClientUpdate> surviving;
        std::vector<int> skipped;
        for (std::size_t i = 0; i < ids.size(); ++i) {
            if (ok[i])
                surviving.push_back(std::move(updates[i]));
            else
                skipped.push_back(ids[i]);
        }

        RoundRecord rec;
        if (surviving.empty()) {
            rec.empty_round = true;
            rec.global_weights_after = result.final_weights;
        } else {
            auto [next, filled] = aggregate(result.final_weights, std::move(surviving),
                                            cfg.strategy, cfg.server_lr);
            rec = std::move(filled);
            result.final_weights = std::move(next);
            if (cfg.server_finetune) {
                result.final_weights =
                    server_finetune(result.final_weights, server_holdout, cfg.local, vocab);
                rec.global_weights_after = result.final_weights;
            }
        }
        rec.round_index = round;
        rec.skipped_ids = std::move(skipped);
        rec.centralized_val_wer = evaluate_wer(result.final_weights, central_val, vocab).wer;
        result.rounds.push_back(std::move(rec));
    }
    return result;
}

}  // namespace fedsim
