#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "fedsim/errors.hpp"
#include "fedsim/rng.hpp"
#include "fedsim/types.hpp"

namespace fedsim {

enum class Scheme { cross_silo, per_speaker, speaker_pairs };

inline std::string to_string(Scheme s) {
    switch (s) {
        case Scheme::cross_silo: return "cross_silo";
        case Scheme::per_speaker: return "per_speaker";
        case Scheme::speaker_pairs: return "speaker_pairs";
    }
    return "per_speaker";
}

inline Scheme scheme_from_string(const std::string& s) {
    if (s == "cross_silo") return Scheme::cross_silo;
    if (s == "per_speaker") return Scheme::per_speaker;
    if (s == "speaker_pairs") return Scheme::speaker_pairs;
    throw config_error("unknown partition scheme: " + s);
}

struct ClientSlot {
    int client_id = 0;
    std::vector<std::string> speakers;
    std::vector<std::string> utterance_ids;  // full assignment
    std::vector<std::string> train_ids;      // filled by make_local_holdout
    std::vector<std::string> test_ids;
    bool no_local_test = false;
};

struct PartitionPlan {
    Scheme scheme = Scheme::per_speaker;
    double holdout_fraction = 0.0;
    int holdout_min = 0;
    std::vector<ClientSlot> clients;
};

namespace detail {

struct SpeakerGroup {
    std::string speaker;
    std::vector<std::string> utterance_ids;
};

// Groups utterances by speaker, preserving corpus order inside a group;
// groups ordered by first appearance.
inline std::vector<SpeakerGroup> group_by_speaker(const Corpus& corpus) {
    std::vector<SpeakerGroup> groups;
    std::map<std::string, std::size_t> index;
    for (const auto& utt : corpus.utterances) {
        auto it = index.find(utt.speaker);
        if (it == index.end()) {
            index.emplace(utt.speaker, groups.size());
            groups.push_back({utt.speaker, {utt.id}});
        } else {
            groups[it->second].utterance_ids.push_back(utt.id);
        }
    }
    return groups;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Warm-up split: whole speakers, sorted by descending sample count (seeded
// shuffle breaks ties), moved greedily until the warm-up share first reaches
// the target fraction. The federated side always keeps at least one speaker.
// ---------------------------------------------------------------------------

inline std::pair<Corpus, Corpus> split_warmup(const Corpus& corpus, double target_fraction,
                                              std::uint64_t seed) {
    if (target_fraction <= 0.0 || target_fraction >= 1.0)
        throw config_error("split_warmup: fraction must lie strictly inside (0,1)");
    auto groups = detail::group_by_speaker(corpus);
    if (groups.size() < 2) throw data_error("split_warmup: need at least two speakers");

    Rng rng(mix_seed(seed, seed_stream::kPartition));
    rng.shuffle(groups);
    std::stable_sort(groups.begin(), groups.end(),
                     [](const auto& a, const auto& b) {
                         return a.utterance_ids.size() > b.utterance_ids.size();
                     });

    const std::size_t total = corpus.utterances.size();
    const double target = target_fraction * static_cast<double>(total);
    std::vector<bool> in_warmup(groups.size(), false);
    std::size_t warm_count = 0;
    for (std::size_t i = 0; i < groups.size(); ++i) {
        if (static_cast<double>(warm_count) >= target) break;
        if (i + 1 == groups.size()) break;  // keep the federated side nonempty
        in_warmup[i] = true;
        warm_count += groups[i].utterance_ids.size();
    }

    std::map<std::string, bool> speaker_in_warmup;
    for (std::size_t i = 0; i < groups.size(); ++i) speaker_in_warmup[groups[i].speaker] = in_warmup[i];

    Corpus warm;
    Corpus fed;
    warm.vocab = fed.vocab = corpus.vocab;
    warm.feature_dim = fed.feature_dim = corpus.feature_dim;
    for (const auto& utt : corpus.utterances) {
        (speaker_in_warmup[utt.speaker] ? warm : fed).utterances.push_back(utt);
    }
    return {std::move(warm), std::move(fed)};
}

// ---------------------------------------------------------------------------
// Cross-silo: seeded speaker shuffle, then greedy assignment of each speaker
// to the currently smallest silo by sample count.
// ---------------------------------------------------------------------------

inline PartitionPlan make_cross_silo(const Corpus& corpus, int silos, std::uint64_t seed) {
    auto groups = detail::group_by_speaker(corpus);
    if (silos < 1 || static_cast<std::size_t>(silos) > groups.size())
        throw config_error("make_cross_silo: need 1 <= silos <= speaker count");

    Rng rng(mix_seed(seed, seed_stream::kPartition));
    rng.shuffle(groups);

    PartitionPlan plan;
    plan.scheme = Scheme::cross_silo;
    plan.clients.resize(silos);
    std::vector<std::size_t> load(silos, 0);
    for (int c = 0; c < silos; ++c) plan.clients[c].client_id = c;
    for (auto& group : groups) {
        int smallest = 0;
        for (int c = 1; c < silos; ++c) {
            if (load[c] < load[smallest]) smallest = c;
        }
        load[smallest] += group.utterance_ids.size();
        plan.clients[smallest].speakers.push_back(group.speaker);
        auto& ids = plan.clients[smallest].utterance_ids;
        ids.insert(ids.end(), group.utterance_ids.begin(), group.utterance_ids.end());
    }
    return plan;
}

// One client per speaker.
inline PartitionPlan make_per_speaker(const Corpus& corpus) {
    auto groups = detail::group_by_speaker(corpus);
    PartitionPlan plan;
    plan.scheme = Scheme::per_speaker;
    plan.clients.reserve(groups.size());
    int next_id = 0;
    for (auto& group : groups) {
        ClientSlot slot;
        slot.client_id = next_id++;
        slot.speakers = {group.speaker};
        slot.utterance_ids = std::move(group.utterance_ids);
        plan.clients.push_back(std::move(slot));
    }
    return plan;
}

// Seeded shuffle, consecutive pairs; an odd leftover speaker forms a
// singleton client.
inline PartitionPlan make_speaker_pairs(const Corpus& corpus, std::uint64_t seed) {
    auto groups = detail::group_by_speaker(corpus);
    if (groups.size() < 2) throw data_error("make_speaker_pairs: need at least two speakers");
    Rng rng(mix_seed(seed, seed_stream::kPartition));
    rng.shuffle(groups);

    PartitionPlan plan;
    plan.scheme = Scheme::speaker_pairs;
    int next_id = 0;
    for (std::size_t i = 0; i < groups.size(); i += 2) {
        ClientSlot slot;
        slot.client_id = next_id++;
        slot.speakers.push_back(groups[i].speaker);
        slot.utterance_ids = groups[i].utterance_ids;
        if (i + 1 < groups.size()) {
            slot.speakers.push_back(groups[i + 1].speaker);
            slot.utterance_ids.insert(slot.utterance_ids.end(), groups[i + 1].utterance_ids.begin(),
                                      groups[i + 1].utterance_ids.end());
        }
        plan.clients.push_back(std::move(slot));
    }
    return plan;
}

// ---------------------------------------------------------------------------
// Local test holdout: per client, test size = max(min_samples,
// round-half-up(fraction * n_k)); clients with n_k <= 2*min_samples keep
// everything in train and are flagged.
// ---------------------------------------------------------------------------

inline PartitionPlan make_local_holdout(PartitionPlan plan, double fraction, int min_samples,
                                        std::uint64_t seed) {
    if (fraction <= 0.0 || fraction >= 1.0)
        throw config_error("make_local_holdout: fraction must lie strictly inside (0,1)");
    if (min_samples < 1) throw config_error("make_local_holdout: min_samples must be >= 1");
    plan.holdout_fraction = fraction;
    plan.holdout_min = min_samples;
    for (auto& slot : plan.clients) {
        const auto n = static_cast<long long>(slot.utterance_ids.size());
        slot.train_ids.clear();
        slot.test_ids.clear();
        if (n <= 2LL * min_samples) {
            slot.train_ids = slot.utterance_ids;
            slot.no_local_test = true;
            continue;
        }
        slot.no_local_test = false;
        const long long by_fraction =
            static_cast<long long>(std::floor(fraction * static_cast<double>(n) + 0.5));
        const long long test_size = std::max<long long>(min_samples, by_fraction);
        Rng rng(mix_seed(mix_seed(seed, seed_stream::kHoldout),
                         static_cast<std::uint64_t>(slot.client_id)));
        auto test_picks = rng.sample_indices(static_cast<std::size_t>(n),
                                             static_cast<std::size_t>(test_size));
        std::vector<bool> is_test(static_cast<std::size_t>(n), false);
        for (auto idx : test_picks) is_test[idx] = true;
        for (std::size_t i = 0; i < slot.utterance_ids.size(); ++i) {
            (is_test[i] ? slot.test_ids : slot.train_ids).push_back(slot.utterance_ids[i]);
        }
    }
    return plan;
}

// ---------------------------------------------------------------------------
// Materialization: plan + corpus -> per-client datasets for the federation
// engine. Clients without holdout splits train on the full assignment.
// ---------------------------------------------------------------------------

inline std::vector<ClientDataset> materialize(const Corpus& corpus, const PartitionPlan& plan) {
    std::map<std::string, const Utterance*> by_id;
    for (const auto& utt : corpus.utterances) {
        if (!by_id.emplace(utt.id, &utt).second)
            throw data_error("materialize: duplicate utterance id " + utt.id);
    }
    auto lookup = [&](const std::string& id) -> const Utterance& {
        auto it = by_id.find(id);
        if (it == by_id.end()) throw data_error("materialize: unknown utterance id " + id);
        return *it->second;
    };

    std::vector<ClientDataset> out;
    out.reserve(plan.clients.size());
    for (const auto& slot : plan.clients) {
        ClientDataset ds;
        ds.client_id = slot.client_id;
        ds.no_local_test = slot.no_local_test;
        const auto& train_ids = slot.train_ids.empty() && slot.test_ids.empty()
                                    ? slot.utterance_ids
                                    : slot.train_ids;
        for (const auto& id : train_ids) ds.train.push_back(lookup(id));
        for (const auto& id : slot.test_ids) ds.local_test.push_back(lookup(id));
        out.push_back(std::move(ds));
    }
    return out;
}

}  // namespace fedsim
