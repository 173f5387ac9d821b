// fedsim: experiment runner for federated ASR-style simulations.
// Subcommands: generate, warmup, federate, analyze, partition.
// Exit codes: 0 success, 2 config error, 3 data error, 4 runtime error.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "fedsim/errors.hpp"
#include "fedsim/federation.hpp"
#include "fedsim/heterogeneity.hpp"
#include "fedsim/io.hpp"
#include "fedsim/log.hpp"
#include "fedsim/metrics.hpp"
#include "fedsim/model.hpp"
#include "fedsim/partition.hpp"
#include "fedsim/rng.hpp"
#include "fedsim/synthcorpus.hpp"
#include "fedsim/types.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace fedsim;

namespace {

constexpr const char* kToolVersion = "0.1.0";

// ---------------------------------------------------------------------------
// Config plumbing
// ---------------------------------------------------------------------------

struct CommonOpts {
    std::string config_path;
    std::string out_dir;           // --out overrides config "out"
    std::optional<long long> seed;  // --seed overrides config "seed"
    int workers = 0;                // --workers; 0 = config / default 1
};

json load_config_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw config_error("cannot open config: " + path);
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw config_error("config " + path + " is not valid JSON: " + e.what());
    }
}

template <typename T>
T require(const json& cfg, const std::string& field) {
    if (!cfg.contains(field)) throw config_error("config missing required field: " + field);
    try {
        return cfg.at(field).get<T>();
    } catch (const json::exception&) {
        throw config_error("config field has wrong type: " + field);
    }
}

template <typename T>
T get_or(const json& cfg, const std::string& field, T fallback) {
    if (!cfg.contains(field) || cfg.at(field).is_null()) return fallback;
    try {
        return cfg.at(field).get<T>();
    } catch (const json::exception&) {
        throw config_error("config field has wrong type: " + field);
    }
}

IntRange int_range(const json& cfg, const std::string& field, IntRange fallback) {
    if (!cfg.contains(field)) return fallback;
    const auto v = cfg.at(field);
    if (!v.is_array() || v.size() != 2) throw config_error(field + " must be a [lo, hi] pair");
    return {v[0].get<int>(), v[1].get<int>()};
}

RealRange real_range(const json& cfg, const std::string& field, RealRange fallback) {
    if (!cfg.contains(field)) return fallback;
    const auto v = cfg.at(field);
    if (!v.is_array() || v.size() != 2) throw config_error(field + " must be a [lo, hi] pair");
    return {v[0].get<double>(), v[1].get<double>()};
}

json range_json(IntRange r) { return json::array({r.lo, r.hi}); }
json range_json(RealRange r) { return json::array({r.lo, r.hi}); }

// Paths in configs are relative to the config file itself.
fs::path resolve_path(const std::string& value, const fs::path& base) {
    fs::path p(value);
    if (p.is_absolute()) return p;
    return base / p;
}

fs::path pick_out_dir(const json& cfg, const CommonOpts& opts) {
    std::string out = opts.out_dir;
    if (out.empty()) out = get_or<std::string>(cfg, "out", "");
    if (out.empty()) throw config_error("config missing required field: out (or pass --out)");
    fs::create_directories(out);
    return fs::path(out);
}

std::uint64_t pick_seed(const json& cfg, const CommonOpts& opts) {
    if (opts.seed.has_value()) return static_cast<std::uint64_t>(*opts.seed);
    return static_cast<std::uint64_t>(get_or<long long>(cfg, "seed", 0));
}

LossConfig loss_config_from(const json& cfg) {
    LossConfig out;
    out.mu = get_or<double>(cfg, "mu", out.mu);
    out.learning_rate = get_or<double>(cfg, "learning_rate", out.learning_rate);
    out.epochs = get_or<int>(cfg, "epochs", out.epochs);
    out.batch_size = get_or<int>(cfg, "batch_size", out.batch_size);
    out.validate();
    return out;
}

json loss_config_json(const LossConfig& cfg) {
    return json{{"mu", cfg.mu},
                {"learning_rate", cfg.learning_rate},
                {"epochs", cfg.epochs},
                {"batch_size", cfg.batch_size}};
}

void write_json_file(const fs::path& path, const json& doc) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw data_error("cannot open for writing: " + path.string());
    out << doc.dump(2) << '\n';
}

std::string fmt_or_empty(double v) { return std::isfinite(v) ? format_double(v) : std::string(); }

// ---------------------------------------------------------------------------
// generate
// ---------------------------------------------------------------------------

CorpusSpec corpus_spec_from(const json& cfg, std::uint64_t seed) {
    CorpusSpec spec;
    spec.speakers = require<int>(cfg, "speakers");
    spec.vocab_size = get_or<int>(cfg, "vocab_size", spec.vocab_size);
    spec.feature_dim = get_or<int>(cfg, "feature_dim", spec.feature_dim);
    if (cfg.contains("samples_law")) {
        const auto& law = cfg.at("samples_law");
        const auto type = require<std::string>(law, "type");
        if (type == "uniform") {
            spec.samples_law.kind = SamplesLaw::Kind::uniform;
        } else if (type == "powerlaw") {
            spec.samples_law.kind = SamplesLaw::Kind::powerlaw;
            spec.samples_law.exponent = get_or<double>(law, "exponent", 1.5);
        } else {
            throw config_error("samples_law.type must be uniform or powerlaw");
        }
        spec.samples_law.lo = require<int>(law, "lo");
        spec.samples_law.hi = require<int>(law, "hi");
    }
    spec.frames_per_token = int_range(cfg, "frames_per_token", spec.frames_per_token);
    spec.tokens_per_utterance = int_range(cfg, "tokens_per_utterance", spec.tokens_per_utterance);
    spec.per_speaker_noise_std = real_range(cfg, "per_speaker_noise_std", spec.per_speaker_noise_std);
    spec.per_speaker_gain_db = real_range(cfg, "per_speaker_gain_db", spec.per_speaker_gain_db);
    spec.token_skew = get_or<double>(cfg, "token_skew", spec.token_skew);
    spec.noisy_client_fraction = get_or<double>(cfg, "noisy_client_fraction", spec.noisy_client_fraction);
    spec.noisy_client_noise_multiplier =
        get_or<double>(cfg, "noisy_client_noise_multiplier", spec.noisy_client_noise_multiplier);
    spec.prototype_scale = get_or<double>(cfg, "prototype_scale", spec.prototype_scale);
    spec.seed = seed;
    spec.validate();
    return spec;
}

json corpus_spec_json(const CorpusSpec& spec) {
    json law{{"type", spec.samples_law.kind == SamplesLaw::Kind::uniform ? "uniform" : "powerlaw"},
             {"lo", spec.samples_law.lo},
             {"hi", spec.samples_law.hi}};
    if (spec.samples_law.kind == SamplesLaw::Kind::powerlaw) law["exponent"] = spec.samples_law.exponent;
    return json{{"speakers", spec.speakers},
                {"vocab_size", spec.vocab_size},
                {"feature_dim", spec.feature_dim},
                {"samples_law", law},
                {"frames_per_token", range_json(spec.frames_per_token)},
                {"tokens_per_utterance", range_json(spec.tokens_per_utterance)},
                {"per_speaker_noise_std", range_json(spec.per_speaker_noise_std)},
                {"per_speaker_gain_db", range_json(spec.per_speaker_gain_db)},
                {"token_skew", spec.token_skew},
                {"noisy_client_fraction", spec.noisy_client_fraction},
                {"noisy_client_noise_multiplier", spec.noisy_client_noise_multiplier},
                {"prototype_scale", spec.prototype_scale},
                {"seed", spec.seed}};
}

void apply_audio_preset(AudioSpec& spec, const std::string& preset) {
    if (preset == "cv_like") {
        // Wide per-speaker spreads plus strong within-speaker variation.
        spec.snr_db = {9.0, 30.0};
        spec.snr_jitter_db = 5.0;
        spec.gain_db = {-26.0, -2.0};
        spec.gain_jitter_db = 5.0;
        spec.f0_hz = {90.0, 260.0};
        spec.f0_jitter_hz = 20.0;
        spec.voiced_fraction = {0.5, 0.95};
        spec.voiced_jitter = 0.15;
    } else if (preset == "ls_like") {
        // Narrow, studio-like spreads; speakers stay individually stable.
        spec.snr_db = {16.0, 28.0};
        spec.snr_jitter_db = 0.5;
        spec.gain_db = {-16.0, -6.0};
        spec.gain_jitter_db = 0.5;
        spec.f0_hz = {100.0, 250.0};
        spec.f0_jitter_hz = 2.0;
        spec.voiced_fraction = {0.55, 0.95};
        spec.voiced_jitter = 0.02;
    } else {
        throw config_error("unknown audio preset: " + preset);
    }
}

AudioSpec audio_spec_from(const json& cfg, const json& audio, std::uint64_t seed) {
    AudioSpec spec;
    spec.speakers = require<int>(cfg, "speakers");
    if (audio.contains("preset")) apply_audio_preset(spec, require<std::string>(audio, "preset"));
    spec.utterances_per_speaker =
        int_range(audio, "utterances_per_speaker", spec.utterances_per_speaker);
    spec.sample_rate = get_or<int>(audio, "sample_rate", spec.sample_rate);
    spec.duration_s = real_range(audio, "duration_s", spec.duration_s);
    spec.f0_hz = real_range(audio, "f0_hz", spec.f0_hz);
    spec.f0_jitter_hz = get_or<double>(audio, "f0_jitter_hz", spec.f0_jitter_hz);
    spec.snr_db = real_range(audio, "snr_db", spec.snr_db);
    spec.snr_jitter_db = get_or<double>(audio, "snr_jitter_db", spec.snr_jitter_db);
    spec.gain_db = real_range(audio, "gain_db", spec.gain_db);
    spec.gain_jitter_db = get_or<double>(audio, "gain_jitter_db", spec.gain_jitter_db);
    spec.harmonics = get_or<int>(audio, "harmonics", spec.harmonics);
    spec.voiced_fraction = real_range(audio, "voiced_fraction", spec.voiced_fraction);
    spec.voiced_jitter = get_or<double>(audio, "voiced_jitter", spec.voiced_jitter);
    spec.seed = seed;
    spec.validate();
    return spec;
}

void write_histogram_csv(const fs::path& path, const Corpus& corpus, bool echo_stdout) {
    const auto edges = default_histogram_edges();
    const auto hist = sample_count_histogram(corpus, edges);
    CsvWriter csv(path);
    std::vector<std::vector<std::string>> rows;
    rows.push_back({"bin", "clients"});
    for (std::size_t i = 0; i < hist.size(); ++i) {
        std::string label = i + 1 < edges.size()
                                ? std::to_string(edges[i]) + "-" + std::to_string(edges[i + 1])
                                : std::to_string(edges[i]) + "+";
        rows.push_back({label, std::to_string(hist[i])});
    }
    for (const auto& row : rows) csv.row(row);
    if (echo_stdout) {
        for (const auto& row : rows) {
            for (std::size_t i = 0; i < row.size(); ++i)
                std::cout << (i ? "," : "") << row[i];
            std::cout << '\n';
        }
    }
}

int cmd_generate(const CommonOpts& opts) {
    const json cfg = load_config_file(opts.config_path);
    const fs::path out = pick_out_dir(cfg, opts);
    const std::uint64_t seed = pick_seed(cfg, opts);
    const std::string kind = get_or<std::string>(cfg, "kind", "features");

    json manifest;
    manifest["tool_version"] = kToolVersion;
    manifest["command"] = "generate";

    if (kind == "audio") {
        const json audio = cfg.contains("audio") ? cfg.at("audio") : json::object();
        const auto spec = audio_spec_from(cfg, audio, seed);
        const auto corpus = generate_audio(spec);
        write_audio_corpus(out / "corpus.jsonl", corpus, out / "wav");

        Corpus counts_only;
        for (const auto& utt : corpus.utterances) {
            Utterance u;
            u.id = utt.id;
            u.speaker = utt.speaker;
            counts_only.utterances.push_back(std::move(u));
        }
        write_histogram_csv(out / "sample_histogram.csv", counts_only, true);
        log_info("generate: %zu audio utterances under %s", corpus.utterances.size(),
                 out.string().c_str());
        manifest["kind"] = "audio";
        manifest["utterances"] = corpus.utterances.size();
        manifest["config"] = cfg;
        manifest["config"]["seed"] = seed;
    } else if (kind == "features") {
        const auto spec = corpus_spec_from(cfg, seed);
        const auto generated = generate(spec);
        write_corpus_manifest(out / "corpus.jsonl", generated.corpus, out / "features");
        write_histogram_csv(out / "sample_histogram.csv", generated.corpus, true);

        const int val_speakers = get_or<int>(cfg, "val_speakers", 0);
        if (val_speakers > 0) {
            // New speakers drawn from the same population and feature
            // geometry; noisy-client corruption is a training-side effect.
            CorpusSpec val_spec = spec;
            val_spec.speakers = val_speakers;
            val_spec.noisy_client_fraction = 0.0;
            val_spec.prototype_seed = spec.prototype_seed.value_or(spec.seed);
            val_spec.seed = mix_seed(seed, 0x7A1D);
            const auto val = generate(val_spec, "v");
            write_corpus_manifest(out / "corpus_val.jsonl", val.corpus, out / "features_val");
        }
        log_info("generate: %zu utterances (%d speakers) under %s", generated.corpus.utterances.size(),
                 spec.speakers, out.string().c_str());
        manifest["kind"] = "features";
        manifest["utterances"] = generated.corpus.utterances.size();
        manifest["config"] = corpus_spec_json(spec);
        manifest["config"]["kind"] = "features";
        manifest["config"]["val_speakers"] = val_speakers;
    } else {
        throw config_error("kind must be features or audio");
    }
    write_json_file(out / "generate_manifest.json", manifest);
    return 0;
}

// ---------------------------------------------------------------------------
// warmup
// ---------------------------------------------------------------------------

// Relative feature path from a new manifest directory to existing files.
std::map<std::string, std::string> feature_paths_relative_to(const fs::path& src_manifest,
                                                             const fs::path& dst_dir) {
    const auto entries = read_manifest(src_manifest);
    std::map<std::string, std::string> out;
    const fs::path src_base = src_manifest.parent_path();
    for (const auto& entry : entries) {
        if (entry.features.empty()) continue;
        const fs::path abs = fs::weakly_canonical(src_base / entry.features);
        out[entry.utterance_id] = fs::relative(abs, fs::weakly_canonical(dst_dir)).generic_string();
    }
    return out;
}

std::vector<std::string> utterance_ids(const Corpus& corpus) {
    std::vector<std::string> ids;
    ids.reserve(corpus.utterances.size());
    for (const auto& utt : corpus.utterances) ids.push_back(utt.id);
    return ids;
}

int cmd_warmup(const CommonOpts& opts) {
    const json cfg = load_config_file(opts.config_path);
    const fs::path cfg_base = fs::path(opts.config_path).parent_path();
    const fs::path out = pick_out_dir(cfg, opts);
    const std::uint64_t seed = pick_seed(cfg, opts);

    const fs::path corpus_path = resolve_path(require<std::string>(cfg, "corpus"), cfg_base);
    const double fraction = get_or<double>(cfg, "fraction", 0.5);
    const double eval_fraction = get_or<double>(cfg, "eval_fraction", 0.1);
    const int holdout_size = get_or<int>(cfg, "server_holdout_size", 32);
    const LossConfig training =
        cfg.contains("training") ? loss_config_from(cfg.at("training")) : LossConfig{};

    const Corpus corpus = load_feature_corpus(corpus_path);
    auto [warm, federated] = split_warmup(corpus, fraction, seed);
    log_info("warmup: %zu utterances in warm-up, %zu left federated", warm.utterances.size(),
             federated.utterances.size());

    // Seeded eval slice inside the warm-up half.
    Rng rng(mix_seed(seed, 0xE7A1));
    auto ids = utterance_ids(warm);
    rng.shuffle(ids);
    const std::size_t eval_count = std::min(
        warm.utterances.size() - 1,
        std::max<std::size_t>(1, static_cast<std::size_t>(
                                     std::floor(eval_fraction * static_cast<double>(ids.size()) + 0.5))));
    const std::set<std::string> eval_ids(ids.begin(), ids.begin() + static_cast<long>(eval_count));
    std::vector<Utterance> train_set;
    std::vector<Utterance> eval_set;
    for (const auto& utt : warm.utterances)
        (eval_ids.count(utt.id) ? eval_set : train_set).push_back(utt);

    ParameterVector init;
    init.values.assign(parameter_count(corpus.vocab, corpus.feature_dim), 0.0);
    const double untrained_wer = evaluate_wer(init, eval_set, corpus.vocab).wer;
    const auto trained = local_train(init, train_set, training, mix_seed(seed, 0x7A41), corpus.vocab);
    const double eval_wer = evaluate_wer(trained.weights, eval_set, corpus.vocab).wer;
    const double train_wer = evaluate_wer(trained.weights, train_set, corpus.vocab).wer;
    log_info("warmup: eval WER %.4f (untrained %.4f)", eval_wer, untrained_wer);

    write_weights(out / "warmup_weights.bin", trained.weights, corpus.vocab, corpus.feature_dim);

    const auto feature_paths = feature_paths_relative_to(corpus_path, out);
    write_manifest_subset(out / "federated.jsonl", corpus, utterance_ids(federated), feature_paths);

    // Server fine-tune batch: a fixed seeded sample of warm-up utterances.
    auto holdout_ids = utterance_ids(warm);
    Rng holdout_rng(mix_seed(seed, seed_stream::kHoldout));
    holdout_rng.shuffle(holdout_ids);
    holdout_ids.resize(std::min<std::size_t>(holdout_ids.size(), static_cast<std::size_t>(holdout_size)));
    std::sort(holdout_ids.begin(), holdout_ids.end());
    write_manifest_subset(out / "server_holdout.jsonl", corpus, holdout_ids, feature_paths);

    {
        CsvWriter csv(out / "warmup_report.csv");
        csv.row({"stage", "utterances", "wer"});
        csv.row({"untrained_eval", std::to_string(eval_set.size()), format_double(untrained_wer)});
        csv.row({"trained_eval", std::to_string(eval_set.size()), format_double(eval_wer)});
        csv.row({"trained_train", std::to_string(train_set.size()), format_double(train_wer)});
    }

    json manifest;
    manifest["tool_version"] = kToolVersion;
    manifest["command"] = "warmup";
    manifest["config"] = {{"corpus", fs::weakly_canonical(corpus_path).string()},
                          {"fraction", fraction},
                          {"eval_fraction", eval_fraction},
                          {"server_holdout_size", holdout_size},
                          {"training", loss_config_json(training)},
                          {"seed", seed}};
    manifest["results"] = {{"untrained_eval_wer", untrained_wer},
                           {"trained_eval_wer", eval_wer},
                           {"trained_train_wer", train_wer},
                           {"warmup_utterances", warm.utterances.size()},
                           {"federated_utterances", federated.utterances.size()}};
    write_json_file(out / "warmup_manifest.json", manifest);
    return 0;
}

// ---------------------------------------------------------------------------
// partition
// ---------------------------------------------------------------------------

json plan_json(const PartitionPlan& plan) {
    json clients = json::array();
    for (const auto& slot : plan.clients) {
        clients.push_back({{"client_id", slot.client_id},
                           {"speakers", slot.speakers},
                           {"utterances", slot.utterance_ids},
                           {"train", slot.train_ids},
                           {"test", slot.test_ids},
                           {"no_local_test", slot.no_local_test}});
    }
    return json{{"scheme", to_string(plan.scheme)},
                {"holdout_fraction", plan.holdout_fraction},
                {"holdout_min", plan.holdout_min},
                {"clients", clients}};
}

PartitionPlan build_plan(const Corpus& corpus, Scheme scheme, int silos, double holdout_fraction,
                         int holdout_min, std::uint64_t seed) {
    PartitionPlan plan;
    switch (scheme) {
        case Scheme::cross_silo: plan = make_cross_silo(corpus, silos, seed); break;
        case Scheme::per_speaker: plan = make_per_speaker(corpus); break;
        case Scheme::speaker_pairs: plan = make_speaker_pairs(corpus, seed); break;
    }
    return make_local_holdout(std::move(plan), holdout_fraction, holdout_min, seed);
}

int cmd_partition(const CommonOpts& opts, const std::string& scheme_flag) {
    const json cfg = load_config_file(opts.config_path);
    const fs::path cfg_base = fs::path(opts.config_path).parent_path();
    const fs::path out = pick_out_dir(cfg, opts);
    const std::uint64_t seed = pick_seed(cfg, opts);

    const fs::path corpus_path = resolve_path(require<std::string>(cfg, "corpus"), cfg_base);
    const std::string scheme_name =
        !scheme_flag.empty() ? scheme_flag : require<std::string>(cfg, "scheme");
    const Scheme scheme = scheme_from_string(scheme_name);
    const int silos = get_or<int>(cfg, "silos", 10);
    const double holdout_fraction = get_or<double>(cfg, "holdout_fraction", 0.1);
    const int holdout_min = get_or<int>(cfg, "holdout_min", 2);

    const Corpus corpus = load_feature_corpus(corpus_path);
    const auto plan = build_plan(corpus, scheme, silos, holdout_fraction, holdout_min, seed);
    write_json_file(out / "plan.json", plan_json(plan));
    log_info("partition: %zu clients under scheme %s", plan.clients.size(), scheme_name.c_str());
    return 0;
}

// ---------------------------------------------------------------------------
// federate
// ---------------------------------------------------------------------------

struct FederateConfig {
    fs::path corpus;
    fs::path val_corpus;
    fs::path init_weights;  // empty = scratch
    double scratch_init_std = 0.01;
    Scheme scheme = Scheme::per_speaker;
    int silos = 10;
    double holdout_fraction = 0.1;
    int holdout_min = 2;
    Strategy strategy = Strategy::fedavg;
    int rounds = 30;
    int clients_per_round = 0;  // 0 = all clients
    double server_lr = 1.0;
    LossConfig local;
    bool server_finetune = false;
    fs::path server_holdout;
    std::uint64_t seed = 0;
    int workers = 1;
};

FederateConfig federate_config_from(const json& raw, const fs::path& base, const CommonOpts& opts,
                                    const std::string& strategy_flag, const std::string& scheme_flag,
                                    int clients_per_round_flag) {
    // A previously written experiment manifest nests the config; accept both.
    const json& cfg = raw.contains("config") ? raw.at("config") : raw;

    FederateConfig out;
    out.corpus = resolve_path(require<std::string>(cfg, "corpus"), base);
    out.val_corpus = resolve_path(require<std::string>(cfg, "val_corpus"), base);
    const std::string init = get_or<std::string>(cfg, "init_weights", "");
    if (!init.empty()) out.init_weights = resolve_path(init, base);
    out.scratch_init_std = get_or<double>(cfg, "scratch_init_std", out.scratch_init_std);
    out.scheme = scheme_from_string(
        !scheme_flag.empty() ? scheme_flag : get_or<std::string>(cfg, "scheme", "per_speaker"));
    out.silos = get_or<int>(cfg, "silos", out.silos);
    out.holdout_fraction = get_or<double>(cfg, "holdout_fraction", out.holdout_fraction);
    out.holdout_min = get_or<int>(cfg, "holdout_min", out.holdout_min);
    out.strategy = strategy_from_string(
        !strategy_flag.empty() ? strategy_flag : get_or<std::string>(cfg, "strategy", "fedavg"));
    out.rounds = get_or<int>(cfg, "rounds", out.rounds);
    out.clients_per_round = clients_per_round_flag > 0 ? clients_per_round_flag
                                                       : get_or<int>(cfg, "clients_per_round", 0);
    out.server_lr = get_or<double>(cfg, "server_lr", out.server_lr);
    if (cfg.contains("local")) out.local = loss_config_from(cfg.at("local"));
    out.server_finetune = get_or<bool>(cfg, "server_finetune", false);
    const std::string holdout = get_or<std::string>(cfg, "server_holdout", "");
    if (!holdout.empty()) out.server_holdout = resolve_path(holdout, base);
    out.seed = opts.seed.has_value() ? static_cast<std::uint64_t>(*opts.seed)
                                     : static_cast<std::uint64_t>(get_or<long long>(cfg, "seed", 0));
    out.workers = opts.workers > 0 ? opts.workers : get_or<int>(cfg, "workers", 1);
    return out;
}

json federate_config_json(const FederateConfig& cfg) {
    return json{{"corpus", fs::weakly_canonical(cfg.corpus).string()},
                {"val_corpus", fs::weakly_canonical(cfg.val_corpus).string()},
                {"init_weights",
                 cfg.init_weights.empty() ? json() : json(fs::weakly_canonical(cfg.init_weights).string())},
                {"scratch_init_std", cfg.scratch_init_std},
                {"scheme", to_string(cfg.scheme)},
                {"silos", cfg.silos},
                {"holdout_fraction", cfg.holdout_fraction},
                {"holdout_min", cfg.holdout_min},
                {"strategy", to_string(cfg.strategy)},
                {"rounds", cfg.rounds},
                {"clients_per_round", cfg.clients_per_round},
                {"server_lr", cfg.server_lr},
                {"local", loss_config_json(cfg.local)},
                {"server_finetune", cfg.server_finetune},
                {"server_holdout",
                 cfg.server_holdout.empty() ? json()
                                            : json(fs::weakly_canonical(cfg.server_holdout).string())},
                {"seed", cfg.seed},
                {"workers", cfg.workers}};
}

int cmd_federate(const CommonOpts& opts, const std::string& strategy_flag,
                 const std::string& scheme_flag, int clients_per_round_flag) {
    const json raw = load_config_file(opts.config_path);
    const fs::path cfg_base = fs::path(opts.config_path).parent_path();
    const auto cfg = federate_config_from(raw, cfg_base, opts, strategy_flag, scheme_flag,
                                          clients_per_round_flag);
    const json& out_source = raw.contains("config") ? raw.at("config") : raw;
    const fs::path out = pick_out_dir(out_source, opts);

    const Corpus corpus = load_feature_corpus(cfg.corpus);
    const Corpus val_corpus = load_feature_corpus(cfg.val_corpus);
    if (val_corpus.vocab != corpus.vocab || val_corpus.feature_dim != corpus.feature_dim)
        throw protocol_error("validation corpus shape does not match the training corpus");

    const auto plan = build_plan(corpus, cfg.scheme, cfg.silos, cfg.holdout_fraction,
                                 cfg.holdout_min, cfg.seed);
    const auto clients = materialize(corpus, plan);

    ParameterVector init;
    if (!cfg.init_weights.empty()) {
        const auto loaded = load_weights(cfg.init_weights);
        if (loaded.vocab != corpus.vocab || loaded.feature_dim != corpus.feature_dim)
            throw protocol_error("initial weights shape does not match the corpus");
        init = loaded.weights;
    } else {
        // From-scratch mode: seeded random init (expected to struggle).
        init.values.resize(parameter_count(corpus.vocab, corpus.feature_dim));
        Rng rng(mix_seed(cfg.seed, 0x1217));
        for (auto& v : init.values) v = cfg.scratch_init_std * rng.normal();
    }

    ClientDataset server_holdout;
    if (!cfg.server_holdout.empty()) {
        const Corpus holdout_corpus = load_feature_corpus(cfg.server_holdout);
        server_holdout.train = holdout_corpus.utterances;
    }

    FederationConfig fed;
    fed.rounds = cfg.rounds;
    // Default K: every silo each round for cross-silo, otherwise up to 100
    // sampled devices.
    const int total_clients = static_cast<int>(clients.size());
    fed.clients_per_round = cfg.clients_per_round > 0
                                ? cfg.clients_per_round
                                : (cfg.scheme == Scheme::cross_silo ? total_clients
                                                                    : std::min(100, total_clients));
    fed.server_lr = cfg.server_lr;
    fed.local = cfg.local;
    fed.strategy = cfg.strategy;
    fed.server_finetune = cfg.server_finetune;
    fed.seed = cfg.seed;
    fed.workers = cfg.workers;

    log_info("federate: %zu clients, K=%d, T=%d, strategy=%s", clients.size(),
             fed.clients_per_round, fed.rounds, to_string(fed.strategy).c_str());
    const auto result =
        run_experiment(fed, clients, server_holdout, val_corpus.utterances, init, corpus.vocab);

    {
        CsvWriter csv(out / "rounds.csv");
        csv.row({"round", "strategy", "K", "centralized_wer", "mean_client_loss", "delta_norm"});
        csv.row({"0", to_string(fed.strategy), std::to_string(fed.clients_per_round),
                 format_double(result.initial_wer), "", ""});
        for (const auto& rec : result.rounds) {
            csv.row({std::to_string(rec.round_index), to_string(fed.strategy),
                     std::to_string(fed.clients_per_round), format_double(rec.centralized_val_wer),
                     fmt_or_empty(rec.mean_client_loss),
                     rec.empty_round ? "" : format_double(rec.delta_norm)});
        }
    }

    // Final per-client WER on the local holdouts, sorted by WER.
    struct ClientRow {
        int client_id;
        std::size_t n_test;
        WerScore score;
    };
    std::vector<ClientRow> rows;
    int skipped_clients = 0;
    for (const auto& client : clients) {
        if (client.local_test.empty()) {
            ++skipped_clients;
            continue;
        }
        rows.push_back({client.client_id, client.local_test.size(),
                        evaluate_wer(result.final_weights, client.local_test, corpus.vocab)});
    }
    std::sort(rows.begin(), rows.end(), [](const ClientRow& a, const ClientRow& b) {
        if (a.score.wer != b.score.wer) return a.score.wer < b.score.wer;
        return a.client_id < b.client_id;
    });
    {
        CsvWriter csv(out / "per_client_wer.csv");
        csv.row({"client_id", "n_test", "errors", "ref_len", "wer"});
        for (const auto& row : rows) {
            csv.row({std::to_string(row.client_id), std::to_string(row.n_test),
                     std::to_string(row.score.errors), std::to_string(row.score.ref_len),
                     format_double(row.score.wer)});
        }
    }

    write_weights(out / "final_weights.bin", result.final_weights, corpus.vocab, corpus.feature_dim);

    json manifest;
    manifest["tool_version"] = kToolVersion;
    manifest["command"] = "federate";
    manifest["config"] = federate_config_json(cfg);
    json round_rows = json::array();
    for (const auto& rec : result.rounds) {
        round_rows.push_back({{"round", rec.round_index},
                              {"centralized_wer", rec.centralized_val_wer},
                              {"delta_norm", rec.delta_norm},
                              {"clients", rec.sampled_ids.size()},
                              {"skipped", rec.skipped_ids.size()},
                              {"empty", rec.empty_round}});
    }
    manifest["results"] = {{"initial_wer", result.initial_wer},
                           {"final_wer", result.rounds.back().centralized_val_wer},
                           {"rounds", round_rows},
                           {"clients_without_local_test", skipped_clients}};
    write_json_file(out / "manifest.json", manifest);
    log_info("federate: final WER %.4f (initial %.4f)",
             result.rounds.back().centralized_val_wer, result.initial_wer);
    return 0;
}

// ---------------------------------------------------------------------------
// analyze
// ---------------------------------------------------------------------------

struct ProfiledCorpus {
    std::vector<UtteranceProfile> profiles;
    std::vector<std::string> utterance_ids;
    std::vector<std::string> client_ids;
    std::vector<std::string> skipped;  // unreadable files
    std::size_t total = 0;
};

// Feature corpora are profiled over their flattened value stream at a nominal
// 8 kHz rate; audio corpora from the real waveform.
ProfiledCorpus profile_corpus(const fs::path& manifest_path, const ProfileParams& params) {
    const auto entries = read_manifest(manifest_path);
    if (entries.empty()) throw data_error("empty manifest: " + manifest_path.string());
    const fs::path base = manifest_path.parent_path();
    ProfiledCorpus out;
    out.total = entries.size();
    for (const auto& entry : entries) {
        try {
            Waveform wave;
            if (!entry.wav.empty()) {
                wave = read_wav(base / entry.wav);
            } else if (!entry.features.empty()) {
                const auto m = read_f32_matrix(base / entry.features);
                wave.sample_rate = 8000;
                wave.samples = m.values;
                const double peak = std::max(
                    1.0, std::abs(*std::max_element(
                             wave.samples.begin(), wave.samples.end(),
                             [](double a, double b) { return std::abs(a) < std::abs(b); })));
                for (auto& s : wave.samples) s /= peak;
                if (wave.samples.size() < 300) {
                    // Too short for the default framing; tile the stream.
                    auto copy = wave.samples;
                    while (wave.samples.size() < 600)
                        wave.samples.insert(wave.samples.end(), copy.begin(), copy.end());
                }
            } else {
                throw data_error("manifest row has neither wav nor features");
            }
            out.profiles.push_back(profile_waveform(wave, params));
            out.utterance_ids.push_back(entry.utterance_id);
            out.client_ids.push_back(entry.speaker_id);
        } catch (const std::exception& e) {
            log_info("analyze: skipping %s (%s)", entry.utterance_id.c_str(), e.what());
            out.skipped.push_back(entry.utterance_id);
        }
    }
    if (out.profiles.empty())
        throw data_error("analyze: every utterance failed in " + manifest_path.string());
    return out;
}

struct EmbeddingSet {
    std::vector<double> points;
    int dim = 0;
    std::vector<std::string> client_ids;
};

// External embeddings: JSONL rows of utterance_id, client_id, vector.
EmbeddingSet read_embeddings(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw data_error("cannot open: " + path.string());
    EmbeddingSet out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json row;
        try {
            row = json::parse(line);
            const auto vec = row.at("vector").get<std::vector<double>>();
            if (out.dim == 0) out.dim = static_cast<int>(vec.size());
            if (static_cast<int>(vec.size()) != out.dim)
                throw data_error("inconsistent embedding dimension");
            out.points.insert(out.points.end(), vec.begin(), vec.end());
            out.client_ids.push_back(row.at("client_id").get<std::string>());
        } catch (const json::exception& e) {
            throw data_error(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    if (out.client_ids.empty()) throw data_error("no embeddings in " + path.string());
    return out;
}

struct CorpusAnalysis {
    std::map<std::string, ClientVariationReport> feature_reports;
    double purity = 0.0;
    std::size_t clients = 0;
    std::size_t profiled = 0;
    std::size_t skipped = 0;
    std::string embedding_source;
};

// z-scored profile vectors (or external embeddings) -> k-means purity with
// k = client count, plus per-feature variation reports.
CorpusAnalysis analyze_corpus(const ProfiledCorpus& profiled,
                              const std::optional<EmbeddingSet>& embeddings, std::uint64_t seed) {
    CorpusAnalysis out;
    out.profiled = profiled.profiles.size();
    out.skipped = profiled.skipped.size();

    for (int f = 0; f < UtteranceProfile::kFeatureCount; ++f) {
        std::map<std::string, std::vector<double>> by_client;
        for (std::size_t i = 0; i < profiled.profiles.size(); ++i) {
            const double v = profiled.profiles[i].feature(f);
            if (std::isfinite(v)) by_client[profiled.client_ids[i]].push_back(v);
        }
        std::vector<std::vector<double>> grouped;
        grouped.reserve(by_client.size());
        for (auto& [client, values] : by_client) grouped.push_back(std::move(values));
        if (!grouped.empty())
            out.feature_reports[UtteranceProfile::feature_name(f)] = client_variation(grouped);
    }

    std::vector<double> points;
    std::vector<int> labels;
    int dim = 0;
    std::map<std::string, int> client_index;
    if (embeddings.has_value()) {
        out.embedding_source = "external";
        dim = embeddings->dim;
        points = embeddings->points;
        for (const auto& client : embeddings->client_ids)
            labels.push_back(client_index.emplace(client, static_cast<int>(client_index.size())).first->second);
    } else {
        out.embedding_source = "profiles";
        dim = UtteranceProfile::kFeatureCount;
        // z-score each dimension; utterances with undefined features drop out.
        std::vector<std::size_t> usable;
        for (std::size_t i = 0; i < profiled.profiles.size(); ++i) {
            bool ok = true;
            for (int f = 0; f < dim; ++f) ok = ok && std::isfinite(profiled.profiles[i].feature(f));
            if (ok) usable.push_back(i);
        }
        if (usable.empty()) throw data_error("analyze: no utterance has a fully defined profile");
        std::vector<double> mean_v(static_cast<std::size_t>(dim), 0.0);
        std::vector<double> std_v(static_cast<std::size_t>(dim), 0.0);
        for (auto i : usable)
            for (int f = 0; f < dim; ++f) mean_v[static_cast<std::size_t>(f)] += profiled.profiles[i].feature(f);
        for (auto& m : mean_v) m /= static_cast<double>(usable.size());
        for (auto i : usable)
            for (int f = 0; f < dim; ++f) {
                const double d = profiled.profiles[i].feature(f) - mean_v[static_cast<std::size_t>(f)];
                std_v[static_cast<std::size_t>(f)] += d * d;
            }
        for (auto& s : std_v) s = std::sqrt(s / static_cast<double>(usable.size()));
        for (auto i : usable) {
            for (int f = 0; f < dim; ++f) {
                const auto fi = static_cast<std::size_t>(f);
                points.push_back(std_v[fi] > 0.0
                                     ? (profiled.profiles[i].feature(f) - mean_v[fi]) / std_v[fi]
                                     : 0.0);
            }
            labels.push_back(client_index
                                 .emplace(profiled.client_ids[i], static_cast<int>(client_index.size()))
                                 .first->second);
        }
    }
    out.clients = client_index.size();
    const auto clustering =
        clustering_purity(points, dim, labels, static_cast<int>(client_index.size()), seed);
    out.purity = clustering.purity;
    return out;
}

void write_profiles_csv(const fs::path& path, const ProfiledCorpus& profiled) {
    CsvWriter csv(path);
    csv.row({"utterance_id", "client_id", "loudness_db", "log_hnr_db", "perm_entropy",
             "blind_snr_db", "voiced_fraction"});
    for (std::size_t i = 0; i < profiled.profiles.size(); ++i) {
        const auto& p = profiled.profiles[i];
        csv.row({profiled.utterance_ids[i], profiled.client_ids[i], fmt_or_empty(p.loudness_db),
                 fmt_or_empty(p.log_hnr_db), fmt_or_empty(p.perm_entropy),
                 fmt_or_empty(p.blind_snr_db), fmt_or_empty(p.voiced_fraction)});
    }
}

int cmd_analyze(const CommonOpts& opts) {
    const json cfg = load_config_file(opts.config_path);
    const fs::path cfg_base = fs::path(opts.config_path).parent_path();
    const fs::path out = pick_out_dir(cfg, opts);
    const std::uint64_t seed = pick_seed(cfg, opts);

    ProfileParams params;
    params.framing.frame_ms = get_or<double>(cfg, "frame_ms", params.framing.frame_ms);
    params.framing.hop_ms = get_or<double>(cfg, "hop_ms", params.framing.hop_ms);
    params.framing.f0_lo_hz = get_or<double>(cfg, "f0_lo_hz", params.framing.f0_lo_hz);
    params.framing.f0_hi_hz = get_or<double>(cfg, "f0_hi_hz", params.framing.f0_hi_hz);
    params.framing.yin_threshold = get_or<double>(cfg, "yin_threshold", params.framing.yin_threshold);
    params.pe_order = get_or<int>(cfg, "pe_order", params.pe_order);
    params.pe_delay = get_or<int>(cfg, "pe_delay", params.pe_delay);
    params.lpc_order = get_or<int>(cfg, "lpc_order", params.lpc_order);

    const fs::path corpus_a = resolve_path(require<std::string>(cfg, "corpus_a"), cfg_base);
    const fs::path corpus_b = resolve_path(require<std::string>(cfg, "corpus_b"), cfg_base);

    const auto profiled_a = profile_corpus(corpus_a, params);
    const auto profiled_b = profile_corpus(corpus_b, params);

    std::optional<EmbeddingSet> emb_a;
    std::optional<EmbeddingSet> emb_b;
    const std::string emb_a_path = get_or<std::string>(cfg, "embeddings_a", "");
    const std::string emb_b_path = get_or<std::string>(cfg, "embeddings_b", "");
    if (!emb_a_path.empty()) emb_a = read_embeddings(resolve_path(emb_a_path, cfg_base));
    if (!emb_b_path.empty()) emb_b = read_embeddings(resolve_path(emb_b_path, cfg_base));

    const auto analysis_a = analyze_corpus(profiled_a, emb_a, seed);
    const auto analysis_b = analyze_corpus(profiled_b, emb_b, seed);

    write_profiles_csv(out / "profiles_a.csv", profiled_a);
    write_profiles_csv(out / "profiles_b.csv", profiled_b);

    {
        CsvWriter csv(out / "analyze_features.csv");
        csv.row({"corpus", "feature", "mean_of_means", "std_of_means", "mean_of_stds",
                 "std_of_stds", "kurtosis_of_means", "clients", "single_value_clients"});
        auto emit = [&](const char* name, const CorpusAnalysis& analysis) {
            for (int f = 0; f < UtteranceProfile::kFeatureCount; ++f) {
                const auto it = analysis.feature_reports.find(UtteranceProfile::feature_name(f));
                if (it == analysis.feature_reports.end()) continue;
                const auto& r = it->second;
                csv.row({name, UtteranceProfile::feature_name(f), format_double(r.mean_of_means),
                         format_double(r.std_of_means), fmt_or_empty(r.mean_of_stds),
                         fmt_or_empty(r.std_of_stds), fmt_or_empty(r.kurtosis_of_means),
                         std::to_string(r.clients), std::to_string(r.single_value_clients)});
            }
        };
        emit("a", analysis_a);
        emit("b", analysis_b);
    }
    {
        CsvWriter csv(out / "analyze_summary.csv");
        csv.row({"corpus", "utterances", "profiled", "skipped", "clients", "purity",
                 "embedding_source"});
        auto emit = [&](const char* name, const ProfiledCorpus& profiled,
                        const CorpusAnalysis& analysis) {
            csv.row({name, std::to_string(profiled.total), std::to_string(analysis.profiled),
                     std::to_string(analysis.skipped), std::to_string(analysis.clients),
                     format_double(analysis.purity), analysis.embedding_source});
        };
        emit("a", profiled_a, analysis_a);
        emit("b", profiled_b, analysis_b);
    }

    json manifest;
    manifest["tool_version"] = kToolVersion;
    manifest["command"] = "analyze";
    manifest["config"] = {{"corpus_a", fs::weakly_canonical(corpus_a).string()},
                          {"corpus_b", fs::weakly_canonical(corpus_b).string()},
                          {"seed", seed}};
    manifest["results"] = {{"purity_a", analysis_a.purity},
                           {"purity_b", analysis_b.purity},
                           {"skipped_a", profiled_a.skipped},
                           {"skipped_b", profiled_b.skipped}};
    write_json_file(out / "analyze_manifest.json", manifest);
    log_info("analyze: purity a=%.4f b=%.4f", analysis_a.purity, analysis_b.purity);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"fedsim: deterministic federated ASR-style training simulator"};
    app.require_subcommand(1);

    CommonOpts opts;
    std::string strategy_flag;
    std::string scheme_flag;
    int clients_per_round_flag = 0;

    auto add_common = [&](CLI::App* sub, bool needs_config = true) {
        auto* c = sub->add_option("--config", opts.config_path, "JSON config path");
        if (needs_config) c->required();
        sub->add_option("--out", opts.out_dir, "output directory (overrides config)");
        sub->add_option("--seed", opts.seed, "seed override");
        sub->add_option("--workers", opts.workers, "worker threads for client training");
    };

    auto* gen = app.add_subcommand("generate", "generate a synthetic corpus");
    add_common(gen);
    auto* warm = app.add_subcommand("warmup", "split off warm-up speakers and pre-train");
    add_common(warm);
    auto* fed = app.add_subcommand("federate", "run the federated experiment");
    add_common(fed);
    fed->add_option("--strategy", strategy_flag, "fedavg|loss|wer (overrides config)");
    fed->add_option("--scheme", scheme_flag, "cross_silo|per_speaker|speaker_pairs");
    fed->add_option("--clients-per-round", clients_per_round_flag, "K override");
    auto* ana = app.add_subcommand("analyze", "heterogeneity comparison of two corpora");
    add_common(ana);
    auto* part = app.add_subcommand("partition", "write a partition plan");
    add_common(part);
    part->add_option("--scheme", scheme_flag, "cross_silo|per_speaker|speaker_pairs");

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) return cmd_generate(opts);
        if (warm->parsed()) return cmd_warmup(opts);
        if (fed->parsed()) return cmd_federate(opts, strategy_flag, scheme_flag, clients_per_round_flag);
        if (ana->parsed()) return cmd_analyze(opts);
        if (part->parsed()) return cmd_partition(opts, scheme_flag);
    } catch (const config_error& e) {
        log_error("%s", e.what());
        return 2;
    } catch (const data_error& e) {
        log_error("%s", e.what());
        return 3;
    } catch (const std::exception& e) {
        log_error("%s", e.what());
        return 4;
    }
    return 0;
}
