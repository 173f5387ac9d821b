#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fedsim/errors.hpp"
#include "fedsim/rng.hpp"
#include "fedsim/types.hpp"

namespace fedsim {

struct IntRange {
    int lo = 0;
    int hi = 0;
};

struct RealRange {
    double lo = 0.0;
    double hi = 0.0;
};

struct SamplesLaw {
    enum class Kind { uniform, powerlaw };
    Kind kind = Kind::uniform;
    double exponent = 1.5;  // powerlaw only
    int lo = 1;
    int hi = 1;
};

struct CorpusSpec {
    int speakers = 10;
    SamplesLaw samples_law{SamplesLaw::Kind::uniform, 1.5, 10, 20};
    int vocab_size = 6;   // includes the blank
    int feature_dim = 8;
    IntRange frames_per_token{2, 4};
    IntRange tokens_per_utterance{2, 8};
    RealRange per_speaker_noise_std{0.1, 0.4};
    RealRange per_speaker_gain_db{0.0, 0.0};
    // Recording-channel offset: a fixed per-speaker vector with N(0, std^2)
    // components added to every frame. A shared linear model cannot absorb
    // every channel at once, so client difficulty stays heterogeneous.
    RealRange per_speaker_channel_std{0.0, 0.0};
    double token_skew = 0.0;  // Dirichlet concentration inverse; 0 = IID
    // 0 = utterance lengths drawn IID from the global range; 1 = each speaker
    // keeps its own characteristic length. Loss-based weighting reacts to
    // length (the CTC term is a sum over frames), WER does not.
    double length_skew = 0.0;
    double noisy_client_fraction = 0.0;
    double noisy_client_noise_multiplier = 1.0;
    double prototype_scale = 2.0;
    std::uint64_t seed = 0;
    // Token prototypes seed separately from speakers, so corpora drawn with
    // different seeds (train vs validation) can share one feature geometry.
    std::optional<std::uint64_t> prototype_seed;

    void validate() const {
        if (speakers < 1) throw config_error("CorpusSpec: speakers must be >= 1");
        if (vocab_size < 2) throw config_error("CorpusSpec: vocab must include blank plus one token");
        if (feature_dim < 1) throw config_error("CorpusSpec: feature_dim must be >= 1");
        if (samples_law.lo < 1 || samples_law.lo > samples_law.hi)
            throw config_error("CorpusSpec: invalid samples_law range");
        if (samples_law.kind == SamplesLaw::Kind::powerlaw && samples_law.exponent <= 0.0)
            throw config_error("CorpusSpec: powerlaw exponent must be positive");
        if (frames_per_token.lo < 2 || frames_per_token.lo > frames_per_token.hi)
            throw config_error("CorpusSpec: frames_per_token range invalid (lo must be >= 2)");
        if (tokens_per_utterance.lo < 1 || tokens_per_utterance.lo > tokens_per_utterance.hi)
            throw config_error("CorpusSpec: tokens_per_utterance range invalid");
        if (per_speaker_noise_std.lo < 0.0 || per_speaker_noise_std.lo > per_speaker_noise_std.hi)
            throw config_error("CorpusSpec: per_speaker_noise_std range invalid");
        if (per_speaker_gain_db.lo > per_speaker_gain_db.hi)
            throw config_error("CorpusSpec: per_speaker_gain_db range invalid");
        if (per_speaker_channel_std.lo < 0.0 ||
            per_speaker_channel_std.lo > per_speaker_channel_std.hi)
            throw config_error("CorpusSpec: per_speaker_channel_std range invalid");
        if (token_skew < 0.0) throw config_error("CorpusSpec: token_skew must be >= 0");
        if (length_skew < 0.0 || length_skew > 1.0)
            throw config_error("CorpusSpec: length_skew must lie in [0,1]");
        if (noisy_client_fraction < 0.0 || noisy_client_fraction > 1.0)
            throw config_error("CorpusSpec: noisy_client_fraction must lie in [0,1]");
        if (noisy_client_noise_multiplier < 1.0)
            throw config_error("CorpusSpec: noisy_client_noise_multiplier must be >= 1");
        if (prototype_scale <= 0.0) throw config_error("CorpusSpec: prototype_scale must be positive");
    }
};

namespace detail {

inline int draw_sample_count(const SamplesLaw& law, Rng& rng) {
    if (law.kind == SamplesLaw::Kind::uniform)
        return static_cast<int>(rng.uniform_int(law.lo, law.hi));
    // Truncated continuous power law via inverse CDF, rounded and clamped.
    const double a = law.exponent;
    const double lo = static_cast<double>(law.lo);
    const double hi = static_cast<double>(law.hi);
    const double u = rng.next_double();
    double x;
    if (std::abs(a - 1.0) < 1e-12) {
        x = lo * std::pow(hi / lo, u);
    } else {
        const double p = 1.0 - a;
        x = std::pow((std::pow(hi, p) - std::pow(lo, p)) * u + std::pow(lo, p), 1.0 / p);
    }
    return std::clamp(static_cast<int>(std::lround(x)), law.lo, law.hi);
}

// V prototype directions in R^D, orthonormalized when D >= V, unit-norm
// otherwise. Deterministic given the seed.
inline std::vector<std::vector<double>> make_prototypes(int vocab, int dim, double scale,
                                                        std::uint64_t seed) {
    Rng rng(mix_seed(seed, 0x9407ULL));
    std::vector<std::vector<double>> proto(vocab, std::vector<double>(dim));
    for (auto& row : proto) {
        for (auto& v : row) v = rng.normal();
    }
    // Gram-Schmidt against unit vectors; the scale is applied at the end.
    for (int i = 0; i < vocab; ++i) {
        if (dim >= vocab) {
            for (int j = 0; j < i; ++j) {
                double dot = 0.0;
                for (int d = 0; d < dim; ++d) dot += proto[i][d] * proto[j][d];
                for (int d = 0; d < dim; ++d) proto[i][d] -= dot * proto[j][d];
            }
        }
        double norm = 0.0;
        for (double v : proto[i]) norm += v * v;
        norm = std::sqrt(norm);
        if (norm < 1e-9) {
            // Degenerate draw; fall back to an axis direction.
            std::fill(proto[i].begin(), proto[i].end(), 0.0);
            proto[i][i % dim] = 1.0;
            norm = 1.0;
        }
        for (double& v : proto[i]) v /= norm;
    }
    for (auto& row : proto) {
        for (double& v : row) v *= scale;
    }
    return proto;
}

inline std::string speaker_name(const std::string& prefix, int index) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%s%04d", prefix.c_str(), index);
    return buf;
}

}  // namespace detail

struct SpeakerProfile {
    std::string speaker;
    int sample_count = 0;
    double noise_std = 0.0;
    double gain = 1.0;
    bool noisy = false;
    std::vector<double> token_dist;  // over tokens 1..V-1
    std::vector<double> channel;     // fixed feature-space offset
};

struct GeneratedCorpus {
    Corpus corpus;
    std::vector<SpeakerProfile> speakers;
};

// Seeded synthetic feature corpus. Each speaker owns a token-emission
// distribution, a feature-noise level and a gain; utterances are token
// sequences rendered as per-token prototype vectors plus speaker noise, with
// the true frame alignment recorded.
inline GeneratedCorpus generate(const CorpusSpec& spec, const std::string& speaker_prefix = "s") {
    spec.validate();
    const int n_tokens = spec.vocab_size - 1;
    const auto proto = detail::make_prototypes(spec.vocab_size, spec.feature_dim,
                                               spec.prototype_scale,
                                               spec.prototype_seed.value_or(spec.seed));

    // Exactly floor(fraction * speakers) speakers flagged noisy.
    const int n_noisy = static_cast<int>(std::floor(spec.noisy_client_fraction * spec.speakers));
    std::vector<bool> noisy(spec.speakers, false);
    {
        Rng rng(mix_seed(mix_seed(spec.seed, seed_stream::kCorpus), 0xD1CEULL));
        for (auto idx : rng.sample_indices(static_cast<std::size_t>(spec.speakers),
                                           static_cast<std::size_t>(n_noisy)))
            noisy[idx] = true;
    }

    GeneratedCorpus out;
    out.corpus.vocab = spec.vocab_size;
    out.corpus.feature_dim = spec.feature_dim;
    for (int s = 0; s < spec.speakers; ++s) {
        Rng rng(mix_seed(mix_seed(spec.seed, seed_stream::kCorpus), static_cast<std::uint64_t>(s)));
        SpeakerProfile sp;
        sp.speaker = detail::speaker_name(speaker_prefix, s);
        sp.sample_count = detail::draw_sample_count(spec.samples_law, rng);
        sp.noise_std = rng.uniform(spec.per_speaker_noise_std.lo, spec.per_speaker_noise_std.hi);
        sp.noisy = noisy[s];
        if (sp.noisy) sp.noise_std *= spec.noisy_client_noise_multiplier;
        sp.gain = std::pow(10.0, rng.uniform(spec.per_speaker_gain_db.lo, spec.per_speaker_gain_db.hi) / 20.0);
        if (spec.token_skew <= 0.0) {
            sp.token_dist.assign(n_tokens, 1.0 / n_tokens);
        } else {
            sp.token_dist = rng.dirichlet(1.0 / spec.token_skew, n_tokens);
        }
        const double length_character = rng.next_double();  // speaker position in the length range
        const double channel_std =
            rng.uniform(spec.per_speaker_channel_std.lo, spec.per_speaker_channel_std.hi);
        sp.channel.resize(spec.feature_dim);
        for (auto& c : sp.channel) c = rng.normal(0.0, channel_std);

        std::vector<double> cdf(sp.token_dist.size());
        double run = 0.0;
        for (std::size_t i = 0; i < cdf.size(); ++i) {
            run += sp.token_dist[i];
            cdf[i] = run;
        }

        for (int u = 0; u < sp.sample_count; ++u) {
            Utterance utt;
            char buf[48];
            std::snprintf(buf, sizeof(buf), "%s_u%04d", sp.speaker.c_str(), u);
            utt.id = buf;
            utt.speaker = sp.speaker;
            utt.features.dim = spec.feature_dim;

            const double length_u =
                (1.0 - spec.length_skew) * rng.next_double() + spec.length_skew * length_character;
            const int t_y = std::clamp(
                spec.tokens_per_utterance.lo +
                    static_cast<int>(std::floor(
                        length_u * (spec.tokens_per_utterance.hi - spec.tokens_per_utterance.lo + 1))),
                spec.tokens_per_utterance.lo, spec.tokens_per_utterance.hi);
            int prev_token = kBlankId;
            for (int i = 0; i < t_y; ++i) {
                const double r = rng.next_double() * run;
                int tok = 1;
                for (std::size_t c = 0; c < cdf.size(); ++c) {
                    if (r < cdf[c]) {
                        tok = static_cast<int>(c) + 1;
                        break;
                    }
                    tok = static_cast<int>(cdf.size());
                }
                utt.transcript.tokens.push_back(tok);
                // A blank separator keeps equal adjacent tokens distinct under
                // the CTC collapse rule.
                if (tok == prev_token) utt.alignment.labels.push_back(kBlankId);
                const int frames = static_cast<int>(
                    rng.uniform_int(spec.frames_per_token.lo, spec.frames_per_token.hi));
                for (int f = 0; f < frames; ++f) utt.alignment.labels.push_back(tok);
                prev_token = tok;
            }
            for (int label : utt.alignment.labels) {
                for (int d = 0; d < spec.feature_dim; ++d) {
                    utt.features.data.push_back(
                        sp.gain * (proto[label][d] + sp.channel[d] + rng.normal(0.0, sp.noise_std)));
                }
            }
            out.corpus.utterances.push_back(std::move(utt));
        }
        out.speakers.push_back(std::move(sp));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Sample-count histogram over per-speaker utterance counts.
// ---------------------------------------------------------------------------

// Bin layout matching the published client-size distribution plot:
// [0,10) [10,20) [20,40) [40,60) [60,80) [80,100) [100,150) [150,200)
// [200,300) [300,inf).
inline std::vector<long long> default_histogram_edges() {
    return {0, 10, 20, 40, 60, 80, 100, 150, 200, 300};
}

inline std::vector<long long> sample_count_histogram(const Corpus& corpus,
                                                     const std::vector<long long>& bin_edges) {
    if (bin_edges.empty()) throw config_error("sample_count_histogram: no bins");
    if (!std::is_sorted(bin_edges.begin(), bin_edges.end()))
        throw config_error("sample_count_histogram: bins must be sorted");
    std::map<std::string, long long> counts;
    for (const auto& utt : corpus.utterances) counts[utt.speaker]++;
    std::vector<long long> hist(bin_edges.size(), 0);
    for (const auto& [speaker, n] : counts) {
        std::size_t bin = 0;
        for (std::size_t i = 0; i < bin_edges.size(); ++i) {
            if (n >= bin_edges[i]) bin = i;
        }
        hist[bin]++;
    }
    return hist;
}

// ---------------------------------------------------------------------------
// Audio corpus: harmonic-plus-noise waveforms with per-speaker F0, SNR and
// gain, plus within-speaker jitter so wide-spread ("CV-like") and
// narrow-spread ("LS-like") corpora are both reachable.
// ---------------------------------------------------------------------------

struct AudioSpec {
    int speakers = 20;
    IntRange utterances_per_speaker{4, 8};
    int sample_rate = 8000;
    RealRange duration_s{0.4, 0.6};
    RealRange f0_hz{100.0, 250.0};     // per-speaker base
    double f0_jitter_hz = 4.0;         // within-speaker
    RealRange snr_db{5.0, 25.0};       // per-speaker base
    double snr_jitter_db = 2.0;        // within-speaker
    RealRange gain_db{-18.0, -4.0};    // per-speaker base
    double gain_jitter_db = 1.0;       // within-speaker
    int harmonics = 4;
    RealRange voiced_fraction{0.6, 0.9};  // per-speaker base
    double voiced_jitter = 0.05;          // within-speaker
    std::uint64_t seed = 0;

    void validate() const {
        if (speakers < 1) throw config_error("AudioSpec: speakers must be >= 1");
        if (utterances_per_speaker.lo < 1 || utterances_per_speaker.lo > utterances_per_speaker.hi)
            throw config_error("AudioSpec: utterances_per_speaker range invalid");
        if (sample_rate < 1000) throw config_error("AudioSpec: sample_rate too low");
        if (duration_s.lo <= 0.0 || duration_s.lo > duration_s.hi)
            throw config_error("AudioSpec: duration range invalid");
        if (f0_hz.lo <= 0.0 || f0_hz.lo > f0_hz.hi) throw config_error("AudioSpec: f0 range invalid");
        if (f0_hz.hi * harmonics * 2.0 >= sample_rate)
            throw config_error("AudioSpec: harmonics exceed Nyquist");
        if (snr_db.lo > snr_db.hi) throw config_error("AudioSpec: snr range invalid");
        if (gain_db.lo > gain_db.hi) throw config_error("AudioSpec: gain range invalid");
        if (harmonics < 1) throw config_error("AudioSpec: harmonics must be >= 1");
        if (voiced_fraction.lo <= 0.0 || voiced_fraction.hi > 1.0 ||
            voiced_fraction.lo > voiced_fraction.hi)
            throw config_error("AudioSpec: voiced_fraction range invalid");
    }
};

struct AudioUtterance {
    std::string id;
    std::string speaker;
    Waveform wave;
    double true_snr_db = 0.0;  // construction-time ground truth
    double gain_db = 0.0;
    double f0_hz = 0.0;
};

struct AudioCorpus {
    std::vector<AudioUtterance> utterances;
};

inline AudioCorpus generate_audio(const AudioSpec& spec, const std::string& speaker_prefix = "s") {
    spec.validate();
    AudioCorpus out;
    for (int s = 0; s < spec.speakers; ++s) {
        Rng rng(mix_seed(mix_seed(spec.seed, seed_stream::kAudio), static_cast<std::uint64_t>(s)));
        const std::string speaker = detail::speaker_name(speaker_prefix, s);
        const double base_f0 = rng.uniform(spec.f0_hz.lo, spec.f0_hz.hi);
        const double base_snr = rng.uniform(spec.snr_db.lo, spec.snr_db.hi);
        const double base_gain = rng.uniform(spec.gain_db.lo, spec.gain_db.hi);
        const double base_voiced = rng.uniform(spec.voiced_fraction.lo, spec.voiced_fraction.hi);
        const int n_utts =
            static_cast<int>(rng.uniform_int(spec.utterances_per_speaker.lo, spec.utterances_per_speaker.hi));

        for (int u = 0; u < n_utts; ++u) {
            AudioUtterance utt;
            char buf[48];
            std::snprintf(buf, sizeof(buf), "%s_u%04d", speaker.c_str(), u);
            utt.id = buf;
            utt.speaker = speaker;
            utt.f0_hz = std::clamp(base_f0 + rng.uniform(-spec.f0_jitter_hz, spec.f0_jitter_hz),
                                   spec.f0_hz.lo * 0.5, spec.f0_hz.hi * 1.5);
            utt.true_snr_db = base_snr + rng.uniform(-spec.snr_jitter_db, spec.snr_jitter_db);
            utt.gain_db = base_gain + rng.uniform(-spec.gain_jitter_db, spec.gain_jitter_db);
            utt.wave.sample_rate = spec.sample_rate;

            const double dur = rng.uniform(spec.duration_s.lo, spec.duration_s.hi);
            const int n = std::max(16, static_cast<int>(std::lround(dur * spec.sample_rate)));
            const double vf = std::clamp(
                base_voiced + rng.uniform(-spec.voiced_jitter, spec.voiced_jitter), 0.05, 1.0);
            const int voiced_len = static_cast<int>(std::lround(vf * n));
            const int head = (n - voiced_len) / 2;

            std::vector<double> phase(spec.harmonics);
            for (auto& p : phase) p = rng.uniform(0.0, 2.0 * M_PI);

            // Harmonic part, amplitude 1/h per harmonic; normalized below.
            std::vector<double> harm(n, 0.0);
            double harm_energy = 0.0;
            for (int i = head; i < head + voiced_len; ++i) {
                double v = 0.0;
                for (int h = 1; h <= spec.harmonics; ++h) {
                    v += std::sin(2.0 * M_PI * utt.f0_hz * h * i / spec.sample_rate + phase[h - 1]) /
                         static_cast<double>(h);
                }
                harm[i] = v;
                harm_energy += v * v;
            }
            const double harm_rms = std::sqrt(harm_energy / std::max(1, voiced_len));
            const double noise_rms = std::pow(10.0, -utt.true_snr_db / 20.0);

            const double gain = std::pow(10.0, utt.gain_db / 20.0);
            utt.wave.samples.resize(n);
            for (int i = 0; i < n; ++i) {
                const double h = harm_rms > 0.0 ? harm[i] / harm_rms : 0.0;
                const double x = gain * (h + noise_rms * rng.normal());
                utt.wave.samples[i] = std::clamp(x, -1.0, 1.0);
            }
            out.utterances.push_back(std::move(utt));
        }
    }
    return out;
}

}  // namespace fedsim
