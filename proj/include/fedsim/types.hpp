#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "fedsim/errors.hpp"

namespace fedsim {

// Token id 0 is reserved for the CTC blank; corpus tokens start at 1.
constexpr int kBlankId = 0;

// Row-major T_x x D feature matrix.
struct FeatureSequence {
    int dim = 0;
    std::vector<double> data;

    int frames() const { return dim > 0 ? static_cast<int>(data.size()) / dim : 0; }

    std::span<const double> frame(int t) const {
        return {data.data() + static_cast<std::size_t>(t) * dim, static_cast<std::size_t>(dim)};
    }
};

// Token ids in [1, V); never contains the blank.
struct Transcript {
    std::vector<int> tokens;

    int length() const { return static_cast<int>(tokens.size()); }
    bool operator==(const Transcript& other) const = default;
};

// One label per frame; blanks allowed. Collapsing repeats and removing
// blanks must recover the paired Transcript.
struct FrameAlignment {
    std::vector<int> labels;
};

// Flat model weights: V x D matrix row-major, then V biases.
struct ParameterVector {
    std::vector<double> values;

    std::size_t size() const { return values.size(); }
    bool all_finite() const {
        for (double v : values) {
            if (!std::isfinite(v)) return false;
        }
        return true;
    }
};

inline std::size_t parameter_count(int vocab, int feature_dim) {
    return static_cast<std::size_t>(vocab) * feature_dim + vocab;
}

// Row-stochastic T_x x V matrix of per-frame token probabilities.
struct FramePosteriors {
    int vocab = 0;
    std::vector<double> probs;

    int frames() const { return vocab > 0 ? static_cast<int>(probs.size()) / vocab : 0; }

    double at(int t, int v) const { return probs[static_cast<std::size_t>(t) * vocab + v]; }

    std::span<const double> frame(int t) const {
        return {probs.data() + static_cast<std::size_t>(t) * vocab, static_cast<std::size_t>(vocab)};
    }
};

struct LossConfig {
    double mu = 0.3;             // CE/CTC mixing weight, Eq. 3 style convex combination
    double learning_rate = 0.1;  // local SGD step size
    int epochs = 5;
    int batch_size = 8;

    void validate() const {
        if (mu < 0.0 || mu > 1.0) throw config_error("LossConfig: mu must lie in [0,1]");
        if (learning_rate < 0.0) throw config_error("LossConfig: learning_rate must be >= 0");
        if (epochs < 0) throw config_error("LossConfig: epochs must be >= 0");
        if (batch_size < 1) throw config_error("LossConfig: batch_size must be >= 1");
    }
};

struct Utterance {
    std::string id;
    std::string speaker;
    FeatureSequence features;
    Transcript transcript;
    FrameAlignment alignment;
    std::string wav_path;  // set for audio-backed corpora instead of features
};

struct Corpus {
    int vocab = 0;        // includes the blank id
    int feature_dim = 0;  // 0 for audio-only corpora
    std::vector<Utterance> utterances;
};

// Mono waveform, samples in [-1, 1].
struct Waveform {
    std::vector<double> samples;
    int sample_rate = 16000;

    double duration_s() const {
        return static_cast<double>(samples.size()) / static_cast<double>(sample_rate);
    }
};

// One client's local shard with its train / local-test split.
struct ClientDataset {
    int client_id = 0;
    std::vector<Utterance> train;
    std::vector<Utterance> local_test;
    bool no_local_test = false;  // flagged degenerate (too few samples to hold out)

    int sample_count() const { return static_cast<int>(train.size()); }
};

}  // namespace fedsim
