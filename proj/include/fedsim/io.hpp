#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "fedsim/errors.hpp"
#include "fedsim/synthcorpus.hpp"
#include "fedsim/types.hpp"

namespace fedsim {

namespace fs = std::filesystem;
using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Stable number formatting so metric files are byte-identical across runs.
// ---------------------------------------------------------------------------

inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    return buf;
}

class CsvWriter {
public:
    explicit CsvWriter(const fs::path& path) : out_(path, std::ios::binary) {
        if (!out_) throw data_error("cannot open for writing: " + path.string());
    }

    void row(const std::vector<std::string>& cells) {
        for (std::size_t i = 0; i < cells.size(); ++i) {
            if (i) out_ << ',';
            out_ << cells[i];
        }
        out_ << '\n';
    }

private:
    std::ofstream out_;
};

// ---------------------------------------------------------------------------
// Flat binary feature file: little-endian float32, row-major, JSON sidecar
// with the shape. Weight vectors reuse the same format.
// ---------------------------------------------------------------------------

inline void write_f32_matrix(const fs::path& path, const std::vector<double>& values, int rows,
                             int cols, const json& extra_sidecar = json::object()) {
    if (static_cast<std::size_t>(rows) * cols != values.size())
        throw data_error("write_f32_matrix: shape does not match value count");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw data_error("cannot open for writing: " + path.string());
    std::vector<float> f(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) f[i] = static_cast<float>(values[i]);
    out.write(reinterpret_cast<const char*>(f.data()),
              static_cast<std::streamsize>(f.size() * sizeof(float)));
    if (!out) throw data_error("short write: " + path.string());

    json sidecar = extra_sidecar;
    sidecar["rows"] = rows;
    sidecar["cols"] = cols;
    sidecar["dtype"] = "float32";
    sidecar["order"] = "row-major";
    fs::path side = path;
    side += ".json";
    std::ofstream sout(side, std::ios::binary);
    sout << sidecar.dump(2) << '\n';
    if (!sout) throw data_error("cannot write sidecar: " + side.string());
}

struct F32Matrix {
    int rows = 0;
    int cols = 0;
    std::vector<double> values;
    json sidecar;
};

inline F32Matrix read_f32_matrix(const fs::path& path) {
    fs::path side = path;
    side += ".json";
    std::ifstream sin(side, std::ios::binary);
    if (!sin) throw data_error("missing sidecar: " + side.string());
    F32Matrix m;
    try {
        m.sidecar = json::parse(sin);
        m.rows = m.sidecar.at("rows").get<int>();
        m.cols = m.sidecar.at("cols").get<int>();
    } catch (const json::exception& e) {
        throw data_error("bad sidecar " + side.string() + ": " + e.what());
    }
    std::ifstream in(path, std::ios::binary);
    if (!in) throw data_error("cannot open: " + path.string());
    const std::size_t count = static_cast<std::size_t>(m.rows) * m.cols;
    std::vector<float> f(count);
    in.read(reinterpret_cast<char*>(f.data()), static_cast<std::streamsize>(count * sizeof(float)));
    if (static_cast<std::size_t>(in.gcount()) != count * sizeof(float))
        throw data_error("truncated feature file: " + path.string());
    m.values.assign(f.begin(), f.end());
    return m;
}

inline void write_weights(const fs::path& path, const ParameterVector& weights, int vocab, int dim) {
    json extra;
    extra["vocab"] = vocab;
    extra["feature_dim"] = dim;
    write_f32_matrix(path, weights.values, 1, static_cast<int>(weights.size()), extra);
}

struct LoadedWeights {
    ParameterVector weights;
    int vocab = 0;
    int feature_dim = 0;
};

inline LoadedWeights load_weights(const fs::path& path) {
    const auto m = read_f32_matrix(path);
    LoadedWeights w;
    w.weights.values = m.values;
    try {
        w.vocab = m.sidecar.at("vocab").get<int>();
        w.feature_dim = m.sidecar.at("feature_dim").get<int>();
    } catch (const json::exception& e) {
        throw data_error("weight sidecar missing vocab/feature_dim: " + std::string(e.what()));
    }
    if (w.weights.size() != parameter_count(w.vocab, w.feature_dim))
        throw protocol_error("weight file length does not match its sidecar shape");
    return w;
}

// ---------------------------------------------------------------------------
// 16-bit PCM mono RIFF WAV.
// ---------------------------------------------------------------------------

namespace detail {

inline void put_u32(std::string& s, std::uint32_t v) {
    s.push_back(static_cast<char>(v & 0xff));
    s.push_back(static_cast<char>((v >> 8) & 0xff));
    s.push_back(static_cast<char>((v >> 16) & 0xff));
    s.push_back(static_cast<char>((v >> 24) & 0xff));
}

inline void put_u16(std::string& s, std::uint16_t v) {
    s.push_back(static_cast<char>(v & 0xff));
    s.push_back(static_cast<char>((v >> 8) & 0xff));
}

}  // namespace detail

inline void write_wav(const fs::path& path, const Waveform& w) {
    std::string bytes;
    const auto n = static_cast<std::uint32_t>(w.samples.size());
    const std::uint32_t data_bytes = n * 2;
    bytes.reserve(44 + data_bytes);
    bytes += "RIFF";
    detail::put_u32(bytes, 36 + data_bytes);
    bytes += "WAVEfmt ";
    detail::put_u32(bytes, 16);
    detail::put_u16(bytes, 1);  // PCM
    detail::put_u16(bytes, 1);  // mono
    detail::put_u32(bytes, static_cast<std::uint32_t>(w.sample_rate));
    detail::put_u32(bytes, static_cast<std::uint32_t>(w.sample_rate) * 2);
    detail::put_u16(bytes, 2);   // block align
    detail::put_u16(bytes, 16);  // bits per sample
    bytes += "data";
    detail::put_u32(bytes, data_bytes);
    for (double s : w.samples) {
        const long q = std::lround(std::clamp(s, -1.0, 1.0) * 32768.0);
        const auto clipped = static_cast<std::int16_t>(std::clamp(q, -32768L, 32767L));
        detail::put_u16(bytes, static_cast<std::uint16_t>(clipped));
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw data_error("cannot open for writing: " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw data_error("short write: " + path.string());
}

inline Waveform read_wav(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw data_error("cannot open: " + path.string());
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (bytes.size() < 44 || bytes.compare(0, 4, "RIFF") != 0 || bytes.compare(8, 4, "WAVE") != 0)
        throw data_error("not a RIFF/WAVE file: " + path.string());

    auto u16 = [&](std::size_t off) {
        return static_cast<std::uint16_t>(static_cast<unsigned char>(bytes[off]) |
                                          (static_cast<unsigned char>(bytes[off + 1]) << 8));
    };
    auto u32 = [&](std::size_t off) {
        return static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[off])) |
               (static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[off + 1])) << 8) |
               (static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[off + 2])) << 16) |
               (static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[off + 3])) << 24);
    };

    Waveform w;
    bool have_fmt = false;
    std::size_t off = 12;
    while (off + 8 <= bytes.size()) {
        const std::string id = bytes.substr(off, 4);
        const std::uint32_t size = u32(off + 4);
        const std::size_t body = off + 8;
        if (id == "fmt ") {
            if (body + 16 > bytes.size()) throw data_error("truncated fmt chunk: " + path.string());
            if (u16(body) != 1) throw data_error("only PCM WAV supported: " + path.string());
            if (u16(body + 2) != 1) throw data_error("only mono WAV supported: " + path.string());
            w.sample_rate = static_cast<int>(u32(body + 4));
            if (u16(body + 14) != 16) throw data_error("only 16-bit WAV supported: " + path.string());
            have_fmt = true;
        } else if (id == "data") {
            if (!have_fmt) throw data_error("data chunk before fmt: " + path.string());
            if (body + size > bytes.size()) throw data_error("truncated data chunk: " + path.string());
            const std::size_t count = size / 2;
            w.samples.resize(count);
            for (std::size_t i = 0; i < count; ++i) {
                const auto raw = static_cast<std::int16_t>(u16(body + 2 * i));
                w.samples[i] = static_cast<double>(raw) / 32768.0;
            }
            return w;
        }
        off = body + size + (size & 1);
    }
    throw data_error("no data chunk found: " + path.string());
}

// ---------------------------------------------------------------------------
// JSONL corpus manifest: one utterance per line. Feature rows carry
// "features" (path to a .bin with sidecar); audio rows carry "wav".
// ---------------------------------------------------------------------------

inline void write_corpus_manifest(const fs::path& manifest_path, const Corpus& corpus,
                                  const fs::path& feature_dir) {
    fs::create_directories(feature_dir);
    std::ofstream out(manifest_path, std::ios::binary);
    if (!out) throw data_error("cannot open for writing: " + manifest_path.string());
    for (const auto& utt : corpus.utterances) {
        const fs::path fpath = feature_dir / (utt.id + ".bin");
        write_f32_matrix(fpath, utt.features.data, utt.features.frames(), utt.features.dim);
        json row;
        row["utterance_id"] = utt.id;
        row["speaker_id"] = utt.speaker;
        row["tokens"] = utt.transcript.tokens;
        row["alignment"] = utt.alignment.labels;
        row["features"] = fs::relative(fpath, manifest_path.parent_path()).generic_string();
        row["vocab"] = corpus.vocab;
        row["feature_dim"] = corpus.feature_dim;
        out << row.dump() << '\n';
    }
    if (!out) throw data_error("short write: " + manifest_path.string());
}

// Rewrites a manifest restricted to a subset of utterances, reusing the
// existing feature files (no copying).
inline void write_manifest_subset(const fs::path& manifest_path, const Corpus& corpus,
                                  const std::vector<std::string>& ids,
                                  const std::map<std::string, std::string>& feature_paths) {
    std::ofstream out(manifest_path, std::ios::binary);
    if (!out) throw data_error("cannot open for writing: " + manifest_path.string());
    std::map<std::string, const Utterance*> by_id;
    for (const auto& utt : corpus.utterances) by_id[utt.id] = &utt;
    for (const auto& id : ids) {
        auto it = by_id.find(id);
        if (it == by_id.end()) throw data_error("manifest subset: unknown utterance " + id);
        const Utterance& utt = *it->second;
        json row;
        row["utterance_id"] = utt.id;
        row["speaker_id"] = utt.speaker;
        row["tokens"] = utt.transcript.tokens;
        row["alignment"] = utt.alignment.labels;
        auto fp = feature_paths.find(id);
        if (fp == feature_paths.end()) throw data_error("manifest subset: no feature path for " + id);
        row["features"] = fp->second;
        row["vocab"] = corpus.vocab;
        row["feature_dim"] = corpus.feature_dim;
        out << row.dump() << '\n';
    }
}

inline void write_audio_corpus(const fs::path& manifest_path, const AudioCorpus& corpus,
                               const fs::path& wav_dir) {
    fs::create_directories(wav_dir);
    std::ofstream out(manifest_path, std::ios::binary);
    if (!out) throw data_error("cannot open for writing: " + manifest_path.string());
    for (const auto& utt : corpus.utterances) {
        const fs::path wpath = wav_dir / (utt.id + ".wav");
        write_wav(wpath, utt.wave);
        json row;
        row["utterance_id"] = utt.id;
        row["speaker_id"] = utt.speaker;
        row["wav"] = fs::relative(wpath, manifest_path.parent_path()).generic_string();
        out << row.dump() << '\n';
    }
    if (!out) throw data_error("short write: " + manifest_path.string());
}

struct ManifestEntry {
    std::string utterance_id;
    std::string speaker_id;
    std::vector<int> tokens;
    std::vector<int> alignment;
    std::string features;  // relative path, empty for audio rows
    std::string wav;       // relative path, empty for feature rows
    int vocab = 0;
    int feature_dim = 0;
};

inline std::vector<ManifestEntry> read_manifest(const fs::path& manifest_path) {
    std::ifstream in(manifest_path, std::ios::binary);
    if (!in) throw data_error("cannot open: " + manifest_path.string());
    std::vector<ManifestEntry> entries;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json row;
        try {
            row = json::parse(line);
        } catch (const json::exception& e) {
            throw data_error(manifest_path.string() + ":" + std::to_string(line_no) +
                             ": bad JSON: " + e.what());
        }
        ManifestEntry entry;
        try {
            entry.utterance_id = row.at("utterance_id").get<std::string>();
            entry.speaker_id = row.at("speaker_id").get<std::string>();
            if (row.contains("tokens")) entry.tokens = row["tokens"].get<std::vector<int>>();
            if (row.contains("alignment")) entry.alignment = row["alignment"].get<std::vector<int>>();
            if (row.contains("features")) entry.features = row["features"].get<std::string>();
            if (row.contains("wav")) entry.wav = row["wav"].get<std::string>();
            if (row.contains("vocab")) entry.vocab = row["vocab"].get<int>();
            if (row.contains("feature_dim")) entry.feature_dim = row["feature_dim"].get<int>();
        } catch (const json::exception& e) {
            throw data_error(manifest_path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
        entries.push_back(std::move(entry));
    }
    return entries;
}

// Loads a feature corpus (manifest + binary feature files) into memory.
inline Corpus load_feature_corpus(const fs::path& manifest_path) {
    const auto entries = read_manifest(manifest_path);
    if (entries.empty()) throw data_error("empty manifest: " + manifest_path.string());
    Corpus corpus;
    const fs::path base = manifest_path.parent_path();
    for (const auto& entry : entries) {
        if (entry.features.empty())
            throw data_error("manifest row has no features: " + entry.utterance_id);
        Utterance utt;
        utt.id = entry.utterance_id;
        utt.speaker = entry.speaker_id;
        utt.transcript.tokens = entry.tokens;
        utt.alignment.labels = entry.alignment;
        const auto m = read_f32_matrix(base / entry.features);
        utt.features.dim = m.cols;
        utt.features.data = m.values;
        if (corpus.vocab == 0) {
            corpus.vocab = entry.vocab;
            corpus.feature_dim = entry.feature_dim != 0 ? entry.feature_dim : m.cols;
        }
        corpus.utterances.push_back(std::move(utt));
    }
    if (corpus.vocab == 0) throw data_error("manifest carries no vocab: " + manifest_path.string());
    return corpus;
}

}  // namespace fedsim
