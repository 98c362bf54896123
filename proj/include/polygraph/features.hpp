#pragma once

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "polygraph/errors.hpp"
#include "polygraph/tensor.hpp"

namespace polygraph {

enum class Modality { visual, audio, text };

inline const char* to_string(Modality m) {
    switch (m) {
        case Modality::visual: return "visual";
        case Modality::audio: return "audio";
        case Modality::text: return "text";
    }
    return "?";
}

inline Modality parse_modality(const std::string& s) {
    if (s == "visual") return Modality::visual;
    if (s == "audio") return Modality::audio;
    if (s == "text") return Modality::text;
    throw DataError("unknown modality: " + s);
}

/// Class labels. Deceptive is class index 0 throughout.
constexpr int kDeceptive = 0;
constexpr int kTruthful = 1;

inline const char* label_name(int label) { return label == kDeceptive ? "deceptive" : "truthful"; }

inline int parse_label(const std::string& s) {
    if (s == "deceptive") return kDeceptive;
    if (s == "truthful") return kTruthful;
    throw DataError("unknown label: " + s + " (expected deceptive|truthful)");
}

/// One modality's time-ordered feature matrix for one clip.
struct FeatureSequence {
    Modality modality = Modality::visual;
    Tensor data;              // T x D
    int valid_length = 0;     // rows before padding
    double step_seconds = 0.2;
};

/// A clip with its label and per-modality features.
struct ClipRecord {
    std::string clip_id;
    std::string speaker_id;
    int label = kDeceptive;
    std::map<Modality, FeatureSequence> features;
};

/// Zero-padded batch with validity masks.
struct PaddedBatch {
    Tensor data;                                  // B x T_max x D
    std::vector<std::vector<std::uint8_t>> mask;  // [b][t] true iff t < valid_length(b)
    std::vector<int> labels;
    std::vector<std::string> clip_ids;
    std::vector<int> valid_lengths;
    double step_seconds = 0.2;

    int size() const { return data.rank() == 3 ? data.dim(0) : 0; }
    int max_len() const { return data.rank() == 3 ? data.dim(1) : 0; }
    int feature_dim() const { return data.rank() == 3 ? data.dim(2) : 0; }
    Tensor clip_matrix(int b) const { return data.slice0(b); }
};

// ---------------------------------------------------------------------------
// sampling / filling / pooling / padding
// ---------------------------------------------------------------------------

/// Frame indices at a stride that yields 5 sampled frames per second:
/// 0, k, 2k, ... with k = fps/5. A frame rate not divisible by 5 falls back
/// to the nearest integer stride and reports a warning.
inline std::vector<int> sample_visual_frames(int frame_count, int fps,
                                             std::vector<std::string>* warnings = nullptr) {
    if (frame_count < 1) throw DataError("sample_visual_frames: no frames");
    if (fps < 1) throw DataError("sample_visual_frames: fps must be positive");
    int k;
    if (fps % 5 == 0) {
        k = fps / 5;
    } else {
        k = std::max(1, static_cast<int>(std::lround(fps / 5.0)));
        if (warnings) {
            warnings->push_back("fps " + std::to_string(fps) +
                                " not divisible by 5; using stride " + std::to_string(k));
        }
    }
    std::vector<int> idx;
    for (int i = 0; i < frame_count; i += k) idx.push_back(i);
    return idx;
}

/// Replace missing rows with the most recent present row. Rows before the
/// first detection are zero vectors.
inline Tensor carry_forward_fill(const std::vector<std::optional<std::vector<double>>>& rows,
                                 int dim, std::vector<std::string>* warnings = nullptr) {
    if (rows.empty()) throw DataError("carry_forward_fill: empty row list");
    Tensor out({static_cast<int>(rows.size()), dim});
    std::vector<double> last(static_cast<size_t>(dim), 0.0);
    bool seen = false;
    for (size_t t = 0; t < rows.size(); ++t) {
        if (rows[t].has_value()) {
            if (static_cast<int>(rows[t]->size()) != dim) {
                throw ShapeError("carry_forward_fill: row " + std::to_string(t) +
                                 " has wrong width");
            }
            last = *rows[t];
            seen = true;
        }
        for (int c = 0; c < dim; ++c) out.at(static_cast<int>(t), c) = last[static_cast<size_t>(c)];
    }
    if (!seen && warnings) warnings->push_back("no rows present; output is all zeros");
    return out;
}

/// Average consecutive windows of round(t/hop) spectral frames; the final
/// partial window averages over its remainder.
inline FeatureSequence mean_pool_audio(const Tensor& mfcc, double hop_seconds, double t_seconds) {
    if (mfcc.size() == 0) throw DataError("mean_pool_audio: empty input");
    if (t_seconds < hop_seconds) throw ConfigError("mean_pool_audio: t must be >= hop");
    int window = std::max(1, static_cast<int>(std::lround(t_seconds / hop_seconds)));
    int frames = mfcc.rows(), d = mfcc.cols();
    int out_rows = (frames + window - 1) / window;
    Tensor out({out_rows, d});
    for (int o = 0; o < out_rows; ++o) {
        int from = o * window;
        int count = std::min(window, frames - from);
        for (int c = 0; c < d; ++c) {
            double s = 0.0;
            for (int r = from; r < from + count; ++r) s += mfcc.at(r, c);
            out.at(o, c) = s / count;
        }
    }
    FeatureSequence seq;
    seq.modality = Modality::audio;
    seq.data = std::move(out);
    seq.valid_length = out_rows;
    seq.step_seconds = t_seconds;
    return seq;
}

/// Pad sequences with zero rows to the longest length and record masks.
/// `min_len` can force a longer target (e.g. a model's fixed window).
inline PaddedBatch pad_and_mask(const std::vector<FeatureSequence>& seqs,
                                const std::vector<int>& labels = {},
                                const std::vector<std::string>& clip_ids = {},
                                int min_len = 0) {
    if (seqs.empty()) throw DataError("pad_and_mask: no sequences");
    int d = seqs[0].data.cols();
    int t_max = min_len;
    for (const auto& s : seqs) {
        if (s.data.cols() != d) {
            throw ShapeError("pad_and_mask: mixed feature widths " + std::to_string(d) + " vs " +
                             std::to_string(s.data.cols()));
        }
        t_max = std::max(t_max, s.data.rows());
    }
    int b = static_cast<int>(seqs.size());
    PaddedBatch batch;
    batch.data = Tensor({b, t_max, d});
    batch.mask.assign(static_cast<size_t>(b), std::vector<std::uint8_t>(static_cast<size_t>(t_max), 0));
    batch.step_seconds = seqs[0].step_seconds;
    for (int i = 0; i < b; ++i) {
        const Tensor& m = seqs[static_cast<size_t>(i)].data;
        int valid = std::min(seqs[static_cast<size_t>(i)].valid_length, m.rows());
        double* dst = batch.data.data() + static_cast<std::int64_t>(i) * t_max * d;
        std::copy(m.data(), m.data() + m.size(), dst);
        for (int t = 0; t < valid; ++t) batch.mask[static_cast<size_t>(i)][static_cast<size_t>(t)] = 1;
        batch.valid_lengths.push_back(valid);
        batch.labels.push_back(i < static_cast<int>(labels.size()) ? labels[static_cast<size_t>(i)] : 0);
        batch.clip_ids.push_back(i < static_cast<int>(clip_ids.size()) ? clip_ids[static_cast<size_t>(i)]
                                                                       : "clip" + std::to_string(i));
    }
    return batch;
}

/// Batch one modality of a clip list.
inline PaddedBatch pad_and_mask(const std::vector<ClipRecord>& clips, Modality m, int min_len = 0) {
    std::vector<FeatureSequence> seqs;
    std::vector<int> labels;
    std::vector<std::string> ids;
    for (const auto& clip : clips) {
        auto it = clip.features.find(m);
        if (it == clip.features.end()) {
            throw DataError("clip " + clip.clip_id + " has no " + to_string(m) + " features");
        }
        seqs.push_back(it->second);
        labels.push_back(clip.label);
        ids.push_back(clip.clip_id);
    }
    return pad_and_mask(seqs, labels, ids, min_len);
}

// ---------------------------------------------------------------------------
// feature CSV files
// ---------------------------------------------------------------------------

/// One row per timestep, comma-separated decimal floats. %.17g formatting
/// round-trips doubles exactly.
inline void write_feature_csv(const std::string& path, const Tensor& m) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot open feature file for writing: " + path);
    char buf[40];
    for (int r = 0; r < m.rows(); ++r) {
        std::string line;
        for (int c = 0; c < m.cols(); ++c) {
            std::snprintf(buf, sizeof(buf), "%.17g", m.at(r, c));
            if (c) line += ',';
            line += buf;
        }
        line += '\n';
        out << line;
    }
    if (!out) throw DataError("failed while writing feature file: " + path);
}

inline Tensor read_feature_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open feature file: " + path);
    std::vector<double> values;
    int cols = -1;
    std::string line;
    int row = 0;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        int n = 0;
        const char* p = line.c_str();
        char* end = nullptr;
        for (;;) {
            double v = std::strtod(p, &end);
            if (end == p) throw DataError("bad number in " + path + " row " + std::to_string(row));
            values.push_back(v);
            ++n;
            p = end;
            if (*p == ',') {
                ++p;
            } else if (*p == '\0' || *p == '\r') {
                break;
            } else {
                throw DataError("unexpected character in " + path + " row " + std::to_string(row));
            }
        }
        if (cols == -1) cols = n;
        if (n != cols) throw DataError("ragged row in " + path + " row " + std::to_string(row));
        ++row;
    }
    if (row == 0) throw DataError("empty feature file: " + path);
    return Tensor({row, cols}, std::move(values));
}

// ---------------------------------------------------------------------------
// manifest (JSON lines)
// ---------------------------------------------------------------------------
// Optional first record: {"type":"header", "dims":{...}, "step_seconds":{...},
//                         "held_out_speakers":[...], "generator":"..."}
// Clip records: {"clip_id":..,"speaker_id":..,"label":"deceptive"|"truthful",
//                "features":{"visual":"relative/path.csv", ...}}
// Feature paths are relative to the manifest's directory.
// ---------------------------------------------------------------------------

struct ManifestInfo {
    std::vector<ClipRecord> clips;
    std::map<Modality, int> dims;
    std::map<Modality, double> step_seconds;
    std::vector<std::string> held_out_speakers;
    std::string generator;
};

inline ManifestInfo load_manifest_info(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open manifest: " + path);
    std::filesystem::path base = std::filesystem::path(path).parent_path();
    ManifestInfo info;
    std::set<std::string> seen_ids;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw DataError("manifest " + path + " line " + std::to_string(line_no) +
                            ": " + e.what());
        }
        if (j.value("type", "") == "header") {
            if (j.contains("dims")) {
                for (auto& [k, v] : j["dims"].items()) info.dims[parse_modality(k)] = v.get<int>();
            }
            if (j.contains("step_seconds")) {
                for (auto& [k, v] : j["step_seconds"].items())
                    info.step_seconds[parse_modality(k)] = v.get<double>();
            }
            if (j.contains("held_out_speakers")) {
                for (auto& v : j["held_out_speakers"]) info.held_out_speakers.push_back(v.get<std::string>());
            }
            info.generator = j.value("generator", "");
            continue;
        }
        ClipRecord clip;
        try {
            clip.clip_id = j.at("clip_id").get<std::string>();
            clip.speaker_id = j.value("speaker_id", "");
            clip.label = parse_label(j.at("label").get<std::string>());
        } catch (const nlohmann::json::exception& e) {
            throw DataError("manifest " + path + " line " + std::to_string(line_no) + ": " + e.what());
        }
        if (!seen_ids.insert(clip.clip_id).second) {
            throw DataError("duplicate clip_id in manifest: " + clip.clip_id);
        }
        if (!j.contains("features") || j["features"].empty()) {
            throw DataError("clip " + clip.clip_id + " lists no feature files");
        }
        for (auto& [mod_name, rel] : j["features"].items()) {
            Modality m = parse_modality(mod_name);
            std::string fpath = (base / rel.get<std::string>()).string();
            if (!std::filesystem::exists(fpath)) {
                throw DataError("clip " + clip.clip_id + ": missing feature file " + fpath);
            }
            FeatureSequence seq;
            seq.modality = m;
            seq.data = read_feature_csv(fpath);
            seq.valid_length = seq.data.rows();
            auto st = info.step_seconds.find(m);
            seq.step_seconds = st != info.step_seconds.end() ? st->second : 0.2;
            auto dit = info.dims.find(m);
            if (dit == info.dims.end()) {
                info.dims[m] = seq.data.cols();
            } else if (dit->second != seq.data.cols()) {
                throw DataError("clip " + clip.clip_id + ": " + to_string(m) + " feature width " +
                                std::to_string(seq.data.cols()) + " does not match dataset width " +
                                std::to_string(dit->second));
            }
            clip.features[m] = std::move(seq);
        }
        info.clips.push_back(std::move(clip));
    }
    if (info.clips.empty()) throw DataError("manifest has no clips: " + path);
    return info;
}

inline std::vector<ClipRecord> load_manifest(const std::string& path) {
    return load_manifest_info(path).clips;
}

}  // namespace polygraph
