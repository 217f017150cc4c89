#pragma once

// Core data types for whistled-signal modeling: Signal, Segmentation, Parse,
// dataset manifests, and their file formats (CSV for signals, JSON for the
// rest).

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "wlab/common.hpp"

namespace wlab {

inline constexpr int kTMax = 256;  // maximum signal length in samples
inline constexpr int kLMin = 5;    // minimum segment length
inline constexpr int kNMax = 8;    // maximum number of segments per parse

struct Sample {
    double pitch = 0.0;  // normalized to [0,1]
    bool audible = true;

    bool operator==(const Sample&) const = default;
};

// A discrete-time pitch trajectory with per-sample audibility.
struct Signal {
    std::vector<Sample> samples;

    int length() const { return static_cast<int>(samples.size()); }
    double pitch(int t) const { return samples[static_cast<std::size_t>(t)].pitch; }
    bool audible(int t) const { return samples[static_cast<std::size_t>(t)].audible; }

    std::vector<double> pitches() const {
        std::vector<double> p(samples.size());
        for (std::size_t i = 0; i < samples.size(); ++i) p[i] = samples[i].pitch;
        return p;
    }

    bool operator==(const Signal&) const = default;
};

inline void validate_signal(const Signal& s) {
    const int t = s.length();
    if (t < 1 || t > kTMax)
        throw FormatError("signal length " + std::to_string(t) + " outside [1," + std::to_string(kTMax) + "]");
    for (int i = 0; i < t; ++i) {
        double p = s.pitch(i);
        if (!std::isfinite(p) || p < 0.0 || p > 1.0)
            throw FormatError("pitch " + std::to_string(p) + " at t=" + std::to_string(i) + " outside [0,1]");
    }
}

// Boundary indices b_0=0 < b_1 < ... < b_N = T. Every segment must be at
// least kLMin long, except that the trivial one-segment [0,T] is always
// admissible (short signals are parsed as a single segment by fiat).
struct Segmentation {
    std::vector<int> boundaries;

    int segments() const { return static_cast<int>(boundaries.size()) - 1; }
    int begin(int n) const { return boundaries[static_cast<std::size_t>(n)]; }
    int end(int n) const { return boundaries[static_cast<std::size_t>(n) + 1]; }
    int seg_len(int n) const { return end(n) - begin(n); }

    bool operator==(const Segmentation&) const = default;
};

inline bool segmentation_ok(const Segmentation& seg, int signal_len) {
    const auto& b = seg.boundaries;
    if (b.size() < 2 || b.front() != 0 || b.back() != signal_len) return false;
    for (std::size_t i = 1; i < b.size(); ++i)
        if (b[i] <= b[i - 1]) return false;
    if (b.size() == 2) return true;  // single segment always valid
    for (std::size_t i = 1; i < b.size(); ++i)
        if (b[i] - b[i - 1] < kLMin) return false;
    return true;
}

inline void validate_segmentation(const Segmentation& seg, int signal_len) {
    if (!segmentation_ok(seg, signal_len))
        throw FormatError("invalid segmentation for signal of length " + std::to_string(signal_len));
}

// One segment-level primitive tuple: mean contour id, feature id, on/off id.
struct Tuple {
    int mean = 0;
    int feat = 0;
    int onoff = 1;

    bool operator==(const Tuple&) const = default;
    auto operator<=>(const Tuple&) const = default;
};

struct Parse {
    std::vector<Tuple> tuples;

    int size() const { return static_cast<int>(tuples.size()); }

    bool operator==(const Parse&) const = default;
    auto operator<=>(const Parse&) const = default;
};

inline void validate_parse(const Parse& z, int n_mean, int n_feat, int n_max = kNMax) {
    if (z.size() < 1 || z.size() > n_max)
        throw FormatError("parse length " + std::to_string(z.size()) + " outside [1," + std::to_string(n_max) + "]");
    for (const auto& u : z.tuples) {
        if (u.mean < 0 || u.mean >= n_mean) throw FormatError("mean id " + std::to_string(u.mean) + " out of range");
        if (u.feat < 0 || u.feat >= n_feat) throw FormatError("feature id " + std::to_string(u.feat) + " out of range");
        if (u.onoff != 0 && u.onoff != 1) throw FormatError("on/off id " + std::to_string(u.onoff) + " out of range");
    }
}

// --------------------------------------------------------------------------
// Signal CSV: header "t,pitch,audible"; rows "int,%.6f,0|1"; t contiguous
// from 0.

inline void save_signal(const Signal& s, const std::string& path) {
    validate_signal(s);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot write " + path);
    out << "t,pitch,audible\n";
    char row[64];
    for (int t = 0; t < s.length(); ++t) {
        std::snprintf(row, sizeof(row), "%d,%.6f,%d\n", t, s.pitch(t), s.audible(t) ? 1 : 0);
        out << row;
    }
    if (!out) throw FormatError("write failed for " + path);
}

inline Signal load_signal(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path);
    std::string line;
    if (!std::getline(in, line)) throw FormatError(path + ": empty file");
    if (line.size() && line.back() == '\r') line.pop_back();
    if (line != "t,pitch,audible") throw FormatError(path + ": bad header '" + line + "'");
    Signal s;
    int row = 0;
    while (std::getline(in, line)) {
        if (line.size() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        int t = -1, aud = -1;
        double pitch = 0;
        if (std::sscanf(line.c_str(), "%d,%lf,%d", &t, &pitch, &aud) != 3)
            throw FormatError(path + ": malformed row " + std::to_string(row));
        if (t != row) throw FormatError(path + ": non-contiguous t at row " + std::to_string(row));
        if (!(pitch >= 0.0 && pitch <= 1.0))
            throw FormatError(path + ": pitch out of [0,1] at row " + std::to_string(row));
        if (aud != 0 && aud != 1) throw FormatError(path + ": bad audible flag at row " + std::to_string(row));
        s.samples.push_back({pitch, aud == 1});
        ++row;
        if (row > kTMax) throw FormatError(path + ": more than " + std::to_string(kTMax) + " samples");
    }
    validate_signal(s);
    return s;
}

// Splits a signal along segmentation boundaries; segment n covers samples
// [b_{n-1}, b_n). Concatenating the result reproduces the input exactly.
inline std::vector<Signal> apply_segmentation(const Signal& s, const Segmentation& seg) {
    validate_segmentation(seg, s.length());
    std::vector<Signal> out;
    out.reserve(static_cast<std::size_t>(seg.segments()));
    for (int n = 0; n < seg.segments(); ++n) {
        Signal piece;
        piece.samples.assign(s.samples.begin() + seg.begin(n), s.samples.begin() + seg.end(n));
        out.push_back(std::move(piece));
    }
    return out;
}

// --------------------------------------------------------------------------
// Parse JSON: {"tuples": [[i_m, i_f, i_o], ...]}

inline nlohmann::ordered_json parse_to_json(const Parse& z) {
    nlohmann::ordered_json j;
    auto& arr = j["tuples"] = nlohmann::ordered_json::array();
    for (const auto& u : z.tuples) arr.push_back({u.mean, u.feat, u.onoff});
    return j;
}

inline Parse parse_from_json(const nlohmann::json& j) {
    Parse z;
    for (const auto& t : j.at("tuples")) {
        if (!t.is_array() || t.size() != 3) throw FormatError("parse tuple must have 3 entries");
        z.tuples.push_back({t[0].get<int>(), t[1].get<int>(), t[2].get<int>()});
    }
    return z;
}

inline void save_parse(const Parse& z, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot write " + path);
    out << parse_to_json(z).dump(2) << "\n";
}

inline Parse load_parse(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path);
    nlohmann::json j;
    in >> j;
    return parse_from_json(j);
}

// --------------------------------------------------------------------------
// Dataset manifest

struct ManifestEntry {
    std::string id;
    int chain = 0;
    int generation = 0;
    int language = 0;
    std::string split;  // train | test | challenge
    std::string path;   // signal CSV, relative to the manifest directory
};

struct DatasetManifest {
    std::vector<ManifestEntry> entries;
    std::string root;  // directory the paths are relative to

    std::string signal_path(const ManifestEntry& e) const {
        return (std::filesystem::path(root) / e.path).string();
    }
    // Ground-truth parse convention: "<signal path minus .csv>.parse.json".
    std::string parse_path(const ManifestEntry& e) const {
        std::filesystem::path p = std::filesystem::path(root) / e.path;
        p.replace_extension();
        return p.string() + ".parse.json";
    }
};

// The id of the underlying signal: reproductions are named "<base>_rK".
inline std::string group_id(const std::string& id) {
    auto pos = id.rfind("_r");
    if (pos == std::string::npos) return id;
    for (std::size_t i = pos + 2; i < id.size(); ++i)
        if (!std::isdigit(static_cast<unsigned char>(id[i]))) return id;
    return pos + 2 < id.size() ? id.substr(0, pos) : id;
}

inline void save_manifest(const DatasetManifest& m, const std::string& path) {
    nlohmann::ordered_json arr = nlohmann::ordered_json::array();
    for (const auto& e : m.entries) {
        arr.push_back({{"id", e.id},
                       {"chain", e.chain},
                       {"generation", e.generation},
                       {"language", e.language},
                       {"split", e.split},
                       {"path", e.path}});
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot write " + path);
    out << arr.dump(2) << "\n";
}

inline DatasetManifest load_manifest(const std::string& path, bool check_files = true) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path);
    nlohmann::json arr;
    in >> arr;
    if (!arr.is_array()) throw FormatError(path + ": manifest must be a JSON array");
    DatasetManifest m;
    m.root = std::filesystem::path(path).parent_path().string();
    std::vector<std::string> ids;
    for (const auto& j : arr) {
        ManifestEntry e;
        e.id = j.at("id").get<std::string>();
        e.chain = j.at("chain").get<int>();
        e.generation = j.at("generation").get<int>();
        e.language = j.at("language").get<int>();
        e.split = j.at("split").get<std::string>();
        e.path = j.at("path").get<std::string>();
        if (e.split != "train" && e.split != "test" && e.split != "challenge")
            throw FormatError(path + ": bad split '" + e.split + "' for id " + e.id);
        ids.push_back(e.id);
        m.entries.push_back(std::move(e));
    }
    std::sort(ids.begin(), ids.end());
    if (std::adjacent_find(ids.begin(), ids.end()) != ids.end())
        throw FormatError(path + ": duplicate signal ids");
    if (check_files) {
        for (const auto& e : m.entries) load_signal(m.signal_path(e));
    }
    return m;
}

inline std::uint64_t signal_content_hash(const Signal& s) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (const auto& smp : s.samples) {
        // hash the serialized 6-decimal form so equality matches file round trips
        long long q = std::llround(smp.pitch * 1e6);
        h = fnv1a(&q, sizeof(q), h);
        unsigned char a = smp.audible ? 1 : 0;
        h = fnv1a(&a, 1, h);
    }
    return h;
}

} // namespace wlab
