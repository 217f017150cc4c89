#pragma once

// Synthetic ground-truth domain: languages with controllable combinatorial
// structure over a fixed primitive inventory, and a renderer for them.
//
// Segment layout: lengths are near-isochronous (L in [26,27]) and each
// segment's mean shape runs from its start level S to E = S + delta(1).
// What happens at a junction depends on the adjoining stroke directions:
//
//  - Opposite directions (rise->fall, ...): the junction is a natural
//    pitch extremum, which the zero-crossing detector finds on its own.
//    No register step is taken there: strokes share one swing amplitude,
//    so a reversal returns the level to its previous rung by itself, and
//    the next segment's window starts exactly at the turn apex. Keeping
//    these junctions stepless keeps segment-window curves free of
//    level-offset noise, which clustering on smoothed within-segment
//    curves cannot tolerate.
//  - Same direction (rise->rise, ...): no turn exists, so the junction
//    carries an overt counter-step against the chain's direction, sized
//    0.55-1.15 swings with a pull toward the cruise register. That keeps
//    the step far above the smoothed-noise wobble (always flipping the
//    smoothed slope) and makes chained levels a contraction around
//    cruise. The smoother spreads the step into an extremum pair
//    straddling the boundary; both members sit within a few samples of
//    it, so boundary positions are covered even though the candidate
//    gains one extra split there. Count-exact segmentations are
//    recovered downstream from the near-isochronous length rhythm, which
//    the sequence model learns.
//
// A 2-sample half-cosine blend joins each junction to the next shape;
// everything is kept kink-free on purpose: a sharp corner would ring under
// the smoother (its equivalent kernel has negative sidelobes), and the
// ringing plus observation-noise wobble straddles the detector's dead band.
// Mean prototypes share one swing amplitude and separate by direction and
// by sweep timing: fall/rise crossed with front-loaded/back-loaded bow
// (delta = +-swing * (u + bow*u*(1-u)), bow = +-0.3). Direction is a sign;
// the bow is a quadratic, which Gaussian-kernel smoothing preserves up to
// a constant, so both discriminants survive the mean-extraction scale.
// Every stroke keeps a nonzero pitch slope over the whole span, several
// wobble deviations wide, so the smoothed slope never flips sign away
// from a junction.
// Feature prototypes: none / slow wiggle / fast wiggle / noise burst,
// applied across the whole segment. Cycle counts per segment are pinned
// to distinct spectral bins of the time-normalized residual (about 5 /
// 6.5 / 8), with periods short enough that no smoothing scale tracks
// them, so the classes separate by clustering residual spectra.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "wlab/model.hpp"
#include "wlab/signal.hpp"

namespace wlab::synth {

inline constexpr double kSigmaObs = 0.01;
inline constexpr int kSegMin = 26;  // domain segment lengths (>= kLMin)
inline constexpr int kSegMax = 27;
// same-direction junction counter-step, in swing units: base size, pull
// toward cruise per unit of excursion, and clamp bounds
inline constexpr double kStepBase = 0.80;
inline constexpr double kStepDecay = 0.50;
inline constexpr double kStepMin = 0.55;
inline constexpr double kStepMax = 1.15;

struct PrototypeInventory {
    double cruise = 0.48;      // register chained levels contract toward
    double amp_swing = 0.225;  // shared end-to-end stroke amplitude
    double curve_bow = 0.30;   // sweep-timing bow (front/back-loaded)
    double wig_amp_slow = 0.04;
    double wig_amp_fast = 0.04;
    double noise_amp = 0.04;
    double cycles_slow = 5.25; // residual cycles per segment
    double cycles_fast = 6.5;
    double sigma_obs = kSigmaObs;
};

struct SyntheticLanguage {
    int id = 0;
    int chain = 0;
    int generation = 0;
    double combinatoriality = 0.0;
    BigramParams bigram;
    PrototypeInventory proto;
};

// (1-c) * uniform + c * single-dominant row; c=1 keeps mean row entropy
// well under 1 nat for k <= 4.
inline std::vector<double> sharpened_rows(int rows, int k, double c, Rng& rng) {
    std::vector<double> m(static_cast<std::size_t>(rows * k), (1.0 - c) / k);
    for (int r = 0; r < rows; ++r) {
        int dom = rng.index(static_cast<std::size_t>(k));
        for (int j = 0; j < k; ++j)
            m[static_cast<std::size_t>(r * k + j)] += c * (j == dom ? 0.85 : 0.15 / (k - 1));
    }
    return m;
}

inline SyntheticLanguage generate_language(std::uint64_t seed, double combinatoriality,
                                           int k_mean = 4, int k_feat = 4) {
    if (combinatoriality < 0 || combinatoriality > 1)
        throw FormatError("combinatoriality outside [0,1]");
    Rng rng(mix64(seed, fnv1a("language")));
    SyntheticLanguage lang;
    lang.combinatoriality = combinatoriality;
    const double c = combinatoriality;
    lang.bigram.init_m = sharpened_rows(1, k_mean, c, rng);
    lang.bigram.init_f = sharpened_rows(1, k_feat, c, rng);
    lang.bigram.init_o = sharpened_rows(1, 2, c, rng);
    lang.bigram.trans_m = sharpened_rows(k_mean, k_mean, c, rng);
    lang.bigram.trans_f = sharpened_rows(k_feat, k_feat, c, rng);
    lang.bigram.trans_o = sharpened_rows(2, 2, c, rng);
    lang.bigram.stop = rng.uniform(0.25, 0.40);
    validate_bigram(lang.bigram);

    PrototypeInventory& p = lang.proto;
    p.cruise = rng.uniform(0.46, 0.50);
    p.amp_swing = rng.uniform(0.22, 0.23);
    p.curve_bow = rng.uniform(0.29, 0.32);
    p.wig_amp_slow = rng.uniform(0.035, 0.045);
    p.wig_amp_fast = rng.uniform(0.035, 0.045);
    p.noise_amp = rng.uniform(0.035, 0.045);
    p.cycles_slow = rng.uniform(5.15, 5.35);
    p.cycles_fast = rng.uniform(6.35, 6.65);
    return lang;
}

// mean ids: 0 fall/front-loaded, 1 rise/front-loaded,
//           2 fall/back-loaded,  3 rise/back-loaded
inline int mean_dir(int i_mean) { return i_mean == 1 || i_mean == 3 ? 1 : -1; }

inline double mean_bow(const PrototypeInventory& p, int i_mean) {
    if (i_mean < 0 || i_mean > 3) throw FormatError("mean id out of inventory range");
    return i_mean < 2 ? p.curve_bow : -p.curve_bow;
}

inline double mean_delta(const PrototypeInventory& p, int i_mean, double u) {
    const double bow = mean_bow(p, i_mean);
    return mean_dir(i_mean) * p.amp_swing * (u + bow * u * (1.0 - u));
}

// |d delta / d u|: the local slope magnitude in span units
inline double mean_slope(const PrototypeInventory& p, int i_mean, double u) {
    return p.amp_swing * (1.0 + mean_bow(p, i_mean) * (1.0 - 2.0 * u));
}

// residual over a whole segment of n samples; phase/noise drawn from rng
inline std::vector<double> feature_residual(const PrototypeInventory& p, int i_feat, int n, Rng& rng) {
    std::vector<double> r(static_cast<std::size_t>(n), 0.0);
    if (i_feat == 0 || n == 0) return r;
    if (i_feat == 1 || i_feat == 2) {
        double amp = i_feat == 1 ? p.wig_amp_slow : p.wig_amp_fast;
        double cyc = i_feat == 1 ? p.cycles_slow : p.cycles_fast;
        double phase = rng.uniform(0.0, 6.283185307179586);
        for (int j = 0; j < n; ++j)
            r[static_cast<std::size_t>(j)] =
                amp * std::sin(6.283185307179586 * cyc * j / n + phase);
        return r;
    }
    if (i_feat == 3) {
        // random high cycle count per burst: above the wiggles' spectral
        // bins at every segment length, capped below the Nyquist count n/2
        double hi = std::max(7.7, std::min(7.95, 0.5 * n));
        double cyc = rng.uniform(7.7, hi);
        double phase = rng.uniform(0.0, 6.283185307179586);
        for (int j = 0; j < n; ++j)
            r[static_cast<std::size_t>(j)] =
                p.noise_amp * std::sin(6.283185307179586 * cyc * j / n + phase);
        return r;
    }
    throw FormatError("feature id out of inventory range");
}

struct SynthSample {
    Signal signal;
    Parse parse;
    Segmentation seg;
};

// Render a parse with fresh segment lengths, level jitters, feature phases,
// and observation noise. The parse (and so the boundary count) is fixed.
inline SynthSample render_parse(const PrototypeInventory& p, const Parse& z, Rng& rng) {
    const int n = z.size();
    if (n < 1) throw FormatError("empty parse");
    const int len_cap = std::min(kSegMax, kTMax / n);
    const int len_min = std::min(kSegMin, len_cap);
    std::vector<int> lens(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i)
        lens[static_cast<std::size_t>(i)] =
            len_min + static_cast<int>(rng.below(static_cast<std::uint64_t>(len_cap - len_min + 1)));

    // level chain: squeeze strokes that would leave the usable band, then
    // pick the junction step by the adjoining stroke directions
    std::vector<double> starts(static_cast<std::size_t>(n)), ends(static_cast<std::size_t>(n)),
        fac(static_cast<std::size_t>(n), 1.0);
    double level = p.cruise + rng.uniform(-0.02, 0.02);
    for (int i = 0; i < n; ++i) {
        const int cls = z.tuples[static_cast<std::size_t>(i)].mean;
        starts[static_cast<std::size_t>(i)] = level;
        const double net = mean_delta(p, cls, 1.0);
        double f = 1.0;
        if (level + net > 0.88) f = std::max(0.25, (0.88 - level) / net);
        if (level + net < 0.14) f = std::max(0.25, (level - 0.14) / -net);
        fac[static_cast<std::size_t>(i)] = f;
        const double E = level + f * net;
        ends[static_cast<std::size_t>(i)] = E;
        if (i + 1 == n) break;
        const int nxt = z.tuples[static_cast<std::size_t>(i + 1)].mean;
        double step = 0.0;
        if (mean_dir(cls) == mean_dir(nxt)) {
            const int dir = mean_dir(nxt);
            const double raw = kStepBase * p.amp_swing + kStepDecay * dir * (E - p.cruise);
            step = dir * std::clamp(raw, kStepMin * p.amp_swing, kStepMax * p.amp_swing);
        }
        level = E - step + rng.uniform(-0.008, 0.008);
    }

    SynthSample out;
    out.parse = z;
    out.seg.boundaries.push_back(0);
    for (int i = 0; i < n; ++i) {
        const Tuple& t = z.tuples[static_cast<std::size_t>(i)];
        const int L = lens[static_cast<std::size_t>(i)];
        const int lo = i == 0 ? 0 : 2;  // 2-sample blend from the previous end
        const int hi = L - 1;
        const double S = starts[static_cast<std::size_t>(i)];
        const double B0 = i > 0 ? ends[static_cast<std::size_t>(i - 1)] : 0.0;
        std::vector<double> res = feature_residual(p, t.feat, L, rng);
        for (int j = 0; j < L; ++j) {
            double m;
            if (j < lo) {
                double f = 0.5 - 0.5 * std::cos(3.14159265358979 * (j + 1) / 3.0);
                m = B0 + (S - B0) * f;
            } else {
                double u = hi > lo ? static_cast<double>(j - lo) / (hi - lo) : 1.0;
                m = S + fac[static_cast<std::size_t>(i)] * mean_delta(p, t.mean, u);
            }
            m += res[static_cast<std::size_t>(j)];
            m += p.sigma_obs > 0 ? rng.gaussian(0.0, p.sigma_obs) : 0.0;
            m = std::clamp(m, 0.05, 0.95);
            out.signal.samples.push_back({m, t.onoff == 1});
        }
        out.seg.boundaries.push_back(out.signal.length());
    }
    validate_signal(out.signal);
    validate_segmentation(out.seg, out.signal.length());
    return out;
}

inline SynthSample sample_signal(const SyntheticLanguage& lang, const PrototypeInventory& inventory,
                                 std::uint64_t seed) {
    Rng rng(mix64(seed, fnv1a("signal")));
    Parse z = sample_bigram(lang.bigram, kNMax, rng);
    return render_parse(inventory, z, rng);
}

inline SynthSample sample_signal(const SyntheticLanguage& lang, std::uint64_t seed) {
    return sample_signal(lang, lang.proto, seed);
}

// A reproduction: same parse, fresh surface realization.
inline SynthSample rerender(const SyntheticLanguage& lang, const Parse& z, std::uint64_t seed) {
    Rng rng(mix64(seed, fnv1a("rerender")));
    return render_parse(lang.proto, z, rng);
}

// ---------------------------------------------------------------------------
// Corpus generation

struct CorpusConfig {
    int n_languages = 100;
    int signals_per_language = 8;  // train split
    int test_per_language = 2;
    int reproductions = 1;         // per test signal
    int n_chains = 10;
    int generation_levels = 10;
    double c_min = 0.0;
    double c_max = 1.0;
    std::vector<double> schedule;  // per-language combinatoriality; linspace if empty
    std::uint64_t seed = 0;
};

inline std::vector<double> corpus_schedule(const CorpusConfig& cfg) {
    if (!cfg.schedule.empty()) {
        if (static_cast<int>(cfg.schedule.size()) != cfg.n_languages)
            throw FormatError("schedule length must equal n_languages");
        return cfg.schedule;
    }
    std::vector<double> s(static_cast<std::size_t>(cfg.n_languages));
    for (int i = 0; i < cfg.n_languages; ++i)
        s[static_cast<std::size_t>(i)] =
            cfg.n_languages > 1 ? cfg.c_min + (cfg.c_max - cfg.c_min) * i / (cfg.n_languages - 1)
                                : cfg.c_min;
    return s;
}

// generation label = rank of combinatoriality, quantized to generation_levels
inline std::vector<int> generation_labels(const std::vector<double>& schedule, int levels) {
    std::vector<std::size_t> order(schedule.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return schedule[a] < schedule[b]; });
    std::vector<int> gen(schedule.size());
    for (std::size_t r = 0; r < order.size(); ++r)
        gen[order[r]] = 1 + static_cast<int>(r * static_cast<std::size_t>(levels) / order.size());
    for (int& g : gen) g = std::min(g, levels);
    return gen;
}

inline nlohmann::ordered_json language_to_json(const SyntheticLanguage& lang) {
    nlohmann::ordered_json j;
    j["id"] = lang.id;
    j["chain"] = lang.chain;
    j["generation"] = lang.generation;
    j["combinatoriality"] = lang.combinatoriality;
    j["bigram"] = {{"init_m", lang.bigram.init_m}, {"init_f", lang.bigram.init_f},
                   {"init_o", lang.bigram.init_o}, {"trans_m", lang.bigram.trans_m},
                   {"trans_f", lang.bigram.trans_f}, {"trans_o", lang.bigram.trans_o},
                   {"stop", lang.bigram.stop}};
    const PrototypeInventory& p = lang.proto;
    j["proto"] = {{"cruise", p.cruise},
                  {"amp_swing", p.amp_swing},
                  {"curve_bow", p.curve_bow},
                  {"wig_amp_slow", p.wig_amp_slow},
                  {"wig_amp_fast", p.wig_amp_fast},
                  {"noise_amp", p.noise_amp},
                  {"cycles_slow", p.cycles_slow},
                  {"cycles_fast", p.cycles_fast},
                  {"sigma_obs", p.sigma_obs}};
    return j;
}

inline SyntheticLanguage language_from_json(const nlohmann::json& j) {
    SyntheticLanguage lang;
    lang.id = j.at("id").get<int>();
    lang.chain = j.at("chain").get<int>();
    lang.generation = j.at("generation").get<int>();
    lang.combinatoriality = j.at("combinatoriality").get<double>();
    const auto& b = j.at("bigram");
    lang.bigram.init_m = b.at("init_m").get<std::vector<double>>();
    lang.bigram.init_f = b.at("init_f").get<std::vector<double>>();
    lang.bigram.init_o = b.at("init_o").get<std::vector<double>>();
    lang.bigram.trans_m = b.at("trans_m").get<std::vector<double>>();
    lang.bigram.trans_f = b.at("trans_f").get<std::vector<double>>();
    lang.bigram.trans_o = b.at("trans_o").get<std::vector<double>>();
    lang.bigram.stop = b.at("stop").get<double>();
    validate_bigram(lang.bigram);
    const auto& p = j.at("proto");
    lang.proto.cruise = p.at("cruise").get<double>();
    lang.proto.amp_swing = p.at("amp_swing").get<double>();
    lang.proto.curve_bow = p.at("curve_bow").get<double>();
    lang.proto.wig_amp_slow = p.at("wig_amp_slow").get<double>();
    lang.proto.wig_amp_fast = p.at("wig_amp_fast").get<double>();
    lang.proto.noise_amp = p.at("noise_amp").get<double>();
    lang.proto.cycles_slow = p.at("cycles_slow").get<double>();
    lang.proto.cycles_fast = p.at("cycles_fast").get<double>();
    lang.proto.sigma_obs = p.at("sigma_obs").get<double>();
    return lang;
}

inline void save_languages(const std::vector<SyntheticLanguage>& langs, const std::string& path) {
    nlohmann::ordered_json arr = nlohmann::ordered_json::array();
    for (const auto& l : langs) arr.push_back(language_to_json(l));
    std::ofstream f(path);
    if (!f) throw FormatError("cannot write " + path);
    f << arr.dump(1) << "\n";
}

inline std::vector<SyntheticLanguage> load_languages(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw FormatError("cannot read " + path);
    nlohmann::json arr = nlohmann::json::parse(f);
    std::vector<SyntheticLanguage> langs;
    for (const auto& j : arr) langs.push_back(language_from_json(j));
    return langs;
}

inline std::string language_tag(int id) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "L%03d", id);
    return buf;
}

// Writes signals/, ground-truth parses, languages.json, and manifest.json
// under out_dir; returns the manifest.
inline DatasetManifest build_corpus(const CorpusConfig& cfg, const std::string& out_dir) {
    namespace fs = std::filesystem;
    DatasetManifest manifest;
    manifest.root = out_dir;
    if (cfg.signals_per_language <= 0 || cfg.n_languages <= 0) return manifest;

    fs::create_directories(fs::path(out_dir) / "signals");
    std::vector<double> schedule = corpus_schedule(cfg);
    std::vector<int> gens = generation_labels(schedule, cfg.generation_levels);

    std::vector<SyntheticLanguage> langs;
    langs.reserve(static_cast<std::size_t>(cfg.n_languages));
    for (int li = 0; li < cfg.n_languages; ++li) {
        SyntheticLanguage lang =
            generate_language(mix64(cfg.seed, static_cast<std::uint64_t>(li)), schedule[static_cast<std::size_t>(li)]);
        lang.id = li;
        lang.chain = li % cfg.n_chains;
        lang.generation = gens[static_cast<std::size_t>(li)];
        langs.push_back(std::move(lang));
    }
    save_languages(langs, (fs::path(out_dir) / "languages.json").string());

    auto emit = [&](const SyntheticLanguage& lang, const SynthSample& s, const std::string& id,
                    const std::string& split) {
        std::string rel = "signals/" + id + ".csv";
        save_signal(s.signal, (fs::path(out_dir) / rel).string());
        std::string parse_path = (fs::path(out_dir) / ("signals/" + id + ".parse.json")).string();
        save_parse(s.parse, parse_path);
        manifest.entries.push_back({id, lang.chain, lang.generation, lang.id, split, rel});
    };

    for (const auto& lang : langs) {
        Rng lrng = Rng(mix64(cfg.seed, fnv1a("corpus"))).fork(static_cast<std::uint64_t>(lang.id));
        for (int si = 0; si < cfg.signals_per_language; ++si) {
            char name[32];
            std::snprintf(name, sizeof name, "%s_s%02d", language_tag(lang.id).c_str(), si);
            emit(lang, sample_signal(lang, lrng.bits()), name, "train");
        }
        for (int ti = 0; ti < cfg.test_per_language; ++ti) {
            char name[32];
            std::snprintf(name, sizeof name, "%s_t%02d", language_tag(lang.id).c_str(), ti);
            SynthSample target = sample_signal(lang, lrng.bits());
            emit(lang, target, name, "test");
            for (int ri = 1; ri <= cfg.reproductions; ++ri) {
                std::string rep_name = std::string(name) + "_r" + std::to_string(ri);
                emit(lang, rerender(lang, target.parse, lrng.bits()), rep_name, "test");
            }
        }
    }
    save_manifest(manifest, (fs::path(out_dir) / "manifest.json").string());
    return manifest;
}

} // namespace wlab::synth
