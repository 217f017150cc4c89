#pragma once

// Importance-sampling inference over parses, predictive-posterior scoring,
// and the two classification tasks (signal-level, language-level).
//
// All entry points are pure given (params, inputs, seed). Per-signal seeds
// inside classification are derived from content hashes, so candidate order
// cannot change any score: shuffling candidates permutes the posterior
// bit-exactly.

#include <cmath>
#include <cstdio>
#include <vector>

#include "wlab/recognition.hpp"

namespace wlab::infer {

struct WeightedParse {
    Parse parse;
    Segmentation seg;
    double weight = 0.0;
};

struct WeightedParses {
    std::vector<WeightedParse> items;  // weights sum to 1
};

inline std::string signal_label(const Signal& x) {
    char buf[24];
    std::snprintf(buf, sizeof buf, "%016llx",
                  static_cast<unsigned long long>(signal_content_hash(x)));
    return buf;
}

// -inf outside the prior's length support (proposals from a cold segmenter
// can exceed n_max; they carry zero posterior mass, not an error)
inline double joint_logprob(const nn::ParamStore& ps, const ModelConfig& cfg, const Parse& z,
                            const Signal& x, const Segmentation& s) {
    if (z.size() < 1 || z.size() > cfg.n_max) return -INFINITY;
    return gen::prior_logprob(ps, cfg, z) + gen::render_signal_logprob(ps, cfg, z, x, s);
}

// K proposals from the recognizer, weighted by p(z) p(x,s|z) / q(z,s|x) and
// normalized; -inf joints get weight zero.
inline WeightedParses importance_infer(const nn::ParamStore& ps, const ModelConfig& cfg,
                                       const Signal& x, int k_draws, double pi, std::uint64_t seed,
                                       const seg::FilterScaleSet& scales =
                                           seg::FilterScaleSet::standard()) {
    if (k_draws < 1) throw InferenceError("importance sampling needs at least one draw");
    auto props = rec::propose_parse(ps, cfg, x, k_draws, pi, seed, scales);
    std::vector<double> lw(props.size());
    for (std::size_t i = 0; i < props.size(); ++i) {
        double joint = joint_logprob(ps, cfg, props[i].parse, x, props[i].seg);
        lw[i] = std::isfinite(joint) ? joint - props[i].logprob : -INFINITY;
    }
    double lse = logsumexp(lw);
    if (!std::isfinite(lse))
        throw InferenceError("inference degenerate: every proposal scored -inf for signal " +
                             signal_label(x));
    WeightedParses out;
    out.items.reserve(props.size());
    for (std::size_t i = 0; i < props.size(); ++i)
        out.items.push_back({std::move(props[i].parse), std::move(props[i].seg),
                             std::isfinite(lw[i]) ? std::exp(lw[i] - lse) : 0.0});
    return out;
}

// Segmentation proposals for likelihood scoring: the filtering candidates
// plus deduplicated neural samples, covering the plausible segment counts.
inline std::vector<Segmentation> likelihood_proposals(const nn::ParamStore& ps, const Signal& x,
                                                      double pi, int n_neural, std::uint64_t seed,
                                                      const seg::FilterScaleSet& scales =
                                                          seg::FilterScaleSet::standard()) {
    std::vector<Segmentation> out;
    for (auto& c : seg::propose_filtering(x, scales)) out.push_back(std::move(c.seg));
    if (pi < 1 && n_neural > 0) {
        Rng rng(mix64(seed, fnv1a("likelihood-proposals")));
        for (int i = 0; i < n_neural; ++i) {
            auto prop = seg::neural_segment(ps, x, rng);
            if (std::find(out.begin(), out.end(), prop.seg) == out.end())
                out.push_back(std::move(prop.seg));
        }
    }
    return out;
}

// log sum_k w_k p(x'|z_k); -inf likelihoods contribute zero mass, and the
// all--inf case returns the -inf sentinel (candidate impossible).
inline double predictive_score(const nn::ParamStore& ps, const ModelConfig& cfg,
                               const WeightedParses& weighted, const Signal& x_new,
                               const std::vector<Segmentation>& proposals) {
    std::vector<double> terms;
    terms.reserve(weighted.items.size());
    for (const auto& wp : weighted.items) {
        if (wp.weight <= 0) continue;
        double lp = gen::likelihood(ps, cfg, wp.parse, x_new, proposals).logprob;
        if (std::isfinite(lp)) terms.push_back(std::log(wp.weight) + lp);
    }
    return terms.empty() ? -INFINITY : logsumexp(terms);
}

struct ClassifyResult {
    int choice = 0;
    std::vector<double> posterior;
    bool degenerate = false;  // every candidate scored -inf; posterior is uniform
};

inline ClassifyResult posterior_from_scores(const std::vector<double>& scores) {
    ClassifyResult r;
    const std::size_t n = scores.size();
    double lse = logsumexp(scores);
    r.posterior.assign(n, 1.0 / static_cast<double>(n));
    if (std::isfinite(lse)) {
        for (std::size_t i = 0; i < n; ++i)
            r.posterior[i] = std::isfinite(scores[i]) ? std::exp(scores[i] - lse) : 0.0;
    } else {
        r.degenerate = true;
    }
    for (std::size_t i = 1; i < n; ++i)
        if (r.posterior[i] > r.posterior[static_cast<std::size_t>(r.choice)])
            r.choice = static_cast<int>(i);
    return r;
}

// Which candidate continues the target's underlying parse? Posterior over
// candidates proportional to exp(predictive score).
inline ClassifyResult classify(const nn::ParamStore& ps, const ModelConfig& cfg, const Signal& x,
                               const std::vector<Signal>& candidates, int k_draws, double pi,
                               std::uint64_t seed, int n_neural = 6,
                               const seg::FilterScaleSet& scales = seg::FilterScaleSet::standard()) {
    if (candidates.size() < 2) throw InferenceError("classification needs at least two candidates");
    auto weighted =
        importance_infer(ps, cfg, x, k_draws, pi, mix64(seed, signal_content_hash(x)), scales);
    std::vector<double> scores(candidates.size());
    for (std::size_t c = 0; c < candidates.size(); ++c) {
        std::uint64_t cand_seed = mix64(seed, signal_content_hash(candidates[c]));
        auto props = likelihood_proposals(ps, candidates[c], pi, n_neural, cand_seed, scales);
        scores[c] = predictive_score(ps, cfg, weighted, candidates[c], props);
    }
    return posterior_from_scores(scores);
}

// Which candidate signal belongs to the language of the target set? Targets
// are parsed with the single-signal model, the language posterior is encoded
// from their best parses, and each candidate is scored by the expected
// conditional prior mass of its own weighted parses under sampled codes.
inline ClassifyResult classify_language(const nn::ParamStore& ps, const ModelConfig& cfg,
                                        const std::vector<Signal>& targets,
                                        const std::vector<Signal>& candidates, int k_draws,
                                        double pi, std::uint64_t seed, int n_code_samples = 16,
                                        const seg::FilterScaleSet& scales =
                                            seg::FilterScaleSet::standard()) {
    if (targets.empty()) throw InferenceError("language classification needs target signals");
    if (candidates.size() < 2) throw InferenceError("classification needs at least two candidates");
    std::vector<Parse> best;
    best.reserve(targets.size());
    for (const Signal& t : targets) {
        auto weighted =
            importance_infer(ps, cfg, t, k_draws, pi, mix64(seed, signal_content_hash(t)), scales);
        std::size_t arg = 0;
        for (std::size_t i = 1; i < weighted.items.size(); ++i)
            if (weighted.items[i].weight > weighted.items[arg].weight) arg = i;
        best.push_back(std::move(weighted.items[arg].parse));
    }
    auto post = rec::encode_language(ps, cfg, best);
    std::vector<std::vector<double>> codes;
    codes.reserve(static_cast<std::size_t>(n_code_samples));
    for (int s = 0; s < n_code_samples; ++s)
        codes.push_back(rec::reparam_sample(post, mix64(seed, static_cast<std::uint64_t>(s))));
    const double log_s = std::log(static_cast<double>(n_code_samples));
    std::vector<double> scores(candidates.size(), -INFINITY);
    for (std::size_t c = 0; c < candidates.size(); ++c) {
        std::uint64_t cand_seed = mix64(seed, signal_content_hash(candidates[c]));
        WeightedParses weighted;
        try {
            weighted = importance_infer(ps, cfg, candidates[c], k_draws, pi, cand_seed, scales);
        } catch (const InferenceError&) {
            continue;  // unparseable candidate scores -inf
        }
        std::vector<double> terms;
        for (const auto& code : codes)
            for (const auto& wp : weighted.items) {
                if (wp.weight <= 0) continue;
                terms.push_back(std::log(wp.weight) - log_s +
                                gen::conditional_prior_logprob(ps, cfg, code, wp.parse));
            }
        if (!terms.empty()) scores[c] = logsumexp(terms);
    }
    return posterior_from_scores(scores);
}

} // namespace wlab::infer
