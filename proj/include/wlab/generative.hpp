#pragma once

// Top-down model: LSTM parse prior p(z), neural renderer likelihood
// p(x,s|z) with max-over-proposals approximation, signal sampling, the
// standard-normal language prior p(l), and the conditional bigram prior
// p(z|l) produced by an affine map from the language code.
//
// Length normalization: both priors use an explicit stop Bernoulli after
// each step's ids, with the stop forced (probability 1) at n_max, so parse
// probabilities sum to 1 over lengths 1..n_max exactly.

#include <cmath>
#include <vector>

#include "wlab/model.hpp"

namespace wlab::gen {

// ---------------------------------------------------------------------------
// Parse prior

inline nn::NodeId prior_logprob_node(nn::Tape& tp, const nn::ParamStore& ps, const ModelConfig& cfg,
                                     const Parse& z) {
    validate_parse(cfg, z);
    auto cell = nn::lstm_ref(tp, ps, "prior.lstm", cfg.prior_hidden);
    nn::NodeId hw = tp.param(ps, "prior.head.W");
    nn::NodeId hb = tp.param(ps, "prior.head.b");
    auto st = nn::lstm_zero_state(tp, cfg.prior_hidden);
    nn::NodeId input = tp.zeros_input(cfg.tuple_onehot_dim());
    std::vector<nn::NodeId> terms;
    const int n = z.size();
    for (int i = 0; i < n; ++i) {
        st = nn::lstm_step(tp, cell, input, st);
        nn::NodeId head = tp.affine(hw, hb, st.h);
        const Tuple& t = z.tuples[static_cast<std::size_t>(i)];
        terms.push_back(tp.cat_logmass(tp.slice(head, 0, cfg.k_mean), t.mean));
        terms.push_back(tp.cat_logmass(tp.slice(head, cfg.k_mean, cfg.k_feat), t.feat));
        terms.push_back(tp.cat_logmass(tp.slice(head, cfg.k_mean + cfg.k_feat, 2), t.onoff));
        if (i + 1 < cfg.n_max)
            terms.push_back(tp.bern_logmass(head, cfg.k_mean + cfg.k_feat + 2, i + 1 == n));
        if (i + 1 < n) input = tp.input(tuple_onehot(cfg, t));
    }
    return nn::sum_scalars(tp, terms);
}

inline double prior_logprob(const nn::ParamStore& ps, const ModelConfig& cfg, const Parse& z) {
    nn::Tape tp(false);
    return tp.value(prior_logprob_node(tp, ps, cfg, z));
}

inline Parse sample_prior(const nn::ParamStore& ps, const ModelConfig& cfg, Rng& rng) {
    nn::Tape tp(false);
    auto cell = nn::lstm_ref(tp, ps, "prior.lstm", cfg.prior_hidden);
    nn::NodeId hw = tp.param(ps, "prior.head.W");
    nn::NodeId hb = tp.param(ps, "prior.head.b");
    auto st = nn::lstm_zero_state(tp, cfg.prior_hidden);
    nn::NodeId input = tp.zeros_input(cfg.tuple_onehot_dim());
    Parse z;
    auto sample_cat = [&](const double* logits, int k) {
        std::vector<double> w(static_cast<std::size_t>(k));
        double m = logits[0];
        for (int i = 1; i < k; ++i) m = std::max(m, logits[i]);
        for (int i = 0; i < k; ++i) w[static_cast<std::size_t>(i)] = std::exp(logits[i] - m);
        return rng.categorical(w);
    };
    for (int i = 0; i < cfg.n_max; ++i) {
        st = nn::lstm_step(tp, cell, input, st);
        nn::NodeId head = tp.affine(hw, hb, st.h);
        const double* hv = tp.values(head);
        Tuple t;
        t.mean = sample_cat(hv, cfg.k_mean);
        t.feat = sample_cat(hv + cfg.k_mean, cfg.k_feat);
        t.onoff = sample_cat(hv + cfg.k_mean + cfg.k_feat, 2);
        z.tuples.push_back(t);
        if (i + 1 >= cfg.n_max) break;
        double stop_p = 1.0 / (1.0 + std::exp(-hv[cfg.k_mean + cfg.k_feat + 2]));
        if (rng.bernoulli(stop_p)) break;
        input = tp.input(tuple_onehot(cfg, t));
    }
    return z;
}

// ---------------------------------------------------------------------------
// Renderer

// log p(segment pitches, segment length, audibility | tuple, continuity).
// continuity = last pitch of the previous segment (0.5 for the first).
inline nn::NodeId render_segment_logprob_node(nn::Tape& tp, const nn::ParamStore& ps,
                                              const ModelConfig& cfg, const Tuple& t,
                                              const Signal& x, int begin, int end,
                                              double continuity) {
    if (end <= begin || begin < 0 || end > x.length()) throw FormatError("bad segment bounds");
    if (t.mean < 0 || t.mean >= cfg.k_mean || t.feat < 0 || t.feat >= cfg.k_feat || t.onoff < 0 ||
        t.onoff > 1)
        throw FormatError("tuple index out of inventory range");
    auto cell = nn::lstm_ref(tp, ps, "rend.lstm", cfg.renderer_hidden);
    nn::NodeId hw = tp.param(ps, "rend.head.W");
    nn::NodeId hb = tp.param(ps, "rend.head.b");
    nn::NodeId emb = tp.concat(tp.emb_row(tp.param(ps, "rend.emb_m"), t.mean, cfg.emb_dim),
                               tp.emb_row(tp.param(ps, "rend.emb_f"), t.feat, cfg.emb_dim));
    auto st = nn::lstm_zero_state(tp, cfg.renderer_hidden);
    std::vector<nn::NodeId> terms;
    double prev = continuity;
    for (int u = begin; u < end; ++u) {
        st = nn::lstm_step(tp, cell, tp.concat(emb, tp.scalar_input(prev)), st);
        nn::NodeId head = tp.affine(hw, hb, st.h);
        terms.push_back(tp.gauss_obs(head, 0, x.pitch(u)));
        terms.push_back(tp.bern_logmass(head, 2, u == end - 1));
        prev = x.pitch(u);
    }
    int audible_count = 0;
    for (int u = begin; u < end; ++u) audible_count += x.audible(u) ? 1 : 0;
    int majority = 2 * audible_count >= end - begin ? 1 : 0;
    terms.push_back(tp.bern_logmass(tp.param(ps, "rend.aud"), t.onoff, majority));
    return nn::sum_scalars(tp, terms);
}

inline double render_segment_logprob(const nn::ParamStore& ps, const ModelConfig& cfg,
                                     const Tuple& t, const Signal& x, int begin, int end,
                                     double continuity) {
    nn::Tape tp(false);
    return tp.value(render_segment_logprob_node(tp, ps, cfg, t, x, begin, end, continuity));
}

inline double segment_continuity(const Signal& x, const Segmentation& s, int n) {
    return n == 0 ? 0.5 : x.pitch(s.begin(n) - 1);
}

// log p(x, s | z) for one segmentation with matching segment count
inline nn::NodeId render_signal_logprob_node(nn::Tape& tp, const nn::ParamStore& ps,
                                             const ModelConfig& cfg, const Parse& z,
                                             const Signal& x, const Segmentation& s) {
    if (s.segments() != z.size()) throw InferenceError("segment count does not match parse length");
    std::vector<nn::NodeId> terms;
    for (int n = 0; n < s.segments(); ++n)
        terms.push_back(render_segment_logprob_node(tp, ps, cfg, z.tuples[static_cast<std::size_t>(n)],
                                                    x, s.begin(n), s.end(n), segment_continuity(x, s, n)));
    return nn::sum_scalars(tp, terms);
}

inline double render_signal_logprob(const nn::ParamStore& ps, const ModelConfig& cfg,
                                    const Parse& z, const Signal& x, const Segmentation& s) {
    nn::Tape tp(false);
    return tp.value(render_signal_logprob_node(tp, ps, cfg, z, x, s));
}

struct LikelihoodResult {
    double logprob = -INFINITY;  // -inf when no proposal matches the parse length
    int best = -1;               // index into the proposal list, -1 when none match
};

// p(x|z) ~= max_s p(x,s|z) over proposals whose segment count equals len(z);
// ties keep the first index.
inline LikelihoodResult likelihood(const nn::ParamStore& ps, const ModelConfig& cfg, const Parse& z,
                                   const Signal& x, const std::vector<Segmentation>& proposals) {
    if (proposals.empty()) throw InferenceError("empty segmentation proposal list");
    validate_parse(cfg, z);
    LikelihoodResult r;
    for (std::size_t i = 0; i < proposals.size(); ++i) {
        const Segmentation& s = proposals[i];
        if (s.segments() != z.size()) continue;
        double lp = render_signal_logprob(ps, cfg, z, x, s);
        if (lp > r.logprob) {
            r.logprob = lp;
            r.best = static_cast<int>(i);
        }
    }
    return r;
}

// Ancestral sampling: per-segment pitch/end-flag chains (segment length
// capped), per-segment audibility; trailing segments truncated at T_max.
inline Signal sample_signal_from_parse(const nn::ParamStore& ps, const ModelConfig& cfg,
                                       const Parse& z, Rng& rng) {
    validate_parse(cfg, z);
    nn::Tape tp(false);
    auto cell = nn::lstm_ref(tp, ps, "rend.lstm", cfg.renderer_hidden);
    nn::NodeId hw = tp.param(ps, "rend.head.W");
    nn::NodeId hb = tp.param(ps, "rend.head.b");
    const double* aud = tp.values(tp.param(ps, "rend.aud"));
    Signal out;
    double prev = 0.5;
    for (const Tuple& t : z.tuples) {
        if (out.length() >= kTMax) break;
        nn::NodeId emb = tp.concat(tp.emb_row(tp.param(ps, "rend.emb_m"), t.mean, cfg.emb_dim),
                                   tp.emb_row(tp.param(ps, "rend.emb_f"), t.feat, cfg.emb_dim));
        bool audible = rng.bernoulli(1.0 / (1.0 + std::exp(-aud[t.onoff])));
        auto st = nn::lstm_zero_state(tp, cfg.renderer_hidden);
        for (int step = 0;; ++step) {
            st = nn::lstm_step(tp, cell, tp.concat(emb, tp.scalar_input(prev)), st);
            const double* hv = tp.values(tp.affine(hw, hb, st.h));
            double sigma = std::exp(nn::bounded_log_sigma(hv[1]));
            double pitch = std::clamp(rng.gaussian(hv[0], sigma), 0.0, 1.0);
            out.samples.push_back({pitch, audible});
            prev = pitch;
            if (out.length() >= kTMax || step + 1 >= cfg.seg_sample_cap) break;
            if (step + 1 >= kLMin && rng.bernoulli(1.0 / (1.0 + std::exp(-hv[2])))) break;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Language prior and conditional bigram prior

inline double language_prior_logprob(const std::vector<double>& code) {
    double acc = 0;
    for (double v : code) acc += v * v;
    return -0.918938533204672742 * static_cast<double>(code.size()) - 0.5 * acc;
}

struct MapOffsets {
    int init_m, init_f, init_o, trans_m, trans_f, trans_o, stop;
};

inline MapOffsets map_offsets(const ModelConfig& cfg) {
    MapOffsets o;
    o.init_m = 0;
    o.init_f = o.init_m + cfg.k_mean;
    o.init_o = o.init_f + cfg.k_feat;
    o.trans_m = o.init_o + 2;
    o.trans_f = o.trans_m + cfg.k_mean * cfg.k_mean;
    o.trans_o = o.trans_f + cfg.k_feat * cfg.k_feat;
    o.stop = o.trans_o + 4;
    return o;
}

// log p(z | l) on the caller's tape; code may be any differentiable node of
// dim lang_dim (reparameterized sample during training).
inline nn::NodeId conditional_prior_logprob_node(nn::Tape& tp, const nn::ParamStore& ps,
                                                 const ModelConfig& cfg, nn::NodeId code,
                                                 const Parse& z) {
    validate_parse(cfg, z);
    nn::NodeId out = tp.affine(tp.param(ps, "map.W"), tp.param(ps, "map.b"), code);
    const MapOffsets off = map_offsets(cfg);
    std::vector<nn::NodeId> terms;
    const int n = z.size();
    for (int i = 0; i < n; ++i) {
        const Tuple& t = z.tuples[static_cast<std::size_t>(i)];
        if (i == 0) {
            terms.push_back(tp.cat_logmass(tp.slice(out, off.init_m, cfg.k_mean), t.mean));
            terms.push_back(tp.cat_logmass(tp.slice(out, off.init_f, cfg.k_feat), t.feat));
            terms.push_back(tp.cat_logmass(tp.slice(out, off.init_o, 2), t.onoff));
        } else {
            const Tuple& p = z.tuples[static_cast<std::size_t>(i - 1)];
            terms.push_back(tp.cat_logmass(
                tp.slice(out, off.trans_m + p.mean * cfg.k_mean, cfg.k_mean), t.mean));
            terms.push_back(tp.cat_logmass(
                tp.slice(out, off.trans_f + p.feat * cfg.k_feat, cfg.k_feat), t.feat));
            terms.push_back(tp.cat_logmass(tp.slice(out, off.trans_o + p.onoff * 2, 2), t.onoff));
        }
        if (i + 1 < cfg.n_max) terms.push_back(tp.bern_logmass(out, off.stop, i + 1 == n));
    }
    return nn::sum_scalars(tp, terms);
}

inline double conditional_prior_logprob(const nn::ParamStore& ps, const ModelConfig& cfg,
                                        const std::vector<double>& code, const Parse& z) {
    if (static_cast<int>(code.size()) != cfg.lang_dim)
        throw FormatError("language code dimension mismatch");
    nn::Tape tp(false);
    return tp.value(conditional_prior_logprob_node(tp, ps, cfg, tp.input(code), z));
}

// Materialized bigram distributions for a specific code (diagnostics, tests)
inline BigramParams map_to_bigram(const nn::ParamStore& ps, const ModelConfig& cfg,
                                  const std::vector<double>& code) {
    nn::Tape tp(false);
    nn::NodeId out = tp.affine(tp.param(ps, "map.W"), tp.param(ps, "map.b"), tp.input(code));
    const double* v = tp.values(out);
    const MapOffsets off = map_offsets(cfg);
    auto softmax_rows = [&](int at, int rows, int k) {
        std::vector<double> m(static_cast<std::size_t>(rows * k));
        for (int r = 0; r < rows; ++r) {
            const double* row = v + at + r * k;
            double mx = row[0];
            for (int i = 1; i < k; ++i) mx = std::max(mx, row[i]);
            double s = 0;
            for (int i = 0; i < k; ++i) s += std::exp(row[i] - mx);
            for (int i = 0; i < k; ++i)
                m[static_cast<std::size_t>(r * k + i)] = std::exp(row[i] - mx) / s;
        }
        return m;
    };
    BigramParams bp;
    bp.init_m = softmax_rows(off.init_m, 1, cfg.k_mean);
    bp.init_f = softmax_rows(off.init_f, 1, cfg.k_feat);
    bp.init_o = softmax_rows(off.init_o, 1, 2);
    bp.trans_m = softmax_rows(off.trans_m, cfg.k_mean, cfg.k_mean);
    bp.trans_f = softmax_rows(off.trans_f, cfg.k_feat, cfg.k_feat);
    bp.trans_o = softmax_rows(off.trans_o, 2, 2);
    bp.stop = 1.0 / (1.0 + std::exp(-v[off.stop]));
    return bp;
}

} // namespace wlab::gen
