#pragma once

// Bottom-up amortized inference: derenderer q(z|s,x), the composed
// single-signal recognizer q(z,s|x) = q(s|x) * q(z|s,x), and the language
// encoder q(l|z_1:M) with its reparameterized sampler.
//
// The derenderer mirrors the renderer's conditioning: it reads
// (pitch, audible, previous pitch) per sample, with the continuity value
// seeding the previous pitch, and emits one logit block per latent head.
// Set encoding sums per-parse embeddings in a canonical (sorted) order, so
// permuting the input set cannot change even the floating-point rounding.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "wlab/generative.hpp"
#include "wlab/model.hpp"
#include "wlab/segment.hpp"

namespace wlab::rec {

inline constexpr double kLogVarLo = -12.0;  // language posterior log-variance bounds
inline constexpr double kLogVarHi = 4.0;

inline constexpr double kDerenderLambda = 8.0;  // mean/feature split scale
inline constexpr int kDerenderLen = 32;         // resampled segment length

// ---------------------------------------------------------------------------
// Derenderer
//
// The derenderer reads the same decomposition the renderer's inventory is
// grounded in: the segment's smoothed mean (init-subtracted) and its
// residual, linearly resampled to a fixed length, plus per-step audibility
// and the continuity value relative to the segment's initial level.

inline std::vector<double> resample_linear(const std::vector<double>& v, int m) {
    if (v.empty() || m < 1) throw FormatError("resample needs nonempty input and positive length");
    std::vector<double> out(static_cast<std::size_t>(m));
    const int n = static_cast<int>(v.size());
    if (n == 1) {
        std::fill(out.begin(), out.end(), v[0]);
        return out;
    }
    for (int i = 0; i < m; ++i) {
        double t = m == 1 ? 0.0 : static_cast<double>(i) * (n - 1) / (m - 1);
        int j = std::min(n - 2, static_cast<int>(t));
        double f = t - j;
        out[static_cast<std::size_t>(i)] =
            v[static_cast<std::size_t>(j)] * (1.0 - f) + v[static_cast<std::size_t>(j) + 1] * f;
    }
    return out;
}

struct SegmentChannels {
    std::vector<double> curve;    // resampled smoothed mean, raw level
    std::vector<double> resid;    // resampled pitch minus mean
    std::vector<double> audible;  // nearest-sample audibility, 0/1
    double continuity = 0.5;
};

// channels from precomputed per-item curve/residual (pretraining items)
inline SegmentChannels make_segment_channels(std::vector<double> curve32,
                                             std::vector<double> resid32, const Signal& x,
                                             int begin, int end, double continuity) {
    if (end <= begin) throw FormatError("empty segment");
    if (begin < 0 || end > x.length()) throw FormatError("segment outside signal bounds");
    SegmentChannels ch;
    ch.curve = std::move(curve32);
    ch.resid = std::move(resid32);
    const int m = static_cast<int>(ch.curve.size());
    ch.audible.resize(static_cast<std::size_t>(m));
    const int len = end - begin;
    for (int j = 0; j < m; ++j) {
        int t = begin + (m == 1 ? 0 : static_cast<int>(std::lround(static_cast<double>(j) * (len - 1) / (m - 1))));
        ch.audible[static_cast<std::size_t>(j)] = x.audible(t) ? 1.0 : 0.0;
    }
    ch.continuity = continuity;
    return ch;
}

// channels from a signal slice and its whole-signal smoothed curve
inline SegmentChannels segment_channels(const std::vector<double>& smooth, const Signal& x,
                                        int begin, int end, double continuity) {
    if (end <= begin) throw FormatError("empty segment");
    if (begin < 0 || end > x.length()) throw FormatError("segment outside signal bounds");
    if (static_cast<int>(smooth.size()) != x.length())
        throw FormatError("smoothed curve length mismatch");
    std::vector<double> mc(smooth.begin() + begin, smooth.begin() + end);
    std::vector<double> res(static_cast<std::size_t>(end - begin));
    for (int t = begin; t < end; ++t)
        res[static_cast<std::size_t>(t - begin)] = x.pitch(t) - smooth[static_cast<std::size_t>(t)];
    return make_segment_channels(resample_linear(mc, kDerenderLen),
                                 resample_linear(res, kDerenderLen), x, begin, end, continuity);
}

// logits (mean block | feature block | on/off block); per-step head outputs
// are mean-pooled so every step feeds the readout
inline nn::NodeId derender_logits_node(nn::Tape& tp, const nn::ParamStore& ps,
                                       const ModelConfig& cfg, const SegmentChannels& ch) {
    const int m = static_cast<int>(ch.curve.size());
    if (m < 1 || ch.resid.size() != ch.curve.size() || ch.audible.size() != ch.curve.size())
        throw FormatError("segment channel size mismatch");
    auto cell = nn::lstm_ref(tp, ps, "derend.lstm", cfg.derenderer_hidden);
    nn::NodeId hw = tp.param(ps, "derend.head.W");
    nn::NodeId hb = tp.param(ps, "derend.head.b");
    auto st = nn::lstm_zero_state(tp, cfg.derenderer_hidden);
    const double c0 = ch.curve[0];
    nn::NodeId pooled = -1;
    for (int j = 0; j < m; ++j) {
        // explicit position channel: pooled per-step readouts can then express
        // position-weighted statistics (bow timing, residual frequency)
        double pos = m > 1 ? static_cast<double>(j) / (m - 1) : 0.0;
        double in[5] = {ch.curve[static_cast<std::size_t>(j)] - c0,
                        ch.resid[static_cast<std::size_t>(j)],
                        ch.audible[static_cast<std::size_t>(j)], ch.continuity - c0, pos};
        st = nn::lstm_step(tp, cell, tp.input(in, 5), st);
        nn::NodeId head = tp.affine(hw, hb, st.h);
        pooled = pooled < 0 ? head : tp.add(pooled, head);
    }
    return tp.scale(pooled, 1.0 / static_cast<double>(m));
}

struct TupleDistribution {
    std::vector<double> mean, feat, onoff;  // each a probability simplex
};

inline std::vector<double> softmax_block(const double* v, int k) {
    double m = v[0];
    for (int i = 1; i < k; ++i) m = std::max(m, v[i]);
    double s = 0;
    std::vector<double> p(static_cast<std::size_t>(k));
    for (int i = 0; i < k; ++i) s += p[static_cast<std::size_t>(i)] = std::exp(v[i] - m);
    for (auto& x : p) x /= s;
    return p;
}

inline TupleDistribution derender_segment(const nn::ParamStore& ps, const ModelConfig& cfg,
                                          const SegmentChannels& ch) {
    nn::Tape tp(false);
    const double* v = tp.values(derender_logits_node(tp, ps, cfg, ch));
    TupleDistribution d;
    d.mean = softmax_block(v, cfg.k_mean);
    d.feat = softmax_block(v + cfg.k_mean, cfg.k_feat);
    d.onoff = softmax_block(v + cfg.k_mean + cfg.k_feat, 2);
    return d;
}

// convenience overload: smooths the whole signal per call
inline TupleDistribution derender_segment(const nn::ParamStore& ps, const ModelConfig& cfg,
                                          const Signal& x, int begin, int end, double continuity) {
    auto smooth = seg::gp_smooth(x, kDerenderLambda);
    return derender_segment(ps, cfg, segment_channels(smooth, x, begin, end, continuity));
}

// log q(tuple | segment) as a differentiable node
inline nn::NodeId derender_logmass_node(nn::Tape& tp, const nn::ParamStore& ps,
                                        const ModelConfig& cfg, const SegmentChannels& ch,
                                        const Tuple& t) {
    nn::NodeId head = derender_logits_node(tp, ps, cfg, ch);
    std::vector<nn::NodeId> terms{
        tp.cat_logmass(tp.slice(head, 0, cfg.k_mean), t.mean),
        tp.cat_logmass(tp.slice(head, cfg.k_mean, cfg.k_feat), t.feat),
        tp.cat_logmass(tp.slice(head, cfg.k_mean + cfg.k_feat, 2), t.onoff)};
    return nn::sum_scalars(tp, terms);
}

// log q(z | s, x): sum of per-segment id log-masses
inline double derender_logprob(const nn::ParamStore& ps, const ModelConfig& cfg, const Signal& x,
                               const Parse& z, const Segmentation& s) {
    if (s.segments() != z.size()) throw InferenceError("segment count does not match parse length");
    auto smooth = seg::gp_smooth(x, kDerenderLambda);
    nn::Tape tp(false);
    double acc = 0;
    for (int n = 0; n < s.segments(); ++n)
        acc += tp.value(derender_logmass_node(
            tp, ps, cfg,
            segment_channels(smooth, x, s.begin(n), s.end(n), gen::segment_continuity(x, s, n)),
            z.tuples[static_cast<std::size_t>(n)]));
    return acc;
}

// ---------------------------------------------------------------------------
// Composed single-signal recognizer

struct ParsePosterior {
    Parse parse;
    Segmentation seg;
    double logprob = 0.0;  // log q(z, s | x)
};

// n draws of (s, z): s from the segmentation mixture, then per-segment ids
// sampled from the derenderer.
inline std::vector<ParsePosterior> propose_parse(const nn::ParamStore& ps, const ModelConfig& cfg,
                                                 const Signal& x, int n, double pi,
                                                 std::uint64_t seed,
                                                 const seg::FilterScaleSet& scales =
                                                     seg::FilterScaleSet::standard()) {
    std::vector<ParsePosterior> out;
    if (n <= 0) return out;
    Rng rng(mix64(seed, fnv1a("propose_parse")));
    auto segs = seg::propose_mixture(x, ps, pi, n, rng, scales);
    auto smooth = seg::gp_smooth(x, kDerenderLambda);
    out.reserve(segs.size());
    for (auto& sp : segs) {
        ParsePosterior pp;
        pp.logprob = sp.logprob;
        for (int k = 0; k < sp.seg.segments(); ++k) {
            TupleDistribution d = derender_segment(
                ps, cfg,
                segment_channels(smooth, x, sp.seg.begin(k), sp.seg.end(k),
                                 gen::segment_continuity(x, sp.seg, k)));
            Tuple t{rng.categorical(d.mean), rng.categorical(d.feat), rng.categorical(d.onoff)};
            pp.logprob += std::log(d.mean[static_cast<std::size_t>(t.mean)]) +
                          std::log(d.feat[static_cast<std::size_t>(t.feat)]) +
                          std::log(d.onoff[static_cast<std::size_t>(t.onoff)]);
            pp.parse.tuples.push_back(t);
        }
        pp.seg = std::move(sp.seg);
        out.push_back(std::move(pp));
    }
    return out;
}

// density of the proposal process at a given (z, s)
inline double recognition_logprob(const nn::ParamStore& ps, const ModelConfig& cfg, const Signal& x,
                                  const Parse& z, const Segmentation& s, double pi,
                                  const seg::FilterScaleSet& scales = seg::FilterScaleSet::standard()) {
    auto filter_cands = seg::propose_filtering(x, scales);
    double filter_lp = seg::filtering_logprob(filter_cands, s);
    double neural_lp = pi < 1 ? seg::neural_logprob(ps, x, s) : -INFINITY;
    return seg::mixture_logprob(pi, filter_lp, neural_lp) + derender_logprob(ps, cfg, x, z, s);
}

// ---------------------------------------------------------------------------
// Language encoder

struct LanguagePosterior {
    std::vector<double> mean;
    std::vector<double> logvar;
};

struct LanguagePosteriorNode {
    nn::NodeId mean = -1;
    nn::NodeId logvar = -1;
};

// Shared-LSTM set encoder. Embeddings are summed in sorted-parse order so
// the result is bit-identical under permutation of the input set.
inline LanguagePosteriorNode encode_language_node(nn::Tape& tp, const nn::ParamStore& ps,
                                                  const ModelConfig& cfg,
                                                  const std::vector<Parse>& parses) {
    if (parses.empty()) throw FormatError("empty parse set");
    std::vector<std::size_t> order(parses.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return parses[a] < parses[b]; });
    auto cell = nn::lstm_ref(tp, ps, "lenc.lstm", cfg.lang_hidden);
    nn::NodeId total = -1;
    for (std::size_t oi : order) {
        validate_parse(cfg, parses[oi]);
        auto st = nn::lstm_zero_state(tp, cfg.lang_hidden);
        for (const Tuple& t : parses[oi].tuples)
            st = nn::lstm_step(tp, cell, tp.input(tuple_onehot(cfg, t)), st);
        total = total < 0 ? st.h : tp.add(total, st.h);
    }
    nn::NodeId head = tp.affine(tp.param(ps, "lenc.head.W"), tp.param(ps, "lenc.head.b"), total);
    LanguagePosteriorNode out;
    out.mean = tp.slice(head, 0, cfg.lang_dim);
    out.logvar = tp.sigmoid_range(tp.slice(head, cfg.lang_dim, cfg.lang_dim), kLogVarLo, kLogVarHi);
    return out;
}

inline LanguagePosterior encode_language(const nn::ParamStore& ps, const ModelConfig& cfg,
                                         const std::vector<Parse>& parses) {
    nn::Tape tp(false);
    auto node = encode_language_node(tp, ps, cfg, parses);
    return LanguagePosterior{tp.values_vec(node.mean), tp.values_vec(node.logvar)};
}

// l = mean + exp(logvar/2) * eps, eps ~ N(0, I)
inline std::vector<double> reparam_sample(const LanguagePosterior& post, std::uint64_t seed) {
    if (post.mean.size() != post.logvar.size()) throw FormatError("posterior dimension mismatch");
    Rng rng(mix64(seed, fnv1a("reparam")));
    std::vector<double> code(post.mean.size());
    for (std::size_t i = 0; i < code.size(); ++i)
        code[i] = post.mean[i] + std::exp(0.5 * post.logvar[i]) * rng.gaussian();
    return code;
}

// differentiable reparameterization on the caller's tape; eps is fixed data
inline nn::NodeId reparam_sample_node(nn::Tape& tp, const LanguagePosteriorNode& post,
                                      const std::vector<double>& eps) {
    return tp.add(post.mean, tp.mul(tp.exp(tp.scale(post.logvar, 0.5)), tp.input(eps)));
}

} // namespace wlab::rec
