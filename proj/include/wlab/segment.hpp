#pragma once

// Neural segmenter q^N(s|x) and the mixture proposal
// q(s|x) = pi * q^F(s|x) + (1-pi) * q^N(s|x).
//
// The segmenter is an encoder-decoder: the encoder reads the signal in
// reverse, the decoder emits one end-of-segment flag per sample, consuming
// the previous flag alongside the current sample. Positions where only one
// flag value keeps the segmentation valid (minimum segment length, segment
// budget, the final sample) are forced and contribute no log-mass, so the
// decoder defines a proper density on exactly the valid segmentations.

#include <cmath>
#include <vector>

#include "wlab/gp.hpp"
#include "wlab/tape.hpp"

namespace wlab::seg {

inline constexpr int kSegHidden = 64;

inline void add_segmenter_params(nn::ParamStore& ps, Rng& rng) {
    nn::add_lstm_params(ps, "seg.enc", 2, kSegHidden, rng);  // (pitch, audible)
    nn::add_lstm_params(ps, "seg.dec", 3, kSegHidden, rng);  // (s_prev, pitch, audible)
    nn::add_affine_params(ps, "seg.out", 1, kSegHidden, rng);
}

// When true, the flag at position t (1-based; t == T is the final sample)
// admits a single value without breaking Segmentation invariants.
// last = previous boundary position, closed = interior boundaries so far.
inline bool segment_flag_forced(int t, int t_len, int last, int closed, int* value) {
    if (t == t_len) {
        *value = 1;
        return true;
    }
    if (t - last < kLMin || t > t_len - kLMin || closed >= kNMax - 1) {
        *value = 0;
        return true;
    }
    return false;
}

struct SegmenterDecode {
    Segmentation seg;
    nn::NodeId logprob = -1;  // scalar node on the tape used for the decode
};

// Shared decode loop. With target == nullptr, flags are sampled with rng;
// otherwise the target's flags are teacher-forced and the result is its
// density. Works on both training and scoring tapes.
inline SegmenterDecode segmenter_decode(nn::Tape& tp, const nn::ParamStore& ps, const Signal& x,
                                        const Segmentation* target, Rng* rng) {
    const int t_len = x.length();
    auto enc = nn::lstm_ref(tp, ps, "seg.enc", kSegHidden);
    auto dec = nn::lstm_ref(tp, ps, "seg.dec", kSegHidden);
    nn::NodeId out_w = tp.param(ps, "seg.out.W");
    nn::NodeId out_b = tp.param(ps, "seg.out.b");

    auto st = nn::lstm_zero_state(tp, kSegHidden);
    for (int t = t_len; t-- > 0;) {
        double in[2] = {x.pitch(t), x.audible(t) ? 1.0 : 0.0};
        st = nn::lstm_step(tp, enc, tp.input(in, 2), st);
    }

    std::size_t target_next = 1;  // index into target boundaries
    std::vector<nn::NodeId> terms;
    SegmenterDecode res;
    res.seg.boundaries.push_back(0);
    int last = 0, closed = 0;
    double s_prev = 0.0;
    for (int t = 1; t <= t_len; ++t) {
        double in[3] = {s_prev, x.pitch(t - 1), x.audible(t - 1) ? 1.0 : 0.0};
        st = nn::lstm_step(tp, dec, tp.input(in, 3), st);
        int target_flag = -1;
        if (target) {
            target_flag = (target_next < target->boundaries.size() &&
                           target->boundaries[target_next] == t)
                              ? 1
                              : 0;
            if (target_flag) ++target_next;
        }
        int flag;
        int forced;
        if (segment_flag_forced(t, t_len, last, closed, &forced)) {
            if (target && target_flag != forced)
                throw InferenceError("segmentation outside the decoder's support");
            flag = forced;
        } else {
            nn::NodeId logit = tp.affine(out_w, out_b, st.h);
            if (target) {
                flag = target_flag;
            } else {
                double p = 1.0 / (1.0 + std::exp(-tp.value(logit)));
                flag = rng->bernoulli(p) ? 1 : 0;
            }
            terms.push_back(tp.bern_logmass(logit, 0, flag));
        }
        if (flag && t < t_len) {
            res.seg.boundaries.push_back(t);
            last = t;
            ++closed;
        }
        s_prev = flag;
    }
    res.seg.boundaries.push_back(t_len);
    res.logprob = nn::sum_scalars(tp, terms);
    if (target && target_next != target->boundaries.size())
        throw InferenceError("segmentation outside the decoder's support");
    return res;
}

inline void require_trained(const nn::ParamStore& ps) {
    if (ps.version == 0) throw TrainError("segmenter parameters are untrained (version 0)");
}

inline SegmentationProposal neural_segment(const nn::ParamStore& ps, const Signal& x, Rng& rng) {
    require_trained(ps);
    nn::Tape tp(false);
    auto d = segmenter_decode(tp, ps, x, nullptr, &rng);
    return SegmentationProposal{std::move(d.seg), tp.value(d.logprob)};
}

// log q^N(s|x) on a scoring tape
inline double neural_logprob(const nn::ParamStore& ps, const Signal& x, const Segmentation& s) {
    nn::Tape tp(false);
    auto d = segmenter_decode(tp, ps, x, &s, nullptr);
    return tp.value(d.logprob);
}

// log q^N(s|x) as a differentiable node on the caller's tape
inline nn::NodeId neural_logprob_node(nn::Tape& tp, const nn::ParamStore& ps, const Signal& x,
                                      const Segmentation& s) {
    return segmenter_decode(tp, ps, x, &s, nullptr).logprob;
}

// log( pi * q^F + (1-pi) * q^N ) for a given s; filter_lp/neural_lp are the
// component log-densities (-inf allowed).
inline double mixture_logprob(double pi, double filter_lp, double neural_lp) {
    double terms[2] = {pi > 0 ? std::log(pi) + filter_lp : -INFINITY,
                       pi < 1 ? std::log1p(-pi) + neural_lp : -INFINITY};
    return logsumexp(terms, 2);
}

// n draws from the mixture; each proposal carries the full mixture density
// of its segmentation, so duplicates across branches get equal log-probs.
inline std::vector<SegmentationProposal> propose_mixture(const Signal& x, const nn::ParamStore& ps,
                                                         double pi, int n, Rng& rng,
                                                         const FilterScaleSet& scales =
                                                             FilterScaleSet::standard()) {
    if (pi < 0 || pi > 1) throw InferenceError("mixture weight must lie in [0,1]");
    if (pi < 1) require_trained(ps);
    auto filter_cands = propose_filtering(x, scales);
    std::vector<SegmentationProposal> out;
    out.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        Segmentation s;
        double neural_lp;
        if (rng.bernoulli(pi)) {
            s = filter_cands[rng.below(filter_cands.size())].seg;
            neural_lp = pi < 1 ? neural_logprob(ps, x, s) : -INFINITY;
        } else {
            auto prop = neural_segment(ps, x, rng);
            s = std::move(prop.seg);
            neural_lp = prop.logprob;
        }
        double filter_lp = filtering_logprob(filter_cands, s);
        out.push_back({std::move(s), mixture_logprob(pi, filter_lp, neural_lp)});
    }
    return out;
}

} // namespace wlab::seg
