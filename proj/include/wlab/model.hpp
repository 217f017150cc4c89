#pragma once

// Model-wide configuration, bigram transition parameters (shared by the
// synthetic domain and the hierarchical conditional prior), and parameter
// initialization for every trainable component.
//
// Parameter names (all in one ParamStore):
//   prior.lstm.*  prior.head.*                       autoregressive parse prior
//   rend.emb_m  rend.emb_f  rend.lstm.*  rend.head.*  rend.aud   renderer
//   derend.lstm.*  derend.head.*                     derenderer
//   seg.enc.*  seg.dec.*  seg.out.*                  neural segmenter
//   lenc.lstm.*  lenc.head.*                         language encoder
//   map.W  map.b                                     language code -> bigrams

#include <cmath>
#include <vector>

#include "wlab/segment.hpp"
#include "wlab/signal.hpp"
#include "wlab/tape.hpp"

namespace wlab {

struct ModelConfig {
    int k_mean = 4;            // mean-prototype inventory size
    int k_feat = 4;            // feature-prototype inventory size
    int emb_dim = 8;           // mean/feature embedding width
    int prior_hidden = 32;
    int renderer_hidden = 64;
    int derenderer_hidden = 64;
    int lang_hidden = 64;      // language-encoder LSTM width
    int lang_dim = 16;         // language code dimension
    int n_max = kNMax;         // parse length cap
    int seg_sample_cap = 40;   // segment length cap when sampling signals

    int tuple_onehot_dim() const { return k_mean + k_feat + 2; }
    // prior head: mean logits | feature logits | on/off logits | stop logit
    int prior_head_dim() const { return k_mean + k_feat + 2 + 1; }
    // map output: init_m | init_f | init_o | rows of P_m | P_f | P_o | stop
    int map_out_dim() const {
        return k_mean + k_feat + 2 + k_mean * k_mean + k_feat * k_feat + 4 + 1;
    }
};

inline void validate_parse(const ModelConfig& cfg, const Parse& z) {
    validate_parse(z, cfg.k_mean, cfg.k_feat, cfg.n_max);
}

inline std::vector<double> tuple_onehot(const ModelConfig& cfg, const Tuple& t) {
    std::vector<double> v(static_cast<std::size_t>(cfg.tuple_onehot_dim()), 0.0);
    v[static_cast<std::size_t>(t.mean)] = 1.0;
    v[static_cast<std::size_t>(cfg.k_mean + t.feat)] = 1.0;
    v[static_cast<std::size_t>(cfg.k_mean + cfg.k_feat + t.onoff)] = 1.0;
    return v;
}

// Explicit bigram transition structure: initial distributions, per-symbol
// transition rows, and a geometric stop probability (stop forced at n_max,
// so parse lengths are normalized over 1..n_max).
struct BigramParams {
    std::vector<double> init_m, init_f, init_o;      // K_m, K_f, 2
    std::vector<double> trans_m, trans_f, trans_o;   // row-major K x K
    double stop = 0.5;
};

inline void validate_bigram(const BigramParams& bp) {
    auto check_dist = [](const std::vector<double>& p, std::size_t stride) {
        for (std::size_t r = 0; r * stride < p.size(); ++r) {
            double s = 0;
            for (std::size_t i = 0; i < stride; ++i) {
                double v = p[r * stride + i];
                if (!(v >= 0)) throw FormatError("negative probability in bigram row");
                s += v;
            }
            if (std::fabs(s - 1.0) > 1e-9) throw FormatError("bigram row does not sum to 1");
        }
    };
    check_dist(bp.init_m, bp.init_m.size());
    check_dist(bp.init_f, bp.init_f.size());
    check_dist(bp.init_o, 2);
    std::size_t km = bp.init_m.size(), kf = bp.init_f.size();
    if (bp.trans_m.size() != km * km || bp.trans_f.size() != kf * kf || bp.trans_o.size() != 4)
        throw FormatError("bigram matrix shape mismatch");
    check_dist(bp.trans_m, km);
    check_dist(bp.trans_f, kf);
    check_dist(bp.trans_o, 2);
    if (!(bp.stop > 0 && bp.stop < 1)) throw FormatError("stop probability outside (0,1)");
}

inline double bigram_logprob(const BigramParams& bp, const Parse& z, int n_max) {
    const std::size_t km = bp.init_m.size(), kf = bp.init_f.size();
    const int n = static_cast<int>(z.tuples.size());
    if (n < 1 || n > n_max) throw FormatError("parse length out of range");
    auto lg = [](double p) { return std::log(p); };
    double lp = lg(bp.init_m[static_cast<std::size_t>(z.tuples[0].mean)]) +
                lg(bp.init_f[static_cast<std::size_t>(z.tuples[0].feat)]) +
                lg(bp.init_o[static_cast<std::size_t>(z.tuples[0].onoff)]);
    for (int i = 1; i < n; ++i) {
        const Tuple &a = z.tuples[static_cast<std::size_t>(i - 1)], &b = z.tuples[static_cast<std::size_t>(i)];
        lp += lg(bp.trans_m[static_cast<std::size_t>(a.mean) * km + static_cast<std::size_t>(b.mean)]) +
              lg(bp.trans_f[static_cast<std::size_t>(a.feat) * kf + static_cast<std::size_t>(b.feat)]) +
              lg(bp.trans_o[static_cast<std::size_t>(a.onoff) * 2 + static_cast<std::size_t>(b.onoff)]);
    }
    lp += (n - 1) * lg(1.0 - bp.stop);
    if (n < n_max) lp += lg(bp.stop);
    return lp;
}

inline Parse sample_bigram(const BigramParams& bp, int n_max, Rng& rng) {
    Parse z;
    Tuple t{rng.categorical(bp.init_m), rng.categorical(bp.init_f), rng.categorical(bp.init_o)};
    z.tuples.push_back(t);
    const std::size_t km = bp.init_m.size(), kf = bp.init_f.size();
    while (static_cast<int>(z.tuples.size()) < n_max) {
        if (rng.bernoulli(bp.stop)) break;
        const Tuple& a = z.tuples.back();
        auto row = [&](const std::vector<double>& m, int i, std::size_t k) {
            return std::vector<double>(m.begin() + static_cast<std::ptrdiff_t>(i * k),
                                       m.begin() + static_cast<std::ptrdiff_t>((i + 1) * k));
        };
        Tuple nt{rng.categorical(row(bp.trans_m, a.mean, km)),
                 rng.categorical(row(bp.trans_f, a.feat, kf)),
                 rng.categorical(row(bp.trans_o, a.onoff, 2))};
        z.tuples.push_back(nt);
    }
    return z;
}

inline double mean_row_entropy(const BigramParams& bp) {
    double total = 0;
    std::size_t rows = 0;
    auto acc = [&](const std::vector<double>& m, std::size_t k) {
        for (std::size_t r = 0; r * k < m.size(); ++r) {
            double h = 0;
            for (std::size_t i = 0; i < k; ++i) {
                double p = m[r * k + i];
                if (p > 0) h -= p * std::log(p);
            }
            total += h;
            ++rows;
        }
    };
    acc(bp.trans_m, bp.init_m.size());
    acc(bp.trans_f, bp.init_f.size());
    acc(bp.trans_o, 2);
    return total / static_cast<double>(rows);
}

inline void add_prior_params(nn::ParamStore& ps, const ModelConfig& cfg, Rng& rng) {
    nn::add_lstm_params(ps, "prior.lstm", cfg.tuple_onehot_dim(), cfg.prior_hidden, rng);
    nn::add_affine_params(ps, "prior.head", cfg.prior_head_dim(), cfg.prior_hidden, rng);
}

inline void add_renderer_params(nn::ParamStore& ps, const ModelConfig& cfg, Rng& rng) {
    ps.add("rend.emb_m", nn::uniform_init({cfg.k_mean, cfg.emb_dim}, cfg.emb_dim, rng));
    ps.add("rend.emb_f", nn::uniform_init({cfg.k_feat, cfg.emb_dim}, cfg.emb_dim, rng));
    nn::add_lstm_params(ps, "rend.lstm", 2 * cfg.emb_dim + 1, cfg.renderer_hidden, rng);
    nn::add_affine_params(ps, "rend.head", 3, cfg.renderer_hidden, rng);  // mu | raw sigma | end
    ps.add("rend.aud", nn::zeros({2}));  // audibility logit per on/off id
}

inline void add_derenderer_params(nn::ParamStore& ps, const ModelConfig& cfg, Rng& rng) {
    // inputs: mean curve (init-subtracted), residual, audible, relative
    // continuity, normalized position
    nn::add_lstm_params(ps, "derend.lstm", 5, cfg.derenderer_hidden, rng);
    nn::add_affine_params(ps, "derend.head", cfg.tuple_onehot_dim(), cfg.derenderer_hidden, rng);
}

inline void add_language_params(nn::ParamStore& ps, const ModelConfig& cfg, Rng& rng) {
    nn::add_lstm_params(ps, "lenc.lstm", cfg.tuple_onehot_dim(), cfg.lang_hidden, rng);
    nn::add_affine_params(ps, "lenc.head", 2 * cfg.lang_dim, cfg.lang_hidden, rng);
    nn::add_affine_params(ps, "map", cfg.map_out_dim(), cfg.lang_dim, rng);
}

inline nn::ParamStore init_model_params(const ModelConfig& cfg, std::uint64_t seed) {
    nn::ParamStore ps;
    Rng rng(mix64(seed, fnv1a("params")));
    add_prior_params(ps, cfg, rng);
    add_renderer_params(ps, cfg, rng);
    add_derenderer_params(ps, cfg, rng);
    seg::add_segmenter_params(ps, rng);
    add_language_params(ps, cfg, rng);
    return ps;
}

} // namespace wlab
