#pragma once

// Renderer/derenderer pretraining. Held-out signals are split into a smoothed
// mean and a residual, cut into segments by the filtering proposer, resampled
// to a fixed length, and clustered (k-means over init-subtracted mean curves,
// k-means over residual spectrum magnitudes). The two segment networks then
// train on the labeled raw slices.
//
// Candidate segments are pooled across every filter scale and gated on
// length, position, and cut-point flatness: smoothing drags the curve near
// the signal head (corrupting the init-subtracted shape), and cuts placed on
// steep flanks mix adjacent strokes. The gates are observable properties of
// the smoothed signal, not ground truth.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <utility>
#include <vector>

#include "wlab/generative.hpp"
#include "wlab/gp.hpp"
#include "wlab/params.hpp"
#include "wlab/recognition.hpp"

namespace wlab::pre {

struct PretrainConfig {
    // smoothing scale and resample length for the mean/feature split; the
    // defaults match the derenderer's input construction so trained items and
    // inference-time segments share one representation
    double lambda_mean = rec::kDerenderLambda;
    int resample_len = rec::kDerenderLen;
    int min_len = kLMin;                // segment length gate (inclusive)
    int max_len = kTMax;
    bool drop_signal_head = false;      // drop segments starting at t=0
    double max_flank_slope = INFINITY;  // |smoothed slope| gate at both cut points
    int kmeans_restarts = 10;
    int kmeans_iters = 50;

    // gates matched to the near-isochronous corpus rhythm
    static PretrainConfig corpus() {
        PretrainConfig c;
        c.min_len = 24;
        c.max_len = 30;
        c.drop_signal_head = true;
        c.max_flank_slope = 3e-3;
        return c;
    }
};

struct PretrainItem {
    std::vector<double> curve;     // resampled smoothed mean, raw (no init subtraction)
    std::vector<double> residual;  // resampled pitch minus mean
    bool audible = true;           // majority audibility of the slice
    int mean_id = 0;
    int feat_id = 0;
    Signal segment;                // raw slice, for training at true lengths
    double continuity = 0.5;       // pitch just before the slice (0.5 at t=0)
};

struct PretrainingSet {
    std::vector<PretrainItem> items;
    int k_mean = 0;
    int k_feat = 0;
};

using rec::resample_linear;

// k-means++ with restarts; returns best inertia, assignments in `asg`
inline double kmeans(const std::vector<std::vector<double>>& points, int k, int restarts,
                     int iters, Rng& rng, std::vector<int>& asg) {
    const int n = static_cast<int>(points.size());
    if (k < 1) throw TrainError("cluster count must be positive");
    if (n < k) throw TrainError("fewer segments than clusters");
    const int d = static_cast<int>(points[0].size());
    auto dist2 = [&](const std::vector<double>& a, const std::vector<double>& b) {
        double s = 0;
        for (int j = 0; j < d; ++j) {
            double e = a[static_cast<std::size_t>(j)] - b[static_cast<std::size_t>(j)];
            s += e * e;
        }
        return s;
    };
    double best_inertia = INFINITY;
    std::vector<int> best(points.size(), 0);
    for (int r = 0; r < restarts; ++r) {
        std::vector<std::vector<double>> centers;
        centers.push_back(points[rng.below(static_cast<std::uint64_t>(n))]);
        while (static_cast<int>(centers.size()) < k) {
            std::vector<double> d2(static_cast<std::size_t>(n));
            double tot = 0;
            for (int i = 0; i < n; ++i) {
                double m = INFINITY;
                for (const auto& c : centers) m = std::min(m, dist2(points[static_cast<std::size_t>(i)], c));
                d2[static_cast<std::size_t>(i)] = m;
                tot += m;
            }
            int pick = n - 1;
            if (tot > 0) {
                double rr = rng.uniform(0.0, tot), acc = 0;
                for (int i = 0; i < n; ++i) {
                    acc += d2[static_cast<std::size_t>(i)];
                    if (acc >= rr) { pick = i; break; }
                }
            } else {
                pick = static_cast<int>(rng.below(static_cast<std::uint64_t>(n)));
            }
            centers.push_back(points[static_cast<std::size_t>(pick)]);
        }
        std::vector<int> a(static_cast<std::size_t>(n), 0);
        for (int it = 0; it < iters; ++it) {
            bool moved = false;
            for (int i = 0; i < n; ++i) {
                double m = INFINITY;
                int bi = 0;
                for (int c = 0; c < k; ++c) {
                    double s = dist2(points[static_cast<std::size_t>(i)], centers[static_cast<std::size_t>(c)]);
                    if (s < m) { m = s; bi = c; }
                }
                if (a[static_cast<std::size_t>(i)] != bi) { a[static_cast<std::size_t>(i)] = bi; moved = true; }
            }
            for (int c = 0; c < k; ++c) {
                std::vector<double> mu(static_cast<std::size_t>(d), 0.0);
                int cnt = 0;
                for (int i = 0; i < n; ++i) {
                    if (a[static_cast<std::size_t>(i)] != c) continue;
                    ++cnt;
                    for (int j = 0; j < d; ++j) mu[static_cast<std::size_t>(j)] += points[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
                }
                if (cnt)
                    for (int j = 0; j < d; ++j) centers[static_cast<std::size_t>(c)][static_cast<std::size_t>(j)] = mu[static_cast<std::size_t>(j)] / cnt;
            }
            if (!moved) break;
        }
        double inertia = 0;
        for (int i = 0; i < n; ++i)
            inertia += dist2(points[static_cast<std::size_t>(i)], centers[static_cast<std::size_t>(a[static_cast<std::size_t>(i)])]);
        if (inertia < best_inertia) {
            best_inertia = inertia;
            best = a;
        }
    }
    asg = std::move(best);
    return best_inertia;
}

// |DFT| magnitudes of bins 1..n_bins, scaled by 2/len
inline std::vector<double> spectrum_magnitude(const std::vector<double>& v, int n_bins) {
    const int n = static_cast<int>(v.size());
    std::vector<double> out;
    out.reserve(static_cast<std::size_t>(n_bins));
    for (int bin = 1; bin <= n_bins; ++bin) {
        double re = 0, im = 0;
        for (int t = 0; t < n; ++t) {
            double ph = 2.0 * M_PI * bin * t / n;
            re += v[static_cast<std::size_t>(t)] * std::cos(ph);
            im += v[static_cast<std::size_t>(t)] * std::sin(ph);
        }
        out.push_back(std::sqrt(re * re + im * im) * 2.0 / n);
    }
    return out;
}

inline PretrainingSet build_pretraining_set(const std::vector<Signal>& signals, int k_mean,
                                            int k_feat, const PretrainConfig& pc = {},
                                            const seg::FilterScaleSet& scales =
                                                seg::FilterScaleSet::standard(),
                                            std::uint64_t seed = 0) {
    if (signals.empty()) throw TrainError("empty held-out signal set");
    PretrainingSet set;
    set.k_mean = k_mean;
    set.k_feat = k_feat;
    for (const Signal& x : signals) {
        const int t_len = x.length();
        auto cands = seg::propose_filtering(x, scales);
        auto smooth = seg::gp_smooth(x, pc.lambda_mean);
        auto slope = [&](int t) {
            int t0 = std::max(0, t - 1), t1 = std::min(t_len - 1, t + 1);
            return std::fabs(smooth[static_cast<std::size_t>(t1)] - smooth[static_cast<std::size_t>(t0)]) / (t1 - t0);
        };
        std::set<std::pair<int, int>> seen;
        for (const auto& cand : cands) {
            for (int i = 0; i < cand.seg.segments(); ++i) {
                const int a = cand.seg.begin(i), b = cand.seg.end(i);
                if (!seen.insert({a, b}).second) continue;
                if (b - a < pc.min_len || b - a > pc.max_len) continue;
                if (pc.drop_signal_head && a == 0) continue;
                if (a > 0 && slope(a) > pc.max_flank_slope) continue;
                if (b < t_len && slope(b) > pc.max_flank_slope) continue;
                PretrainItem item;
                std::vector<double> mc(smooth.begin() + a, smooth.begin() + b);
                item.curve = resample_linear(mc, pc.resample_len);
                std::vector<double> res(static_cast<std::size_t>(b - a));
                int audible_count = 0;
                for (int t = a; t < b; ++t) {
                    res[static_cast<std::size_t>(t - a)] = x.pitch(t) - smooth[static_cast<std::size_t>(t)];
                    audible_count += x.audible(t) ? 1 : 0;
                    item.segment.samples.push_back(x.samples[static_cast<std::size_t>(t)]);
                }
                item.residual = resample_linear(res, pc.resample_len);
                item.audible = 2 * audible_count >= b - a;
                item.continuity = a == 0 ? 0.5 : x.pitch(a - 1);
                set.items.push_back(std::move(item));
            }
        }
    }
    const int n = static_cast<int>(set.items.size());
    if (n < std::max(k_mean, k_feat)) throw TrainError("fewer segments than clusters");
    std::vector<std::vector<double>> mean_pts, feat_pts;
    mean_pts.reserve(set.items.size());
    feat_pts.reserve(set.items.size());
    for (const auto& item : set.items) {
        std::vector<double> c = item.curve;
        for (auto& v : c) v -= item.curve[0];
        mean_pts.push_back(std::move(c));
        feat_pts.push_back(spectrum_magnitude(item.residual, 8));
    }
    Rng rng(mix64(seed, fnv1a("kmeans")));
    std::vector<int> mean_asg, feat_asg;
    kmeans(mean_pts, k_mean, pc.kmeans_restarts, pc.kmeans_iters, rng, mean_asg);
    kmeans(feat_pts, k_feat, pc.kmeans_restarts, pc.kmeans_iters, rng, feat_asg);
    for (int i = 0; i < n; ++i) {
        set.items[static_cast<std::size_t>(i)].mean_id = mean_asg[static_cast<std::size_t>(i)];
        set.items[static_cast<std::size_t>(i)].feat_id = feat_asg[static_cast<std::size_t>(i)];
    }
    return set;
}

struct PretrainCurves {
    std::vector<double> renderer;    // per-epoch mean negative log-likelihood
    std::vector<double> derenderer;  // per-epoch mean cross-entropy
};

// Minibatch Adam on the joint loss; the two networks share no tensors, so
// each loss descends its own parameters. Per-batch gradients fan out over
// jobs and reduce in item order. Non-finite losses abort with the parameters
// restored to the last finite-loss state.
inline PretrainCurves pretrain(nn::ParamStore& ps, const ModelConfig& cfg,
                               const PretrainingSet& set, int epochs, double lr = 1e-3,
                               int batch = 16, std::uint64_t seed = 0, int jobs = 1) {
    if (set.items.empty()) throw TrainError("empty pretraining set");
    if (batch < 1) throw TrainError("batch size must be positive");
    nn::Adam opt{lr};
    PretrainCurves curves;
    std::map<std::string, nn::Tensor> last_good = ps.tensors;
    const std::size_t n = set.items.size();
    std::vector<rec::SegmentChannels> chans;
    chans.reserve(n);
    for (const auto& item : set.items)
        chans.push_back(rec::make_segment_channels(item.curve, item.residual, item.segment, 0,
                                                   item.segment.length(), item.continuity));
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle_rng(mix64(seed, fnv1a("pretrain-order")));
    std::vector<double> rpart(static_cast<std::size_t>(batch)), dpart(static_cast<std::size_t>(batch));
    std::vector<nn::GradStore> gpart(static_cast<std::size_t>(batch));
    for (int e = 0; e < epochs; ++e) {
        for (std::size_t i = n; i > 1; --i)
            std::swap(order[i - 1], order[shuffle_rng.below(i)]);
        double rloss = 0, dloss = 0;
        for (std::size_t b0 = 0; b0 < n; b0 += static_cast<std::size_t>(batch)) {
            const std::size_t nb = std::min(static_cast<std::size_t>(batch), n - b0);
            const double inv_b = 1.0 / static_cast<double>(nb);
            parallel_for(nb, jobs, [&](std::size_t j) {
                gpart[j].clear();
                const auto& item = set.items[order[b0 + j]];
                nn::Tape tp(true);
                const Tuple t{item.mean_id, item.feat_id, item.audible ? 1 : 0};
                const int len = item.segment.length();
                nn::NodeId rnode = gen::render_segment_logprob_node(tp, ps, cfg, t, item.segment,
                                                                    0, len, item.continuity);
                nn::NodeId dnode = rec::derender_logmass_node(tp, ps, cfg, chans[order[b0 + j]], t);
                tp.backward(tp.scale(tp.add(rnode, dnode), -inv_b));
                tp.export_grads_into(gpart[j], 1.0);
                rpart[j] = -tp.value(rnode);
                dpart[j] = -tp.value(dnode);
            });
            nn::GradStore grads;
            for (std::size_t j = 0; j < nb; ++j) {
                nn::grad_accumulate(grads, gpart[j]);
                rloss += rpart[j];
                dloss += dpart[j];
            }
            opt.step(ps, grads);
        }
        rloss /= static_cast<double>(n);
        dloss /= static_cast<double>(n);
        if (!std::isfinite(rloss) || !std::isfinite(dloss)) {
            ps.tensors = std::move(last_good);
            throw TrainError("non-finite pretraining loss at epoch " + std::to_string(e));
        }
        last_good = ps.tensors;
        curves.renderer.push_back(rloss);
        curves.derenderer.push_back(dloss);
    }
    return curves;
}

} // namespace wlab::pre
