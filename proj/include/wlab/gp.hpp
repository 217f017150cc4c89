#pragma once

// Gaussian-process smoothing with an RBF kernel, and derivative
// zero-crossing boundary extraction on the smoothed series. Together these
// form the filtering-based segmentation proposal path.

#include <algorithm>
#include <cmath>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "wlab/signal.hpp"

namespace wlab::seg {

inline constexpr double kGpSigmaF = 0.2;    // kernel amplitude
inline constexpr double kGpSigmaN = 0.02;   // observation noise
inline constexpr double kGpJitter = 1e-6;   // diagonal jitter before failing
inline constexpr double kDeadband = 1e-3;   // per-sample slope dead-band

// Posterior mean of GP regression at the observed points. The signal mean
// is subtracted before the solve and added back, so constant signals pass
// through unchanged.
inline std::vector<double> gp_smooth(const std::vector<double>& pitch, double lengthscale,
                                     double sigma_f = kGpSigmaF, double sigma_n = kGpSigmaN) {
    if (lengthscale <= 0) throw FormatError("gp_smooth: lengthscale must be positive");
    const int t_len = static_cast<int>(pitch.size());
    if (t_len == 0) return {};
    double mean = 0;
    for (double p : pitch) mean += p;
    mean /= t_len;

    Eigen::MatrixXd kernel(t_len, t_len);
    const double sf2 = sigma_f * sigma_f;
    const double inv2l2 = 1.0 / (2.0 * lengthscale * lengthscale);
    for (int i = 0; i < t_len; ++i)
        for (int j = 0; j <= i; ++j) {
            double d = static_cast<double>(i - j);
            double v = sf2 * std::exp(-d * d * inv2l2);
            kernel(i, j) = v;
            kernel(j, i) = v;
        }
    Eigen::VectorXd y(t_len);
    for (int i = 0; i < t_len; ++i) y(i) = pitch[static_cast<std::size_t>(i)] - mean;

    Eigen::MatrixXd gram = kernel;
    gram.diagonal().array() += sigma_n * sigma_n;
    Eigen::LLT<Eigen::MatrixXd> llt(gram);
    if (llt.info() != Eigen::Success) {
        gram.diagonal().array() += kGpJitter;
        llt.compute(gram);
        if (llt.info() != Eigen::Success)
            throw FormatError("gp_smooth: kernel matrix numerically singular");
    }
    Eigen::VectorXd alpha = llt.solve(y);
    Eigen::VectorXd post = kernel * alpha;
    std::vector<double> out(static_cast<std::size_t>(t_len));
    for (int i = 0; i < t_len; ++i) out[static_cast<std::size_t>(i)] = post(i) + mean;
    return out;
}

inline std::vector<double> gp_smooth(const Signal& s, double lengthscale) {
    return gp_smooth(s.pitches(), lengthscale);
}

// Boundaries at sign changes of the first difference of the smoothed series.
// A sign change only counts when the slope magnitude exceeds the dead-band
// on both sides; the boundary lands on the extremum between the two slopes.
// Boundaries closer than kLMin keep the one with larger curvature, and
// endpoints 0 and T are always present.
inline Segmentation zero_crossing_boundaries(const std::vector<double>& smoothed,
                                             double deadband = kDeadband) {
    const int t_len = static_cast<int>(smoothed.size());
    if (t_len < 2 * kLMin) return Segmentation{{0, t_len}};

    auto curvature = [&](int t) {
        if (t <= 0 || t >= t_len - 1) return 0.0;
        return std::fabs(smoothed[static_cast<std::size_t>(t + 1)] - 2.0 * smoothed[static_cast<std::size_t>(t)] +
                         smoothed[static_cast<std::size_t>(t - 1)]);
    };

    std::vector<int> candidates;
    int prev_sig = -1;  // index of previous significant difference
    int prev_sign = 0;
    for (int t = 0; t + 1 < t_len; ++t) {
        double d = smoothed[static_cast<std::size_t>(t + 1)] - smoothed[static_cast<std::size_t>(t)];
        if (std::fabs(d) <= deadband) continue;
        int sign = d > 0 ? 1 : -1;
        if (prev_sign != 0 && sign != prev_sign) {
            // extremum of the smoothed series between the opposing slopes
            int lo = prev_sig + 1, hi = t;
            int best = lo;
            for (int u = lo; u <= hi; ++u) {
                bool better = prev_sign > 0 ? smoothed[static_cast<std::size_t>(u)] > smoothed[static_cast<std::size_t>(best)]
                                            : smoothed[static_cast<std::size_t>(u)] < smoothed[static_cast<std::size_t>(best)];
                if (better) best = u;
            }
            candidates.push_back(best);
        }
        prev_sig = t;
        prev_sign = sign;
    }

    // enforce the minimum distance to the endpoints, then between neighbors
    std::vector<int> kept;
    for (int b : candidates)
        if (b >= kLMin && b <= t_len - kLMin) kept.push_back(b);
    std::vector<int> merged;
    for (int b : kept) {
        if (!merged.empty() && b - merged.back() < kLMin) {
            if (curvature(b) > curvature(merged.back())) merged.back() = b;
        } else {
            merged.push_back(b);
        }
    }

    Segmentation seg;
    seg.boundaries.push_back(0);
    for (int b : merged) seg.boundaries.push_back(b);
    seg.boundaries.push_back(t_len);
    return seg;
}

struct FilterScaleSet {
    std::vector<double> scales;  // RBF length-scales in samples, increasing

    static FilterScaleSet standard() { return FilterScaleSet{{4.0, 8.0, 16.0, 32.0}}; }
};

inline void validate_scales(const FilterScaleSet& s) {
    if (s.scales.empty()) throw FormatError("scale set must be nonempty");
    double prev = 0;
    for (double v : s.scales) {
        if (v <= prev) throw FormatError("scales must be strictly increasing and positive");
        prev = v;
    }
}

struct SegmentationProposal {
    Segmentation seg;
    double logprob = 0.0;  // log q(s|x) under the proposing distribution
};

// One candidate per filter scale, deduplicated; uniform mass over the
// unique candidates.
inline std::vector<SegmentationProposal> propose_filtering(const Signal& x, const FilterScaleSet& scales) {
    validate_scales(scales);
    std::vector<Segmentation> unique_segs;
    for (double lam : scales.scales) {
        Segmentation cand = zero_crossing_boundaries(gp_smooth(x, lam));
        if (std::find(unique_segs.begin(), unique_segs.end(), cand) == unique_segs.end())
            unique_segs.push_back(std::move(cand));
    }
    const double lp = -std::log(static_cast<double>(unique_segs.size()));
    std::vector<SegmentationProposal> out;
    out.reserve(unique_segs.size());
    for (auto& s : unique_segs) out.push_back({std::move(s), lp});
    return out;
}

// log q^F(s|x): uniform on the candidate set, -inf off-support
inline double filtering_logprob(const std::vector<SegmentationProposal>& candidates, const Segmentation& s) {
    for (const auto& c : candidates)
        if (c.seg == s) return c.logprob;
    return -INFINITY;
}

} // namespace wlab::seg
