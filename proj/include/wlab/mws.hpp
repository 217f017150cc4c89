#pragma once

// Memoised wake-sleep. Each signal keeps a small memory of its best-scoring
// (parse, segmentation) pairs; every iteration proposes fresh parses through
// the recognizer, rescores only what is new, and then takes one wake step
// (prior ascent on memory entries, softmax-weighted by joint score) and one
// sleep step (recognition ascent toward the memory).
//
// The sleep objective groups memory entries by segmentation: the neural
// segmentation density depends only on s, so summing the entry weights per
// unique s is exact, and saves most decoder passes. The reported "elbo" is
// the variational bound induced by the memory softmax: sum_r c_r (joint_r -
// log c_r), averaged over signals with nonempty memory.
//
// Work fans out over signals in fixed-size blocks; gradients and memory
// merges are reduced in signal order, so results are independent of thread
// scheduling.

#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "wlab/infer.hpp"

namespace wlab::mws {

struct MemoryEntry {
    Parse parse;
    Segmentation seg;
    double joint = -INFINITY;
};

struct ParseMemory {
    std::map<std::string, std::vector<MemoryEntry>> slots;  // keyed by signal id
};

// descending joint; deterministic tie-break on content
inline bool entry_before(const MemoryEntry& a, const MemoryEntry& b) {
    if (a.joint != b.joint) return a.joint > b.joint;
    if (a.parse != b.parse) return a.parse < b.parse;
    return a.seg.boundaries < b.seg.boundaries;
}

inline void memory_merge(std::vector<MemoryEntry>& slot, std::vector<MemoryEntry> fresh, int r_mem) {
    for (auto& e : fresh) {
        bool dup = false;
        for (const auto& have : slot)
            if (have.parse == e.parse && have.seg == e.seg) { dup = true; break; }
        if (!dup) slot.push_back(std::move(e));
    }
    std::sort(slot.begin(), slot.end(), entry_before);
    if (static_cast<int>(slot.size()) > r_mem) slot.resize(static_cast<std::size_t>(r_mem));
}

inline std::vector<double> softmax_weights(const std::vector<MemoryEntry>& slot) {
    std::vector<double> lw(slot.size());
    for (std::size_t i = 0; i < slot.size(); ++i) lw[i] = slot[i].joint;
    double lse = logsumexp(lw);
    std::vector<double> w(slot.size());
    for (std::size_t i = 0; i < slot.size(); ++i) w[i] = std::exp(lw[i] - lse);
    return w;
}

struct MwsConfig {
    int r_mem = 5;
    int k_prop = 10;
    int iterations = 50;
    double lr = 1e-3;
    double pi = 0.5;                // filtering share of the proposal mixture
    bool freeze_renderer = true;    // wake updates the prior only
    bool freeze_derenderer = true;  // sleep updates the segmenter only
    int jobs = 1;
    int block = 32;                 // signals per parallel block
    std::uint64_t seed = 0;
};

struct MwsLogRow {
    int iteration = 0;
    double avg_best_joint = 0.0;
    double elbo = 0.0;
    int skipped_signals = 0;
};

struct MwsDataItem {
    std::string id;
    Signal x;
};

namespace detail {

// one signal's proposal round: sample segmentations, derender ids per unique
// segmentation, score unique novel pairs by the joint
struct ProposalRound {
    std::vector<MemoryEntry> fresh;
    bool all_impossible = true;
};

inline ProposalRound propose_round(const nn::ParamStore& ps, const ModelConfig& cfg,
                                   const Signal& x, const std::vector<double>& smooth,
                                   const std::vector<seg::SegmentationProposal>& filter_cands,
                                   const std::vector<MemoryEntry>& slot, const MwsConfig& mc,
                                   Rng& rng) {
    ProposalRound round;
    std::vector<Segmentation> segs;
    segs.reserve(static_cast<std::size_t>(mc.k_prop));
    for (int k = 0; k < mc.k_prop; ++k) {
        if (rng.bernoulli(mc.pi))
            segs.push_back(filter_cands[rng.below(filter_cands.size())].seg);
        else
            segs.push_back(seg::neural_segment(ps, x, rng).seg);
    }
    // derender distributions once per unique segmentation
    std::vector<Segmentation> uniq;
    std::vector<std::vector<rec::TupleDistribution>> dists;
    std::vector<std::size_t> which(segs.size());
    for (std::size_t k = 0; k < segs.size(); ++k) {
        std::size_t u = 0;
        while (u < uniq.size() && !(uniq[u] == segs[k])) ++u;
        if (u == uniq.size()) {
            uniq.push_back(segs[k]);
            std::vector<rec::TupleDistribution> d;
            for (int n = 0; n < segs[k].segments(); ++n)
                d.push_back(rec::derender_segment(
                    ps, cfg,
                    rec::segment_channels(smooth, x, segs[k].begin(n), segs[k].end(n),
                                          gen::segment_continuity(x, segs[k], n))));
            dists.push_back(std::move(d));
        }
        which[k] = u;
    }
    std::vector<MemoryEntry> cand;
    for (std::size_t k = 0; k < segs.size(); ++k) {
        MemoryEntry e;
        e.seg = segs[k];
        for (const auto& d : dists[which[k]])
            e.parse.tuples.push_back(
                {rng.categorical(d.mean), rng.categorical(d.feat), rng.categorical(d.onoff)});
        cand.push_back(std::move(e));
    }
    for (auto& e : cand) {
        bool known = false;
        for (const auto& have : round.fresh)
            if (have.parse == e.parse && have.seg == e.seg) { known = true; break; }
        if (known) continue;
        double joint = -INFINITY;
        for (const auto& have : slot)
            if (have.parse == e.parse && have.seg == e.seg) { joint = have.joint; break; }
        if (!std::isfinite(joint)) joint = infer::joint_logprob(ps, cfg, e.parse, x, e.seg);
        if (!std::isfinite(joint)) continue;
        round.all_impossible = false;
        e.joint = joint;
        round.fresh.push_back(std::move(e));
    }
    return round;
}

} // namespace detail

// Returns the per-iteration log; `memory` and `ps` are updated in place.
inline std::vector<MwsLogRow> mws_train(nn::ParamStore& ps, const ModelConfig& cfg,
                                        ParseMemory& memory, const std::vector<MwsDataItem>& data,
                                        const MwsConfig& mc,
                                        const std::function<void(const MwsLogRow&)>& on_iteration = {},
                                        const seg::FilterScaleSet& scales =
                                            seg::FilterScaleSet::standard()) {
    if (data.empty()) throw TrainError("empty training set");
    if (mc.r_mem < 1 || mc.k_prop < 1 || mc.iterations < 0)
        throw TrainError("memory size, proposal count, and iterations must be positive");
    if (mc.pi < 0 || mc.pi > 1) throw TrainError("mixture weight must lie in [0,1]");
    const int n_sig = static_cast<int>(data.size());
    for (const auto& item : data) memory.slots[item.id];  // realize every slot up front

    std::vector<std::vector<seg::SegmentationProposal>> filter_cands(data.size());
    std::vector<std::vector<double>> smooths(data.size());
    parallel_for(static_cast<std::size_t>(n_sig), mc.jobs, [&](std::size_t i) {
        filter_cands[i] = seg::propose_filtering(data[i].x, scales);
        smooths[i] = seg::gp_smooth(data[i].x, rec::kDerenderLambda);
    });

    nn::Adam wake_opt{mc.lr}, sleep_opt{mc.lr};
    std::vector<MwsLogRow> log;
    std::map<std::string, double> prev_best;

    const int block = std::max(1, mc.block);
    for (int it = 0; it < mc.iterations; ++it) {
        MwsLogRow row;
        row.iteration = it;

        // propose and rescore, block-parallel; merge in signal order
        std::vector<detail::ProposalRound> rounds(data.size());
        for (int b0 = 0; b0 < n_sig; b0 += block) {
            const std::size_t nb = static_cast<std::size_t>(std::min(block, n_sig - b0));
            parallel_for(nb, mc.jobs, [&](std::size_t j) {
                const std::size_t i = static_cast<std::size_t>(b0) + j;
                Rng rng(mix64(mix64(mc.seed, fnv1a(data[i].id)),
                              mix64(fnv1a("mws-iter"), static_cast<std::uint64_t>(it))));
                rounds[i] = detail::propose_round(ps, cfg, data[i].x, smooths[i], filter_cands[i],
                                                  memory.slots.at(data[i].id), mc, rng);
            });
        }
        for (std::size_t i = 0; i < data.size(); ++i) {
            auto& slot = memory.slots[data[i].id];
            if (rounds[i].all_impossible) ++row.skipped_signals;
            memory_merge(slot, std::move(rounds[i].fresh), mc.r_mem);
            if (!slot.empty()) {
                double best = slot.front().joint;
                auto pb = prev_best.find(data[i].id);
                if (pb != prev_best.end() && best < pb->second - 1e-12)
                    throw TrainError("memory best score decreased for signal " + data[i].id);
                prev_best[data[i].id] = best;
            }
        }
        rounds.clear();

        // log the memory state reached this iteration
        int n_eff = 0;
        for (const auto& item : data) {
            const auto& slot = memory.slots[item.id];
            if (slot.empty()) continue;
            ++n_eff;
            row.avg_best_joint += slot.front().joint;
            auto w = softmax_weights(slot);
            for (std::size_t r = 0; r < slot.size(); ++r)
                if (w[r] > 0) row.elbo += w[r] * (slot[r].joint - std::log(w[r]));
        }
        if (n_eff > 0) {
            row.avg_best_joint /= n_eff;
            row.elbo /= n_eff;
        }

        // wake: prior ascent on memory entries (plus renderer when unfrozen)
        const double inv_n = 1.0 / static_cast<double>(std::max(1, n_eff));
        nn::GradStore wake_grads;
        std::vector<nn::GradStore> part(static_cast<std::size_t>(block));
        for (int b0 = 0; b0 < n_sig; b0 += block) {
            const std::size_t nb = static_cast<std::size_t>(std::min(block, n_sig - b0));
            parallel_for(nb, mc.jobs, [&](std::size_t j) {
                part[j].clear();
                const auto& item = data[static_cast<std::size_t>(b0) + j];
                const auto& slot = memory.slots.at(item.id);
                if (slot.empty()) return;
                auto w = softmax_weights(slot);
                nn::Tape tp(true);
                std::vector<nn::NodeId> terms;
                std::vector<double> coef;
                for (std::size_t r = 0; r < slot.size(); ++r) {
                    if (w[r] <= 0) continue;
                    terms.push_back(gen::prior_logprob_node(tp, ps, cfg, slot[r].parse));
                    coef.push_back(w[r]);
                    if (!mc.freeze_renderer) {
                        terms.push_back(gen::render_signal_logprob_node(tp, ps, cfg, slot[r].parse,
                                                                        item.x, slot[r].seg));
                        coef.push_back(w[r]);
                    }
                }
                nn::NodeId loss = tp.weighted_sum(terms, coef);
                tp.backward(tp.scale(loss, -inv_n));
                tp.export_grads_into(part[j], 1.0);
            });
            for (std::size_t j = 0; j < nb; ++j) nn::grad_accumulate(wake_grads, part[j]);
        }
        if (!wake_grads.empty()) wake_opt.step(ps, wake_grads);

        // sleep: segmenter toward memory segmentations (weights grouped per
        // unique s), derenderer per entry when unfrozen
        nn::GradStore sleep_grads;
        for (int b0 = 0; b0 < n_sig; b0 += block) {
            const std::size_t nb = static_cast<std::size_t>(std::min(block, n_sig - b0));
            parallel_for(nb, mc.jobs, [&](std::size_t j) {
                part[j].clear();
                const std::size_t si = static_cast<std::size_t>(b0) + j;
                const auto& item = data[si];
                const auto& slot = memory.slots.at(item.id);
                if (slot.empty()) return;
                auto w = softmax_weights(slot);
                std::vector<Segmentation> uniq;
                std::vector<double> mass;
                for (std::size_t r = 0; r < slot.size(); ++r) {
                    std::size_t u = 0;
                    while (u < uniq.size() && !(uniq[u] == slot[r].seg)) ++u;
                    if (u == uniq.size()) {
                        uniq.push_back(slot[r].seg);
                        mass.push_back(0.0);
                    }
                    mass[u] += w[r];
                }
                nn::Tape tp(true);
                std::vector<nn::NodeId> terms;
                std::vector<double> coef;
                for (std::size_t u = 0; u < uniq.size(); ++u) {
                    if (mass[u] <= 0) continue;
                    terms.push_back(seg::neural_logprob_node(tp, ps, item.x, uniq[u]));
                    coef.push_back(mass[u]);
                }
                if (!mc.freeze_derenderer) {
                    for (std::size_t r = 0; r < slot.size(); ++r) {
                        if (w[r] <= 0) continue;
                        for (int n = 0; n < slot[r].seg.segments(); ++n) {
                            terms.push_back(rec::derender_logmass_node(
                                tp, ps, cfg,
                                rec::segment_channels(smooths[si], item.x, slot[r].seg.begin(n),
                                                      slot[r].seg.end(n),
                                                      gen::segment_continuity(item.x, slot[r].seg, n)),
                                slot[r].parse.tuples[static_cast<std::size_t>(n)]));
                            coef.push_back(w[r]);
                        }
                    }
                }
                if (terms.empty()) return;
                nn::NodeId loss = tp.weighted_sum(terms, coef);
                tp.backward(tp.scale(loss, -inv_n));
                tp.export_grads_into(part[j], 1.0);
            });
            for (std::size_t j = 0; j < nb; ++j) nn::grad_accumulate(sleep_grads, part[j]);
        }
        if (!sleep_grads.empty()) sleep_opt.step(ps, sleep_grads);

        log.push_back(row);
        if (on_iteration) on_iteration(row);
    }
    return log;
}

} // namespace wlab::mws
