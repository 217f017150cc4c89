#pragma once

// Reverse-mode automatic differentiation over vector-valued nodes.
//
// One Tape instance is one evaluation: ops append nodes (and, when
// constructed with training=true, backward records). The same builder code
// therefore serves both fast scoring (no records) and training. Node values
// live in stable bump-allocated slabs; parameter leaves alias ParamStore
// memory directly.

#include <cassert>
#include <cmath>
#include <cstring>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "wlab/params.hpp"

namespace wlab::nn {

using NodeId = int;

inline constexpr double kLogSigLo = -6.0;  // Gaussian head log-sigma bounds
inline constexpr double kLogSigHi = 2.0;

// log sigma = lo + (hi-lo) * sigmoid(raw): smooth, bounded, collapse-proof
inline double bounded_log_sigma(double raw) {
    return kLogSigLo + (kLogSigHi - kLogSigLo) / (1.0 + std::exp(-raw));
}

class Tape {
public:
    explicit Tape(bool training = false) : training_(training) {}

    bool training() const { return training_; }

    void reset() {
        nodes_.clear();
        steps_.clear();
        args_.clear();
        argw_.clear();
        leaves_.clear();
        big_.clear();
        slab_idx_ = 0;
        slab_off_ = 0;
        grad_len_ = 0;
        gbuf_.clear();
        ran_backward_ = false;
    }

    // ---- leaves ----

    NodeId param(const ParamStore& ps, const std::string& name) {
        auto it = leaves_.find(name);
        if (it != leaves_.end()) return it->second;
        const Tensor& t = ps.at(name);
        NodeId id = add_node_external(t.data.data(), t.size());
        leaves_.emplace(name, id);
        return id;
    }

    NodeId input(const double* data, int len) {
        NodeId id = alloc_node(len);
        std::memcpy(value_ptr(id), data, sizeof(double) * static_cast<std::size_t>(len));
        return id;
    }
    NodeId input(const std::vector<double>& v) { return input(v.data(), static_cast<int>(v.size())); }
    NodeId scalar_input(double v) { return input(&v, 1); }
    NodeId zeros_input(int len) {
        NodeId id = alloc_node(len);
        std::fill_n(value_ptr(id), len, 0.0);
        return id;
    }

    // ---- ops ----

    NodeId concat(NodeId a, NodeId b) {
        NodeId y = alloc_node(len(a) + len(b));
        double* out = value_ptr(y);
        std::memcpy(out, val(a), sizeof(double) * static_cast<std::size_t>(len(a)));
        std::memcpy(out + len(a), val(b), sizeof(double) * static_cast<std::size_t>(len(b)));
        push(Op::Concat, y, a, b);
        return y;
    }

    NodeId slice(NodeId a, int off, int n) {
        assert(off >= 0 && off + n <= len(a));
        NodeId y = alloc_node(n);
        std::memcpy(value_ptr(y), val(a) + off, sizeof(double) * static_cast<std::size_t>(n));
        push(Op::Slice, y, a, -1, off);
        return y;
    }

    // y = W x (+ b); W flattened row-major (out x in)
    NodeId affine(NodeId W, NodeId b, NodeId x) {
        int in = len(x);
        int out = len(W) / in;
        assert(out * in == len(W));
        assert(b < 0 || len(b) == out);
        NodeId y = alloc_node(out);
        const double* w = val(W);
        const double* xv = val(x);
        double* yv = value_ptr(y);
        for (int o = 0; o < out; ++o) {
            const double* row = w + static_cast<std::size_t>(o) * in;
            double acc = b >= 0 ? val(b)[o] : 0.0;
            for (int i = 0; i < in; ++i) acc += row[i] * xv[i];
            yv[o] = acc;
        }
        push(Op::Affine, y, x, b, W);
        return y;
    }

    NodeId sigmoid(NodeId a) { return unary(Op::Sigmoid, a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); }); }
    NodeId tanh(NodeId a) { return unary(Op::Tanh, a, [](double x) { return std::tanh(x); }); }
    NodeId exp(NodeId a) { return unary(Op::Exp, a, [](double x) { return std::exp(x); }); }

    NodeId add(NodeId a, NodeId b) { return binary(Op::Add, a, b, [](double x, double y) { return x + y; }); }
    NodeId sub(NodeId a, NodeId b) { return binary(Op::Sub, a, b, [](double x, double y) { return x - y; }); }
    NodeId mul(NodeId a, NodeId b) { return binary(Op::Mul, a, b, [](double x, double y) { return x * y; }); }

    NodeId scale(NodeId a, double k) {
        NodeId y = alloc_node(len(a));
        for (int i = 0; i < len(a); ++i) value_ptr(y)[i] = k * val(a)[i];
        push(Op::Scale, y, a, -1, 0, 0, k);
        return y;
    }

    // y = lo + span * sigmoid(a), elementwise (bounded reparameterization)
    NodeId sigmoid_range(NodeId a, double lo, double hi) {
        NodeId y = alloc_node(len(a));
        for (int i = 0; i < len(a); ++i) {
            double s = 1.0 / (1.0 + std::exp(-val(a)[i]));
            value_ptr(y)[i] = lo + (hi - lo) * s;
        }
        push(Op::SigmoidRange, y, a, -1, 0, 0, lo, hi - lo);
        return y;
    }

    NodeId sum(NodeId a) {
        NodeId y = alloc_node(1);
        double acc = 0;
        for (int i = 0; i < len(a); ++i) acc += val(a)[i];
        value_ptr(y)[0] = acc;
        push(Op::Sum, y, a);
        return y;
    }

    NodeId emb_row(NodeId emb, int row, int cols) {
        NodeId y = alloc_node(cols);
        std::memcpy(value_ptr(y), val(emb) + static_cast<std::size_t>(row) * cols,
                    sizeof(double) * static_cast<std::size_t>(cols));
        push(Op::EmbRow, y, emb, -1, row, cols);
        return y;
    }

    // scalar log softmax mass of class k
    NodeId cat_logmass(NodeId logits, int k) {
        NodeId y = alloc_node(1);
        value_ptr(y)[0] = val(logits)[k] - lse(val(logits), len(logits));
        push(Op::CatLogMass, y, logits, -1, k);
        return y;
    }

    NodeId log_softmax(NodeId logits) {
        NodeId y = alloc_node(len(logits));
        double m = lse(val(logits), len(logits));
        for (int i = 0; i < len(logits); ++i) value_ptr(y)[i] = val(logits)[i] - m;
        push(Op::LogSoftmax, y, logits);
        return y;
    }

    // scalar log Bernoulli mass; logit at a[off]
    NodeId bern_logmass(NodeId a, int off, int target) {
        NodeId y = alloc_node(1);
        double l = val(a)[off];
        value_ptr(y)[0] = target ? -softplus(-l) : -softplus(l);
        push(Op::BernLogMass, y, a, -1, off, target);
        return y;
    }

    // scalar log N(x; mu, sigma^2) with mu = a[off], log sigma bounded via
    // sigmoid from a[off+1]
    NodeId gauss_obs(NodeId a, int off, double x) {
        NodeId y = alloc_node(1);
        double mu = val(a)[off];
        double ls = logsig(val(a)[off + 1]);
        double s2 = std::exp(2.0 * ls);
        double d = x - mu;
        value_ptr(y)[0] = -0.918938533204672742 - ls - 0.5 * d * d / s2;
        push(Op::GaussObs, y, a, -1, off, 0, x);
        return y;
    }

    // scalar KL(N(mu, diag exp(lv)) || N(0, I))
    NodeId kl_std_normal(NodeId mu, NodeId lv) {
        assert(len(mu) == len(lv));
        NodeId y = alloc_node(1);
        double acc = 0;
        for (int i = 0; i < len(mu); ++i)
            acc += std::exp(val(lv)[i]) + val(mu)[i] * val(mu)[i] - 1.0 - val(lv)[i];
        value_ptr(y)[0] = 0.5 * acc;
        push(Op::KlStdNormal, y, mu, lv);
        return y;
    }

    // scalar y = sum_j w_j * x_j over scalar nodes
    NodeId weighted_sum(std::span<const NodeId> xs, std::span<const double> ws) {
        assert(xs.size() == ws.size());
        NodeId y = alloc_node(1);
        double acc = 0;
        for (std::size_t j = 0; j < xs.size(); ++j) acc += ws[j] * val(xs[j])[0];
        value_ptr(y)[0] = acc;
        int off = static_cast<int>(args_.size());
        for (std::size_t j = 0; j < xs.size(); ++j) {
            args_.push_back(xs[j]);
            argw_.push_back(ws[j]);
        }
        push(Op::WeightedSum, y, -1, -1, off, static_cast<int>(xs.size()));
        return y;
    }

    double value(NodeId id) const { return val(id)[0]; }
    const double* values(NodeId id) const { return val(id); }
    int length(NodeId id) const { return len(id); }
    std::vector<double> values_vec(NodeId id) const { return {val(id), val(id) + len(id)}; }

    // ---- backward ----

    void backward(NodeId loss, double seed = 1.0) {
        if (!training_) throw TrainError("backward on a non-training tape");
        if (ran_backward_) throw TrainError("backward already ran on this tape");
        gbuf_.assign(static_cast<std::size_t>(grad_len_), 0.0);
        ran_backward_ = true;
        gbuf_[static_cast<std::size_t>(nodes_[static_cast<std::size_t>(loss)].goff)] += seed;
        for (std::size_t si = steps_.size(); si-- > 0;) run_backward(steps_[si]);
        steps_.clear();
    }

    const double* grad(NodeId id) const { return gbuf_.data() + nodes_[static_cast<std::size_t>(id)].goff; }

    // gradients of every parameter leaf touched by this tape
    GradStore export_grads() const {
        GradStore g;
        for (const auto& [name, id] : leaves_) {
            const Node& n = nodes_[static_cast<std::size_t>(id)];
            g.emplace(name, Vec(gbuf_.begin() + n.goff, gbuf_.begin() + n.goff + n.len));
        }
        return g;
    }

    void export_grads_into(GradStore& g, double scale = 1.0) const {
        for (const auto& [name, id] : leaves_) {
            const Node& n = nodes_[static_cast<std::size_t>(id)];
            auto& dst = g[name];
            if (dst.empty()) dst.assign(static_cast<std::size_t>(n.len), 0.0);
            for (int i = 0; i < n.len; ++i) dst[static_cast<std::size_t>(i)] += scale * gbuf_[n.goff + i];
        }
    }

private:
    enum class Op : unsigned char {
        Concat, Slice, Affine, Sigmoid, Tanh, Exp, Add, Sub, Mul, Scale, SigmoidRange,
        Sum, EmbRow, CatLogMass, LogSoftmax, BernLogMass, GaussObs, KlStdNormal, WeightedSum
    };

    struct Node {
        const double* value;
        int len;
        long long goff;
    };

    struct Step {
        Op op;
        NodeId y, a, b;
        int i0 = 0, i1 = 0;
        double aux = 0, aux2 = 0;
    };

    static double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::fabs(x))); }
    static double logsig(double raw) { return bounded_log_sigma(raw); }
    static double lse(const double* x, int n) {
        double m = x[0];
        for (int i = 1; i < n; ++i) m = std::max(m, x[i]);
        double s = 0;
        for (int i = 0; i < n; ++i) s += std::exp(x[i] - m);
        return m + std::log(s);
    }

    const double* val(NodeId id) const { return nodes_[static_cast<std::size_t>(id)].value; }
    int len(NodeId id) const { return nodes_[static_cast<std::size_t>(id)].len; }
    double* value_ptr(NodeId id) {
        return const_cast<double*>(nodes_[static_cast<std::size_t>(id)].value);
    }
    double* gptr(NodeId id) { return gbuf_.data() + nodes_[static_cast<std::size_t>(id)].goff; }

    NodeId alloc_node(int n) {
        double* p = slab_alloc(n);
        nodes_.push_back(Node{p, n, grad_len_});
        grad_len_ += n;
        return static_cast<NodeId>(nodes_.size()) - 1;
    }

    NodeId add_node_external(const double* p, int n) {
        nodes_.push_back(Node{p, n, grad_len_});
        grad_len_ += n;
        return static_cast<NodeId>(nodes_.size()) - 1;
    }

    double* slab_alloc(int n) {
        const std::size_t need = static_cast<std::size_t>(n);
        if (need > kSlab) {
            big_.emplace_back(need);
            return big_.back().data();
        }
        if (slab_idx_ < slabs_.size() && slab_off_ + need > kSlab) {
            ++slab_idx_;
            slab_off_ = 0;
        }
        if (slab_idx_ >= slabs_.size()) {
            slabs_.emplace_back(kSlab);
            slab_off_ = 0;
        }
        double* p = slabs_[slab_idx_].data() + slab_off_;
        slab_off_ += need;
        return p;
    }

    template <class F>
    NodeId unary(Op op, NodeId a, F f) {
        NodeId y = alloc_node(len(a));
        for (int i = 0; i < len(a); ++i) value_ptr(y)[i] = f(val(a)[i]);
        push(op, y, a);
        return y;
    }

    template <class F>
    NodeId binary(Op op, NodeId a, NodeId b, F f) {
        assert(len(a) == len(b));
        NodeId y = alloc_node(len(a));
        for (int i = 0; i < len(a); ++i) value_ptr(y)[i] = f(val(a)[i], val(b)[i]);
        push(op, y, a, b);
        return y;
    }

    void push(Op op, NodeId y, NodeId a, NodeId b = -1, int i0 = 0, int i1 = 0, double aux = 0,
              double aux2 = 0) {
        if (training_) steps_.push_back(Step{op, y, a, b, i0, i1, aux, aux2});
    }

    void run_backward(const Step& s) {
        const double* gy = gptr(s.y);
        switch (s.op) {
            case Op::Concat: {
                double* ga = gptr(s.a);
                double* gb = gptr(s.b);
                int la = len(s.a);
                for (int i = 0; i < la; ++i) ga[i] += gy[i];
                for (int i = 0; i < len(s.b); ++i) gb[i] += gy[la + i];
                break;
            }
            case Op::Slice: {
                double* ga = gptr(s.a);
                for (int i = 0; i < len(s.y); ++i) ga[s.i0 + i] += gy[i];
                break;
            }
            case Op::Affine: {
                // s.a = x, s.b = bias (or -1), s.i0 = W
                const NodeId W = s.i0;
                const int in = len(s.a);
                const int out = len(s.y);
                const double* wv = val(W);
                const double* xv = val(s.a);
                double* gx = gptr(s.a);
                double* gw = gptr(W);
                double* gb = s.b >= 0 ? gptr(s.b) : nullptr;
                for (int o = 0; o < out; ++o) {
                    const double g = gy[o];
                    if (g == 0.0) continue;
                    const double* row = wv + static_cast<std::size_t>(o) * in;
                    double* grow = gw + static_cast<std::size_t>(o) * in;
                    for (int i = 0; i < in; ++i) {
                        gx[i] += row[i] * g;
                        grow[i] += xv[i] * g;
                    }
                    if (gb) gb[o] += g;
                }
                break;
            }
            case Op::Sigmoid: {
                double* ga = gptr(s.a);
                const double* yv = val(s.y);
                for (int i = 0; i < len(s.y); ++i) ga[i] += gy[i] * yv[i] * (1.0 - yv[i]);
                break;
            }
            case Op::Tanh: {
                double* ga = gptr(s.a);
                const double* yv = val(s.y);
                for (int i = 0; i < len(s.y); ++i) ga[i] += gy[i] * (1.0 - yv[i] * yv[i]);
                break;
            }
            case Op::Exp: {
                double* ga = gptr(s.a);
                const double* yv = val(s.y);
                for (int i = 0; i < len(s.y); ++i) ga[i] += gy[i] * yv[i];
                break;
            }
            case Op::Add: {
                double* ga = gptr(s.a);
                double* gb = gptr(s.b);
                for (int i = 0; i < len(s.y); ++i) {
                    ga[i] += gy[i];
                    gb[i] += gy[i];
                }
                break;
            }
            case Op::Sub: {
                double* ga = gptr(s.a);
                double* gb = gptr(s.b);
                for (int i = 0; i < len(s.y); ++i) {
                    ga[i] += gy[i];
                    gb[i] -= gy[i];
                }
                break;
            }
            case Op::Mul: {
                double* ga = gptr(s.a);
                double* gb = gptr(s.b);
                const double* av = val(s.a);
                const double* bv = val(s.b);
                for (int i = 0; i < len(s.y); ++i) {
                    ga[i] += gy[i] * bv[i];
                    gb[i] += gy[i] * av[i];
                }
                break;
            }
            case Op::Scale: {
                double* ga = gptr(s.a);
                for (int i = 0; i < len(s.y); ++i) ga[i] += s.aux * gy[i];
                break;
            }
            case Op::SigmoidRange: {
                double* ga = gptr(s.a);
                const double* yv = val(s.y);
                for (int i = 0; i < len(s.y); ++i) {
                    double sig = (yv[i] - s.aux) / s.aux2;  // recover sigmoid value
                    ga[i] += gy[i] * s.aux2 * sig * (1.0 - sig);
                }
                break;
            }
            case Op::Sum: {
                double* ga = gptr(s.a);
                for (int i = 0; i < len(s.a); ++i) ga[i] += gy[0];
                break;
            }
            case Op::EmbRow: {
                double* ge = gptr(s.a);
                for (int i = 0; i < s.i1; ++i) ge[static_cast<std::size_t>(s.i0) * s.i1 + i] += gy[i];
                break;
            }
            case Op::CatLogMass: {
                double* ga = gptr(s.a);
                const double* logits = val(s.a);
                int n = len(s.a);
                double m = lse(logits, n);
                for (int i = 0; i < n; ++i) {
                    double p = std::exp(logits[i] - m);
                    ga[i] += gy[0] * ((i == s.i0 ? 1.0 : 0.0) - p);
                }
                break;
            }
            case Op::LogSoftmax: {
                double* ga = gptr(s.a);
                const double* yv = val(s.y);
                int n = len(s.a);
                double gsum = 0;
                for (int i = 0; i < n; ++i) gsum += gy[i];
                for (int i = 0; i < n; ++i) ga[i] += gy[i] - std::exp(yv[i]) * gsum;
                break;
            }
            case Op::BernLogMass: {
                double* ga = gptr(s.a);
                double l = val(s.a)[s.i0];
                double sig = 1.0 / (1.0 + std::exp(-l));
                ga[s.i0] += gy[0] * (static_cast<double>(s.i1) - sig);
                break;
            }
            case Op::GaussObs: {
                double* ga = gptr(s.a);
                double mu = val(s.a)[s.i0];
                double raw = val(s.a)[s.i0 + 1];
                double sig01 = 1.0 / (1.0 + std::exp(-raw));
                double ls = kLogSigLo + (kLogSigHi - kLogSigLo) * sig01;
                double s2 = std::exp(2.0 * ls);
                double d = s.aux - mu;
                double dls = -1.0 + d * d / s2;
                ga[s.i0] += gy[0] * d / s2;
                ga[s.i0 + 1] += gy[0] * dls * (kLogSigHi - kLogSigLo) * sig01 * (1.0 - sig01);
                break;
            }
            case Op::KlStdNormal: {
                double* gmu = gptr(s.a);
                double* glv = gptr(s.b);
                const double* mu = val(s.a);
                const double* lv = val(s.b);
                for (int i = 0; i < len(s.a); ++i) {
                    gmu[i] += gy[0] * mu[i];
                    glv[i] += gy[0] * 0.5 * (std::exp(lv[i]) - 1.0);
                }
                break;
            }
            case Op::WeightedSum: {
                for (int j = 0; j < s.i1; ++j) {
                    NodeId x = args_[static_cast<std::size_t>(s.i0) + j];
                    gptr(x)[0] += gy[0] * argw_[static_cast<std::size_t>(s.i0) + j];
                }
                break;
            }
        }
    }

    static constexpr std::size_t kSlab = 1u << 16;

    bool training_;
    std::vector<Node> nodes_;
    std::vector<Step> steps_;
    std::vector<NodeId> args_;
    std::vector<double> argw_;
    std::unordered_map<std::string, NodeId> leaves_;
    std::vector<Vec> slabs_;
    std::vector<Vec> big_;
    std::size_t slab_idx_ = 0;
    std::size_t slab_off_ = 0;
    long long grad_len_ = 0;
    Vec gbuf_;
    bool ran_backward_ = false;
};

inline NodeId sum_scalars(Tape& tp, const std::vector<NodeId>& xs) {
    if (xs.empty()) return tp.scalar_input(0.0);
    NodeId acc = xs[0];
    for (std::size_t i = 1; i < xs.size(); ++i) acc = tp.add(acc, xs[i]);
    return acc;
}

// Standard gated recurrent cell built from primitive ops. Weight layout:
// W is (4H x (I+H)) row-major over gates [input, forget, candidate, output],
// bias is 4H. Parameter count matches 4*H*(I+H+1).
struct LstmRef {
    NodeId W = -1;
    NodeId b = -1;
    int hidden = 0;
};

struct LstmState {
    NodeId h = -1;
    NodeId c = -1;
};

inline LstmRef lstm_ref(Tape& tp, const ParamStore& ps, const std::string& prefix, int hidden) {
    return LstmRef{tp.param(ps, prefix + ".W"), tp.param(ps, prefix + ".b"), hidden};
}

inline LstmState lstm_zero_state(Tape& tp, int hidden) {
    return LstmState{tp.zeros_input(hidden), tp.zeros_input(hidden)};
}

inline LstmState lstm_step(Tape& tp, const LstmRef& cell, NodeId x, const LstmState& st) {
    const int H = cell.hidden;
    NodeId xh = tp.concat(x, st.h);
    NodeId pre = tp.affine(cell.W, cell.b, xh);
    NodeId ig = tp.sigmoid(tp.slice(pre, 0, H));
    NodeId fg = tp.sigmoid(tp.slice(pre, H, H));
    NodeId gg = tp.tanh(tp.slice(pre, 2 * H, H));
    NodeId og = tp.sigmoid(tp.slice(pre, 3 * H, H));
    NodeId c2 = tp.add(tp.mul(fg, st.c), tp.mul(ig, gg));
    NodeId h2 = tp.mul(og, tp.tanh(c2));
    return LstmState{h2, c2};
}

// LSTM parameter tensors with forget-gate bias +1.
inline void add_lstm_params(ParamStore& ps, const std::string& prefix, int input, int hidden, Rng& rng) {
    ps.add(prefix + ".W", uniform_init({4 * hidden, input + hidden}, input + hidden, rng));
    Tensor b = zeros({4 * hidden});
    for (int i = hidden; i < 2 * hidden; ++i) b.data[static_cast<std::size_t>(i)] = 1.0;
    ps.add(prefix + ".b", std::move(b));
}

inline void add_affine_params(ParamStore& ps, const std::string& prefix, int out, int in, Rng& rng) {
    ps.add(prefix + ".W", uniform_init({out, in}, in, rng));
    ps.add(prefix + ".b", zeros({out}));
}

} // namespace wlab::nn
