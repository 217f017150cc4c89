#pragma once

// Named parameter arrays, gradient stores, and the Adam update.

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "wlab/common.hpp"

namespace wlab::nn {

using Vec = std::vector<double>;

struct Tensor {
    std::vector<int> shape;
    Vec data;

    int size() const { return static_cast<int>(data.size()); }
    int rows() const { return shape.empty() ? 0 : shape[0]; }
    int cols() const { return shape.size() > 1 ? shape[1] : 1; }
};

inline Tensor zeros(std::vector<int> shape) {
    int n = 1;
    for (int d : shape) n *= d;
    return Tensor{std::move(shape), Vec(static_cast<std::size_t>(n), 0.0)};
}

// uniform(-1/sqrt(fan_in), +1/sqrt(fan_in))
inline Tensor uniform_init(std::vector<int> shape, int fan_in, Rng& rng) {
    Tensor t = zeros(std::move(shape));
    double a = 1.0 / std::sqrt(static_cast<double>(std::max(1, fan_in)));
    for (auto& v : t.data) v = rng.uniform(-a, a);
    return t;
}

// All trainable parameters, keyed by dotted names ("rend.lstm.W", ...).
// std::map keeps iteration order deterministic. The version tag counts
// optimizer updates; modules that require trained weights check it.
struct ParamStore {
    std::map<std::string, Tensor> tensors;
    std::uint64_t version = 0;

    Tensor& at(const std::string& name) {
        auto it = tensors.find(name);
        if (it == tensors.end()) throw FormatError("missing parameter '" + name + "'");
        return it->second;
    }
    const Tensor& at(const std::string& name) const {
        auto it = tensors.find(name);
        if (it == tensors.end()) throw FormatError("missing parameter '" + name + "'");
        return it->second;
    }
    bool has(const std::string& name) const { return tensors.count(name) != 0; }

    void add(const std::string& name, Tensor t) {
        if (tensors.count(name)) throw FormatError("duplicate parameter '" + name + "'");
        tensors.emplace(name, std::move(t));
    }

    // copy every tensor under `prefix` from src (shapes must match if present)
    void adopt(const ParamStore& src, const std::string& prefix) {
        for (const auto& [name, t] : src.tensors) {
            if (name.rfind(prefix, 0) != 0) continue;
            auto it = tensors.find(name);
            if (it == tensors.end())
                tensors.emplace(name, t);
            else
                it->second = t;
        }
    }
};

using GradStore = std::map<std::string, Vec>;

inline void grad_accumulate(GradStore& into, const GradStore& from, double scale = 1.0) {
    for (const auto& [name, g] : from) {
        auto& dst = into[name];
        if (dst.empty()) dst.assign(g.size(), 0.0);
        for (std::size_t i = 0; i < g.size(); ++i) dst[i] += scale * g[i];
    }
}

// Adaptive moment estimation; minimizes, so pass gradients of a loss.
struct Adam {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    long long t = 0;
    std::map<std::string, std::pair<Vec, Vec>> moments;

    // Applies one update to every tensor named in grads. Tensors not named
    // keep their values; bias correction uses a single shared step count.
    void step(ParamStore& ps, const GradStore& grads) {
        ++t;
        double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
        double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
        for (const auto& [name, g] : grads) {
            Tensor& p = ps.at(name);
            if (g.size() != p.data.size())
                throw FormatError("gradient shape mismatch for '" + name + "'");
            auto& [m, v] = moments[name];
            if (m.empty()) {
                m.assign(g.size(), 0.0);
                v.assign(g.size(), 0.0);
            }
            for (std::size_t i = 0; i < g.size(); ++i) {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                double mhat = m[i] / c1;
                double vhat = v[i] / c2;
                p.data[i] -= lr * mhat / (std::sqrt(vhat) + eps);
            }
        }
        ++ps.version;
    }
};

} // namespace wlab::nn
