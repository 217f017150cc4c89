#pragma once

// Binary checkpoint container: magic "WLAB1", format version, parameter
// version tag, then (name, shape, row-major float64 values) per tensor.
// Little-endian, written in map order, so saves are byte-reproducible.

#include <bit>
#include <cstdint>
#include <fstream>
#include <string>

#include "wlab/params.hpp"

namespace wlab::nn {

static_assert(std::endian::native == std::endian::little, "checkpoint container assumes little-endian");

inline constexpr char kCheckpointMagic[5] = {'W', 'L', 'A', 'B', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {
template <class T>
void put(std::ofstream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <class T>
T get(std::ifstream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw FormatError("truncated checkpoint");
    return v;
}
} // namespace detail

inline void save_checkpoint(const ParamStore& ps, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot write " + path);
    out.write(kCheckpointMagic, 5);
    detail::put<std::uint32_t>(out, kCheckpointVersion);
    detail::put<std::uint64_t>(out, ps.version);
    detail::put<std::uint64_t>(out, ps.tensors.size());
    for (const auto& [name, t] : ps.tensors) {
        detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(t.shape.size()));
        for (int d : t.shape) detail::put<std::uint64_t>(out, static_cast<std::uint64_t>(d));
        out.write(reinterpret_cast<const char*>(t.data.data()),
                  static_cast<std::streamsize>(t.data.size() * sizeof(double)));
    }
    if (!out) throw FormatError("write failed for " + path);
}

inline ParamStore load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open checkpoint " + path);
    char magic[5];
    in.read(magic, 5);
    if (!in || std::string_view(magic, 5) != std::string_view(kCheckpointMagic, 5))
        throw FormatError(path + ": not a WLAB1 checkpoint");
    auto fmt = detail::get<std::uint32_t>(in);
    if (fmt != kCheckpointVersion)
        throw FormatError(path + ": unsupported checkpoint version " + std::to_string(fmt));
    ParamStore ps;
    ps.version = detail::get<std::uint64_t>(in);
    auto count = detail::get<std::uint64_t>(in);
    for (std::uint64_t k = 0; k < count; ++k) {
        auto name_len = detail::get<std::uint32_t>(in);
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        auto ndim = detail::get<std::uint32_t>(in);
        std::vector<int> shape(ndim);
        std::size_t total = 1;
        for (auto& d : shape) {
            d = static_cast<int>(detail::get<std::uint64_t>(in));
            total *= static_cast<std::size_t>(d);
        }
        Tensor t;
        t.shape = std::move(shape);
        t.data.resize(total);
        in.read(reinterpret_cast<char*>(t.data.data()), static_cast<std::streamsize>(total * sizeof(double)));
        if (!in) throw FormatError(path + ": truncated tensor '" + name + "'");
        for (double v : t.data)
            if (!std::isfinite(v)) throw FormatError(path + ": non-finite value in '" + name + "'");
        ps.add(name, std::move(t));
    }
    return ps;
}

} // namespace wlab::nn
