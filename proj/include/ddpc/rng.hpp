#pragma once

#include "ddpc/types.hpp"

#include <cstdint>
#include <initializer_list>
#include <random>

namespace ddpc {

/// SplitMix64 step; used only to derive independent sub-stream seeds.
inline std::uint64_t splitmix64(std::uint64_t& state)
{
    state += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// Derives a stream seed from a master seed and a path of indices
/// (experiment number, purpose tag, ...). Streams with distinct paths
/// are statistically independent, and the derivation is reproducible.
inline std::uint64_t derive_seed(std::uint64_t master, std::initializer_list<std::uint64_t> path)
{
    std::uint64_t s = master;
    std::uint64_t out = splitmix64(s);
    for (std::uint64_t part : path) {
        s ^= part + 0x9e3779b97f4a7c15ULL + (s << 6) + (s >> 2);
        out = splitmix64(s);
    }
    return out;
}

/// A self-contained random stream. Each simulation, dataset member and
/// Monte-Carlo repetition owns one, so runs are reproducible and safe to
/// execute in parallel.
class RngStream {
public:
    explicit RngStream(std::uint64_t seed) : engine_(seed) {}

    RngStream(std::uint64_t master, std::initializer_list<std::uint64_t> path)
        : engine_(derive_seed(master, path))
    {
    }

    double gaussian() { return normal_(engine_); }

    double uniform(double lo, double hi)
    {
        return std::uniform_real_distribution<double>(lo, hi)(engine_);
    }

    Vec gaussian_vector(Index dim)
    {
        Vec v(dim);
        for (Index i = 0; i < dim; ++i)
            v[i] = gaussian();
        return v;
    }

    Vec uniform_vector(Index dim, double lo, double hi)
    {
        Vec v(dim);
        for (Index i = 0; i < dim; ++i)
            v[i] = uniform(lo, hi);
        return v;
    }

    std::mt19937_64& engine() { return engine_; }

private:
    std::mt19937_64 engine_;
    std::normal_distribution<double> normal_;
};

} // namespace ddpc
