#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace closurelab {

/// SplitMix64 finaliser; used to derive independent stream seeds from (seed, index, ...) tuples.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// Stream key for a tuple of integers. Order matters; the result depends on nothing else,
/// so stream m of a dataset is reproducible regardless of generation order.
constexpr std::uint64_t stream_key(std::initializer_list<std::uint64_t> parts) noexcept {
    std::uint64_t h = 0x243f6a8885a308d3ULL;
    for (auto p : parts) h = mix64(h ^ mix64(p));
    return h;
}

/// Engine for one named stream.
inline std::mt19937_64 make_stream(std::initializer_list<std::uint64_t> parts) {
    return std::mt19937_64(stream_key(parts));
}

/// Stream-purpose tags so that distinct consumers never share a stream.
namespace streams {
inline constexpr std::uint64_t initial_condition = 1;
inline constexpr std::uint64_t observation_noise = 2;
inline constexpr std::uint64_t network_init = 3;
inline constexpr std::uint64_t multistart = 4;
inline constexpr std::uint64_t unseen_ic = 5;
}  // namespace streams

}  // namespace closurelab
