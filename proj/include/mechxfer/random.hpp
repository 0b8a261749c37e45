#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace mechxfer {

using Rng = std::mt19937_64;

std::uint64_t splitmix64(std::uint64_t x) noexcept;

// Counter-based seed derivation: every stochastic component draws its seed
// as derive_seed(master, stream, counter), where `stream` names the
// component ("split", "gcl", "synth", ...) and `counter` indexes the
// repeat, grid cell or domain. Distinct (stream, counter) pairs give
// statistically independent generators; the same triple always gives the
// same seed.
std::uint64_t derive_seed(std::uint64_t master, std::string_view stream, std::uint64_t counter = 0) noexcept;

inline Rng make_rng(std::uint64_t master, std::string_view stream, std::uint64_t counter = 0) {
    return Rng(derive_seed(master, stream, counter));
}

}  // namespace mechxfer
