// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace sparsefuse {

// Error taxonomy shared by all modules.
struct invalid_parameter : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};
struct shape_error : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};
struct plan_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct degenerate_input : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};
struct illegal_segment : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};
struct internal_inconsistency : std::logic_error {
    using std::logic_error::logic_error;
};
struct backend_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct io_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// All seeded randomness in the library goes through mt19937_64 so that masks
// and sampled settings are bit-reproducible across platforms and languages
// that ship the same generator. Floating draws use the raw 64-bit output
// directly instead of std::uniform_real_distribution, whose mapping is
// implementation-defined.
inline double unit_real(std::mt19937_64& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// Derive a stream seed from a base seed and a tag. splitmix64 finalizer.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t tag) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (tag + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// FNV-1a, used for stable context hashes in cache files and reports.
inline std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 0xcbf29ce484222325ULL) {
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<std::size_t>(i)] = digits[v & 0xf];
        v >>= 4;
    }
    return out;
}

// Row-major bit packing, LSB-first within each byte. Used both as the dedup
// key for part-mask tiles and as the on-disk layout of dense dumps.
inline std::vector<std::uint8_t> pack_bits(const std::vector<std::uint8_t>& bits) {
    std::vector<std::uint8_t> out((bits.size() + 7) / 8, 0);
    for (std::size_t i = 0; i < bits.size(); ++i) {
        if (bits[i]) out[i >> 3] |= static_cast<std::uint8_t>(1u << (i & 7));
    }
    return out;
}

inline std::vector<std::uint8_t> unpack_bits(const std::vector<std::uint8_t>& bytes,
                                             std::size_t nbits) {
    if (bytes.size() < (nbits + 7) / 8) throw io_error("bit payload shorter than expected");
    std::vector<std::uint8_t> out(nbits, 0);
    for (std::size_t i = 0; i < nbits; ++i) {
        out[i] = (bytes[i >> 3] >> (i & 7)) & 1u;
    }
    return out;
}

}  // namespace sparsefuse
