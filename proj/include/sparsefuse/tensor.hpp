// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "sparsefuse/common.hpp"

namespace sparsefuse {

/// (bs, h, seq_len, head_size) tensor, dense row-major.
template <typename T>
struct Tensor4 {
    int bs = 0, h = 0, n = 0, d = 0;
    std::vector<T> v;

    Tensor4() = default;
    Tensor4(int bs_, int h_, int n_, int d_)
        : bs(bs_), h(h_), n(n_), d(d_),
          v(static_cast<std::size_t>(bs_) * h_ * n_ * d_, T(0)) {}

    T& at(int b, int hh, int i, int k) {
        return v[((static_cast<std::size_t>(b) * h + hh) * n + i) * d + k];
    }
    const T& at(int b, int hh, int i, int k) const {
        return v[((static_cast<std::size_t>(b) * h + hh) * n + i) * d + k];
    }

    template <typename U>
    Tensor4<U> cast() const {
        Tensor4<U> out(bs, h, n, d);
        for (std::size_t i = 0; i < v.size(); ++i) out.v[i] = static_cast<U>(v[i]);
        return out;
    }
};

template <typename T>
struct AttentionInput {
    Tensor4<T> q, k, v;

    int bs() const { return q.bs; }
    int h() const { return q.h; }
    int seq_len() const { return q.n; }
    int head_size() const { return q.d; }

    void check() const {
        auto same = [&](const Tensor4<T>& t) {
            return t.bs == q.bs && t.h == q.h && t.n == q.n && t.d == q.d;
        };
        if (!same(k) || !same(v)) throw shape_error("Q, K, V shapes differ");
        if (q.bs < 1 || q.h < 1 || q.n < 1 || q.d < 1) throw shape_error("empty attention input");
    }

    template <typename U>
    AttentionInput<U> cast() const {
        return {q.template cast<U>(), k.template cast<U>(), v.template cast<U>()};
    }
};

/// Seeded input in [-1, 1), one value per element in storage order.
template <typename T>
AttentionInput<T> random_attention_input(int bs, int h, int n, int d, std::uint64_t seed) {
    AttentionInput<T> in{Tensor4<T>(bs, h, n, d), Tensor4<T>(bs, h, n, d), Tensor4<T>(bs, h, n, d)};
    std::mt19937_64 rng(seed);
    auto fill = [&](Tensor4<T>& t) {
        for (auto& x : t.v) x = static_cast<T>(2.0 * unit_real(rng) - 1.0);
    };
    fill(in.q);
    fill(in.k);
    fill(in.v);
    return in;
}

}  // namespace sparsefuse
