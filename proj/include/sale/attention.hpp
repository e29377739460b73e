#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "sale/matrix.hpp"

namespace sale {

// Exact causal attention, one streaming pass per query row.
//
// Logits are float32 (shared dot product with the block-sparse path); the
// softmax statistics and the output accumulate in double so that reordering
// the summation across blocks cannot move results by more than float32
// rounding.
inline DenseMatrix full_attention(const HeadInput &input) {
    input.validate();
    const std::size_t n = input.seq_len();
    const std::size_t d = input.head_dim();
    const float inv_sqrt_d = 1.0f / std::sqrt(static_cast<float>(d));

    DenseMatrix out(n, d);
    std::vector<double> acc(d);
    for (std::size_t i = 0; i < n; ++i) {
        const float *q = input.query.row(i);
        double m = -std::numeric_limits<double>::infinity();
        double l = 0.0;
        std::fill(acc.begin(), acc.end(), 0.0);
        for (std::size_t j = 0; j <= i; ++j) {
            const float s = detail::dot(q, input.key.row(j), d) * inv_sqrt_d;
            if (s > m) {
                const double rescale = std::exp(m - static_cast<double>(s));
                l *= rescale;
                for (std::size_t c = 0; c < d; ++c)
                    acc[c] *= rescale;
                m = s;
            }
            const double w = std::exp(static_cast<double>(s) - m);
            l += w;
            const float *v = input.value.row(j);
            for (std::size_t c = 0; c < d; ++c)
                acc[c] += w * v[c];
        }
        for (std::size_t c = 0; c < d; ++c)
            out(i, c) = static_cast<float>(acc[c] / l);
    }
    return out;
}

} // namespace sale
