#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "sale/block_grid.hpp"
#include "sale/matrix.hpp"
#include "sale/selection.hpp"

namespace sale {

struct SparseAttentionOutput {
    DenseMatrix output;
    std::vector<std::size_t> coverage; // key tokens attended, per query row
};

struct FlopCounts {
    std::size_t computed_blocks = 0;
    std::size_t skipped_blocks = 0;
    std::size_t total_blocks = 0;

    double sparsity() const {
        return total_blocks ? static_cast<double>(skipped_blocks) / static_cast<double>(total_blocks)
                            : 0.0;
    }
};

// Exact attention restricted to the selected blocks. Blocks are visited in
// ascending key-block order; inside overlapping blocks the causal mask clamps
// the token range per row. Mask bits on fully-future blocks are ignored, so
// output row i never depends on tokens past i. Accumulation matches
// full_attention: float32 logits, double statistics and accumulators.
inline SparseAttentionOutput block_sparse_attention(const HeadInput &input, const BlockMask &mask,
                                                    const BlockGrid &grid) {
    input.validate();
    if (grid.tokens() != input.seq_len())
        throw std::invalid_argument("block_sparse_attention: grid/input token mismatch");
    if (mask.query_blocks() != grid.num_query_blocks() ||
        mask.key_blocks() != grid.num_key_blocks())
        throw std::invalid_argument("block_sparse_attention: mask/grid shape mismatch");

    const std::size_t d = input.head_dim();
    const float inv_sqrt_d = 1.0f / std::sqrt(static_cast<float>(d));

    SparseAttentionOutput result;
    result.output = DenseMatrix(input.seq_len(), d);
    result.coverage.assign(input.seq_len(), 0);

    std::vector<double> acc(d);
    for (std::size_t i = 0; i < grid.num_query_blocks(); ++i) {
        const BlockRange q = grid.query_block(i);
        for (std::size_t g = q.begin; g < q.end; ++g) {
            const float *qrow = input.query.row(g);
            double m = -std::numeric_limits<double>::infinity();
            double l = 0.0;
            std::fill(acc.begin(), acc.end(), 0.0);
            std::size_t covered = 0;

            for (std::size_t j = 0; j < grid.num_key_blocks(); ++j) {
                if (causal_block_class(grid, i, j) == CausalClass::FullyFuture)
                    break;
                if (!mask.get(i, j))
                    continue;
                const BlockRange k = grid.key_block(j);
                const std::size_t end = std::min(k.end, g + 1);
                for (std::size_t t = k.begin; t < end; ++t) {
                    const float s = detail::dot(qrow, input.key.row(t), d) * inv_sqrt_d;
                    if (s > m) {
                        const double rescale = std::exp(m - static_cast<double>(s));
                        l *= rescale;
                        for (std::size_t c = 0; c < d; ++c)
                            acc[c] *= rescale;
                        m = s;
                    }
                    const double w = std::exp(static_cast<double>(s) - m);
                    l += w;
                    const float *v = input.value.row(t);
                    for (std::size_t c = 0; c < d; ++c)
                        acc[c] += w * v[c];
                    ++covered;
                }
            }

            if (covered == 0)
                throw std::domain_error("block_sparse_attention: query row " + std::to_string(g) +
                                        " attends no tokens");
            for (std::size_t c = 0; c < d; ++c)
                result.output(g, c) = static_cast<float>(acc[c] / l);
            result.coverage[g] = covered;
        }
    }
    return result;
}

// computed + skipped = total causal blocks, exactly. Fully-future blocks are
// outside the accounting regardless of their mask bits.
inline FlopCounts flop_accounting(const BlockMask &mask, const BlockGrid &grid) {
    if (mask.query_blocks() != grid.num_query_blocks() ||
        mask.key_blocks() != grid.num_key_blocks())
        throw std::invalid_argument("flop_accounting: mask/grid shape mismatch");
    FlopCounts counts;
    for (std::size_t i = 0; i < grid.num_query_blocks(); ++i) {
        for (std::size_t j = 0; j < grid.num_key_blocks(); ++j) {
            if (causal_block_class(grid, i, j) == CausalClass::FullyFuture)
                break;
            ++counts.total_blocks;
            if (mask.get(i, j))
                ++counts.computed_blocks;
            else
                ++counts.skipped_blocks;
        }
    }
    return counts;
}

} // namespace sale
