#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <set>
#include <span>
#include <stdexcept>
#include <vector>

#include "sale/block_grid.hpp"
#include "sale/matrix.hpp"
#include "sale/quant.hpp"

namespace sale {

struct SelectionConfig {
    double tau = 0.004;              // relative-score threshold, in (0,1)
    std::size_t sink_tokens = 32;    // leading tokens always computed exactly
    std::size_t local_tokens_min = 128;
    std::size_t segment_size = 4;    // key blocks aggregated per decision
    std::size_t block_q = 64;
    std::size_t block_k = 32;

    void validate() const {
        if (!(tau > 0.0 && tau < 1.0))
            throw std::invalid_argument("SelectionConfig: tau must be in (0,1)");
        if (sink_tokens < 1)
            throw std::invalid_argument("SelectionConfig: sink_tokens must be >= 1");
        if (block_q < 1 || block_k < 1)
            throw std::invalid_argument("SelectionConfig: block sizes must be >= 1");
        if (local_tokens_min < block_k)
            throw std::invalid_argument("SelectionConfig: local_tokens_min must be >= block_k");
        if (segment_size < 1)
            throw std::invalid_argument("SelectionConfig: segment_size must be >= 1");
    }
};

// Exact softmax statistics of the sink-local region, one entry per query row
// of the block: the running max of the logits and the sum of exp(logit - max).
struct SinkLocalStats {
    std::vector<double> running_max;
    std::vector<double> exp_sum;
};

// Boolean block grid; true means the block is computed.
class BlockMask {
  public:
    BlockMask() = default;
    BlockMask(std::size_t query_blocks, std::size_t key_blocks)
        : nq_(query_blocks), nk_(key_blocks), bits_(query_blocks * key_blocks, 0) {}

    std::size_t query_blocks() const { return nq_; }
    std::size_t key_blocks() const { return nk_; }

    bool get(std::size_t i, std::size_t j) const { return bits_[i * nk_ + j] != 0; }
    void set(std::size_t i, std::size_t j, bool v) { bits_[i * nk_ + j] = v ? 1 : 0; }

    void set_all(bool v) { std::fill(bits_.begin(), bits_.end(), v ? 1 : 0); }

    std::size_t count_selected() const {
        std::size_t n = 0;
        for (auto b : bits_)
            n += b;
        return n;
    }

    // True when every bit set in other is also set here.
    bool contains(const BlockMask &other) const {
        if (nq_ != other.nq_ || nk_ != other.nk_)
            return false;
        for (std::size_t i = 0; i < bits_.size(); ++i)
            if (other.bits_[i] && !bits_[i])
                return false;
        return true;
    }

    bool operator==(const BlockMask &) const = default;

  private:
    std::size_t nq_ = 0;
    std::size_t nk_ = 0;
    std::vector<std::uint8_t> bits_;
};

// Key blocks whose attention is always computed exactly for one query block:
// the blocks covering the first sink_tokens tokens, plus the trailing window
// ending at the causal frontier (all overlapping blocks and enough fully-past
// blocks to cover local_tokens_min tokens). Sorted, deduplicated; for early
// query blocks this may be every causal key block.
inline std::vector<std::size_t> sink_local_index_set(std::size_t query_block,
                                                     const BlockGrid &grid,
                                                     const SelectionConfig &config) {
    if (query_block >= grid.num_query_blocks())
        throw std::out_of_range("sink_local_index_set: query block out of range");
    const BlockRange q = grid.query_block(query_block);
    std::set<std::size_t> picked;

    for (std::size_t j = 0; j < grid.num_key_blocks(); ++j) {
        const BlockRange k = grid.key_block(j);
        if (k.begin >= config.sink_tokens)
            break;
        if (k.begin >= q.end)
            break; // never pick fully-future blocks
        picked.insert(j);
    }

    const std::size_t frontier = grid.key_block_of_token(q.end - 1);
    std::size_t past_tokens = 0;
    for (std::size_t j = frontier + 1; j-- > 0;) {
        if (causal_block_class(grid, query_block, j) == CausalClass::Overlapping) {
            picked.insert(j);
            continue;
        }
        if (past_tokens >= config.local_tokens_min)
            break;
        picked.insert(j);
        past_tokens += grid.key_block(j).size();
    }

    return {picked.begin(), picked.end()};
}

// Exact logit statistics over the sink-local blocks, per query row, using the
// standard stable online update (new max, rescale the running exp-sum). The
// causal mask is not applied inside overlapping blocks; the handful of future
// tokens they contribute only tighten the reference statistics.
inline SinkLocalStats compute_sink_local_stats(const HeadInput &input, std::size_t query_block,
                                               std::span<const std::size_t> sink_local_blocks,
                                               const BlockGrid &grid) {
    if (sink_local_blocks.empty())
        throw std::invalid_argument("compute_sink_local_stats: empty block set");
    const BlockRange q = grid.query_block(query_block);
    const std::size_t d = input.head_dim();
    const float inv_sqrt_d = 1.0f / std::sqrt(static_cast<float>(d));

    SinkLocalStats stats;
    stats.running_max.assign(q.size(), -std::numeric_limits<double>::infinity());
    stats.exp_sum.assign(q.size(), 0.0);

    std::vector<float> logits;
    for (std::size_t j : sink_local_blocks) {
        const BlockRange k = grid.key_block(j);
        logits.resize(k.size());
        for (std::size_t r = 0; r < q.size(); ++r) {
            const float *qrow = input.query.row(q.begin + r);
            double row_max = -std::numeric_limits<double>::infinity();
            for (std::size_t t = 0; t < k.size(); ++t) {
                logits[t] = detail::dot(qrow, input.key.row(k.begin + t), d) * inv_sqrt_d;
                row_max = std::max(row_max, static_cast<double>(logits[t]));
            }
            const double m_old = stats.running_max[r];
            const double m_new = std::max(m_old, row_max);
            double sum = 0.0;
            for (std::size_t t = 0; t < k.size(); ++t)
                sum += std::exp(static_cast<double>(logits[t]) - m_new);
            stats.exp_sum[r] = stats.exp_sum[r] * std::exp(m_old - m_new) + sum;
            stats.running_max[r] = m_new;
        }
    }
    return stats;
}

// Log-domain form of the relative-score test: estimate >= bound is the same
// predicate as exp(estimate - running_max) / exp_sum >= tau. tau * exp_sum is
// clamped away from the subnormal range before taking the log.
inline double threshold_bound(double tau, double running_max, double exp_sum) {
    double scaled = tau * exp_sum;
    if (scaled < std::numeric_limits<double>::min())
        scaled = std::numeric_limits<double>::min();
    return running_max + std::log(scaled);
}

// Direct relative score; used by diagnostics and oracles, not the hot path.
inline double relative_attention_score(double estimate, double running_max, double exp_sum) {
    return std::exp(estimate - running_max) / exp_sum;
}

// OR within each run of segment_size middle-region blocks. A trailing run
// shorter than segment_size counts as local area and is always kept.
inline std::vector<std::uint8_t> segment_aggregate(std::vector<std::uint8_t> middle,
                                                   std::size_t segment_size) {
    if (segment_size < 1)
        throw std::invalid_argument("segment_aggregate: segment_size must be >= 1");
    for (std::size_t s = 0; s < middle.size(); s += segment_size) {
        const std::size_t e = std::min(s + segment_size, middle.size());
        bool keep = (e - s) < segment_size;
        for (std::size_t i = s; i < e; ++i)
            keep = keep || middle[i] != 0;
        for (std::size_t i = s; i < e; ++i)
            middle[i] = keep ? 1 : 0;
    }
    return middle;
}

namespace detail {

inline std::size_t sink_block_count(const BlockGrid &grid, std::size_t sink_tokens) {
    const std::size_t covered = std::min(sink_tokens, grid.tokens());
    return (covered + grid.key_block_size() - 1) / grid.key_block_size();
}

} // namespace detail

// Builds the block mask for one head. Sink-local blocks are always selected
// and provide the exact per-row statistics; every remaining fully-past block
// is selected iff any query row's largest dequantized estimate clears that
// row's log-domain bound; segment aggregation then widens decisions to runs
// of segment_size blocks. Fully-future blocks are never selected.
inline BlockMask selection_pass(const HeadInput &input, const QuantizedMatrix &query4,
                                const QuantizedMatrix &key4, const SelectionConfig &config) {
    config.validate();
    input.validate();
    const std::size_t n = input.seq_len();
    const std::size_t d = input.head_dim();
    if (query4.rows() != n || query4.cols() != d || key4.rows() != n || key4.cols() != d)
        throw std::invalid_argument("selection_pass: quantized shape mismatch");
    if (query4.grouping() != ScaleGrouping::PerToken)
        throw std::invalid_argument("selection_pass: query must be quantized per token");
    if (key4.grouping() != ScaleGrouping::PerKeyBlock || key4.group_rows() != config.block_k)
        throw std::invalid_argument("selection_pass: key must be quantized per key block");

    const BlockGrid grid(n, config.block_q, config.block_k);
    BlockMask mask(grid.num_query_blocks(), grid.num_key_blocks());
    const std::size_t sink_blocks = detail::sink_block_count(grid, config.sink_tokens);

    std::vector<double> bounds;
    for (std::size_t i = 0; i < grid.num_query_blocks(); ++i) {
        const std::vector<std::size_t> sink_local = sink_local_index_set(i, grid, config);
        for (std::size_t j : sink_local)
            mask.set(i, j, true);

        // Middle region: causal blocks between the sink area and the start of
        // the trailing window.
        std::size_t middle_begin = std::min(sink_blocks, grid.num_key_blocks());
        std::size_t middle_end = middle_begin;
        for (std::size_t j : sink_local) {
            if (j >= sink_blocks) {
                middle_end = std::max(middle_begin, j);
                break;
            }
        }
        if (middle_end == middle_begin)
            continue;

        const SinkLocalStats stats = compute_sink_local_stats(input, i, sink_local, grid);
        const BlockRange q = grid.query_block(i);
        bounds.resize(q.size());
        for (std::size_t r = 0; r < q.size(); ++r)
            bounds[r] = threshold_bound(config.tau, stats.running_max[r], stats.exp_sum[r]);

        std::vector<std::uint8_t> raw(middle_end - middle_begin, 0);
        for (std::size_t jj = 0; jj < raw.size(); ++jj) {
            const std::size_t j = middle_begin + jj;
            const ApproxBlock approx = approx_weight_block(query4, q, key4, grid.key_block(j));
            bool selected = false;
            for (std::size_t r = 0; r < approx.rows && !selected; ++r) {
                const auto [estimate, col] = max_then_dequantize(approx.row(r),
                                                                 approx.row_scales[r]);
                (void)col;
                if (static_cast<double>(estimate) >= bounds[r])
                    selected = true;
            }
            raw[jj] = selected ? 1 : 0;
        }

        const std::vector<std::uint8_t> aggregated =
            segment_aggregate(std::move(raw), config.segment_size);
        for (std::size_t jj = 0; jj < aggregated.size(); ++jj)
            mask.set(i, middle_begin + jj, aggregated[jj] != 0);
    }
    return mask;
}

} // namespace sale
