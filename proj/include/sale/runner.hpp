#pragma once

#include <algorithm>
#include <chrono>
#include <numeric>
#include <span>
#include <stdexcept>
#include <vector>

#include "sale/attention.hpp"
#include "sale/calibrate.hpp"
#include "sale/parallel.hpp"
#include "sale/quant.hpp"
#include "sale/report.hpp"
#include "sale/selection.hpp"
#include "sale/sparse_attention.hpp"

namespace sale {

struct RunOptions {
    std::size_t threads = 1;
    bool dense_mask = false; // override the selection with an all-true mask
};

namespace detail {

inline double elapsed_ms(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start)
        .count();
}

} // namespace detail

// Runs quantization, selection, sparse computation and the dense baseline for
// every head, with taus[h] as head h's threshold. Non-timing fields are
// independent of the thread count.
inline RunReport run_pipeline(std::span<const HeadInput> heads, std::span<const double> taus,
                              const SelectionConfig &base, const RunOptions &options) {
    if (heads.empty())
        throw std::invalid_argument("run_pipeline: no heads");
    if (taus.size() != heads.size())
        throw std::invalid_argument("run_pipeline: tau count != head count");
    for (const HeadInput &h : heads) {
        h.validate();
        if (h.seq_len() != heads.front().seq_len() || h.head_dim() != heads.front().head_dim())
            throw std::invalid_argument("run_pipeline: heads disagree on shape");
    }

    RunReport report;
    report.tokens = heads.front().seq_len();
    report.head_dim = heads.front().head_dim();
    report.heads = heads.size();
    report.selection = base;
    report.head_reports.resize(heads.size());

    std::vector<StageTiming> timings(heads.size());
    parallel_for(heads.size(), options.threads, [&](std::size_t h) {
        const HeadInput &input = heads[h];
        SelectionConfig config = base;
        config.tau = taus[h];
        const BlockGrid grid(input.seq_len(), config.block_q, config.block_k);

        auto t0 = std::chrono::steady_clock::now();
        const QuantizedMatrix query4 = quantize_per_token(input.query);
        const QuantizedMatrix key4 = quantize_per_key_block(input.key, grid);
        timings[h].quantization_ms = detail::elapsed_ms(t0);

        t0 = std::chrono::steady_clock::now();
        BlockMask mask;
        if (options.dense_mask) {
            mask = BlockMask(grid.num_query_blocks(), grid.num_key_blocks());
            mask.set_all(true);
        } else {
            mask = selection_pass(input, query4, key4, config);
        }
        timings[h].selection_ms = detail::elapsed_ms(t0);

        t0 = std::chrono::steady_clock::now();
        const SparseAttentionOutput sparse = block_sparse_attention(input, mask, grid);
        timings[h].computation_ms = detail::elapsed_ms(t0);

        t0 = std::chrono::steady_clock::now();
        const DenseMatrix dense = full_attention(input);
        timings[h].dense_ms = detail::elapsed_ms(t0);

        const FlopCounts counts = flop_accounting(mask, grid);
        HeadReport &hr = report.head_reports[h];
        hr.head = h;
        hr.tau = taus[h];
        hr.sparsity = counts.sparsity();
        hr.err = l1_error(dense, sparse.output);
        hr.computed_blocks = counts.computed_blocks;
        hr.skipped_blocks = counts.skipped_blocks;
        hr.total_blocks = counts.total_blocks;
        hr.coverage_min = *std::min_element(sparse.coverage.begin(), sparse.coverage.end());
        hr.coverage_max = *std::max_element(sparse.coverage.begin(), sparse.coverage.end());
        hr.coverage_mean = std::accumulate(sparse.coverage.begin(), sparse.coverage.end(), 0.0) /
                           static_cast<double>(sparse.coverage.size());
    });

    for (const StageTiming &t : timings) {
        report.timing.quantization_ms += t.quantization_ms;
        report.timing.selection_ms += t.selection_ms;
        report.timing.computation_ms += t.computation_ms;
        report.timing.dense_ms += t.dense_ms;
    }
    return report;
}

struct SweepRow {
    double tau = 0.0;
    double sparsity = 0.0; // mean over heads
    double err = 0.0;      // max over heads
};

// One row per threshold, thresholds applied to every head. Rows come back in
// the given order; callers asserting monotonicity should pass an ascending
// grid.
inline std::vector<SweepRow> sweep_thresholds(std::span<const HeadInput> heads,
                                              std::span<const double> taus,
                                              const SelectionConfig &base,
                                              std::size_t threads = 1) {
    if (heads.empty())
        throw std::invalid_argument("sweep_thresholds: no heads");
    if (taus.empty())
        throw std::invalid_argument("sweep_thresholds: empty grid");
    for (double tau : taus)
        if (!(tau > 0.0 && tau < 1.0))
            throw std::invalid_argument("sweep_thresholds: tau outside (0,1)");

    std::vector<detail::PreparedSample> prepared;
    prepared.reserve(heads.size());
    for (const HeadInput &h : heads)
        prepared.push_back(detail::prepare_sample(h, base));

    struct Cell {
        double sparsity = 0.0;
        double err = 0.0;
    };
    std::vector<Cell> cells(taus.size() * heads.size());
    parallel_for(cells.size(), threads, [&](std::size_t task) {
        const std::size_t t = task / heads.size();
        const std::size_t h = task % heads.size();
        SelectionConfig config = base;
        config.tau = taus[t];
        const detail::PreparedSample &sample = prepared[h];
        const BlockMask mask = selection_pass(*sample.input, sample.query4, sample.key4, config);
        const SparseAttentionOutput sparse =
            block_sparse_attention(*sample.input, mask, sample.grid);
        const FlopCounts counts = flop_accounting(mask, sample.grid);
        cells[task].sparsity = counts.sparsity();
        cells[task].err = l1_error(sample.dense, sparse.output);
    });

    std::vector<SweepRow> rows(taus.size());
    for (std::size_t t = 0; t < taus.size(); ++t) {
        rows[t].tau = taus[t];
        for (std::size_t h = 0; h < heads.size(); ++h) {
            rows[t].sparsity += cells[t * heads.size() + h].sparsity;
            rows[t].err = std::max(rows[t].err, cells[t * heads.size() + h].err);
        }
        rows[t].sparsity /= static_cast<double>(heads.size());
    }
    return rows;
}

} // namespace sale
