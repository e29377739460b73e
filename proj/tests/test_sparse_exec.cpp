#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <vector>

#include "sale/attention.hpp"
#include "sale/calibrate.hpp"
#include "sale/sparse_attention.hpp"
#include "sale/workloads.hpp"

#include "support/oracles.hpp"

using namespace sale;

namespace {

BlockMask all_true_mask(const BlockGrid &grid) {
    BlockMask mask(grid.num_query_blocks(), grid.num_key_blocks());
    mask.set_all(true);
    return mask;
}

// Random mask that keeps the first and last causal block of every query row,
// so every row attends at least one token.
BlockMask random_valid_mask(const BlockGrid &grid, Rng &rng, double keep_probability) {
    BlockMask mask(grid.num_query_blocks(), grid.num_key_blocks());
    for (std::size_t i = 0; i < grid.num_query_blocks(); ++i) {
        for (std::size_t j = 0; j < grid.num_key_blocks(); ++j) {
            const CausalClass cls = causal_block_class(grid, i, j);
            if (cls == CausalClass::FullyFuture)
                continue;
            const bool anchor = j == 0 || cls == CausalClass::Overlapping;
            mask.set(i, j, anchor || rng.next_uniform() < keep_probability);
        }
    }
    return mask;
}

} // namespace

TEST_CASE("all-true mask reproduces dense attention") {
    const std::size_t shapes[][2] = {{64, 16}, {257, 16}, {96, 64}, {130, 8}};
    for (std::size_t k = 0; k < 4; ++k) {
        const HeadInput input = oracle::gaussian_head(200 + k, shapes[k][0], shapes[k][1]);
        const BlockGrid grid(shapes[k][0], 64, 32);
        const SparseAttentionOutput sparse =
            block_sparse_attention(input, all_true_mask(grid), grid);
        CHECK(oracle::max_abs_diff(sparse.output, full_attention(input)) < 1e-5);
        for (std::size_t i = 0; i < input.seq_len(); ++i)
            CHECK(sparse.coverage[i] == i + 1);
    }
}

TEST_CASE("identical value rows pass through any valid mask") {
    const std::size_t n = 128, d = 8;
    HeadInput input = oracle::gaussian_head(210, n, d);
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < d; ++c)
            input.value(r, c) = static_cast<float>(c) - 3.0f;

    const BlockGrid grid(n, 32, 16);
    Rng rng(211);
    const BlockMask mask = random_valid_mask(grid, rng, 0.4);
    const SparseAttentionOutput sparse = block_sparse_attention(input, mask, grid);
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < d; ++c)
            CHECK(sparse.output(r, c) == doctest::Approx(static_cast<float>(c) - 3.0f)
                                             .epsilon(1e-5));
}

TEST_CASE("seeded masks match the -inf masked dense oracle") {
    Rng rng(220);
    for (int trial = 0; trial < 8; ++trial) {
        const std::size_t n = trial < 6 ? 256 : 250; // ragged tails too
        const std::size_t d = trial % 2 ? 32 : 8;
        const std::size_t bq = trial < 4 ? 64 : (trial < 6 ? 16 : 32);
        const std::size_t bk = trial < 6 ? 32 : 16;
        const HeadInput input = oracle::gaussian_head(221 + trial, n, d);
        const BlockGrid grid(n, bq, bk);
        const BlockMask mask = random_valid_mask(grid, rng, 0.25 + 0.08 * trial);
        const SparseAttentionOutput sparse = block_sparse_attention(input, mask, grid);
        const std::vector<double> expected =
            oracle::masked_dense_attention_f64(input, mask, grid);
        CHECK(oracle::max_abs_diff(sparse.output, expected) < 1e-5);
        for (std::size_t i = 0; i < n; ++i)
            CHECK(sparse.coverage[i] <= i + 1);
    }
}

TEST_CASE("future content and future mask bits cannot reach earlier rows") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        HeadInput input = oracle::gaussian_head(230 + seed, 160, 8);
        const BlockGrid grid(160, 64, 32);
        Rng rng(240 + seed);
        BlockMask mask = random_valid_mask(grid, rng, 0.5);
        const SparseAttentionOutput before = block_sparse_attention(input, mask, grid);

        const std::size_t cut = 70 + static_cast<std::size_t>(seed) * 9;
        for (std::size_t j = cut + 1; j < input.seq_len(); ++j)
            for (std::size_t c = 0; c < input.head_dim(); ++c) {
                input.key(j, c) = 2.0f - input.key(j, c);
                input.value(j, c) *= -5.0f;
            }
        // flip every fully-future mask bit on as well
        for (std::size_t i = 0; i < grid.num_query_blocks(); ++i)
            for (std::size_t j = 0; j < grid.num_key_blocks(); ++j)
                if (causal_block_class(grid, i, j) == CausalClass::FullyFuture)
                    mask.set(i, j, true);

        const SparseAttentionOutput after = block_sparse_attention(input, mask, grid);
        for (std::size_t i = 0; i <= cut; ++i)
            for (std::size_t c = 0; c < input.head_dim(); ++c)
                CHECK(before.output(i, c) == after.output(i, c)); // bit-identical
    }
}

TEST_CASE("rows with no attendable tokens are a domain error") {
    const HeadInput input = oracle::gaussian_head(250, 64, 8);
    const BlockGrid grid(64, 32, 32);
    BlockMask mask(grid.num_query_blocks(), grid.num_key_blocks()); // all false
    CHECK_THROWS_AS(block_sparse_attention(input, mask, grid), std::domain_error);
}

TEST_CASE("shape mismatches are rejected") {
    const HeadInput input = oracle::gaussian_head(251, 64, 8);
    const BlockGrid grid(64, 32, 32);
    const BlockGrid other(128, 32, 32);
    const BlockMask mask = all_true_mask(other);
    CHECK_THROWS_AS(block_sparse_attention(input, mask, grid), std::invalid_argument);
    CHECK_THROWS_AS(block_sparse_attention(input, all_true_mask(grid), other),
                    std::invalid_argument);
}

TEST_CASE("flop accounting") {
    SUBCASE("all-true mask has zero sparsity") {
        const BlockGrid grid(256, 64, 32);
        const FlopCounts counts = flop_accounting(all_true_mask(grid), grid);
        CHECK(counts.skipped_blocks == 0);
        CHECK(counts.sparsity() == 0.0);
        CHECK(counts.computed_blocks == counts.total_blocks);
    }
    SUBCASE("hand count on a small grid") {
        // 2 query blocks x 4 key blocks of 32: causal blocks are 2 + 4 = 6
        const BlockGrid grid(128, 64, 32);
        BlockMask mask(2, 4);
        mask.set(0, 0, true);
        mask.set(1, 0, true);
        const FlopCounts counts = flop_accounting(mask, grid);
        CHECK(counts.total_blocks == 6);
        CHECK(counts.computed_blocks == 2);
        CHECK(counts.skipped_blocks == 4);
        CHECK(counts.sparsity() == doctest::Approx(4.0 / 6.0));
    }
    SUBCASE("seeded masks match brute-force enumeration; identity always holds") {
        Rng rng(260);
        for (int trial = 0; trial < 20; ++trial) {
            const std::size_t n = 64 + rng.next_u64() % 700;
            const BlockGrid grid(n, 64, 32);
            const BlockMask mask = random_valid_mask(grid, rng, rng.next_uniform());
            const FlopCounts counts = flop_accounting(mask, grid);
            const oracle::BlockCounts expected = oracle::count_blocks(mask, grid);
            CHECK(counts.total_blocks == expected.total);
            CHECK(counts.computed_blocks == expected.computed);
            CHECK(counts.skipped_blocks == expected.skipped);
            CHECK(counts.computed_blocks + counts.skipped_blocks == counts.total_blocks);
        }
    }
}

TEST_CASE("nested masks: more blocks can only reduce the error") {
    // Checked empirically on seeds where the dropped blocks carry positive
    // score mass; not a universal theorem.
    for (std::uint64_t seed = 0; seed < 4; ++seed) {
        const HeadInput input = oracle::sink_local_head(270 + seed, 256, 16);
        const BlockGrid grid(256, 64, 32);
        SelectionConfig config;
        config.tau = 0.004;
        Rng rng(280 + seed);
        BlockMask small = random_valid_mask(grid, rng, 0.25);
        for (std::size_t i = 0; i < grid.num_query_blocks(); ++i)
            for (std::size_t j : sink_local_index_set(i, grid, config))
                small.set(i, j, true);
        BlockMask big = small;
        for (std::size_t i = 0; i < grid.num_query_blocks(); ++i)
            for (std::size_t j = 0; j < grid.num_key_blocks(); ++j)
                if (causal_block_class(grid, i, j) != CausalClass::FullyFuture &&
                    !big.get(i, j) && rng.next_uniform() < 0.5)
                    big.set(i, j, true);
        REQUIRE(big.contains(small));

        const DenseMatrix dense = full_attention(input);
        const double err_small =
            l1_error(dense, block_sparse_attention(input, small, grid).output);
        const double err_big = l1_error(dense, block_sparse_attention(input, big, grid).output);
        CHECK(err_big <= err_small + 1e-6);
    }
}
