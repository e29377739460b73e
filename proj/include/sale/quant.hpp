#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "sale/block_grid.hpp"
#include "sale/matrix.hpp"

namespace sale {

enum class ScaleGrouping { PerToken, PerKeyBlock };

// Symmetric 4-bit codes in [-7, +7] with one positive scale per row group.
// group_rows is 1 for per-token scales and the key block size for per-block
// scales; only the final group may be ragged, so scale lookup is a division.
class QuantizedMatrix {
  public:
    static constexpr int kCodeMax = 7;

    QuantizedMatrix(std::size_t rows, std::size_t cols, ScaleGrouping grouping,
                    std::size_t group_rows)
        : rows_(rows),
          cols_(cols),
          grouping_(grouping),
          group_rows_(group_rows),
          codes_(rows * cols, 0),
          scales_((rows + group_rows - 1) / group_rows, 1.0f) {
        if (group_rows == 0)
            throw std::invalid_argument("QuantizedMatrix: group_rows must be >= 1");
    }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    ScaleGrouping grouping() const { return grouping_; }
    std::size_t group_rows() const { return group_rows_; }
    std::size_t num_groups() const { return scales_.size(); }

    std::int8_t code(std::size_t r, std::size_t c) const { return codes_[r * cols_ + c]; }
    std::int8_t &code(std::size_t r, std::size_t c) { return codes_[r * cols_ + c]; }
    const std::int8_t *row(std::size_t r) const { return codes_.data() + r * cols_; }

    float group_scale(std::size_t g) const { return scales_[g]; }
    float &group_scale(std::size_t g) { return scales_[g]; }
    float scale_for_row(std::size_t r) const { return scales_[r / group_rows_]; }

    float dequantize(std::size_t r, std::size_t c) const {
        return static_cast<float>(code(r, c)) * scale_for_row(r);
    }

    bool operator==(const QuantizedMatrix &) const = default;

  private:
    std::size_t rows_;
    std::size_t cols_;
    ScaleGrouping grouping_;
    std::size_t group_rows_;
    std::vector<std::int8_t> codes_;
    std::vector<float> scales_;
};

namespace detail {

inline float max_abs(const DenseMatrix &m, std::size_t row_begin, std::size_t row_end) {
    float v = 0.0f;
    for (std::size_t r = row_begin; r < row_end; ++r)
        for (std::size_t c = 0; c < m.cols(); ++c)
            v = std::max(v, std::fabs(m(r, c)));
    return v;
}

// Round-to-nearest with the scale already fixed. The quotient is taken in
// double so |code * scale - value| <= scale/2 holds elementwise; the clamp
// guards the rare quotient a hair above kCodeMax.
inline void quantize_rows(const DenseMatrix &src, std::size_t row_begin, std::size_t row_end,
                          float scale, QuantizedMatrix &dst) {
    for (std::size_t r = row_begin; r < row_end; ++r) {
        for (std::size_t c = 0; c < src.cols(); ++c) {
            const long q = std::lround(static_cast<double>(src(r, c)) / scale);
            const long clamped = std::clamp<long>(q, -QuantizedMatrix::kCodeMax,
                                                  QuantizedMatrix::kCodeMax);
            dst.code(r, c) = static_cast<std::int8_t>(clamped);
        }
    }
}

} // namespace detail

// One scale per row: max|row| / 7, or 1 for an all-zero row (codes are then 0
// and the reconstruction is exact).
inline QuantizedMatrix quantize_per_token(const DenseMatrix &m) {
    QuantizedMatrix q(m.rows(), m.cols(), ScaleGrouping::PerToken, 1);
    for (std::size_t r = 0; r < m.rows(); ++r) {
        const float peak = detail::max_abs(m, r, r + 1);
        const float scale = peak > 0.0f ? peak / QuantizedMatrix::kCodeMax : 1.0f;
        q.group_scale(r) = scale;
        detail::quantize_rows(m, r, r + 1, scale, q);
    }
    return q;
}

// One scale per key block of the grid, shared by every element of the block.
inline QuantizedMatrix quantize_per_key_block(const DenseMatrix &m, const BlockGrid &grid) {
    if (m.rows() != grid.tokens())
        throw std::invalid_argument("quantize_per_key_block: row count != grid tokens");
    QuantizedMatrix q(m.rows(), m.cols(), ScaleGrouping::PerKeyBlock, grid.key_block_size());
    for (std::size_t j = 0; j < grid.num_key_blocks(); ++j) {
        const BlockRange b = grid.key_block(j);
        const float peak = detail::max_abs(m, b.begin, b.end);
        const float scale = peak > 0.0f ? peak / QuantizedMatrix::kCodeMax : 1.0f;
        q.group_scale(j) = scale;
        detail::quantize_rows(m, b.begin, b.end, scale, q);
    }
    return q;
}

// Integer products of one (query rows x key rows) tile plus the per-query-row
// factor that maps them to logit estimates. Every entry of one row shares its
// scale, so the integer argmax is also the argmax of the estimates.
struct ApproxBlock {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<std::int32_t> products;  // row-major
    std::vector<float> row_scales;       // query_scale[r] * key_block_scale / sqrt(d)

    std::int32_t product(std::size_t r, std::size_t c) const { return products[r * cols + c]; }
    std::span<const std::int32_t> row(std::size_t r) const {
        return {products.data() + r * cols, cols};
    }
};

inline ApproxBlock approx_weight_block(const QuantizedMatrix &query, BlockRange query_rows,
                                       const QuantizedMatrix &key, BlockRange key_rows) {
    if (query.cols() != key.cols())
        throw std::invalid_argument("approx_weight_block: dim mismatch");
    if (key_rows.size() == 0 || query_rows.size() == 0)
        throw std::invalid_argument("approx_weight_block: empty range");
    if (key_rows.begin / key.group_rows() != (key_rows.end - 1) / key.group_rows())
        throw std::invalid_argument("approx_weight_block: key rows straddle scale groups");

    const std::size_t d = query.cols();
    ApproxBlock out;
    out.rows = query_rows.size();
    out.cols = key_rows.size();
    out.products.resize(out.rows * out.cols);
    out.row_scales.resize(out.rows);

    const float inv_sqrt_d = 1.0f / std::sqrt(static_cast<float>(d));
    const float key_scale = key.scale_for_row(key_rows.begin);
    for (std::size_t r = 0; r < out.rows; ++r) {
        out.row_scales[r] = query.scale_for_row(query_rows.begin + r) * key_scale * inv_sqrt_d;
        const std::int8_t *qr = query.row(query_rows.begin + r);
        for (std::size_t c = 0; c < out.cols; ++c) {
            const std::int8_t *kr = key.row(key_rows.begin + c);
            std::int32_t acc = 0;
            for (std::size_t t = 0; t < d; ++t)
                acc += static_cast<std::int32_t>(qr[t]) * static_cast<std::int32_t>(kr[t]);
            out.products[r * out.cols + c] = acc;
        }
    }
    return out;
}

// Max over a shared-scale integer segment, dequantized once. Ties resolve to
// the lowest index.
inline std::pair<float, std::size_t> max_then_dequantize(std::span<const std::int32_t> segment,
                                                         float scale) {
    if (segment.empty())
        throw std::domain_error("max_then_dequantize: empty segment");
    std::size_t best = 0;
    for (std::size_t c = 1; c < segment.size(); ++c)
        if (segment[c] > segment[best])
            best = c;
    return {scale * static_cast<float>(segment[best]), best};
}

} // namespace sale
