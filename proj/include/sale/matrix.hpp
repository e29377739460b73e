#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace sale {

// Row-major float32 matrix. Holds query/key/value tensors and attention outputs.
class DenseMatrix {
  public:
    DenseMatrix() = default;
    DenseMatrix(std::size_t rows, std::size_t cols)
        : rows_(rows), cols_(cols), data_(rows * cols, 0.0f) {}

    // Validates length and finiteness; the only entry point for untrusted data.
    static DenseMatrix from_data(std::size_t rows, std::size_t cols,
                                 std::vector<float> data) {
        if (data.size() != rows * cols)
            throw std::invalid_argument("DenseMatrix: data length != rows*cols");
        for (std::size_t i = 0; i < data.size(); ++i)
            if (!std::isfinite(data[i]))
                throw std::invalid_argument("DenseMatrix: non-finite value at index " +
                                            std::to_string(i));
        DenseMatrix m;
        m.rows_ = rows;
        m.cols_ = cols;
        m.data_ = std::move(data);
        return m;
    }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }

    float operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
    float &operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }

    const float *row(std::size_t r) const { return data_.data() + r * cols_; }
    float *row(std::size_t r) { return data_.data() + r * cols_; }
    std::span<const float> row_span(std::size_t r) const { return {row(r), cols_}; }

    const std::vector<float> &data() const { return data_; }
    std::vector<float> &data() { return data_; }

    bool operator==(const DenseMatrix &) const = default;

  private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<float> data_;
};

// One attention head: query/key/value, each seq_len x head_dim.
struct HeadInput {
    DenseMatrix query;
    DenseMatrix key;
    DenseMatrix value;

    std::size_t seq_len() const { return query.rows(); }
    std::size_t head_dim() const { return query.cols(); }

    void validate() const {
        if (query.rows() == 0 || query.cols() == 0)
            throw std::invalid_argument("HeadInput: empty query");
        if (key.rows() != query.rows() || key.cols() != query.cols() ||
            value.rows() != query.rows() || value.cols() != query.cols())
            throw std::invalid_argument("HeadInput: query/key/value shape mismatch");
    }
};

namespace detail {

// Shared by the dense and block-sparse paths so both see bit-identical logits.
inline float dot(const float *a, const float *b, std::size_t n) {
    float acc = 0.0f;
    for (std::size_t i = 0; i < n; ++i)
        acc += a[i] * b[i];
    return acc;
}

} // namespace detail

} // namespace sale
