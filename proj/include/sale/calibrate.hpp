#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "sale/attention.hpp"
#include "sale/parallel.hpp"
#include "sale/quant.hpp"
#include "sale/selection.hpp"
#include "sale/sparse_attention.hpp"

namespace sale {

// Mean-per-token L1 distance: sum |a-b| over all elements divided by the row
// count. Accumulates in double.
inline double l1_error(const DenseMatrix &reference, const DenseMatrix &approx) {
    if (reference.rows() != approx.rows() || reference.cols() != approx.cols())
        throw std::invalid_argument("l1_error: shape mismatch");
    double sum = 0.0;
    for (std::size_t r = 0; r < reference.rows(); ++r)
        for (std::size_t c = 0; c < reference.cols(); ++c)
            sum += std::fabs(static_cast<double>(reference(r, c)) -
                             static_cast<double>(approx(r, c)));
    return sum / static_cast<double>(reference.rows());
}

enum class CalibrationFlag { Converged, FloorReached };

inline const char *to_string(CalibrationFlag f) {
    return f == CalibrationFlag::Converged ? "converged" : "floor-reached";
}

struct HeadCalibration {
    std::size_t layer = 0;
    std::size_t head = 0;
    double tau = 0.0;
    CalibrationFlag flag = CalibrationFlag::Converged;
    std::size_t halvings = 0;
};

struct CalibrationProfile {
    int version = 1;
    double tau0 = 0.0;
    double theta = 0.0;
    std::vector<std::string> samples; // provenance: sample identifiers
    std::vector<HeadCalibration> heads;
};

struct ErrorReport {
    std::vector<double> per_sample;
    double max_error = 0.0;
};

struct CalibrationSettings {
    double theta = 0.4;
    double tau0 = 0.008;
    std::size_t max_halvings = 30;
    SelectionConfig selection; // tau field unused; block/window geometry applies

    void validate() const {
        if (!(theta > 0.0))
            throw std::invalid_argument("CalibrationSettings: theta must be > 0");
        if (!(tau0 > 0.0 && tau0 < 1.0))
            throw std::invalid_argument("CalibrationSettings: tau0 must be in (0,1)");
    }
};

namespace detail {

// Quantization and the dense baseline do not depend on tau; computing them
// once makes the halving ladder cheap.
struct PreparedSample {
    const HeadInput *input;
    BlockGrid grid;
    QuantizedMatrix query4;
    QuantizedMatrix key4;
    DenseMatrix dense;
};

inline PreparedSample prepare_sample(const HeadInput &input, const SelectionConfig &config) {
    input.validate();
    BlockGrid grid(input.seq_len(), config.block_q, config.block_k);
    return PreparedSample{&input, grid, quantize_per_token(input.query),
                          quantize_per_key_block(input.key, grid), full_attention(input)};
}

inline double sample_error_at(const PreparedSample &sample, SelectionConfig config, double tau) {
    config.tau = tau;
    const BlockMask mask = selection_pass(*sample.input, sample.query4, sample.key4, config);
    const SparseAttentionOutput sparse = block_sparse_attention(*sample.input, mask, sample.grid);
    return l1_error(sample.dense, sparse.output);
}

} // namespace detail

// Runs the full pipeline per sample at config.tau and reports the L1 errors
// against dense attention.
inline ErrorReport evaluate_error(std::span<const HeadInput> samples,
                                  const SelectionConfig &config) {
    if (samples.empty())
        throw std::invalid_argument("evaluate_error: no samples");
    config.validate();
    ErrorReport report;
    report.per_sample.reserve(samples.size());
    for (const HeadInput &input : samples) {
        const detail::PreparedSample prepared = detail::prepare_sample(input, config);
        const double err = detail::sample_error_at(prepared, config, config.tau);
        report.per_sample.push_back(err);
        report.max_error = std::max(report.max_error, err);
    }
    return report;
}

// Greedy halving ladder: starting at tau0, halve tau until the worst-sample
// error drops to theta. Returns the first passing tau as converged, or the
// floor tau0 / 2^max_halvings as floor-reached.
inline HeadCalibration calibrate_head(std::span<const HeadInput> samples,
                                      const CalibrationSettings &settings) {
    if (samples.empty())
        throw std::invalid_argument("calibrate_head: no samples");
    settings.validate();
    settings.selection.validate();

    std::vector<detail::PreparedSample> prepared;
    prepared.reserve(samples.size());
    for (const HeadInput &input : samples)
        prepared.push_back(detail::prepare_sample(input, settings.selection));

    double tau = settings.tau0;
    for (std::size_t k = 0;; ++k) {
        double worst = 0.0;
        for (const detail::PreparedSample &sample : prepared)
            worst = std::max(worst, detail::sample_error_at(sample, settings.selection, tau));
        if (worst <= settings.theta)
            return {0, 0, tau, CalibrationFlag::Converged, k};
        if (k == settings.max_halvings)
            return {0, 0, tau, CalibrationFlag::FloorReached, k};
        tau *= 0.5;
    }
}

// Per-head calibration over multi-head samples: samples[s][h] is head h of
// sample s. Heads are independent and may calibrate in parallel.
inline CalibrationProfile calibrate_model(std::span<const std::vector<HeadInput>> samples,
                                          const CalibrationSettings &settings,
                                          std::size_t threads = 1) {
    if (samples.empty())
        throw std::invalid_argument("calibrate_model: no samples");
    const std::size_t head_count = samples.front().size();
    if (head_count == 0)
        throw std::invalid_argument("calibrate_model: samples carry no heads");
    for (const auto &sample : samples)
        if (sample.size() != head_count)
            throw std::invalid_argument("calibrate_model: inconsistent head count across samples");

    CalibrationProfile profile;
    profile.tau0 = settings.tau0;
    profile.theta = settings.theta;
    profile.heads.resize(head_count);

    parallel_for(head_count, threads, [&](std::size_t h) {
        std::vector<HeadInput> head_samples;
        head_samples.reserve(samples.size());
        for (const auto &sample : samples)
            head_samples.push_back(sample[h]);
        HeadCalibration result = calibrate_head(head_samples, settings);
        result.head = h;
        profile.heads[h] = result;
    });
    return profile;
}

} // namespace sale
