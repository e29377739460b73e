#pragma once

#include <cstdint>
#include <vector>

#include <json.hpp>

#include "sale/selection.hpp"

namespace sale {

struct HeadReport {
    std::size_t head = 0;
    double tau = 0.0;
    double sparsity = 0.0;
    double err = 0.0;
    std::size_t computed_blocks = 0;
    std::size_t skipped_blocks = 0;
    std::size_t total_blocks = 0;
    std::size_t coverage_min = 0;
    std::size_t coverage_max = 0;
    double coverage_mean = 0.0;
};

// Stage wall times; derived ratios are recomputable from the raw fields.
struct StageTiming {
    double quantization_ms = 0.0;
    double selection_ms = 0.0;
    double computation_ms = 0.0;
    double dense_ms = 0.0;

    double overhead_ratio() const {
        return dense_ms > 0.0 ? (quantization_ms + selection_ms) / dense_ms : 0.0;
    }
    double computation_speedup() const {
        return computation_ms > 0.0 ? dense_ms / computation_ms : 0.0;
    }
};

struct RunReport {
    int version = 1;
    std::size_t tokens = 0;
    std::size_t head_dim = 0;
    std::size_t heads = 0;
    SelectionConfig selection; // geometry; per-head tau lives in head reports
    std::vector<HeadReport> head_reports;
    StageTiming timing;
};

// All timing lives under the "timing" key so reports can be diffed with
// timing excluded.
inline nlohmann::json to_json(const RunReport &report) {
    nlohmann::json heads = nlohmann::json::array();
    for (const HeadReport &h : report.head_reports) {
        heads.push_back({{"head", h.head},
                         {"tau", h.tau},
                         {"sparsity", h.sparsity},
                         {"err", h.err},
                         {"computed_blocks", h.computed_blocks},
                         {"skipped_blocks", h.skipped_blocks},
                         {"total_blocks", h.total_blocks},
                         {"coverage",
                          {{"min", h.coverage_min},
                           {"max", h.coverage_max},
                           {"mean", h.coverage_mean}}}});
    }
    return {{"version", report.version},
            {"kind", "run_report"},
            {"tokens", report.tokens},
            {"head_dim", report.head_dim},
            {"heads", report.heads},
            {"selection",
             {{"sink_tokens", report.selection.sink_tokens},
              {"local_tokens_min", report.selection.local_tokens_min},
              {"segment_size", report.selection.segment_size},
              {"block_q", report.selection.block_q},
              {"block_k", report.selection.block_k}}},
            {"head_reports", heads},
            {"timing",
             {{"label", "CPU reference"},
              {"quantization_ms", report.timing.quantization_ms},
              {"selection_ms", report.timing.selection_ms},
              {"computation_ms", report.timing.computation_ms},
              {"dense_ms", report.timing.dense_ms},
              {"overhead_ratio", report.timing.overhead_ratio()},
              {"computation_speedup", report.timing.computation_speedup()}}}};
}

inline nlohmann::json strip_timing(nlohmann::json j) {
    j.erase("timing");
    return j;
}

} // namespace sale
