// Command-line front end: calibrate per-head thresholds, run sparse-vs-dense
// comparisons, sweep thresholds, and dump block masks.
//
// Exit codes: 0 success, 1 check failure, 2 input error.

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "sale/sale.hpp"

namespace {

using nlohmann::json;

constexpr int kExitOk = 0;
constexpr int kExitCheckFailure = 1;
constexpr int kExitInputError = 2;

// Thrown when a requested verification fails (exit 1, not an input error).
struct CheckFailure : std::runtime_error {
    using std::runtime_error::runtime_error;
};

json load_json_file(const std::string &path) {
    std::ifstream in(path);
    if (!in)
        throw std::runtime_error("cannot open " + path);
    json j;
    try {
        in >> j;
    } catch (const json::parse_error &e) {
        throw std::runtime_error(path + ": " + e.what());
    }
    return j;
}

sale::WorkloadKind parse_kind(const std::string &name) {
    if (name == "gaussian")
        return sale::WorkloadKind::Gaussian;
    if (name == "sink_local")
        return sale::WorkloadKind::SinkLocal;
    if (name == "needle")
        return sale::WorkloadKind::Needle;
    throw std::runtime_error("unknown workload kind: " + name);
}

sale::WorkloadSpec parse_workload(const json &j, std::optional<std::uint64_t> seed_override) {
    sale::WorkloadSpec spec;
    spec.kind = parse_kind(j.at("kind").get<std::string>());
    spec.seed = j.value("seed", 0ULL);
    spec.tokens = j.at("tokens").get<std::size_t>();
    spec.head_dim = j.at("head_dim").get<std::size_t>();
    spec.heads = j.value("heads", std::size_t{1});
    spec.sink_logit = j.value("sink_logit", spec.sink_logit);
    spec.local_logit = j.value("local_logit", spec.local_logit);
    spec.local_decay_tokens = j.value("local_decay_tokens", spec.local_decay_tokens);
    spec.needle_logit = j.value("needle_logit", spec.needle_logit);
    if (j.contains("needle_positions"))
        spec.needle_positions = j.at("needle_positions").get<std::vector<std::size_t>>();
    if (j.contains("needle_query_row"))
        spec.needle_query_row = j.at("needle_query_row").get<std::size_t>();
    if (seed_override)
        spec.seed = *seed_override;
    spec.validate();
    return spec;
}

// An input is either {"file": path} or {"workload": {...}}; returns the heads
// plus a short identifier for provenance.
std::pair<std::vector<sale::HeadInput>, std::string>
load_input(const json &j, std::optional<std::uint64_t> seed_override) {
    if (j.contains("file")) {
        const std::string path = j.at("file").get<std::string>();
        return {sale::read_tensor_file(path), path};
    }
    if (j.contains("workload")) {
        const sale::WorkloadSpec spec = parse_workload(j.at("workload"), seed_override);
        std::string id = "workload:" + j.at("workload").at("kind").get<std::string>() + ":seed=" +
                         std::to_string(spec.seed) + ":n=" + std::to_string(spec.tokens) +
                         ":d=" + std::to_string(spec.head_dim);
        return {sale::generate_workload(spec), id};
    }
    throw std::runtime_error("input must contain \"file\" or \"workload\"");
}

sale::SelectionConfig parse_selection(const json &config) {
    sale::SelectionConfig sel;
    if (config.contains("selection")) {
        const json &j = config.at("selection");
        sel.sink_tokens = j.value("sink_tokens", sel.sink_tokens);
        sel.local_tokens_min = j.value("local_tokens_min", sel.local_tokens_min);
        sel.segment_size = j.value("segment_size", sel.segment_size);
        sel.block_q = j.value("block_q", sel.block_q);
        sel.block_k = j.value("block_k", sel.block_k);
    }
    return sel;
}

std::size_t resolve_threads(std::size_t flag_value) {
    if (flag_value > 0)
        return flag_value;
    if (const char *env = std::getenv("SALE_CORE_THREADS")) {
        const long parsed = std::atol(env);
        if (parsed > 0)
            return static_cast<std::size_t>(parsed);
    }
    return 1;
}

void write_json_out(const std::string &path, const json &j) {
    std::ofstream out(path, std::ios::trunc);
    if (!out)
        throw std::runtime_error("cannot open " + path);
    out << j.dump(2) << "\n";
}

struct CommonFlags {
    std::string config_path;
    std::string profile_path;
    std::string json_out;
    std::size_t threads = 0;
    std::optional<std::uint64_t> seed;
    bool strict = false;
};

void add_common_flags(CLI::App *cmd, CommonFlags &flags) {
    cmd->add_option("--config", flags.config_path, "JSON config file");
    cmd->add_option("--profile", flags.profile_path, "calibration profile path");
    cmd->add_option("--json-out", flags.json_out, "write the JSON artifact here");
    cmd->add_option("--threads", flags.threads,
                    "worker threads (default: SALE_CORE_THREADS or 1)");
    cmd->add_option("--seed", flags.seed, "override workload seeds");
    cmd->add_flag("--strict", flags.strict, "non-zero exit on floor-reached heads");
}

int cmd_calibrate(const CommonFlags &flags) {
    if (flags.config_path.empty())
        throw std::runtime_error("calibrate requires --config");
    const json config = load_json_file(flags.config_path);

    sale::CalibrationSettings settings;
    settings.theta = config.at("theta").get<double>();
    settings.tau0 = config.value("tau0", settings.tau0);
    settings.max_halvings = config.value("max_halvings", settings.max_halvings);
    settings.selection = parse_selection(config);

    std::vector<std::vector<sale::HeadInput>> samples;
    std::vector<std::string> sample_ids;
    for (const json &entry : config.at("samples")) {
        auto [heads, id] = load_input(entry, flags.seed);
        samples.push_back(std::move(heads));
        sample_ids.push_back(std::move(id));
    }

    const std::size_t threads = resolve_threads(flags.threads);
    sale::CalibrationProfile profile = sale::calibrate_model(samples, settings, threads);
    profile.samples = sample_ids;

    std::string out_path = config.value("profile_out", std::string{});
    if (!flags.profile_path.empty())
        out_path = flags.profile_path;
    if (out_path.empty())
        throw std::runtime_error("calibrate needs profile_out in config or --profile");
    sale::save_profile(out_path, profile);
    if (!flags.json_out.empty())
        write_json_out(flags.json_out, sale::to_json(profile));

    std::printf("%-6s %-12s %-14s %s\n", "head", "tau", "flag", "halvings");
    bool any_floor = false;
    for (const sale::HeadCalibration &h : profile.heads) {
        std::printf("%-6zu %-12.6g %-14s %zu\n", h.head, h.tau, sale::to_string(h.flag),
                    h.halvings);
        any_floor = any_floor || h.flag == sale::CalibrationFlag::FloorReached;
    }
    std::printf("profile written to %s\n", out_path.c_str());
    if (any_floor && flags.strict)
        throw CheckFailure("strict mode: some heads reached the tau floor");
    return kExitOk;
}

std::vector<double> taus_from_profile(const sale::CalibrationProfile &profile,
                                      std::size_t head_count) {
    if (profile.heads.size() != head_count)
        throw std::runtime_error("profile head count (" + std::to_string(profile.heads.size()) +
                                 ") != tensor head count (" + std::to_string(head_count) + ")");
    std::vector<double> taus(head_count);
    for (const sale::HeadCalibration &h : profile.heads) {
        if (h.head >= head_count)
            throw std::runtime_error("profile head index out of range");
        taus[h.head] = h.tau;
    }
    return taus;
}

int cmd_run(const CommonFlags &flags, bool check, bool dense_mask) {
    if (flags.config_path.empty())
        throw std::runtime_error("run requires --config");
    const json config = load_json_file(flags.config_path);
    auto [heads, input_id] = load_input(config.at("input"), flags.seed);
    const sale::SelectionConfig base = parse_selection(config);

    std::vector<double> taus;
    double theta = 0.0;
    if (!flags.profile_path.empty()) {
        const sale::CalibrationProfile profile = sale::load_profile(flags.profile_path);
        taus = taus_from_profile(profile, heads.size());
        theta = profile.theta;
    } else if (dense_mask) {
        taus.assign(heads.size(), base.tau); // unused by the all-true mask
    } else {
        throw std::runtime_error("run requires --profile (or --dense-mask)");
    }

    sale::RunOptions options;
    options.threads = resolve_threads(flags.threads);
    options.dense_mask = dense_mask;
    const sale::RunReport report = sale::run_pipeline(heads, taus, base, options);

    std::printf("input: %s  (tokens=%zu, head_dim=%zu, heads=%zu)\n", input_id.c_str(),
                report.tokens, report.head_dim, report.heads);
    std::printf("%-6s %-12s %-10s %-12s %s\n", "head", "tau", "sparsity", "err", "blocks");
    for (const sale::HeadReport &h : report.head_reports)
        std::printf("%-6zu %-12.6g %-10.4f %-12.4e %zu/%zu\n", h.head, h.tau, h.sparsity, h.err,
                    h.computed_blocks, h.total_blocks);
    std::printf("timing (CPU reference, ms): quant=%.2f selection=%.2f computation=%.2f "
                "dense=%.2f overhead_ratio=%.3f computation_speedup=%.2f\n",
                report.timing.quantization_ms, report.timing.selection_ms,
                report.timing.computation_ms, report.timing.dense_ms,
                report.timing.overhead_ratio(), report.timing.computation_speedup());

    if (!flags.json_out.empty())
        write_json_out(flags.json_out, sale::to_json(report));

    if (check) {
        if (flags.profile_path.empty())
            throw std::runtime_error("--check requires --profile");
        for (const sale::HeadReport &h : report.head_reports)
            if (h.err > theta)
                throw CheckFailure("head " + std::to_string(h.head) + " err " +
                                   std::to_string(h.err) + " exceeds theta " +
                                   std::to_string(theta));
        std::printf("check: all heads within theta=%g\n", theta);
    }
    return kExitOk;
}

int cmd_sweep(const CommonFlags &flags) {
    if (flags.config_path.empty())
        throw std::runtime_error("sweep requires --config");
    const json config = load_json_file(flags.config_path);
    auto [heads, input_id] = load_input(config.at("input"), flags.seed);
    const sale::SelectionConfig base = parse_selection(config);
    const std::size_t threads = resolve_threads(flags.threads);

    json rows_json = json::array();
    if (config.contains("taus")) {
        std::vector<double> taus = config.at("taus").get<std::vector<double>>();
        for (double tau : taus)
            if (!(tau > 0.0 && tau < 1.0))
                throw std::runtime_error("sweep: tau " + std::to_string(tau) +
                                         " outside (0,1)");
        std::sort(taus.begin(), taus.end()); // rows come out ordered by tau
        const std::vector<sale::SweepRow> rows = sale::sweep_thresholds(heads, taus, base, threads);

        std::printf("input: %s\n", input_id.c_str());
        std::printf("%-12s %-10s %s\n", "tau", "sparsity", "err");
        for (const sale::SweepRow &row : rows)
            std::printf("%-12.6g %-10.4f %.4e\n", row.tau, row.sparsity, row.err);

        // sparsity must not decrease as tau grows
        for (std::size_t i = 1; i < rows.size(); ++i)
            if (rows[i].sparsity + 1e-12 < rows[i - 1].sparsity)
                throw CheckFailure("sweep: sparsity decreased between tau=" +
                                   std::to_string(rows[i - 1].tau) + " and tau=" +
                                   std::to_string(rows[i].tau));

        for (const sale::SweepRow &row : rows)
            rows_json.push_back({{"tau", row.tau}, {"sparsity", row.sparsity}, {"err", row.err}});
    } else if (config.contains("thetas")) {
        sale::CalibrationSettings settings;
        settings.tau0 = config.value("tau0", settings.tau0);
        settings.max_halvings = config.value("max_halvings", settings.max_halvings);
        settings.selection = base;
        std::vector<std::vector<sale::HeadInput>> samples{heads};

        std::printf("input: %s\n", input_id.c_str());
        std::printf("%-12s %-12s %-10s %s\n", "theta", "tau(min)", "sparsity", "err");
        for (double theta : config.at("thetas")) {
            if (!(theta > 0.0))
                throw std::runtime_error("sweep: theta must be > 0");
            settings.theta = theta;
            const sale::CalibrationProfile profile =
                sale::calibrate_model(samples, settings, threads);
            std::vector<double> taus(heads.size());
            double tau_min = 1.0;
            for (const sale::HeadCalibration &h : profile.heads) {
                taus[h.head] = h.tau;
                tau_min = std::min(tau_min, h.tau);
            }
            sale::RunOptions options;
            options.threads = threads;
            const sale::RunReport report = sale::run_pipeline(heads, taus, base, options);
            double sparsity = 0.0, err = 0.0;
            for (const sale::HeadReport &h : report.head_reports) {
                sparsity += h.sparsity / static_cast<double>(report.head_reports.size());
                err = std::max(err, h.err);
            }
            std::printf("%-12.6g %-12.6g %-10.4f %.4e\n", theta, tau_min, sparsity, err);
            rows_json.push_back(
                {{"theta", theta}, {"tau_min", tau_min}, {"sparsity", sparsity}, {"err", err}});
        }
    } else {
        throw std::runtime_error("sweep config needs \"taus\" or \"thetas\"");
    }

    if (!flags.json_out.empty())
        write_json_out(flags.json_out, json{{"version", 1}, {"kind", "sweep"},
                                            {"input", input_id}, {"rows", rows_json}});
    return kExitOk;
}

int cmd_mask(const CommonFlags &flags, long head_selector, const std::string &out_path) {
    if (flags.config_path.empty())
        throw std::runtime_error("mask requires --config");
    if (out_path.empty())
        throw std::runtime_error("mask requires --out");
    const json config = load_json_file(flags.config_path);
    auto [heads, input_id] = load_input(config.at("input"), flags.seed);
    const sale::SelectionConfig base = parse_selection(config);

    std::vector<double> taus(heads.size(), base.tau);
    if (!flags.profile_path.empty()) {
        const sale::CalibrationProfile profile = sale::load_profile(flags.profile_path);
        taus = taus_from_profile(profile, heads.size());
    }

    std::vector<std::size_t> selected_heads;
    if (head_selector < 0) {
        for (std::size_t h = 0; h < heads.size(); ++h)
            selected_heads.push_back(h);
    } else {
        if (static_cast<std::size_t>(head_selector) >= heads.size())
            throw std::runtime_error("head " + std::to_string(head_selector) + " out of range (" +
                                     std::to_string(heads.size()) + " heads)");
        selected_heads.push_back(static_cast<std::size_t>(head_selector));
    }

    std::vector<sale::MaskRecord> records;
    for (std::size_t h : selected_heads) {
        const sale::HeadInput &input = heads[h];
        sale::SelectionConfig config_h = base;
        config_h.tau = taus[h];
        const sale::BlockGrid grid(input.seq_len(), config_h.block_q, config_h.block_k);
        const sale::QuantizedMatrix query4 = sale::quantize_per_token(input.query);
        const sale::QuantizedMatrix key4 = sale::quantize_per_key_block(input.key, grid);
        const sale::BlockMask mask = sale::selection_pass(input, query4, key4, config_h);

        // histogram of selected blocks per query-block row
        std::map<std::size_t, std::size_t> histogram;
        for (std::size_t i = 0; i < mask.query_blocks(); ++i) {
            std::size_t count = 0;
            for (std::size_t j = 0; j < mask.key_blocks(); ++j)
                count += mask.get(i, j) ? 1 : 0;
            ++histogram[count];
        }
        std::printf("head %zu (tau=%g): selected-blocks-per-row histogram\n", h, taus[h]);
        for (const auto &[count, rows] : histogram)
            std::printf("  %4zu blocks : %zu rows\n", count, rows);

        records.push_back(
            {static_cast<std::uint32_t>(h), static_cast<float>(taus[h]), mask});
    }
    sale::write_mask_dump(out_path, records);
    std::printf("mask dump written to %s (%zu head(s))\n", out_path.c_str(), records.size());
    return kExitOk;
}

} // namespace

int main(int argc, char **argv) {
    CLI::App app{"block-sparse causal attention reference engine"};
    app.require_subcommand(1);

    CommonFlags calibrate_flags, run_flags, sweep_flags, mask_flags;
    bool check = false, dense_mask = false;
    long head_selector = -1;
    std::string mask_out;

    CLI::App *calibrate = app.add_subcommand("calibrate", "calibrate per-head thresholds");
    add_common_flags(calibrate, calibrate_flags);

    CLI::App *run = app.add_subcommand("run", "run the sparse pipeline against the dense baseline");
    add_common_flags(run, run_flags);
    run->add_flag("--check", check, "verify err <= theta from the profile");
    run->add_flag("--dense-mask", dense_mask, "override selection with an all-true mask");

    CLI::App *sweep = app.add_subcommand("sweep", "tabulate (tau, sparsity, err) over a grid");
    add_common_flags(sweep, sweep_flags);

    CLI::App *mask = app.add_subcommand("mask", "dump the selection mask for a head");
    add_common_flags(mask, mask_flags);
    mask->add_option("--head", head_selector, "head index (default: all heads)");
    mask->add_option("--out", mask_out, "mask dump output path")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError &e) {
        return app.exit(e) == 0 ? kExitOk : kExitInputError;
    }

    try {
        if (calibrate->parsed())
            return cmd_calibrate(calibrate_flags);
        if (run->parsed())
            return cmd_run(run_flags, check, dense_mask);
        if (sweep->parsed())
            return cmd_sweep(sweep_flags);
        if (mask->parsed())
            return cmd_mask(mask_flags, head_selector, mask_out);
    } catch (const CheckFailure &e) {
        std::cerr << "check failed: " << e.what() << "\n";
        return kExitCheckFailure;
    } catch (const std::exception &e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitInputError;
    }
    return kExitInputError;
}
