#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <sys/wait.h>
#include <unistd.h>

#include <json.hpp>

#include "sale/mask_io.hpp"
#include "sale/profile_io.hpp"
#include "sale/tensor_file.hpp"

#include "support/oracles.hpp"

using nlohmann::json;

namespace {

#ifndef SALE_CLI_PATH
#error "SALE_CLI_PATH must point at the built CLI binary"
#endif

struct TempDir {
    std::filesystem::path path;
    TempDir() {
        path = std::filesystem::temp_directory_path() /
               ("sale_cli_" + std::to_string(::getpid()));
        std::filesystem::create_directories(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }
    std::string file(const std::string &name) const { return (path / name).string(); }
};

int run_cli(const std::string &args, bool raw_command = false) {
    const std::string command =
        (raw_command ? args : std::string(SALE_CLI_PATH) + " " + args) + " >/dev/null 2>&1";
    const int status = std::system(command.c_str());
    REQUIRE(status != -1);
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

void write_file(const std::string &path, const json &j) {
    std::ofstream out(path);
    out << j.dump(2);
}

json read_json(const std::string &path) {
    std::ifstream in(path);
    REQUIRE(in.good());
    json j;
    in >> j;
    return j;
}

json workload_input(std::uint64_t seed) {
    return {{"workload",
             {{"kind", "sink_local"}, {"seed", seed}, {"tokens", 256}, {"head_dim", 16},
              {"heads", 2}}}};
}

// long enough for the default geometry to leave a real middle region
json sparse_workload_input(std::uint64_t seed, std::size_t heads = 1) {
    return {{"workload",
             {{"kind", "sink_local"}, {"seed", seed}, {"tokens", 1024}, {"head_dim", 64},
              {"heads", heads}}}};
}

} // namespace

TEST_CASE("calibrate with a huge theta returns tau0 for every head") {
    TempDir dir;
    const std::string config_path = dir.file("cal.json");
    const std::string profile_path = dir.file("profile.json");
    write_file(config_path, {{"samples", {workload_input(1)}},
                             {"theta", 1e9},
                             {"tau0", 0.008},
                             {"profile_out", profile_path}});
    CHECK(run_cli("calibrate --config " + config_path) == 0);

    const sale::CalibrationProfile profile = sale::load_profile(profile_path);
    REQUIRE(profile.heads.size() == 2);
    for (const auto &h : profile.heads) {
        CHECK(h.tau == 0.008);
        CHECK(h.flag == sale::CalibrationFlag::Converged);
    }
}

TEST_CASE("calibrate default bounds converge on the shipped workload") {
    TempDir dir;
    const std::string config_path = dir.file("cal.json");
    const std::string profile_path = dir.file("profile.json");
    write_file(config_path, {{"samples", {workload_input(2), workload_input(3)}},
                             {"theta", 0.4},
                             {"tau0", 0.008},
                             {"profile_out", profile_path}});
    CHECK(run_cli("calibrate --config " + config_path + " --strict") == 0);
    for (const auto &h : sale::load_profile(profile_path).heads)
        CHECK(h.flag == sale::CalibrationFlag::Converged);
}

TEST_CASE("missing input file exits with code 2") {
    TempDir dir;
    const std::string config_path = dir.file("cal.json");
    write_file(config_path, {{"samples", {{{"file", dir.file("nope.tns")}}}},
                             {"theta", 0.4},
                             {"profile_out", dir.file("p.json")}});
    CHECK(run_cli("calibrate --config " + config_path) == 2);
    CHECK(run_cli("run --config " + dir.file("missing_config.json")) == 2);
}

TEST_CASE("strict calibration flags floor-reached heads with exit 1") {
    TempDir dir;
    // a head whose selection bound never clears, so every rung drops the same
    // faintly visible mass and the error cannot reach 1e-9
    const std::vector<sale::HeadInput> heads = {
        oracle::planted_sink_head(4, 1024, 8, 30.0, 3000.0f)};
    const std::string tensor_path = dir.file("floor.tns");
    sale::write_tensor_file(tensor_path, heads);

    const std::string config_path = dir.file("cal.json");
    write_file(config_path, {{"samples", {{{"file", tensor_path}}}},
                             {"theta", 1e-9},
                             {"tau0", 0.008},
                             {"max_halvings", 3},
                             {"profile_out", dir.file("p.json")}});
    CHECK(run_cli("calibrate --config " + config_path + " --strict") == 1);
    CHECK(run_cli("calibrate --config " + config_path) == 0); // non-strict still writes
    for (const auto &h : sale::load_profile(dir.file("p.json")).heads)
        CHECK(h.flag == sale::CalibrationFlag::FloorReached);
}

TEST_CASE("run pipeline end to end") {
    TempDir dir;
    const std::string cal_config = dir.file("cal.json");
    const std::string run_config = dir.file("run.json");
    const std::string profile_path = dir.file("profile.json");
    write_file(cal_config, {{"samples", {workload_input(5)}},
                            {"theta", 0.4},
                            {"profile_out", profile_path}});
    write_file(run_config, {{"input", workload_input(5)}});
    REQUIRE(run_cli("calibrate --config " + cal_config) == 0);

    SUBCASE("dense mask override reports near-zero error") {
        const std::string out = dir.file("report.json");
        CHECK(run_cli("run --config " + run_config + " --dense-mask --json-out " + out) == 0);
        const json report = read_json(out);
        for (const auto &h : report.at("head_reports")) {
            CHECK(h.at("err").get<double>() <= 1e-5);
            CHECK(h.at("sparsity").get<double>() == 0.0);
        }
    }
    SUBCASE("check mode verifies the calibrated error bound") {
        CHECK(run_cli("run --config " + run_config + " --profile " + profile_path +
                      " --check") == 0);
    }
    SUBCASE("a sparse fixture reports non-zero sparsity within the bound") {
        const std::string sparse_cal = dir.file("sparse_cal.json");
        const std::string sparse_run = dir.file("sparse_run.json");
        const std::string sparse_profile = dir.file("sparse_profile.json");
        const std::string out = dir.file("sparse_report.json");
        write_file(sparse_cal, {{"samples", {sparse_workload_input(42)}},
                                {"theta", 0.05},
                                {"profile_out", sparse_profile}});
        write_file(sparse_run, {{"input", sparse_workload_input(42)}});
        REQUIRE(run_cli("calibrate --config " + sparse_cal) == 0);
        CHECK(run_cli("run --config " + sparse_run + " --profile " + sparse_profile +
                      " --check --json-out " + out) == 0);
        const json report = read_json(out);
        for (const auto &h : report.at("head_reports")) {
            CHECK(h.at("sparsity").get<double>() > 0.0);
            CHECK(h.at("err").get<double>() <= 0.05);
        }
    }
    SUBCASE("reports are identical across reruns and thread counts, timing aside") {
        const std::string out1 = dir.file("r1.json");
        const std::string out2 = dir.file("r2.json");
        const std::string out3 = dir.file("r3.json");
        REQUIRE(run_cli("run --config " + run_config + " --profile " + profile_path +
                        " --seed 5 --threads 1 --json-out " + out1) == 0);
        REQUIRE(run_cli("run --config " + run_config + " --profile " + profile_path +
                        " --seed 5 --threads 2 --json-out " + out2) == 0);
        // SALE_CORE_THREADS is the --threads fallback
        REQUIRE(run_cli("env SALE_CORE_THREADS=2 " SALE_CLI_PATH " run --config " + run_config +
                            " --profile " + profile_path + " --seed 5 --json-out " + out3,
                        true) == 0);
        json a = read_json(out1), b = read_json(out2), c = read_json(out3);
        a.erase("timing");
        b.erase("timing");
        c.erase("timing");
        CHECK(a == b);
        CHECK(a == c);
    }
    SUBCASE("a seed override changes the generated input") {
        const std::string sparse_run = dir.file("seed_run.json");
        write_file(sparse_run, {{"input", sparse_workload_input(42)}});
        const std::string out1 = dir.file("s1.json");
        const std::string out2 = dir.file("s2.json");
        REQUIRE(run_cli("run --config " + sparse_run + " --profile " + profile_path +
                        " --seed 42 --json-out " + out1) == 2); // 1-head input, 2-head profile
        const std::string one_head_profile = dir.file("one_head.json");
        const std::string one_head_cal = dir.file("one_head_cal.json");
        write_file(one_head_cal, {{"samples", {sparse_workload_input(42)}},
                                  {"theta", 0.05},
                                  {"profile_out", one_head_profile}});
        REQUIRE(run_cli("calibrate --config " + one_head_cal) == 0);
        REQUIRE(run_cli("run --config " + sparse_run + " --profile " + one_head_profile +
                        " --seed 42 --json-out " + out1) == 0);
        REQUIRE(run_cli("run --config " + sparse_run + " --profile " + one_head_profile +
                        " --seed 43 --json-out " + out2) == 0);
        json a = read_json(out1), b = read_json(out2);
        a.erase("timing");
        b.erase("timing");
        CHECK(a != b); // different seed, different mask and error
    }
    SUBCASE("profile head count must match the input") {
        const std::string bad_run = dir.file("bad_run.json");
        json other = workload_input(5);
        other["workload"]["heads"] = 3;
        write_file(bad_run, {{"input", other}});
        CHECK(run_cli("run --config " + bad_run + " --profile " + profile_path) == 2);
    }
}

TEST_CASE("sweep") {
    TempDir dir;
    const std::string config_path = dir.file("sweep.json");

    SUBCASE("tau grid rows are monotone in sparsity") {
        write_file(config_path, {{"input", sparse_workload_input(6)},
                                 {"taus", {0.001, 0.002, 0.004, 0.008, 0.016}}});
        const std::string out = dir.file("sweep.json.out");
        CHECK(run_cli("sweep --config " + config_path + " --json-out " + out) == 0);
        const json sweep = read_json(out);
        const auto &rows = sweep.at("rows");
        REQUIRE(rows.size() == 5);
        for (std::size_t i = 1; i < rows.size(); ++i)
            CHECK(rows[i].at("sparsity").get<double>() + 1e-12 >=
                  rows[i - 1].at("sparsity").get<double>());
        CHECK(rows[4].at("sparsity").get<double>() > 0.0); // grid actually sweeps something
    }
    SUBCASE("singleton grid emits one row") {
        write_file(config_path, {{"input", workload_input(6)}, {"taus", {0.004}}});
        const std::string out = dir.file("one.json");
        CHECK(run_cli("sweep --config " + config_path + " --json-out " + out) == 0);
        CHECK(read_json(out).at("rows").size() == 1);
    }
    SUBCASE("grid values outside (0,1) exit with code 2") {
        write_file(config_path, {{"input", workload_input(6)}, {"taus", {0.5, 1.5}}});
        CHECK(run_cli("sweep --config " + config_path) == 2);
    }
    SUBCASE("theta grid calibrates per point") {
        write_file(config_path, {{"input", workload_input(6)}, {"thetas", {1.0, 0.1}}});
        const std::string out = dir.file("thetas.json");
        CHECK(run_cli("sweep --config " + config_path + " --json-out " + out) == 0);
        const auto rows = read_json(out).at("rows");
        REQUIRE(rows.size() == 2);
        CHECK(rows[0].contains("theta"));
    }
}

TEST_CASE("mask dumps") {
    TempDir dir;
    const std::string config_path = dir.file("mask.json");
    write_file(config_path, {{"input", workload_input(7)}});

    SUBCASE("single-block input dumps an all-true mask") {
        json tiny = {{"input",
                      {{"workload",
                        {{"kind", "gaussian"}, {"seed", 7}, {"tokens", 48}, {"head_dim", 8},
                         {"heads", 1}}}}}};
        write_file(config_path, tiny);
        const std::string out = dir.file("tiny_mask.bin");
        CHECK(run_cli("mask --config " + config_path + " --head 0 --out " + out) == 0);
        const auto records = sale::read_mask_dump(out);
        REQUIRE(records.size() == 1);
        for (std::size_t i = 0; i < records[0].mask.query_blocks(); ++i)
            for (std::size_t j = 0; j < records[0].mask.key_blocks(); ++j)
                CHECK(records[0].mask.get(i, j) == (j <= 2 * i + 1)); // causal blocks only
    }
    SUBCASE("dump then re-read round trips") {
        const std::string out = dir.file("mask.bin");
        CHECK(run_cli("mask --config " + config_path + " --out " + out) == 0);
        const auto records = sale::read_mask_dump(out);
        CHECK(records.size() == 2); // all heads by default
    }
    SUBCASE("sink column and diagonal band stay selected on a sparse fixture") {
        const std::string sparse_config = dir.file("sparse_mask.json");
        write_file(sparse_config, {{"input", sparse_workload_input(8)}});
        const std::string out = dir.file("sparse_mask.bin");
        CHECK(run_cli("mask --config " + sparse_config + " --head 0 --out " + out) == 0);
        const auto records = sale::read_mask_dump(out);
        REQUIRE(records.size() == 1);
        const sale::BlockMask &mask = records[0].mask;
        std::size_t unselected = 0;
        for (std::size_t i = 0; i < mask.query_blocks(); ++i) {
            CHECK(mask.get(i, 0));          // sink column
            CHECK(mask.get(i, 2 * i));      // diagonal band (b_q = 2 b_k)
            CHECK(mask.get(i, 2 * i + 1));
            for (std::size_t j = 0; j <= 2 * i + 1; ++j)
                unselected += mask.get(i, j) ? 0 : 1;
        }
        CHECK(unselected > 0); // the fixture is genuinely sparse
    }
    SUBCASE("head out of range exits with code 2") {
        CHECK(run_cli("mask --config " + config_path + " --head 9 --out " +
                      dir.file("x.bin")) == 2);
    }
}
