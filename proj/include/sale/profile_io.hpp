#pragma once

#include <fstream>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "sale/calibrate.hpp"

namespace sale {

// JSON schema: {version, tau0, theta, samples, heads: [{layer, head, tau,
// flag, halvings}]}. Field names are stable; see docs/formats.md.

inline nlohmann::json to_json(const CalibrationProfile &profile) {
    nlohmann::json heads = nlohmann::json::array();
    for (const HeadCalibration &h : profile.heads) {
        heads.push_back({{"layer", h.layer},
                         {"head", h.head},
                         {"tau", h.tau},
                         {"flag", to_string(h.flag)},
                         {"halvings", h.halvings}});
    }
    return {{"version", profile.version},
            {"tau0", profile.tau0},
            {"theta", profile.theta},
            {"samples", profile.samples},
            {"heads", heads}};
}

inline CalibrationProfile profile_from_json(const nlohmann::json &j) {
    CalibrationProfile profile;
    profile.version = j.at("version").get<int>();
    if (profile.version != 1)
        throw std::runtime_error("calibration profile: unsupported version " +
                                 std::to_string(profile.version));
    profile.tau0 = j.at("tau0").get<double>();
    profile.theta = j.at("theta").get<double>();
    if (j.contains("samples"))
        profile.samples = j.at("samples").get<std::vector<std::string>>();
    for (const auto &h : j.at("heads")) {
        HeadCalibration head;
        head.layer = h.at("layer").get<std::size_t>();
        head.head = h.at("head").get<std::size_t>();
        head.tau = h.at("tau").get<double>();
        const std::string flag = h.at("flag").get<std::string>();
        if (flag == "converged")
            head.flag = CalibrationFlag::Converged;
        else if (flag == "floor-reached")
            head.flag = CalibrationFlag::FloorReached;
        else
            throw std::runtime_error("calibration profile: unknown flag " + flag);
        head.halvings = h.at("halvings").get<std::size_t>();
        profile.heads.push_back(head);
    }
    return profile;
}

inline void save_profile(const std::string &path, const CalibrationProfile &profile) {
    std::ofstream out(path, std::ios::trunc);
    if (!out)
        throw std::runtime_error("save_profile: cannot open " + path);
    out << to_json(profile).dump(2) << "\n";
    if (!out)
        throw std::runtime_error("save_profile: write failed for " + path);
}

inline CalibrationProfile load_profile(const std::string &path) {
    std::ifstream in(path);
    if (!in)
        throw std::runtime_error("load_profile: cannot open " + path);
    nlohmann::json j;
    in >> j;
    return profile_from_json(j);
}

} // namespace sale
