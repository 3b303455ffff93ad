#pragma once

#include <fstream>
#include <string>

#include <json.hpp>

#include "biometry/core.hpp"
#include "biometry/dod.hpp"
#include "biometry/errors.hpp"

namespace biometry {

/// Fixed key order so identical models serialize byte-identically.
inline nlohmann::ordered_json orientation_model_to_json(const OrientationModel& m) {
    nlohmann::ordered_json j;
    j["format"] = "orientation-model-v1";
    j["centroid_1"] = {m.centroid_1.u, m.centroid_1.v};
    j["centroid_2"] = {m.centroid_2.u, m.centroid_2.v};
    j["direction"] = {m.direction.x(), m.direction.y()};
    j["covariances"] = {
        {{m.covariances[0](0, 0), m.covariances[0](0, 1)},
         {m.covariances[0](1, 0), m.covariances[0](1, 1)}},
        {{m.covariances[1](0, 0), m.covariances[1](0, 1)},
         {m.covariances[1](1, 0), m.covariances[1](1, 1)}},
    };
    j["weights"] = {m.weights[0], m.weights[1]};
    return j;
}

inline OrientationModel orientation_model_from_json(const nlohmann::json& j) {
    try {
        if (j.at("format").get<std::string>() != "orientation-model-v1")
            throw ConfigError("orientation model: unknown format tag");
        OrientationModel m;
        m.centroid_1 = {j.at("centroid_1").at(0).get<double>(),
                        j.at("centroid_1").at(1).get<double>()};
        m.centroid_2 = {j.at("centroid_2").at(0).get<double>(),
                        j.at("centroid_2").at(1).get<double>()};
        m.direction =
            Eigen::Vector2d(j.at("direction").at(0).get<double>(), j.at("direction").at(1).get<double>());
        for (int k = 0; k < 2; ++k)
            for (int r = 0; r < 2; ++r)
                for (int c = 0; c < 2; ++c)
                    m.covariances[k](r, c) = j.at("covariances").at(k).at(r).at(c).get<double>();
        m.weights = {j.at("weights").at(0).get<double>(), j.at("weights").at(1).get<double>()};
        if (m.direction.norm() <= kMinCentroidSeparation)
            throw ConfigError("orientation model: degenerate direction");
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("orientation model: malformed JSON: ") + e.what());
    }
}

/// Full model file: the model plus measurement kind and fit metadata.
inline void save_orientation_model(const OrientationModel& m, MeasurementKind kind,
                                   const FitReport& report, std::uint64_t seed,
                                   const std::string& path) {
    nlohmann::ordered_json j = orientation_model_to_json(m);
    j["measurement"] = to_string(kind);
    nlohmann::ordered_json fit;
    fit["seed"] = seed;
    fit["iterations"] = report.iterations;
    fit["converged"] = report.converged;
    fit["final_log_likelihood"] =
        report.log_likelihood.empty() ? 0.0 : report.log_likelihood.back();
    j["fit"] = fit;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write orientation model: " + path);
    out << j.dump(2) << "\n";
    if (!out) throw IoError("write failed: " + path);
}

inline OrientationModel load_orientation_model(const std::string& path,
                                               MeasurementKind* kind_out = nullptr) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read orientation model: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("orientation model: parse error: ") + e.what());
    }
    if (kind_out && j.contains("measurement"))
        *kind_out = parse_measurement_kind(j.at("measurement").get<std::string>());
    return orientation_model_from_json(j);
}

} // namespace biometry
