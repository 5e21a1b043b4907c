#pragma once

// Model file round trip for every transport kind.

#include <fstream>
#include <memory>
#include <string>

#include <json.hpp>

#include "flow.hpp"
#include "gmm.hpp"
#include "transport.hpp"

namespace stratmc {

inline void save_map(const TransportMap& map, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("save_map: cannot open " + path);
    out << map.to_json().dump(1, '\t') << "\n";
}

inline TransportPtr transport_from_json(const nlohmann::json& j, int expected_dim = -1) {
    if (!j.contains("format") || j.at("format").get<std::string>() != "stratmc-transport")
        throw ModelFormatError("not a transport model file");
    if (!j.contains("version"))
        throw ModelFormatError("model file is missing the version field");
    if (j.at("version").get<int>() != 1)
        throw ModelFormatError("unsupported model version");

    std::string kind = j.at("kind").get<std::string>();
    TransportPtr map;
    if (kind == "identity") {
        map = std::make_shared<IdentityMap>(j.at("dim").get<int>());
    } else if (kind == "affine-whiten") {
        auto mean = detail::doubles_from_json(j.at("mean"));
        Matrix lower;
        for (const auto& r : j.at("lower")) lower.push_back(detail::doubles_from_json(r));
        map = std::make_shared<AffineWhitenMap>(std::move(mean), std::move(lower));
    } else if (kind == "coupling-flow") {
        map = CouplingFlowMap::from_json(j);
    } else if (kind == "gmm") {
        map = std::make_shared<GmmSamplerMap>(GmmModel::from_json(j));
    } else {
        throw ModelFormatError("unknown transport kind: " + kind);
    }
    if (expected_dim > 0 && map->dim() != expected_dim)
        throw ModelFormatError("model dimension " + std::to_string(map->dim()) +
                               " does not match expected " + std::to_string(expected_dim));
    return map;
}

inline TransportPtr load_map(const std::string& path, int expected_dim = -1) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_map: cannot open " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ModelFormatError(std::string("malformed model file: ") + e.what());
    }
    return transport_from_json(j, expected_dim);
}

} // namespace stratmc
