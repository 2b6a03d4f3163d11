// Shared (internal) JSON serialization for GeometryInfo passthrough blocks.
#ifndef BTS_SRC_GEOM_JSON_HPP
#define BTS_SRC_GEOM_JSON_HPP

#include "json.hpp"

#include "bts/volume.hpp"

namespace bts::detail {

inline nlohmann::ordered_json geometry_to_json(const GeometryInfo& g) {
    nlohmann::ordered_json j;
    j["qform_code"] = g.qform_code;
    j["sform_code"] = g.sform_code;
    j["quatern"] = {g.quatern[0], g.quatern[1], g.quatern[2]};
    j["qoffset"] = {g.qoffset[0], g.qoffset[1], g.qoffset[2]};
    j["srow"] = std::vector<float>(g.srow, g.srow + 12);
    j["qfac"] = g.qfac;
    j["xyzt_units"] = g.xyzt_units;
    return j;
}

inline GeometryInfo geometry_from_json(const nlohmann::ordered_json& j) {
    GeometryInfo g;
    g.qform_code = j.at("qform_code").get<std::int16_t>();
    g.sform_code = j.at("sform_code").get<std::int16_t>();
    for (int i = 0; i < 3; ++i) {
        g.quatern[i] = j.at("quatern")[i].get<float>();
        g.qoffset[i] = j.at("qoffset")[i].get<float>();
    }
    for (int i = 0; i < 12; ++i) g.srow[i] = j.at("srow")[i].get<float>();
    g.qfac = j.at("qfac").get<float>();
    g.xyzt_units = j.at("xyzt_units").get<std::int8_t>();
    return g;
}

} // namespace bts::detail

#endif
