#include "mechxfer/serialization.hpp"

#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <stdexcept>

namespace mechxfer {

std::string to_hexfloat(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%a", v);
    return buf;
}

double from_hexfloat(const std::string& s) {
    char* end = nullptr;
    errno = 0;
    const double v = std::strtod(s.c_str(), &end);
    if (end == s.c_str() || *end != '\0' || errno == ERANGE)
        throw std::invalid_argument("malformed hex-float value '" + s + "'");
    return v;
}

nlohmann::json param_set_to_json(const ParamSet& params) {
    nlohmann::json out = nlohmann::json::object();
    for (const auto& [name, t] : params) {
        nlohmann::json data = nlohmann::json::array();
        for (double v : t.data()) data.push_back(to_hexfloat(v));
        out[name] = {{"shape", t.shape()}, {"data", std::move(data)}};
    }
    return out;
}

ParamSet param_set_from_json(const nlohmann::json& j) {
    ParamSet out;
    for (const auto& [name, entry] : j.items()) {
        auto shape = entry.at("shape").get<std::vector<std::size_t>>();
        std::vector<double> data;
        for (const auto& v : entry.at("data")) data.push_back(from_hexfloat(v.get<std::string>()));
        out.emplace(name, Tensor(std::move(shape), std::move(data)));
    }
    return out;
}

}  // namespace mechxfer
