#pragma once

#include <string>

#include "json.hpp"

#include "mechxfer/tensor.hpp"

namespace mechxfer {

// "%a" encoding; strtod parses it back to the identical double.
std::string to_hexfloat(double v);
double from_hexfloat(const std::string& s);

nlohmann::json param_set_to_json(const ParamSet& params);
ParamSet param_set_from_json(const nlohmann::json& j);

}  // namespace mechxfer
