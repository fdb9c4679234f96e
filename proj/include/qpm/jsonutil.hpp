#pragma once

// JSON has no infinities; non-finite doubles travel as the strings
// "inf", "-inf" and "nan".

#include <cmath>
#include <json.hpp>
#include <limits>
#include <string>
#include <vector>

namespace qpm {

inline nlohmann::json json_number(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    return v;
}

inline double number_from_json(const nlohmann::json& j) {
    if (j.is_string()) {
        const auto s = j.get<std::string>();
        if (s == "inf") return std::numeric_limits<double>::infinity();
        if (s == "-inf") return -std::numeric_limits<double>::infinity();
        if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
        throw nlohmann::json::type_error::create(302, "expected a number, got \"" + s + "\"", &j);
    }
    return j.get<double>();
}

inline nlohmann::json json_numbers(const std::vector<double>& v) {
    auto out = nlohmann::json::array();
    for (double x : v) out.push_back(json_number(x));
    return out;
}

inline std::vector<double> numbers_from_json(const nlohmann::json& j) {
    std::vector<double> out;
    for (const auto& x : j) out.push_back(number_from_json(x));
    return out;
}

}  // namespace qpm
