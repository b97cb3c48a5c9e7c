// SPDX-FileCopyrightText: (c) 2026 exo2ego contributors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <fstream>
#include <regex>
#include <sstream>
#include <string>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "exo2ego/common/error.hpp"

namespace exo2ego {

using Json = nlohmann::json;

namespace detail {
inline constexpr char kFixedMarker[] = "\x01#";
}

/// A number that dump_json() writes with exactly `digits` fractional digits
/// (nlohmann always prints the shortest round-trip form).
inline Json fixed_number(double v, int digits = 9) {
    return std::string(detail::kFixedMarker) + fmt::format("{:.{}f}", v, digits);
}

/// Deterministic dump: object keys are sorted by nlohmann, fixed numbers are
/// unquoted.
inline std::string dump_json(const Json& j, int indent = 2) {
    static const std::regex marker(R"re("\\u0001#(-?[0-9]+\.[0-9]+)")re");
    return std::regex_replace(j.dump(indent), marker, "$1") + "\n";
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    require(static_cast<bool>(f), "cannot open for writing: " + path.string());
    f << text;
    require(static_cast<bool>(f), "write failed: " + path.string());
}

inline std::string read_text(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    require(static_cast<bool>(f), "cannot open: " + path.string());
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

/// Parses JSON and reports failures as "file:line:column: message".
inline Json parse_json_text(const std::string& text, const std::string& origin) {
    try {
        return Json::parse(text);
    } catch (const Json::parse_error& e) {
        std::size_t line = 1;
        std::size_t col = 1;
        const std::size_t upto = std::min<std::size_t>(e.byte == 0 ? 0 : e.byte - 1, text.size());
        for (std::size_t i = 0; i < upto; ++i) {
            if (text[i] == '\n') {
                ++line;
                col = 1;
            } else {
                ++col;
            }
        }
        throw Error(fmt::format("{}:{}:{}: JSON parse error: {}", origin, line, col, e.what()));
    }
}

inline Json read_json(const std::filesystem::path& path) {
    return parse_json_text(read_text(path), path.string());
}

}  // namespace exo2ego
