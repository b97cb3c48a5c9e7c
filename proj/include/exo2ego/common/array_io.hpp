// SPDX-FileCopyrightText: (c) 2026 exo2ego contributors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Binary array files (.e2a):
//
//   offset 0   4 bytes   magic "E2EA"
//   offset 4   4 bytes   header length H, uint32 little-endian
//   offset 8   H bytes   UTF-8 JSON header: {"dtype": "f32"|"f64", "shape": [rows, cols], ...}
//   offset 8+H           rows*cols values, little-endian, row-major
//
// Extra header keys (view, fps, name, ...) are carried through untouched.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <type_traits>
#include <vector>

#include <nlohmann/json.hpp>

#include "exo2ego/common/error.hpp"
#include "exo2ego/common/matrix.hpp"

namespace exo2ego {

static_assert(std::endian::native == std::endian::little, "array files assume a little-endian host");

namespace detail {

template <class T>
constexpr const char* dtype_name() {
    if constexpr (std::is_same_v<T, float>) {
        return "f32";
    } else {
        static_assert(std::is_same_v<T, double>);
        return "f64";
    }
}

}  // namespace detail

template <class T>
std::vector<char> encode_array(const Matrix<T>& m, nlohmann::json extra = nlohmann::json::object()) {
    nlohmann::json header = std::move(extra);
    header["dtype"] = detail::dtype_name<T>();
    header["shape"] = {m.rows(), m.cols()};
    const std::string text = header.dump();
    const auto header_len = static_cast<std::uint32_t>(text.size());
    const std::size_t payload = static_cast<std::size_t>(m.size()) * sizeof(T);

    std::vector<char> out(8 + text.size() + payload);
    std::memcpy(out.data(), "E2EA", 4);
    std::memcpy(out.data() + 4, &header_len, 4);
    std::memcpy(out.data() + 8, text.data(), text.size());
    if (payload > 0) {
        std::memcpy(out.data() + 8 + text.size(), m.data(), payload);
    }
    return out;
}

inline void write_bytes(const std::filesystem::path& path, const std::vector<char>& bytes) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    require(static_cast<bool>(f), "cannot open for writing: " + path.string());
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    require(static_cast<bool>(f), "write failed: " + path.string());
}

inline std::vector<char> read_bytes(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    require(static_cast<bool>(f), "cannot open: " + path.string());
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

template <class T>
void write_array(const std::filesystem::path& path, const Matrix<T>& m,
                 nlohmann::json extra = nlohmann::json::object()) {
    write_bytes(path, encode_array(m, std::move(extra)));
}

/// Decodes an array, converting from the stored dtype to T.
template <class T>
Matrix<T> decode_array(const std::vector<char>& bytes, nlohmann::json* header_out = nullptr,
                       const std::string& origin = "<memory>") {
    require(bytes.size() >= 8 && std::memcmp(bytes.data(), "E2EA", 4) == 0, "not an array file: " + origin);
    std::uint32_t header_len = 0;
    std::memcpy(&header_len, bytes.data() + 4, 4);
    require(bytes.size() >= 8 + static_cast<std::size_t>(header_len), "truncated array header: " + origin);

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(bytes.begin() + 8, bytes.begin() + 8 + header_len);
    } catch (const nlohmann::json::exception& e) {
        throw Error("bad array header in " + origin + ": " + e.what());
    }
    const auto rows = header.at("shape").at(0).get<Eigen::Index>();
    const auto cols = header.at("shape").at(1).get<Eigen::Index>();
    const std::string dtype = header.at("dtype").get<std::string>();
    const char* data = bytes.data() + 8 + header_len;
    const std::size_t available = bytes.size() - 8 - header_len;
    const auto count = static_cast<std::size_t>(rows * cols);

    Matrix<T> m(rows, cols);
    auto load = [&]<class S>(S) {
        require(available == count * sizeof(S), "array payload size mismatch: " + origin);
        std::vector<S> tmp(count);
        if (count > 0) {
            std::memcpy(tmp.data(), data, count * sizeof(S));
        }
        for (std::size_t i = 0; i < count; ++i) {
            m.data()[i] = static_cast<T>(tmp[i]);
        }
    };
    if (dtype == "f32") {
        load(float{});
    } else if (dtype == "f64") {
        load(double{});
    } else {
        throw Error("unsupported dtype '" + dtype + "' in " + origin);
    }
    if (header_out != nullptr) {
        *header_out = std::move(header);
    }
    return m;
}

template <class T>
Matrix<T> read_array(const std::filesystem::path& path, nlohmann::json* header_out = nullptr) {
    return decode_array<T>(read_bytes(path), header_out, path.string());
}

}  // namespace exo2ego
