// Copyright 2026 The drift-adapt Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

// Little-endian binary file helpers shared by the DTNS / DSEG / DADP formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <fmt/format.h>

namespace drift::binio {

static_assert(std::endian::native == std::endian::little,
              "big-endian hosts would need byte swapping in binio");

class Writer {
public:
    explicit Writer(const std::filesystem::path& path)
        : path_(path.string()), out_(path, std::ios::binary) {
        if (!out_) {
            throw std::runtime_error(
                fmt::format("cannot open '{}' for writing", path_));
        }
    }

    void bytes(const void* p, std::size_t n) {
        out_.write(static_cast<const char*>(p),
                   static_cast<std::streamsize>(n));
    }
    void magic(const char tag[4]) { bytes(tag, 4); }
    void u8(std::uint8_t v) { bytes(&v, 1); }
    void u32(std::uint32_t v) { bytes(&v, 4); }
    void f32(float v) { bytes(&v, 4); }
    void f64(double v) { bytes(&v, 8); }
    void f32_span(std::span<const float> v) { bytes(v.data(), 4 * v.size()); }
    void f64_span(std::span<const double> v) { bytes(v.data(), 8 * v.size()); }

    void close() {
        out_.close();
        if (!out_) {
            throw std::runtime_error(fmt::format("write to '{}' failed", path_));
        }
    }

private:
    std::string path_;
    std::ofstream out_;
};

class Reader {
public:
    explicit Reader(const std::filesystem::path& path) : path_(path.string()) {
        std::ifstream in(path, std::ios::binary);
        if (!in) {
            throw std::runtime_error(
                fmt::format("cannot open '{}' for reading", path_));
        }
        buf_.assign(std::istreambuf_iterator<char>(in),
                    std::istreambuf_iterator<char>());
    }

    std::size_t pos() const { return pos_; }
    std::size_t size() const { return buf_.size(); }

    void bytes(void* p, std::size_t n) {
        if (pos_ + n > buf_.size()) {
            throw std::runtime_error(fmt::format(
                "'{}' truncated at byte {}: expected {} more bytes, {} left",
                path_, pos_, n, buf_.size() - pos_));
        }
        std::memcpy(p, buf_.data() + pos_, n);
        pos_ += n;
    }

    void expect_magic(const char tag[4], const char* format_name) {
        char got[4];
        bytes(got, 4);
        if (std::memcmp(got, tag, 4) != 0) {
            throw std::runtime_error(fmt::format(
                "'{}' is not a {} file (bad magic at byte 0)", path_,
                format_name));
        }
    }

    std::uint8_t u8() {
        std::uint8_t v;
        bytes(&v, 1);
        return v;
    }
    std::uint32_t u32() {
        std::uint32_t v;
        bytes(&v, 4);
        return v;
    }
    float f32() {
        float v;
        bytes(&v, 4);
        return v;
    }
    double f64() {
        double v;
        bytes(&v, 8);
        return v;
    }
    void f32_into(std::span<float> v) { bytes(v.data(), 4 * v.size()); }
    void f64_into(std::span<double> v) { bytes(v.data(), 8 * v.size()); }

    void expect_end() const {
        if (pos_ != buf_.size()) {
            throw std::runtime_error(
                fmt::format("'{}' has {} trailing bytes after byte {}", path_,
                            buf_.size() - pos_, pos_));
        }
    }

    const std::string& path() const { return path_; }

private:
    std::string path_;
    std::vector<char> buf_;
    std::size_t pos_ = 0;
};

} // namespace drift::binio
