#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "polygraph/errors.hpp"

namespace polygraph {

struct WavData {
    std::vector<double> samples;  // mono, scaled to [-1, 1)
    int sample_rate = 0;
};

namespace detail {

inline std::uint32_t read_u32(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

inline std::uint16_t read_u16(const unsigned char* p) {
    return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

}  // namespace detail

/// Minimal RIFF/WAVE reader: 16-bit PCM, mono only.
inline WavData read_wav(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open wav file: " + path);
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                     std::istreambuf_iterator<char>());
    if (bytes.size() < 44 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
        std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
        throw DataError("not a RIFF/WAVE file: " + path);
    }
    WavData wav;
    int channels = 0, bits = 0;
    size_t pos = 12;
    bool got_fmt = false, got_data = false;
    while (pos + 8 <= bytes.size()) {
        std::uint32_t chunk_size = detail::read_u32(bytes.data() + pos + 4);
        const unsigned char* body = bytes.data() + pos + 8;
        if (pos + 8 + chunk_size > bytes.size()) break;
        if (std::memcmp(bytes.data() + pos, "fmt ", 4) == 0 && chunk_size >= 16) {
            std::uint16_t format = detail::read_u16(body);
            channels = detail::read_u16(body + 2);
            wav.sample_rate = static_cast<int>(detail::read_u32(body + 4));
            bits = detail::read_u16(body + 14);
            if (format != 1) throw DataError(path + ": only PCM wav supported");
            got_fmt = true;
        } else if (std::memcmp(bytes.data() + pos, "data", 4) == 0) {
            if (!got_fmt) throw DataError(path + ": data chunk before fmt chunk");
            if (channels != 1) throw DataError(path + ": mono audio required");
            if (bits != 16) throw DataError(path + ": 16-bit PCM required");
            size_t n = chunk_size / 2;
            wav.samples.resize(n);
            for (size_t i = 0; i < n; ++i) {
                std::int16_t s = static_cast<std::int16_t>(detail::read_u16(body + 2 * i));
                wav.samples[i] = static_cast<double>(s) / 32768.0;
            }
            got_data = true;
        }
        pos += 8 + chunk_size + (chunk_size & 1);
    }
    if (!got_data) throw DataError(path + ": no data chunk");
    return wav;
}

/// 16-bit PCM mono writer (test fixtures and small tools).
inline void write_wav(const std::string& path, const std::vector<double>& samples, int sample_rate) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open wav file for writing: " + path);
    auto put_u32 = [&](std::uint32_t v) {
        char b[4] = {static_cast<char>(v), static_cast<char>(v >> 8), static_cast<char>(v >> 16),
                     static_cast<char>(v >> 24)};
        out.write(b, 4);
    };
    auto put_u16 = [&](std::uint16_t v) {
        char b[2] = {static_cast<char>(v), static_cast<char>(v >> 8)};
        out.write(b, 2);
    };
    std::uint32_t data_bytes = static_cast<std::uint32_t>(samples.size() * 2);
    out.write("RIFF", 4);
    put_u32(36 + data_bytes);
    out.write("WAVE", 4);
    out.write("fmt ", 4);
    put_u32(16);
    put_u16(1);  // PCM
    put_u16(1);  // mono
    put_u32(static_cast<std::uint32_t>(sample_rate));
    put_u32(static_cast<std::uint32_t>(sample_rate * 2));
    put_u16(2);
    put_u16(16);
    out.write("data", 4);
    put_u32(data_bytes);
    for (double v : samples) {
        long q = std::lround(v * 32768.0);
        q = std::max(-32768L, std::min(32767L, q));
        put_u16(static_cast<std::uint16_t>(static_cast<std::int16_t>(q)));
    }
}

}  // namespace polygraph
