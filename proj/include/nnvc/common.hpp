#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace nnvc {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Invalid model/block configuration (shape mismatch, bad address, ...).
struct ConfigError : Error {
    using Error::Error;
};

// Malformed bitstream, checkpoint or video file.
struct ParseError : Error {
    using Error::Error;
};

struct IoError : Error {
    using Error::Error;
};

inline void check(bool ok, const std::string& msg) {
    if (!ok) throw Error(msg);
}

inline void check_config(bool ok, const std::string& msg) {
    if (!ok) throw ConfigError(msg);
}

inline void check_parse(bool ok, const std::string& msg) {
    if (!ok) throw ParseError(msg);
}

// FNV-1a, used for checkpoint identity and payload checksums.
inline uint32_t fnv1a(const uint8_t* data, size_t n, uint32_t seed = 2166136261u) {
    uint32_t h = seed;
    for (size_t i = 0; i < n; ++i) {
        h ^= data[i];
        h *= 16777619u;
    }
    return h;
}

} // namespace nnvc
