#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "mema/error.hpp"

inline std::filesystem::path test_data(const std::string& name) {
    return std::filesystem::path(MEMA_DATA_DIR) / name;
}

/// Code of the mema::Error thrown by fn, or nullopt.
template <class F>
std::optional<mema::ErrorCode> error_code_of(F&& fn) {
    try {
        fn();
    } catch (const mema::Error& e) {
        return e.code();
    }
    return std::nullopt;
}
