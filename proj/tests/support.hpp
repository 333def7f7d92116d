#pragma once

#include <filesystem>
#include <string>

namespace matprobe::testing {

inline std::filesystem::path asset(const std::string& name) {
    return std::filesystem::path(MATPROBE_ASSET_DIR) / name;
}

}  // namespace matprobe::testing
