#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "matprobe/numerics/tensor.hpp"

namespace matprobe::numerics {

/*
 * Tensor blob layout, all integers little-endian:
 *   "MPTB" | u32 version | u64 manifest bytes | manifest JSON | float32 payload
 * The manifest is {"header": <caller json>, "tensors": [{name, shape, offset}]}
 * with offsets in bytes from the start of the payload. Values are rounded to
 * float32 on save and widened on load.
 */
struct Blob {
    nlohmann::json header = nlohmann::json::object();
    std::vector<std::pair<std::string, Tensor>> tensors;

    [[nodiscard]] const Tensor* find(const std::string& name) const;
};

void save_blob(const std::filesystem::path& path, const Blob& blob);
[[nodiscard]] Blob load_blob(const std::filesystem::path& path);

[[nodiscard]] std::string encode_blob(const Blob& blob);
[[nodiscard]] Blob decode_blob(const std::string& bytes);

}  // namespace matprobe::numerics
