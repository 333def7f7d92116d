#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>

#include "matprobe/dataio.hpp"

namespace matprobe::tools {

/*
 * Folder-tree import. Images live under <root>/<class folder>/..., and the
 * mapping file names the taxonomy leaf for each class folder:
 *   {"labels": {"<folder>": "<leaf id or name>", ...}}
 * A bare object of folder -> leaf is accepted too. PNG and 8/16-bit TIFF
 * are read; an optional depth tree mirrors the image tree with .dpth or
 * float TIFF files of the same stem.
 */
struct ConvertOptions {
    std::filesystem::path root;
    std::filesystem::path mapping;
    std::filesystem::path taxonomy;
    std::filesystem::path out;
    std::optional<std::filesystem::path> depth_root;
    double depth_scale = 1.0;  // metres per depth TIFF unit
    bool skip_unmapped = false;
    std::uint64_t seed = 0;
    double train = 0.8;
    double val = 0.1;
};

/// Writes out/images, out/depth, out/taxonomy.json and out/manifest.json.
dataio::DatasetManifest convert_folder_tree(const ConvertOptions& opts);

}  // namespace matprobe::tools
