#include "convert.hpp"

#include <algorithm>
#include <map>

#include "matprobe/error.hpp"
#include "matprobe/fileio.hpp"
#include "tiff_io.hpp"

namespace matprobe::tools {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

bool is_png(const fs::path& p) { return lower(p.extension().string()) == ".png"; }
bool is_tiff(const fs::path& p) {
    const auto e = lower(p.extension().string());
    return e == ".tif" || e == ".tiff";
}

Image read_any(const fs::path& p) { return is_png(p) ? dataio::read_png(p) : tiff_to_image(read_tiff(p)); }

std::map<std::string, taxonomy::NodeId> load_mapping(const fs::path& path, const taxonomy::Taxonomy& t) {
    json doc;
    try {
        doc = json::parse(read_file(path));
    } catch (const json::exception& e) {
        throw DataError(path.string() + ": " + e.what());
    }
    const json& labels = doc.contains("labels") ? doc["labels"] : doc;
    if (!labels.is_object()) throw DataError(path.string() + ": mapping must be an object of folder -> leaf");
    std::map<std::string, taxonomy::NodeId> out;
    for (const auto& [folder, target] : labels.items()) {
        if (!target.is_string()) throw DataError("mapping for '" + folder + "' must be a string");
        const auto id = t.resolve(target.get<std::string>());
        if (!id) throw DataError("mapping for '" + folder + "': unknown taxonomy node '" + target.get<std::string>() + "'");
        if (!t.is_leaf(*id)) throw DataError("mapping for '" + folder + "': '" + *id + "' is not a leaf");
        out[folder] = *id;
    }
    return out;
}

std::optional<renderer::DepthMap> find_depth(const fs::path& depth_root, const fs::path& rel, double scale) {
    const fs::path stem = depth_root / rel.parent_path() / rel.stem();
    for (const char* ext : {".dpth", ".tif", ".tiff"}) {
        fs::path p = stem;
        p += ext;
        if (!fs::exists(p)) continue;
        return std::string(ext) == ".dpth" ? dataio::read_depth_raster(p) : tiff_to_depth(read_tiff(p), scale);
    }
    return std::nullopt;
}

}  // namespace

dataio::DatasetManifest convert_folder_tree(const ConvertOptions& opts) {
    if (!fs::is_directory(opts.root)) throw DataError(opts.root.string() + " is not a directory");
    const auto tax = taxonomy::Taxonomy::load(opts.taxonomy);
    const auto mapping = load_mapping(opts.mapping, tax);

    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(opts.root)) {
        if (e.is_regular_file() && (is_png(e.path()) || is_tiff(e.path()))) {
            files.push_back(e.path().lexically_relative(opts.root));
        }
    }
    std::sort(files.begin(), files.end());

    dataio::DatasetManifest m;
    m.root = fs::absolute(opts.out);
    m.taxonomy_hash = tax.hash();
    for (const auto& rel : files) {
        const std::string folder = rel.begin()->string();
        if (rel.parent_path().empty()) throw DataError(rel.string() + " is not inside a class folder");
        const auto it = mapping.find(folder);
        if (it == mapping.end()) {
            if (opts.skip_unmapped) continue;
            throw DataError("class folder '" + folder + "' has no mapping");
        }
        fs::path id_path = rel;
        id_path.replace_extension();
        std::string id = id_path.generic_string();
        std::replace(id.begin(), id.end(), '/', '_');

        dataio::SampleRecord r;
        r.id = id;
        r.label = it->second;
        r.appearance = m.root / "images" / (id + ".png");
        const Image img = read_any(opts.root / rel);
        dataio::write_png(r.appearance, img, 16);
        if (opts.depth_root) {
            if (auto d = find_depth(*opts.depth_root, rel, opts.depth_scale)) {
                if (d->width != img.width || d->height != img.height) {
                    throw DataError("depth for '" + rel.string() + "' does not match the image size");
                }
                r.depth = m.root / "depth" / (id + ".dpth");
                dataio::write_depth_raster(*r.depth, *d);
            }
        }
        r.metadata["source"] = rel.generic_string();
        m.records.push_back(std::move(r));
    }
    if (m.records.empty()) throw DataError("no images found under " + opts.root.string());
    dataio::assign_splits(m, opts.seed, opts.train, opts.val);
    m.validate(&tax);
    write_file_atomic(m.root / "taxonomy.json", tax.to_json().dump(2) + "\n");
    dataio::save_manifest(m.root / "manifest.json", m);
    return m;
}

}  // namespace matprobe::tools
