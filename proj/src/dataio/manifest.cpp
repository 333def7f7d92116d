#include <algorithm>
#include <set>
#include <string>

#include "matprobe/dataio.hpp"
#include "matprobe/error.hpp"
#include "matprobe/fileio.hpp"
#include "matprobe/rng.hpp"

namespace matprobe::dataio {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kManifestVersion = 1;

bool is_split_name(const std::string& s) {
    return std::find(std::begin(kSplitNames), std::end(kSplitNames), s) != std::end(kSplitNames);
}

fs::path resolve(const fs::path& root, const std::string& p) {
    fs::path path(p);
    return path.is_absolute() ? path : (root / path).lexically_normal();
}

std::string relative_to(const fs::path& root, const fs::path& p) {
    if (root.empty()) return p.generic_string();
    const fs::path rel = p.lexically_relative(root);
    if (rel.empty() || *rel.begin() == "..") return p.generic_string();
    return rel.generic_string();
}

std::string get_string(const json& j, const char* key, const std::string& where) {
    if (!j.contains(key) || !j[key].is_string()) throw DataError(where + ": missing string field '" + key + "'");
    return j[key].get<std::string>();
}

}  // namespace

const SampleRecord& DatasetManifest::record(std::string_view id) const {
    for (const auto& r : records) {
        if (r.id == id) return r;
    }
    throw DataError("unknown sample id '" + std::string(id) + "'");
}

bool DatasetManifest::contains(std::string_view id) const {
    return std::any_of(records.begin(), records.end(), [&](const SampleRecord& r) { return r.id == id; });
}

std::vector<const SampleRecord*> DatasetManifest::split(const std::string& name) const {
    if (!is_split_name(name)) throw UsageError("unknown split '" + name + "' (expected train, val, test or ood)");
    std::vector<const SampleRecord*> out;
    const auto it = splits.find(name);
    if (it == splits.end()) return out;
    for (const auto& id : it->second) out.push_back(&record(id));
    return out;
}

void DatasetManifest::validate(const Taxonomy* t) const {
    std::set<std::string> ids;
    for (const auto& r : records) {
        if (r.id.empty()) throw DataError("manifest record with an empty id");
        if (!ids.insert(r.id).second) throw DataError("duplicate sample id '" + r.id + "'");
        if (r.appearance.empty()) throw DataError("sample '" + r.id + "' has no appearance path");
        if (r.label.empty()) throw DataError("sample '" + r.id + "' has no label");
        if (t) {
            if (!t->contains(r.label)) {
                throw DataError("sample '" + r.id + "' label '" + r.label + "' is not in the taxonomy");
            }
            if (!t->is_leaf(r.label)) {
                throw DataError("sample '" + r.id + "' label '" + r.label + "' is not a leaf material");
            }
        }
    }
    std::map<std::string, std::string> owner;  // id -> train/val/test split holding it
    for (const auto& [name, members] : splits) {
        if (!is_split_name(name)) throw DataError("unknown split '" + name + "'");
        std::set<std::string> seen;
        for (const auto& id : members) {
            if (!ids.count(id)) throw DataError("split '" + name + "' names unknown sample '" + id + "'");
            if (!seen.insert(id).second) throw DataError("split '" + name + "' lists '" + id + "' twice");
            if (name == "ood") continue;
            const auto [it, fresh] = owner.emplace(id, name);
            if (!fresh) throw DataError("sample '" + id + "' is in both '" + it->second + "' and '" + name + "'");
        }
    }
    if (t && !taxonomy_hash.empty() && taxonomy_hash != t->hash()) {
        throw DataError("manifest was built for taxonomy " + taxonomy_hash + " but the active taxonomy is " +
                        t->hash());
    }
}

json DatasetManifest::to_json() const {
    json recs = json::array();
    for (const auto& r : records) {
        json e{{"id", r.id}, {"appearance", relative_to(root, r.appearance)}, {"label", r.label}};
        if (r.depth) e["depth"] = relative_to(root, *r.depth);
        if (r.context) e["context"] = relative_to(root, *r.context);
        if (!r.metadata.empty()) e["metadata"] = r.metadata;
        recs.push_back(std::move(e));
    }
    json sp = json::object();
    for (const auto& [name, members] : splits) sp[name] = members;
    json j{{"version", kManifestVersion}, {"records", recs}, {"splits", sp}};
    if (!taxonomy_hash.empty()) j["taxonomy_hash"] = taxonomy_hash;
    return j;
}

DatasetManifest DatasetManifest::from_json(const json& j, const fs::path& root) {
    if (!j.is_object()) throw DataError("manifest must be a JSON object");
    if (j.contains("version") && j["version"] != kManifestVersion) {
        throw DataError("unsupported manifest version " + j["version"].dump());
    }
    DatasetManifest m;
    m.root = root;
    if (j.contains("taxonomy_hash")) m.taxonomy_hash = j["taxonomy_hash"].get<std::string>();
    if (!j.contains("records") || !j["records"].is_array()) throw DataError("manifest has no 'records' array");
    for (std::size_t i = 0; i < j["records"].size(); ++i) {
        const json& e = j["records"][i];
        const std::string where = "manifest record " + std::to_string(i);
        if (!e.is_object()) throw DataError(where + " is not an object");
        SampleRecord r;
        r.id = get_string(e, "id", where);
        r.appearance = resolve(root, get_string(e, "appearance", where));
        if (e.contains("depth") && !e["depth"].is_null()) r.depth = resolve(root, get_string(e, "depth", where));
        if (e.contains("context") && !e["context"].is_null()) {
            r.context = resolve(root, get_string(e, "context", where));
        }
        r.label = get_string(e, "label", where);
        if (e.contains("metadata")) {
            if (!e["metadata"].is_object()) throw DataError(where + ": metadata must be an object");
            r.metadata = e["metadata"];
        }
        m.records.push_back(std::move(r));
    }
    if (j.contains("splits")) {
        if (!j["splits"].is_object()) throw DataError("manifest 'splits' must be an object");
        for (const auto& [name, members] : j["splits"].items()) {
            if (!members.is_array()) throw DataError("split '" + name + "' must be an array of ids");
            m.splits[name] = members.get<std::vector<std::string>>();
        }
    }
    m.validate();
    return m;
}

DatasetManifest load_manifest(const fs::path& path, const Taxonomy* t) {
    json j;
    try {
        j = json::parse(read_file(path));
    } catch (const json::exception& e) {
        throw DataError(path.string() + ": " + e.what());
    }
    DatasetManifest m;
    try {
        m = DatasetManifest::from_json(j, fs::absolute(path).parent_path());
    } catch (const json::exception& e) {
        throw DataError(path.string() + ": " + e.what());
    }
    m.validate(t);
    return m;
}

void save_manifest(const fs::path& path, const DatasetManifest& m) {
    DatasetManifest copy = m;
    copy.root = fs::absolute(path).parent_path();
    write_file_atomic(path, copy.to_json().dump(2) + "\n");
}

void assign_splits(DatasetManifest& m, std::uint64_t seed, double train, double val) {
    if (!(train > 0.0) || !(val >= 0.0) || train + val > 1.0) {
        throw UsageError("split fractions must satisfy train > 0, val >= 0, train + val <= 1");
    }
    std::map<NodeId, std::vector<std::string>> by_label;
    for (const auto& r : m.records) by_label[r.label].push_back(r.id);
    std::vector<std::string> tr, va, te;
    for (auto& [label, ids] : by_label) {
        // Fisher-Yates with a per-label stream so adding a class leaves the others untouched.
        rng::Stream s(rng::derive(seed, fnv1a(label)));
        for (std::size_t i = ids.size(); i > 1; --i) std::swap(ids[i - 1], ids[s.below(i)]);
        const auto n = static_cast<double>(ids.size());
        auto n_train = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(train * n)));
        auto n_val = static_cast<std::size_t>(std::llround(val * n));
        n_train = std::min(n_train, ids.size());
        n_val = std::min(n_val, ids.size() - n_train);
        for (std::size_t i = 0; i < ids.size(); ++i) {
            (i < n_train ? tr : i < n_train + n_val ? va : te).push_back(ids[i]);
        }
    }
    m.splits["train"] = std::move(tr);
    m.splits["val"] = std::move(va);
    m.splits["test"] = std::move(te);
}

renderer::CameraIntrinsics record_intrinsics(const SampleRecord& r, std::size_t width, std::size_t height) {
    if (r.metadata.contains("intrinsics")) {
        json kj = r.metadata["intrinsics"];
        if (!kj.is_object()) throw DataError("sample '" + r.id + "': intrinsics must be an object");
        if (!kj.contains("width")) kj["width"] = width;
        if (!kj.contains("height")) kj["height"] = height;
        renderer::CameraIntrinsics k;
        try {
            k = renderer::CameraIntrinsics::from_json(kj);
        } catch (const json::exception& e) {
            throw DataError("sample '" + r.id + "' intrinsics: " + e.what());
        }
        if (k.width != width || k.height != height) {
            throw DataError("sample '" + r.id + "' intrinsics are for " + std::to_string(k.width) + "x" +
                            std::to_string(k.height) + " but the image is " + std::to_string(width) + "x" +
                            std::to_string(height));
        }
        return k;
    }
    double fov = 60.0;
    if (r.metadata.contains("field_of_view")) fov = r.metadata["field_of_view"].get<double>();
    return renderer::CameraIntrinsics::from_fov(width, height, fov);
}

renderer::Sample load_sample(const SampleRecord& r) {
    renderer::Sample s;
    s.appearance = read_png(r.appearance);
    if (!r.depth) throw DataError("sample '" + r.id + "' has no depth raster");
    s.depth = read_depth_raster(*r.depth);
    if (s.depth.width != s.appearance.width || s.depth.height != s.appearance.height) {
        throw DataError("sample '" + r.id + "': depth is " + std::to_string(s.depth.width) + "x" +
                        std::to_string(s.depth.height) + " but appearance is " +
                        std::to_string(s.appearance.width) + "x" + std::to_string(s.appearance.height));
    }
    s.intrinsics = record_intrinsics(r, s.appearance.width, s.appearance.height);
    return s;
}

}  // namespace matprobe::dataio
