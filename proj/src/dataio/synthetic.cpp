#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <string>

#include "matprobe/dataio.hpp"
#include "matprobe/error.hpp"
#include "matprobe/fileio.hpp"
#include "matprobe/rng.hpp"

namespace matprobe::dataio {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json range_json(const std::pair<double, double>& r) { return json::array({r.first, r.second}); }

std::pair<double, double> range_from(const json& j, const char* key, std::pair<double, double> fallback) {
    if (!j.contains(key)) return fallback;
    const auto& v = j.at(key);
    if (!v.is_array() || v.size() != 2) throw DataError(std::string("'") + key + "' must be a [low, high] pair");
    return {v[0].get<double>(), v[1].get<double>()};
}

bool overlaps(const std::pair<double, double>& a, const std::pair<double, double>& b) {
    return a.first <= b.second && b.first <= a.second;
}

// Orientation ranges live on a circle of period 180 degrees.
bool orientations_overlap(const std::pair<double, double>& a, const std::pair<double, double>& b) {
    for (const double shift : {-180.0, 0.0, 180.0}) {
        if (overlaps(a, {b.first + shift, b.second + shift})) return true;
    }
    return false;
}

double draw(rng::Stream& s, const std::pair<double, double>& r) { return r.first + (r.second - r.first) * s.uniform(); }

}  // namespace

json TextureFamily::to_json() const {
    return {{"frequency", range_json(frequency)},
            {"orientation", range_json(orientation)},
            {"contrast", range_json(contrast)},
            {"mean", range_json(mean)},
            {"noise", noise}};
}

TextureFamily TextureFamily::from_json(const json& j) {
    if (!j.is_object()) throw DataError("texture family must be an object");
    TextureFamily f;
    f.frequency = range_from(j, "frequency", f.frequency);
    f.orientation = range_from(j, "orientation", f.orientation);
    f.contrast = range_from(j, "contrast", f.contrast);
    f.mean = range_from(j, "mean", f.mean);
    f.noise = j.value("noise", f.noise);
    return f;
}

SyntheticSpec SyntheticSpec::standard() {
    SyntheticSpec s;
    json nodes = json::array();
    nodes.push_back({{"id", "surface"}, {"name", "Surface"}, {"level", "category"}, {"parent", nullptr}});
    const std::pair<const char*, std::pair<double, double>> groups[] = {
        {"coarse", {0.05, 0.07}}, {"medium", {0.10, 0.14}}, {"fine", {0.20, 0.28}}};
    const double angles[] = {0.0, 60.0, 120.0};
    for (const auto& [group, band] : groups) {
        std::string gname = group;
        gname[0] = static_cast<char>(std::toupper(gname[0]));
        nodes.push_back({{"id", group}, {"name", gname}, {"level", "group"}, {"parent", "surface"}});
        for (const double a : angles) {
            const std::string id = std::string(group) + "_" + std::to_string(static_cast<int>(a));
            nodes.push_back({{"id", id},
                             {"name", gname + " " + std::to_string(static_cast<int>(a))},
                             {"level", "material"},
                             {"parent", group}});
            TextureFamily f;
            f.frequency = band;
            f.orientation = {a - 10.0, a + 10.0};
            f.contrast = {0.25, 0.4};
            f.mean = {0.3, 0.6};
            f.noise = 0.03;
            s.families[id] = f;
        }
    }
    s.taxonomy = {{"version", "1.0.0"}, {"level_names", {"category", "group", "material"}}, {"nodes", nodes}};
    return s;
}

void SyntheticSpec::validate() const {
    const auto t = Taxonomy::from_json(taxonomy);
    if (image_size < TrivialEncoder::kMinSize) {
        throw UsageError("synthetic image size must be at least " + std::to_string(TrivialEncoder::kMinSize));
    }
    if (per_leaf == 0) throw UsageError("synthetic spec needs at least one image per leaf");
    if (!(depth > 0.0)) throw UsageError("synthetic depth must be positive");
    if (!(field_of_view > 0.0 && field_of_view < 180.0)) throw UsageError("field of view must be in (0, 180)");
    const auto leaves = t.leaves();
    for (const auto& leaf : leaves) {
        if (!families.count(leaf)) throw UsageError("no texture family for leaf '" + leaf + "'");
    }
    for (const auto& [id, f] : families) {
        if (!t.contains(id) || !t.is_leaf(id)) throw UsageError("texture family '" + id + "' is not a taxonomy leaf");
        for (const auto& r : {f.frequency, f.orientation, f.contrast, f.mean}) {
            if (!(r.first <= r.second)) throw UsageError("texture family '" + id + "' has an inverted range");
        }
        if (!(f.frequency.first > 0.0 && f.frequency.second <= 0.5)) {
            throw UsageError("texture family '" + id + "' frequency must lie in (0, 0.5] cycles per pixel");
        }
        if (!(f.noise >= 0.0) || !(f.contrast.first >= 0.0)) {
            throw UsageError("texture family '" + id + "' has negative noise or contrast");
        }
    }
    for (auto a = families.begin(); a != families.end(); ++a) {
        for (auto b = std::next(a); b != families.end(); ++b) {
            if (overlaps(a->second.frequency, b->second.frequency) &&
                orientations_overlap(a->second.orientation, b->second.orientation)) {
                throw UsageError("texture families '" + a->first + "' and '" + b->first +
                                 "' overlap in both frequency and orientation");
            }
        }
    }
}

json SyntheticSpec::to_json() const {
    json fam = json::object();
    for (const auto& [id, f] : families) fam[id] = f.to_json();
    return {{"taxonomy", taxonomy},   {"families", fam},          {"image_size", image_size},
            {"per_leaf", per_leaf},   {"seed", seed},             {"depth", depth},
            {"field_of_view", field_of_view}};
}

SyntheticSpec SyntheticSpec::from_json(const json& j) {
    if (!j.is_object()) throw DataError("synthetic spec must be an object");
    SyntheticSpec s = j.contains("taxonomy") ? SyntheticSpec{} : standard();
    try {
        if (j.contains("taxonomy")) s.taxonomy = j.at("taxonomy");
        if (j.contains("families")) {
            s.families.clear();
            for (const auto& [id, f] : j.at("families").items()) s.families[id] = TextureFamily::from_json(f);
        }
        s.image_size = j.value("image_size", s.image_size);
        s.per_leaf = j.value("per_leaf", s.per_leaf);
        s.seed = j.value("seed", s.seed);
        s.depth = j.value("depth", s.depth);
        s.field_of_view = j.value("field_of_view", s.field_of_view);
    } catch (const json::exception& e) {
        throw DataError(std::string("synthetic spec: ") + e.what());
    }
    return s;
}

Image synth_texture(const TextureFamily& f, std::size_t width, std::size_t height, std::uint64_t seed) {
    rng::Stream s(rng::derive(seed, 0));
    const double freq = draw(s, f.frequency);
    const double theta = draw(s, f.orientation) * std::numbers::pi / 180.0;
    const double contrast = draw(s, f.contrast);
    const double mean = draw(s, f.mean);
    const double phase = 2.0 * std::numbers::pi * s.uniform();
    // A weaker grating at the same frequency, rotated 90 degrees, breaks the
    // perfect 1-D structure without moving energy to another band.
    const double cross = 0.25 * s.uniform();
    const double phase2 = 2.0 * std::numbers::pi * s.uniform();
    const double c = std::cos(theta), sn = std::sin(theta);
    const std::uint64_t noise_seed = rng::derive(seed, 1);
    Image img(width, height, 1);
    for (std::size_t y = 0; y < height; ++y) {
        for (std::size_t x = 0; x < width; ++x) {
            const double u = static_cast<double>(x) * c + static_cast<double>(y) * sn;
            const double v = -static_cast<double>(x) * sn + static_cast<double>(y) * c;
            const double g = std::sin(2.0 * std::numbers::pi * freq * u + phase) +
                             cross * std::sin(2.0 * std::numbers::pi * freq * v + phase2);
            const double val = mean * (1.0 + contrast * g / (1.0 + cross)) +
                               f.noise * rng::gaussian(noise_seed, y * width + x);
            img.at(x, y) = std::clamp(val, 0.0, 1.0);
        }
    }
    return img;
}

SyntheticDataset generate_synthetic(const SyntheticSpec& spec, const fs::path& out_dir) {
    spec.validate();
    SyntheticDataset ds{Taxonomy::from_json(spec.taxonomy), {}};
    const fs::path root = fs::absolute(out_dir);
    DatasetManifest& m = ds.manifest;
    m.root = root;
    m.taxonomy_hash = ds.taxonomy.hash();
    const auto leaves = ds.taxonomy.leaves();
    const renderer::DepthMap depth(spec.image_size, spec.image_size, static_cast<float>(spec.depth));
    const std::string depth_bytes = encode_depth_raster(depth);
    for (std::size_t li = 0; li < leaves.size(); ++li) {
        const auto& leaf = leaves[li];
        for (std::size_t k = 0; k < spec.per_leaf; ++k) {
            char num[16];
            std::snprintf(num, sizeof num, "%04zu", k);
            SampleRecord r;
            r.id = leaf + "_" + num;
            r.appearance = root / "images" / (r.id + ".png");
            r.depth = root / "depth" / (r.id + ".dpth");
            r.label = leaf;
            r.metadata = {{"field_of_view", spec.field_of_view}};
            const Image img = synth_texture(spec.families.at(leaf), spec.image_size, spec.image_size,
                                            rng::derive(spec.seed, li, k));
            write_png(r.appearance, img, 16);
            write_file_atomic(*r.depth, depth_bytes);
            m.records.push_back(std::move(r));
        }
    }
    assign_splits(m, spec.seed);
    m.validate(&ds.taxonomy);
    write_file_atomic(root / "taxonomy.json", spec.taxonomy.dump(2) + "\n");
    write_file_atomic(root / "synth.json", spec.to_json().dump(2) + "\n");
    save_manifest(root / "manifest.json", m);
    return ds;
}

}  // namespace matprobe::dataio
