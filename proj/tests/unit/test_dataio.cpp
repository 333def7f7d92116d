#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <functional>
#include <limits>
#include <map>

#include "matprobe/dataio.hpp"
#include "matprobe/error.hpp"
#include "matprobe/fileio.hpp"
#include "matprobe/rng.hpp"

using namespace matprobe;
using namespace matprobe::dataio;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path scratch(const std::string& name) {
    const auto p = fs::temp_directory_path() / ("matprobe_dataio_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string error_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const std::exception& e) {
        return e.what();
    }
    return {};
}

double distance(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(s);
}

// Two-level taxonomy with three leaves separated by frequency alone.
SyntheticSpec three_leaf_spec(std::size_t per_leaf, std::uint64_t seed) {
    SyntheticSpec s;
    s.taxonomy = json::parse(R"({
      "level_names": ["kind", "material"],
      "nodes": [
        {"id": "any", "name": "Any", "level": "kind", "parent": null},
        {"id": "low", "name": "Low", "level": "material", "parent": "any"},
        {"id": "mid", "name": "Mid", "level": "material", "parent": "any"},
        {"id": "high", "name": "High", "level": "material", "parent": "any"}
      ]})");
    TextureFamily f;
    f.orientation = {0.0, 20.0};
    f.frequency = {0.05, 0.07};
    s.families["low"] = f;
    f.frequency = {0.11, 0.14};
    s.families["mid"] = f;
    f.frequency = {0.22, 0.28};
    s.families["high"] = f;
    s.image_size = 64;
    s.per_leaf = per_leaf;
    s.seed = seed;
    return s;
}

const Taxonomy& small_taxonomy() {
    static const Taxonomy t = Taxonomy::from_json(three_leaf_spec(1, 0).taxonomy);
    return t;
}

}  // namespace

TEST_CASE("sRGB transfer") {
    CHECK(srgb_to_linear(0.0) == 0.0);
    CHECK(srgb_to_linear(1.0) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(srgb_to_linear(0.5) == doctest::Approx(0.2140411).epsilon(1e-6));
    for (double v = 0.0; v <= 1.0; v += 0.01) CHECK(srgb_to_linear(linear_to_srgb(v)) == doctest::Approx(v).epsilon(1e-12));
}

TEST_CASE("PNG round trip preserves 16-bit codes") {
    Image img(37, 23, 3);
    for (std::size_t i = 0; i < img.data.size(); ++i) img.data[i] = rng::uniform(3, i);
    const std::string first = encode_png(img, 16);
    const Image back = decode_png(first);
    REQUIRE(back.width == 37);
    REQUIRE(back.height == 23);
    REQUIRE(back.channels == 3);
    for (std::size_t i = 0; i < img.data.size(); ++i) REQUIRE(back.data[i] == doctest::Approx(img.data[i]).epsilon(1e-4));
    CHECK(encode_png(back, 16) == first);

    Image gray(8, 8, 1, 0.25);
    const Image g8 = decode_png(encode_png(gray, 8));
    CHECK(g8.channels == 1);
    CHECK(g8.at(3, 3) == doctest::Approx(0.25).epsilon(5e-3));
}

TEST_CASE("PNG errors") {
    CHECK_THROWS_AS((void)decode_png("not a png at all"), DataError);
    std::string bytes = encode_png(Image(16, 16, 1, 0.5));
    bytes.resize(bytes.size() / 2);
    CHECK_THROWS_AS((void)decode_png(bytes), DataError);
    CHECK_THROWS_AS((void)encode_png(Image(4, 4, 2)), UsageError);
    CHECK_THROWS_AS((void)read_png(scratch("png") / "missing.png"), DataError);
}

TEST_CASE("depth raster round trip is bitwise") {
    renderer::DepthMap d(31, 17);
    for (std::size_t i = 0; i < d.depth.size(); ++i) d.depth[i] = static_cast<float>(0.1 + 10.0 * rng::uniform(8, i));
    d.depth[5] = std::numeric_limits<float>::quiet_NaN();
    d.depth[6] = std::numeric_limits<float>::denorm_min();
    const auto path = scratch("depth") / "d.dpth";
    write_depth_raster(path, d);
    const auto back = read_depth_raster(path);
    REQUIRE(back.width == d.width);
    REQUIRE(back.height == d.height);
    CHECK(std::memcmp(back.depth.data(), d.depth.data(), d.depth.size() * sizeof(float)) == 0);
}

TEST_CASE("truncated depth raster names both byte counts") {
    const std::string bytes = encode_depth_raster(renderer::DepthMap(4, 3, 1.0f));
    REQUIRE(bytes.size() == 13 + 48);
    const std::string msg = error_of([&] { (void)decode_depth_raster(bytes.substr(0, bytes.size() - 5)); });
    CHECK(msg.find("61") != std::string::npos);
    CHECK(msg.find("56") != std::string::npos);
    std::string bad = bytes;
    bad[0] = 'X';
    CHECK(error_of([&] { (void)decode_depth_raster(bad); }).find("magic") != std::string::npos);
    CHECK_THROWS_AS((void)decode_depth_raster("DP"), DataError);
}

TEST_CASE("grayscale uses BT.709 weights and is idempotent") {
    Image rgb(1, 1, 3);
    rgb.at(0, 0, 0) = 1.0;
    CHECK(to_grayscale(rgb).at(0, 0, 1) == doctest::Approx(0.2126));
    rgb = Image(1, 1, 3);
    rgb.at(0, 0, 1) = 1.0;
    CHECK(to_grayscale(rgb, 1).at(0, 0) == doctest::Approx(0.7152));
    Image gray(3, 3, 3, 0.4);
    CHECK(to_grayscale(to_grayscale(gray)) == to_grayscale(gray));
}

TEST_CASE("empty manifest is a valid dataset with an empty cache") {
    const auto dir = scratch("empty");
    write_file_atomic(dir / "manifest.json", R"({"records": []})");
    const auto m = load_manifest(dir / "manifest.json");
    CHECK(m.records.empty());
    CHECK(m.split("train").empty());
    const auto report = build_feature_cache(m, TrivialEncoder{});
    CHECK(report.cache.ids.empty());
    CHECK(report.cache.dim == TrivialEncoder::kDim);
    save_feature_cache(dir / "features.bin", report.cache);
    const auto back = load_feature_cache(dir / "features.bin", TrivialEncoder::kDim);
    CHECK(back.ids.empty());
    CHECK(back.encoder == "trivial");
}

TEST_CASE("manifest validation") {
    const json base = json::parse(R"({
      "records": [
        {"id": "a", "appearance": "a.png", "label": "low"},
        {"id": "b", "appearance": "b.png", "label": "mid", "depth": "b.dpth"},
        {"id": "c", "appearance": "/abs/c.png", "label": "high", "metadata": {"field_of_view": 50}}
      ],
      "splits": {"train": ["a", "b"], "test": ["c"], "ood": ["a"]}
    })");
    const auto m = DatasetManifest::from_json(base, "/data/set");
    CHECK(m.record("a").appearance == fs::path("/data/set/a.png"));
    CHECK(m.record("c").appearance == fs::path("/abs/c.png"));
    CHECK(m.record("b").depth.value() == fs::path("/data/set/b.dpth"));
    CHECK(m.split("train").size() == 2);
    CHECK(m.split("ood").front()->id == "a");
    CHECK_NOTHROW(m.validate(&small_taxonomy()));

    // Serialisation keeps paths relative to the root.
    const json out = m.to_json();
    CHECK(out["records"][0]["appearance"] == "a.png");
    CHECK(out["records"][2]["appearance"] == "/abs/c.png");
    const auto again = DatasetManifest::from_json(out, "/data/set");
    CHECK(again.to_json() == out);

    SUBCASE("unknown label") {
        json j = base;
        j["records"][0]["label"] = "granite";
        const auto bad = DatasetManifest::from_json(j, "/x");
        const std::string msg = error_of([&] { bad.validate(&small_taxonomy()); });
        CHECK(msg.find("granite") != std::string::npos);
    }
    SUBCASE("interior label") {
        json j = base;
        j["records"][0]["label"] = "any";
        CHECK_THROWS_AS(DatasetManifest::from_json(j, "/x").validate(&small_taxonomy()), DataError);
    }
    SUBCASE("overlapping splits") {
        json j = base;
        j["splits"]["val"] = {"a"};
        CHECK_THROWS_AS((void)DatasetManifest::from_json(j, "/x"), DataError);
    }
    SUBCASE("unknown split member") {
        json j = base;
        j["splits"]["test"] = {"zzz"};
        CHECK_THROWS_AS((void)DatasetManifest::from_json(j, "/x"), DataError);
    }
    SUBCASE("duplicate id") {
        json j = base;
        j["records"][1]["id"] = "a";
        CHECK_THROWS_AS((void)DatasetManifest::from_json(j, "/x"), DataError);
    }
    SUBCASE("taxonomy hash mismatch") {
        json j = base;
        j["taxonomy_hash"] = "deadbeef";
        CHECK_THROWS_AS(DatasetManifest::from_json(j, "/x").validate(&small_taxonomy()), DataError);
    }
    SUBCASE("missing file") {
        CHECK_THROWS_AS((void)load_manifest(scratch("nomanifest") / "manifest.json"), DataError);
    }
}

TEST_CASE("stratified split assignment") {
    DatasetManifest m;
    const char* labels[] = {"low", "mid", "high"};
    const std::size_t counts[] = {50, 10, 1};
    for (std::size_t l = 0; l < 3; ++l) {
        for (std::size_t i = 0; i < counts[l]; ++i) {
            m.records.push_back({std::string(labels[l]) + std::to_string(i), "x.png", std::nullopt, std::nullopt,
                                 labels[l], json::object()});
        }
    }
    assign_splits(m, 11);
    CHECK_NOTHROW(m.validate(&small_taxonomy()));
    std::map<std::string, std::map<std::string, int>> per;
    std::size_t total = 0;
    for (const char* s : {"train", "val", "test"}) {
        for (const auto* r : m.split(s)) ++per[s][r->label];
        total += m.split(s).size();
    }
    CHECK(total == m.records.size());
    CHECK(per["train"]["low"] == 40);
    CHECK(per["val"]["low"] == 5);
    CHECK(per["test"]["low"] == 5);
    CHECK(per["train"]["mid"] == 8);
    CHECK(per["train"]["high"] == 1);

    auto again = m;
    assign_splits(again, 11);
    CHECK(again.splits == m.splits);
    assign_splits(again, 12);
    CHECK(again.splits != m.splits);
}

TEST_CASE("sample loading checks depth pairing") {
    const auto dir = scratch("sample");
    write_png(dir / "a.png", Image(40, 30, 3, 0.5));
    write_depth_raster(dir / "a.dpth", renderer::DepthMap(40, 30, 2.0f));
    write_depth_raster(dir / "bad.dpth", renderer::DepthMap(40, 31, 2.0f));
    SampleRecord r{"a", dir / "a.png", dir / "a.dpth", std::nullopt, "low", json::object()};
    const auto s = load_sample(r);
    CHECK(s.intrinsics.field_of_view() == doctest::Approx(60.0));
    CHECK(s.depth.at(3, 3) == 2.0f);
    r.metadata = {{"intrinsics", {{"focal_length", 50.0}}}};
    CHECK(load_sample(r).intrinsics.focal_length == 50.0);
    r.depth = dir / "bad.dpth";
    const std::string msg = error_of([&] { (void)load_sample(r); });
    CHECK(msg.find("40x31") != std::string::npos);
    CHECK(msg.find("40x30") != std::string::npos);
    r.depth.reset();
    CHECK_THROWS_AS((void)load_sample(r), DataError);
}

TEST_CASE("trivial encoder basics") {
    const TrivialEncoder enc;
    const auto f = enc.encode(Image(64, 48, 3, 0.3));
    REQUIRE(f.size() == 1024);
    // Gradient energies: [32, 48) for the 4x4 grid, [176, 240) for 8x8.
    for (std::size_t i = 32; i < 48; ++i) CHECK(f[i] == 0.0);
    for (std::size_t i = 176; i < 240; ++i) CHECK(f[i] == 0.0);
    for (std::size_t i = 704; i < 1024; ++i) CHECK(f[i] == 0.0);
    CHECK_THROWS_AS((void)enc.encode(Image(31, 64, 1, 0.5)), DataError);

    Image tex(96, 80, 1);
    for (std::size_t y = 0; y < 80; ++y) {
        for (std::size_t x = 0; x < 96; ++x) tex.at(x, y) = 0.2 + 0.1 * std::sin(0.4 * x + 0.1 * y) + 0.05 * rng::uniform(2, y * 96 + x);
    }
    Image bright = tex;
    for (double& v : bright.data) v *= 2.0;
    const auto a = enc.encode(tex);
    CHECK(a == enc.encode(bright));
    CHECK(a == enc.encode(tex));
    for (std::size_t i = 32; i < 48; ++i) CHECK(a[i] > 0.0);
}

TEST_CASE("trivial encoder separates texture families") {
    const auto spec = SyntheticSpec::standard();
    const auto& fa = spec.families.at("medium_0");
    const auto& fb = spec.families.at("medium_60");
    const TrivialEncoder enc;
    std::vector<std::vector<double>> a, b;
    for (std::uint64_t i = 0; i < 20; ++i) {
        a.push_back(enc.encode(synth_texture(fa, 96, 96, rng::derive(0, 0, i))));
        b.push_back(enc.encode(synth_texture(fb, 96, 96, rng::derive(0, 1, i))));
    }
    double intra = 0.0, inter = 0.0;
    std::size_t n_intra = 0, n_inter = 0;
    for (std::size_t i = 0; i < 20; ++i) {
        for (std::size_t j = 0; j < 20; ++j) {
            inter += distance(a[i], b[j]);
            ++n_inter;
            if (i < j) {
                intra += distance(a[i], a[j]) + distance(b[i], b[j]);
                n_intra += 2;
            }
        }
    }
    intra /= static_cast<double>(n_intra);
    inter /= static_cast<double>(n_inter);
    MESSAGE("intra " << intra << " inter " << inter);
    CHECK(inter > intra);
}

TEST_CASE("synthetic generation") {
    const auto dir = scratch("synth3");
    const auto ds = generate_synthetic(three_leaf_spec(20, 4), dir);
    CHECK(ds.manifest.records.size() == 60);
    std::map<std::string, int> per;
    for (const auto& r : ds.manifest.records) ++per[r.label];
    CHECK(per == std::map<std::string, int>{{"high", 20}, {"low", 20}, {"mid", 20}});
    CHECK(fs::exists(dir / "manifest.json"));
    CHECK(fs::exists(dir / "taxonomy.json"));

    const auto loaded_tax = Taxonomy::load(dir / "taxonomy.json");
    const auto m = load_manifest(dir / "manifest.json", &loaded_tax);
    CHECK(m.records.size() == 60);
    CHECK(m.split("train").size() == 48);
    const auto s = load_sample(m.records.front());
    CHECK(s.appearance.width == 64);
    CHECK(s.depth.at(10, 10) == 0.5f);
    CHECK(s.intrinsics.field_of_view() == doctest::Approx(40.0));

    const auto dir2 = scratch("synth3b");
    (void)generate_synthetic(three_leaf_spec(20, 4), dir2);
    for (const auto& r : ds.manifest.records) {
        const auto name = r.appearance.filename();
        REQUIRE(read_file(dir / "images" / name) == read_file(dir2 / "images" / name));
    }
    const auto dir3 = scratch("synth3c");
    (void)generate_synthetic(three_leaf_spec(20, 5), dir3);
    CHECK(read_file(dir / "images" / "low_0000.png") != read_file(dir3 / "images" / "low_0000.png"));

    auto overlapping = three_leaf_spec(2, 0);
    overlapping.families["mid"].frequency = {0.06, 0.12};
    CHECK_THROWS_AS(overlapping.validate(), UsageError);
    CHECK(SyntheticSpec::from_json(three_leaf_spec(3, 9).to_json()).to_json() == three_leaf_spec(3, 9).to_json());
}

TEST_CASE("feature caches") {
    const auto dir = scratch("cache");
    const auto ds = generate_synthetic(three_leaf_spec(6, 1), dir);
    const TrivialEncoder enc;
    CacheBuildOptions serial;
    serial.threads = 1;
    CacheBuildOptions parallel;
    parallel.threads = 4;
    const auto a = build_feature_cache(ds.manifest, enc, serial).cache;
    const auto b = build_feature_cache(ds.manifest, enc, parallel).cache;
    REQUIRE(a.ids.size() == 18);
    CHECK(a.features == b.features);
    save_feature_cache(dir / "f1.bin", a);
    save_feature_cache(dir / "f2.bin", b);
    CHECK(read_file(dir / "f1.bin") == read_file(dir / "f2.bin"));

    const auto loaded = load_feature_cache(dir / "f1.bin", 1024);
    CHECK(loaded.ids == a.ids);
    CHECK(loaded.features == a.features);
    const auto id = ds.manifest.records[3].id;
    CHECK(std::equal(loaded.at(id).begin(), loaded.at(id).end(), a.row(3).begin()));

    const std::string msg = error_of([&] { (void)load_feature_cache(dir / "f1.bin", 512); });
    CHECK(msg.find("1024") != std::string::npos);
    CHECK(msg.find("512") != std::string::npos);

    // Reordered external cache is brought back to manifest order.
    FeatureCache ext;
    ext.encoder = "external";
    ext.dim = 2;
    std::vector<double> vals;
    for (auto it = ds.manifest.records.rbegin(); it != ds.manifest.records.rend(); ++it) {
        ext.ids.push_back(it->id);
        vals.push_back(static_cast<double>(ext.ids.size()));
        vals.push_back(0.0);
    }
    ext.features = numerics::Tensor({ext.ids.size(), 2}, vals);
    const auto imported = import_feature_cache(ds.manifest, ext);
    CHECK(imported.ids.front() == ds.manifest.records.front().id);
    CHECK(imported.row(0)[0] == 18.0);
    ext.ids.pop_back();
    ext.features = numerics::Tensor({ext.ids.size(), 2}, std::vector<double>(vals.begin(), vals.end() - 2));
    CHECK_THROWS_AS((void)import_feature_cache(ds.manifest, ext), DataError);

    // A broken record aborts by default, or is reported and skipped.
    auto broken = ds.manifest;
    broken.records[2].appearance = dir / "missing.png";
    const std::string abort_msg = error_of([&] { (void)build_feature_cache(broken, enc); });
    CHECK(abort_msg.find(broken.records[2].id) != std::string::npos);
    CacheBuildOptions lenient;
    lenient.abort_on_error = false;
    const auto report = build_feature_cache(broken, enc, lenient);
    REQUIRE(report.failures.size() == 1);
    CHECK(report.failures[0].first == broken.records[2].id);
    CHECK(report.cache.ids.size() == 17);
}

TEST_CASE("synthetic families are separable by a centroid classifier") {
    auto spec = SyntheticSpec::standard();
    spec.per_leaf = 40;
    const auto dir = scratch("centroid");
    const auto ds = generate_synthetic(spec, dir);
    const auto cache = build_feature_cache(ds.manifest, TrivialEncoder{}).cache;
    std::map<std::string, std::vector<double>> centroid;
    std::map<std::string, int> count;
    for (const auto* r : ds.manifest.split("train")) {
        auto& c = centroid[r->label];
        c.resize(cache.dim, 0.0);
        const auto f = cache.at(r->id);
        for (std::size_t i = 0; i < cache.dim; ++i) c[i] += f[i];
        ++count[r->label];
    }
    for (auto& [label, c] : centroid) {
        for (double& v : c) v /= count[label];
    }
    std::size_t correct = 0, total = 0;
    for (const auto& r : ds.manifest.records) {
        const auto f = cache.at(r.id);
        std::string best;
        double best_d = std::numeric_limits<double>::infinity();
        for (const auto& [label, c] : centroid) {
            const double d = distance(f, c);
            if (d < best_d) {
                best_d = d;
                best = label;
            }
        }
        correct += best == r.label;
        ++total;
    }
    const double acc = static_cast<double>(correct) / static_cast<double>(total);
    MESSAGE("centroid accuracy " << acc);
    CHECK(acc >= 0.99);
}
