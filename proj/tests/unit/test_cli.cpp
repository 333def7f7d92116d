#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <csignal>
#include <cstdio>
#include <filesystem>
#include <sstream>
#include <sys/wait.h>
#include <unistd.h>

#include <json.hpp>

#include "matprobe/dataio.hpp"
#include "matprobe/error.hpp"
#include "matprobe/fileio.hpp"
#include "matprobe/hiergat.hpp"
#include "support.hpp"
#include "tiff_io.hpp"

// After Eigen: <resolv.h> defines an _res macro that breaks Eigen headers.
#include <httplib.h>

using namespace matprobe;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path scratch(const std::string& name) {
    const auto p = fs::temp_directory_path() / ("matprobe_cli_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string quote(const std::string& s) {
    std::string q = "'";
    for (const char c : s) q += c == '\'' ? std::string("'\\''") : std::string(1, c);
    return q + "'";
}

struct Run {
    int code = -1;
    std::string out;
    std::string err;
};

Run run(const std::vector<std::string>& args) {
    static int counter = 0;
    const fs::path err_file = fs::temp_directory_path() / ("matprobe_cli_stderr_" + std::to_string(counter++));
    std::string cmd = quote(MATPROBE_CLI);
    for (const auto& a : args) cmd += " " + quote(a);
    cmd += " 2>" + quote(err_file.string());
    Run r;
    FILE* pipe = popen(cmd.c_str(), "r");
    REQUIRE(pipe);
    char buf[4096];
    for (std::size_t n; (n = fread(buf, 1, sizeof buf, pipe)) > 0;) r.out.append(buf, n);
    const int status = pclose(pipe);
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.err = read_file(err_file);
    fs::remove(err_file);
    return r;
}

bool contains(const std::string& s, const std::string& part) { return s.find(part) != std::string::npos; }

struct Pipeline {
    fs::path dir;
    fs::path manifest;
    fs::path features;
    fs::path config;
    fs::path model;
};

// synth -> features -> train, shared by the tests that need a checkpoint.
const Pipeline& pipeline() {
    static const Pipeline p = [] {
        Pipeline pl;
        pl.dir = scratch("pipeline");
        pl.manifest = pl.dir / "data" / "manifest.json";
        pl.features = pl.dir / "features.bin";
        pl.config = pl.dir / "config.json";
        pl.model = pl.dir / "model.ckpt";
        auto r = run({"--seed", "4", "synth", "--out", (pl.dir / "data").string(), "--per-leaf", "20", "--image-size",
                      "64"});
        REQUIRE_MESSAGE(r.code == 0, r.err);
        r = run({"features", "build", "--manifest", pl.manifest.string(), "--out", pl.features.string()});
        REQUIRE_MESSAGE(r.code == 0, r.err);
        write_file_atomic(pl.config, json{{"model", {{"hidden_dim", 64}, {"output_dim", 32}}},
                                          {"training", {{"epochs", 40}, {"learning_rate", 1e-3}, {"batch_size", 64}}}}
                                             .dump());
        r = run({"--seed", "1", "train", "--manifest", pl.manifest.string(), "--features", pl.features.string(),
                 "--config", pl.config.string(), "--out", pl.model.string(), "--quiet"});
        REQUIRE_MESSAGE(r.code == 0, r.err);
        return pl;
    }();
    return p;
}

std::string first_test_image(const Pipeline& p) {
    const auto m = dataio::load_manifest(p.manifest);
    return m.split("test").front()->appearance.string();
}

}  // namespace

TEST_CASE("taxonomy subcommands") {
    auto r = run({"taxonomy", "validate"});
    CHECK(r.code == 0);
    CHECK(contains(r.out, "57 material leaves"));
    r = run({"taxonomy", "validate", "--properties", testing::asset("properties.json").string()});
    CHECK(r.code == 0);

    const auto dir = scratch("taxonomy");
    r = run({"taxonomy", "consolidate", "--out", (dir / "c.json").string(), "--properties",
             testing::asset("properties.json").string(), "--properties-out", (dir / "p.json").string()});
    CHECK(r.code == 0);
    CHECK(contains(r.out, "37 material leaves"));
    CHECK(taxonomy::Taxonomy::load(dir / "c.json").leaves().size() == 37);
    CHECK(run({"taxonomy", "validate", "--taxonomy", (dir / "c.json").string(), "--properties",
               (dir / "p.json").string()})
              .out.find("37 material leaves") != std::string::npos);

    r = run({"taxonomy", "show"});
    CHECK(r.code == 0);
    CHECK(r.out.rfind("solid", 0) == 0);
    CHECK(contains(r.out, "material: 57"));
}

TEST_CASE("exit codes and error reporting") {
    auto r = run({"taxonomy", "validate", "--taxonomy", "/no/such/file.json"});
    CHECK(r.code == 2);
    CHECK(contains(r.err, "error: "));
    r = run({"--json-errors", "taxonomy", "validate", "--taxonomy", "/no/such/file.json"});
    CHECK(r.code == 2);
    const auto j = json::parse(r.err);
    CHECK(j["error"]["code"] == 2);
    CHECK(j["error"]["kind"] == "data");
    CHECK(run({"taxonomy"}).code == 1);
    CHECK(run({"taxonomy", "validate", "--bogus"}).code == 1);
    r = run({"--json-errors", "nosuchcommand"});
    CHECK(r.code == 1);
    CHECK(json::parse(r.err)["error"]["kind"] == "usage");
    CHECK(run({"--help"}).code == 0);
    CHECK(run({"--version"}).out.find(MATPROBE_VERSION) != std::string::npos);
}

TEST_CASE("synth is deterministic under --seed") {
    const auto a = scratch("synth_a");
    const auto b = scratch("synth_b");
    for (const auto& d : {a, b}) {
        const auto r = run({"--seed", "8", "synth", "--out", d.string(), "--per-leaf", "2", "--image-size", "32"});
        REQUIRE(r.code == 0);
        CHECK(contains(r.out, "18 samples"));
    }
    CHECK(read_file(a / "manifest.json") == read_file(b / "manifest.json"));
    const auto m = dataio::load_manifest(a / "manifest.json");
    for (const auto& rec : m.records) {
        CHECK(read_file(rec.appearance) == read_file(b / rec.appearance.lexically_relative(a)));
    }
}

TEST_CASE("train then eval") {
    const auto& p = pipeline();
    const auto report_path = p.dir / "report.json";
    const auto csv_path = p.dir / "predictions.csv";
    auto r = run({"eval", "--model", p.model.string(), "--manifest", p.manifest.string(), "--features",
                  p.features.string(), "--split", "test", "--out", report_path.string(), "--csv", csv_path.string()});
    REQUIRE_MESSAGE(r.code == 0, r.err);
    const auto report = json::parse(read_file(report_path));
    CHECK(report["flat_accuracy"].get<double>() >= 0.95);
    CHECK(contains(r.out, "flat accuracy"));
    CHECK(read_file(csv_path).rfind("id,label,prediction", 0) == 0);

    SUBCASE("encoding images matches the cache") {
        const auto direct = p.dir / "direct.json";
        r = run({"eval", "--model", p.model.string(), "--manifest", p.manifest.string(), "--split", "test", "--out",
                 direct.string()});
        REQUIRE(r.code == 0);
        CHECK(json::parse(read_file(direct)) == report);
    }
    SUBCASE("usage errors") {
        CHECK(run({"eval", "--model", p.model.string(), "--manifest", p.manifest.string(), "--features",
                   p.features.string(), "--grayscale"})
                  .code == 1);
        CHECK(run({"eval", "--model", p.model.string(), "--manifest", p.manifest.string(), "--split", "holdout"})
                  .code == 1);
    }
    SUBCASE("training is deterministic under --seed") {
        const auto again = p.dir / "again.ckpt";
        r = run({"--seed", "1", "train", "--manifest", p.manifest.string(), "--features", p.features.string(),
                 "--config", p.config.string(), "--out", again.string(), "--quiet"});
        REQUIRE(r.code == 0);
        CHECK(read_file(again) == read_file(p.model));
    }
    SUBCASE("a cache of the wrong width is a data error") {
        const auto m = dataio::load_manifest(p.manifest);
        dataio::FeatureCache narrow;
        narrow.encoder = "external";
        narrow.dim = 8;
        narrow.features = numerics::Tensor({m.records.size(), 8});
        for (const auto& rec : m.records) narrow.ids.push_back(rec.id);
        dataio::save_feature_cache(p.dir / "narrow.bin", narrow);
        r = run({"train", "--manifest", p.manifest.string(), "--features", (p.dir / "narrow.bin").string(),
                 "--config", p.config.string(), "--out", (p.dir / "x.ckpt").string()});
        CHECK(r.code == 2);
    }
}

TEST_CASE("features from an external cache") {
    const auto& p = pipeline();
    const auto out = p.dir / "imported.bin";
    const auto r = run({"features", "build", "--manifest", p.manifest.string(), "--encoder",
                        "file:" + p.features.string(), "--out", out.string()});
    REQUIRE_MESSAGE(r.code == 0, r.err);
    CHECK(read_file(out) == read_file(p.features));
    CHECK(run({"features", "build", "--manifest", p.manifest.string(), "--encoder", "resnet", "--out", out.string()})
              .code == 1);
}

TEST_CASE("probe") {
    const auto& p = pipeline();
    const auto image = first_test_image(p);
    const auto annotated = p.dir / "annotated.png";
    auto r = run({"--seed", "5", "probe", "--model", p.model.string(), "--image", image, "--x", "20", "--y", "30",
                  "--annotate-out", annotated.string()});
    REQUIRE_MESSAGE(r.code == 0, r.err);
    const auto j = json::parse(r.out);
    CHECK(j["path"][0]["id"] == "surface");
    CHECK(j["seed"] == 5);
    CHECK(dataio::read_png(annotated).width == 64);
    CHECK(run({"--seed", "5", "probe", "--model", p.model.string(), "--image", image, "--x", "20", "--y", "30"}).out ==
          r.out);

    r = run({"probe", "--model", p.model.string(), "--image", image, "--x", "64", "--y", "0"});
    CHECK(r.code == 2);
    CHECK(run({"probe", "--model", p.model.string(), "--image", image, "--x", "1", "--y", "1", "--threshold", "2"})
              .code == 1);
}

TEST_CASE("render a plan") {
    const auto& p = pipeline();
    const auto dir = scratch("render");
    write_file_atomic(dir / "plan.json", R"({"random": {"max_tilt": 10}, "count": 1,
                                             "base": {"spp": 1, "target_size": 48}})");
    auto r = run({"--seed", "3", "render", "--manifest", p.manifest.string(), "--recipe", (dir / "plan.json").string(),
                  "--out", (dir / "views").string(), "--split", "test", "--merge-out",
                  (dir / "merged.json").string()});
    REQUIRE_MESSAGE(r.code == 0, r.err);
    const auto views = dataio::load_manifest(dir / "views" / "manifest.json");
    const auto source = dataio::load_manifest(p.manifest);
    CHECK(views.records.size() == source.split("test").size());
    CHECK(dataio::read_png(views.records.front().appearance).width == 48);
    CHECK(dataio::load_manifest(dir / "merged.json").records.size() == source.records.size() + views.records.size());

    // A bare recipe renders one view per record.
    write_file_atomic(dir / "recipe.json", R"({"spp": 1, "target_size": 32})");
    r = run({"render", "--manifest", p.manifest.string(), "--recipe", (dir / "recipe.json").string(), "--out",
             (dir / "single").string(), "--split", "val"});
    REQUIRE_MESSAGE(r.code == 0, r.err);
    CHECK(dataio::load_manifest(dir / "single" / "manifest.json").records.size() == source.split("val").size());
}

TEST_CASE("fewshot writes a curve") {
    const auto& p = pipeline();
    const auto dir = scratch("fewshot");
    write_file_atomic(dir / "config.json",
                      json{{"model", {{"hidden_dim", 32}, {"output_dim", 16}}},
                           {"training", {{"epochs", 5}, {"learning_rate", 1e-3}, {"batch_size", 64}}}}
                          .dump());
    const auto leaf = dataio::load_manifest(p.manifest).records.front().label;
    const auto r = run({"fewshot", "--manifest", p.manifest.string(), "--features", p.features.string(), "--config",
                        (dir / "config.json").string(), "--class", leaf, "--counts", "1,2", "--finetune-epochs", "2",
                        "--out", (dir / "curve.csv").string()});
    REQUIRE_MESSAGE(r.code == 0, r.err);
    const auto csv = read_file(dir / "curve.csv");
    CHECK(csv.rfind("n,accuracy,path_distance\n1,", 0) == 0);
    CHECK(contains(csv, "\n2,"));
    CHECK(run({"fewshot", "--manifest", p.manifest.string(), "--features", p.features.string(), "--class", "surface",
               "--out", (dir / "x.csv").string()})
              .code != 0);
}

TEST_CASE("tiff round trip") {
    const auto dir = scratch("tiff");
    tools::TiffRaster r{5, 3, 3, 16, false, {}};
    for (std::size_t i = 0; i < 45; ++i) r.samples.push_back(static_cast<double>(i * 1400));
    tools::write_tiff(dir / "a.tif", r);
    const auto back = tools::read_tiff(dir / "a.tif");
    CHECK(back.width == 5);
    CHECK(back.height == 3);
    CHECK(back.bits == 16);
    CHECK(back.samples == r.samples);
    const Image img = tools::tiff_to_image(back);
    CHECK(img.at(1, 0, 2) == doctest::Approx(dataio::srgb_to_linear(5 * 1400 / 65535.0)).epsilon(1e-12));

    tools::TiffRaster d{4, 2, 1, 32, true, {0.5, 0.0, 1.25, 2.0, 0.75, -1.0, 3.0, 4.0}};
    tools::write_tiff(dir / "d.tif", d);
    const auto depth = tools::tiff_to_depth(tools::read_tiff(dir / "d.tif"), 2.0);
    CHECK(depth.at(0, 0) == 1.0f);
    CHECK(std::isnan(depth.at(1, 0)));
    CHECK(std::isnan(depth.at(1, 1)));
    CHECK(depth.at(3, 1) == 8.0f);

    write_file_atomic(dir / "bad.tif", "II*\0garbage");
    CHECK_THROWS_AS((void)tools::read_tiff(dir / "bad.tif"), matprobe::DataError);
}

TEST_CASE("convert a folder tree") {
    const auto dir = scratch("convert");
    const auto tree = dir / "tree";
    const Image tex = dataio::synth_texture(dataio::TextureFamily{}, 40, 40, 1);
    for (int i = 0; i < 4; ++i) {
        dataio::write_png(tree / "Bricks" / ("b" + std::to_string(i) + ".png"), tex, 16);
        tools::TiffRaster t{40, 40, 1, 16, false, std::vector<double>(1600, 30000.0 + i)};
        fs::create_directories(tree / "wood" / "sub");
        tools::write_tiff(tree / "wood" / "sub" / ("w" + std::to_string(i) + ".tiff"), t);
    }
    fs::create_directories(dir / "depth" / "Bricks");
    tools::write_tiff(dir / "depth" / "Bricks" / "b0.tif", tools::TiffRaster{40, 40, 1, 32, true,
                                                                              std::vector<double>(1600, 0.6)});
    write_file_atomic(dir / "mapping.json", R"({"labels": {"Bricks": "brick", "wood": "Timber"}})");

    auto r = run({"--seed", "2", "convert", "--root", tree.string(), "--mapping", (dir / "mapping.json").string(),
                  "--out", (dir / "out").string(), "--depth-root", (dir / "depth").string()});
    REQUIRE_MESSAGE(r.code == 0, r.err);
    const auto m = dataio::load_manifest(dir / "out" / "manifest.json",
                                         nullptr);
    REQUIRE(m.records.size() == 8);
    CHECK(m.record("Bricks_b0").label == "brick");
    CHECK(m.record("wood_sub_w2").label == "timber");
    REQUIRE(m.record("Bricks_b0").depth);
    CHECK(dataio::read_depth_raster(*m.record("Bricks_b0").depth).at(3, 3) == doctest::Approx(0.6f));
    CHECK_FALSE(m.record("Bricks_b1").depth);
    const Image wood = dataio::read_png(m.record("wood_sub_w2").appearance);
    CHECK(wood.at(7, 7) == doctest::Approx(dataio::srgb_to_linear(30002.0 / 65535.0)).epsilon(1e-4));
    CHECK(m.split("train").size() + m.split("val").size() + m.split("test").size() == 8);
    CHECK(taxonomy::Taxonomy::load(dir / "out" / "taxonomy.json").hash() == m.taxonomy_hash);

    fs::create_directories(tree / "mystery");
    dataio::write_png(tree / "mystery" / "m.png", tex, 8);
    r = run({"convert", "--root", tree.string(), "--mapping", (dir / "mapping.json").string(), "--out",
             (dir / "out2").string()});
    CHECK(r.code == 2);
    CHECK(contains(r.err, "mystery"));
    r = run({"convert", "--root", tree.string(), "--mapping", (dir / "mapping.json").string(), "--out",
             (dir / "out2").string(), "--skip-unmapped"});
    CHECK(r.code == 0);
    write_file_atomic(dir / "bad_mapping.json", R"({"Bricks": "metal"})");
    CHECK(run({"convert", "--root", tree.string(), "--mapping", (dir / "bad_mapping.json").string(), "--out",
               (dir / "out3").string(), "--skip-unmapped"})
              .code == 2);
}

TEST_CASE("serve answers until terminated") {
    const auto& p = pipeline();
    const auto dir = scratch("serve");
    write_file_atomic(dir / "service.json",
                      json{{"checkpoint", p.model.string()}, {"port", 0}, {"mc", {{"num_samples", 2}}}}.dump());
    int fds[2];
    REQUIRE(pipe(fds) == 0);
    const pid_t pid = fork();
    REQUIRE(pid >= 0);
    if (pid == 0) {
        dup2(fds[1], STDOUT_FILENO);
        close(fds[0]);
        close(fds[1]);
        execl(MATPROBE_CLI, MATPROBE_CLI, "serve", "--config", (dir / "service.json").c_str(), nullptr);
        _exit(127);
    }
    close(fds[1]);
    std::string line;
    char c = 0;
    while (read(fds[0], &c, 1) == 1 && c != '\n') line += c;
    REQUIRE_MESSAGE(line.rfind("listening on http://127.0.0.1:", 0) == 0, line);
    const int port = std::stoi(line.substr(line.rfind(':') + 1));

    httplib::Client cli("127.0.0.1", port);
    const auto health = cli.Get("/healthz");
    REQUIRE(health);
    CHECK(json::parse(health->body)["model_hash"] == hex64(fnv1a(read_file(p.model))));
    const auto tax = cli.Get("/taxonomy");
    REQUIRE(tax);
    CHECK(taxonomy::Taxonomy::from_json(json::parse(tax->body)).leaves().size() == 9);

    kill(pid, SIGTERM);
    int status = 0;
    waitpid(pid, &status, 0);
    close(fds[0]);
    CHECK(WIFEXITED(status));
    CHECK(WEXITSTATUS(status) == 0);
}
