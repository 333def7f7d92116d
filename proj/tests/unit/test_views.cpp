#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "matprobe/dataio.hpp"
#include "matprobe/error.hpp"
#include "matprobe/fileio.hpp"

using namespace matprobe;
using namespace matprobe::dataio;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path scratch(const std::string& name) {
    const auto p = fs::temp_directory_path() / ("matprobe_views_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

const SyntheticDataset& source() {
    static const SyntheticDataset d = [] {
        auto spec = SyntheticSpec::standard();
        spec.per_leaf = 5;
        spec.image_size = 64;
        return generate_synthetic(spec, scratch("source"));
    }();
    return d;
}

RenderPlan random_plan(std::size_t count) {
    return RenderPlan::from_json(json::parse(R"({
      "random": {"max_tilt": 25, "max_roll": 20, "scale": [1.0, 1.3], "read_noise": [0.0, 0.02]},
      "count": )" + std::to_string(count) + R"(,
      "base": {"spp": 4, "target_size": 64},
      "seed": 9})"));
}

double interior_psnr(const Image& a, const Image& b, std::size_t margin) {
    double se = 0.0;
    std::size_t n = 0;
    for (std::size_t y = margin; y + margin < a.height; ++y) {
        for (std::size_t x = margin; x + margin < a.width; ++x) {
            const double d = a.at(x, y) - b.at(x, y);
            se += d * d;
            ++n;
        }
    }
    return 10.0 * std::log10(1.0 / (se / static_cast<double>(n)));
}

}  // namespace

TEST_CASE("pose distribution JSON and validation") {
    PoseDistribution p;
    p.max_tilt = 30;
    p.scale = {0.9, 1.4};
    p.pupil_radius = {0.0, 0.002};
    p.photon_gain = 500;
    const auto back = PoseDistribution::from_json(p.to_json());
    CHECK(back.to_json() == p.to_json());
    CHECK(PoseDistribution::from_json(json{{"scale", 1.1}}).scale == std::pair{1.1, 1.1});
    CHECK_THROWS(PoseDistribution::from_json(json{{"max_tilt", 95}}));
    CHECK_THROWS(PoseDistribution::from_json(json{{"scale", {1.2, 1.0}}}));
    CHECK_THROWS_AS(PoseDistribution::from_json(json{{"scale", {1, 2, 3}}}), DataError);
}

TEST_CASE("render plan parsing") {
    const auto plan = random_plan(3);
    CHECK(plan.views_per_record() == 3);
    CHECK(RenderPlan::from_json(plan.to_json()).to_json() == plan.to_json());
    const auto listed = RenderPlan::from_json(json::parse(R"({"views": [{}, {"rotation_deg": [0, 0, 30]}]})"));
    CHECK(listed.views_per_record() == 2);
    CHECK_THROWS(RenderPlan::from_json(json::parse(R"({"views": []})")));
    CHECK_THROWS(RenderPlan::from_json(json::parse(R"({"random": {}, "count": 0})")));
    CHECK_THROWS(RenderPlan::from_json(json::parse(R"({"random": {}, "count": 1, "views": [{}]})")));
}

TEST_CASE("sampled recipes are seeded per record and view") {
    const auto plan = random_plan(4);
    const renderer::Vec3 c(0.0, 0.0, 0.5);
    const auto a = plan_recipe(plan, c, 3, 1);
    CHECK(a.to_json() == plan_recipe(plan, c, 3, 1).to_json());
    CHECK(a.to_json() != plan_recipe(plan, c, 3, 2).to_json());
    CHECK(a.to_json() != plan_recipe(plan, c, 4, 1).to_json());
    CHECK(a.spp == 4);
    for (std::size_t k = 0; k < 50; ++k) {
        const auto r = plan_recipe(plan, c, k, 0);
        const double s = r.transform.scale;
        CHECK(s >= 1.0);
        CHECK(s <= 1.3);
        // The centroid is the rotation pivot and stays put.
        const renderer::Vec3 moved = r.transform.apply(c);
        CHECK((moved - c).norm() < 1e-12);
        // Tilt is the angle between the rotated and original optical axes.
        const double tilt = std::acos(std::clamp(r.transform.rotation(2, 2), -1.0, 1.0)) * 180.0 / M_PI;
        CHECK(tilt <= 25.0 + 1e-9);
        CHECK(r.sensor.read_noise <= 0.02);
    }
}

TEST_CASE("identity view reproduces the source") {
    const auto& d = source();
    RenderPlan plan = RenderPlan::from_json(json::parse(R"({"views": [{"spp": 1, "target_size": 0}]})"));
    const auto sample = load_sample(d.manifest.records.front());
    const auto view = renderer::render_novel_view(sample, plan_recipe(plan, renderer::Vec3::Zero(), 0, 0));
    REQUIRE(view.image.width == sample.appearance.width);
    CHECK(interior_psnr(view.image, sample.appearance, 4) >= 40.0);
}

TEST_CASE("rendering views of a split") {
    const auto& d = source();
    const auto out = scratch("train_views");
    RenderViewsOptions opts;
    opts.splits = {"train"};
    const auto views = render_views(d.manifest, random_plan(2), out, opts);
    const auto train = d.manifest.split("train");
    REQUIRE(views.records.size() == 2 * train.size());
    CHECK(views.splits.size() == 1);
    CHECK(views.split("train").size() == views.records.size());
    for (const auto& r : views.records) {
        const auto& src = d.manifest.record(r.metadata.at("source").get<std::string>());
        CHECK(r.label == src.label);
        CHECK(fs::exists(r.appearance));
        CHECK_FALSE(r.depth);
        CHECK(r.metadata.at("render").contains("recipe"));
    }
    const auto img = read_png(views.records.front().appearance);
    CHECK(img.width == 64);
    CHECK(img.height == 64);

    const auto reloaded = load_manifest(out / "manifest.json");
    CHECK(reloaded.to_json() == views.to_json());

    SUBCASE("deterministic across thread counts") {
        const auto again_dir = scratch("train_views_again");
        RenderViewsOptions one = opts;
        one.threads = 1;
        const auto again = render_views(d.manifest, random_plan(2), again_dir, one);
        for (std::size_t i = 0; i < again.records.size(); ++i) {
            CHECK(read_file(again.records[i].appearance) == read_file(views.records[i].appearance));
        }
    }
    SUBCASE("merged with the originals") {
        const auto merged = merge_manifests(d.manifest, views);
        CHECK(merged.records.size() == d.manifest.records.size() + views.records.size());
        CHECK(merged.split("train").size() == 3 * train.size());
        CHECK(merged.split("test").size() == d.manifest.split("test").size());
        CHECK_THROWS_AS((void)merge_manifests(merged, views), DataError);
    }
}
