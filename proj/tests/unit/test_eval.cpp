#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <sstream>

#include "matprobe/error.hpp"
#include "matprobe/eval.hpp"
#include "matprobe/rng.hpp"
#include "support.hpp"

using namespace matprobe;
using namespace matprobe::eval;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const Taxonomy& tax() {
    static const Taxonomy t = Taxonomy::load(testing::asset("taxonomy.json"));
    return t;
}

fs::path scratch(const std::string& name) {
    const auto p = fs::temp_directory_path() / ("matprobe_eval_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

// Two groups of two leaves; groups differ in frequency, siblings in orientation.
dataio::SyntheticSpec four_leaf_spec(std::size_t per_leaf) {
    dataio::SyntheticSpec s;
    s.taxonomy = json::parse(R"({
      "level_names": ["kind", "band", "material"],
      "nodes": [
        {"id": "any", "name": "Any", "level": "kind", "parent": null},
        {"id": "coarse", "name": "Coarse", "level": "band", "parent": "any"},
        {"id": "c_flat", "name": "Coarse flat", "level": "material", "parent": "coarse"},
        {"id": "c_steep", "name": "Coarse steep", "level": "material", "parent": "coarse"},
        {"id": "fine", "name": "Fine", "level": "band", "parent": "any"},
        {"id": "f_flat", "name": "Fine flat", "level": "material", "parent": "fine"},
        {"id": "f_steep", "name": "Fine steep", "level": "material", "parent": "fine"}
      ]})");
    dataio::TextureFamily f;
    f.frequency = {0.06, 0.08};
    f.orientation = {-10.0, 10.0};
    s.families["c_flat"] = f;
    f.orientation = {80.0, 100.0};
    s.families["c_steep"] = f;
    f.frequency = {0.2, 0.25};
    s.families["f_steep"] = f;
    f.orientation = {-10.0, 10.0};
    s.families["f_flat"] = f;
    s.image_size = 64;
    s.per_leaf = per_leaf;
    s.seed = 3;
    return s;
}

hiergat::ModelConfig small_model() {
    hiergat::ModelConfig m;
    m.hidden_dim = 32;
    m.output_dim = 16;
    return m;
}

hiergat::TrainingConfig quick_training(std::size_t epochs) {
    hiergat::TrainingConfig c;
    c.epochs = epochs;
    c.learning_rate = 3e-3;
    c.batch_size = 64;
    return c;
}

struct Trained {
    dataio::SyntheticDataset data;
    dataio::FeatureCache cache;
    HierGatModel model;
};

const Trained& trained() {
    static const Trained t = [] {
        auto data = dataio::generate_synthetic(four_leaf_spec(30), scratch("four"));
        auto cache = dataio::build_feature_cache(data.manifest, dataio::TrivialEncoder{}).cache;
        auto model = train_model(data.taxonomy, split_dataset(data.manifest, cache, "train"), small_model(),
                                 quick_training(60));
        return Trained{std::move(data), std::move(cache), std::move(model)};
    }();
    return t;
}

}  // namespace

TEST_CASE("per-level accuracy") {
    const auto& t = tax();
    const auto steel = taxonomy::label_of(t, "steel");
    const auto iron = taxonomy::label_of(t, "iron");
    CHECK(per_level_accuracy({steel.path, iron.path}, {steel, iron}) == std::vector<double>(5, 1.0));
    CHECK(per_level_accuracy({steel.path}, {iron}) == std::vector<double>{1, 1, 1, 1, 0});
    CHECK_THROWS_AS((void)per_level_accuracy({}, {}), DataError);
    CHECK_THROWS_AS((void)per_level_accuracy({steel.path}, {steel, iron}), DataError);
}

TEST_CASE("mean path distance") {
    const auto& t = tax();
    CHECK(mean_path_distance({"steel", "brick"}, {"steel", "brick"}, t) == 0.0);
    CHECK(mean_path_distance({"steel"}, {"iron"}, t) == 2.0);
    CHECK(mean_path_distance({"steel", "steel"}, {"steel", "copper"}, t) == 2.0);
    CHECK_THROWS_AS((void)mean_path_distance({}, {}, t), DataError);
    CHECK_THROWS_AS((void)mean_path_distance({"steel"}, {}, t), DataError);
}

TEST_CASE("level argmax") {
    const auto& t = tax();
    std::vector<double> logits(t.size(), 0.0);
    for (const auto& id : taxonomy::label_of(t, "timber").path) logits[t.index_of(id)] = 3.0;
    CHECK(level_argmax(t, logits) == taxonomy::label_of(t, "timber").path);
}

TEST_CASE("report from a trained model") {
    const auto& tr = trained();
    const auto report = run_eval(tr.model, tr.data.manifest, tr.cache, "train");
    CHECK(report.samples == tr.data.manifest.split("train").size());
    CHECK(report.flat_accuracy >= 0.95);
    CHECK(report.level_accuracy.front() == 1.0);
    CHECK(report.level_accuracy.back() == report.flat_accuracy);
    CHECK((report.mean_path_distance == 0.0) == (report.flat_accuracy == 1.0));
    CHECK(report.mean_path_distance <= 2.0 * (tr.data.taxonomy.depth() - 1));

    SUBCASE("confusion rows sum to class support") {
        std::map<std::string, std::size_t> support;
        for (const auto* r : tr.data.manifest.split("train")) {
            for (const auto& id : taxonomy::label_of(tr.data.taxonomy, r->label).path) ++support[id];
        }
        for (const auto& c : report.confusion) {
            for (std::size_t row = 0; row < c.classes.size(); ++row) CHECK(c.support(row) == support[c.classes[row]]);
        }
    }
    SUBCASE("serialisation") {
        const auto j = report.to_json();
        CHECK(j["samples"] == report.samples);
        CHECK(j["levels"].size() == 3);
        const auto csv = report.predictions_csv(tr.data.taxonomy);
        std::istringstream in(csv);
        std::string header;
        std::getline(in, header);
        CHECK(header.rfind("id,label,prediction,correct,path_distance", 0) == 0);
        std::size_t rows = 0;
        for (std::string line; std::getline(in, line);) rows += !line.empty();
        CHECK(rows == report.samples);
    }
    SUBCASE("encoder path matches the cache and grayscale is idempotent") {
        const dataio::TrivialEncoder enc;
        EvalOptions opts;
        opts.split = "test";
        const auto direct = run_eval(tr.model, tr.data.manifest, enc, opts);
        const auto cached = run_eval(tr.model, tr.data.manifest, tr.cache, "test");
        CHECK(direct.to_json() == cached.to_json());
        opts.grayscale = true;
        const auto gray = run_eval(tr.model, tr.data.manifest, enc, opts);
        CHECK(gray.to_json() == direct.to_json());
    }
    SUBCASE("an ood split holding the training images scores like train") {
        auto m = tr.data.manifest;
        m.splits["ood"] = m.splits["train"];
        const dataio::TrivialEncoder enc;
        EvalOptions opts;
        opts.split = "ood";
        const auto ood = run_eval(tr.model, m, enc, opts);
        CHECK(ood.level_accuracy == report.level_accuracy);
        CHECK(ood.flat_accuracy == report.flat_accuracy);
    }
    SUBCASE("deterministic") {
        CHECK(run_eval(tr.model, tr.data.manifest, tr.cache, "train").to_json() == report.to_json());
    }
}

TEST_CASE("few-shot configuration") {
    const auto& t = tax();
    FewShotConfig c;
    c.held_out = "steel";
    CHECK_NOTHROW(c.validate(t));
    c.counts = {0, 1};
    CHECK_THROWS(c.validate(t));
    c.counts = {4, 2};
    CHECK_THROWS(c.validate(t));
    c.counts = {1, 2};
    c.held_out = "metal";
    CHECK_THROWS(c.validate(t));
    c.held_out = "unobtainium";
    CHECK_THROWS(c.validate(t));
    c.held_out = "steel";
    c.repeats = 3;
    const auto back = FewShotConfig::from_json(c.to_json());
    CHECK(back.counts == c.counts);
    CHECK(back.repeats == 3);
    CHECK(back.held_out == "steel");
}

TEST_CASE("few-shot run") {
    const auto& tr = trained();
    FewShotConfig c;
    c.held_out = "f_steep";
    c.counts = {1, 4, 16};
    c.finetune_epochs = 20;
    const auto r = few_shot_run(tr.data.taxonomy, tr.data.manifest, tr.cache, small_model(), quick_training(40), c);
    REQUIRE(r.points.size() == 3);
    for (const auto& p : r.points) {
        CHECK(p.accuracy >= 0.0);
        CHECK(p.accuracy <= 1.0);
        CHECK(p.path_distance <= 4.0);
        if (p.accuracy == 1.0) CHECK(p.path_distance == 0.0);
    }
    CHECK(r.to_csv().rfind("n,accuracy,path_distance\n1,", 0) == 0);
    CHECK(r.to_json()["held_out"] == "f_steep");

    c.counts = {1, 64};
    CHECK_THROWS_AS((void)few_shot_run(tr.data.taxonomy, tr.data.manifest, tr.cache, small_model(),
                                       quick_training(1), c),
                    DataError);
}
