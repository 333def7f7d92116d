#include <cmath>
#include <numbers>
#include <set>
#include <string>

#include "matprobe/dataio.hpp"
#include "matprobe/error.hpp"
#include "matprobe/parallel.hpp"
#include "matprobe/rng.hpp"

namespace matprobe::dataio {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::pair<double, double> pair_from(const json& j, const char* key, std::pair<double, double> fallback) {
    if (!j.contains(key)) return fallback;
    const auto& v = j.at(key);
    if (v.is_number()) return {v.get<double>(), v.get<double>()};
    if (!v.is_array() || v.size() != 2) throw DataError(std::string("'") + key + "' must be a number or [low, high]");
    return {v[0].get<double>(), v[1].get<double>()};
}

double between(rng::Stream& s, const std::pair<double, double>& r) {
    return r.first + (r.second - r.first) * s.uniform();
}

}  // namespace

void PoseDistribution::validate() const {
    if (!(max_tilt >= 0.0 && max_tilt < 90.0)) throw UsageError("max tilt must lie in [0, 90) degrees");
    if (!(max_roll >= 0.0 && max_roll <= 180.0)) throw UsageError("max roll must lie in [0, 180] degrees");
    if (!(scale.first > 0.0 && scale.first <= scale.second)) throw UsageError("scale range must be positive and ordered");
    if (!(pupil_radius.first >= 0.0 && pupil_radius.first <= pupil_radius.second)) {
        throw UsageError("pupil radius range must be non-negative and ordered");
    }
    if (!(read_noise.first >= 0.0 && read_noise.first <= read_noise.second)) {
        throw UsageError("read noise range must be non-negative and ordered");
    }
    if (!(photon_gain >= 0.0)) throw UsageError("photon gain must be >= 0");
}

json PoseDistribution::to_json() const {
    return {{"max_tilt", max_tilt},
            {"max_roll", max_roll},
            {"scale", {scale.first, scale.second}},
            {"pupil_radius", {pupil_radius.first, pupil_radius.second}},
            {"read_noise", {read_noise.first, read_noise.second}},
            {"photon_gain", photon_gain}};
}

PoseDistribution PoseDistribution::from_json(const json& j) {
    if (!j.is_object()) throw DataError("pose distribution must be an object");
    PoseDistribution p;
    try {
        p.max_tilt = j.value("max_tilt", p.max_tilt);
        p.max_roll = j.value("max_roll", p.max_roll);
        p.scale = pair_from(j, "scale", p.scale);
        p.pupil_radius = pair_from(j, "pupil_radius", p.pupil_radius);
        p.read_noise = pair_from(j, "read_noise", p.read_noise);
        p.photon_gain = j.value("photon_gain", p.photon_gain);
    } catch (const json::exception& e) {
        throw DataError(std::string("pose distribution: ") + e.what());
    }
    p.validate();
    return p;
}

renderer::ViewRecipe PoseDistribution::sample(const renderer::ViewRecipe& base, const renderer::Vec3& centroid,
                                              std::uint64_t seed) const {
    rng::Stream s(seed);
    const double deg = std::numbers::pi / 180.0;
    const double axis_angle = 2.0 * std::numbers::pi * s.uniform();
    const double tilt = max_tilt * s.uniform() * deg;
    const double roll = max_roll * (2.0 * s.uniform() - 1.0) * deg;
    const double log_scale = between(s, {std::log(scale.first), std::log(scale.second)});
    const renderer::Vec3 axis(std::cos(axis_angle), std::sin(axis_angle), 0.0);
    const renderer::Mat3 rot = (Eigen::AngleAxisd(roll, renderer::Vec3::UnitZ()) * Eigen::AngleAxisd(tilt, axis))
                                   .toRotationMatrix();
    renderer::ViewRecipe r = base;
    r.transform = renderer::SpatialTransform::about(centroid, rot, std::exp(log_scale), renderer::Vec3::Zero());
    r.lens.pupil_radius = between(s, pupil_radius);
    r.sensor.read_noise = between(s, read_noise);
    r.sensor.photon_gain = photon_gain;
    r.seed = s.next();
    return r;
}

void RenderPlan::validate() const {
    if (random) {
        random->validate();
        if (count == 0) throw UsageError("render plan with random views needs count >= 1");
    } else if (views.empty()) {
        throw UsageError("render plan lists no views");
    }
}

json RenderPlan::to_json() const {
    json j{{"seed", seed}};
    if (random) {
        j["random"] = random->to_json();
        j["count"] = count;
        j["base"] = base;
    } else {
        j["views"] = views;
    }
    return j;
}

RenderPlan RenderPlan::from_json(const json& j) {
    if (!j.is_object()) throw DataError("render plan must be an object");
    RenderPlan p;
    try {
        p.seed = j.value("seed", p.seed);
        if (j.contains("random")) {
            p.random = PoseDistribution::from_json(j.at("random"));
            p.count = j.value("count", std::size_t{1});
            p.base = j.value("base", json::object());
        }
        if (j.contains("views")) {
            if (p.random) throw DataError("render plan has both 'views' and 'random'");
            if (!j.at("views").is_array()) throw DataError("render plan 'views' must be an array");
            for (const auto& v : j.at("views")) p.views.push_back(v);
        }
    } catch (const json::exception& e) {
        throw DataError(std::string("render plan: ") + e.what());
    }
    p.validate();
    // Parse every view once so malformed recipes fail before any rendering.
    for (const auto& v : p.views) (void)renderer::ViewRecipe::from_json(v);
    if (p.random) (void)renderer::ViewRecipe::from_json(p.base);
    return p;
}

renderer::ViewRecipe plan_recipe(const RenderPlan& plan, const renderer::Vec3& centroid, std::size_t i,
                                 std::size_t k) {
    const std::uint64_t seed = rng::derive(plan.seed, i, k);
    if (plan.random) return plan.random->sample(renderer::ViewRecipe::from_json(plan.base, centroid), centroid, seed);
    auto r = renderer::ViewRecipe::from_json(plan.views.at(k), centroid);
    r.seed = rng::derive(r.seed, seed);
    return r;
}

DatasetManifest render_views(const DatasetManifest& m, const RenderPlan& plan, const fs::path& out_dir,
                             const RenderViewsOptions& opts) {
    plan.validate();
    const fs::path root = fs::absolute(out_dir);
    std::vector<std::size_t> selected;
    std::map<std::string, std::string> split_of;
    if (opts.splits.empty()) {
        for (std::size_t i = 0; i < m.records.size(); ++i) selected.push_back(i);
    } else {
        std::set<std::string> wanted;
        for (const auto& name : opts.splits) {
            for (const auto* r : m.split(name)) wanted.insert(r->id);
        }
        for (std::size_t i = 0; i < m.records.size(); ++i) {
            if (wanted.count(m.records[i].id)) selected.push_back(i);
        }
    }
    const std::size_t per = plan.views_per_record();
    std::vector<SampleRecord> out(selected.size() * per);
    parallel_for(out.size(), opts.threads, [&](std::size_t job) {
        const std::size_t i = selected[job / per];
        const std::size_t k = job % per;
        const SampleRecord& src = m.records[i];
        try {
            const auto sample = load_sample(src);
            const auto centroid = renderer::depth_to_mesh(sample.depth, sample.intrinsics, sample.appearance).centroid();
            auto recipe = plan_recipe(plan, centroid, i, k);
            recipe.threads = 1;
            const auto view = renderer::render_novel_view(sample, recipe);
            SampleRecord r;
            r.id = src.id + "_v" + std::to_string(k);
            r.appearance = root / "images" / (r.id + ".png");
            r.label = src.label;
            r.metadata = {{"source", src.id}, {"render", view.metadata}};
            write_png(r.appearance, view.image, 16);
            out[job] = std::move(r);
        } catch (const Error& e) {
            throw DataError("rendering view " + std::to_string(k) + " of '" + src.id + "': " + e.what());
        }
    });

    DatasetManifest result;
    result.root = root;
    result.taxonomy_hash = m.taxonomy_hash;
    result.records = std::move(out);
    for (const auto& [name, ids] : m.splits) {
        std::vector<std::string> members;
        for (const auto& id : ids) {
            if (opts.splits.empty() || std::find(opts.splits.begin(), opts.splits.end(), name) != opts.splits.end()) {
                for (std::size_t k = 0; k < per; ++k) members.push_back(id + "_v" + std::to_string(k));
            }
        }
        if (!members.empty()) result.splits[name] = std::move(members);
    }
    // Views of records outside the selected splits do not exist.
    for (auto& [name, members] : result.splits) {
        std::erase_if(members, [&](const std::string& id) { return !result.contains(id); });
    }
    result.validate();
    save_manifest(root / "manifest.json", result);
    return result;
}

DatasetManifest merge_manifests(const DatasetManifest& a, const DatasetManifest& b) {
    if (!a.taxonomy_hash.empty() && !b.taxonomy_hash.empty() && a.taxonomy_hash != b.taxonomy_hash) {
        throw DataError("cannot merge manifests built for different taxonomies");
    }
    DatasetManifest m = a;
    if (m.taxonomy_hash.empty()) m.taxonomy_hash = b.taxonomy_hash;
    for (const auto& r : b.records) {
        if (m.contains(r.id)) throw DataError("sample id '" + r.id + "' appears in both manifests");
        m.records.push_back(r);
    }
    for (const auto& [name, ids] : b.splits) {
        auto& dst = m.splits[name];
        dst.insert(dst.end(), ids.begin(), ids.end());
    }
    m.validate();
    return m;
}

}  // namespace matprobe::dataio
