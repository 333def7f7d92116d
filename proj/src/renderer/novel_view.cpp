#include <algorithm>
#include <string>

#include "matprobe/error.hpp"
#include "matprobe/renderer.hpp"
#include "matprobe/rng.hpp"

namespace matprobe::renderer {

namespace {

using nlohmann::json;

json vec_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

Vec3 vec_from(const json& j) {
    if (!j.is_array() || j.size() != 3) throw DataError("expected a 3-vector");
    return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

const char* sampling_name(PupilSampling s) { return s == PupilSampling::stratified ? "stratified" : "independent"; }

// A sampled pixel is unreliable if any ray under its box footprint missed.
std::vector<std::uint8_t> sampled_misses(const RaytraceResult& rt, long box, std::size_t step, std::size_t out_w,
                                         std::size_t out_h) {
    const long reach = box / 2;
    const long w = static_cast<long>(rt.irradiance.width);
    const long h = static_cast<long>(rt.irradiance.height);
    const long off = static_cast<long>((step - 1) / 2);
    std::vector<std::uint8_t> out(out_w * out_h, 0);
    for (std::size_t y = 0; y < out_h; ++y) {
        for (std::size_t x = 0; x < out_w; ++x) {
            const long cx = static_cast<long>(x * step) + off;
            const long cy = static_cast<long>(y * step) + off;
            std::uint8_t m = 0;
            for (long dy = -reach; dy <= reach && !m; ++dy) {
                for (long dx = -reach; dx <= reach && !m; ++dx) {
                    const long sx = std::clamp(cx + dx, 0L, w - 1);
                    const long sy = std::clamp(cy + dy, 0L, h - 1);
                    m = rt.missed[static_cast<std::size_t>(sy * w + sx)];
                }
            }
            out[y * out_w + x] = m;
        }
    }
    return out;
}

}  // namespace

json ViewRecipe::to_json() const {
    json rot = json::array();
    for (int r = 0; r < 3; ++r) rot.push_back(json::array({transform.rotation(r, 0), transform.rotation(r, 1),
                                                           transform.rotation(r, 2)}));
    json lens_j = {{"pupil_radius", lens.pupil_radius}};
    if (auto_focus) {
        lens_j["focus_distance"] = "auto";
    } else {
        lens_j["focus_distance"] = lens.focus_distance;
    }
    return {{"transform", {{"rotation", rot}, {"translation", vec_json(transform.translation)}, {"scale", transform.scale}}},
            {"lens", lens_j},
            {"sensor",
             {{"pixel_pitch", sensor.pixel_pitch},
              {"fill_factor", sensor.fill_factor},
              {"sample_period", sensor.sample_period},
              {"ray_spacing", sensor.ray_spacing},
              {"read_noise", sensor.read_noise},
              {"photon_gain", sensor.photon_gain}}},
            {"spp", spp},
            {"sampling", sampling_name(sampling)},
            {"background", background},
            {"discontinuity_ratio", discontinuity_ratio},
            {"crop", crop == CropMode::automatic ? "auto" : "full"},
            {"target_size", target_size},
            {"seed", seed}};
}

ViewRecipe ViewRecipe::from_json(const json& j, const Vec3& centroid) {
    try {
        ViewRecipe r;
        if (j.contains("transform")) {
            const json& t = j.at("transform");
            Mat3 rot = Mat3::Identity();
            if (t.contains("rotation")) {
                const json& m = t.at("rotation");
                if (!m.is_array() || m.size() != 3) throw DataError("rotation must be a 3x3 matrix");
                for (int a = 0; a < 3; ++a) {
                    if (!m[a].is_array() || m[a].size() != 3) throw DataError("rotation must be a 3x3 matrix");
                    for (int b = 0; b < 3; ++b) rot(a, b) = m[a][b].get<double>();
                }
            } else if (t.contains("rotation_deg")) {
                const Vec3 e = vec_from(t.at("rotation_deg"));
                rot = SpatialTransform::euler_deg(e.x(), e.y(), e.z());
            }
            const Vec3 trans = t.contains("translation") ? vec_from(t.at("translation")) : Vec3::Zero();
            const double scale = t.value("scale", 1.0);
            Vec3 pivot = Vec3::Zero();
            if (t.contains("pivot")) {
                const json& p = t.at("pivot");
                if (p.is_string()) {
                    if (p == "centroid") {
                        pivot = centroid;
                    } else if (p != "origin") {
                        throw DataError("pivot must be \"centroid\", \"origin\" or a 3-vector");
                    }
                } else {
                    pivot = vec_from(p);
                }
            }
            r.transform = SpatialTransform::about(pivot, rot, scale, trans);
        }
        if (j.contains("lens")) {
            const json& l = j.at("lens");
            r.lens.pupil_radius = l.value("pupil_radius", 0.0);
            if (l.contains("focus_distance") && !l.at("focus_distance").is_string()) {
                r.lens.focus_distance = l.at("focus_distance").get<double>();
                r.auto_focus = false;
            } else if (l.contains("focus_distance") && l.at("focus_distance") != "auto") {
                throw DataError("focus_distance must be a number or \"auto\"");
            }
        }
        if (j.contains("sensor")) {
            const json& s = j.at("sensor");
            r.sensor.pixel_pitch = s.value("pixel_pitch", r.sensor.pixel_pitch);
            r.sensor.fill_factor = s.value("fill_factor", r.sensor.fill_factor);
            r.sensor.sample_period = s.value("sample_period", r.sensor.pixel_pitch);
            r.sensor.ray_spacing = s.value("ray_spacing", r.sensor.ray_spacing);
            r.sensor.read_noise = s.value("read_noise", 0.0);
            r.sensor.photon_gain = s.value("photon_gain", 0.0);
        }
        r.spp = j.value("spp", r.spp);
        const std::string sampling = j.value("sampling", "stratified");
        if (sampling == "independent") {
            r.sampling = PupilSampling::independent;
        } else if (sampling != "stratified") {
            throw DataError("sampling must be \"stratified\" or \"independent\"");
        }
        r.background = j.value("background", r.background);
        r.discontinuity_ratio = j.value("discontinuity_ratio", r.discontinuity_ratio);
        const std::string crop = j.value("crop", "auto");
        if (crop == "full") {
            r.crop = CropMode::full;
        } else if (crop != "auto") {
            throw DataError("crop must be \"auto\" or \"full\"");
        }
        r.target_size = j.value("target_size", r.target_size);
        r.seed = j.value("seed", r.seed);
        return r;
    } catch (const json::exception& e) {
        throw DataError(std::string("render recipe: ") + e.what());
    }
}

NovelView render_novel_view(const Sample& sample, const ViewRecipe& recipe) {
    recipe.transform.validate();
    recipe.sensor.validate();
    if (recipe.spp < 1) throw UsageError("spp must be >= 1");

    const Mesh mesh =
        apply_transform(depth_to_mesh(sample.depth, sample.intrinsics, sample.appearance, recipe.discontinuity_ratio),
                        recipe.transform);
    ThinLens lens = recipe.lens;
    if (recipe.auto_focus) lens.focus_distance = mesh.centroid().norm();
    lens.validate();

    const CameraIntrinsics& k = sample.intrinsics;
    const RayGrid grid = RayGrid::covering(k, recipe.sensor.ray_spacing);
    RaytraceOptions ro;
    ro.spp = recipe.spp;
    ro.background = recipe.background;
    ro.sampling = recipe.sampling;
    ro.threads = recipe.threads;
    ro.seed = rng::derive(recipe.seed, 1);
    const RaytraceResult rt = raytrace(mesh, k, lens, grid, ro);

    const long box = recipe.sensor.box_width();
    const std::size_t step = recipe.sensor.sample_step();
    Image img = sample_grid(pixel_integrate(rt.irradiance, box), step);
    if (img.empty()) throw UsageError("sample period leaves no pixels");
    img = add_noise(img, recipe.sensor.read_noise, recipe.sensor.photon_gain, rng::derive(recipe.seed, 2));

    NovelView view;
    view.miss_fraction = rt.miss_fraction;
    if (recipe.crop == CropMode::automatic) {
        view.crop = centered_clean_square(img.width, img.height,
                                          sampled_misses(rt, box, step, img.width, img.height));
    } else {
        view.crop = {0, 0, img.width, img.height};
    }
    view.image = finalize(img, view.crop, recipe.target_size, recipe.target_size);
    view.metadata = {{"recipe", recipe.to_json()},
                     {"focus_distance", lens.focus_distance},
                     {"intrinsics", k.to_json()},
                     {"miss_fraction", view.miss_fraction},
                     {"crop", {{"x", view.crop.x}, {"y", view.crop.y}, {"width", view.crop.width}, {"height", view.crop.height}}},
                     {"width", view.image.width},
                     {"height", view.image.height}};
    return view;
}

}  // namespace matprobe::renderer
