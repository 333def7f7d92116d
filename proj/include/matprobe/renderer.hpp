#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <json.hpp>

#include "matprobe/image.hpp"

namespace matprobe::renderer {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

struct DepthMap {
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<float> depth;  // metres, row-major; NaN marks an invalid pixel

    DepthMap() = default;
    DepthMap(std::size_t w, std::size_t h, float fill = 1.0f) : width(w), height(h), depth(w * h, fill) {}
    float& at(std::size_t x, std::size_t y) { return depth[y * width + x]; }
    [[nodiscard]] float at(std::size_t x, std::size_t y) const { return depth[y * width + x]; }
};

/// Pinhole intrinsics. Pixel centres sit at integer coordinates, so a
/// centred principal point is ((w-1)/2, (h-1)/2).
struct CameraIntrinsics {
    double focal_length = 0.0;  // pixels
    double cx = 0.0;
    double cy = 0.0;
    std::size_t width = 0;
    std::size_t height = 0;

    static CameraIntrinsics centered(std::size_t w, std::size_t h, double focal_px);
    static CameraIntrinsics from_fov(std::size_t w, std::size_t h, double horizontal_fov_deg);
    [[nodiscard]] double field_of_view() const;  // horizontal, degrees
    void validate() const;
    [[nodiscard]] nlohmann::json to_json() const;
    static CameraIntrinsics from_json(const nlohmann::json& j);
};

struct ThinLens {
    double focus_distance = 1.0;  // metres
    double pupil_radius = 0.0;    // metres, 0 = pinhole; the pupil is centred on the optical centre
    void validate() const;
};

/// Sensor geometry in source-pixel units. The ray grid has spacing
/// `ray_spacing`; the box integrates fill_factor * pixel_pitch; the pulse
/// train keeps every sample_period.
struct SensorModel {
    double pixel_pitch = 1.0;
    double fill_factor = 1.0;
    double sample_period = 1.0;
    double ray_spacing = 1.0;
    double read_noise = 0.0;
    double photon_gain = 0.0;

    void validate() const;
    /// Box width in ray-grid samples, round(fill * T / g).
    [[nodiscard]] long box_width() const;
    /// Pulse-train step in ray-grid samples; Δ must be an integer multiple of g.
    [[nodiscard]] std::size_t sample_step() const;
};

struct Mesh {
    std::vector<Vec3> vertices;
    std::vector<std::array<std::uint32_t, 3>> triangles;
    std::vector<Eigen::Vector2d> texcoords;
    std::shared_ptr<const Image> texture;

    [[nodiscard]] Vec3 centroid() const;
    void validate() const;
};

/// v -> scale * R * v + translation.
struct SpatialTransform {
    Mat3 rotation = Mat3::Identity();
    Vec3 translation = Vec3::Zero();
    double scale = 1.0;

    static SpatialTransform identity() { return {}; }
    /// Rotations in degrees about x, then y, then z (R = Rz Ry Rx).
    static Mat3 euler_deg(double rx, double ry, double rz);
    /// Rotate and scale about `pivot`, then translate.
    static SpatialTransform about(const Vec3& pivot, const Mat3& rotation, double scale, const Vec3& translation);

    [[nodiscard]] Vec3 apply(const Vec3& v) const { return scale * (rotation * v) + translation; }
    /// (this ∘ first)(v) == this->apply(first.apply(v)).
    [[nodiscard]] SpatialTransform after(const SpatialTransform& first) const;
    void validate() const;
};

[[nodiscard]] Mesh depth_to_mesh(const DepthMap& depth, const CameraIntrinsics& k, const Image& appearance,
                                 double discontinuity_ratio = 1.2);
[[nodiscard]] Mesh apply_transform(const Mesh& m, const SpatialTransform& h);

enum class PupilSampling { stratified, independent };

struct RayGrid {
    std::size_t width = 0;
    std::size_t height = 0;
    double spacing = 1.0;  // source pixels between ray samples
    /// Sensor coordinate of ray sample a: (a + 0.5) * spacing - 0.5.
    [[nodiscard]] double coord(std::size_t a) const { return (static_cast<double>(a) + 0.5) * spacing - 0.5; }
    static RayGrid covering(const CameraIntrinsics& k, double spacing);
};

struct RaytraceOptions {
    std::size_t spp = 16;
    double background = 0.5;
    PupilSampling sampling = PupilSampling::stratified;
    std::uint64_t seed = 0;
    unsigned threads = 0;  // 0 = hardware concurrency
};

struct RaytraceResult {
    Image irradiance;
    std::vector<std::uint8_t> missed;  // per ray sample: any pupil ray left the scene
    double miss_fraction = 0.0;        // over all rays
};

/// Scene of one or more meshes with a bounding-volume hierarchy, immutable
/// after construction.
class Scene {
public:
    explicit Scene(std::vector<Mesh> meshes);
    ~Scene();
    Scene(Scene&&) noexcept;
    Scene& operator=(Scene&&) noexcept;

    struct Hit {
        double t = 0.0;
        std::uint32_t mesh = 0;
        std::uint32_t triangle = 0;
        double b1 = 0.0;  // barycentric weights of vertices 1 and 2
        double b2 = 0.0;
    };
    [[nodiscard]] std::optional<Hit> intersect(const Vec3& origin, const Vec3& direction) const;
    /// Radiance at a hit, channel c.
    [[nodiscard]] double shade(const Hit& hit, std::size_t c) const;
    [[nodiscard]] std::size_t channels() const;
    [[nodiscard]] std::size_t triangle_count() const;
    [[nodiscard]] const std::vector<Mesh>& meshes() const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

/// Watertight ray/triangle test. Returns t and the barycentrics of b and c.
[[nodiscard]] std::optional<std::array<double, 3>> intersect_triangle(const Vec3& origin, const Vec3& direction,
                                                                      const Vec3& a, const Vec3& b, const Vec3& c);

/// Focal point for the chief ray through sensor coordinate (u, v).
[[nodiscard]] Vec3 focal_point(const CameraIntrinsics& k, const ThinLens& lens, double u, double v);
/// Concentric square-to-disk map of (s, t) in [0,1)^2 onto the unit disk.
[[nodiscard]] Eigen::Vector2d concentric_disk(double s, double t);
/// Pupil points on the unit disk for one ray sample.
[[nodiscard]] std::vector<Eigen::Vector2d> pupil_samples(std::size_t spp, PupilSampling sampling, std::uint64_t seed);

[[nodiscard]] RaytraceResult raytrace(const Scene& scene, const CameraIntrinsics& k, const ThinLens& lens,
                                      const RayGrid& grid, const RaytraceOptions& opts);
[[nodiscard]] RaytraceResult raytrace(const Mesh& mesh, const CameraIntrinsics& k, const ThinLens& lens,
                                      const RayGrid& grid, const RaytraceOptions& opts);

/// Normalised box of `width` samples (even widths get half-weight end taps),
/// separable, edges clamped. width < 1 throws UsageError.
[[nodiscard]] Image pixel_integrate(const Image& img, long width);
/// Keeps samples step*i + (step-1)/2 along each axis, floor(n/step) of them.
[[nodiscard]] Image sample_grid(const Image& img, std::size_t step);
/// Gaussian noise with variance read_noise^2 + photon_gain * max(v, 0).
[[nodiscard]] Image add_noise(const Image& img, double read_noise, double photon_gain, std::uint64_t seed);

enum class ResampleFilter { mitchell, lanczos3 };
[[nodiscard]] double mitchell(double x, double b = 1.0 / 3.0, double c = 1.0 / 3.0);
[[nodiscard]] double lanczos3(double x);
/// Resamples both axes independently: enlarging uses Mitchell-Netravali,
/// shrinking uses Lanczos-3, an unchanged axis is copied.
[[nodiscard]] Image resize(const Image& img, std::size_t width, std::size_t height);
/// One axis with an explicit filter.
[[nodiscard]] std::vector<double> resample_1d(std::span<const double> in, std::size_t out_size, ResampleFilter f);

struct CropRect {
    std::size_t x = 0;
    std::size_t y = 0;
    std::size_t width = 0;
    std::size_t height = 0;
};

/// Largest square centred in the frame that contains no flagged pixel.
/// Throws DataError when every centred square has a flagged pixel.
[[nodiscard]] CropRect centered_clean_square(std::size_t width, std::size_t height,
                                             std::span<const std::uint8_t> flagged);
[[nodiscard]] Image finalize(const Image& img, const CropRect& crop, std::size_t target_width,
                             std::size_t target_height);

struct Sample {
    Image appearance;  // linear light
    DepthMap depth;
    CameraIntrinsics intrinsics;
};

enum class CropMode { automatic, full };

struct ViewRecipe {
    SpatialTransform transform;
    ThinLens lens;
    bool auto_focus = true;  // focus on the transformed mesh centroid's depth
    SensorModel sensor;
    std::size_t spp = 16;
    PupilSampling sampling = PupilSampling::stratified;
    double background = 0.5;
    double discontinuity_ratio = 1.2;
    CropMode crop = CropMode::automatic;
    std::size_t target_size = 512;  // 0 keeps the cropped size
    std::uint64_t seed = 0;
    unsigned threads = 0;  // raytrace workers, not serialised

    [[nodiscard]] nlohmann::json to_json() const;
    /// Accepts either a rotation matrix or "rotation_deg": [rx, ry, rz]; a
    /// "pivot" of "centroid" rotates and scales about the mesh centroid.
    static ViewRecipe from_json(const nlohmann::json& j, const Vec3& centroid = Vec3::Zero());
};

struct NovelView {
    Image image;
    double miss_fraction = 0.0;
    CropRect crop;
    nlohmann::json metadata;
};

[[nodiscard]] NovelView render_novel_view(const Sample& sample, const ViewRecipe& recipe);

}  // namespace matprobe::renderer
