#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "matprobe/error.hpp"
#include "matprobe/renderer.hpp"

namespace matprobe::renderer {

CameraIntrinsics CameraIntrinsics::centered(std::size_t w, std::size_t h, double focal_px) {
    CameraIntrinsics k;
    k.focal_length = focal_px;
    k.cx = (static_cast<double>(w) - 1.0) / 2.0;
    k.cy = (static_cast<double>(h) - 1.0) / 2.0;
    k.width = w;
    k.height = h;
    return k;
}

CameraIntrinsics CameraIntrinsics::from_fov(std::size_t w, std::size_t h, double horizontal_fov_deg) {
    if (!(horizontal_fov_deg > 0.0 && horizontal_fov_deg < 180.0)) {
        throw UsageError("field of view must be in (0, 180) degrees");
    }
    const double half = horizontal_fov_deg * std::numbers::pi / 360.0;
    return centered(w, h, static_cast<double>(w) / 2.0 / std::tan(half));
}

double CameraIntrinsics::field_of_view() const {
    return 2.0 * std::atan(static_cast<double>(width) / (2.0 * focal_length)) * 180.0 / std::numbers::pi;
}

void CameraIntrinsics::validate() const {
    if (!(focal_length > 0.0) || !std::isfinite(focal_length)) throw UsageError("focal length must be positive");
    if (width == 0 || height == 0) throw UsageError("camera has an empty image");
    const double w = static_cast<double>(width);
    const double h = static_cast<double>(height);
    if (!(cx >= -0.5 && cx <= w - 0.5 && cy >= -0.5 && cy <= h - 0.5)) {
        throw UsageError("principal point lies outside the image");
    }
}

nlohmann::json CameraIntrinsics::to_json() const {
    return {{"focal_length", focal_length}, {"cx", cx}, {"cy", cy}, {"width", width}, {"height", height},
            {"field_of_view", field_of_view()}};
}

CameraIntrinsics CameraIntrinsics::from_json(const nlohmann::json& j) {
    const auto w = j.at("width").get<std::size_t>();
    const auto h = j.at("height").get<std::size_t>();
    CameraIntrinsics k = j.contains("focal_length") ? centered(w, h, j.at("focal_length").get<double>())
                                                    : from_fov(w, h, j.at("field_of_view").get<double>());
    k.cx = j.value("cx", k.cx);
    k.cy = j.value("cy", k.cy);
    k.validate();
    return k;
}

void ThinLens::validate() const {
    if (!(focus_distance > 0.0) || !std::isfinite(focus_distance)) throw UsageError("focus distance must be positive");
    if (!(pupil_radius >= 0.0) || !std::isfinite(pupil_radius)) throw UsageError("pupil radius must be >= 0");
}

void SensorModel::validate() const {
    if (!(pixel_pitch > 0.0)) throw UsageError("pixel pitch must be positive");
    if (!(fill_factor > 0.0 && fill_factor <= 1.0)) throw UsageError("fill factor must be in (0, 1]");
    if (!(sample_period > 0.0)) throw UsageError("sample period must be positive");
    if (!(ray_spacing > 0.0)) throw UsageError("ray spacing must be positive");
    if (!(read_noise >= 0.0) || !(photon_gain >= 0.0)) throw UsageError("noise parameters must be >= 0");
    (void)sample_step();
}

long SensorModel::box_width() const { return std::lround(fill_factor * pixel_pitch / ray_spacing); }

std::size_t SensorModel::sample_step() const {
    const double s = sample_period / ray_spacing;
    const double r = std::round(s);
    if (r < 1.0) throw UsageError("sample period is finer than the ray grid");
    if (std::abs(s - r) > 1e-9 * r) throw UsageError("sample period must be a whole multiple of the ray spacing");
    return static_cast<std::size_t>(r);
}

Vec3 Mesh::centroid() const {
    Vec3 s = Vec3::Zero();
    std::size_t n = 0;
    for (const Vec3& v : vertices) {
        if (!v.allFinite()) continue;
        s += v;
        ++n;
    }
    if (n == 0) throw DataError("mesh has no valid vertices");
    return s / static_cast<double>(n);
}

void Mesh::validate() const {
    if (texcoords.size() != vertices.size()) throw DataError("mesh needs one texture coordinate per vertex");
    if (!texture || texture->empty()) throw DataError("mesh has no texture");
    for (const auto& tri : triangles) {
        for (std::uint32_t i : tri) {
            if (i >= vertices.size()) throw DataError("mesh triangle index out of range");
        }
    }
}

Mat3 SpatialTransform::euler_deg(double rx, double ry, double rz) {
    constexpr double d = std::numbers::pi / 180.0;
    return (Eigen::AngleAxisd(rz * d, Vec3::UnitZ()) * Eigen::AngleAxisd(ry * d, Vec3::UnitY()) *
            Eigen::AngleAxisd(rx * d, Vec3::UnitX()))
        .toRotationMatrix();
}

SpatialTransform SpatialTransform::about(const Vec3& pivot, const Mat3& rotation, double scale,
                                         const Vec3& translation) {
    SpatialTransform h;
    h.rotation = rotation;
    h.scale = scale;
    h.translation = pivot - scale * (rotation * pivot) + translation;
    return h;
}

SpatialTransform SpatialTransform::after(const SpatialTransform& first) const {
    SpatialTransform h;
    h.rotation = rotation * first.rotation;
    h.scale = scale * first.scale;
    h.translation = scale * (rotation * first.translation) + translation;
    return h;
}

void SpatialTransform::validate() const {
    if (!(scale > 0.0) || !std::isfinite(scale)) throw UsageError("transform scale must be positive");
    const double orth = (rotation.transpose() * rotation - Mat3::Identity()).cwiseAbs().maxCoeff();
    if (orth > 1e-6 || std::abs(rotation.determinant() - 1.0) > 1e-6) {
        throw UsageError("transform rotation is not a proper rotation matrix");
    }
    if (!translation.allFinite()) throw UsageError("transform translation is not finite");
}

Mesh depth_to_mesh(const DepthMap& depth, const CameraIntrinsics& k, const Image& appearance,
                   double discontinuity_ratio) {
    if (depth.width != appearance.width || depth.height != appearance.height) {
        throw DataError("depth map is " + std::to_string(depth.width) + "x" + std::to_string(depth.height) +
                        " but the appearance image is " + std::to_string(appearance.width) + "x" +
                        std::to_string(appearance.height));
    }
    if (depth.depth.size() != depth.width * depth.height) throw DataError("depth map size does not match its header");
    if (depth.width < 2 || depth.height < 2) throw DataError("depth map must be at least 2x2");
    if (!(discontinuity_ratio >= 1.0)) throw UsageError("discontinuity ratio must be >= 1");
    k.validate();

    const std::size_t w = depth.width;
    const std::size_t h = depth.height;
    Mesh m;
    m.vertices.resize(w * h);
    m.texcoords.resize(w * h);
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            const double z = depth.at(x, y);
            const std::size_t i = y * w + x;
            m.texcoords[i] = {(static_cast<double>(x) + 0.5) / static_cast<double>(w),
                              (static_cast<double>(y) + 0.5) / static_cast<double>(h)};
            if (std::isnan(z)) {
                m.vertices[i] = Vec3::Constant(std::numeric_limits<double>::quiet_NaN());
                continue;
            }
            if (!(z > 0.0) || !std::isfinite(z)) {
                throw DataError("non-positive depth " + std::to_string(z) + " at pixel (" + std::to_string(x) + ", " +
                                std::to_string(y) + ")");
            }
            // Same rounding as the chief-ray slope in raytrace, so pinhole rays
            // through pixel centres land exactly on vertices.
            m.vertices[i] = {(static_cast<double>(x) - k.cx) / k.focal_length * z,
                             (static_cast<double>(y) - k.cy) / k.focal_length * z, z};
        }
    }

    auto keep = [&](std::uint32_t a, std::uint32_t b, std::uint32_t c) {
        const double za = depth.depth[a];
        const double zb = depth.depth[b];
        const double zc = depth.depth[c];
        if (std::isnan(za) || std::isnan(zb) || std::isnan(zc)) return false;
        if (std::max({za, zb, zc}) > discontinuity_ratio * std::min({za, zb, zc})) return false;
        const Vec3 e1 = m.vertices[b] - m.vertices[a];
        const Vec3 e2 = m.vertices[c] - m.vertices[a];
        return e1.cross(e2).norm() > 1e-12 * e1.squaredNorm() + 1e-300;
    };
    m.triangles.reserve(2 * (w - 1) * (h - 1));
    for (std::size_t y = 0; y + 1 < h; ++y) {
        for (std::size_t x = 0; x + 1 < w; ++x) {
            const auto i00 = static_cast<std::uint32_t>(y * w + x);
            const auto i10 = i00 + 1;
            const auto i01 = static_cast<std::uint32_t>(i00 + w);
            const auto i11 = i01 + 1;
            if (keep(i00, i10, i01)) m.triangles.push_back({i00, i10, i01});
            if (keep(i10, i11, i01)) m.triangles.push_back({i10, i11, i01});
        }
    }
    m.texture = std::make_shared<const Image>(appearance);
    return m;
}

Mesh apply_transform(const Mesh& m, const SpatialTransform& h) {
    Mesh out = m;
    for (Vec3& v : out.vertices) v = h.apply(v);
    return out;
}

}  // namespace matprobe::renderer
