#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "matprobe/error.hpp"
#include "matprobe/parallel.hpp"
#include "matprobe/renderer.hpp"
#include "matprobe/rng.hpp"

namespace matprobe::renderer {

namespace {

struct Aabb {
    Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
    Vec3 hi = Vec3::Constant(-std::numeric_limits<double>::infinity());
    void grow(const Vec3& p) {
        lo = lo.cwiseMin(p);
        hi = hi.cwiseMax(p);
    }
    void grow(const Aabb& b) {
        lo = lo.cwiseMin(b.lo);
        hi = hi.cwiseMax(b.hi);
    }
};

struct Tri {
    Vec3 a, b, c;
    std::uint32_t mesh;
    std::uint32_t index;
};

struct Node {
    Aabb box;
    std::uint32_t first = 0;  // leaf: first triangle; inner: right child
    std::uint32_t count = 0;  // 0 for inner nodes
};

constexpr std::uint32_t kLeafSize = 4;

// Per-ray constants of the watertight test.
struct Shear {
    int kx, ky, kz;
    double sx, sy, sz;

    explicit Shear(const Vec3& d) {
        kz = 0;
        if (std::abs(d.y()) > std::abs(d[kz])) kz = 1;
        if (std::abs(d.z()) > std::abs(d[kz])) kz = 2;
        kx = (kz + 1) % 3;
        ky = (kx + 1) % 3;
        if (d[kz] < 0.0) std::swap(kx, ky);
        sx = d[kx] / d[kz];
        sy = d[ky] / d[kz];
        sz = 1.0 / d[kz];
    }
};

std::optional<std::array<double, 3>> watertight(const Shear& s, const Vec3& org, const Vec3& a, const Vec3& b,
                                                const Vec3& c, double t_max) {
    const Vec3 A = a - org;
    const Vec3 B = b - org;
    const Vec3 C = c - org;
    const double ax = A[s.kx] - s.sx * A[s.kz];
    const double ay = A[s.ky] - s.sy * A[s.kz];
    const double bx = B[s.kx] - s.sx * B[s.kz];
    const double by = B[s.ky] - s.sy * B[s.kz];
    const double cx = C[s.kx] - s.sx * C[s.kz];
    const double cy = C[s.ky] - s.sy * C[s.kz];
    const double u = cx * by - cy * bx;
    const double v = ax * cy - ay * cx;
    const double w = bx * ay - by * ax;
    if ((u < 0.0 || v < 0.0 || w < 0.0) && (u > 0.0 || v > 0.0 || w > 0.0)) return std::nullopt;
    const double det = u + v + w;
    if (det == 0.0) return std::nullopt;
    const double t_scaled = u * (s.sz * A[s.kz]) + v * (s.sz * B[s.kz]) + w * (s.sz * C[s.kz]);
    const double t = t_scaled / det;
    if (!(t > 0.0) || t >= t_max) return std::nullopt;
    return std::array<double, 3>{t, v / det, w / det};
}

}  // namespace

std::optional<std::array<double, 3>> intersect_triangle(const Vec3& origin, const Vec3& direction, const Vec3& a,
                                                        const Vec3& b, const Vec3& c) {
    return watertight(Shear(direction), origin, a, b, c, std::numeric_limits<double>::infinity());
}

struct Scene::Impl {
    std::vector<Mesh> meshes;
    std::vector<Tri> tris;
    std::vector<Node> nodes;
    std::size_t channels = 0;

    std::uint32_t build(std::uint32_t begin, std::uint32_t end, std::vector<Vec3>& centroids) {
        const auto id = static_cast<std::uint32_t>(nodes.size());
        nodes.emplace_back();
        Aabb box;
        Aabb cbox;
        for (std::uint32_t i = begin; i < end; ++i) {
            box.grow(tris[i].a);
            box.grow(tris[i].b);
            box.grow(tris[i].c);
            cbox.grow(centroids[i]);
        }
        nodes[id].box = box;
        if (end - begin <= kLeafSize) {
            nodes[id].first = begin;
            nodes[id].count = end - begin;
            return id;
        }
        int axis = 0;
        const Vec3 extent = cbox.hi - cbox.lo;
        if (extent.y() > extent[axis]) axis = 1;
        if (extent.z() > extent[axis]) axis = 2;
        const std::uint32_t mid = begin + (end - begin) / 2;
        // Sort an index permutation so triangles and centroids move together.
        std::vector<std::uint32_t> order(end - begin);
        for (std::uint32_t i = 0; i < order.size(); ++i) order[i] = begin + i;
        std::nth_element(order.begin(), order.begin() + (mid - begin), order.end(),
                         [&](std::uint32_t x, std::uint32_t y) {
                             if (centroids[x][axis] != centroids[y][axis]) return centroids[x][axis] < centroids[y][axis];
                             return x < y;
                         });
        std::vector<Tri> t2;
        std::vector<Vec3> c2;
        t2.reserve(order.size());
        c2.reserve(order.size());
        for (std::uint32_t i : order) {
            t2.push_back(tris[i]);
            c2.push_back(centroids[i]);
        }
        std::copy(t2.begin(), t2.end(), tris.begin() + begin);
        std::copy(c2.begin(), c2.end(), centroids.begin() + begin);

        build(begin, mid, centroids);
        const std::uint32_t right = build(mid, end, centroids);
        nodes[id].first = right;
        nodes[id].count = 0;
        return id;
    }
};

Scene::Scene(std::vector<Mesh> meshes) : impl_(std::make_unique<Impl>()) {
    impl_->meshes = std::move(meshes);
    std::vector<Vec3> centroids;
    for (std::size_t mi = 0; mi < impl_->meshes.size(); ++mi) {
        const Mesh& m = impl_->meshes[mi];
        m.validate();
        if (impl_->channels == 0) impl_->channels = m.texture->channels;
        if (m.texture->channels != impl_->channels) throw DataError("scene meshes have different channel counts");
        for (std::size_t ti = 0; ti < m.triangles.size(); ++ti) {
            const auto& tri = m.triangles[ti];
            Tri t{m.vertices[tri[0]], m.vertices[tri[1]], m.vertices[tri[2]], static_cast<std::uint32_t>(mi),
                  static_cast<std::uint32_t>(ti)};
            if (!t.a.allFinite() || !t.b.allFinite() || !t.c.allFinite()) continue;
            centroids.push_back((t.a + t.b + t.c) / 3.0);
            impl_->tris.push_back(t);
        }
    }
    if (impl_->tris.empty()) throw DataError("cannot raytrace an empty mesh");
    impl_->nodes.reserve(2 * impl_->tris.size() / kLeafSize + 2);
    impl_->build(0, static_cast<std::uint32_t>(impl_->tris.size()), centroids);
}

Scene::~Scene() = default;
Scene::Scene(Scene&&) noexcept = default;
Scene& Scene::operator=(Scene&&) noexcept = default;

std::size_t Scene::channels() const { return impl_->channels; }
std::size_t Scene::triangle_count() const { return impl_->tris.size(); }
const std::vector<Mesh>& Scene::meshes() const { return impl_->meshes; }

std::optional<Scene::Hit> Scene::intersect(const Vec3& origin, const Vec3& direction) const {
    const Shear shear(direction);
    Vec3 inv;
    for (int i = 0; i < 3; ++i) {
        inv[i] = direction[i] != 0.0 ? 1.0 / direction[i] : std::copysign(1e300, direction[i]);
    }
    std::optional<Hit> best;
    double t_max = std::numeric_limits<double>::infinity();

    auto box_entry = [&](const Aabb& b) {
        double t0 = 0.0;
        double t1 = t_max;
        for (int i = 0; i < 3; ++i) {
            double lo = (b.lo[i] - origin[i]) * inv[i];
            double hi = (b.hi[i] - origin[i]) * inv[i];
            if (lo > hi) std::swap(lo, hi);
            t0 = std::max(t0, lo);
            t1 = std::min(t1, hi * (1.0 + 4e-16));
        }
        return t0 <= t1 ? t0 : std::numeric_limits<double>::infinity();
    };

    const auto& nodes = impl_->nodes;
    std::uint32_t stack[64];
    int sp = 0;
    if (box_entry(nodes[0].box) == std::numeric_limits<double>::infinity()) return best;
    stack[sp++] = 0;
    while (sp > 0) {
        const Node& n = nodes[stack[--sp]];
        if (n.count > 0) {
            for (std::uint32_t i = n.first; i < n.first + n.count; ++i) {
                const Tri& t = impl_->tris[i];
                if (auto r = watertight(shear, origin, t.a, t.b, t.c, t_max)) {
                    t_max = (*r)[0];
                    best = Hit{(*r)[0], t.mesh, t.index, (*r)[1], (*r)[2]};
                }
            }
            continue;
        }
        const std::uint32_t left = static_cast<std::uint32_t>(&n - nodes.data()) + 1;
        const std::uint32_t right = n.first;
        const double tl = box_entry(nodes[left].box);
        const double tr = box_entry(nodes[right].box);
        const bool inf_l = tl == std::numeric_limits<double>::infinity();
        const bool inf_r = tr == std::numeric_limits<double>::infinity();
        // Push the farther child first so the nearer one is popped next.
        if (!inf_l && !inf_r) {
            if (tl <= tr) {
                stack[sp++] = right;
                stack[sp++] = left;
            } else {
                stack[sp++] = left;
                stack[sp++] = right;
            }
        } else if (!inf_l) {
            stack[sp++] = left;
        } else if (!inf_r) {
            stack[sp++] = right;
        }
    }
    return best;
}

double Scene::shade(const Hit& hit, std::size_t c) const {
    const Mesh& m = impl_->meshes[hit.mesh];
    const auto& tri = m.triangles[hit.triangle];
    const Eigen::Vector2d uv =
        (1.0 - hit.b1 - hit.b2) * m.texcoords[tri[0]] + hit.b1 * m.texcoords[tri[1]] + hit.b2 * m.texcoords[tri[2]];
    const Image& tex = *m.texture;
    return tex.bilinear(uv.x() * static_cast<double>(tex.width) - 0.5, uv.y() * static_cast<double>(tex.height) - 0.5,
                        c);
}

RayGrid RayGrid::covering(const CameraIntrinsics& k, double spacing) {
    if (!(spacing > 0.0)) throw UsageError("ray spacing must be positive");
    RayGrid g;
    g.spacing = spacing;
    g.width = static_cast<std::size_t>(std::lround(static_cast<double>(k.width) / spacing));
    g.height = static_cast<std::size_t>(std::lround(static_cast<double>(k.height) / spacing));
    return g;
}

Vec3 focal_point(const CameraIntrinsics& k, const ThinLens& lens, double u, double v) {
    const Vec3 dir((u - k.cx) / k.focal_length, (v - k.cy) / k.focal_length, 1.0);
    return lens.focus_distance * dir.normalized();
}

Eigen::Vector2d concentric_disk(double s, double t) {
    const double a = 2.0 * s - 1.0;
    const double b = 2.0 * t - 1.0;
    if (a == 0.0 && b == 0.0) return {0.0, 0.0};
    double r;
    double phi;
    if (std::abs(a) > std::abs(b)) {
        r = a;
        phi = std::numbers::pi / 4.0 * (b / a);
    } else {
        r = b;
        phi = std::numbers::pi / 2.0 - std::numbers::pi / 4.0 * (a / b);
    }
    return {r * std::cos(phi), r * std::sin(phi)};
}

std::vector<Eigen::Vector2d> pupil_samples(std::size_t spp, PupilSampling sampling, std::uint64_t seed) {
    std::vector<Eigen::Vector2d> out;
    out.reserve(spp);
    std::uint64_t k = 0;
    auto draw = [&] { return rng::uniform(seed, k++); };
    std::size_t nx = 0;
    std::size_t ny = 0;
    if (sampling == PupilSampling::stratified) {
        nx = static_cast<std::size_t>(std::sqrt(static_cast<double>(spp)));
        while ((nx + 1) * (nx + 1) <= spp) ++nx;
        ny = spp / nx;
        for (std::size_t j = 0; j < ny; ++j) {
            for (std::size_t i = 0; i < nx; ++i) {
                const double s = (static_cast<double>(i) + draw()) / static_cast<double>(nx);
                const double t = (static_cast<double>(j) + draw()) / static_cast<double>(ny);
                out.push_back(concentric_disk(s, t));
            }
        }
    }
    while (out.size() < spp) {
        const double s = draw();
        out.push_back(concentric_disk(s, draw()));
    }
    return out;
}

namespace {


}  // namespace

RaytraceResult raytrace(const Scene& scene, const CameraIntrinsics& k, const ThinLens& lens, const RayGrid& grid,
                        const RaytraceOptions& opts) {
    k.validate();
    lens.validate();
    if (opts.spp < 1) throw UsageError("spp must be >= 1");
    if (grid.width == 0 || grid.height == 0) throw UsageError("empty ray grid");
    const std::size_t ch = scene.channels();
    RaytraceResult res;
    res.irradiance = Image(grid.width, grid.height, ch);
    res.missed.assign(grid.width * grid.height, 0);
    std::vector<std::size_t> row_misses(grid.height, 0);
    const bool pinhole = lens.pupil_radius == 0.0;
    const std::size_t rays = pinhole ? 1 : opts.spp;

    parallel_for(grid.height, opts.threads, [&](std::size_t y) {
        std::vector<double> acc(ch);
        const double v = grid.coord(y);
        for (std::size_t x = 0; x < grid.width; ++x) {
            const std::size_t pixel = y * grid.width + x;
            const double u = grid.coord(x);
            const Vec3 chief((u - k.cx) / k.focal_length, (v - k.cy) / k.focal_length, 1.0);
            const Vec3 focus = focal_point(k, lens, u, v);
            std::fill(acc.begin(), acc.end(), 0.0);
            std::size_t misses = 0;
            const auto pupil = pinhole ? std::vector<Eigen::Vector2d>{Eigen::Vector2d::Zero()}
                                       : pupil_samples(rays, opts.sampling, rng::derive(opts.seed, pixel));
            for (const auto& p2 : pupil) {
                const Vec3 origin(lens.pupil_radius * p2.x(), lens.pupil_radius * p2.y(), 0.0);
                if (auto hit = scene.intersect(origin, pinhole ? chief : Vec3(focus - origin))) {
                    for (std::size_t c = 0; c < ch; ++c) acc[c] += scene.shade(*hit, c);
                } else {
                    ++misses;
                    for (std::size_t c = 0; c < ch; ++c) acc[c] += opts.background;
                }
            }
            for (std::size_t c = 0; c < ch; ++c) {
                res.irradiance.at(x, y, c) = acc[c] / static_cast<double>(rays);
            }
            res.missed[pixel] = misses > 0 ? 1 : 0;
            row_misses[y] += misses;
        }
    });
    std::size_t total = 0;
    for (std::size_t m : row_misses) total += m;
    res.miss_fraction = static_cast<double>(total) / static_cast<double>(grid.width * grid.height * rays);
    return res;
}

RaytraceResult raytrace(const Mesh& mesh, const CameraIntrinsics& k, const ThinLens& lens, const RayGrid& grid,
                        const RaytraceOptions& opts) {
    const Scene scene({mesh});
    return raytrace(scene, k, lens, grid, opts);
}

}  // namespace matprobe::renderer
