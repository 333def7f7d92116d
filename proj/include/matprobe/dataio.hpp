#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "matprobe/image.hpp"
#include "matprobe/numerics/tensor.hpp"
#include "matprobe/renderer.hpp"
#include "matprobe/taxonomy.hpp"

namespace matprobe::dataio {

using taxonomy::NodeId;
using taxonomy::Taxonomy;

// ---- rasters -------------------------------------------------------------

[[nodiscard]] double srgb_to_linear(double v);
[[nodiscard]] double linear_to_srgb(double v);

/// 8- or 16-bit gray/RGB PNG (alpha is dropped) decoded to linear light in
/// [0, 1] through the sRGB transfer function.
[[nodiscard]] Image read_png(const std::filesystem::path& path);
[[nodiscard]] Image decode_png(std::string_view bytes);
/// Encodes linear light to sRGB, clamps to [0, 1], and quantises to
/// `bit_depth` (8 or 16).
void write_png(const std::filesystem::path& path, const Image& img, int bit_depth = 16);
[[nodiscard]] std::string encode_png(const Image& img, int bit_depth = 16);

/// "DPTH" | u8 version | u32 width | u32 height | float32 depth, little-endian.
[[nodiscard]] renderer::DepthMap read_depth_raster(const std::filesystem::path& path);
[[nodiscard]] renderer::DepthMap decode_depth_raster(std::string_view bytes);
void write_depth_raster(const std::filesystem::path& path, const renderer::DepthMap& d);
[[nodiscard]] std::string encode_depth_raster(const renderer::DepthMap& d);

/// BT.709 luminance in linear light, replicated to `channels` channels.
[[nodiscard]] Image to_grayscale(const Image& img, std::size_t channels);
[[nodiscard]] Image to_grayscale(const Image& img);

// ---- manifests -----------------------------------------------------------

struct SampleRecord {
    std::string id;
    std::filesystem::path appearance;  // absolute once loaded
    std::optional<std::filesystem::path> depth;
    std::optional<std::filesystem::path> context;
    NodeId label;
    nlohmann::json metadata = nlohmann::json::object();
};

inline constexpr const char* kSplitNames[] = {"train", "val", "test", "ood"};

struct DatasetManifest {
    std::filesystem::path root;  // relative paths resolve against this
    std::string taxonomy_hash;
    std::vector<SampleRecord> records;
    std::map<std::string, std::vector<std::string>> splits;

    [[nodiscard]] const SampleRecord& record(std::string_view id) const;
    [[nodiscard]] bool contains(std::string_view id) const;
    /// Records of a split in declaration order; an undeclared split is empty.
    [[nodiscard]] std::vector<const SampleRecord*> split(const std::string& name) const;
    /// Structural checks, plus label resolution when a taxonomy is given.
    void validate(const Taxonomy* t = nullptr) const;

    [[nodiscard]] nlohmann::json to_json() const;
    static DatasetManifest from_json(const nlohmann::json& j, const std::filesystem::path& root);
};

/// Parses and validates; with a taxonomy, labels must name its leaves and a
/// declared taxonomy hash must match.
[[nodiscard]] DatasetManifest load_manifest(const std::filesystem::path& path, const Taxonomy* t = nullptr);
void save_manifest(const std::filesystem::path& path, const DatasetManifest& m);

/// Stratified train/val/test assignment by label (ood untouched). Each class
/// keeps at least one training record.
void assign_splits(DatasetManifest& m, std::uint64_t seed, double train = 0.8, double val = 0.1);

/// Appearance + depth + intrinsics for rendering. Intrinsics come from the
/// record's "intrinsics" metadata, else a centred 60 degree field of view.
[[nodiscard]] renderer::Sample load_sample(const SampleRecord& r);
[[nodiscard]] renderer::CameraIntrinsics record_intrinsics(const SampleRecord& r, std::size_t width,
                                                           std::size_t height);

// ---- encoders ------------------------------------------------------------

class Encoder {
public:
    virtual ~Encoder() = default;
    [[nodiscard]] virtual std::string name() const = 0;
    [[nodiscard]] virtual std::size_t dim() const = 0;
    [[nodiscard]] virtual std::vector<double> encode(const Image& img) const = 0;
};

/*
 * Hand-built 1024-d texture descriptor standing in for a learned backbone.
 * The image is reduced to luminance, resampled to 128x128 and divided by its
 * mean, so features are invariant to exposure. Layout:
 *   [0, 48)     4x4 cells: mean, variance, gradient energy
 *   [48, 240)   8x8 cells: same
 *   [240, 432)  whole-image power spectrum, 16 log radial x 12 orientation bins
 *   [432, 688)  per-quadrant power spectra, 8 radial x 8 orientation bins
 *   [688, 704)  histogram of normalised intensity
 *   [704, 1024) zero
 * Each block is scaled to unit RMS.
 */
class TrivialEncoder final : public Encoder {
public:
    static constexpr std::size_t kDim = 1024;
    static constexpr std::size_t kInput = 128;
    static constexpr std::size_t kMinSize = 32;

    [[nodiscard]] std::string name() const override { return "trivial"; }
    [[nodiscard]] std::size_t dim() const override { return kDim; }
    [[nodiscard]] std::vector<double> encode(const Image& img) const override;
};

struct FeatureCache {
    std::string encoder;
    std::size_t dim = 0;
    std::vector<std::string> ids;
    numerics::Tensor features;  // ids.size() x dim

    [[nodiscard]] std::optional<std::size_t> index_of(std::string_view id) const;
    [[nodiscard]] std::span<const double> row(std::size_t i) const;
    [[nodiscard]] std::span<const double> at(std::string_view id) const;
};

enum class ImageSource { appearance, context };

struct CacheBuildOptions {
    bool abort_on_error = true;
    bool grayscale = false;
    ImageSource source = ImageSource::appearance;
    unsigned threads = 0;  // 0 = hardware concurrency
};

struct CacheBuildReport {
    FeatureCache cache;
    std::vector<std::pair<std::string, std::string>> failures;  // (record id, message)
};

/// One vector per record in manifest order. Deterministic; encoder failures
/// abort with the record id, or are collected when abort_on_error is off.
[[nodiscard]] CacheBuildReport build_feature_cache(const DatasetManifest& m, const Encoder& enc,
                                                   const CacheBuildOptions& opts = {});
void save_feature_cache(const std::filesystem::path& path, const FeatureCache& c);
/// With expected_dim, a cache of another width is refused naming both dims.
[[nodiscard]] FeatureCache load_feature_cache(const std::filesystem::path& path,
                                              std::optional<std::size_t> expected_dim = std::nullopt);

/// Features from an external encoder, re-ordered to the manifest. Every
/// record must be present in `external`.
[[nodiscard]] FeatureCache import_feature_cache(const DatasetManifest& m, const FeatureCache& external);

// ---- synthetic data ------------------------------------------------------

/// Parameter ranges of one leaf's texture family; draws are uniform within.
struct TextureFamily {
    std::pair<double, double> frequency{0.1, 0.12};  // cycles per pixel
    std::pair<double, double> orientation{0.0, 10.0};  // degrees
    std::pair<double, double> contrast{0.3, 0.4};
    std::pair<double, double> mean{0.35, 0.55};
    double noise = 0.03;

    [[nodiscard]] nlohmann::json to_json() const;
    static TextureFamily from_json(const nlohmann::json& j);
};

struct SyntheticSpec {
    nlohmann::json taxonomy;
    std::map<NodeId, TextureFamily> families;  // one per leaf
    std::size_t image_size = 96;
    std::size_t per_leaf = 40;
    std::uint64_t seed = 0;
    double depth = 0.5;            // metres to the flat sample
    double field_of_view = 40.0;  // degrees

    /// 3 levels (root, 3 groups, 9 leaves). Groups own disjoint frequency
    /// bands, leaves within a group own disjoint orientation ranges.
    static SyntheticSpec standard();
    void validate() const;
    [[nodiscard]] nlohmann::json to_json() const;
    static SyntheticSpec from_json(const nlohmann::json& j);
};

/// Draws one texture image from a family.
[[nodiscard]] Image synth_texture(const TextureFamily& f, std::size_t width, std::size_t height, std::uint64_t seed);

struct SyntheticDataset {
    Taxonomy taxonomy;
    DatasetManifest manifest;
};

/// Writes images/, depth/, taxonomy.json and manifest.json under out_dir.
/// Identical spec and seed give identical files.
SyntheticDataset generate_synthetic(const SyntheticSpec& spec, const std::filesystem::path& out_dir);

// ---- novel views -------------------------------------------------------

/// Random pose, lens and sensor draws for rendered views. Angles in degrees.
struct PoseDistribution {
    double max_tilt = 20.0;                           // about a random in-plane axis
    double max_roll = 15.0;                           // in-plane rotation, symmetric
    std::pair<double, double> scale{1.0, 1.2};        // log-uniform, about the centroid
    std::pair<double, double> pupil_radius{0.0, 0.0};  // metres
    std::pair<double, double> read_noise{0.0, 0.0};
    double photon_gain = 0.0;

    void validate() const;
    [[nodiscard]] nlohmann::json to_json() const;
    static PoseDistribution from_json(const nlohmann::json& j);
    /// Fills transform, lens radius and noise of `base` from one draw.
    [[nodiscard]] renderer::ViewRecipe sample(const renderer::ViewRecipe& base, const renderer::Vec3& centroid,
                                              std::uint64_t seed) const;
};

/*
 * Render recipe file: either explicit views applied to every record,
 *   {"views": [<recipe>, ...], "seed": s}
 * or random draws,
 *   {"random": <pose distribution>, "count": n, "base": <recipe>, "seed": s}
 * Per-record seeds are derived from the plan seed, the record index and the
 * view index.
 */
struct RenderPlan {
    std::vector<nlohmann::json> views;
    std::optional<PoseDistribution> random;
    std::size_t count = 0;
    nlohmann::json base = nlohmann::json::object();
    std::uint64_t seed = 0;

    [[nodiscard]] std::size_t views_per_record() const { return random ? count : views.size(); }
    void validate() const;
    [[nodiscard]] nlohmann::json to_json() const;
    static RenderPlan from_json(const nlohmann::json& j);
};

/// The recipe for view k of record i.
[[nodiscard]] renderer::ViewRecipe plan_recipe(const RenderPlan& plan, const renderer::Vec3& centroid, std::size_t i,
                                               std::size_t k);

struct RenderViewsOptions {
    std::vector<std::string> splits;  // empty = every record
    unsigned threads = 0;
};

/// Renders every view of every selected record into out_dir/images and
/// writes out_dir/manifest.json. Views inherit their source's label and
/// split; ids are "<source>_v<k>".
DatasetManifest render_views(const DatasetManifest& m, const RenderPlan& plan, const std::filesystem::path& out_dir,
                             const RenderViewsOptions& opts = {});

/// Records and splits of `b` appended to `a`; ids must not collide.
[[nodiscard]] DatasetManifest merge_manifests(const DatasetManifest& a, const DatasetManifest& b);

}  // namespace matprobe::dataio
