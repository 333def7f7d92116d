#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "matprobe/dataio.hpp"
#include "matprobe/error.hpp"
#include "matprobe/hiergat.hpp"
#include "matprobe/image.hpp"
#include "matprobe/taxonomy.hpp"

namespace matprobe::probe {

using hiergat::HierGatModel;
using taxonomy::NodeId;
using taxonomy::Taxonomy;

/// A probe coordinate outside the image.
class CoordinateError : public DataError {
public:
    using DataError::DataError;
};

struct McConfig {
    double dropout_rate = 0.2;
    std::size_t num_samples = 32;
    std::uint64_t seed = 0;
    unsigned threads = 1;  // 0 = hardware concurrency

    void validate() const;
};

/// Monte-Carlo dropout statistics, indexed by taxonomy preorder.
struct PredictionDistribution {
    std::vector<double> mean;
    std::vector<double> stddev;
    std::vector<double> entropy_per_level;  // nats, of the mean distribution

    [[nodiscard]] nlohmann::json to_json(const Taxonomy& t) const;
};

/// Entropy of the mean distribution over each level's members.
[[nodiscard]] std::vector<double> level_entropies(const Taxonomy& t, std::span<const double> mean);

/// num_samples dropout passes, pass s seeded with derive(seed, s).
[[nodiscard]] PredictionDistribution mc_predict(const HierGatModel& model, std::span<const double> features,
                                                const McConfig& cfg);
[[nodiscard]] PredictionDistribution mc_predict(const HierGatModel& model, const dataio::Encoder& encoder,
                                                const Image& window, const McConfig& cfg);

struct Window {
    std::size_t x = 0;
    std::size_t y = 0;
    std::size_t size = 0;

    friend bool operator==(const Window&, const Window&) = default;
};

struct ProbeConfig {
    McConfig mc;
    double threshold = 0.7;
    double lambda = 1.0;
    std::vector<std::size_t> window_sizes{64, 128, 256, 512, 1024};
    /// Windows are resampled to this square size before encoding; 0 passes
    /// the crop through unchanged.
    std::size_t input_size = dataio::TrivialEncoder::kInput;
    taxonomy::QualityThresholds quality;

    void validate() const;
};

/// Square windows around (x, y). A size larger than the image shrinks to the
/// image's short side; a window crossing an edge is shifted inside. Sizes
/// that collapse onto an earlier one are dropped.
[[nodiscard]] std::vector<Window> candidate_windows(std::size_t width, std::size_t height, std::size_t x,
                                                    std::size_t y, std::span<const std::size_t> sizes);

struct WindowChoice {
    Window window;
    PredictionDistribution distribution;
    std::vector<std::pair<Window, double>> candidates;  // material-level entropy of each
};

/// Evaluates every candidate and keeps the lowest material-level entropy;
/// ties keep the smaller window.
[[nodiscard]] WindowChoice best_window(const Image& image, std::size_t x, std::size_t y, const HierGatModel& model,
                                       const dataio::Encoder& encoder, const ProbeConfig& cfg);

struct PathStep {
    NodeId id;
    std::string name;
    std::string level;
    double confidence = 0.0;
};

struct HierarchicalPrediction {
    std::vector<PathStep> path;  // root first
    std::size_t finest_level = 0;
    std::optional<Window> window;
    std::vector<std::string> tags;
    std::vector<double> entropy_per_level;

    [[nodiscard]] const NodeId& finest() const { return path.back().id; }
    [[nodiscard]] nlohmann::json to_json(const Taxonomy& t) const;
};

/*
 * Descends from the root, at each step taking the child with the largest
 * mean - lambda * stddev. Stops at a leaf or when that child's mean is
 * below the threshold. The root is always accepted.
 */
[[nodiscard]] HierarchicalPrediction best_first_classify(const PredictionDistribution& dist, const Taxonomy& t,
                                                         double threshold = 0.7, double lambda = 1.0);

/// Tags from the deepest path node that has a property entry, if any.
void annotate(HierarchicalPrediction& pred, const taxonomy::PropertyTable& properties,
              const taxonomy::QualityThresholds& thresholds);

/// best_window, best_first_classify, then annotate when properties are given.
[[nodiscard]] HierarchicalPrediction probe(const Image& image, std::size_t x, std::size_t y, const HierGatModel& model,
                                           const dataio::Encoder& encoder, const taxonomy::PropertyTable* properties,
                                           const ProbeConfig& cfg);

/// Copy of `image` with the window outline and the path labels drawn in.
[[nodiscard]] Image annotate_image(const Image& image, const HierarchicalPrediction& pred);

}  // namespace matprobe::probe
