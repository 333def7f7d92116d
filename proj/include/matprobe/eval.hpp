#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "matprobe/dataio.hpp"
#include "matprobe/hiergat.hpp"
#include "matprobe/taxonomy.hpp"

namespace matprobe::eval {

using hiergat::HierGatModel;
using taxonomy::HierarchicalLabel;
using taxonomy::NodeId;
using taxonomy::Taxonomy;

/// Rows are true classes, columns predictions, both in level preorder.
struct Confusion {
    std::vector<NodeId> classes;
    std::vector<std::vector<std::size_t>> counts;

    [[nodiscard]] std::size_t support(std::size_t row) const;
};

struct SamplePrediction {
    std::string id;
    NodeId label;
    std::vector<NodeId> per_level;  // argmax within each level, root first
};

struct EvalReport {
    std::vector<std::string> level_names;
    std::vector<double> level_accuracy;
    std::vector<Confusion> confusion;
    double flat_accuracy = 0.0;
    double mean_path_distance = 0.0;
    std::size_t samples = 0;
    std::vector<SamplePrediction> predictions;

    [[nodiscard]] nlohmann::json to_json() const;
    /// id,label,prediction,correct,path_distance then one column per level.
    [[nodiscard]] std::string predictions_csv(const Taxonomy& t) const;
};

/// Fraction correct at each level independently; predictions hold one id per
/// level, root first.
[[nodiscard]] std::vector<double> per_level_accuracy(const std::vector<std::vector<NodeId>>& predictions,
                                                     const std::vector<HierarchicalLabel>& labels);

[[nodiscard]] double mean_path_distance(const std::vector<NodeId>& predicted, const std::vector<NodeId>& labels,
                                        const Taxonomy& t);

/// Argmax of the node logits within every level.
[[nodiscard]] std::vector<NodeId> level_argmax(const Taxonomy& t, std::span<const double> logits);

/// Report over feature rows with their leaf labels.
[[nodiscard]] EvalReport evaluate(const HierGatModel& model, const numerics::Tensor& features,
                                  const std::vector<std::string>& ids, const std::vector<NodeId>& labels);

struct EvalOptions {
    std::string split = "test";
    bool grayscale = false;
    unsigned threads = 0;
};

/// Encodes the split's images (context images for "ood" when a record has
/// one) and evaluates them.
[[nodiscard]] EvalReport run_eval(const HierGatModel& model, const dataio::DatasetManifest& manifest,
                                  const dataio::Encoder& encoder, const EvalOptions& opts = {});
/// Same, reading features from a cache built for the manifest.
[[nodiscard]] EvalReport run_eval(const HierGatModel& model, const dataio::DatasetManifest& manifest,
                                  const dataio::FeatureCache& cache, const std::string& split);

/// Feature rows and labels of a split, in split order.
[[nodiscard]] hiergat::Dataset split_dataset(const dataio::DatasetManifest& manifest,
                                             const dataio::FeatureCache& cache, const std::string& split);

struct FewShotConfig {
    NodeId held_out;
    std::vector<std::size_t> counts{1, 2, 4, 8, 16, 32};
    std::uint64_t seed = 0;
    std::size_t finetune_epochs = 20;
    /// Independent draws of the reintroduced samples; metrics are averaged.
    std::size_t repeats = 1;

    void validate(const Taxonomy& t) const;
    [[nodiscard]] nlohmann::json to_json() const;
    static FewShotConfig from_json(const nlohmann::json& j);
};

struct FewShotPoint {
    std::size_t n = 0;
    double accuracy = 0.0;
    double path_distance = 0.0;
};

struct FewShotResult {
    NodeId held_out;
    std::vector<FewShotPoint> points;

    [[nodiscard]] std::string to_csv() const;
    [[nodiscard]] nlohmann::json to_json() const;
};

/*
 * Pretrains on a copy of the taxonomy with the held-out leaf removed, using
 * the training split without that class. For each n, n training samples of
 * the class are drawn (nested draws within one repeat), the pretrained
 * weights are copied into a full-taxonomy model whose held-out prototype is
 * the mean of those n features, and the model is finetuned on the base
 * training set plus the n samples. Accuracy and mean path distance are
 * measured on the held-out class's test split.
 */
[[nodiscard]] FewShotResult few_shot_run(const Taxonomy& taxonomy, const dataio::DatasetManifest& manifest,
                                         const dataio::FeatureCache& cache, const hiergat::ModelConfig& model_cfg,
                                         const hiergat::TrainingConfig& train_cfg, const FewShotConfig& cfg);

/// Prototypes from the training rows, then fit. Returns the trained model.
[[nodiscard]] HierGatModel train_model(const Taxonomy& taxonomy, const hiergat::Dataset& train,
                                       const hiergat::ModelConfig& model_cfg,
                                       const hiergat::TrainingConfig& train_cfg,
                                       const hiergat::EpochCallback& on_epoch = {});

}  // namespace matprobe::eval
