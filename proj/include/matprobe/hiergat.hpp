#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "matprobe/numerics/ops.hpp"
#include "matprobe/numerics/tape.hpp"
#include "matprobe/taxonomy.hpp"

namespace matprobe::hiergat {

using numerics::Parameter;
using numerics::Tape;
using numerics::Tensor;
using numerics::Var;
using taxonomy::NodeId;
using taxonomy::Taxonomy;

struct ModelConfig {
    std::size_t input_dim = 1024;
    std::size_t hidden_dim = 512;
    std::size_t output_dim = 256;
    std::size_t layers = 2;
    std::size_t heads = 1;
    double leaky_slope = 0.2;
    /// Dropout on the perceptron hidden activations while training.
    double dropout = 0.2;
    /// Adds child->parent edges next to the stored parent->child ones.
    bool reverse_edges = false;

    [[nodiscard]] nlohmann::json to_json() const;
    static ModelConfig from_json(const nlohmann::json& j);
    void validate() const;
};

struct TrainingConfig {
    std::size_t batch_size = 400;
    std::size_t epochs = 100;
    double learning_rate = 1e-4;
    double weight_decay = 5e-4;
    bool stratified = true;
    std::uint64_t seed = 0;

    [[nodiscard]] nlohmann::json to_json() const;
    static TrainingConfig from_json(const nlohmann::json& j);
};

struct Mlp {
    Parameter w1, b1, w2, b2;
};

struct GatLayerParams {
    std::size_t d_in = 0;
    std::size_t d_out = 0;
    Parameter att_proj;  // W shared by both ends of an edge, d_in x d_out
    Parameter att_dst;   // a = [att_dst ; att_src]
    Parameter att_src;
    // psi_b([h_i | h_j]) with the first weight split by half: rows for h_i, rows for h_j.
    Parameter msg_w1_dst, msg_w1_src, msg_b1, msg_w2, msg_b2;
    // psi_a([h_i | aggregate])
    Mlp update;
    std::optional<Parameter> residual;  // projection when d_in != d_out
};

/// Taxonomy graph plus the slot for one per-image global node.
class AugmentedGraph {
public:
    explicit AugmentedGraph(const taxonomy::DirectedTaxonomyGraph& base, bool reverse_edges = false);

    void insert_global_node(std::span<const double> features, std::size_t input_dim);
    void remove_global_node();
    [[nodiscard]] bool has_global() const { return global_.has_value(); }
    [[nodiscard]] const std::vector<double>& global_features() const;

    [[nodiscard]] std::size_t taxonomy_nodes() const { return n_; }
    /// Edge list including the global node (index taxonomy_nodes()) when present.
    [[nodiscard]] std::vector<std::pair<std::size_t, std::size_t>> edges() const;
    [[nodiscard]] std::size_t in_degree(std::size_t node) const;
    [[nodiscard]] std::size_t out_degree(std::size_t node) const;

private:
    std::size_t n_;
    std::vector<std::pair<std::size_t, std::size_t>> base_edges_;
    std::optional<std::vector<double>> global_;
};

struct ForwardOptions {
    bool dropout = false;
    double rate = 0.0;
    std::uint64_t seed = 0;
};

/// Per-sample outputs. Probabilities are within-level softmax values aligned
/// with taxonomy preorder indices.
struct NodeScores {
    std::vector<double> logits;
    std::vector<double> probs;
};

class HierGatModel {
public:
    HierGatModel(Taxonomy taxonomy, ModelConfig config, std::uint64_t seed = 0);

    [[nodiscard]] const Taxonomy& taxonomy() const { return taxonomy_; }
    [[nodiscard]] const ModelConfig& config() const { return config_; }
    [[nodiscard]] const taxonomy::DirectedTaxonomyGraph& graph() const { return graph_; }
    [[nodiscard]] std::vector<Parameter*> parameters();
    [[nodiscard]] std::vector<const Parameter*> parameters() const;
    [[nodiscard]] std::size_t parameter_count() const;

    Parameter prototypes;  // |V| x input_dim
    std::vector<GatLayerParams> layers;
    Parameter readout_w;  // output_dim x 1
    Parameter readout_b;  // 1

    std::string encoder_name = "trivial";
    bool trained = false;

    /*
     * Batched forward over B feature rows: the batch graph is the disjoint
     * union of B copies of the taxonomy, each with its own global node.
     * Returns B x |V| logits (global nodes excluded). With trainable=false
     * parameters enter the tape as constants.
     */
    Var forward(Tape& tape, const Tensor& features, const ForwardOptions& opts = {}, bool trainable = true) const;

    [[nodiscard]] std::vector<NodeScores> predict(const Tensor& features, const ForwardOptions& opts = {}) const;

private:
    Taxonomy taxonomy_;
    ModelConfig config_;
    taxonomy::DirectedTaxonomyGraph graph_;
};

/// One gat layer over a batch graph. `h` is M x d_in.
Var gat_layer(Tape& tape, const GatLayerParams& layer, Var h, const std::vector<std::size_t>& src,
              const std::vector<std::size_t>& dst, double slope, const ForwardOptions& opts, std::uint64_t layer_index,
              bool trainable);

/// Label in model-ready form.
struct EncodedLabel {
    Tensor multi_hot;                     // |V|, ones on the path including the root
    std::vector<std::size_t> level_class;  // per level: position of the path node in level_members
};

[[nodiscard]] EncodedLabel encode_label(const Taxonomy& t, const taxonomy::HierarchicalLabel& label);

struct LossTerms {
    Var bce;
    Var mean_ce;
    Var loss;
};

/// max(BCE over all nodes, mean over levels of CE within each level) for one sample.
LossTerms hierarchical_loss(Var node_logits, const Taxonomy& t, const EncodedLabel& label);

/// Mean over rows of `logits` (B x |V|) of the per-sample hierarchical loss.
Var batch_loss(Var logits, const Taxonomy& t, const std::vector<EncodedLabel>& labels);

/// Per-level softmax of node logits.
[[nodiscard]] std::vector<double> level_softmax(const Taxonomy& t, std::span<const double> logits);

/// Mean feature of every node over the samples whose label path contains it.
[[nodiscard]] Tensor compute_prototypes(const Taxonomy& t, const Tensor& features, const std::vector<NodeId>& labels);
void init_prototypes(HierGatModel& model, const std::map<NodeId, std::vector<std::vector<double>>>& features_by_node);

struct Dataset {
    Tensor features;  // M x input_dim
    std::vector<NodeId> labels;
};

struct FitResult {
    std::vector<double> epoch_loss;
};

using EpochCallback = std::function<void(std::size_t epoch, double loss)>;

/// Trains in place. Prototypes must already be initialized.
FitResult fit(HierGatModel& model, const Dataset& data, const TrainingConfig& cfg, const EpochCallback& on_epoch = {});

/// Stratified (proportional per class) or plain shuffled batches for one epoch.
[[nodiscard]] std::vector<std::vector<std::size_t>> make_batches(const std::vector<NodeId>& labels,
                                                                 std::size_t batch_size, bool stratified,
                                                                 std::uint64_t seed);

/// argmax over material-level logits; ties go to the earlier preorder node.
[[nodiscard]] NodeId predict_flat(const HierGatModel& model, std::span<const double> features);
[[nodiscard]] NodeId flat_argmax(const Taxonomy& t, std::span<const double> logits);

/// Checkpoint: tensor blob with a manifest header carrying the taxonomy,
/// its hash, the model config and encoder name.
void save_model(const std::filesystem::path& path, const HierGatModel& model);
[[nodiscard]] HierGatModel load_model(const std::filesystem::path& path);
/// Fails if the checkpoint was trained on a different taxonomy.
[[nodiscard]] HierGatModel load_model(const std::filesystem::path& path, const Taxonomy& expected);

/// Copies layers and readout from `source`, and prototypes for node ids
/// present in both; other prototypes keep their current values.
void transfer_parameters(const HierGatModel& source, HierGatModel& target);

}  // namespace matprobe::hiergat
