#include <cmath>

#include "matprobe/error.hpp"
#include "matprobe/hiergat.hpp"
#include "matprobe/rng.hpp"

namespace matprobe::hiergat {

using namespace numerics;

namespace {

Var bind(Tape& t, const Parameter& p, bool trainable) {
    // Parameters are only written through by backward() on trainable tapes.
    return trainable ? t.parameter(const_cast<Parameter&>(p)) : t.constant(p.value);
}

Parameter glorot(std::string name, std::size_t rows, std::size_t cols, std::uint64_t seed, std::size_t fan_in = 0) {
    Tensor w({rows, cols});
    const double sd = std::sqrt(2.0 / static_cast<double>((fan_in ? fan_in : rows) + cols));
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = sd * rng::gaussian(seed, i);
    return {std::move(name), std::move(w)};
}

Parameter zeros(std::string name, std::size_t n) {
    return {std::move(name), Tensor({n})};
}

}  // namespace

nlohmann::json ModelConfig::to_json() const {
    return {{"input_dim", input_dim},         {"hidden_dim", hidden_dim}, {"output_dim", output_dim},
            {"layers", layers},               {"heads", heads},           {"leaky_slope", leaky_slope},
            {"dropout", dropout},             {"reverse_edges", reverse_edges}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
    ModelConfig c;
    try {
        c.input_dim = j.value("input_dim", c.input_dim);
        c.hidden_dim = j.value("hidden_dim", c.hidden_dim);
        c.output_dim = j.value("output_dim", c.output_dim);
        c.layers = j.value("layers", c.layers);
        c.heads = j.value("heads", c.heads);
        c.leaky_slope = j.value("leaky_slope", c.leaky_slope);
        c.dropout = j.value("dropout", c.dropout);
        c.reverse_edges = j.value("reverse_edges", c.reverse_edges);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("model config: ") + e.what());
    }
    c.validate();
    return c;
}

void ModelConfig::validate() const {
    if (input_dim == 0 || hidden_dim == 0 || output_dim == 0) throw DataError("model dims must be positive");
    if (layers < 1) throw DataError("model needs at least one layer");
    if (heads != 1) throw DataError("only single-head attention is supported");
    if (!(leaky_slope > 0.0 && leaky_slope < 1.0)) throw DataError("leaky_slope must lie in (0,1)");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw DataError("dropout must lie in [0,1)");
}

nlohmann::json TrainingConfig::to_json() const {
    return {{"batch_size", batch_size}, {"epochs", epochs},         {"learning_rate", learning_rate},
            {"weight_decay", weight_decay}, {"stratified", stratified}, {"seed", seed}};
}

TrainingConfig TrainingConfig::from_json(const nlohmann::json& j) {
    TrainingConfig c;
    try {
        c.batch_size = j.value("batch_size", c.batch_size);
        c.epochs = j.value("epochs", c.epochs);
        c.learning_rate = j.value("learning_rate", c.learning_rate);
        c.weight_decay = j.value("weight_decay", c.weight_decay);
        c.stratified = j.value("stratified", c.stratified);
        c.seed = j.value("seed", c.seed);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("training config: ") + e.what());
    }
    if (c.batch_size == 0 || !(c.learning_rate > 0.0) || c.weight_decay < 0.0) {
        throw DataError("training config: batch_size and learning_rate must be positive");
    }
    return c;
}

AugmentedGraph::AugmentedGraph(const taxonomy::DirectedTaxonomyGraph& base, bool reverse_edges)
    : n_(base.nodes.size()), base_edges_(base.edges) {
    if (reverse_edges) {
        for (const auto& [p, c] : base.edges) base_edges_.emplace_back(c, p);
    }
}

void AugmentedGraph::insert_global_node(std::span<const double> features, std::size_t input_dim) {
    if (global_) throw UsageError("global node already inserted; remove it first");
    if (features.size() != input_dim) {
        throw DataError("global feature has dimension " + std::to_string(features.size()) + ", model expects " +
                        std::to_string(input_dim));
    }
    global_.emplace(features.begin(), features.end());
}

void AugmentedGraph::remove_global_node() {
    global_.reset();
}

const std::vector<double>& AugmentedGraph::global_features() const {
    if (!global_) throw UsageError("no global node inserted");
    return *global_;
}

std::vector<std::pair<std::size_t, std::size_t>> AugmentedGraph::edges() const {
    auto e = base_edges_;
    if (global_) {
        for (std::size_t i = 0; i < n_; ++i) e.emplace_back(n_, i);
    }
    return e;
}

std::size_t AugmentedGraph::in_degree(std::size_t node) const {
    std::size_t d = 0;
    for (const auto& [s, t] : edges()) d += t == node;
    return d;
}

std::size_t AugmentedGraph::out_degree(std::size_t node) const {
    std::size_t d = 0;
    for (const auto& [s, t] : edges()) d += s == node;
    return d;
}

HierGatModel::HierGatModel(Taxonomy taxonomy, ModelConfig config, std::uint64_t seed)
    : taxonomy_(std::move(taxonomy)), config_(config), graph_(taxonomy::to_graph(taxonomy_)) {
    config_.validate();
    const std::size_t n = taxonomy_.size();
    prototypes = Parameter("prototypes", Tensor({n, config_.input_dim}));
    std::uint64_t k = 0;
    auto next = [&] { return rng::derive(seed, k++); };
    for (std::size_t l = 0; l < config_.layers; ++l) {
        const std::string p = "layer" + std::to_string(l) + ".";
        GatLayerParams L;
        L.d_in = l == 0 ? config_.input_dim : config_.output_dim;
        L.d_out = config_.output_dim;
        const std::size_t h = config_.hidden_dim;
        L.att_proj = glorot(p + "att_proj", L.d_in, L.d_out, next());
        L.att_dst = glorot(p + "att_dst", L.d_out, 1, next());
        L.att_src = glorot(p + "att_src", L.d_out, 1, next());
        // Two halves of one (2 d_in x h) matrix, scaled for its fan-in.
        L.msg_w1_dst = glorot(p + "msg_w1_dst", L.d_in, h, next(), 2 * L.d_in);
        L.msg_w1_src = glorot(p + "msg_w1_src", L.d_in, h, next(), 2 * L.d_in);
        L.msg_b1 = zeros(p + "msg_b1", h);
        L.msg_w2 = glorot(p + "msg_w2", h, L.d_out, next());
        L.msg_b2 = zeros(p + "msg_b2", L.d_out);
        L.update.w1 = glorot(p + "upd_w1", L.d_in + L.d_out, h, next());
        L.update.b1 = zeros(p + "upd_b1", h);
        L.update.w2 = glorot(p + "upd_w2", h, L.d_out, next());
        L.update.b2 = zeros(p + "upd_b2", L.d_out);
        if (L.d_in != L.d_out) L.residual = glorot(p + "residual", L.d_in, L.d_out, next());
        layers.push_back(std::move(L));
    }
    readout_w = glorot("readout_w", config_.output_dim, 1, next());
    readout_b = zeros("readout_b", 1);
}

std::vector<Parameter*> HierGatModel::parameters() {
    std::vector<Parameter*> out{&prototypes};
    for (auto& L : layers) {
        for (Parameter* p : {&L.att_proj, &L.att_dst, &L.att_src, &L.msg_w1_dst, &L.msg_w1_src, &L.msg_b1,
                             &L.msg_w2, &L.msg_b2, &L.update.w1, &L.update.b1, &L.update.w2, &L.update.b2}) {
            out.push_back(p);
        }
        if (L.residual) out.push_back(&*L.residual);
    }
    out.push_back(&readout_w);
    out.push_back(&readout_b);
    return out;
}

std::vector<const Parameter*> HierGatModel::parameters() const {
    auto mut = const_cast<HierGatModel*>(this)->parameters();
    return {mut.begin(), mut.end()};
}

std::size_t HierGatModel::parameter_count() const {
    std::size_t n = 0;
    for (const Parameter* p : parameters()) n += p->value.size();
    return n;
}

Var gat_layer(Tape& t, const GatLayerParams& L, Var h, const std::vector<std::size_t>& src,
              const std::vector<std::size_t>& dst, double slope, const ForwardOptions& opts, std::uint64_t layer_index,
              bool trainable) {
    const Tensor& hv = h.value();
    if (hv.rank() != 2 || hv.cols() != L.d_in) {
        throw DataError("gat_layer: states have shape " + shape_string(hv.shape()) + ", layer expects width " +
                        std::to_string(L.d_in));
    }
    const std::size_t m = hv.rows();
    const double rate = opts.dropout ? opts.rate : 0.0;

    Var z = matmul(h, bind(t, L.att_proj, trainable));
    Var s_dst = reshape(matmul(z, bind(t, L.att_dst, trainable)), {m});
    Var s_src = reshape(matmul(z, bind(t, L.att_src, trainable)), {m});
    Var e = leaky_rect(add(gather_rows(s_dst, dst), gather_rows(s_src, src)), slope);
    Var alpha = segment_softmax(e, dst, m);

    Var u = affine(h, bind(t, L.msg_w1_dst, trainable), bind(t, L.msg_b1, trainable));
    Var v = matmul(h, bind(t, L.msg_w1_src, trainable));
    Var hidden = leaky_rect(add(gather_rows(u, dst), gather_rows(v, src)), slope);
    hidden = dropout(hidden, rate, rng::derive(opts.seed, layer_index, 0), opts.dropout);
    Var msg = affine(hidden, bind(t, L.msg_w2, trainable), bind(t, L.msg_b2, trainable));
    Var agg = scatter_add_rows(scale_rows(msg, alpha), dst, m);

    Var uh = leaky_rect(affine(concat_cols(h, agg), bind(t, L.update.w1, trainable), bind(t, L.update.b1, trainable)),
                        slope);
    uh = dropout(uh, rate, rng::derive(opts.seed, layer_index, 1), opts.dropout);
    Var out = affine(uh, bind(t, L.update.w2, trainable), bind(t, L.update.b2, trainable));
    Var res = L.residual ? matmul(h, bind(t, *L.residual, trainable)) : h;
    return add(out, res);
}

Var HierGatModel::forward(Tape& t, const Tensor& features, const ForwardOptions& opts, bool trainable) const {
    const std::size_t d = config_.input_dim;
    if (features.cols() != d) {
        throw DataError("feature dimension " + std::to_string(features.cols()) + " does not match model input " +
                        std::to_string(d));
    }
    const std::size_t b = features.rows();
    const std::size_t n = taxonomy_.size();
    const std::size_t per = n + 1;

    Var x = t.constant(features.rank() == 2 ? features : features.reshaped({1, d}));
    Var all = concat_rows({bind(t, prototypes, trainable), x});
    std::vector<std::size_t> rows;
    rows.reserve(b * per);
    for (std::size_t s = 0; s < b; ++s) {
        for (std::size_t i = 0; i < n; ++i) rows.push_back(i);
        rows.push_back(n + s);
    }
    Var h = gather_rows(all, rows);

    AugmentedGraph g(graph_, config_.reverse_edges);
    g.insert_global_node(features.values().subspan(0, d), d);
    const auto edges = g.edges();
    std::vector<std::size_t> src, dst;
    src.reserve(edges.size() * b);
    dst.reserve(edges.size() * b);
    for (std::size_t s = 0; s < b; ++s) {
        for (const auto& [from, to] : edges) {
            src.push_back(s * per + from);
            dst.push_back(s * per + to);
        }
    }

    for (std::size_t l = 0; l < layers.size(); ++l) {
        h = gat_layer(t, layers[l], h, src, dst, config_.leaky_slope, opts, l, trainable);
    }
    Var logits = reshape(affine(h, bind(t, readout_w, trainable), bind(t, readout_b, trainable)), {b * per});
    std::vector<std::size_t> keep;
    keep.reserve(b * n);
    for (std::size_t s = 0; s < b; ++s) {
        for (std::size_t i = 0; i < n; ++i) keep.push_back(s * per + i);
    }
    return reshape(select(logits, keep), {b, n});
}

std::vector<NodeScores> HierGatModel::predict(const Tensor& features, const ForwardOptions& opts) const {
    Tape t;
    const Var logits = forward(t, features, opts, false);
    const Tensor& lv = logits.value();
    const std::size_t n = taxonomy_.size();
    std::vector<NodeScores> out(lv.rows());
    for (std::size_t s = 0; s < out.size(); ++s) {
        out[s].logits.assign(lv.data() + s * n, lv.data() + (s + 1) * n);
        out[s].probs = level_softmax(taxonomy_, out[s].logits);
    }
    return out;
}

std::vector<double> level_softmax(const Taxonomy& t, std::span<const double> logits) {
    if (logits.size() != t.size()) throw DataError("logit count does not match taxonomy size");
    std::vector<double> probs(logits.size());
    for (std::size_t level = 0; level < t.depth(); ++level) {
        const auto& members = t.level_members(level);
        std::vector<double> z;
        z.reserve(members.size());
        for (std::size_t i : members) z.push_back(logits[i]);
        const auto p = softmax(z);
        for (std::size_t k = 0; k < members.size(); ++k) probs[members[k]] = p[k];
    }
    return probs;
}

NodeId flat_argmax(const Taxonomy& t, std::span<const double> logits) {
    const auto& leaves = t.level_members(t.depth() - 1);
    std::size_t best = leaves.front();
    for (std::size_t i : leaves) {
        if (logits[i] > logits[best]) best = i;
    }
    return t.node_at(best).id;
}

NodeId predict_flat(const HierGatModel& model, std::span<const double> features) {
    const Tensor x({1, features.size()}, std::vector<double>(features.begin(), features.end()));
    return flat_argmax(model.taxonomy(), model.predict(x).front().logits);
}

void transfer_parameters(const HierGatModel& source, HierGatModel& target) {
    const auto& a = source.config();
    const auto& b = target.config();
    if (a.input_dim != b.input_dim || a.hidden_dim != b.hidden_dim || a.output_dim != b.output_dim ||
        a.layers != b.layers) {
        throw DataError("cannot transfer parameters between models with different dimensions");
    }
    target.layers = source.layers;
    target.readout_w.value = source.readout_w.value;
    target.readout_b.value = source.readout_b.value;
    const std::size_t d = a.input_dim;
    for (std::size_t i = 0; i < target.taxonomy().size(); ++i) {
        const auto& id = target.taxonomy().node_at(i).id;
        if (!source.taxonomy().contains(id)) continue;
        const std::size_t j = source.taxonomy().index_of(id);
        std::copy_n(source.prototypes.value.data() + j * d, d, target.prototypes.value.data() + i * d);
    }
    for (Parameter* p : target.parameters()) p->zero_grad();
}

}  // namespace matprobe::hiergat
