#include <algorithm>
#include <cmath>
#include <map>

#include "matprobe/error.hpp"
#include "matprobe/hiergat.hpp"
#include "matprobe/numerics/optim.hpp"
#include "matprobe/rng.hpp"

namespace matprobe::hiergat {

using namespace numerics;

EncodedLabel encode_label(const Taxonomy& t, const taxonomy::HierarchicalLabel& label) {
    if (label.path.empty()) throw DataError("empty hierarchical label");
    if (!t.contains(label.leaf())) throw DataError("label node '" + label.leaf() + "' is not in the taxonomy");
    if (taxonomy::label_of(t, label.leaf()) != label) {
        throw DataError("label path for '" + label.leaf() + "' is not a root-to-node chain of the taxonomy");
    }
    if (label.path.size() != t.depth()) {
        throw DataError("label '" + label.leaf() + "' does not reach the material level");
    }
    EncodedLabel e{Tensor({t.size()}), {}};
    for (std::size_t level = 0; level < label.path.size(); ++level) {
        const std::size_t idx = t.index_of(label.path[level]);
        e.multi_hot[idx] = 1.0;
        const auto& members = t.level_members(level);
        e.level_class.push_back(
            static_cast<std::size_t>(std::find(members.begin(), members.end(), idx) - members.begin()));
    }
    return e;
}

LossTerms hierarchical_loss(Var node_logits, const Taxonomy& t, const EncodedLabel& label) {
    if (node_logits.value().size() != t.size() || label.multi_hot.size() != t.size() ||
        label.level_class.size() != t.depth()) {
        throw DataError("hierarchical_loss: label or logits do not match the taxonomy");
    }
    Var bce = bce_with_logits(node_logits, label.multi_hot);
    std::vector<Var> ces;
    ces.reserve(t.depth());
    for (std::size_t level = 0; level < t.depth(); ++level) {
        ces.push_back(reshape(cross_entropy(select(node_logits, t.level_members(level)), label.level_class[level]),
                              {1}));
    }
    Var mean_ce = reshape(mean(concat_rows(ces)), {});
    return {bce, mean_ce, maximum(bce, mean_ce)};
}

Var batch_loss(Var logits, const Taxonomy& t, const std::vector<EncodedLabel>& labels) {
    const std::size_t n = t.size();
    if (logits.value().size() != labels.size() * n || labels.empty()) {
        throw DataError("batch_loss: one label per logit row required");
    }
    std::vector<Var> per;
    per.reserve(labels.size());
    std::vector<std::size_t> row(n);
    for (std::size_t s = 0; s < labels.size(); ++s) {
        for (std::size_t i = 0; i < n; ++i) row[i] = s * n + i;
        per.push_back(reshape(hierarchical_loss(select(logits, row), t, labels[s]).loss, {1}));
    }
    return reshape(mean(concat_rows(per)), {});
}

Tensor compute_prototypes(const Taxonomy& t, const Tensor& features, const std::vector<NodeId>& labels) {
    const std::size_t m = labels.size();
    if (features.rows() != m || (m > 0 && features.rank() != 2)) {
        throw DataError("compute_prototypes: one feature row per label required");
    }
    const std::size_t d = features.cols();
    Tensor out({t.size(), d});
    std::vector<std::size_t> count(t.size(), 0);
    for (std::size_t s = 0; s < m; ++s) {
        for (const auto& id : taxonomy::label_of(t, labels[s]).path) {
            const std::size_t i = t.index_of(id);
            ++count[i];
            for (std::size_t k = 0; k < d; ++k) out.at(i, k) += features.at(s, k);
        }
    }
    for (std::size_t i = 0; i < t.size(); ++i) {
        if (count[i] == 0) throw DataError("no training samples for node '" + t.node_at(i).id + "'");
        for (std::size_t k = 0; k < d; ++k) out.at(i, k) /= static_cast<double>(count[i]);
    }
    return out;
}

void init_prototypes(HierGatModel& model, const std::map<NodeId, std::vector<std::vector<double>>>& features_by_node) {
    const std::size_t d = model.config().input_dim;
    std::vector<NodeId> labels;
    std::vector<double> flat;
    for (const auto& [id, rows] : features_by_node) {
        for (const auto& f : rows) {
            if (f.size() != d) {
                throw DataError("feature for '" + id + "' has dimension " + std::to_string(f.size()) + ", expected " +
                                std::to_string(d));
            }
            labels.push_back(id);
            flat.insert(flat.end(), f.begin(), f.end());
        }
    }
    const std::size_t m = labels.size();
    model.prototypes.value = compute_prototypes(model.taxonomy(), Tensor({m, d}, std::move(flat)), labels);
}

std::vector<std::vector<std::size_t>> make_batches(const std::vector<NodeId>& labels, std::size_t batch_size,
                                                   bool stratified, std::uint64_t seed) {
    if (batch_size == 0) throw UsageError("batch size must be positive");
    const std::size_t m = labels.size();
    std::vector<std::size_t> order(m);
    for (std::size_t i = 0; i < m; ++i) order[i] = i;
    rng::Stream r(seed);
    if (!stratified) {
        for (std::size_t i = m; i > 1; --i) std::swap(order[i - 1], order[r.below(i)]);
    } else {
        // Spread each class evenly over the epoch: the k-th of n samples of a
        // class gets key (k + u)/n, and batches are consecutive runs of keys.
        std::map<NodeId, std::vector<std::size_t>> by_class;
        for (std::size_t i = 0; i < m; ++i) by_class[labels[i]].push_back(i);
        std::vector<std::pair<double, std::size_t>> keyed;
        keyed.reserve(m);
        for (auto& [id, members] : by_class) {
            for (std::size_t i = members.size(); i > 1; --i) std::swap(members[i - 1], members[r.below(i)]);
            const double n = static_cast<double>(members.size());
            for (std::size_t k = 0; k < members.size(); ++k) {
                keyed.emplace_back((static_cast<double>(k) + r.uniform()) / n, members[k]);
            }
        }
        std::sort(keyed.begin(), keyed.end());
        for (std::size_t i = 0; i < m; ++i) order[i] = keyed[i].second;
    }
    std::vector<std::vector<std::size_t>> batches;
    for (std::size_t start = 0; start < m; start += batch_size) {
        batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                             order.begin() + static_cast<std::ptrdiff_t>(std::min(m, start + batch_size)));
    }
    return batches;
}

FitResult fit(HierGatModel& model, const Dataset& data, const TrainingConfig& cfg, const EpochCallback& on_epoch) {
    const Taxonomy& t = model.taxonomy();
    const std::size_t m = data.labels.size();
    const std::size_t d = model.config().input_dim;
    if (m == 0) throw DataError("empty training set");
    if (data.features.rank() != 2 || data.features.rows() != m || data.features.cols() != d) {
        throw DataError("training features have shape " + shape_string(data.features.shape()) + ", expected [" +
                        std::to_string(m) + "x" + std::to_string(d) + "]");
    }
    if (cfg.batch_size == 0) throw UsageError("batch size must be positive");

    std::vector<EncodedLabel> encoded;
    encoded.reserve(m);
    std::vector<bool> seen(t.size(), false);
    for (const auto& id : data.labels) {
        encoded.push_back(encode_label(t, taxonomy::label_of(t, id)));
        seen[t.index_of(id)] = true;
    }
    for (std::size_t i : t.level_members(t.depth() - 1)) {
        if (!seen[i]) throw DataError("no training samples for class '" + t.node_at(i).id + "'");
    }

    AdamW opt(model.parameters(), AdamWConfig{cfg.learning_rate, 0.9, 0.999, 1e-8, cfg.weight_decay});
    FitResult result;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        opt.set_lr(cosine_lr(cfg.learning_rate, 0.0, epoch, cfg.epochs));
        const auto batches = make_batches(data.labels, cfg.batch_size, cfg.stratified, rng::derive(cfg.seed, epoch));
        double total = 0.0;
        for (std::size_t bi = 0; bi < batches.size(); ++bi) {
            const auto& batch = batches[bi];
            Tensor x({batch.size(), d});
            std::vector<EncodedLabel> labels;
            labels.reserve(batch.size());
            for (std::size_t k = 0; k < batch.size(); ++k) {
                std::copy_n(data.features.data() + batch[k] * d, d, x.data() + k * d);
                labels.push_back(encoded[batch[k]]);
            }
            Tape tape;
            const ForwardOptions opts{model.config().dropout > 0.0, model.config().dropout,
                                      rng::derive(cfg.seed, epoch, bi + 1)};
            Var loss = batch_loss(model.forward(tape, x, opts, true), t, labels);
            const double lv = loss.value().item();
            if (!std::isfinite(lv)) {
                throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                                   std::to_string(bi));
            }
            opt.zero_grad();
            tape.backward(loss);
            opt.step();
            total += lv * static_cast<double>(batch.size());
        }
        result.epoch_loss.push_back(total / static_cast<double>(m));
        if (on_epoch) on_epoch(epoch, result.epoch_loss.back());
    }
    if (cfg.epochs > 0) model.trained = true;
    return result;
}

}  // namespace matprobe::hiergat
