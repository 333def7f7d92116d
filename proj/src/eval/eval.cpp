#include "matprobe/eval.hpp"

#include <algorithm>
#include <cstdio>
#include <set>
#include <sstream>

#include "matprobe/error.hpp"
#include "matprobe/parallel.hpp"
#include "matprobe/rng.hpp"

namespace matprobe::eval {

using nlohmann::json;
using numerics::Tensor;

std::size_t Confusion::support(std::size_t row) const {
    std::size_t s = 0;
    for (const std::size_t c : counts.at(row)) s += c;
    return s;
}

std::vector<double> per_level_accuracy(const std::vector<std::vector<NodeId>>& predictions,
                                       const std::vector<HierarchicalLabel>& labels) {
    if (predictions.size() != labels.size()) {
        throw DataError("per-level accuracy: " + std::to_string(predictions.size()) + " predictions for " +
                        std::to_string(labels.size()) + " labels");
    }
    if (labels.empty()) throw DataError("per-level accuracy of an empty set is undefined");
    const std::size_t depth = labels.front().path.size();
    std::vector<double> acc(depth, 0.0);
    for (std::size_t s = 0; s < labels.size(); ++s) {
        if (predictions[s].size() != depth || labels[s].path.size() != depth) {
            throw DataError("per-level accuracy: sample " + std::to_string(s) + " does not span " +
                            std::to_string(depth) + " levels");
        }
        for (std::size_t l = 0; l < depth; ++l) acc[l] += predictions[s][l] == labels[s].path[l] ? 1.0 : 0.0;
    }
    for (double& a : acc) a /= static_cast<double>(labels.size());
    return acc;
}

double mean_path_distance(const std::vector<NodeId>& predicted, const std::vector<NodeId>& labels, const Taxonomy& t) {
    if (predicted.size() != labels.size()) {
        throw DataError("mean path distance: " + std::to_string(predicted.size()) + " predictions for " +
                        std::to_string(labels.size()) + " labels");
    }
    if (labels.empty()) throw DataError("mean path distance of an empty set is undefined");
    double total = 0.0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        total += static_cast<double>(taxonomy::path_distance(t, predicted[i], labels[i]));
    }
    return total / static_cast<double>(labels.size());
}

std::vector<NodeId> level_argmax(const Taxonomy& t, std::span<const double> logits) {
    std::vector<NodeId> out;
    for (std::size_t level = 0; level < t.depth(); ++level) {
        const auto& members = t.level_members(level);
        std::size_t best = members.front();
        for (const std::size_t i : members) {
            if (logits[i] > logits[best]) best = i;
        }
        out.push_back(t.node_at(best).id);
    }
    return out;
}

EvalReport evaluate(const HierGatModel& model, const Tensor& features, const std::vector<std::string>& ids,
                    const std::vector<NodeId>& labels) {
    const Taxonomy& t = model.taxonomy();
    const std::size_t m = labels.size();
    if (ids.size() != m) throw DataError("evaluate: ids and labels differ in length");
    if (m == 0) throw DataError("evaluation split is empty");
    const std::size_t d = model.config().input_dim;
    if (features.rank() != 2 || features.rows() != m || features.cols() != d) {
        throw DataError("evaluation features have shape " + numerics::shape_string(features.shape()) + ", expected [" +
                        std::to_string(m) + "x" + std::to_string(d) + "]");
    }
    for (const auto& l : labels) {
        if (!t.contains(l) || !t.is_leaf(l)) throw DataError("label '" + l + "' is not a leaf of the model taxonomy");
    }

    constexpr std::size_t kChunk = 128;
    const std::size_t chunks = (m + kChunk - 1) / kChunk;
    std::vector<std::vector<NodeId>> per_level(m);
    parallel_for(chunks, 0, [&](std::size_t c) {
        const std::size_t lo = c * kChunk;
        const std::size_t hi = std::min(m, lo + kChunk);
        Tensor x({hi - lo, d}, std::vector<double>(features.data() + lo * d, features.data() + hi * d));
        const auto scores = model.predict(x);
        for (std::size_t s = lo; s < hi; ++s) per_level[s] = level_argmax(t, scores[s - lo].logits);
    });

    EvalReport r;
    r.level_names = t.level_names();
    r.samples = m;
    std::vector<HierarchicalLabel> paths;
    std::vector<NodeId> flat;
    for (std::size_t s = 0; s < m; ++s) {
        paths.push_back(taxonomy::label_of(t, labels[s]));
        flat.push_back(per_level[s].back());
        r.predictions.push_back({ids[s], labels[s], per_level[s]});
    }
    r.level_accuracy = per_level_accuracy(per_level, paths);
    r.flat_accuracy = r.level_accuracy.back();
    r.mean_path_distance = mean_path_distance(flat, labels, t);
    for (std::size_t level = 0; level < t.depth(); ++level) {
        Confusion c;
        const auto& members = t.level_members(level);
        for (const std::size_t i : members) c.classes.push_back(t.node_at(i).id);
        c.counts.assign(members.size(), std::vector<std::size_t>(members.size(), 0));
        const auto pos = [&](const NodeId& id) {
            return static_cast<std::size_t>(std::find(c.classes.begin(), c.classes.end(), id) - c.classes.begin());
        };
        for (std::size_t s = 0; s < m; ++s) ++c.counts[pos(paths[s].path[level])][pos(per_level[s][level])];
        r.confusion.push_back(std::move(c));
    }
    return r;
}

json EvalReport::to_json() const {
    json levels = json::array();
    for (std::size_t l = 0; l < level_names.size(); ++l) {
        levels.push_back({{"level", level_names[l]},
                          {"accuracy", level_accuracy[l]},
                          {"classes", confusion[l].classes},
                          {"confusion", confusion[l].counts}});
    }
    return {{"samples", samples},
            {"flat_accuracy", flat_accuracy},
            {"mean_path_distance", mean_path_distance},
            {"level_accuracy", level_accuracy},
            {"levels", levels}};
}

std::string EvalReport::predictions_csv(const Taxonomy& t) const {
    std::ostringstream out;
    out << "id,label,prediction,correct,path_distance";
    for (const auto& l : level_names) out << ",pred_" << l;
    out << "\n";
    for (const auto& p : predictions) {
        out << p.id << "," << p.label << "," << p.per_level.back() << "," << (p.per_level.back() == p.label ? 1 : 0)
            << "," << taxonomy::path_distance(t, p.per_level.back(), p.label);
        for (const auto& id : p.per_level) out << "," << id;
        out << "\n";
    }
    return out.str();
}

EvalReport run_eval(const HierGatModel& model, const dataio::DatasetManifest& manifest, const dataio::Encoder& encoder,
                    const EvalOptions& opts) {
    if (encoder.dim() != model.config().input_dim) {
        throw DataError("encoder '" + encoder.name() + "' produces " + std::to_string(encoder.dim()) +
                        " features but the model expects " + std::to_string(model.config().input_dim));
    }
    manifest.validate(&model.taxonomy());
    const auto records = manifest.split(opts.split);
    dataio::DatasetManifest subset;
    subset.root = manifest.root;
    for (const auto* r : records) subset.records.push_back(*r);
    dataio::CacheBuildOptions build;
    build.grayscale = opts.grayscale;
    build.threads = opts.threads;
    build.source = opts.split == "ood" ? dataio::ImageSource::context : dataio::ImageSource::appearance;
    const auto cache = dataio::build_feature_cache(subset, encoder, build).cache;
    std::vector<NodeId> labels;
    for (const auto* r : records) labels.push_back(r->label);
    return evaluate(model, cache.features, cache.ids, labels);
}

hiergat::Dataset split_dataset(const dataio::DatasetManifest& manifest, const dataio::FeatureCache& cache,
                               const std::string& split) {
    hiergat::Dataset ds;
    std::vector<double> values;
    for (const auto* r : manifest.split(split)) {
        const auto row = cache.at(r->id);
        values.insert(values.end(), row.begin(), row.end());
        ds.labels.push_back(r->label);
    }
    ds.features = Tensor({ds.labels.size(), cache.dim}, std::move(values));
    return ds;
}

EvalReport run_eval(const HierGatModel& model, const dataio::DatasetManifest& manifest,
                    const dataio::FeatureCache& cache, const std::string& split) {
    manifest.validate(&model.taxonomy());
    if (cache.dim != model.config().input_dim) {
        throw DataError("feature cache dim " + std::to_string(cache.dim) + " does not match the model input dim " +
                        std::to_string(model.config().input_dim));
    }
    const auto ds = split_dataset(manifest, cache, split);
    std::vector<std::string> ids;
    for (const auto* r : manifest.split(split)) ids.push_back(r->id);
    return evaluate(model, ds.features, ids, ds.labels);
}

HierGatModel train_model(const Taxonomy& taxonomy, const hiergat::Dataset& train, const hiergat::ModelConfig& model_cfg,
                         const hiergat::TrainingConfig& train_cfg, const hiergat::EpochCallback& on_epoch) {
    HierGatModel model(taxonomy, model_cfg, train_cfg.seed);
    model.prototypes.value = hiergat::compute_prototypes(taxonomy, train.features, train.labels);
    (void)hiergat::fit(model, train, train_cfg, on_epoch);
    return model;
}

void FewShotConfig::validate(const Taxonomy& t) const {
    if (!t.contains(held_out) || !t.is_leaf(held_out)) {
        throw DataError("held-out class '" + held_out + "' is not a leaf of the taxonomy");
    }
    if (counts.empty()) throw UsageError("few-shot counts are empty");
    for (std::size_t i = 0; i < counts.size(); ++i) {
        if (counts[i] == 0) throw UsageError("few-shot counts must be positive");
        if (i > 0 && counts[i] < counts[i - 1]) throw UsageError("few-shot counts must be non-decreasing");
    }
    if (repeats == 0) throw UsageError("few-shot repeats must be positive");
}

json FewShotConfig::to_json() const {
    return {{"held_out", held_out},
            {"counts", counts},
            {"seed", seed},
            {"finetune_epochs", finetune_epochs},
            {"repeats", repeats}};
}

FewShotConfig FewShotConfig::from_json(const json& j) {
    FewShotConfig c;
    try {
        c.held_out = j.at("held_out").get<std::string>();
        c.counts = j.value("counts", c.counts);
        c.seed = j.value("seed", c.seed);
        c.finetune_epochs = j.value("finetune_epochs", c.finetune_epochs);
        c.repeats = j.value("repeats", c.repeats);
    } catch (const json::exception& e) {
        throw DataError(std::string("few-shot config: ") + e.what());
    }
    return c;
}

std::string FewShotResult::to_csv() const {
    std::string out = "n,accuracy,path_distance\n";
    char line[96];
    for (const auto& p : points) {
        std::snprintf(line, sizeof line, "%zu,%.6f,%.6f\n", p.n, p.accuracy, p.path_distance);
        out += line;
    }
    return out;
}

json FewShotResult::to_json() const {
    json pts = json::array();
    for (const auto& p : points) pts.push_back({{"n", p.n}, {"accuracy", p.accuracy}, {"path_distance", p.path_distance}});
    return {{"held_out", held_out}, {"points", pts}};
}

FewShotResult few_shot_run(const Taxonomy& taxonomy, const dataio::DatasetManifest& manifest,
                           const dataio::FeatureCache& cache, const hiergat::ModelConfig& model_cfg,
                           const hiergat::TrainingConfig& train_cfg, const FewShotConfig& cfg) {
    cfg.validate(taxonomy);
    manifest.validate(&taxonomy);
    const std::size_t d = cache.dim;
    if (d != model_cfg.input_dim) {
        throw DataError("feature cache dim " + std::to_string(d) + " does not match the model input dim " +
                        std::to_string(model_cfg.input_dim));
    }

    hiergat::Dataset base;
    std::vector<double> base_values;
    std::vector<std::vector<double>> candidates;
    for (const auto* r : manifest.split("train")) {
        const auto row = cache.at(r->id);
        if (r->label == cfg.held_out) {
            candidates.emplace_back(row.begin(), row.end());
        } else {
            base_values.insert(base_values.end(), row.begin(), row.end());
            base.labels.push_back(r->label);
        }
    }
    base.features = Tensor({base.labels.size(), d}, base_values);
    std::vector<double> test_values;
    std::vector<std::string> test_ids;
    for (const auto* r : manifest.split("test")) {
        if (r->label != cfg.held_out) continue;
        const auto row = cache.at(r->id);
        test_values.insert(test_values.end(), row.begin(), row.end());
        test_ids.push_back(r->id);
    }
    const std::size_t needed = cfg.counts.back();
    if (candidates.size() < needed || test_ids.empty()) {
        throw DataError("few-shot run needs " + std::to_string(needed) + " training and at least 1 test sample of '" +
                        cfg.held_out + "'; found " + std::to_string(candidates.size()) + " and " +
                        std::to_string(test_ids.size()));
    }
    const Tensor test_x({test_ids.size(), d}, std::move(test_values));
    const std::vector<NodeId> test_labels(test_ids.size(), cfg.held_out);

    taxonomy::ConsolidationMap omit;
    omit.omissions.push_back(cfg.held_out);
    const Taxonomy reduced = taxonomy::consolidate(taxonomy, omit);
    const HierGatModel pretrained = train_model(reduced, base, model_cfg, train_cfg);

    FewShotResult result;
    result.held_out = cfg.held_out;
    for (const std::size_t n : cfg.counts) result.points.push_back({n, 0.0, 0.0});
    for (std::size_t rep = 0; rep < cfg.repeats; ++rep) {
        std::vector<std::size_t> order(candidates.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        rng::Stream s(rng::derive(cfg.seed, rep));
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[s.below(i)]);

        for (std::size_t k = 0; k < cfg.counts.size(); ++k) {
            const std::size_t n = cfg.counts[k];
            hiergat::Dataset data = base;
            std::vector<double> values(base.features.values().begin(), base.features.values().end());
            for (std::size_t i = 0; i < n; ++i) {
                const auto& f = candidates[order[i]];
                values.insert(values.end(), f.begin(), f.end());
                data.labels.push_back(cfg.held_out);
            }
            data.features = Tensor({data.labels.size(), d}, std::move(values));

            HierGatModel model(taxonomy, model_cfg, train_cfg.seed);
            model.prototypes.value = hiergat::compute_prototypes(taxonomy, data.features, data.labels);
            hiergat::transfer_parameters(pretrained, model);
            hiergat::TrainingConfig ft = train_cfg;
            ft.epochs = cfg.finetune_epochs;
            ft.seed = rng::derive(train_cfg.seed, rep, n);
            (void)hiergat::fit(model, data, ft);
            model.trained = true;

            const auto report = evaluate(model, test_x, test_ids, test_labels);
            result.points[k].accuracy += report.flat_accuracy / static_cast<double>(cfg.repeats);
            result.points[k].path_distance += report.mean_path_distance / static_cast<double>(cfg.repeats);
        }
    }
    return result;
}

}  // namespace matprobe::eval
