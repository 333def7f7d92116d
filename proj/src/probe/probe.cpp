#include "matprobe/probe.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "matprobe/parallel.hpp"
#include "matprobe/renderer.hpp"
#include "matprobe/rng.hpp"

namespace matprobe::probe {

using nlohmann::json;

void McConfig::validate() const {
    if (!(dropout_rate > 0.0 && dropout_rate < 1.0)) throw UsageError("MC dropout rate must lie in (0, 1)");
    if (num_samples < 2) throw UsageError("MC dropout needs at least 2 samples");
}

void ProbeConfig::validate() const {
    mc.validate();
    if (!(threshold >= 0.0 && threshold <= 1.0)) throw UsageError("probe threshold must lie in [0, 1]");
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw UsageError("lambda must be >= 0");
    if (window_sizes.empty()) throw UsageError("no probe window sizes");
    if (!std::is_sorted(window_sizes.begin(), window_sizes.end()) || window_sizes.front() == 0) {
        throw UsageError("probe window sizes must be positive and increasing");
    }
}

json PredictionDistribution::to_json(const Taxonomy& t) const {
    json nodes = json::array();
    for (std::size_t i = 0; i < mean.size(); ++i) {
        nodes.push_back({{"id", t.node_at(i).id}, {"mean", mean[i]}, {"std", stddev[i]}});
    }
    return {{"nodes", nodes}, {"entropy_per_level", entropy_per_level}};
}

std::vector<double> level_entropies(const Taxonomy& t, std::span<const double> mean) {
    std::vector<double> h(t.depth(), 0.0);
    for (std::size_t level = 0; level < t.depth(); ++level) {
        for (std::size_t i : t.level_members(level)) {
            if (mean[i] > 0.0) h[level] -= mean[i] * std::log(mean[i]);
        }
        h[level] = std::max(0.0, h[level]);
    }
    return h;
}

PredictionDistribution mc_predict(const HierGatModel& model, std::span<const double> features, const McConfig& cfg) {
    cfg.validate();
    if (!model.trained) throw UsageError("model is untrained; MC prediction needs a trained checkpoint");
    const numerics::Tensor x({1, features.size()}, std::vector<double>(features.begin(), features.end()));
    std::vector<std::vector<double>> samples(cfg.num_samples);
    parallel_for(cfg.num_samples, cfg.threads, [&](std::size_t s) {
        hiergat::ForwardOptions opts{true, cfg.dropout_rate, rng::derive(cfg.seed, s)};
        samples[s] = model.predict(x, opts).front().probs;
    });
    const std::size_t n = model.taxonomy().size();
    const auto k = static_cast<double>(cfg.num_samples);
    PredictionDistribution d;
    d.mean.assign(n, 0.0);
    d.stddev.assign(n, 0.0);
    for (const auto& p : samples) {
        for (std::size_t i = 0; i < n; ++i) d.mean[i] += p[i] / k;
    }
    for (const auto& p : samples) {
        for (std::size_t i = 0; i < n; ++i) d.stddev[i] += (p[i] - d.mean[i]) * (p[i] - d.mean[i]) / k;
    }
    for (double& s : d.stddev) s = std::sqrt(s);
    d.entropy_per_level = level_entropies(model.taxonomy(), d.mean);
    return d;
}

PredictionDistribution mc_predict(const HierGatModel& model, const dataio::Encoder& encoder, const Image& window,
                                  const McConfig& cfg) {
    return mc_predict(model, encoder.encode(window), cfg);
}

std::vector<Window> candidate_windows(std::size_t width, std::size_t height, std::size_t x, std::size_t y,
                                      std::span<const std::size_t> sizes) {
    if (x >= width || y >= height) {
        throw CoordinateError("probe point (" + std::to_string(x) + ", " + std::to_string(y) +
                              ") is outside the " + std::to_string(width) + "x" + std::to_string(height) + " image");
    }
    const std::size_t short_side = std::min(width, height);
    if (sizes.empty() || short_side < sizes.front()) {
        throw DataError("image is " + std::to_string(width) + "x" + std::to_string(height) +
                        "; probing needs at least " + std::to_string(sizes.empty() ? 0 : sizes.front()) +
                        " pixels on each side");
    }
    std::vector<Window> out;
    for (const std::size_t requested : sizes) {
        const std::size_t s = std::min(requested, short_side);
        if (!out.empty() && out.back().size == s) continue;
        const auto place = [s](std::size_t c, std::size_t extent) {
            const long start = static_cast<long>(c) - static_cast<long>(s / 2);
            return static_cast<std::size_t>(std::clamp(start, 0L, static_cast<long>(extent - s)));
        };
        out.push_back({place(x, width), place(y, height), s});
    }
    return out;
}

WindowChoice best_window(const Image& image, std::size_t x, std::size_t y, const HierGatModel& model,
                         const dataio::Encoder& encoder, const ProbeConfig& cfg) {
    cfg.validate();
    const auto windows = candidate_windows(image.width, image.height, x, y, cfg.window_sizes);
    const std::size_t material = model.taxonomy().depth() - 1;
    WindowChoice best;
    bool have = false;
    for (const auto& w : windows) {
        Image crop = image.crop(w.x, w.y, w.size, w.size);
        if (cfg.input_size && w.size != cfg.input_size) crop = renderer::resize(crop, cfg.input_size, cfg.input_size);
        auto dist = mc_predict(model, encoder, crop, cfg.mc);
        const double h = dist.entropy_per_level[material];
        best.candidates.emplace_back(w, h);
        if (!have || h < best.distribution.entropy_per_level[material]) {
            best.window = w;
            best.distribution = std::move(dist);
            have = true;
        }
    }
    return best;
}

HierarchicalPrediction best_first_classify(const PredictionDistribution& dist, const Taxonomy& t, double threshold,
                                           double lambda) {
    if (dist.mean.size() != t.size() || dist.stddev.size() != t.size()) {
        throw DataError("distribution has " + std::to_string(dist.mean.size()) + " nodes, taxonomy has " +
                        std::to_string(t.size()));
    }
    HierarchicalPrediction pred;
    pred.entropy_per_level = dist.entropy_per_level;
    const auto step = [&](std::size_t i) {
        const auto& n = t.node_at(i);
        return PathStep{n.id, n.name, n.level, dist.mean[i]};
    };
    std::size_t cur = 0;
    pred.path.push_back(step(cur));
    while (!t.node_at(cur).children.empty()) {
        std::size_t best = 0;
        double best_score = -std::numeric_limits<double>::infinity();
        for (const auto& child : t.node_at(cur).children) {
            const std::size_t c = t.index_of(child);
            const double score = dist.mean[c] - lambda * dist.stddev[c];
            // NaN scores never win, so the chain stays valid for any input.
            if (score > best_score) {
                best_score = score;
                best = c;
            }
        }
        if (best_score == -std::numeric_limits<double>::infinity() || !(dist.mean[best] >= threshold)) break;
        cur = best;
        pred.path.push_back(step(cur));
    }
    pred.finest_level = t.node_at(cur).level_index;
    return pred;
}

void annotate(HierarchicalPrediction& pred, const taxonomy::PropertyTable& properties,
              const taxonomy::QualityThresholds& thresholds) {
    pred.tags.clear();
    for (auto it = pred.path.rbegin(); it != pred.path.rend(); ++it) {
        if (const auto* p = properties.find(it->id)) {
            const auto names = taxonomy::mechanical_summary(*p, thresholds).names();
            pred.tags.assign(names.begin(), names.end());
            return;
        }
    }
}

json HierarchicalPrediction::to_json(const Taxonomy& t) const {
    json steps = json::array();
    for (const auto& s : path) {
        steps.push_back({{"id", s.id}, {"name", s.name}, {"level", s.level}, {"confidence", s.confidence}});
    }
    json j{{"path", steps},
           {"finest_level", t.level_names().at(finest_level)},
           {"tags", tags},
           {"entropy_per_level", entropy_per_level}};
    j["window"] = window ? json{{"x", window->x}, {"y", window->y}, {"size", window->size}} : json(nullptr);
    return j;
}

HierarchicalPrediction probe(const Image& image, std::size_t x, std::size_t y, const HierGatModel& model,
                             const dataio::Encoder& encoder, const taxonomy::PropertyTable* properties,
                             const ProbeConfig& cfg) {
    const auto choice = best_window(image, x, y, model, encoder, cfg);
    auto pred = best_first_classify(choice.distribution, model.taxonomy(), cfg.threshold, cfg.lambda);
    pred.window = choice.window;
    if (properties) annotate(pred, *properties, cfg.quality);
    return pred;
}

}  // namespace matprobe::probe
