#include <algorithm>
#include <atomic>
#include <set>
#include <string>

#include "matprobe/dataio.hpp"
#include "matprobe/error.hpp"
#include "matprobe/numerics/blob.hpp"
#include "matprobe/parallel.hpp"

namespace matprobe::dataio {

namespace {

constexpr const char* kCacheKind = "feature_cache";

}  // namespace

std::optional<std::size_t> FeatureCache::index_of(std::string_view id) const {
    const auto it = std::find(ids.begin(), ids.end(), id);
    if (it == ids.end()) return std::nullopt;
    return static_cast<std::size_t>(it - ids.begin());
}

std::span<const double> FeatureCache::row(std::size_t i) const {
    return features.values().subspan(i * dim, dim);
}

std::span<const double> FeatureCache::at(std::string_view id) const {
    const auto i = index_of(id);
    if (!i) throw DataError("feature cache has no entry for sample '" + std::string(id) + "'");
    return row(*i);
}

CacheBuildReport build_feature_cache(const DatasetManifest& m, const Encoder& enc, const CacheBuildOptions& opts) {
    const std::size_t n = m.records.size();
    const std::size_t dim = enc.dim();
    std::vector<std::vector<double>> rows(n);
    std::vector<std::string> errors(n);
    std::atomic<bool> stop{false};
    parallel_for(n, opts.threads, [&](std::size_t i) {
        if (stop) return;
        const SampleRecord& r = m.records[i];
        try {
            const auto& path = opts.source == ImageSource::context && r.context ? *r.context : r.appearance;
            Image img = read_png(path);
            if (opts.grayscale) img = to_grayscale(img);
            auto f = enc.encode(img);
            if (f.size() != dim) {
                throw NumericError("encoder '" + enc.name() + "' returned " + std::to_string(f.size()) +
                                   " values, expected " + std::to_string(dim));
            }
            // Match what a save/load round trip would give.
            for (double& v : f) v = static_cast<double>(static_cast<float>(v));
            rows[i] = std::move(f);
        } catch (const std::exception& e) {
            errors[i] = e.what();
            if (errors[i].empty()) errors[i] = "encoder failure";
            if (opts.abort_on_error) stop = true;
        }
    });

    CacheBuildReport report;
    for (std::size_t i = 0; i < n; ++i) {
        if (errors[i].empty()) continue;
        if (opts.abort_on_error) throw DataError("sample '" + m.records[i].id + "': " + errors[i]);
        report.failures.emplace_back(m.records[i].id, errors[i]);
    }
    FeatureCache& c = report.cache;
    c.encoder = enc.name();
    c.dim = dim;
    std::vector<double> values;
    for (std::size_t i = 0; i < n; ++i) {
        if (!errors[i].empty()) continue;
        c.ids.push_back(m.records[i].id);
        values.insert(values.end(), rows[i].begin(), rows[i].end());
    }
    c.features = numerics::Tensor({c.ids.size(), dim}, std::move(values));
    return report;
}

void save_feature_cache(const std::filesystem::path& path, const FeatureCache& c) {
    if (c.features.size() != c.ids.size() * c.dim) throw DataError("feature cache rows do not match its ids");
    numerics::Blob b;
    b.header = {{"kind", kCacheKind}, {"encoder", c.encoder}, {"dim", c.dim}, {"ids", c.ids}};
    b.tensors.emplace_back("features", c.features.reshaped({c.ids.size(), c.dim}));
    numerics::save_blob(path, b);
}

FeatureCache load_feature_cache(const std::filesystem::path& path, std::optional<std::size_t> expected_dim) {
    const auto b = numerics::load_blob(path);
    const auto fail = [&](const std::string& msg) { return DataError(path.string() + ": " + msg); };
    if (b.header.value("kind", "") != kCacheKind) throw fail("not a feature cache");
    FeatureCache c;
    try {
        c.encoder = b.header.at("encoder").get<std::string>();
        c.dim = b.header.at("dim").get<std::size_t>();
        c.ids = b.header.at("ids").get<std::vector<std::string>>();
    } catch (const nlohmann::json::exception& e) {
        throw fail(e.what());
    }
    if (expected_dim && *expected_dim != c.dim) {
        throw fail("feature dim " + std::to_string(c.dim) + " does not match the expected dim " +
                   std::to_string(*expected_dim));
    }
    const auto* t = b.find("features");
    if (!t) throw fail("missing features tensor");
    if (t->size() != c.ids.size() * c.dim) {
        throw fail("features tensor has " + std::to_string(t->size()) + " values, expected " +
                   std::to_string(c.ids.size()) + " x " + std::to_string(c.dim));
    }
    if (std::set<std::string>(c.ids.begin(), c.ids.end()).size() != c.ids.size()) throw fail("duplicate sample ids");
    c.features = t->reshaped({c.ids.size(), c.dim});
    return c;
}

FeatureCache import_feature_cache(const DatasetManifest& m, const FeatureCache& external) {
    FeatureCache c;
    c.encoder = external.encoder;
    c.dim = external.dim;
    std::vector<double> values;
    values.reserve(m.records.size() * c.dim);
    for (const auto& r : m.records) {
        const auto i = external.index_of(r.id);
        if (!i) throw DataError("external feature cache has no entry for sample '" + r.id + "'");
        const auto row = external.row(*i);
        values.insert(values.end(), row.begin(), row.end());
        c.ids.push_back(r.id);
    }
    c.features = numerics::Tensor({c.ids.size(), c.dim}, std::move(values));
    return c;
}

}  // namespace matprobe::dataio
