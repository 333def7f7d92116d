#include "matprobe/error.hpp"
#include "matprobe/hiergat.hpp"
#include "matprobe/numerics/blob.hpp"

namespace matprobe::hiergat {

namespace {

constexpr const char* kFormat = "matprobe.hiergat";

HierGatModel from_blob(const numerics::Blob& blob) {
    const auto& h = blob.header;
    if (h.value("format", "") != kFormat) throw DataError("not a model checkpoint");
    Taxonomy t = Taxonomy::from_json(h.at("taxonomy"));
    if (t.hash() != h.value("taxonomy_hash", "")) throw DataError("checkpoint taxonomy is corrupt (hash mismatch)");
    HierGatModel model(std::move(t), ModelConfig::from_json(h.at("config")));
    model.encoder_name = h.value("encoder", "trivial");
    model.trained = h.value("trained", false);
    for (numerics::Parameter* p : model.parameters()) {
        const numerics::Tensor* v = blob.find(p->name);
        if (v == nullptr) throw DataError("checkpoint is missing parameter '" + p->name + "'");
        if (v->shape() != p->value.shape()) {
            throw DataError("checkpoint parameter '" + p->name + "' has shape " + numerics::shape_string(v->shape()) +
                            ", model expects " + numerics::shape_string(p->value.shape()));
        }
        p->value = *v;
        p->zero_grad();
    }
    return model;
}

}  // namespace

void save_model(const std::filesystem::path& path, const HierGatModel& model) {
    numerics::Blob blob;
    blob.header = {{"format", kFormat},
                   {"taxonomy", model.taxonomy().to_json()},
                   {"taxonomy_hash", model.taxonomy().hash()},
                   {"config", model.config().to_json()},
                   {"encoder", model.encoder_name},
                   {"trained", model.trained},
                   {"node_ids", model.taxonomy().preorder()}};
    for (const numerics::Parameter* p : model.parameters()) blob.tensors.emplace_back(p->name, p->value);
    numerics::save_blob(path, blob);
}

HierGatModel load_model(const std::filesystem::path& path) {
    try {
        return from_blob(numerics::load_blob(path));
    } catch (const nlohmann::json::exception& e) {
        throw DataError(path.string() + ": " + e.what());
    }
}

HierGatModel load_model(const std::filesystem::path& path, const Taxonomy& expected) {
    const auto blob = numerics::load_blob(path);
    const std::string hash = blob.header.value("taxonomy_hash", "");
    if (hash != expected.hash()) {
        throw DataError("checkpoint " + path.string() + " was trained on taxonomy " + hash +
                        ", which does not match " + expected.hash());
    }
    try {
        return from_blob(blob);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(path.string() + ": " + e.what());
    }
}

}  // namespace matprobe::hiergat
