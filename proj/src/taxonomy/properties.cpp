#include <algorithm>
#include <fstream>

#include "matprobe/error.hpp"
#include "matprobe/taxonomy.hpp"

namespace matprobe::taxonomy {

namespace {

using nlohmann::json;

Range parse_range(const json& v, const std::string& id, const char* field) {
    if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number()) {
        throw DataError("properties for '" + id + "': \"" + field + "\" must be [low, high]");
    }
    Range r{v[0].get<double>(), v[1].get<double>()};
    // Table lower bounds may be zero (loose dirt has no measurable tensile
    // strength); the upper bound must be positive.
    if (!(r.low >= 0.0) || !(r.high > 0.0) || r.low > r.high) {
        throw DataError("properties for '" + id + "': \"" + field + "\" range is invalid");
    }
    return r;
}

Range merge_range(const Range& a, const Range& b) {
    return {std::min(a.low, b.low), std::max(a.high, b.high)};
}

json range_json(const Range& r) { return json::array({r.low, r.high}); }

}  // namespace

PropertyTable PropertyTable::from_json(const json& document) {
    if (!document.is_object()) throw DataError("properties document must be an object");
    PropertyTable table;
    for (const auto& [id, entry] : document.items()) {
        if (!entry.is_object()) throw DataError("properties for '" + id + "' must be an object");
        for (const char* key : {"density", "roughness", "youngs", "yield", "tensile", "poisson"}) {
            if (!entry.contains(key)) throw DataError("properties for '" + id + "' lack \"" + key + "\"");
        }
        MechanicalProperties p;
        p.density = parse_range(entry["density"], id, "density");
        p.surface_roughness = parse_range(entry["roughness"], id, "roughness");
        p.youngs_modulus = parse_range(entry["youngs"], id, "youngs");
        if (!entry["yield"].is_null()) p.yield_strength = parse_range(entry["yield"], id, "yield");
        p.tensile_strength = parse_range(entry["tensile"], id, "tensile");
        p.poissons_ratio = parse_range(entry["poisson"], id, "poisson");
        table.entries_.emplace(id, p);
    }
    return table;
}

PropertyTable PropertyTable::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open properties file '" + path.string() + "'");
    json doc;
    try {
        in >> doc;
    } catch (const json::parse_error& e) {
        throw DataError("properties file '" + path.string() + "' is not valid JSON: " + e.what());
    }
    return from_json(doc);
}

const MechanicalProperties* PropertyTable::find(std::string_view id) const {
    auto it = entries_.find(id);
    return it == entries_.end() ? nullptr : &it->second;
}

const MechanicalProperties& PropertyTable::at(std::string_view id) const {
    if (const auto* p = find(id)) return *p;
    throw DataError("no mechanical properties for '" + std::string(id) + "'");
}

void PropertyTable::insert(NodeId id, MechanicalProperties props) {
    entries_.insert_or_assign(std::move(id), props);
}

json PropertyTable::to_document() const {
    json doc = json::object();
    for (const auto& [id, p] : entries_) doc[id] = to_json(p);
    return doc;
}

json PropertyTable::to_json(const MechanicalProperties& p) {
    return {{"density", range_json(p.density)},
            {"roughness", range_json(p.surface_roughness)},
            {"youngs", range_json(p.youngs_modulus)},
            {"yield", p.yield_strength ? range_json(*p.yield_strength) : json(nullptr)},
            {"tensile", range_json(p.tensile_strength)},
            {"poisson", range_json(p.poissons_ratio)}};
}

PropertyTable consolidate_properties(const PropertyTable& table, const Taxonomy& original,
                                     const ConsolidationMap& map) {
    PropertyTable out = table;
    for (const auto& o : map.omissions) {
        if (auto id = original.resolve(o)) out.entries_.erase(*id);
    }
    for (const auto& merge : map.merges) {
        std::optional<MechanicalProperties> acc;
        for (const auto& s : merge.sources) {
            auto id = original.resolve(s);
            if (!id) throw DataError("consolidation: unknown material '" + s + "'");
            const auto* p = table.find(*id);
            if (p == nullptr) continue;
            if (!acc) {
                acc = *p;
            } else {
                acc->density = merge_range(acc->density, p->density);
                acc->surface_roughness = merge_range(acc->surface_roughness, p->surface_roughness);
                acc->youngs_modulus = merge_range(acc->youngs_modulus, p->youngs_modulus);
                acc->tensile_strength = merge_range(acc->tensile_strength, p->tensile_strength);
                acc->poissons_ratio = merge_range(acc->poissons_ratio, p->poissons_ratio);
                if (acc->yield_strength && p->yield_strength) {
                    acc->yield_strength = merge_range(*acc->yield_strength, *p->yield_strength);
                } else if (p->yield_strength) {
                    acc->yield_strength = p->yield_strength;
                }
            }
            out.entries_.erase(*id);
        }
        if (!acc) continue;
        // A surviving source keeps its id; otherwise the target gets a slug id.
        std::string target_id = slugify(merge.target);
        for (const auto& s : merge.sources) {
            auto id = original.resolve(s);
            if (*id == target_id || slugify(original.node(*id).name) == target_id) target_id = *id;
        }
        out.entries_.insert_or_assign(target_id, *acc);
    }
    return out;
}

std::array<std::string, 3> MechanicalTags::names() const {
    return {strength == Strength::strong ? "Strong" : "Fragile",
            stiffness == Stiffness::rigid ? "Rigid" : "Deformable",
            weight == Weight::heavy ? "Heavy" : "Light"};
}

MechanicalTags mechanical_summary(const MechanicalProperties& p, const QualityThresholds& q) {
    return {p.tensile_strength.midpoint() >= q.tensile_threshold ? Strength::strong : Strength::fragile,
            p.youngs_modulus.midpoint() >= q.stiffness_threshold ? Stiffness::rigid : Stiffness::deformable,
            p.density.midpoint() >= q.density_threshold ? Weight::heavy : Weight::light};
}

MechanicalTags mechanical_summary(const PropertyTable& table, std::string_view material,
                                  const QualityThresholds& q) {
    return mechanical_summary(table.at(material), q);
}

}  // namespace matprobe::taxonomy
