#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

namespace matprobe::taxonomy {

using NodeId = std::string;

struct TaxonomyNode {
    NodeId id;
    std::string name;
    std::string level;
    std::size_t level_index = 0;
    std::optional<NodeId> parent;
    std::vector<NodeId> children;
};

/*
 * Immutable, validated material hierarchy.
 *
 * Nodes are stored in preorder of the source document (children in document
 * order). Every downstream tensor indexes nodes by this order, so it is part
 * of the contract: index_of() and preorder() never change for a loaded value.
 * All leaves sit at the same depth; depth() is D, the number of levels on a
 * root-to-leaf path.
 */
class Taxonomy {
public:
    /// Parses and validates a taxonomy document. Throws DataError naming the
    /// offending node on schema violations, duplicate ids, orphans, cycles
    /// and level skips.
    static Taxonomy from_json(const nlohmann::json& document);
    static Taxonomy load(const std::filesystem::path& path);

    [[nodiscard]] nlohmann::json to_json() const;

    [[nodiscard]] const NodeId& root() const { return nodes_.front().id; }
    [[nodiscard]] const std::vector<std::string>& level_names() const { return level_names_; }
    [[nodiscard]] std::size_t depth() const { return depth_; }
    [[nodiscard]] std::size_t size() const { return nodes_.size(); }

    [[nodiscard]] bool contains(std::string_view id) const;
    [[nodiscard]] const TaxonomyNode& node(std::string_view id) const;
    [[nodiscard]] const TaxonomyNode& node_at(std::size_t index) const { return nodes_.at(index); }
    [[nodiscard]] std::size_t index_of(std::string_view id) const;

    /// Resolves an id, or failing that a case-insensitive display name.
    [[nodiscard]] std::optional<NodeId> resolve(std::string_view id_or_name) const;

    [[nodiscard]] const std::vector<TaxonomyNode>& nodes() const { return nodes_; }
    [[nodiscard]] std::vector<NodeId> preorder() const;
    [[nodiscard]] std::vector<NodeId> leaves() const;
    /// Preorder indices of the nodes at depth `level`.
    [[nodiscard]] const std::vector<std::size_t>& level_members(std::size_t level) const {
        return level_members_.at(level);
    }
    [[nodiscard]] bool is_leaf(std::string_view id) const { return node(id).children.empty(); }

    /// Stable FNV-1a digest of the canonical document (hex).
    [[nodiscard]] std::string hash() const;

    friend bool operator==(const Taxonomy& a, const Taxonomy& b);

private:
    std::vector<std::string> level_names_;
    std::vector<TaxonomyNode> nodes_;
    std::unordered_map<std::string, std::size_t> index_;
    std::vector<std::vector<std::size_t>> level_members_;
    std::size_t depth_ = 0;
    std::string version_;
};

struct HierarchicalLabel {
    std::vector<NodeId> path;

    [[nodiscard]] const NodeId& leaf() const { return path.back(); }
    friend bool operator==(const HierarchicalLabel&, const HierarchicalLabel&) = default;
};

/// Root-to-node path. Throws DataError on unknown ids.
HierarchicalLabel label_of(const Taxonomy& t, std::string_view node_id);

/// Number of tree edges between two nodes.
std::size_t path_distance(const Taxonomy& t, std::string_view a, std::string_view b);

struct DirectedTaxonomyGraph {
    std::vector<NodeId> nodes;  // preorder
    std::vector<std::size_t> level;
    std::vector<std::pair<std::size_t, std::size_t>> edges;  // (parent, child)

    [[nodiscard]] std::size_t in_degree(std::size_t i) const;
    [[nodiscard]] std::size_t out_degree(std::size_t i) const;
};

DirectedTaxonomyGraph to_graph(const Taxonomy& t);

struct ConsolidationMap {
    struct Merge {
        std::vector<std::string> sources;
        std::string target;
    };
    std::vector<Merge> merges;
    std::vector<std::string> omissions;

    static ConsolidationMap from_json(const nlohmann::json& document);
    static ConsolidationMap load(const std::filesystem::path& path);
};

/*
 * Applies merges and omissions to the material level.
 *
 * Placement of a merged leaf:
 *   - if the target names one of the sources, that source survives in place
 *     under the new name and the others are removed;
 *   - if all sources share a parent, a new leaf is created there at the
 *     position of the first source;
 *   - if the sources only meet one level higher, a synthetic intermediate
 *     node ("any <ancestor>") is created under that ancestor.
 * Anything farther apart is rejected. Interior nodes left without children
 * are pruned.
 */
Taxonomy consolidate(const Taxonomy& t, const ConsolidationMap& map);

/// Lowercase slug used for synthetic ids ("generic metal" -> "generic_metal").
std::string slugify(std::string_view name);

struct Range {
    double low = 0.0;
    double high = 0.0;

    [[nodiscard]] double midpoint() const { return 0.5 * (low + high); }
};

struct MechanicalProperties {
    Range density;            // kg/m^3
    Range surface_roughness;  // um
    Range youngs_modulus;     // GPa
    std::optional<Range> yield_strength;  // MPa, absent for brittle/natural materials
    Range tensile_strength;   // MPa
    Range poissons_ratio;
};

class PropertyTable {
public:
    static PropertyTable from_json(const nlohmann::json& document);
    static PropertyTable load(const std::filesystem::path& path);

    [[nodiscard]] const MechanicalProperties* find(std::string_view id) const;
    [[nodiscard]] const MechanicalProperties& at(std::string_view id) const;
    [[nodiscard]] std::size_t size() const { return entries_.size(); }
    [[nodiscard]] const std::map<NodeId, MechanicalProperties, std::less<>>& entries() const {
        return entries_;
    }
    void insert(NodeId id, MechanicalProperties props);

    [[nodiscard]] static nlohmann::json to_json(const MechanicalProperties& p);
    /// The whole table in the file format from_json reads.
    [[nodiscard]] nlohmann::json to_document() const;

    friend PropertyTable consolidate_properties(const PropertyTable&, const Taxonomy&, const ConsolidationMap&);

private:
    std::map<NodeId, MechanicalProperties, std::less<>> entries_;
};

/// Properties for a consolidated taxonomy: merged leaves get the union of
/// their sources' ranges; omitted materials are dropped.
PropertyTable consolidate_properties(const PropertyTable& table, const Taxonomy& original,
                                     const ConsolidationMap& map);

struct QualityThresholds {
    double tensile_threshold = 1.0;       // MPa
    double stiffness_threshold = 12.0;    // GPa
    double density_threshold = 1600.0;    // kg/m^3
};

enum class Strength { strong, fragile };
enum class Stiffness { rigid, deformable };
enum class Weight { heavy, light };

struct MechanicalTags {
    Strength strength;
    Stiffness stiffness;
    Weight weight;

    [[nodiscard]] std::array<std::string, 3> names() const;
    friend bool operator==(const MechanicalTags&, const MechanicalTags&) = default;
};

/// Range midpoints against thresholds; a midpoint equal to the threshold
/// takes the strong/rigid/heavy side.
MechanicalTags mechanical_summary(const MechanicalProperties& p, const QualityThresholds& q);
MechanicalTags mechanical_summary(const PropertyTable& table, std::string_view material,
                                  const QualityThresholds& q);

}  // namespace matprobe::taxonomy
