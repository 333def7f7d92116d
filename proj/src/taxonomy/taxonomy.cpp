#include "matprobe/taxonomy.hpp"

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <fstream>
#include <functional>
#include <unordered_set>

#include "matprobe/error.hpp"

namespace matprobe::taxonomy {

namespace {

using nlohmann::json;

std::string lower(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

const json& require(const json& obj, const char* key, const std::string& where) {
    auto it = obj.find(key);
    if (it == obj.end()) {
        throw DataError("taxonomy schema violation: " + where + " is missing \"" + key + "\"");
    }
    return *it;
}

struct RawNode {
    std::string id;
    std::string name;
    std::string level;
    std::optional<std::string> parent;
};

}  // namespace

Taxonomy Taxonomy::from_json(const json& document) {
    if (!document.is_object()) {
        throw DataError("taxonomy schema violation: document is not an object");
    }
    const json& levels = require(document, "level_names", "document");
    const json& nodes = require(document, "nodes", "document");
    if (!levels.is_array() || levels.empty()) {
        throw DataError("taxonomy schema violation: level_names must be a non-empty array");
    }
    if (!nodes.is_array() || nodes.empty()) {
        throw DataError("taxonomy schema violation: nodes must be a non-empty array");
    }

    Taxonomy t;
    for (const auto& l : levels) {
        if (!l.is_string()) throw DataError("taxonomy schema violation: level name is not a string");
        t.level_names_.push_back(l.get<std::string>());
    }
    if (auto v = document.find("version"); v != document.end() && v->is_string()) {
        t.version_ = v->get<std::string>();
    }

    std::vector<RawNode> raw;
    std::unordered_map<std::string, std::size_t> pos;
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        const json& n = nodes[i];
        const std::string where = "node #" + std::to_string(i);
        if (!n.is_object()) throw DataError("taxonomy schema violation: " + where + " is not an object");
        const json& id = require(n, "id", where);
        if (!id.is_string() || id.get<std::string>().empty()) {
            throw DataError("taxonomy schema violation: " + where + " has an invalid id");
        }
        RawNode r;
        r.id = id.get<std::string>();
        const std::string at = "node '" + r.id + "'";
        const json& name = require(n, "name", at);
        const json& level = require(n, "level", at);
        const json& parent = require(n, "parent", at);
        if (!name.is_string() || !level.is_string() || !(parent.is_null() || parent.is_string())) {
            throw DataError("taxonomy schema violation: " + at + " has mistyped fields");
        }
        r.name = name.get<std::string>();
        r.level = level.get<std::string>();
        if (parent.is_string()) r.parent = parent.get<std::string>();
        if (!pos.emplace(r.id, raw.size()).second) {
            throw DataError("duplicate node id '" + r.id + "'");
        }
        raw.push_back(std::move(r));
    }

    std::optional<std::size_t> root;
    for (std::size_t i = 0; i < raw.size(); ++i) {
        if (!raw[i].parent) {
            if (root) throw DataError("node '" + raw[i].id + "' is a second root (first: '" + raw[*root].id + "')");
            root = i;
        } else if (!pos.contains(*raw[i].parent)) {
            throw DataError("orphan node '" + raw[i].id + "': parent '" + *raw[i].parent + "' does not exist");
        }
    }
    if (!root) {
        // Every node has a parent, so at least one cycle exists.
        throw DataError("cycle detected: no root node (first node '" + raw.front().id + "')");
    }
    for (std::size_t i = 0; i < raw.size(); ++i) {
        std::unordered_set<std::size_t> seen;
        std::size_t cur = i;
        while (raw[cur].parent) {
            if (!seen.insert(cur).second) throw DataError("cycle detected at node '" + raw[i].id + "'");
            cur = pos.at(*raw[cur].parent);
        }
    }

    auto level_index = [&](const RawNode& r) -> std::size_t {
        auto it = std::find(t.level_names_.begin(), t.level_names_.end(), r.level);
        if (it == t.level_names_.end()) {
            throw DataError("node '" + r.id + "' has unknown level '" + r.level + "'");
        }
        return static_cast<std::size_t>(it - t.level_names_.begin());
    };
    if (level_index(raw[*root]) != 0) {
        throw DataError("root node '" + raw[*root].id + "' must be at level '" + t.level_names_[0] + "'");
    }
    for (const auto& r : raw) {
        if (!r.parent) continue;
        const std::size_t li = level_index(r);
        const std::size_t pi = level_index(raw[pos.at(*r.parent)]);
        if (li > pi + 1) {
            throw DataError("level-skip at node '" + r.id + "': level '" + r.level + "' under '" + *r.parent +
                            "' at level '" + t.level_names_[pi] + "'");
        }
        if (li != pi + 1) {
            throw DataError("level mismatch at node '" + r.id + "': level '" + r.level + "' is not below '" +
                            t.level_names_[pi] + "'");
        }
    }

    std::vector<std::vector<std::size_t>> kids(raw.size());
    for (std::size_t i = 0; i < raw.size(); ++i) {
        if (raw[i].parent) kids[pos.at(*raw[i].parent)].push_back(i);
    }

    std::optional<std::size_t> leaf_depth;
    std::function<void(std::size_t)> visit = [&](std::size_t i) {
        TaxonomyNode node;
        node.id = raw[i].id;
        node.name = raw[i].name;
        node.level = raw[i].level;
        node.level_index = level_index(raw[i]);
        node.parent = raw[i].parent;
        for (std::size_t k : kids[i]) node.children.push_back(raw[k].id);
        if (node.children.empty()) {
            if (leaf_depth && *leaf_depth != node.level_index) {
                throw DataError("ragged taxonomy: leaf '" + node.id + "' at level '" + node.level +
                                "' while other leaves are at level '" + t.level_names_[*leaf_depth] + "'");
            }
            leaf_depth = node.level_index;
        }
        t.index_.emplace(node.id, t.nodes_.size());
        t.nodes_.push_back(std::move(node));
        for (std::size_t k : kids[i]) visit(k);
    };
    visit(*root);

    t.depth_ = *leaf_depth + 1;
    t.level_members_.resize(t.depth_);
    for (std::size_t i = 0; i < t.nodes_.size(); ++i) {
        t.level_members_[t.nodes_[i].level_index].push_back(i);
    }
    return t;
}

Taxonomy Taxonomy::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open taxonomy file '" + path.string() + "'");
    json doc;
    try {
        in >> doc;
    } catch (const json::parse_error& e) {
        throw DataError("taxonomy file '" + path.string() + "' is not valid JSON: " + e.what());
    }
    return from_json(doc);
}

json Taxonomy::to_json() const {
    json nodes = json::array();
    for (const auto& n : nodes_) {
        nodes.push_back({{"id", n.id},
                         {"name", n.name},
                         {"level", n.level},
                         {"parent", n.parent ? json(*n.parent) : json(nullptr)}});
    }
    json doc = {{"level_names", level_names_}, {"nodes", std::move(nodes)}};
    if (!version_.empty()) doc["version"] = version_;
    return doc;
}

bool Taxonomy::contains(std::string_view id) const {
    return index_.contains(std::string(id));
}

const TaxonomyNode& Taxonomy::node(std::string_view id) const {
    return nodes_[index_of(id)];
}

std::size_t Taxonomy::index_of(std::string_view id) const {
    auto it = index_.find(std::string(id));
    if (it == index_.end()) throw DataError("unknown taxonomy node '" + std::string(id) + "'");
    return it->second;
}

std::optional<NodeId> Taxonomy::resolve(std::string_view id_or_name) const {
    if (contains(id_or_name)) return NodeId(id_or_name);
    const std::string key = lower(id_or_name);
    for (const auto& n : nodes_) {
        if (lower(n.name) == key) return n.id;
    }
    return std::nullopt;
}

std::vector<NodeId> Taxonomy::preorder() const {
    std::vector<NodeId> ids;
    ids.reserve(nodes_.size());
    for (const auto& n : nodes_) ids.push_back(n.id);
    return ids;
}

std::vector<NodeId> Taxonomy::leaves() const {
    std::vector<NodeId> ids;
    for (const auto& n : nodes_) {
        if (n.children.empty()) ids.push_back(n.id);
    }
    return ids;
}

std::string Taxonomy::hash() const {
    json canonical = to_json();
    canonical.erase("version");
    const std::string text = canonical.dump();
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

bool operator==(const Taxonomy& a, const Taxonomy& b) {
    if (a.level_names_ != b.level_names_ || a.nodes_.size() != b.nodes_.size()) return false;
    for (std::size_t i = 0; i < a.nodes_.size(); ++i) {
        const auto& x = a.nodes_[i];
        const auto& y = b.nodes_[i];
        if (x.id != y.id || x.name != y.name || x.level != y.level || x.parent != y.parent ||
            x.children != y.children) {
            return false;
        }
    }
    return true;
}

HierarchicalLabel label_of(const Taxonomy& t, std::string_view node_id) {
    HierarchicalLabel label;
    const TaxonomyNode* cur = &t.node(node_id);
    while (true) {
        label.path.push_back(cur->id);
        if (!cur->parent) break;
        cur = &t.node(*cur->parent);
    }
    std::reverse(label.path.begin(), label.path.end());
    return label;
}

std::size_t path_distance(const Taxonomy& t, std::string_view a, std::string_view b) {
    const auto pa = label_of(t, a).path;
    const auto pb = label_of(t, b).path;
    std::size_t common = 0;
    while (common < pa.size() && common < pb.size() && pa[common] == pb[common]) ++common;
    return (pa.size() - common) + (pb.size() - common);
}

std::size_t DirectedTaxonomyGraph::in_degree(std::size_t i) const {
    return static_cast<std::size_t>(
        std::count_if(edges.begin(), edges.end(), [i](const auto& e) { return e.second == i; }));
}

std::size_t DirectedTaxonomyGraph::out_degree(std::size_t i) const {
    return static_cast<std::size_t>(
        std::count_if(edges.begin(), edges.end(), [i](const auto& e) { return e.first == i; }));
}

DirectedTaxonomyGraph to_graph(const Taxonomy& t) {
    DirectedTaxonomyGraph g;
    for (std::size_t i = 0; i < t.size(); ++i) {
        const auto& n = t.node_at(i);
        g.nodes.push_back(n.id);
        g.level.push_back(n.level_index);
        for (const auto& c : n.children) g.edges.emplace_back(i, t.index_of(c));
    }
    return g;
}

std::string slugify(std::string_view name) {
    std::string out;
    bool pending_sep = false;
    for (unsigned char c : name) {
        if (std::isalnum(c)) {
            if (pending_sep && !out.empty()) out.push_back('_');
            out.push_back(static_cast<char>(std::tolower(c)));
            pending_sep = false;
        } else {
            pending_sep = true;
        }
    }
    return out;
}

}  // namespace matprobe::taxonomy
