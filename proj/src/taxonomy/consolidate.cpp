#include <algorithm>
#include <fstream>
#include <map>
#include <set>

#include "matprobe/error.hpp"
#include "matprobe/taxonomy.hpp"

namespace matprobe::taxonomy {

namespace {

using nlohmann::json;

std::string lower(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

// Mutable mirror of the tree used while editing.
struct Draft {
    struct Node {
        std::string name;
        std::string level;
        std::optional<std::string> parent;
        std::vector<std::string> children;
    };
    std::vector<std::string> level_names;
    std::string root;
    std::map<std::string, Node> nodes;

    explicit Draft(const Taxonomy& t) : level_names(t.level_names()), root(t.root()) {
        for (const auto& n : t.nodes()) nodes[n.id] = Node{n.name, n.level, n.parent, n.children};
    }

    void detach(const std::string& id) {
        auto& n = nodes.at(id);
        if (n.parent) {
            auto& siblings = nodes.at(*n.parent).children;
            siblings.erase(std::find(siblings.begin(), siblings.end(), id));
        }
        nodes.erase(id);
    }

    void insert_child(const std::string& parent, std::size_t position, const std::string& id, Node node) {
        auto& siblings = nodes.at(parent).children;
        siblings.insert(siblings.begin() + static_cast<std::ptrdiff_t>(std::min(position, siblings.size())), id);
        nodes.emplace(id, std::move(node));
    }

    std::size_t position_in_parent(const std::string& id) const {
        const auto& siblings = nodes.at(*nodes.at(id).parent).children;
        return static_cast<std::size_t>(std::find(siblings.begin(), siblings.end(), id) - siblings.begin());
    }

    // Removes interior nodes that lost all their children, bottom-up.
    void prune(std::size_t leaf_level) {
        bool changed = true;
        while (changed) {
            changed = false;
            for (auto it = nodes.begin(); it != nodes.end(); ++it) {
                const auto& [id, n] = *it;
                const auto li = static_cast<std::size_t>(
                    std::find(level_names.begin(), level_names.end(), n.level) - level_names.begin());
                if (n.children.empty() && li < leaf_level && id != root) {
                    detach(std::string(id));
                    changed = true;
                    break;
                }
            }
        }
    }

    json to_json() const {
        json list = json::array();
        std::vector<std::string> stack{root};
        while (!stack.empty()) {
            const std::string id = stack.back();
            stack.pop_back();
            const auto& n = nodes.at(id);
            list.push_back({{"id", id},
                            {"name", n.name},
                            {"level", n.level},
                            {"parent", n.parent ? json(*n.parent) : json(nullptr)}});
            for (auto it = n.children.rbegin(); it != n.children.rend(); ++it) stack.push_back(*it);
        }
        return {{"level_names", level_names}, {"nodes", std::move(list)}};
    }
};

}  // namespace

ConsolidationMap ConsolidationMap::from_json(const json& document) {
    ConsolidationMap m;
    if (!document.is_object()) throw DataError("consolidation map must be a JSON object");
    if (auto it = document.find("merges"); it != document.end()) {
        if (!it->is_array()) throw DataError("consolidation map: merges must be an array");
        for (const auto& entry : *it) {
            if (!entry.contains("sources") || !entry.contains("target") || !entry["sources"].is_array() ||
                !entry["target"].is_string()) {
                throw DataError("consolidation map: each merge needs \"sources\" (array) and \"target\" (string)");
            }
            Merge merge;
            merge.target = entry["target"].get<std::string>();
            for (const auto& s : entry["sources"]) merge.sources.push_back(s.get<std::string>());
            if (merge.sources.empty()) throw DataError("consolidation map: merge into '" + merge.target + "' has no sources");
            m.merges.push_back(std::move(merge));
        }
    }
    if (auto it = document.find("omit"); it != document.end()) {
        if (!it->is_array()) throw DataError("consolidation map: omit must be an array");
        for (const auto& s : *it) m.omissions.push_back(s.get<std::string>());
    }
    return m;
}

ConsolidationMap ConsolidationMap::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open consolidation map '" + path.string() + "'");
    json doc;
    try {
        in >> doc;
    } catch (const json::parse_error& e) {
        throw DataError("consolidation map '" + path.string() + "' is not valid JSON: " + e.what());
    }
    return from_json(doc);
}

Taxonomy consolidate(const Taxonomy& t, const ConsolidationMap& map) {
    const std::size_t leaf_level = t.depth() - 1;

    auto resolve_material = [&](const std::string& name) {
        auto id = t.resolve(name);
        if (!id) throw DataError("consolidation: unknown material '" + name + "'");
        if (t.node(*id).level_index != leaf_level || !t.node(*id).children.empty()) {
            throw DataError("consolidation: '" + name + "' is not a material-level leaf");
        }
        return *id;
    };

    std::set<std::string> merged_sources;
    std::vector<std::vector<std::string>> sources(map.merges.size());
    for (std::size_t m = 0; m < map.merges.size(); ++m) {
        for (const auto& s : map.merges[m].sources) {
            const auto id = resolve_material(s);
            if (!merged_sources.insert(id).second) {
                throw DataError("consolidation: '" + id + "' appears in more than one merge");
            }
            sources[m].push_back(id);
        }
    }
    std::vector<std::string> omitted;
    for (const auto& o : map.omissions) {
        const auto id = resolve_material(o);
        if (merged_sources.contains(id)) throw DataError("consolidation: '" + id + "' is both omitted and merged");
        for (const auto& merge : map.merges) {
            if (slugify(merge.target) == id || lower(merge.target) == lower(t.node(id).name)) {
                throw DataError("consolidation: '" + id + "' is both omitted and a merge target");
            }
        }
        omitted.push_back(id);
    }

    Draft draft(t);
    for (const auto& id : omitted) draft.detach(id);

    for (std::size_t m = 0; m < map.merges.size(); ++m) {
        const auto& target = map.merges[m].target;
        auto& ids = sources[m];
        std::sort(ids.begin(), ids.end(),
                  [&](const auto& a, const auto& b) { return t.index_of(a) < t.index_of(b); });

        auto survivor = std::find_if(ids.begin(), ids.end(), [&](const std::string& id) {
            return id == slugify(target) || lower(t.node(id).name) == lower(target);
        });
        if (survivor != ids.end()) {
            const std::string keep = *survivor;
            for (const auto& id : ids) {
                if (id != keep) draft.detach(id);
            }
            draft.nodes.at(keep).name = target;
            continue;
        }

        const std::string new_id = slugify(target);
        if (draft.nodes.contains(new_id)) {
            throw DataError("consolidation: target id '" + new_id + "' collides with an existing node");
        }
        const std::string& first = ids.front();
        const std::string parent = *t.node(first).parent;
        const bool siblings = std::all_of(ids.begin(), ids.end(),
                                          [&](const auto& id) { return *t.node(id).parent == parent; });
        Draft::Node leaf{target, t.level_names()[leaf_level], std::nullopt, {}};

        if (siblings) {
            const std::size_t at = draft.position_in_parent(first);
            for (const auto& id : ids) draft.detach(id);
            leaf.parent = parent;
            draft.insert_child(parent, at, new_id, std::move(leaf));
            continue;
        }

        // Sources under different parents: they must share a grandparent.
        const std::string grandparent = *t.node(parent).parent;
        const bool cousins = std::all_of(ids.begin(), ids.end(), [&](const auto& id) {
            return *t.node(*t.node(id).parent).parent == grandparent;
        });
        if (!cousins || leaf_level < 2) {
            throw DataError("consolidation: sources of '" + target + "' have no common parent at the form level");
        }
        const std::string group_id = "any_" + grandparent;
        if (draft.nodes.contains(group_id)) {
            throw DataError("consolidation: synthetic node '" + group_id + "' already exists");
        }
        const std::size_t at = draft.position_in_parent(parent);
        for (const auto& id : ids) draft.detach(id);
        Draft::Node group{"Any " + lower(t.node(grandparent).name), t.level_names()[leaf_level - 1], grandparent, {}};
        draft.insert_child(grandparent, at, group_id, std::move(group));
        leaf.parent = group_id;
        draft.insert_child(group_id, 0, new_id, std::move(leaf));
    }

    draft.prune(leaf_level);
    if (draft.nodes.at(draft.root).children.empty() && leaf_level > 0) {
        throw DataError("consolidation removed every material");
    }
    return Taxonomy::from_json(draft.to_json());
}

}  // namespace matprobe::taxonomy
