#include "raptor/manifest.hpp"

#include <algorithm>
#include <functional>

#include "raptor/errors.hpp"
#include "raptor/util.hpp"

namespace raptor {

namespace {

void check_acyclic(const std::vector<FunctionEntry>& entries,
                   const std::unordered_map<std::string, int>& index) {
    const int n = static_cast<int>(entries.size());
    std::vector<int> color(n, 0); // 0 unvisited, 1 in progress, 2 done
    std::function<void(int)> visit = [&](int u) {
        color[u] = 1;
        for (const auto& dep : entries[u].dependencies) {
            int v = index.at(dep);
            if (color[v] == 1)
                throw Error(Errc::CyclicDependency,
                            "dependency cycle through '" + entries[v].name + "'");
            if (color[v] == 0) visit(v);
        }
        color[u] = 2;
    };
    for (int u = 0; u < n; ++u)
        if (color[u] == 0) visit(u);
}

} // namespace

Json ActionManifest::canonical_json() const {
    Json functions = Json::array();
    for (const auto& e : entries) {
        functions.push_back(Json{{"name", e.name},
                                 {"location", e.location},
                                 {"dependencies", e.dependencies}});
    }
    return Json{{"functions", functions}};
}

const FunctionEntry* ActionManifest::find(const std::string& name) const {
    for (const auto& e : entries)
        if (e.name == name) return &e;
    return nullptr;
}

ActionManifest parse_manifest(const std::string& raw) {
    Json doc = Json::parse(raw, nullptr, false);
    if (doc.is_discarded())
        throw Error(Errc::MalformedDocument, "manifest is not valid JSON");
    return parse_manifest(doc);
}

ActionManifest parse_manifest(const Json& doc) {
    if (!doc.is_object() || !doc.contains("functions") || !doc["functions"].is_array())
        throw Error(Errc::MalformedDocument, "manifest must be an object with a 'functions' array");
    const Json& functions = doc["functions"];
    if (functions.empty())
        throw Error(Errc::MalformedDocument, "manifest has no functions");

    ActionManifest m;
    std::unordered_map<std::string, int> index;
    for (const auto& f : functions) {
        if (!f.is_object() || !f.contains("name") || !f["name"].is_string() ||
            !f.contains("location") || !f["location"].is_string())
            throw Error(Errc::MalformedDocument, "function entries need string 'name' and 'location'");
        FunctionEntry e;
        e.name = f["name"].get<std::string>();
        e.location = f["location"].get<std::string>();
        if (e.name.empty())
            throw Error(Errc::MalformedDocument, "function name is empty");
        if (f.contains("dependencies")) {
            if (!f["dependencies"].is_array())
                throw Error(Errc::MalformedDocument, "'dependencies' must be an array");
            for (const auto& d : f["dependencies"]) {
                if (!d.is_string())
                    throw Error(Errc::MalformedDocument, "dependency names must be strings");
                e.dependencies.push_back(d.get<std::string>());
            }
        }
        if (!is_safe_relative_path(e.location))
            throw Error(Errc::PathTraversal, "location '" + e.location + "' of '" + e.name +
                                                 "' must be relative with no '..' segments");
        if (index.count(e.name))
            throw Error(Errc::DuplicateName, "duplicate function name '" + e.name + "'");
        index.emplace(e.name, static_cast<int>(m.entries.size()));
        m.entries.push_back(std::move(e));
    }

    for (const auto& e : m.entries)
        for (const auto& dep : e.dependencies)
            if (!index.count(dep))
                throw Error(Errc::UnknownDependency,
                            "'" + e.name + "' depends on unknown function '" + dep + "'");

    check_acyclic(m.entries, index);

    m.manifest_id = sha256_hex(m.canonical_json().dump());
    return m;
}

std::string serialize_manifest(const ActionManifest& m) {
    return m.canonical_json().dump();
}

TaskDag::TaskDag(std::vector<std::string> nodes,
                 const std::vector<std::pair<std::string, std::string>>& edges)
    : nodes_(std::move(nodes)) {
    index_.reserve(nodes_.size());
    for (size_t i = 0; i < nodes_.size(); ++i)
        index_.emplace(nodes_[i], static_cast<int>(i));
    dep_lists_.resize(nodes_.size());
    succ_lists_.resize(nodes_.size());
    for (const auto& [u, v] : edges) {
        int ui = index_.at(u);
        int vi = index_.at(v);
        dep_lists_[vi].push_back(ui);
        succ_lists_[ui].push_back(vi);
    }
}

std::vector<std::pair<std::string, std::string>> TaskDag::edges() const {
    std::vector<std::pair<std::string, std::string>> out;
    for (size_t v = 0; v < nodes_.size(); ++v)
        for (int u : dep_lists_[v])
            out.emplace_back(nodes_[u], nodes_[v]);
    return out;
}

bool TaskDag::has_node(const std::string& name) const { return index_.count(name) > 0; }

int TaskDag::index_of(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? -1 : it->second;
}

std::vector<std::string> TaskDag::deps_of(const std::string& name) const {
    int idx = index_of(name);
    std::vector<std::string> out;
    if (idx < 0) return out;
    for (int u : dep_lists_[idx]) out.push_back(nodes_[u]);
    return out;
}

std::vector<std::string> TaskDag::sources() const {
    std::vector<std::string> out;
    for (size_t i = 0; i < nodes_.size(); ++i)
        if (dep_lists_[i].empty()) out.push_back(nodes_[i]);
    return out;
}

std::vector<std::string> TaskDag::sinks() const {
    std::vector<std::string> out;
    for (size_t i = 0; i < nodes_.size(); ++i)
        if (succ_lists_[i].empty()) out.push_back(nodes_[i]);
    return out;
}

bool TaskDag::operator==(const TaskDag& other) const {
    return nodes_ == other.nodes_ && dep_lists_ == other.dep_lists_;
}

TaskDag build_dag(const ActionManifest& m) {
    std::vector<std::string> nodes;
    std::vector<std::pair<std::string, std::string>> edges;
    nodes.reserve(m.entries.size());
    for (const auto& e : m.entries) nodes.push_back(e.name);
    for (const auto& e : m.entries)
        for (const auto& dep : e.dependencies) edges.emplace_back(dep, e.name);
    return TaskDag(std::move(nodes), edges);
}

TaskDag apply_mask(const TaskDag& dag, const FunctionMask& mask) {
    std::vector<char> keep(dag.size(), 0);
    std::vector<int> stack;
    for (const auto& name : mask.selected) {
        int idx = dag.index_of(name);
        if (idx < 0)
            throw Error(Errc::UnknownFunction, "mask names unknown function '" + name + "'");
        if (!keep[idx]) {
            keep[idx] = 1;
            stack.push_back(idx);
        }
    }
    // closure over transitive dependencies
    while (!stack.empty()) {
        int v = stack.back();
        stack.pop_back();
        for (int u : dag.deps_of(v))
            if (!keep[u]) {
                keep[u] = 1;
                stack.push_back(u);
            }
    }

    std::vector<std::string> nodes;
    for (size_t i = 0; i < dag.size(); ++i)
        if (keep[i]) nodes.push_back(dag.nodes()[i]);
    std::vector<std::pair<std::string, std::string>> edges;
    for (size_t v = 0; v < dag.size(); ++v) {
        if (!keep[v]) continue;
        for (int u : dag.deps_of(static_cast<int>(v)))
            if (keep[u]) edges.emplace_back(dag.nodes()[u], dag.nodes()[v]);
    }
    return TaskDag(std::move(nodes), edges);
}

} // namespace raptor
