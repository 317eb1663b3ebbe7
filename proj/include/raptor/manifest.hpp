#ifndef RAPTOR_MANIFEST_HPP
#define RAPTOR_MANIFEST_HPP

#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "json.hpp"

namespace raptor {

using Json = nlohmann::json;

// One packed function: a qualified "file:entrypoint" style name, the file it
// lives at inside the unpacked archive, and the functions that must complete
// before it runs.
struct FunctionEntry {
    std::string name;
    std::string location;
    std::vector<std::string> dependencies;

    bool operator==(const FunctionEntry&) const = default;
};

// The deployable unit: an ordered list of functions with an acyclic
// dependency relation. Declaration order is significant; it is the
// deterministic tie-break key for scheduling.
struct ActionManifest {
    std::vector<FunctionEntry> entries;
    std::string manifest_id;

    Json canonical_json() const;
    const FunctionEntry* find(const std::string& name) const;
};

// Dependency graph over task names. Edge (u, v) means u must complete
// before v. Nodes keep manifest declaration order.
class TaskDag {
public:
    TaskDag() = default;
    // Node order is declaration order. Callers are responsible for
    // acyclicity (parse_manifest rejects cycles before a dag exists).
    TaskDag(std::vector<std::string> nodes,
            const std::vector<std::pair<std::string, std::string>>& edges);

    const std::vector<std::string>& nodes() const { return nodes_; }
    std::vector<std::pair<std::string, std::string>> edges() const;

    bool has_node(const std::string& name) const;
    int index_of(const std::string& name) const; // -1 if absent
    size_t size() const { return nodes_.size(); }
    bool empty() const { return nodes_.empty(); }

    const std::vector<int>& deps_of(int idx) const { return dep_lists_[idx]; }
    const std::vector<int>& succs_of(int idx) const { return succ_lists_[idx]; }
    std::vector<std::string> deps_of(const std::string& name) const;

    std::vector<std::string> sources() const;
    std::vector<std::string> sinks() const;

    bool operator==(const TaskDag& other) const;

private:
    std::vector<std::string> nodes_;
    std::unordered_map<std::string, int> index_;
    std::vector<std::vector<int>> dep_lists_;
    std::vector<std::vector<int>> succ_lists_;
};

// Subset of manifest functions an activation must schedule.
struct FunctionMask {
    std::set<std::string> selected;

    bool operator==(const FunctionMask&) const = default;
};

// Parses and validates a manifest document (see README for the format).
// Throws Error with one of: MalformedDocument, DuplicateName,
// UnknownDependency, CyclicDependency, PathTraversal.
ActionManifest parse_manifest(const std::string& raw);
ActionManifest parse_manifest(const Json& doc);

std::string serialize_manifest(const ActionManifest& m);

TaskDag build_dag(const ActionManifest& m);

// Sub-DAG induced by the mask closure: selected tasks plus every transitive
// dependency, edges restricted accordingly. Throws UnknownFunction.
TaskDag apply_mask(const TaskDag& dag, const FunctionMask& mask);

} // namespace raptor

#endif
