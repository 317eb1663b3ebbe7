#ifndef RAPTOR_LISTSCHED_HPP
#define RAPTOR_LISTSCHED_HPP

#include <string>
#include <unordered_map>
#include <vector>

#include "raptor/manifest.hpp"

namespace raptor {

// Hu levels: level(sink) = 1, level(u) = 1 + max over successors. A task's
// level is the node count of its longest path to a sink.
struct PriorityTable {
    std::unordered_map<std::string, int> level;
};

// A member's static one-machine schedule: a topological order of the masked
// DAG, diversified by the member's offset.
struct ListSchedule {
    std::vector<std::string> order;
    unsigned offset = 0;

    int position_of(const std::string& task) const; // -1 if absent
};

PriorityTable hu_priorities(const TaskDag& dag);

// Emits repeatedly from the ready set: highest Hu level first; among the
// ready tasks at that level (group of size k), canonical order is reverse
// declaration order rotated left by (offset mod k). Offset 0 is the flight
// leader's schedule.
ListSchedule build_schedule(const TaskDag& dag, unsigned offset);

// Count of positions where the two orders differ. Throws MismatchedTaskSets.
int schedule_distance(const ListSchedule& a, const ListSchedule& b);

} // namespace raptor

#endif
