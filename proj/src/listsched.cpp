#include "raptor/listsched.hpp"

#include <algorithm>
#include <set>

#include "raptor/errors.hpp"

namespace raptor {

namespace {

std::vector<int> hu_levels_by_index(const TaskDag& dag) {
    const int n = static_cast<int>(dag.size());
    std::vector<int> level(n, 0);
    // successors-first order via iterative DFS
    std::vector<int> state(n, 0);
    for (int start = 0; start < n; ++start) {
        if (state[start]) continue;
        std::vector<int> stack{start};
        while (!stack.empty()) {
            int u = stack.back();
            if (state[u] == 0) {
                state[u] = 1;
                for (int v : dag.succs_of(u))
                    if (state[v] == 0) stack.push_back(v);
            } else {
                stack.pop_back();
                if (state[u] == 2) continue;
                state[u] = 2;
                int best = 0;
                for (int v : dag.succs_of(u)) best = std::max(best, level[v]);
                level[u] = 1 + best;
            }
        }
    }
    return level;
}

} // namespace

int ListSchedule::position_of(const std::string& task) const {
    for (size_t i = 0; i < order.size(); ++i)
        if (order[i] == task) return static_cast<int>(i);
    return -1;
}

PriorityTable hu_priorities(const TaskDag& dag) {
    auto levels = hu_levels_by_index(dag);
    PriorityTable table;
    table.level.reserve(dag.size());
    for (size_t i = 0; i < dag.size(); ++i)
        table.level.emplace(dag.nodes()[i], levels[i]);
    return table;
}

ListSchedule build_schedule(const TaskDag& dag, unsigned offset) {
    const int n = static_cast<int>(dag.size());
    const auto level = hu_levels_by_index(dag);

    std::vector<int> pending_deps(n, 0);
    for (int v = 0; v < n; ++v)
        pending_deps[v] = static_cast<int>(dag.deps_of(v).size());

    std::vector<char> emitted(n, 0);
    ListSchedule sched;
    sched.offset = offset;
    sched.order.reserve(n);

    std::vector<int> group;
    for (int step = 0; step < n; ++step) {
        // ready tasks at the highest level, in reverse declaration order
        int max_level = 0;
        group.clear();
        for (int v = n - 1; v >= 0; --v) {
            if (emitted[v] || pending_deps[v] != 0) continue;
            if (level[v] > max_level) {
                max_level = level[v];
                group.clear();
            }
            if (level[v] == max_level) group.push_back(v);
        }
        const auto k = static_cast<unsigned>(group.size());
        int pick = group[offset % k];
        emitted[pick] = 1;
        for (int v : dag.succs_of(pick)) --pending_deps[v];
        sched.order.push_back(dag.nodes()[pick]);
    }
    return sched;
}

int schedule_distance(const ListSchedule& a, const ListSchedule& b) {
    if (a.order.size() != b.order.size())
        throw Error(Errc::MismatchedTaskSets, "schedules cover different task counts");
    std::set<std::string> sa(a.order.begin(), a.order.end());
    std::set<std::string> sb(b.order.begin(), b.order.end());
    if (sa != sb)
        throw Error(Errc::MismatchedTaskSets, "schedules cover different task sets");
    int distance = 0;
    for (size_t i = 0; i < a.order.size(); ++i)
        if (a.order[i] != b.order[i]) ++distance;
    return distance;
}

} // namespace raptor
