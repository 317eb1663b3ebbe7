#include <numeric>

#include "doctest.h"

#include "raptor/errors.hpp"
#include "raptor/listsched.hpp"
#include "testutil.hpp"

using namespace raptor;
namespace tu = raptor::testutil;

TEST_CASE("hu levels match the longest-path oracle on the diamond") {
    TaskDag dag = tu::diamond_dag();
    PriorityTable t = hu_priorities(dag);
    CHECK(t.level.at("t1") == 3);
    CHECK(t.level.at("t2") == 2);
    CHECK(t.level.at("t3") == 2);
    CHECK(t.level.at("t4") == 1);
    for (size_t i = 0; i < dag.size(); ++i)
        CHECK(t.level.at(dag.nodes()[i]) == tu::longest_path_len(dag, int(i)));
}

TEST_CASE("hu levels: single node and chain") {
    TaskDag solo({"only"}, {});
    CHECK(hu_priorities(solo).level.at("only") == 1);

    TaskDag chain({"a", "b", "c"}, {{"a", "b"}, {"b", "c"}});
    PriorityTable t = hu_priorities(chain);
    CHECK(t.level.at("a") == 3);
    CHECK(t.level.at("b") == 2);
    CHECK(t.level.at("c") == 1);
}

TEST_CASE("hu levels match the oracle on random DAGs") {
    std::mt19937_64 rng(7);
    for (int iter = 0; iter < 500; ++iter) {
        TaskDag dag = tu::random_dag(rng);
        PriorityTable t = hu_priorities(dag);
        for (size_t i = 0; i < dag.size(); ++i)
            REQUIRE(t.level.at(dag.nodes()[i]) == tu::longest_path_len(dag, int(i)));
    }
}

TEST_CASE("diamond leader and follower schedules") {
    TaskDag dag = tu::diamond_dag();
    ListSchedule leader = build_schedule(dag, 0);
    ListSchedule follower = build_schedule(dag, 1);
    CHECK(leader.order == std::vector<std::string>{"t1", "t3", "t2", "t4"});
    CHECK(follower.order == std::vector<std::string>{"t1", "t2", "t3", "t4"});
    CHECK(schedule_distance(leader, follower) == 2);
    CHECK(schedule_distance(leader, leader) == 0);
}

TEST_CASE("schedule_distance errors and the reversed pair") {
    TaskDag two({"x", "y"}, {});
    ListSchedule a = build_schedule(two, 0); // y first (reverse declaration)
    ListSchedule b = build_schedule(two, 1);
    CHECK(a.order == std::vector<std::string>{"y", "x"});
    CHECK(b.order == std::vector<std::string>{"x", "y"});
    CHECK(schedule_distance(a, b) == 2);

    TaskDag other({"x", "z"}, {});
    ListSchedule c = build_schedule(other, 0);
    CHECK_THROWS_AS(schedule_distance(a, c), Error);
}

namespace {
uint64_t lcm_upto(int n) {
    uint64_t l = 1;
    for (int i = 2; i <= n; ++i) l = std::lcm(l, uint64_t(i));
    return l;
}

// run offset 0 and note whether any step had a ready group of size >= 2
bool has_contended_group(const TaskDag& dag) {
    PriorityTable t = hu_priorities(dag);
    std::map<std::string, int> remaining;
    std::set<std::string> done;
    for (const auto& n : dag.nodes()) remaining[n] = int(dag.deps_of(n).size());
    for (size_t step = 0; step < dag.size(); ++step) {
        int max_level = 0;
        int group = 0;
        std::string pick;
        for (int i = int(dag.size()) - 1; i >= 0; --i) {
            const auto& n = dag.nodes()[i];
            if (done.count(n) || remaining[n] != 0) continue;
            if (t.level.at(n) > max_level) {
                max_level = t.level.at(n);
                group = 0;
            }
            if (t.level.at(n) == max_level) {
                ++group;
                if (group == 1) pick = n;
            }
        }
        if (group >= 2) return true;
        done.insert(pick);
        for (const auto& [u, v] : dag.edges())
            if (u == pick) --remaining[v];
    }
    return false;
}
} // namespace

TEST_CASE("exhaustive small-DAG properties: validity, determinism, periodicity, diversity") {
    for (int n = 1; n <= 6; ++n) {
        const uint32_t masks = 1u << tu::edge_slots(n);
        const uint64_t period = lcm_upto(n);
        for (uint32_t mask = 0; mask < masks; ++mask) {
            TaskDag dag = tu::dag_from_mask(n, mask);
            for (unsigned offset = 0; offset <= 6; ++offset) {
                ListSchedule s = build_schedule(dag, offset);
                REQUIRE(tu::is_topological_order(dag, s.order));
                ListSchedule again = build_schedule(dag, offset);
                REQUIRE(s.order == again.order);
                ListSchedule shifted = build_schedule(dag, offset + unsigned(period));
                REQUIRE(s.order == shifted.order);
            }
            if (has_contended_group(dag)) {
                REQUIRE(build_schedule(dag, 0).order != build_schedule(dag, 1).order);
            }
        }
    }
}

TEST_CASE("schedules stay topological across offsets on random 7-node DAGs") {
    std::mt19937_64 rng(99);
    for (int iter = 0; iter < 400; ++iter) {
        TaskDag dag = tu::random_dag(rng, 7, 0.4);
        for (unsigned offset = 0; offset <= 6; ++offset)
            REQUIRE(tu::is_topological_order(dag, build_schedule(dag, offset).order));
    }
}
