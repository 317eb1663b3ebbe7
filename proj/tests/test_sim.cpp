#include <cmath>

#include "doctest.h"

#include "raptor/errors.hpp"
#include "raptor/simharness.hpp"
#include "testutil.hpp"

using namespace raptor;
namespace tu = raptor::testutil;

namespace {

SimConfig ideal_diamond(unsigned flight_size) {
    SimConfig cfg;
    cfg.dag = tu::diamond_dag();
    cfg.flight_size = flight_size;
    cfg.task_duration = DurationDist(100.0);
    cfg.net_latency = DurationDist(0.0);
    cfg.failure_prob = 0.0;
    cfg.seed = 1;
    return cfg;
}

// Replays the trace and checks the flight safety invariants at every member:
// realized order is a subsequence of the static schedule, and nothing starts
// before its dependencies are terminal at that member.
void validate_trace(const SimConfig& cfg, const SimResult& res) {
    std::vector<std::set<std::string>> terminal(cfg.flight_size);
    std::vector<size_t> cursor(cfg.flight_size, 0);
    std::vector<ListSchedule> schedules;
    for (unsigned k = 0; k < cfg.flight_size; ++k)
        schedules.push_back(build_schedule(cfg.dag, k));

    for (const auto& ev : res.trace) {
        if (ev.member < 0) continue;
        auto k = size_t(ev.member);
        if (ev.kind == "task_start") {
            for (const auto& dep : cfg.dag.deps_of(ev.task))
                REQUIRE(terminal[k].count(dep));
            const auto& order = schedules[k].order;
            while (cursor[k] < order.size() && order[cursor[k]] != ev.task) ++cursor[k];
            REQUIRE(cursor[k] < order.size()); // subsequence of the static schedule
            ++cursor[k];
        } else if (ev.kind == "terminal") {
            terminal[k].insert(ev.task);
        }
    }
}

} // namespace

TEST_CASE("ideal two-member flight realizes the split diamond") {
    SimConfig cfg = ideal_diamond(2);
    SimResult res = run_sim(cfg);

    CHECK(res.executed[0] == std::vector<std::string>{"t1", "t3", "t4"});
    CHECK(res.executed[1] == std::vector<std::string>{"t1", "t2", "t4"});
    CHECK(res.total_executions() == 6); // of a possible 8
    CHECK(res.executions_per_task.at("t1") == 2);
    CHECK(res.executions_per_task.at("t2") == 1);
    CHECK(res.executions_per_task.at("t3") == 1);
    CHECK(res.executions_per_task.at("t4") == 2);
    CHECK_FALSE(res.job_failed);
    CHECK(res.job_latency_ms == doctest::Approx(300.0));
    validate_trace(cfg, res);
}

TEST_CASE("flight of one is the sequential baseline") {
    SimConfig cfg = ideal_diamond(1);
    SimResult res = run_sim(cfg);
    CHECK(res.total_executions() == 4);
    for (const auto& [task, n] : res.executions_per_task) CHECK(n == 1);
    CHECK(res.job_latency_ms == doctest::Approx(400.0)); // sum along the schedule
    CHECK(res.messages_sent == 0);
    validate_trace(cfg, res);
}

TEST_CASE("executions never exceed flight_size per task") {
    std::mt19937_64 rng(3);
    for (int iter = 0; iter < 60; ++iter) {
        SimConfig cfg;
        cfg.dag = tu::random_dag(rng, 6, 0.4);
        cfg.flight_size = 1 + unsigned(iter % 4);
        cfg.net_latency = DurationDist::uniform(0.0, 20.0);
        cfg.task_duration = DurationDist::uniform(50.0, 150.0);
        cfg.failure_prob = (iter % 3) * 0.25;
        cfg.seed = 1000 + uint64_t(iter);
        SimResult res = run_sim(cfg);
        for (const auto& [task, n] : res.executions_per_task)
            REQUIRE(n <= int(cfg.flight_size));
        validate_trace(cfg, res);
    }
}

TEST_CASE("single-task job success matches the analytic 1 - p^f oracle") {
    const double p = 0.5;
    const int runs = 10000;
    for (unsigned f : {1u, 2u}) {
        SimConfig cfg;
        cfg.dag = TaskDag({"only"}, {});
        cfg.flight_size = f;
        cfg.task_duration = DurationDist(100.0);
        cfg.net_latency = DurationDist(2.0);
        cfg.failure_prob = p;
        int ok = 0;
        for (int r = 0; r < runs; ++r) {
            cfg.seed = 40000 + uint64_t(r);
            if (!run_sim(cfg).job_failed) ++ok;
        }
        double expect = 1.0 - std::pow(p, f);
        double se = std::sqrt(expect * (1 - expect) / runs);
        CHECK(std::abs(double(ok) / runs - expect) < 3 * se + 1e-12);
    }
}

TEST_CASE("identical config and seed give identical traces") {
    SimConfig cfg = ideal_diamond(3);
    cfg.net_latency = DurationDist::uniform(0.0, 10.0);
    cfg.task_duration = DurationDist::uniform(50.0, 150.0);
    cfg.failure_prob = 0.3;
    cfg.seed = 777;
    SimResult a = run_sim(cfg);
    SimResult b = run_sim(cfg);
    REQUIRE(a.trace.size() == b.trace.size());
    for (size_t i = 0; i < a.trace.size(); ++i) {
        CHECK(a.trace[i].t == b.trace[i].t);
        CHECK(a.trace[i].member == b.trace[i].member);
        CHECK(a.trace[i].kind == b.trace[i].kind);
        CHECK(a.trace[i].task == b.trace[i].task);
    }
    CHECK(a.job_latency_ms == b.job_latency_ms);
    CHECK(a.job_failed == b.job_failed);
}

TEST_CASE("members converge and never lose a produced non-error result") {
    std::mt19937_64 rng(11);
    for (int iter = 0; iter < 80; ++iter) {
        SimConfig cfg;
        cfg.dag = tu::random_dag(rng, 5, 0.4);
        cfg.flight_size = 2 + unsigned(iter % 3);
        cfg.task_duration = DurationDist::uniform(10.0, 100.0);
        cfg.net_latency = DurationDist::uniform(0.0, 5.0);
        cfg.failure_prob = 0.4;
        cfg.seed = 5000 + uint64_t(iter);
        SimResult res = run_sim(cfg);

        // collect which tasks had a successful local completion anywhere
        std::set<std::string> produced_ok;
        for (const auto& ev : res.trace)
            if (ev.kind == "terminal" && ev.detail == "DoneLocal") produced_ok.insert(ev.task);

        for (const auto& task : cfg.dag.nodes()) {
            std::set<std::string> outputs_seen;
            for (unsigned k = 0; k < cfg.flight_size; ++k) {
                const Json& m = res.member_final[k];
                REQUIRE(m["outputs"].contains(task));
                outputs_seen.insert(m["outputs"][task].dump());
                if (produced_ok.count(task)) REQUIRE_FALSE(m["outputs"][task].is_null());
            }
            CHECK(outputs_seen.size() == 1); // agreement after quiescence
        }
    }
}

TEST_CASE("job latency is capped by member-count times task time plus one latency") {
    for (double p : {0.0, 0.3, 0.7, 1.0}) {
        SimConfig cfg = ideal_diamond(2);
        cfg.net_latency = DurationDist(5.0);
        cfg.failure_prob = p;
        for (int r = 0; r < 200; ++r) {
            cfg.seed = 900 + uint64_t(r);
            SimResult res = run_sim(cfg);
            REQUIRE(res.job_latency_ms <= 4 * 100.0 + 5.0 + 1e-9);
        }
    }
}

TEST_CASE("flight-size arithmetic holds under crash and duplicate injection") {
    std::mt19937_64 rng(23);
    for (int iter = 0; iter < 200; ++iter) {
        SimConfig cfg = ideal_diamond(2 + unsigned(iter % 4));
        cfg.net_latency = DurationDist::uniform(0.0, 10.0);
        cfg.member_crash_prob = 0.35;
        cfg.crash_window_ms = 350.0;
        cfg.duplicate_peering_prob = 0.4;
        cfg.seed = 31000 + uint64_t(iter);
        SimResult res = run_sim(cfg);

        int joined = 0, failed_joined = 0, live_mesh = 0;
        for (unsigned k = 0; k < cfg.flight_size; ++k) {
            if (!res.joined[k]) continue;
            ++joined;
            if (res.crashed[k]) ++failed_joined;
            else ++live_mesh;
        }
        REQUIRE(joined == 1 + res.serviced_peering);
        REQUIRE(live_mesh == 1 + res.serviced_peering - failed_joined);
        // every live member still finishes its whole job
        for (unsigned k = 0; k < cfg.flight_size; ++k)
            if (!res.crashed[k]) REQUIRE(res.completion_time_ms[k] >= 0.0);
    }
}

TEST_CASE("leader failure after servicing both peers leaves a working 2-member mesh") {
    SimConfig cfg = ideal_diamond(3);
    cfg.crash_at = {{0, 1.0}}; // peering resolves at t=0; leader dies at 1 ms
    SimResult res = run_sim(cfg);

    CHECK(res.crashed[0]);
    CHECK(res.serviced_peering == 2);
    CHECK(res.joined == std::vector<bool>{true, true, true});
    // both followers proceed to full completion on their shared mesh
    CHECK(res.completion_time_ms[1] >= 0.0);
    CHECK(res.completion_time_ms[2] >= 0.0);
    CHECK(res.answering_member == 1);
    CHECK_FALSE(res.job_failed);
    // the two survivors split work: fewer executions than 2 full schedules
    long follower_execs = long(res.executed[1].size() + res.executed[2].size());
    CHECK(follower_execs < 8);
}

TEST_CASE("leader failure before any peering leaves stragglers running alone") {
    SimConfig cfg = ideal_diamond(3);
    cfg.net_latency = DurationDist(5.0);
    cfg.crash_at = {{0, 0.0}}; // dies before any peering request lands
    SimResult res = run_sim(cfg);

    CHECK(res.serviced_peering == 0);
    CHECK(res.joined == std::vector<bool>{true, false, false});
    // each straggler independently executes its complete schedule
    CHECK(res.executed[1].size() == 4);
    CHECK(res.executed[2].size() == 4);
    CHECK_FALSE(res.job_failed);
}

TEST_CASE("sweep output is deterministic and anchored at p = 0") {
    SimConfig base = ideal_diamond(2);
    base.net_latency = DurationDist(0.0);
    base.seed = 4242;
    auto rows = sweep_failure(base, {0.0, 0.5}, 200);
    REQUIRE(rows.size() == 2);
    CHECK(rows[0].failure_rate == 0.0);
    CHECK(rows[0].mean_latency_ms == doctest::Approx(300.0)); // critical path
    CHECK(sweep_to_csv(rows) == sweep_to_csv(sweep_failure(base, {0.0, 0.5}, 200)));
    CHECK(sweep_to_csv(rows).rfind("p,mean_job_latency_ms,job_failure_rate,", 0) == 0);
}

TEST_CASE("sweep rejects zero runs per point") {
    SimConfig base = ideal_diamond(1);
    CHECK_THROWS_AS(sweep_failure(base, {0.1}, 0), Error);
}

TEST_CASE("coordinator comparison: one extra hop, cold-start barrier") {
    SimConfig cfg = ideal_diamond(2);
    cfg.invoke_hop_ms = 7.0;
    cfg.cold_start_latency_ms = 0.0;

    SUBCASE("zero cold start: coordinator is exactly one hop slower") {
        CoordinatorComparison c = compare_coordinator(cfg);
        CHECK(c.coordinator_warm_ms - c.flight_warm_ms == doctest::Approx(7.0));
        CHECK(c.coordinator_invocations == c.flight_invocations + 1);
    }
    SUBCASE("warm leader completes independent of straggler cold starts") {
        cfg.cold_start_latency_ms = 5000.0;
        cfg.cold_members = {1}; // follower cold, leader warm
        SimResult slow = run_sim(cfg);
        cfg.cold_start_latency_ms = 20000.0;
        SimResult slower = run_sim(cfg);
        CHECK(slow.job_latency_ms == doctest::Approx(slower.job_latency_ms));
        CHECK(slower.job_latency_ms < 1000.0); // the warm leader covers the DAG
        // while the coordinator pattern must wait for the cold container
        CoordinatorComparison c = compare_coordinator(cfg);
        CHECK(c.coordinator_cold_ms >= 20000.0);
    }
    SUBCASE("single member, zero latencies: both modes coincide") {
        SimConfig solo = ideal_diamond(1);
        solo.invoke_hop_ms = 0.0;
        CoordinatorComparison c = compare_coordinator(solo);
        CHECK(c.coordinator_warm_ms == doctest::Approx(c.flight_warm_ms));
    }
}

TEST_CASE("config json loader validates shapes") {
    Json good{{"tasks", Json::array({Json{{"name", "a"}},
                                     Json{{"name", "b"},
                                          {"dependencies", Json::array({"a"})}}})},
              {"flight_size", 2},
              {"task_duration_ms", 100.0},
              {"net_latency_ms", Json{{"min", 0.0}, {"max", 3.0}}},
              {"failure_prob", 0.25},
              {"seed", 9}};
    SimConfig cfg = SimConfig::from_json(good);
    CHECK(cfg.dag.size() == 2);
    CHECK(cfg.flight_size == 2);
    CHECK(cfg.failure_prob == 0.25);

    CHECK_THROWS_AS(SimConfig::from_json(Json{{"tasks", Json::array()}}), Error);
    Json bad_dep{{"tasks", Json::array({Json{{"name", "a"},
                                             {"dependencies", Json::array({"ghost"})}}})}};
    CHECK_THROWS_AS(SimConfig::from_json(bad_dep), Error);
    Json bad_p = good;
    bad_p["failure_prob"] = 1.5;
    CHECK_THROWS_AS(SimConfig::from_json(bad_p), Error);
}
