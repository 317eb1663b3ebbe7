#include "doctest.h"

#include "raptor/errors.hpp"
#include "raptor/flight.hpp"
#include "testutil.hpp"

using namespace raptor;
namespace tu = raptor::testutil;

namespace {

struct RecordingTransport : Transport {
    std::vector<std::pair<Endpoint, WireMessage>> sent;
    void send(const Endpoint& to, const WireMessage& msg) override { sent.emplace_back(to, msg); }
};

ExecutionContext make_ctx(unsigned offset, unsigned flight_size, const TaskDag& dag) {
    ExecutionContext ctx;
    ctx.offset = offset;
    ctx.flight_size = flight_size;
    ctx.activation_id = "act";
    ctx.leader_address = Endpoint{"m0", 0};
    ctx.is_leader = offset == 0;
    for (const auto& n : dag.nodes()) ctx.mask.selected.insert(n);
    return ctx;
}

FlightEngine make_engine(unsigned offset, unsigned flight_size, const TaskDag& dag,
                         Transport& tx) {
    return FlightEngine(make_ctx(offset, flight_size, dag), dag, build_schedule(dag, offset),
                        Endpoint{"m" + std::to_string(offset), 0}, tx);
}

StateUpdate ok_update(const std::string& task, int origin, uint64_t seq, Json output = Json(1)) {
    return StateUpdate{"act", task, std::move(output), false, origin, seq};
}

StateUpdate err_update(const std::string& task, int origin, uint64_t seq) {
    return StateUpdate{"act", task, Json(), true, origin, seq};
}

} // namespace

TEST_CASE("next_runnable walks the leader schedule in order") {
    TaskDag dag = tu::diamond_dag();
    RecordingTransport tx;
    FlightEngine eng = make_engine(0, 2, dag, tx);

    CHECK(eng.next_runnable() == std::string("t1"));
    eng.mark_running("t1");
    CHECK_FALSE(eng.next_runnable().has_value()); // t2/t3 blocked on t1
    eng.complete_local("t1", Json{{"ok", 1}}, false);
    CHECK(eng.next_runnable() == std::string("t3")); // leader order t1 t3 t2 t4
}

TEST_CASE("a preempted sibling does not unblock ordering rules") {
    // leader order t1 t3 t2 t4; t3 preempted by an update while pending
    TaskDag dag = tu::diamond_dag();
    RecordingTransport tx;
    FlightEngine eng = make_engine(0, 2, dag, tx);
    eng.mark_running("t1");
    eng.complete_local("t1", Json(1), false);
    CHECK(eng.apply_state_update(ok_update("t3", 1, 1)) == UpdateAction::RemoveFromList);
    // t2 stays pending and runnable
    CHECK(eng.next_runnable() == std::string("t2"));
}

TEST_CASE("all-terminal schedules yield no runnable task and a complete job") {
    TaskDag dag = tu::diamond_dag();
    RecordingTransport tx;
    FlightEngine eng = make_engine(0, 1, dag, tx);
    CHECK_FALSE(eng.is_job_complete());
    for (const auto& task : std::vector<std::string>{"t1", "t3", "t2", "t4"}) {
        eng.mark_running(task);
        eng.complete_local(task, Json{{"from", task}}, false);
    }
    CHECK(eng.is_job_complete());
    CHECK_FALSE(eng.next_runnable().has_value());
    CHECK(eng.job_output().contains("t4"));
    // flight of one broadcasts to nobody
    CHECK(tx.sent.empty());
}

TEST_CASE("state update transitions follow the preemption rules") {
    TaskDag dag = tu::diamond_dag();
    RecordingTransport tx;

    SUBCASE("pending task is removed from the list") {
        FlightEngine eng = make_engine(0, 2, dag, tx);
        CHECK(eng.apply_state_update(ok_update("t3", 1, 1)) == UpdateAction::RemoveFromList);
        CHECK(eng.state().status.at("t3") == TaskStatus::Preempted);
        CHECK(eng.state().outputs.at("t3") == Json(1));
    }
    SUBCASE("running task is terminated") {
        FlightEngine eng = make_engine(0, 2, dag, tx);
        eng.mark_running("t1");
        CHECK(eng.apply_state_update(ok_update("t1", 1, 1)) == UpdateAction::TerminateRunning);
        CHECK(eng.state().status.at("t1") == TaskStatus::Preempted);
    }
    SUBCASE("simultaneous non-error completion is discarded") {
        FlightEngine eng = make_engine(0, 2, dag, tx);
        eng.mark_running("t1");
        eng.complete_local("t1", Json{{"mine", true}}, false);
        CHECK(eng.apply_state_update(ok_update("t1", 1, 1, Json{{"theirs", true}})) ==
              UpdateAction::Discard);
        CHECK(eng.state().outputs.at("t1") == Json{{"mine", true}}); // first non-error wins
    }
    SUBCASE("local error is replaced by the first non-error duplicate") {
        FlightEngine eng = make_engine(0, 2, dag, tx);
        eng.mark_running("t1");
        eng.complete_local("t1", Json(), true); // crashed locally
        CHECK(eng.state().outputs.at("t1").is_null());
        CHECK(eng.apply_state_update(ok_update("t1", 1, 1, Json{{"theirs", true}})) ==
              UpdateAction::Discard);
        CHECK(eng.state().outputs.at("t1") == Json{{"theirs", true}});
        CHECK(eng.state().status.at("t1") == TaskStatus::DoneLocal);
    }
    SUBCASE("peer error on a pending task records a null") {
        FlightEngine eng = make_engine(0, 2, dag, tx);
        CHECK(eng.apply_state_update(err_update("t2", 1, 1)) == UpdateAction::RecordNull);
        CHECK(eng.state().status.at("t2") == TaskStatus::PrunedNull);
        CHECK(eng.state().outputs.at("t2").is_null());
        // a later good output still wins
        CHECK(eng.apply_state_update(ok_update("t2", 1, 2)) == UpdateAction::Discard);
        CHECK(eng.state().outputs.at("t2") == Json(1));
        CHECK(eng.state().status.at("t2") == TaskStatus::Preempted);
    }
    SUBCASE("peer error never cancels a running local attempt") {
        FlightEngine eng = make_engine(0, 2, dag, tx);
        eng.mark_running("t1");
        CHECK(eng.apply_state_update(err_update("t1", 1, 1)) == UpdateAction::Discard);
        CHECK(eng.state().status.at("t1") == TaskStatus::Running);
        eng.complete_local("t1", Json{{"fine", 1}}, false);
        CHECK(eng.state().outputs.at("t1") == Json{{"fine", 1}});
    }
    SUBCASE("unknown task and foreign activation are discarded") {
        FlightEngine eng = make_engine(0, 2, dag, tx);
        CHECK(eng.apply_state_update(ok_update("ghost", 1, 1)) == UpdateAction::Discard);
        StateUpdate foreign = ok_update("t1", 1, 1);
        foreign.activation_id = "other";
        CHECK(eng.apply_state_update(foreign) == UpdateAction::Discard);
        CHECK(eng.state().status.at("t1") == TaskStatus::Pending);
    }
}

TEST_CASE("applying the same update twice equals applying it once") {
    TaskDag dag = tu::diamond_dag();
    std::mt19937_64 rng(5);
    for (int iter = 0; iter < 200; ++iter) {
        RecordingTransport tx;
        FlightEngine eng = make_engine(0, 3, dag, tx);
        // drive into a random mid-flight state
        std::uniform_int_distribution<int> coin(0, 2);
        for (const auto& task : std::vector<std::string>{"t1", "t3"}) {
            int c = coin(rng);
            if (c == 0) continue;
            if (eng.next_runnable() == task) {
                eng.mark_running(task);
                if (c == 1) eng.complete_local(task, Json(7), false);
                else eng.complete_local(task, Json(), true);
            }
        }
        std::uniform_int_distribution<int> pick(1, 4);
        StateUpdate u = coin(rng) == 0 ? err_update("t" + std::to_string(pick(rng)), 1, 9)
                                       : ok_update("t" + std::to_string(pick(rng)), 1, 9);
        eng.apply_state_update(u);
        auto status_once = eng.state().status;
        auto outputs_once = eng.state().outputs;
        eng.apply_state_update(u);
        CHECK(eng.state().status == status_once);
        CHECK(eng.state().outputs == outputs_once);
    }
}

TEST_CASE("complete_local broadcasts to every peer and requires Running") {
    TaskDag dag = tu::diamond_dag();
    RecordingTransport tx;
    FlightEngine eng = make_engine(0, 3, dag, tx);
    eng.serve_peering(PeeringRequest{"act", 1, {"m1", 0}});
    eng.serve_peering(PeeringRequest{"act", 2, {"m2", 0}});
    tx.sent.clear();

    CHECK_THROWS_AS(eng.complete_local("t1", Json(), false), Error);
    eng.mark_running("t1");
    StateUpdate u = eng.complete_local("t1", Json{{"x", 1}}, false);
    CHECK(u.sequence >= 1);
    CHECK(u.origin_offset == 0);
    CHECK(tx.sent.size() == 2); // both followers, not self
    // crashed local attempt broadcasts a null with the error flag
    eng.mark_running("t3");
    StateUpdate err = eng.complete_local("t3", Json{{"ignored", true}}, true);
    CHECK(err.is_error);
    CHECK(err.output.is_null());
}

TEST_CASE("leader peering arithmetic and duplicate handling") {
    TaskDag dag = tu::diamond_dag();
    RecordingTransport tx;
    FlightEngine leader = make_engine(0, 3, dag, tx);

    leader.serve_peering(PeeringRequest{"act", 1, {"m1", 0}});
    CHECK(leader.serviced_peering_count() == 1);
    // duplicate re-acknowledges but does not recount
    leader.serve_peering(PeeringRequest{"act", 1, {"m1", 0}});
    CHECK(leader.serviced_peering_count() == 1);
    leader.serve_peering(PeeringRequest{"act", 2, {"m2", 0}});
    CHECK(leader.serviced_peering_count() == 2);
    // realized size M = 1 + serviced
    CHECK(leader.state().peers.members.size() == 3);

    // out-of-range and foreign requests ignored
    leader.serve_peering(PeeringRequest{"act", 9, {"m9", 0}});
    leader.serve_peering(PeeringRequest{"other", 1, {"mx", 0}});
    CHECK(leader.serviced_peering_count() == 2);

    // every admit re-broadcast a full snapshot to all known members
    int snapshots = 0;
    for (const auto& [ep, msg] : tx.sent)
        if (std::holds_alternative<Membership>(msg)) ++snapshots;
    CHECK(snapshots >= 4);
}

TEST_CASE("membership snapshots are idempotent and keep self") {
    TaskDag dag = tu::diamond_dag();
    RecordingTransport tx;
    FlightEngine follower = make_engine(2, 3, dag, tx);
    CHECK(follower.state().peers.members.size() == 2); // self + leader

    Membership snap{"act", {{0, {"m0", 0}}, {1, {"m1", 0}}, {2, {"m2", 0}}}};
    follower.apply_membership(snap);
    CHECK(follower.state().peers.members.size() == 3);
    follower.apply_membership(snap);
    CHECK(follower.state().peers.members.size() == 3);
    CHECK(follower.state().peers.members.at(2) == Endpoint{"m2", 0});
}

TEST_CASE("follower send_peering targets the leader; leaders stay quiet") {
    TaskDag dag = tu::diamond_dag();
    RecordingTransport tx;
    FlightEngine follower = make_engine(1, 2, dag, tx);
    follower.send_peering();
    REQUIRE(tx.sent.size() == 1);
    CHECK(tx.sent[0].first == Endpoint{"m0", 0});
    REQUIRE(std::holds_alternative<PeeringRequest>(tx.sent[0].second));
    CHECK(std::get<PeeringRequest>(tx.sent[0].second).sender_offset == 1);

    RecordingTransport tx2;
    FlightEngine leader = make_engine(0, 2, dag, tx2);
    leader.send_peering();
    CHECK(tx2.sent.empty());
}

TEST_CASE("job completes with all-null outputs in the degenerate total failure") {
    TaskDag dag = tu::diamond_dag();
    RecordingTransport tx;
    FlightEngine eng = make_engine(0, 2, dag, tx);
    for (const auto& task : std::vector<std::string>{"t1", "t2", "t3", "t4"})
        eng.apply_state_update(err_update(task, 1, 1));
    CHECK(eng.is_job_complete());
    CHECK(eng.job_output().at("t4").is_null());
}

TEST_CASE("realized execution order is a subsequence of the static schedule") {
    std::mt19937_64 rng(17);
    for (int iter = 0; iter < 200; ++iter) {
        TaskDag dag = tu::random_dag(rng, 6, 0.4);
        RecordingTransport tx;
        FlightEngine eng = make_engine(0, 2, dag, tx);
        std::vector<std::string> executed;
        std::uniform_int_distribution<int> coin(0, 3);
        uint64_t seq = 1;
        while (!eng.is_job_complete()) {
            // random interleaving of remote updates and local execution
            if (coin(rng) == 0) {
                std::uniform_int_distribution<size_t> pick(0, dag.size() - 1);
                const auto& task = dag.nodes()[pick(rng)];
                if (coin(rng) == 1) eng.apply_state_update(err_update(task, 1, seq++));
                else eng.apply_state_update(ok_update(task, 1, seq++));
                continue;
            }
            auto task = eng.next_runnable();
            if (!task) continue;
            eng.mark_running(*task);
            executed.push_back(*task);
            eng.complete_local(*task, Json(0), coin(rng) == 2);
        }
        // subsequence check against the static order
        const auto& order = eng.state().schedule.order;
        size_t pos = 0;
        for (const auto& task : executed) {
            while (pos < order.size() && order[pos] != task) ++pos;
            REQUIRE(pos < order.size());
            ++pos;
        }
    }
}
