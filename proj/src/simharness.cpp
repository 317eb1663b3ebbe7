#include "raptor/simharness.hpp"

#include <algorithm>
#include <cstdio>
#include <memory>
#include <queue>

#include "raptor/errors.hpp"
#include "raptor/log.hpp"

namespace raptor {

DurationDist DurationDist::uniform(double lo, double hi) {
    DurationDist d;
    d.min_ms = lo;
    d.max_ms = hi;
    return d;
}

double DurationDist::sample(std::mt19937_64& rng) const {
    if (min_ms >= 0) {
        std::uniform_real_distribution<double> dist(min_ms, max_ms);
        return dist(rng);
    }
    return fixed_ms;
}

DurationDist DurationDist::from_json(const Json& j) {
    if (j.is_number()) return DurationDist(j.get<double>());
    if (j.is_object()) {
        if (j.contains("min") && j.contains("max"))
            return uniform(j["min"].get<double>(), j["max"].get<double>());
        if (j.contains("fixed")) return DurationDist(j["fixed"].get<double>());
    }
    throw Error(Errc::ConfigError, "duration must be a number or {min,max}/{fixed}");
}

SimConfig SimConfig::from_json(const Json& j) {
    SimConfig cfg;
    if (!j.is_object()) throw Error(Errc::ConfigError, "simulation config must be an object");
    if (!j.contains("tasks") || !j["tasks"].is_array() || j["tasks"].empty())
        throw Error(Errc::ConfigError, "config needs a non-empty 'tasks' array");
    std::vector<std::string> nodes;
    std::vector<std::pair<std::string, std::string>> edges;
    std::set<std::string> seen;
    for (const auto& t : j["tasks"]) {
        if (!t.is_object() || !t.contains("name") || !t["name"].is_string())
            throw Error(Errc::ConfigError, "each task needs a string 'name'");
        std::string name = t["name"].get<std::string>();
        if (!seen.insert(name).second)
            throw Error(Errc::ConfigError, "duplicate task '" + name + "'");
        nodes.push_back(name);
        if (t.contains("dependencies")) {
            for (const auto& d : t["dependencies"])
                edges.emplace_back(d.get<std::string>(), name);
        }
        if (t.contains("duration_ms"))
            cfg.per_task_duration[name] = DurationDist::from_json(t["duration_ms"]);
    }
    for (const auto& [u, v] : edges)
        if (!seen.count(u))
            throw Error(Errc::ConfigError, "dependency '" + u + "' is not a task");
    cfg.dag = TaskDag(std::move(nodes), edges);

    if (j.contains("flight_size")) cfg.flight_size = j["flight_size"].get<unsigned>();
    if (cfg.flight_size < 1) throw Error(Errc::ConfigError, "flight_size must be >= 1");
    if (j.contains("task_duration_ms"))
        cfg.task_duration = DurationDist::from_json(j["task_duration_ms"]);
    if (j.contains("net_latency_ms")) cfg.net_latency = DurationDist::from_json(j["net_latency_ms"]);
    if (j.contains("failure_prob")) cfg.failure_prob = j["failure_prob"].get<double>();
    if (cfg.failure_prob < 0.0 || cfg.failure_prob > 1.0)
        throw Error(Errc::ConfigError, "failure_prob must be within [0,1]");
    if (j.contains("cold_start_latency_ms"))
        cfg.cold_start_latency_ms = j["cold_start_latency_ms"].get<double>();
    if (j.contains("cold_members"))
        for (const auto& m : j["cold_members"]) cfg.cold_members.insert(m.get<int>());
    if (j.contains("invoke_hop_ms")) cfg.invoke_hop_ms = j["invoke_hop_ms"].get<double>();
    if (j.contains("coordinator_mode")) cfg.coordinator_mode = j["coordinator_mode"].get<bool>();
    if (j.contains("seed")) cfg.seed = j["seed"].get<uint64_t>();
    if (j.contains("member_crash_prob")) cfg.member_crash_prob = j["member_crash_prob"].get<double>();
    if (j.contains("crash_window_ms")) cfg.crash_window_ms = j["crash_window_ms"].get<double>();
    if (j.contains("duplicate_peering_prob"))
        cfg.duplicate_peering_prob = j["duplicate_peering_prob"].get<double>();
    if (j.contains("crash_at"))
        for (const auto& [k, t] : j["crash_at"].items())
            cfg.crash_at[std::stoi(k)] = t.get<double>();
    return cfg;
}

long SimResult::total_executions() const {
    long total = 0;
    for (const auto& [task, count] : executions_per_task) total += count;
    return total;
}

namespace {

enum EventClass { kCrash = 0, kStart = 1, kComplete = 2, kDeliver = 3, kDispatch = 4 };

struct Event {
    double t = 0.0;
    int klass = 0;
    uint64_t seq = 0;
    int member = -1;
    std::string task;    // kComplete
    uint64_t gen = 0;    // kComplete attempt generation
    bool fail = false;   // kComplete sampled outcome
    WireMessage msg;     // kDeliver

    bool operator>(const Event& other) const {
        if (t != other.t) return t > other.t;
        if (klass != other.klass) return klass > other.klass;
        return seq > other.seq;
    }
};

struct Member {
    std::unique_ptr<FlightEngine> engine;
    bool started = false;
    bool crashed = false;
    bool busy = false;
    std::string current_task;
    uint64_t gen = 0;
    double completion_time = -1.0;
    Json output_snapshot;
};

Endpoint member_endpoint(int k) { return Endpoint{"m" + std::to_string(k), 0}; }

int member_of_endpoint(const Endpoint& ep) {
    if (ep.host.size() < 2 || ep.host[0] != 'm') return -1;
    return std::atoi(ep.host.c_str() + 1);
}

struct Sim;

struct SimTransport : Transport {
    Sim* sim = nullptr;
    void send(const Endpoint& to, const WireMessage& msg) override;
};

struct Sim {
    const SimConfig& cfg;
    std::mt19937_64 rng;
    std::priority_queue<Event, std::vector<Event>, std::greater<>> queue;
    uint64_t next_seq = 0;
    double now = 0.0;
    std::vector<Member> members;
    SimTransport transport;
    SimResult result;

    explicit Sim(const SimConfig& c) : cfg(c), rng(c.seed) { transport.sim = this; }

    void push(Event ev) {
        ev.seq = next_seq++;
        queue.push(std::move(ev));
    }

    void trace(int member, const std::string& kind, const std::string& task = "",
               const std::string& detail = "") {
        result.trace.push_back(TraceEvent{now, member, kind, task, detail});
    }

    double duration_for(const std::string& task) {
        auto it = cfg.per_task_duration.find(task);
        const DurationDist& d = it != cfg.per_task_duration.end() ? it->second : cfg.task_duration;
        return d.sample(rng);
    }

    void setup() {
        members.resize(cfg.flight_size);
        result.completion_time_ms.assign(cfg.flight_size, -1.0);
        result.executed.resize(cfg.flight_size);
        result.crashed.assign(cfg.flight_size, false);
        result.joined.assign(cfg.flight_size, false);

        Endpoint leader_ep = member_endpoint(0);
        for (unsigned k = 0; k < cfg.flight_size; ++k) {
            ExecutionContext ctx;
            ctx.offset = k;
            ctx.flight_size = cfg.flight_size;
            ctx.leader_address = leader_ep;
            ctx.activation_id = "sim";
            ctx.is_leader = k == 0;
            for (const auto& n : cfg.dag.nodes()) ctx.mask.selected.insert(n);
            members[k].engine = std::make_unique<FlightEngine>(
                ctx, cfg.dag, build_schedule(cfg.dag, k), member_endpoint(int(k)), transport);
        }

        // start times: leader takes the invocation hop; followers ride the
        // non-blocking forks issued at leader start. Coordinator mode routes
        // everything through one extra function invocation.
        double extra_hop = cfg.coordinator_mode ? cfg.invoke_hop_ms : 0.0;
        double leader_start = cfg.invoke_hop_ms + extra_hop +
                              (cfg.cold_members.count(0) ? cfg.cold_start_latency_ms : 0.0);
        push(Event{leader_start, kStart, 0, 0, "", 0, false, {}});
        for (unsigned k = 1; k < cfg.flight_size; ++k) {
            double start = leader_start + cfg.invoke_hop_ms +
                           (cfg.cold_members.count(int(k)) ? cfg.cold_start_latency_ms : 0.0);
            push(Event{start, kStart, 0, int(k), "", 0, false, {}});
        }

        // crash schedule: directed times first, then sampled in member order
        for (const auto& [k, t] : cfg.crash_at)
            if (k >= 0 && k < int(cfg.flight_size)) push(Event{t, kCrash, 0, k, "", 0, false, {}});
        for (unsigned k = 0; k < cfg.flight_size; ++k) {
            if (cfg.member_crash_prob <= 0.0) break;
            if (cfg.crash_at.count(int(k))) continue;
            std::uniform_real_distribution<double> u01(0.0, 1.0);
            if (u01(rng) < cfg.member_crash_prob) {
                std::uniform_real_distribution<double> when(0.0, cfg.crash_window_ms);
                push(Event{when(rng), kCrash, 0, int(k), "", 0, false, {}});
            }
        }
    }

    void dispatch(int k) {
        Member& m = members[k];
        if (!m.started || m.crashed || m.busy) return;
        if (m.engine->is_job_complete()) {
            if (m.completion_time < 0) {
                m.completion_time = now;
                result.completion_time_ms[k] = now;
                m.output_snapshot = m.engine->job_output();
                trace(k, "job_complete");
            }
            return;
        }
        auto task = m.engine->next_runnable();
        if (!task) return; // blocked on remote progress
        m.engine->mark_running(*task);
        m.busy = true;
        m.current_task = *task;
        ++m.gen;
        std::uniform_real_distribution<double> u01(0.0, 1.0);
        bool fail = u01(rng) < cfg.failure_prob;
        double dur = duration_for(*task);
        ++result.executions_per_task[*task];
        result.executed[k].push_back(*task);
        trace(k, "task_start", *task, fail ? "will_fail" : "will_succeed");
        push(Event{now + dur, kComplete, 0, k, *task, m.gen, fail, {}});
    }

    void handle_complete(const Event& ev) {
        Member& m = members[ev.member];
        if (m.crashed || !m.busy || ev.gen != m.gen || ev.task != m.current_task) return;
        m.busy = false;
        Json output;
        if (!ev.fail) output = Json{{"task", ev.task}, {"ok", true}};
        m.engine->complete_local(ev.task, output, ev.fail);
        trace(ev.member, "terminal", ev.task, ev.fail ? "DoneLocal:error" : "DoneLocal");
        push(Event{now, kDispatch, 0, ev.member, "", 0, false, {}});
    }

    void handle_deliver(const Event& ev) {
        Member& m = members[ev.member];
        if (m.crashed) {
            trace(ev.member, "msg_drop");
            return;
        }
        const char* kind = std::holds_alternative<PeeringRequest>(ev.msg)   ? "peering_request"
                           : std::holds_alternative<Membership>(ev.msg)     ? "membership"
                                                                            : "state_update";
        trace(ev.member, "msg_deliver", "", kind);
        bool was_terminal = false;
        std::string task;
        if (const auto* u = std::get_if<StateUpdate>(&ev.msg)) {
            task = u->task;
            was_terminal = m.engine->state().is_terminal(task);
        }
        UpdateAction action = m.engine->deliver(ev.msg);
        if (action == UpdateAction::TerminateRunning) {
            // preemption of the in-flight attempt is immediate in virtual time
            ++m.gen;
            m.busy = false;
        }
        if (!task.empty() && !was_terminal && m.engine->state().is_terminal(task))
            trace(ev.member, "terminal", task,
                  task_status_name(m.engine->state().status.at(task)));
        push(Event{now, kDispatch, 0, ev.member, "", 0, false, {}});
    }

    void handle_start(const Event& ev) {
        Member& m = members[ev.member];
        if (m.crashed) return;
        m.started = true;
        trace(ev.member, "member_start");
        m.engine->send_peering(); // no-op for the leader
        if (ev.member > 0 && cfg.duplicate_peering_prob > 0.0) {
            std::uniform_real_distribution<double> u01(0.0, 1.0);
            if (u01(rng) < cfg.duplicate_peering_prob) m.engine->send_peering();
        }
        push(Event{now, kDispatch, 0, ev.member, "", 0, false, {}});
    }

    void handle_crash(const Event& ev) {
        Member& m = members[ev.member];
        if (m.crashed) return;
        m.crashed = true;
        result.crashed[ev.member] = true;
        m.busy = false;
        ++m.gen;
        trace(ev.member, "crash");
    }

    SimResult run() {
        setup();
        size_t safety = 0;
        const size_t max_events = 2'000'000 + 200'000ull * cfg.flight_size * (cfg.dag.size() + 1);
        while (!queue.empty()) {
            if (++safety > max_events) {
                log::error("simulation exceeded event budget; aborting run");
                break;
            }
            Event ev = queue.top();
            queue.pop();
            now = ev.t;
            switch (ev.klass) {
            case kCrash: handle_crash(ev); break;
            case kStart: handle_start(ev); break;
            case kComplete: handle_complete(ev); break;
            case kDeliver: handle_deliver(ev); break;
            case kDispatch: dispatch(ev.member); break;
            }
        }

        // answering member: the leader, or the lowest-offset live member
        int answering = -1;
        for (unsigned k = 0; k < cfg.flight_size; ++k) {
            if (!members[k].crashed) {
                answering = int(k);
                break;
            }
        }
        result.answering_member = answering;
        if (answering >= 0 && members[answering].completion_time >= 0) {
            double barrier = 0.0;
            if (cfg.coordinator_mode) {
                // the reference pattern cannot answer before every container
                // has been placed and started
                double extra_hop = cfg.invoke_hop_ms;
                double leader_start = cfg.invoke_hop_ms + extra_hop +
                                      (cfg.cold_members.count(0) ? cfg.cold_start_latency_ms : 0.0);
                for (unsigned k = 1; k < cfg.flight_size; ++k)
                    barrier = std::max(barrier,
                                       leader_start + cfg.invoke_hop_ms +
                                           (cfg.cold_members.count(int(k))
                                                ? cfg.cold_start_latency_ms
                                                : 0.0));
            }
            result.job_latency_ms = std::max(members[answering].completion_time, barrier);
            // outputs are recorded at every member; the invoking layer reads
            // the answering member's quiescent view, where the first
            // non-error duplicate has already won
            result.job_output = members[answering].engine->job_output();
            result.job_failed = false;
            for (const auto& [sink, value] : result.job_output.items()) {
                (void)sink;
                if (value.is_null()) result.job_failed = true;
            }
        } else {
            result.job_latency_ms = now;
            result.job_failed = true;
            result.job_output = Json::object();
        }

        result.serviced_peering = members[0].engine->serviced_peering_count();
        for (const auto& [offset, ep] : members[0].engine->state().peers.members) {
            (void)ep;
            if (offset >= 0 && offset < int(cfg.flight_size)) result.joined[offset] = true;
        }
        for (unsigned k = 0; k < cfg.flight_size; ++k) {
            const FlightState& st = members[k].engine->state();
            Json status = Json::object();
            for (const auto& [task, s] : st.status) status[task] = task_status_name(s);
            Json outputs = Json::object();
            for (const auto& [task, out] : st.outputs) outputs[task] = out;
            Json errored = Json::object();
            for (const auto& [task, e] : st.errored) errored[task] = e;
            result.member_final.push_back(
                Json{{"status", status}, {"outputs", outputs}, {"errored", errored}});
        }
        return result;
    }
};

void SimTransport::send(const Endpoint& to, const WireMessage& msg) {
    ++sim->result.messages_sent;
    int target = member_of_endpoint(to);
    const char* kind = std::holds_alternative<PeeringRequest>(msg)   ? "peering_request"
                       : std::holds_alternative<Membership>(msg)     ? "membership"
                                                                     : "state_update";
    sim->trace(target, "msg_send", "", kind);
    if (target < 0 || target >= int(sim->members.size())) return;
    double latency = sim->cfg.net_latency.sample(sim->rng);
    sim->push(Event{sim->now + latency, kDeliver, 0, target, "", 0, false, msg});
}

} // namespace

SimResult run_sim(const SimConfig& cfg) {
    if (cfg.dag.empty()) throw Error(Errc::ConfigError, "simulation needs a non-empty dag");
    Sim sim(cfg);
    return sim.run();
}

std::vector<SweepRow> sweep_failure(const SimConfig& base, const std::vector<double>& p_values,
                                    int runs_per_point) {
    if (runs_per_point < 1) throw Error(Errc::ConfigError, "runs_per_point must be >= 1");
    std::vector<SweepRow> rows;
    for (double p : p_values) {
        SweepRow row;
        row.p = p;
        row.runs = runs_per_point;
        double latency_sum = 0.0;
        double executions_sum = 0.0;
        int failures = 0;
        for (int r = 0; r < runs_per_point; ++r) {
            SimConfig cfg = base;
            cfg.failure_prob = p;
            cfg.seed = base.seed + uint64_t(r) * 0x9e3779b97f4a7c15ull + uint64_t(rows.size());
            SimResult res = run_sim(cfg);
            latency_sum += res.job_latency_ms;
            executions_sum += double(res.total_executions());
            if (res.job_failed) ++failures;
        }
        row.mean_latency_ms = latency_sum / runs_per_point;
        row.failure_rate = double(failures) / runs_per_point;
        row.mean_executions = executions_sum / runs_per_point;
        rows.push_back(row);
    }
    return rows;
}

std::string sweep_to_csv(const std::vector<SweepRow>& rows) {
    std::string out = "p,mean_job_latency_ms,job_failure_rate,mean_total_executions,runs\n";
    char buf[160];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%.6f,%.6f,%.6f,%.6f,%d\n", r.p, r.mean_latency_ms,
                      r.failure_rate, r.mean_executions, r.runs);
        out += buf;
    }
    return out;
}

CoordinatorComparison compare_coordinator(const SimConfig& cfg) {
    CoordinatorComparison cmp;

    auto run_mode = [&](bool coordinator, bool cold) {
        SimConfig c = cfg;
        c.coordinator_mode = coordinator;
        if (!cold) {
            c.cold_members.clear();
        } else if (c.cold_members.empty()) {
            for (unsigned k = 0; k < c.flight_size; ++k) c.cold_members.insert(int(k));
        }
        return run_sim(c);
    };

    cmp.flight_warm_ms = run_mode(false, false).job_latency_ms;
    cmp.flight_cold_ms = run_mode(false, true).job_latency_ms;
    cmp.coordinator_warm_ms = run_mode(true, false).job_latency_ms;
    cmp.coordinator_cold_ms = run_mode(true, true).job_latency_ms;
    // user request + N-1 forks vs user request + coordinator + N workers
    cmp.flight_invocations = long(cfg.flight_size);
    cmp.coordinator_invocations = long(cfg.flight_size) + 1;
    return cmp;
}

std::string comparison_to_csv(const CoordinatorComparison& c) {
    std::string out = "mode,cold_latency_ms,warm_latency_ms,invocations\n";
    char buf[160];
    std::snprintf(buf, sizeof buf, "flight,%.6f,%.6f,%ld\n", c.flight_cold_ms, c.flight_warm_ms,
                  c.flight_invocations);
    out += buf;
    std::snprintf(buf, sizeof buf, "coordinator,%.6f,%.6f,%ld\n", c.coordinator_cold_ms,
                  c.coordinator_warm_ms, c.coordinator_invocations);
    out += buf;
    return out;
}

} // namespace raptor
