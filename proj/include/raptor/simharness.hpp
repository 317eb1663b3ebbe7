#ifndef RAPTOR_SIMHARNESS_HPP
#define RAPTOR_SIMHARNESS_HPP

#include <cstdint>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "raptor/flight.hpp"
#include "raptor/manifest.hpp"

namespace raptor {

// Fixed value or uniform range, milliseconds.
struct DurationDist {
    double fixed_ms = 0.0;
    double min_ms = -1.0;
    double max_ms = -1.0;

    DurationDist() = default;
    explicit DurationDist(double fixed) : fixed_ms(fixed) {}
    static DurationDist uniform(double lo, double hi);

    double sample(std::mt19937_64& rng) const;
    double max_value() const { return min_ms >= 0 ? max_ms : fixed_ms; }

    static DurationDist from_json(const Json& j);
};

struct SimConfig {
    TaskDag dag;
    unsigned flight_size = 1;
    DurationDist task_duration{100.0};
    std::map<std::string, DurationDist> per_task_duration;
    DurationDist net_latency{0.0};
    double failure_prob = 0.0;
    double cold_start_latency_ms = 0.0;
    std::set<int> cold_members;
    double invoke_hop_ms = 0.0; // one invocation request leg
    bool coordinator_mode = false;
    uint64_t seed = 1;

    // failure injection for peering/reliability experiments
    double member_crash_prob = 0.0;
    double crash_window_ms = 0.0;
    double duplicate_peering_prob = 0.0;
    std::map<int, double> crash_at; // directed crash times, member -> ms

    static SimConfig from_json(const Json& j);
};

struct TraceEvent {
    double t = 0.0;
    int member = -1;
    std::string kind; // member_start, task_start, terminal, msg_send, msg_deliver, crash, job_complete
    std::string task;
    std::string detail;
};

struct SimResult {
    double job_latency_ms = 0.0;
    bool job_failed = false;
    Json job_output;
    int answering_member = -1;

    std::map<std::string, int> executions_per_task;
    long messages_sent = 0;
    std::vector<TraceEvent> trace;

    std::vector<double> completion_time_ms;            // -1 when never completed
    std::vector<std::vector<std::string>> executed;    // started attempts, per member
    std::vector<bool> crashed;
    std::vector<bool> joined; // member present in the leader's directory
    int serviced_peering = 0;

    // per-member quiescent view: {"status": {...}, "outputs": {...}, "errored": {...}}
    std::vector<Json> member_final;

    long total_executions() const;
};

// Deterministic discrete-event run over an in-memory transport, driving one
// production FlightEngine per member.
SimResult run_sim(const SimConfig& cfg);

struct SweepRow {
    double p = 0.0;
    double mean_latency_ms = 0.0;
    double failure_rate = 0.0;
    double mean_executions = 0.0;
    int runs = 0;
};

std::vector<SweepRow> sweep_failure(const SimConfig& base, const std::vector<double>& p_values,
                                    int runs_per_point);

std::string sweep_to_csv(const std::vector<SweepRow>& rows);

struct CoordinatorComparison {
    double flight_warm_ms = 0.0;
    double flight_cold_ms = 0.0;
    long flight_invocations = 0;
    double coordinator_warm_ms = 0.0;
    double coordinator_cold_ms = 0.0;
    long coordinator_invocations = 0;
};

// Same workload under the flight fork path and under a reference coordinator
// pattern that pays one extra invocation hop and waits on every container
// start.
CoordinatorComparison compare_coordinator(const SimConfig& cfg);

std::string comparison_to_csv(const CoordinatorComparison& c);

} // namespace raptor

#endif
