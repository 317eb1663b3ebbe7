#ifndef RAPTOR_FLIGHT_HPP
#define RAPTOR_FLIGHT_HPP

#include <cstdint>
#include <map>
#include <optional>
#include <string>

#include "raptor/context.hpp"
#include "raptor/listsched.hpp"
#include "raptor/manifest.hpp"
#include "raptor/wire.hpp"

namespace raptor {

enum class TaskStatus { Pending, Running, DoneLocal, Preempted, PrunedNull };

const char* task_status_name(TaskStatus s);

// What the caller must do after applying a state update.
enum class UpdateAction { RemoveFromList, TerminateRunning, Discard, RecordNull };

const char* update_action_name(UpdateAction a);

// Message-sending port. The real TCP transport and the simulated transport
// implement the same interface; sends are best effort and must not block
// the caller on the destination.
class Transport {
public:
    virtual ~Transport() = default;
    virtual void send(const Endpoint& to, const WireMessage& msg) = 0;
};

struct PeerDirectory {
    std::map<int, Endpoint> members; // offset -> endpoint, includes self
};

// One member's live view of a flight.
struct FlightState {
    ListSchedule schedule;
    std::map<std::string, TaskStatus> status;
    std::map<std::string, Json> outputs;   // terminal tasks only, null allowed
    std::map<std::string, bool> errored;   // recorded output came from a failure
    PeerDirectory peers;

    bool is_terminal(const std::string& task) const;
};

// The per-activation protocol engine: peering, membership, state-update
// application, preemption decisions, and completion bookkeeping. One engine
// per activation; all events must be delivered from a single logical thread.
class FlightEngine {
public:
    FlightEngine(ExecutionContext ctx, TaskDag dag, ListSchedule schedule,
                 Endpoint self_address, Transport& transport);

    const ExecutionContext& context() const { return ctx_; }
    const FlightState& state() const { return state_; }
    const TaskDag& dag() const { return dag_; }
    const Endpoint& self_address() const { return self_address_; }

    // Earliest pending task in schedule order whose dependencies are all
    // terminal; nullopt when exhausted or blocked.
    std::optional<std::string> next_runnable() const;

    // Dependency outputs for a task about to start (null entries included).
    Json gather_inputs(const std::string& task) const;

    void mark_running(const std::string& task);

    // Local completion: records DoneLocal (null + error flag when failed)
    // and broadcasts the resulting update to every peer. Throws NotRunning.
    StateUpdate complete_local(const std::string& task, Json result, bool failed);

    // Applies a peer's update per the preemption rules. The caller performs
    // process termination when TerminateRunning comes back.
    UpdateAction apply_state_update(const StateUpdate& update);

    // Leader side: admit a follower and broadcast a fresh membership
    // snapshot to everyone known. Duplicate requests re-acknowledge without
    // growing the serviced count.
    void serve_peering(const PeeringRequest& request);

    // Follower side: adopt a snapshot (full, idempotent).
    void apply_membership(const Membership& membership);

    // Send this member's peering request to the leader. No-op for leaders.
    void send_peering();

    // Dispatch any wire message. Returns the action for state updates,
    // Discard otherwise.
    UpdateAction deliver(const WireMessage& msg);

    bool is_job_complete() const;

    // Outputs of the masked DAG's sink tasks, keyed by task name.
    Json job_output() const;

    int serviced_peering_count() const { return serviced_; }

private:
    void broadcast(const WireMessage& msg);

    ExecutionContext ctx_;
    TaskDag dag_;
    FlightState state_;
    Endpoint self_address_;
    Transport& transport_;
    uint64_t next_sequence_ = 1;
    int serviced_ = 0;
};

} // namespace raptor

#endif
