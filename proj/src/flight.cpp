#include "raptor/flight.hpp"

#include <stdexcept>

#include "raptor/errors.hpp"
#include "raptor/log.hpp"

namespace raptor {

const char* task_status_name(TaskStatus s) {
    switch (s) {
    case TaskStatus::Pending: return "Pending";
    case TaskStatus::Running: return "Running";
    case TaskStatus::DoneLocal: return "DoneLocal";
    case TaskStatus::Preempted: return "Preempted";
    case TaskStatus::PrunedNull: return "PrunedNull";
    }
    return "?";
}

const char* update_action_name(UpdateAction a) {
    switch (a) {
    case UpdateAction::RemoveFromList: return "RemoveFromList";
    case UpdateAction::TerminateRunning: return "TerminateRunning";
    case UpdateAction::Discard: return "Discard";
    case UpdateAction::RecordNull: return "RecordNull";
    }
    return "?";
}

bool FlightState::is_terminal(const std::string& task) const {
    auto it = status.find(task);
    if (it == status.end()) return false;
    return it->second == TaskStatus::DoneLocal || it->second == TaskStatus::Preempted ||
           it->second == TaskStatus::PrunedNull;
}

FlightEngine::FlightEngine(ExecutionContext ctx, TaskDag dag, ListSchedule schedule,
                           Endpoint self_address, Transport& transport)
    : ctx_(std::move(ctx)), dag_(std::move(dag)), self_address_(std::move(self_address)),
      transport_(transport) {
    state_.schedule = std::move(schedule);
    for (const auto& task : state_.schedule.order) state_.status[task] = TaskStatus::Pending;
    state_.peers.members[static_cast<int>(ctx_.offset)] = self_address_;
    if (!ctx_.is_leader) state_.peers.members[0] = ctx_.leader_address;
}

std::optional<std::string> FlightEngine::next_runnable() const {
    for (const auto& task : state_.schedule.order) {
        if (state_.status.at(task) != TaskStatus::Pending) continue;
        bool ready = true;
        for (const auto& dep : dag_.deps_of(task)) {
            if (!state_.is_terminal(dep)) {
                ready = false;
                break;
            }
        }
        if (ready) return task;
    }
    return std::nullopt;
}

Json FlightEngine::gather_inputs(const std::string& task) const {
    Json inputs = Json::object();
    for (const auto& dep : dag_.deps_of(task)) {
        auto it = state_.outputs.find(dep);
        inputs[dep] = it == state_.outputs.end() ? Json() : it->second;
    }
    return inputs;
}

void FlightEngine::mark_running(const std::string& task) {
    auto it = state_.status.find(task);
    if (it == state_.status.end() || it->second != TaskStatus::Pending)
        throw std::logic_error("mark_running on non-pending task '" + task + "'");
    for (const auto& dep : dag_.deps_of(task))
        if (!state_.is_terminal(dep))
            throw std::logic_error("task '" + task + "' started before dependency '" + dep + "'");
    it->second = TaskStatus::Running;
}

StateUpdate FlightEngine::complete_local(const std::string& task, Json result, bool failed) {
    auto it = state_.status.find(task);
    if (it == state_.status.end() || it->second != TaskStatus::Running)
        throw Error(Errc::NotRunning, "complete_local on task '" + task + "' that is not running");
    it->second = TaskStatus::DoneLocal;
    state_.outputs[task] = failed ? Json() : std::move(result);
    state_.errored[task] = failed;

    StateUpdate update;
    update.activation_id = ctx_.activation_id;
    update.task = task;
    update.output = state_.outputs[task];
    update.is_error = failed;
    update.origin_offset = static_cast<int>(ctx_.offset);
    update.sequence = next_sequence_++;
    broadcast(WireMessage{update});
    return update;
}

UpdateAction FlightEngine::apply_state_update(const StateUpdate& update) {
    if (update.activation_id != ctx_.activation_id) {
        log::debug("state update for foreign activation " + update.activation_id + " discarded");
        return UpdateAction::Discard;
    }
    auto it = state_.status.find(update.task);
    if (it == state_.status.end()) {
        log::debug("state update for unknown task '" + update.task + "' discarded");
        return UpdateAction::Discard;
    }

    TaskStatus st = it->second;
    if (update.is_error) {
        // A peer's failure never cancels local work: a pending task is
        // pruned to null, a running or finished one keeps its own chance.
        if (st == TaskStatus::Pending) {
            state_.outputs[update.task] = Json();
            state_.errored[update.task] = true;
            it->second = TaskStatus::PrunedNull;
            return UpdateAction::RecordNull;
        }
        return UpdateAction::Discard;
    }

    switch (st) {
    case TaskStatus::Pending:
        state_.outputs[update.task] = update.output;
        state_.errored[update.task] = false;
        it->second = TaskStatus::Preempted;
        return UpdateAction::RemoveFromList;
    case TaskStatus::Running:
        state_.outputs[update.task] = update.output;
        state_.errored[update.task] = false;
        it->second = TaskStatus::Preempted;
        return UpdateAction::TerminateRunning;
    case TaskStatus::DoneLocal:
        if (state_.errored[update.task]) {
            // first non-error result wins
            state_.outputs[update.task] = update.output;
            state_.errored[update.task] = false;
        }
        return UpdateAction::Discard;
    case TaskStatus::PrunedNull:
        state_.outputs[update.task] = update.output;
        state_.errored[update.task] = false;
        it->second = TaskStatus::Preempted;
        return UpdateAction::Discard;
    case TaskStatus::Preempted:
        return UpdateAction::Discard; // duplicates keep the earlier-applied output
    }
    return UpdateAction::Discard;
}

void FlightEngine::serve_peering(const PeeringRequest& request) {
    if (request.activation_id != ctx_.activation_id) {
        log::warn("peering request for foreign activation " + request.activation_id + " ignored");
        return;
    }
    if (!ctx_.is_leader) {
        log::warn("non-leader received peering request; ignored");
        return;
    }
    if (request.sender_offset < 1 ||
        request.sender_offset >= static_cast<int>(ctx_.flight_size)) {
        log::warn("peering request with out-of-range offset " +
                  std::to_string(request.sender_offset) + " ignored");
        return;
    }
    auto [pos, inserted] = state_.peers.members.emplace(request.sender_offset,
                                                        request.sender_address);
    if (inserted) {
        ++serviced_;
    } else {
        pos->second = request.sender_address; // duplicate: refresh, re-acknowledge
    }

    Membership snapshot;
    snapshot.activation_id = ctx_.activation_id;
    snapshot.members = state_.peers.members;
    broadcast(WireMessage{snapshot});
}

void FlightEngine::apply_membership(const Membership& membership) {
    if (membership.activation_id != ctx_.activation_id) {
        log::warn("membership for foreign activation ignored");
        return;
    }
    for (const auto& [offset, ep] : membership.members) state_.peers.members[offset] = ep;
    state_.peers.members[static_cast<int>(ctx_.offset)] = self_address_;
}

void FlightEngine::send_peering() {
    if (ctx_.is_leader) return;
    PeeringRequest req;
    req.activation_id = ctx_.activation_id;
    req.sender_offset = static_cast<int>(ctx_.offset);
    req.sender_address = self_address_;
    transport_.send(ctx_.leader_address, WireMessage{req});
}

UpdateAction FlightEngine::deliver(const WireMessage& msg) {
    if (activation_of(msg) != ctx_.activation_id) {
        log::debug("message for foreign activation discarded");
        return UpdateAction::Discard;
    }
    if (const auto* req = std::get_if<PeeringRequest>(&msg)) {
        serve_peering(*req);
        return UpdateAction::Discard;
    }
    if (const auto* m = std::get_if<Membership>(&msg)) {
        apply_membership(*m);
        return UpdateAction::Discard;
    }
    return apply_state_update(std::get<StateUpdate>(msg));
}

bool FlightEngine::is_job_complete() const {
    for (const auto& task : state_.schedule.order)
        if (!state_.is_terminal(task)) return false;
    return true;
}

Json FlightEngine::job_output() const {
    Json out = Json::object();
    for (const auto& sink : dag_.sinks()) {
        auto it = state_.outputs.find(sink);
        out[sink] = it == state_.outputs.end() ? Json() : it->second;
    }
    return out;
}

void FlightEngine::broadcast(const WireMessage& msg) {
    for (const auto& [offset, ep] : state_.peers.members) {
        if (offset == static_cast<int>(ctx_.offset)) continue;
        transport_.send(ep, msg);
    }
}

} // namespace raptor
