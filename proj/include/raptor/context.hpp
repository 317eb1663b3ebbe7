#ifndef RAPTOR_CONTEXT_HPP
#define RAPTOR_CONTEXT_HPP

#include <optional>
#include <string>
#include <vector>

#include "raptor/manifest.hpp"
#include "raptor/util.hpp"

namespace raptor {

// Optional per-request scheduling metadata as it arrives on the wire.
// Absent fields take backwards-compatible defaults in infer_context.
struct ContextMetadata {
    std::optional<unsigned> offset;
    std::optional<std::vector<std::string>> mask;
    std::optional<unsigned> flight_size;
    std::optional<Endpoint> leader_address;
    std::optional<std::string> activation_id;

    static ContextMetadata from_json(const Json& transport);
    Json to_json() const;
};

// Per-activation scheduling metadata. Immutable once constructed.
struct ExecutionContext {
    unsigned offset = 0;
    FunctionMask mask;
    unsigned flight_size = 1;
    Endpoint leader_address;
    std::string activation_id; // flight-wide correlation id
    bool is_leader = true;

    // Per-member id for logs and workdir scoping: the correlation id, with
    // followers suffixed by their offset.
    std::string member_id() const;
};

// Fills absent metadata with the defaults that keep legacy requests
// at-most-once: local leader, offset 0, full manifest mask, flight size 1.
// Throws InvalidOffset / UnknownMaskedFunction.
ExecutionContext infer_context(const ContextMetadata& metadata, const ActionManifest& manifest,
                               const Endpoint& local_address);

// N-1 follower contexts with offsets 1..N-1, same mask, same flight size,
// same correlation id, leader_address = the leader's own endpoint.
// Throws NotALeader.
std::vector<ExecutionContext> make_follower_contexts(const ExecutionContext& leader);

} // namespace raptor

#endif
