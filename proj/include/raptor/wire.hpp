#ifndef RAPTOR_WIRE_HPP
#define RAPTOR_WIRE_HPP

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <variant>

#include "raptor/manifest.hpp"
#include "raptor/util.hpp"

namespace raptor {

// A follower announcing itself to the flight leader. Carries the sender's
// reachable endpoint as a single-entry members map.
struct PeeringRequest {
    std::string activation_id;
    int sender_offset = 0;
    Endpoint sender_address;

    bool operator==(const PeeringRequest&) const = default;
};

// Full membership snapshot, idempotent by construction.
struct Membership {
    std::string activation_id;
    std::map<int, Endpoint> members;

    bool operator==(const Membership&) const = default;
};

// Broadcast record of one task completion: an output document, or null with
// the error flag for a crashed attempt.
struct StateUpdate {
    std::string activation_id;
    std::string task;
    Json output; // null when is_error
    bool is_error = false;
    int origin_offset = 0;
    uint64_t sequence = 0;

    bool operator==(const StateUpdate&) const = default;
};

using WireMessage = std::variant<PeeringRequest, Membership, StateUpdate>;

Json encode_message(const WireMessage& msg);
std::optional<WireMessage> decode_message(const Json& doc);

std::string activation_of(const WireMessage& msg);

// Length-prefixed framing for stream transports: 4-byte big-endian length
// followed by the JSON document bytes.
std::string frame_message(const WireMessage& msg);

class FrameReader {
public:
    void feed(const char* data, size_t len);
    // nullopt until a whole frame is buffered; badly framed input sets
    // failed().
    std::optional<WireMessage> next();
    bool failed() const { return failed_; }

private:
    std::string buf_;
    bool failed_ = false;
};

} // namespace raptor

#endif
