#include "raptor/wire.hpp"

#include "raptor/log.hpp"

namespace raptor {

namespace {
constexpr size_t kMaxFrameBytes = 16u << 20;

Json members_to_json(const std::map<int, Endpoint>& members) {
    Json j = Json::object();
    for (const auto& [offset, ep] : members) j[std::to_string(offset)] = ep.str();
    return j;
}

std::optional<std::map<int, Endpoint>> members_from_json(const Json& j) {
    if (!j.is_object()) return std::nullopt;
    std::map<int, Endpoint> members;
    for (const auto& [key, value] : j.items()) {
        if (!value.is_string()) return std::nullopt;
        auto ep = Endpoint::parse(value.get<std::string>());
        if (!ep) return std::nullopt;
        try {
            members[std::stoi(key)] = *ep;
        } catch (const std::exception&) {
            return std::nullopt;
        }
    }
    return members;
}
} // namespace

Json encode_message(const WireMessage& msg) {
    Json j = Json::object();
    std::visit(
        [&](const auto& m) {
            using T = std::decay_t<decltype(m)>;
            j["activation_id"] = m.activation_id;
            if constexpr (std::is_same_v<T, PeeringRequest>) {
                j["kind"] = "peering_request";
                j["origin_offset"] = m.sender_offset;
                j["members"] = members_to_json({{m.sender_offset, m.sender_address}});
            } else if constexpr (std::is_same_v<T, Membership>) {
                j["kind"] = "membership";
                j["members"] = members_to_json(m.members);
            } else {
                j["kind"] = "state_update";
                j["task"] = m.task;
                j["output"] = m.output;
                j["is_error"] = m.is_error;
                j["origin_offset"] = m.origin_offset;
                j["sequence"] = m.sequence;
            }
        },
        msg);
    return j;
}

std::optional<WireMessage> decode_message(const Json& doc) {
    if (!doc.is_object() || !doc.contains("kind") || !doc["kind"].is_string() ||
        !doc.contains("activation_id") || !doc["activation_id"].is_string())
        return std::nullopt;
    const std::string kind = doc["kind"].get<std::string>();
    const std::string activation = doc["activation_id"].get<std::string>();

    if (kind == "peering_request") {
        if (!doc.contains("origin_offset") || !doc["origin_offset"].is_number_integer() ||
            !doc.contains("members"))
            return std::nullopt;
        auto members = members_from_json(doc["members"]);
        if (!members || members->size() != 1) return std::nullopt;
        PeeringRequest req;
        req.activation_id = activation;
        req.sender_offset = doc["origin_offset"].get<int>();
        auto it = members->find(req.sender_offset);
        if (it == members->end()) return std::nullopt;
        req.sender_address = it->second;
        return WireMessage{req};
    }
    if (kind == "membership") {
        if (!doc.contains("members")) return std::nullopt;
        auto members = members_from_json(doc["members"]);
        if (!members) return std::nullopt;
        Membership m;
        m.activation_id = activation;
        m.members = std::move(*members);
        return WireMessage{m};
    }
    if (kind == "state_update") {
        if (!doc.contains("task") || !doc["task"].is_string() || !doc.contains("output") ||
            !doc.contains("is_error") || !doc["is_error"].is_boolean() ||
            !doc.contains("origin_offset") || !doc["origin_offset"].is_number_integer() ||
            !doc.contains("sequence") || !doc["sequence"].is_number_integer() ||
            doc["sequence"].get<int64_t>() < 0)
            return std::nullopt;
        StateUpdate u;
        u.activation_id = activation;
        u.task = doc["task"].get<std::string>();
        u.output = doc["output"];
        u.is_error = doc["is_error"].get<bool>();
        u.origin_offset = doc["origin_offset"].get<int>();
        u.sequence = doc["sequence"].get<uint64_t>();
        if (u.is_error && !u.output.is_null()) return std::nullopt;
        return WireMessage{u};
    }
    return std::nullopt;
}

std::string activation_of(const WireMessage& msg) {
    return std::visit([](const auto& m) { return m.activation_id; }, msg);
}

std::string frame_message(const WireMessage& msg) {
    std::string body = encode_message(msg).dump();
    std::string out;
    out.reserve(4 + body.size());
    uint32_t len = static_cast<uint32_t>(body.size());
    out.push_back(char((len >> 24) & 0xff));
    out.push_back(char((len >> 16) & 0xff));
    out.push_back(char((len >> 8) & 0xff));
    out.push_back(char(len & 0xff));
    out += body;
    return out;
}

void FrameReader::feed(const char* data, size_t len) { buf_.append(data, len); }

std::optional<WireMessage> FrameReader::next() {
    if (failed_ || buf_.size() < 4) return std::nullopt;
    uint32_t len = (uint32_t(uint8_t(buf_[0])) << 24) | (uint32_t(uint8_t(buf_[1])) << 16) |
                   (uint32_t(uint8_t(buf_[2])) << 8) | uint32_t(uint8_t(buf_[3]));
    if (len > kMaxFrameBytes) {
        failed_ = true;
        return std::nullopt;
    }
    if (buf_.size() < 4 + size_t(len)) return std::nullopt;
    Json doc = Json::parse(buf_.substr(4, len), nullptr, false);
    buf_.erase(0, 4 + size_t(len));
    if (doc.is_discarded()) {
        failed_ = true;
        return std::nullopt;
    }
    auto msg = decode_message(doc);
    if (!msg) {
        log::warn("dropping undecodable peer message");
        return std::nullopt;
    }
    return msg;
}

} // namespace raptor
