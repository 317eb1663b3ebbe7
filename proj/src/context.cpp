#include "raptor/context.hpp"

#include "raptor/errors.hpp"

namespace raptor {

ContextMetadata ContextMetadata::from_json(const Json& transport) {
    ContextMetadata md;
    if (!transport.is_object()) return md;
    if (transport.contains("offset")) {
        const auto& v = transport["offset"];
        if (!v.is_number_integer() || v.get<int64_t>() < 0)
            throw Error(Errc::InvalidContext, "'offset' must be a non-negative integer");
        md.offset = v.get<unsigned>();
    }
    if (transport.contains("mask")) {
        const auto& v = transport["mask"];
        if (!v.is_array())
            throw Error(Errc::InvalidContext, "'mask' must be an array of function names");
        std::vector<std::string> names;
        for (const auto& item : v) {
            if (!item.is_string())
                throw Error(Errc::InvalidContext, "'mask' entries must be strings");
            names.push_back(item.get<std::string>());
        }
        md.mask = std::move(names);
    }
    if (transport.contains("flight_size")) {
        const auto& v = transport["flight_size"];
        if (!v.is_number_integer() || v.get<int64_t>() < 1)
            throw Error(Errc::InvalidContext, "'flight_size' must be a positive integer");
        md.flight_size = v.get<unsigned>();
    }
    if (transport.contains("leader_address")) {
        const auto& v = transport["leader_address"];
        auto ep = v.is_string() ? Endpoint::parse(v.get<std::string>()) : std::nullopt;
        if (!ep)
            throw Error(Errc::InvalidContext, "'leader_address' must be a host:port string");
        md.leader_address = *ep;
    }
    if (transport.contains("activation_id")) {
        const auto& v = transport["activation_id"];
        if (!v.is_string() || v.get<std::string>().empty())
            throw Error(Errc::InvalidContext, "'activation_id' must be a non-empty string");
        md.activation_id = v.get<std::string>();
    }
    return md;
}

Json ContextMetadata::to_json() const {
    Json j = Json::object();
    if (offset) j["offset"] = *offset;
    if (mask) j["mask"] = *mask;
    if (flight_size) j["flight_size"] = *flight_size;
    if (leader_address) j["leader_address"] = leader_address->str();
    if (activation_id) j["activation_id"] = *activation_id;
    return j;
}

std::string ExecutionContext::member_id() const {
    if (offset == 0) return activation_id;
    return activation_id + "." + std::to_string(offset);
}

ExecutionContext infer_context(const ContextMetadata& metadata, const ActionManifest& manifest,
                               const Endpoint& local_address) {
    ExecutionContext ctx;

    // No leader address and no offset means this request *is* the leader.
    if (!metadata.leader_address && !metadata.offset) {
        ctx.offset = 0;
        ctx.leader_address = local_address;
    } else {
        ctx.offset = metadata.offset.value_or(0);
        ctx.leader_address = metadata.leader_address.value_or(local_address);
    }

    if (metadata.flight_size) {
        ctx.flight_size = *metadata.flight_size;
    } else {
        // A follower request without a flight size (paper's follower row
        // omits it) takes the smallest size its offset permits.
        ctx.flight_size = ctx.offset + 1;
    }
    if (ctx.offset >= ctx.flight_size)
        throw Error(Errc::InvalidOffset, "offset " + std::to_string(ctx.offset) +
                                             " not below flight size " +
                                             std::to_string(ctx.flight_size));

    if (metadata.mask) {
        for (const auto& name : *metadata.mask)
            if (!manifest.find(name))
                throw Error(Errc::UnknownMaskedFunction,
                            "mask names unknown function '" + name + "'");
        ctx.mask.selected.insert(metadata.mask->begin(), metadata.mask->end());
        if (ctx.mask.selected.empty())
            throw Error(Errc::UnknownMaskedFunction, "mask must not be empty");
    } else {
        for (const auto& e : manifest.entries) ctx.mask.selected.insert(e.name);
    }

    ctx.activation_id = metadata.activation_id.value_or(fresh_activation_id());
    ctx.is_leader = ctx.offset == 0 && ctx.leader_address == local_address;
    return ctx;
}

std::vector<ExecutionContext> make_follower_contexts(const ExecutionContext& leader) {
    if (!leader.is_leader)
        throw Error(Errc::NotALeader, "follower contexts are constructed by the leader");
    std::vector<ExecutionContext> followers;
    for (unsigned off = 1; off < leader.flight_size; ++off) {
        ExecutionContext f = leader;
        f.offset = off;
        f.is_leader = false;
        // leader_address already holds the leader's own reachable endpoint
        followers.push_back(std::move(f));
    }
    return followers;
}

} // namespace raptor
