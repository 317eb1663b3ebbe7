#ifndef RAPTOR_UTIL_HPP
#define RAPTOR_UTIL_HPP

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace raptor {

// Network endpoint as "host:port". Simulated transports use synthetic host
// names with port 0, so the port is not required to be positive.
struct Endpoint {
    std::string host;
    uint16_t port = 0;

    bool operator==(const Endpoint&) const = default;
    std::string str() const;

    static std::optional<Endpoint> parse(const std::string& s);
};

std::string sha256_hex(const std::string& data);

std::string base64_encode(const std::string& data);
std::optional<std::string> base64_decode(const std::string& text);

// 16 hex chars from a process-global CSPRNG-seeded generator.
std::string fresh_activation_id();

// Replaces anything outside [A-Za-z0-9._-] so names can be used as path
// components.
std::string sanitize_path_component(const std::string& name);

// Relative, no empty / "." / ".." segments.
bool is_safe_relative_path(const std::string& p);

} // namespace raptor

#endif
