#pragma once

#include <compare>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

#include "dflshield/util/bytes.hpp"

namespace dflshield {

struct PeerAddress {
    std::uint32_t ip = 0;  // host order
    std::uint16_t port = 0;

    static constexpr std::uint16_t kMinPort = 1024;

    bool valid() const { return ip != 0 && port >= kMinPort; }
    std::string to_string() const;
    /// "a.b.c.d:port"
    static std::optional<PeerAddress> parse(std::string_view text);
    static std::uint32_t ipv4(std::uint8_t a, std::uint8_t b, std::uint8_t c, std::uint8_t d) {
        return (std::uint32_t{a} << 24) | (std::uint32_t{b} << 16) | (std::uint32_t{c} << 8) | d;
    }

    auto operator<=>(const PeerAddress&) const = default;
};

std::string ip_to_string(std::uint32_t ip);

enum class FrameKind : std::uint8_t {
    model_exchange = 1,
    rendezvous_notice = 2,
    auth_request = 3,
    auth_response = 4,
    metrics_report = 5,
    control = 6,
};

std::string_view to_string(FrameKind k);
inline bool is_control(FrameKind k) { return k != FrameKind::model_exchange; }

inline constexpr std::uint8_t kFrameVersion = 1;
inline constexpr std::size_t kFrameHeaderBytes = 11;

struct Frame {
    FrameKind kind = FrameKind::control;
    std::uint32_t correlation_id = 0;
    Bytes body;

    std::size_t wire_size() const { return kFrameHeaderBytes + body.size(); }
    Bytes serialize() const;
    /// Throws DecodeError on a bad magic, version, kind or length.
    static Frame parse(ByteView data);
    /// Reads just the header; returns the body length it announces.
    static std::uint32_t parse_header(ByteView header, FrameKind& kind, std::uint32_t& correlation_id);

    bool operator==(const Frame&) const = default;
};

class FrameTooLarge : public std::length_error {
public:
    using std::length_error::length_error;
};

}  // namespace dflshield
