#include "dflshield/net/frame.hpp"

#include <charconv>

namespace dflshield {

namespace {

constexpr std::uint8_t kMagicHi = 0xFD;
constexpr std::uint8_t kMagicLo = 0x50;

}  // namespace

std::string ip_to_string(std::uint32_t ip) {
    return std::to_string(ip >> 24) + "." + std::to_string((ip >> 16) & 0xFF) + "." +
           std::to_string((ip >> 8) & 0xFF) + "." + std::to_string(ip & 0xFF);
}

std::string PeerAddress::to_string() const { return ip_to_string(ip) + ":" + std::to_string(port); }

std::optional<PeerAddress> PeerAddress::parse(std::string_view text) {
    PeerAddress out;
    const char* p = text.data();
    const char* end = text.data() + text.size();
    for (int i = 0; i < 4; ++i) {
        unsigned octet = 0;
        auto [next, ec] = std::from_chars(p, end, octet);
        if (ec != std::errc{} || octet > 255 || next == p) return std::nullopt;
        out.ip = (out.ip << 8) | octet;
        p = next;
        char want = i < 3 ? '.' : ':';
        if (p == end || *p != want) return std::nullopt;
        ++p;
    }
    unsigned port = 0;
    auto [next, ec] = std::from_chars(p, end, port);
    if (ec != std::errc{} || next != end || port > 65535) return std::nullopt;
    out.port = static_cast<std::uint16_t>(port);
    return out;
}

std::string_view to_string(FrameKind k) {
    switch (k) {
        case FrameKind::model_exchange: return "ModelExchange";
        case FrameKind::rendezvous_notice: return "RendezvousNotice";
        case FrameKind::auth_request: return "AuthRequest";
        case FrameKind::auth_response: return "AuthResponse";
        case FrameKind::metrics_report: return "MetricsReport";
        case FrameKind::control: return "Control";
    }
    return "Unknown";
}

Bytes Frame::serialize() const {
    ByteWriter w(wire_size());
    w.u8(kMagicHi);
    w.u8(kMagicLo | kFrameVersion);
    w.u8(static_cast<std::uint8_t>(kind));
    w.u32(correlation_id);
    w.u32(static_cast<std::uint32_t>(body.size()));
    w.raw(body);
    return std::move(w).take();
}

std::uint32_t Frame::parse_header(ByteView header, FrameKind& kind, std::uint32_t& correlation_id) {
    ByteReader r(header);
    if (r.u8() != kMagicHi) throw DecodeError("bad frame magic");
    auto lo = r.u8();
    if ((lo & 0xF0) != kMagicLo) throw DecodeError("bad frame magic");
    if ((lo & 0x0F) != kFrameVersion) throw DecodeError("unsupported frame version");
    auto k = r.u8();
    if (k < 1 || k > static_cast<std::uint8_t>(FrameKind::control)) throw DecodeError("unknown frame kind");
    kind = static_cast<FrameKind>(k);
    correlation_id = r.u32();
    return r.u32();
}

Frame Frame::parse(ByteView data) {
    if (data.size() < kFrameHeaderBytes) throw DecodeError("truncated frame header");
    Frame f;
    auto len = parse_header(data.first(kFrameHeaderBytes), f.kind, f.correlation_id);
    if (data.size() - kFrameHeaderBytes != len) throw DecodeError("frame length mismatch");
    f.body.assign(data.begin() + kFrameHeaderBytes, data.end());
    return f;
}

}  // namespace dflshield
