#include "dflshield/crypto/certificate.hpp"

namespace dflshield {

namespace {

constexpr std::uint16_t kCertMagic = 0xCE57;

void write_key(ByteWriter& w, const PublicKey& k) {
    w.u8(static_cast<std::uint8_t>(k.kind()));
    w.u16(static_cast<std::uint16_t>(k.der().size()));
    w.raw(k.der());
}

PublicKey read_key(ByteReader& r, KeyKind expected) {
    auto kind = static_cast<KeyKind>(r.u8());
    if (kind != expected) throw DecodeError("certificate key kind mismatch");
    auto len = r.u16();
    auto der = r.raw(len);
    return PublicKey(kind, Bytes(der.begin(), der.end()));
}

}  // namespace

Bytes Certificate::signed_bytes() const {
    ByteWriter w;
    w.u16(kCertMagic);
    w.u32(node);
    w.u8(static_cast<std::uint8_t>(role));
    w.u32(key_epoch);
    write_key(w, encryption_key);
    write_key(w, signing_key);
    return std::move(w).take();
}

Bytes Certificate::serialize() const {
    ByteWriter w;
    w.raw(signed_bytes());
    w.u8(static_cast<std::uint8_t>(signature.size()));
    w.raw(signature);
    return std::move(w).take();
}

Certificate Certificate::parse(ByteView data) {
    ByteReader r(data);
    if (r.u16() != kCertMagic) throw DecodeError("bad certificate magic");
    Certificate c;
    c.node = r.u32();
    auto role = r.u8();
    if (role > static_cast<std::uint8_t>(Role::proxy)) throw DecodeError("bad role");
    c.role = static_cast<Role>(role);
    c.key_epoch = r.u32();
    c.encryption_key = read_key(r, KeyKind::encryption);
    c.signing_key = read_key(r, KeyKind::signing);
    auto sig = r.raw(r.u8());
    c.signature.assign(sig.begin(), sig.end());
    if (!r.done()) throw DecodeError("trailing bytes after certificate");
    return c;
}

Certificate issue_certificate(const KeyPair& controller, NodeId node, Role role, std::uint32_t key_epoch,
                              const PublicKey& encryption_key, const PublicKey& signing_key) {
    Certificate c{node, role, key_epoch, encryption_key, signing_key, {}};
    c.signature = sign(controller, c.signed_bytes());
    return c;
}

bool verify_certificate(const Certificate& cert, const PublicKey& controller_key) {
    return verify_signature(controller_key, cert.signed_bytes(), cert.signature);
}

Bytes serialize_bundle(const std::vector<Certificate>& certs) {
    ByteWriter w;
    w.u32(static_cast<std::uint32_t>(certs.size()));
    for (const auto& c : certs) {
        auto b = c.serialize();
        w.u32(static_cast<std::uint32_t>(b.size()));
        w.raw(b);
    }
    return std::move(w).take();
}

std::vector<Certificate> parse_bundle(ByteView data) {
    ByteReader r(data);
    auto n = r.u32();
    std::vector<Certificate> out;
    out.reserve(std::min<std::size_t>(n, 4096));
    for (std::uint32_t i = 0; i < n; ++i) {
        auto len = r.u32();
        out.push_back(Certificate::parse(r.raw(len)));
    }
    if (!r.done()) throw DecodeError("trailing bytes after bundle");
    return out;
}

bool KeyDirectory::update(const Certificate& cert) {
    std::lock_guard lock(mu_);
    auto it = certs_.find(cert.node);
    if (it != certs_.end() && it->second.key_epoch > cert.key_epoch) return false;
    certs_[cert.node] = cert;
    return true;
}

std::optional<Certificate> KeyDirectory::find(NodeId node) const {
    std::lock_guard lock(mu_);
    auto it = certs_.find(node);
    if (it == certs_.end()) return std::nullopt;
    return it->second;
}

std::vector<NodeId> KeyDirectory::nodes() const {
    std::lock_guard lock(mu_);
    std::vector<NodeId> out;
    for (const auto& [id, _] : certs_) out.push_back(id);
    return out;
}

std::size_t KeyDirectory::size() const {
    std::lock_guard lock(mu_);
    return certs_.size();
}

}  // namespace dflshield
