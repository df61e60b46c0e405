#include "dflshield/node/messages.hpp"

#include <nlohmann/json.hpp>

#include "dflshield/crypto/token.hpp"

namespace dflshield {

namespace {

using nlohmann::json;

std::string b64(ByteView data) { return base64url_encode(data); }

Bytes unb64(const json& j, const char* field) {
    if (!j.contains(field)) return {};
    auto decoded = base64url_decode(j.at(field).get<std::string>());
    if (!decoded) throw DecodeError(std::string("field ") + field + " is not base64url");
    return *decoded;
}

json parse_object(std::string_view text) {
    json j = json::parse(text, nullptr, false);
    if (j.is_discarded() || !j.is_object()) throw DecodeError("message is not a JSON object");
    return j;
}

Role role_field(const json& j) {
    auto role = parse_role(j.at("role").get<std::string>());
    if (!role) throw DecodeError("unknown role");
    return *role;
}

template <typename F>
auto guarded(F&& fn) {
    try {
        return fn();
    } catch (const json::exception& e) {
        throw DecodeError(std::string("bad message field: ") + e.what());
    }
}

}  // namespace

Bytes ModelMessage::encode() const {
    auto wire = params.to_wire();
    ByteWriter w(10 + token.size() + wire.size());
    w.u32(sender);
    w.u32(round);
    w.u16(static_cast<std::uint16_t>(token.size()));
    w.raw(token);
    w.raw(wire);
    return std::move(w).take();
}

ModelMessage ModelMessage::decode(ByteView data) {
    ByteReader r(data);
    auto sender = r.u32();
    auto round = r.u32();
    auto tok = r.raw(r.u16());
    auto rest = r.raw(r.remaining());
    ModelParams params = [&] {
        try {
            return ModelParams::from_wire(rest);
        } catch (const std::invalid_argument& e) {
            throw DecodeError(e.what());
        }
    }();
    return ModelMessage{sender, round, std::string(tok.begin(), tok.end()), std::move(params)};
}

std::string MetricsReport::to_json() const {
    json j{{"node_id", node}, {"round", round},           {"f1", f1},          {"loss", loss},
           {"bytes_sent", bytes_sent}, {"bytes_recv", bytes_recv}, {"active_ms", active_ms}};
    return j.dump();
}

MetricsReport MetricsReport::from_json(std::string_view text) {
    auto j = parse_object(text);
    return guarded([&] {
        MetricsReport m;
        m.node = j.at("node_id").get<NodeId>();
        m.round = j.at("round").get<std::uint32_t>();
        m.f1 = j.at("f1").get<double>();
        m.loss = j.at("loss").get<double>();
        m.bytes_sent = j.at("bytes_sent").get<std::uint64_t>();
        m.bytes_recv = j.at("bytes_recv").get<std::uint64_t>();
        m.active_ms = j.at("active_ms").get<double>();
        return m;
    });
}

Bytes AuthRequest::proof_input() const {
    ByteWriter w;
    w.raw(std::string_view("dflshield-auth"));
    w.u32(node);
    w.u8(static_cast<std::uint8_t>(role));
    w.raw(nonce);
    w.raw(sha256(encryption_key.der()));
    w.raw(sha256(signing_key.der()));
    return std::move(w).take();
}

Bytes AuthRequest::compute_proof(ByteView credential) const { return hmac_sha256(credential, proof_input()); }

std::string AuthRequest::to_json() const {
    json j{{"node_id", node}, {"role", std::string(to_string(role))}, {"nonce", b64(nonce)},
           {"sig_pub", b64(signing_key.der())}, {"proof", b64(proof)}};
    if (!encryption_key.empty()) j["enc_pub"] = b64(encryption_key.der());
    return j.dump();
}

AuthRequest AuthRequest::from_json(std::string_view text) {
    auto j = parse_object(text);
    return guarded([&] {
        AuthRequest a;
        a.node = j.at("node_id").get<NodeId>();
        a.role = role_field(j);
        a.nonce = unb64(j, "nonce");
        a.signing_key = PublicKey(KeyKind::signing, unb64(j, "sig_pub"));
        auto enc = unb64(j, "enc_pub");
        if (!enc.empty()) a.encryption_key = PublicKey(KeyKind::encryption, std::move(enc));
        a.proof = unb64(j, "proof");
        return a;
    });
}

std::string AuthResponse::to_json() const {
    json j{{"node_id", node}, {"ok", accepted}, {"reason", reason}, {"token", token}};
    if (certificate) j["certificate"] = b64(certificate->serialize());
    if (!controller_encryption_key.empty()) j["controller_enc"] = b64(controller_encryption_key.der());
    return j.dump();
}

AuthResponse AuthResponse::from_json(std::string_view text) {
    auto j = parse_object(text);
    return guarded([&] {
        AuthResponse a;
        a.node = j.at("node_id").get<NodeId>();
        a.accepted = j.at("ok").get<bool>();
        a.reason = j.at("reason").get<std::string>();
        a.token = j.at("token").get<std::string>();
        auto cert = unb64(j, "certificate");
        if (!cert.empty()) a.certificate = Certificate::parse(cert);
        auto enc = unb64(j, "controller_enc");
        if (!enc.empty()) a.controller_encryption_key = PublicKey(KeyKind::encryption, std::move(enc));
        return a;
    });
}

Bytes derive_credential(std::uint64_t seed, NodeId node) {
    ByteWriter w;
    w.raw(std::string_view("dflshield-credential"));
    w.u64(seed);
    w.u32(node);
    return sha256(w.bytes());
}

Bytes DirectoryMessage::signed_bytes() const {
    ByteWriter w;
    w.u32(key_epoch);
    w.u32(static_cast<std::uint32_t>(entries.size()));
    for (const auto& e : entries) {
        w.u32(e.node);
        w.u8(static_cast<std::uint8_t>(e.role));
        w.u32(e.address.ip);
        w.u16(e.address.port);
        w.u32(e.address_epoch);
        if (e.certificate) {
            auto cert = e.certificate->serialize();
            w.u8(1);
            w.u32(static_cast<std::uint32_t>(cert.size()));
            w.raw(cert);
        } else {
            w.u8(0);
        }
    }
    return std::move(w).take();
}

void DirectoryMessage::sign_with(const KeyPair& controller) { signature = sign(controller, signed_bytes()); }

bool DirectoryMessage::verify(const PublicKey& controller) const {
    return verify_signature(controller, signed_bytes(), signature);
}

std::vector<Certificate> DirectoryMessage::certificates() const {
    std::vector<Certificate> out;
    for (const auto& e : entries) {
        if (e.certificate) out.push_back(*e.certificate);
    }
    return out;
}

Bytes RenewKeysMessage::signed_bytes() const {
    ByteWriter w;
    w.raw(std::string_view("dflshield-renew"));
    w.u32(key_epoch);
    return std::move(w).take();
}

Bytes encode_control(const DirectoryMessage& m) {
    ByteWriter w;
    w.u8(static_cast<std::uint8_t>(ControlType::directory));
    w.raw(m.signed_bytes());
    w.u8(static_cast<std::uint8_t>(m.signature.size()));
    w.raw(m.signature);
    return std::move(w).take();
}

Bytes encode_control(const RenewKeysMessage& m) {
    ByteWriter w;
    w.u8(static_cast<std::uint8_t>(ControlType::renew_keys));
    w.u32(m.key_epoch);
    w.u8(static_cast<std::uint8_t>(m.signature.size()));
    w.raw(m.signature);
    return std::move(w).take();
}

Bytes encode_control(const AuthRequest& key_update) {
    ByteWriter w;
    w.u8(static_cast<std::uint8_t>(ControlType::key_update));
    w.raw(key_update.to_json());
    return std::move(w).take();
}

ControlType control_type(ByteView body) {
    if (body.empty()) throw DecodeError("empty control frame");
    auto t = body[0];
    if (t < 1 || t > 3) throw DecodeError("unknown control type");
    return static_cast<ControlType>(t);
}

DirectoryMessage decode_directory(ByteView body) {
    if (control_type(body) != ControlType::directory) throw DecodeError("not a directory message");
    ByteReader r(body.subspan(1));
    DirectoryMessage m;
    m.key_epoch = r.u32();
    auto count = r.u32();
    if (count > r.remaining()) throw DecodeError("directory count exceeds body");
    for (std::uint32_t i = 0; i < count; ++i) {
        DirectoryEntry e;
        e.node = r.u32();
        auto role = r.u8();
        if (role > static_cast<std::uint8_t>(Role::proxy)) throw DecodeError("bad role");
        e.role = static_cast<Role>(role);
        e.address.ip = r.u32();
        e.address.port = r.u16();
        e.address_epoch = r.u32();
        if (r.u8() != 0) e.certificate = Certificate::parse(r.raw(r.u32()));
        m.entries.push_back(std::move(e));
    }
    auto sig = r.raw(r.u8());
    m.signature.assign(sig.begin(), sig.end());
    if (!r.done()) throw DecodeError("trailing bytes after directory");
    return m;
}

RenewKeysMessage decode_renew(ByteView body) {
    if (control_type(body) != ControlType::renew_keys) throw DecodeError("not a renewal message");
    ByteReader r(body.subspan(1));
    RenewKeysMessage m;
    m.key_epoch = r.u32();
    auto sig = r.raw(r.u8());
    m.signature.assign(sig.begin(), sig.end());
    if (!r.done()) throw DecodeError("trailing bytes after renewal");
    return m;
}

AuthRequest decode_key_update(ByteView body) {
    if (control_type(body) != ControlType::key_update) throw DecodeError("not a key update");
    auto rest = body.subspan(1);
    return AuthRequest::from_json(std::string_view(reinterpret_cast<const char*>(rest.data()), rest.size()));
}

}  // namespace dflshield
