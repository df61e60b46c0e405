#pragma once

#include <optional>
#include <string>
#include <vector>

#include "dflshield/crypto/certificate.hpp"
#include "dflshield/model/params.hpp"
#include "dflshield/net/frame.hpp"
#include "dflshield/util/types.hpp"

namespace dflshield {

/// Plaintext carried by a ModelExchange frame (inside an envelope when
/// encryption is on). The token lets receivers check that the claimed sender
/// was admitted by the controller.
struct ModelMessage {
    NodeId sender = 0;
    std::uint32_t round = 0;
    std::string token;
    ModelParams params;

    Bytes encode() const;
    /// Throws DecodeError.
    static ModelMessage decode(ByteView data);
};

/// JSON body of a MetricsReport frame.
struct MetricsReport {
    NodeId node = 0;
    std::uint32_t round = 0;
    double f1 = 0.0;
    double loss = 0.0;
    std::uint64_t bytes_sent = 0;
    std::uint64_t bytes_recv = 0;
    double active_ms = 0.0;

    std::string to_json() const;
    /// Throws DecodeError.
    static MetricsReport from_json(std::string_view text);

    bool operator==(const MetricsReport&) const = default;
};

/// Join or key-update request. The proof is an HMAC under the node's
/// pre-shared credential, so the credential itself never crosses the wire.
struct AuthRequest {
    NodeId node = 0;
    Role role = Role::aggregator;
    Bytes nonce;
    PublicKey encryption_key;  // empty under baseline
    PublicKey signing_key;
    Bytes proof;

    Bytes proof_input() const;
    void attach_proof(ByteView credential) { proof = compute_proof(credential); }
    Bytes compute_proof(ByteView credential) const;

    std::string to_json() const;
    static AuthRequest from_json(std::string_view text);
};

struct AuthResponse {
    NodeId node = 0;
    bool accepted = false;
    std::string reason;
    std::string token;
    std::optional<Certificate> certificate;
    PublicKey controller_encryption_key;  // empty under baseline

    std::string to_json() const;
    static AuthResponse from_json(std::string_view text);
};

/// Per-node credential a deployment hands out out of band.
Bytes derive_credential(std::uint64_t seed, NodeId node);

enum class ControlType : std::uint8_t { directory = 1, renew_keys = 2, key_update = 3 };

struct DirectoryEntry {
    NodeId node = 0;
    Role role = Role::aggregator;
    PeerAddress address;
    std::uint32_t address_epoch = 0;
    std::optional<Certificate> certificate;

    bool operator==(const DirectoryEntry&) const = default;
};

/// Controller push: who is in the federation, where, and with which keys.
struct DirectoryMessage {
    std::uint32_t key_epoch = 0;
    std::vector<DirectoryEntry> entries;
    Bytes signature;

    Bytes signed_bytes() const;
    void sign_with(const KeyPair& controller);
    bool verify(const PublicKey& controller) const;
    std::vector<Certificate> certificates() const;
};

/// Controller push asking every node to generate fresh key pairs.
struct RenewKeysMessage {
    std::uint32_t key_epoch = 0;
    Bytes signature;

    Bytes signed_bytes() const;
};

/// Control frame body: u8 type | payload.
Bytes encode_control(const DirectoryMessage& m);
Bytes encode_control(const RenewKeysMessage& m);
Bytes encode_control(const AuthRequest& key_update);
ControlType control_type(ByteView body);
DirectoryMessage decode_directory(ByteView body);
RenewKeysMessage decode_renew(ByteView body);
AuthRequest decode_key_update(ByteView body);

}  // namespace dflshield
