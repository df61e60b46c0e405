#pragma once

#include <map>
#include <mutex>
#include <optional>
#include <vector>

#include "dflshield/crypto/keys.hpp"
#include "dflshield/util/types.hpp"

namespace dflshield {

/// Controller-signed binding of a node id to its two public keys.
struct Certificate {
    NodeId node = 0;
    Role role = Role::aggregator;
    std::uint32_t key_epoch = 0;
    PublicKey encryption_key;
    PublicKey signing_key;
    Bytes signature;

    /// Everything except the signature.
    Bytes signed_bytes() const;
    Bytes serialize() const;
    static Certificate parse(ByteView data);

    bool operator==(const Certificate&) const = default;
};

Certificate issue_certificate(const KeyPair& controller, NodeId node, Role role, std::uint32_t key_epoch,
                              const PublicKey& encryption_key, const PublicKey& signing_key);
bool verify_certificate(const Certificate& cert, const PublicKey& controller_key);

/// Bundle of certificates pushed by the controller.
Bytes serialize_bundle(const std::vector<Certificate>& certs);
std::vector<Certificate> parse_bundle(ByteView data);

/// Thread-safe view of the certificates a node currently trusts.
class KeyDirectory {
public:
    /// Stores `cert` if it is newer than what is held. Returns false for stale.
    bool update(const Certificate& cert);
    std::optional<Certificate> find(NodeId node) const;
    std::vector<NodeId> nodes() const;
    std::size_t size() const;

private:
    mutable std::mutex mu_;
    std::map<NodeId, Certificate> certs_;
};

}  // namespace dflshield
