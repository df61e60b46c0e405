#pragma once

#include <cstdint>
#include <deque>
#include <map>
#include <mutex>
#include <set>

#include "dflshield/crypto/certificate.hpp"
#include "dflshield/crypto/keys.hpp"
#include "dflshield/util/types.hpp"

namespace dflshield {

/// Symmetric key for one sender epoch.
struct SessionKey {
    Bytes key_bytes;
    std::uint32_t epoch = 0;

    static SessionKey generate(std::uint32_t epoch = 0);
};

/// Fresh key bytes, epoch + 1. `policy_rounds` must be >= 1.
SessionKey renew_session(const SessionKey& current, int policy_rounds);

/// True when the session is due for renewal after `round` (0-based).
inline bool renewal_due(int round, int policy_rounds) { return (round + 1) % policy_rounds == 0; }

struct SecureEnvelope {
    NodeId sender_id = 0;
    std::uint32_t epoch = 0;
    Bytes nonce;
    Bytes wrapped_key;
    /// AES-GCM output over payload || sender signature.
    Bytes ciphertext;

    /// Bytes authenticated as associated data: everything before the ciphertext.
    Bytes header_bytes() const;
    Bytes serialize() const;
    /// Throws MalformedEnvelope.
    static SecureEnvelope parse(ByteView data);

    bool operator==(const SecureEnvelope&) const = default;
};

enum class EnvelopeFailure : std::uint8_t { malformed, unwrap, integrity, unknown_sender, sender_auth, replay };

std::string_view to_string(EnvelopeFailure f);

class EnvelopeError : public CryptoError {
public:
    EnvelopeError(EnvelopeFailure f, const std::string& msg) : CryptoError(msg), failure_(f) {}
    EnvelopeFailure failure() const { return failure_; }

private:
    EnvelopeFailure failure_;
};

class MalformedEnvelope : public EnvelopeError {
public:
    explicit MalformedEnvelope(const std::string& m) : EnvelopeError(EnvelopeFailure::malformed, m) {}
};
class UnwrapError : public EnvelopeError {
public:
    explicit UnwrapError(const std::string& m) : EnvelopeError(EnvelopeFailure::unwrap, m) {}
};
class IntegrityError : public EnvelopeError {
public:
    explicit IntegrityError(const std::string& m) : EnvelopeError(EnvelopeFailure::integrity, m) {}
};
class SenderAuthError : public EnvelopeError {
public:
    SenderAuthError(EnvelopeFailure f, const std::string& m) : EnvelopeError(f, m) {}
};
class ReplayError : public EnvelopeError {
public:
    explicit ReplayError(const std::string& m) : EnvelopeError(EnvelopeFailure::replay, m) {}
};

/// Sender side. Owns the current session key and the nonce counter; nonces
/// are sender_id || counter, so they never repeat under one session key.
class EnvelopeSealer {
public:
    EnvelopeSealer(NodeId sender, const KeyPair& signing_key, SessionKey session,
                   std::uint64_t nonce_limit = UINT64_MAX);

    /// Nonce exhaustion triggers an implicit renewal before sealing.
    SecureEnvelope seal(ByteView payload, const PublicKey& recipient);

    const SessionKey& session() const { return session_; }
    void renew();
    void set_signing_key(const KeyPair& signing_key) { signer_ = &signing_key; }
    std::uint64_t sealed_count() const { return sealed_; }

private:
    NodeId sender_;
    const KeyPair* signer_;
    SessionKey session_;
    std::uint64_t counter_ = 0;
    std::uint64_t nonce_limit_;
    std::uint64_t sealed_ = 0;
    // recipient der -> wrapped session key for the current epoch
    std::map<Bytes, Bytes> wrapped_;
};

/// Remembers (epoch, nonce) per sender for the two most recent epochs.
/// Anything older than that is refused outright.
class ReplayCache {
public:
    /// Records the pair; false if it was already present or too old.
    bool check_and_insert(NodeId sender, std::uint32_t epoch, ByteView nonce);
    std::size_t size() const;

private:
    struct PerSender {
        std::uint32_t newest = 0;
        std::map<std::uint32_t, std::set<Bytes>> seen;
    };
    mutable std::mutex mu_;
    std::map<NodeId, PerSender> senders_;
};

/// Receiver side: unwrap, decrypt, check sender signature, check replay.
class EnvelopeOpener {
public:
    EnvelopeOpener(const KeyPair& own_key, const KeyDirectory& directory);

    Bytes open(const SecureEnvelope& env);
    Bytes open(ByteView wire) { return open(SecureEnvelope::parse(wire)); }

    /// After a key renewal the previous private key stays usable for frames
    /// already in flight.
    void rotate_own_key(const KeyPair& next);

    const ReplayCache& replay_cache() const { return replay_; }

private:
    Bytes unwrap(const SecureEnvelope& env);

    const KeyPair* own_;
    const KeyPair* previous_ = nullptr;
    const KeyDirectory& directory_;
    ReplayCache replay_;
    std::mutex cache_mu_;
    std::map<Bytes, Bytes> unwrapped_;
    std::deque<Bytes> unwrapped_order_;
};

}  // namespace dflshield
