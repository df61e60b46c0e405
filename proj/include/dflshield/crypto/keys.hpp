#pragma once

#include <memory>
#include <stdexcept>
#include <string>

#include "dflshield/util/bytes.hpp"
#include "dflshield/util/clock.hpp"

typedef struct evp_pkey_st EVP_PKEY;

namespace dflshield {

class CryptoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// The system RNG refused to produce bytes. Treated as a fatal setup error.
class EntropyError : public CryptoError {
public:
    using CryptoError::CryptoError;
};

/// RSA-OAEP keys wrap session keys; Ed25519 keys sign envelopes, tokens and
/// certificates.
enum class KeyKind : std::uint8_t { encryption = 1, signing = 2 };

struct PkeyDeleter {
    void operator()(EVP_PKEY* k) const;
};
using PkeyHandle = std::unique_ptr<EVP_PKEY, PkeyDeleter>;

/// A DER SubjectPublicKeyInfo blob plus a lazily decoded handle.
class PublicKey {
public:
    PublicKey() = default;
    PublicKey(KeyKind kind, Bytes der);

    KeyKind kind() const { return kind_; }
    const Bytes& der() const { return der_; }
    bool empty() const { return der_.empty(); }
    /// First 8 bytes of SHA-256(der), hex.
    std::string fingerprint() const;

    EVP_PKEY* handle() const;

    bool operator==(const PublicKey& o) const { return kind_ == o.kind_ && der_ == o.der_; }

private:
    KeyKind kind_ = KeyKind::encryption;
    Bytes der_;
    mutable std::shared_ptr<EVP_PKEY> cached_;
};

/// Owns a private key. Move-only; there is deliberately no way to export the
/// private half as bytes.
class KeyPair {
public:
    static KeyPair generate(KeyKind kind, Micros created_at = 0, int rsa_bits = 2048);

    KeyKind kind() const { return kind_; }
    Micros created_at() const { return created_at_; }
    const PublicKey& public_key() const { return public_; }
    EVP_PKEY* handle() const { return key_.get(); }

private:
    KeyPair(KeyKind kind, PkeyHandle key, Micros created_at);

    KeyKind kind_;
    PkeyHandle key_;
    PublicKey public_;
    Micros created_at_;
};

Bytes random_bytes(std::size_t n);

Bytes sha256(ByteView data);
Bytes hmac_sha256(ByteView key, ByteView data);
/// Constant-time comparison.
bool bytes_equal(ByteView a, ByteView b);

/// Ed25519 signature (64 bytes).
Bytes sign(const KeyPair& signer, ByteView message);
bool verify_signature(const PublicKey& signer, ByteView message, ByteView signature);

/// RSA-OAEP(SHA-256) encryption of a short secret.
Bytes wrap_secret(const PublicKey& recipient, ByteView secret);
/// Throws CryptoError when the blob was not produced for this key.
Bytes unwrap_secret(const KeyPair& recipient, ByteView wrapped);

/// AES-256-GCM; output is ciphertext || 16-byte tag.
Bytes aead_encrypt(ByteView key, ByteView nonce, ByteView aad, ByteView plaintext);
/// Throws CryptoError on tag mismatch.
Bytes aead_decrypt(ByteView key, ByteView nonce, ByteView aad, ByteView sealed);

inline constexpr std::size_t kSessionKeyBytes = 32;
inline constexpr std::size_t kNonceBytes = 12;
inline constexpr std::size_t kTagBytes = 16;
inline constexpr std::size_t kSignatureBytes = 64;

}  // namespace dflshield
