#pragma once

#include <map>
#include <optional>
#include <string>
#include <string_view>

#include "dflshield/crypto/keys.hpp"
#include "dflshield/util/types.hpp"

namespace dflshield {

/// Unpadded base64url. Decoding is strict: any non-canonical input (bad
/// alphabet, padding, non-zero trailing bits) yields nullopt.
std::string base64url_encode(ByteView data);
std::optional<Bytes> base64url_decode(std::string_view text);

/// Signed bearer token in JWT compact form (alg EdDSA). Times are
/// milliseconds on the federation clock.
struct AuthToken {
    NodeId subject = 0;
    std::int64_t issued_at_ms = 0;
    std::int64_t expires_at_ms = 0;
    std::map<std::string, std::string> claims;
    Bytes signature;
    /// header.payload.signature
    std::string compact;
};

enum class TokenRejection : std::uint8_t { expired, bad_signature, malformed };

std::string_view to_string(TokenRejection r);

struct TokenCheck {
    bool accepted = false;
    NodeId subject = 0;
    Role role = Role::idle;
    std::int64_t expires_at_ms = 0;
    TokenRejection reason = TokenRejection::malformed;

    explicit operator bool() const { return accepted; }
};

/// `ttl_ms` must be positive. Claims carry the role plus any extras given.
AuthToken issue_token(NodeId subject, Role role, std::int64_t ttl_ms, const KeyPair& signer, std::int64_t now_ms,
                      const std::map<std::string, std::string>& extra_claims = {});

/// Accepts iff the signature verifies and now_ms < expires_at_ms.
TokenCheck verify_token(std::string_view compact, const PublicKey& controller_key, std::int64_t now_ms);

}  // namespace dflshield
