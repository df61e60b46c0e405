#include "dflshield/crypto/token.hpp"

#include <openssl/evp.h>

#include <nlohmann/json.hpp>
#include <stdexcept>

namespace dflshield {

namespace {

const std::string kHeader = R"({"alg":"EdDSA","typ":"JWT"})";

}  // namespace

std::string base64url_encode(ByteView data) {
    std::string out(4 * ((data.size() + 2) / 3) + 1, '\0');
    int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), data.data(), static_cast<int>(data.size()));
    out.resize(static_cast<std::size_t>(n));
    while (!out.empty() && out.back() == '=') out.pop_back();
    for (char& c : out) {
        if (c == '+') c = '-';
        else if (c == '/') c = '_';
    }
    return out;
}

std::optional<Bytes> base64url_decode(std::string_view text) {
    if (text.size() % 4 == 1) return std::nullopt;
    std::string std_b64(text);
    for (char& c : std_b64) {
        if (c == '-') c = '+';
        else if (c == '_') c = '/';
        else if (c == '+' || c == '/' || c == '=') return std::nullopt;
    }
    std::size_t pad = (4 - std_b64.size() % 4) % 4;
    std_b64.append(pad, '=');
    Bytes out(std_b64.size() / 4 * 3);
    int n = EVP_DecodeBlock(out.data(), reinterpret_cast<const unsigned char*>(std_b64.data()),
                            static_cast<int>(std_b64.size()));
    if (n < 0) return std::nullopt;
    out.resize(static_cast<std::size_t>(n) - pad);
    // EVP_DecodeBlock ignores trailing bits and tolerates whitespace; only
    // accept text that re-encodes to itself.
    if (base64url_encode(out) != text) return std::nullopt;
    return out;
}

std::string_view to_string(TokenRejection r) {
    switch (r) {
        case TokenRejection::expired: return "expired";
        case TokenRejection::bad_signature: return "bad-signature";
        case TokenRejection::malformed: return "malformed";
    }
    return "malformed";
}

AuthToken issue_token(NodeId subject, Role role, std::int64_t ttl_ms, const KeyPair& signer, std::int64_t now_ms,
                      const std::map<std::string, std::string>& extra_claims) {
    if (ttl_ms <= 0) throw std::invalid_argument("token ttl must be positive");
    AuthToken t;
    t.subject = subject;
    t.issued_at_ms = now_ms;
    t.expires_at_ms = now_ms + ttl_ms;
    t.claims = extra_claims;
    t.claims["role"] = std::string(to_string(role));

    nlohmann::json body;
    body["sub"] = std::to_string(subject);
    body["iat"] = t.issued_at_ms;
    body["exp"] = t.expires_at_ms;
    for (const auto& [k, v] : t.claims) body[k] = v;
    std::string signing_input = base64url_encode(to_bytes(kHeader)) + "." + base64url_encode(to_bytes(body.dump()));
    t.signature = sign(signer, to_bytes(signing_input));
    t.compact = signing_input + "." + base64url_encode(t.signature);
    return t;
}

TokenCheck verify_token(std::string_view compact, const PublicKey& controller_key, std::int64_t now_ms) {
    TokenCheck out;
    auto first = compact.find('.');
    auto second = first == std::string_view::npos ? first : compact.find('.', first + 1);
    if (second == std::string_view::npos || compact.find('.', second + 1) != std::string_view::npos) return out;

    auto header = base64url_decode(compact.substr(0, first));
    auto payload = base64url_decode(compact.substr(first + 1, second - first - 1));
    auto sig = base64url_decode(compact.substr(second + 1));
    if (!header || !payload || !sig) return out;

    if (!verify_signature(controller_key, to_bytes(compact.substr(0, second)), *sig)) {
        out.reason = TokenRejection::bad_signature;
        return out;
    }
    try {
        auto h = nlohmann::json::parse(header->begin(), header->end());
        if (h.at("alg") != "EdDSA") return out;
        auto body = nlohmann::json::parse(payload->begin(), payload->end());
        out.subject = static_cast<NodeId>(std::stoul(body.at("sub").get<std::string>()));
        out.expires_at_ms = body.at("exp").get<std::int64_t>();
        auto role = parse_role(body.at("role").get<std::string>());
        if (!role) return out;
        out.role = *role;
    } catch (const std::exception&) {
        return out;
    }
    if (now_ms >= out.expires_at_ms) {
        out.reason = TokenRejection::expired;
        return out;
    }
    out.accepted = true;
    return out;
}

}  // namespace dflshield
