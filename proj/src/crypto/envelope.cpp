#include "dflshield/crypto/envelope.hpp"

#include <stdexcept>

namespace dflshield {

namespace {

constexpr std::uint16_t kEnvelopeMagic = 0xDF5E;
constexpr std::uint8_t kEnvelopeVersion = 1;
constexpr std::size_t kUnwrapCacheLimit = 4096;

}  // namespace

SessionKey SessionKey::generate(std::uint32_t epoch) { return SessionKey{random_bytes(kSessionKeyBytes), epoch}; }

SessionKey renew_session(const SessionKey& current, int policy_rounds) {
    if (policy_rounds < 1) throw std::invalid_argument("renewal policy must be >= 1 round");
    return SessionKey::generate(current.epoch + 1);
}

std::string_view to_string(EnvelopeFailure f) {
    switch (f) {
        case EnvelopeFailure::malformed: return "malformed";
        case EnvelopeFailure::unwrap: return "unwrap";
        case EnvelopeFailure::integrity: return "integrity";
        case EnvelopeFailure::unknown_sender: return "unknown-sender";
        case EnvelopeFailure::sender_auth: return "sender-auth";
        case EnvelopeFailure::replay: return "replay";
    }
    return "unknown";
}

Bytes SecureEnvelope::header_bytes() const {
    ByteWriter w(16 + nonce.size() + wrapped_key.size());
    w.u16(kEnvelopeMagic);
    w.u8(kEnvelopeVersion);
    w.u32(sender_id);
    w.u32(epoch);
    w.u8(static_cast<std::uint8_t>(nonce.size()));
    w.raw(nonce);
    w.u16(static_cast<std::uint16_t>(wrapped_key.size()));
    w.raw(wrapped_key);
    return std::move(w).take();
}

Bytes SecureEnvelope::serialize() const {
    ByteWriter w(20 + nonce.size() + wrapped_key.size() + ciphertext.size());
    w.raw(header_bytes());
    w.u32(static_cast<std::uint32_t>(ciphertext.size()));
    w.raw(ciphertext);
    return std::move(w).take();
}

SecureEnvelope SecureEnvelope::parse(ByteView data) {
    try {
        ByteReader r(data);
        if (r.u16() != kEnvelopeMagic) throw MalformedEnvelope("bad envelope magic");
        if (r.u8() != kEnvelopeVersion) throw MalformedEnvelope("unsupported envelope version");
        SecureEnvelope e;
        e.sender_id = r.u32();
        e.epoch = r.u32();
        auto nonce = r.raw(r.u8());
        e.nonce.assign(nonce.begin(), nonce.end());
        auto wrapped = r.raw(r.u16());
        e.wrapped_key.assign(wrapped.begin(), wrapped.end());
        auto ct = r.raw(r.u32());
        e.ciphertext.assign(ct.begin(), ct.end());
        if (!r.done()) throw MalformedEnvelope("trailing bytes after envelope");
        if (e.nonce.size() != kNonceBytes) throw MalformedEnvelope("bad nonce length");
        if (e.ciphertext.size() < kTagBytes + kSignatureBytes) throw MalformedEnvelope("ciphertext too short");
        return e;
    } catch (const DecodeError& e) {
        throw MalformedEnvelope(e.what());
    }
}

EnvelopeSealer::EnvelopeSealer(NodeId sender, const KeyPair& signing_key, SessionKey session,
                               std::uint64_t nonce_limit)
    : sender_(sender), signer_(&signing_key), session_(std::move(session)), nonce_limit_(nonce_limit) {
    if (nonce_limit_ == 0) throw std::invalid_argument("nonce limit must be positive");
}

void EnvelopeSealer::renew() {
    session_ = renew_session(session_, 1);
    counter_ = 0;
    wrapped_.clear();
}

SecureEnvelope EnvelopeSealer::seal(ByteView payload, const PublicKey& recipient) {
    if (payload.empty()) throw std::invalid_argument("refusing to seal an empty payload");
    if (counter_ >= nonce_limit_) renew();

    SecureEnvelope env;
    env.sender_id = sender_;
    env.epoch = session_.epoch;
    ByteWriter nonce(kNonceBytes);
    nonce.u32(sender_);
    nonce.u64(counter_++);
    env.nonce = std::move(nonce).take();

    auto it = wrapped_.find(recipient.der());
    if (it == wrapped_.end()) {
        it = wrapped_.emplace(recipient.der(), wrap_secret(recipient, session_.key_bytes)).first;
    }
    env.wrapped_key = it->second;

    auto header = env.header_bytes();
    Bytes signed_msg = header;
    signed_msg.insert(signed_msg.end(), payload.begin(), payload.end());
    auto sig = sign(*signer_, signed_msg);

    Bytes inner(payload.begin(), payload.end());
    inner.insert(inner.end(), sig.begin(), sig.end());
    env.ciphertext = aead_encrypt(session_.key_bytes, env.nonce, header, inner);
    ++sealed_;
    return env;
}

bool ReplayCache::check_and_insert(NodeId sender, std::uint32_t epoch, ByteView nonce) {
    std::lock_guard lock(mu_);
    auto& s = senders_[sender];
    if (!s.seen.empty() && epoch + 1 < s.newest) return false;
    auto& nonces = s.seen[epoch];
    if (!nonces.emplace(nonce.begin(), nonce.end()).second) return false;
    s.newest = std::max(s.newest, epoch);
    while (!s.seen.empty() && s.seen.begin()->first + 1 < s.newest) s.seen.erase(s.seen.begin());
    return true;
}

std::size_t ReplayCache::size() const {
    std::lock_guard lock(mu_);
    std::size_t n = 0;
    for (const auto& [_, s] : senders_) {
        for (const auto& [__, set] : s.seen) n += set.size();
    }
    return n;
}

EnvelopeOpener::EnvelopeOpener(const KeyPair& own_key, const KeyDirectory& directory)
    : own_(&own_key), directory_(directory) {}

void EnvelopeOpener::rotate_own_key(const KeyPair& next) {
    previous_ = own_;
    own_ = &next;
}

Bytes EnvelopeOpener::unwrap(const SecureEnvelope& env) {
    {
        std::lock_guard lock(cache_mu_);
        auto it = unwrapped_.find(env.wrapped_key);
        if (it != unwrapped_.end()) return it->second;
    }
    Bytes key;
    for (const KeyPair* k : {own_, previous_}) {
        if (k == nullptr) continue;
        try {
            key = unwrap_secret(*k, env.wrapped_key);
            break;
        } catch (const CryptoError&) {
        }
    }
    if (key.size() != kSessionKeyBytes) throw UnwrapError("session key does not unwrap under our private key");
    std::lock_guard lock(cache_mu_);
    if (unwrapped_.emplace(env.wrapped_key, key).second) {
        unwrapped_order_.push_back(env.wrapped_key);
        if (unwrapped_order_.size() > kUnwrapCacheLimit) {
            unwrapped_.erase(unwrapped_order_.front());
            unwrapped_order_.pop_front();
        }
    }
    return key;
}

Bytes EnvelopeOpener::open(const SecureEnvelope& env) {
    if (env.nonce.size() != kNonceBytes || env.ciphertext.size() < kTagBytes + kSignatureBytes) {
        throw MalformedEnvelope("envelope fields have invalid lengths");
    }
    auto key = unwrap(env);
    auto header = env.header_bytes();
    Bytes inner;
    try {
        inner = aead_decrypt(key, env.nonce, header, env.ciphertext);
    } catch (const CryptoError&) {
        throw IntegrityError("ciphertext failed authentication");
    }
    if (inner.size() < kSignatureBytes) throw IntegrityError("decrypted body too short");

    auto cert = directory_.find(env.sender_id);
    if (!cert) {
        throw SenderAuthError(EnvelopeFailure::unknown_sender, "no certificate for sender " + std::to_string(env.sender_id));
    }
    ByteView body(inner);
    auto payload = body.first(inner.size() - kSignatureBytes);
    auto sig = body.last(kSignatureBytes);
    Bytes signed_msg = header;
    signed_msg.insert(signed_msg.end(), payload.begin(), payload.end());
    if (!verify_signature(cert->signing_key, signed_msg, sig)) {
        throw SenderAuthError(EnvelopeFailure::sender_auth, "sender signature does not verify");
    }
    if (!replay_.check_and_insert(env.sender_id, env.epoch, env.nonce)) {
        throw ReplayError("nonce already seen for sender " + std::to_string(env.sender_id));
    }
    return Bytes(payload.begin(), payload.end());
}

}  // namespace dflshield
