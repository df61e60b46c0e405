#include "dflshield/crypto/keys.hpp"

#include <openssl/crypto.h>
#include <openssl/err.h>
#include <openssl/evp.h>
#include <openssl/rand.h>
#include <openssl/rsa.h>
#include <openssl/x509.h>

namespace dflshield {

namespace {

struct CtxDeleter {
    void operator()(EVP_PKEY_CTX* c) const { EVP_PKEY_CTX_free(c); }
    void operator()(EVP_MD_CTX* c) const { EVP_MD_CTX_free(c); }
    void operator()(EVP_CIPHER_CTX* c) const { EVP_CIPHER_CTX_free(c); }
};
using PkeyCtx = std::unique_ptr<EVP_PKEY_CTX, CtxDeleter>;
using MdCtx = std::unique_ptr<EVP_MD_CTX, CtxDeleter>;
using CipherCtx = std::unique_ptr<EVP_CIPHER_CTX, CtxDeleter>;

[[noreturn]] void fail(const char* what) {
    unsigned long code = ERR_get_error();
    std::string msg(what);
    if (code != 0) {
        char buf[256];
        ERR_error_string_n(code, buf, sizeof buf);
        msg += ": ";
        msg += buf;
    }
    ERR_clear_error();
    throw CryptoError(msg);
}

Bytes export_public(EVP_PKEY* key) {
    int len = i2d_PUBKEY(key, nullptr);
    if (len <= 0) fail("i2d_PUBKEY");
    Bytes out(static_cast<std::size_t>(len));
    unsigned char* p = out.data();
    if (i2d_PUBKEY(key, &p) != len) fail("i2d_PUBKEY");
    return out;
}

PkeyCtx rsa_oaep_ctx(EVP_PKEY* key, bool encrypt) {
    PkeyCtx ctx(EVP_PKEY_CTX_new(key, nullptr));
    if (!ctx) fail("EVP_PKEY_CTX_new");
    int rc = encrypt ? EVP_PKEY_encrypt_init(ctx.get()) : EVP_PKEY_decrypt_init(ctx.get());
    if (rc <= 0 || EVP_PKEY_CTX_set_rsa_padding(ctx.get(), RSA_PKCS1_OAEP_PADDING) <= 0 ||
        EVP_PKEY_CTX_set_rsa_oaep_md(ctx.get(), EVP_sha256()) <= 0 ||
        EVP_PKEY_CTX_set_rsa_mgf1_md(ctx.get(), EVP_sha256()) <= 0) {
        fail("RSA-OAEP setup");
    }
    return ctx;
}

void check_aead_args(ByteView key, ByteView nonce) {
    if (key.size() != kSessionKeyBytes) throw CryptoError("session key must be 32 bytes");
    if (nonce.size() != kNonceBytes) throw CryptoError("nonce must be 12 bytes");
}

}  // namespace

void PkeyDeleter::operator()(EVP_PKEY* k) const { EVP_PKEY_free(k); }

PublicKey::PublicKey(KeyKind kind, Bytes der) : kind_(kind), der_(std::move(der)) {}

EVP_PKEY* PublicKey::handle() const {
    if (!cached_) {
        if (der_.empty()) throw CryptoError("empty public key");
        const unsigned char* p = der_.data();
        EVP_PKEY* k = d2i_PUBKEY(nullptr, &p, static_cast<long>(der_.size()));
        if (k == nullptr) fail("d2i_PUBKEY");
        bool is_rsa = EVP_PKEY_is_a(k, "RSA");
        if ((kind_ == KeyKind::encryption) != is_rsa) {
            EVP_PKEY_free(k);
            throw CryptoError("public key algorithm does not match its declared kind");
        }
        cached_.reset(k, EVP_PKEY_free);
    }
    return cached_.get();
}

std::string PublicKey::fingerprint() const {
    auto h = sha256(der_);
    return to_hex(ByteView(h).first(8));
}

KeyPair::KeyPair(KeyKind kind, PkeyHandle key, Micros created_at)
    : kind_(kind), key_(std::move(key)), public_(kind, export_public(key_.get())), created_at_(created_at) {}

KeyPair KeyPair::generate(KeyKind kind, Micros created_at, int rsa_bits) {
    EVP_PKEY* raw = nullptr;
    if (kind == KeyKind::encryption) {
        raw = EVP_PKEY_Q_keygen(nullptr, nullptr, "RSA", static_cast<size_t>(rsa_bits));
    } else {
        raw = EVP_PKEY_Q_keygen(nullptr, nullptr, "ED25519");
    }
    if (raw == nullptr) fail("key generation");
    return KeyPair(kind, PkeyHandle(raw), created_at);
}

Bytes random_bytes(std::size_t n) {
    Bytes out(n);
    if (n > 0 && RAND_bytes(out.data(), static_cast<int>(n)) != 1) {
        ERR_clear_error();
        throw EntropyError("system entropy source unavailable");
    }
    return out;
}

Bytes sha256(ByteView data) {
    Bytes out(32);
    unsigned int len = 0;
    if (EVP_Digest(data.data(), data.size(), out.data(), &len, EVP_sha256(), nullptr) != 1) fail("sha256");
    return out;
}

Bytes hmac_sha256(ByteView key, ByteView data) {
    Bytes out(32);
    size_t len = 0;
    if (EVP_Q_mac(nullptr, "HMAC", nullptr, "SHA256", nullptr, key.data(), key.size(), data.data(), data.size(),
                  out.data(), out.size(), &len) == nullptr) {
        fail("hmac");
    }
    out.resize(len);
    return out;
}

bool bytes_equal(ByteView a, ByteView b) {
    return a.size() == b.size() && CRYPTO_memcmp(a.data(), b.data(), a.size()) == 0;
}

Bytes sign(const KeyPair& signer, ByteView message) {
    if (signer.kind() != KeyKind::signing) throw CryptoError("sign requires a signing key");
    MdCtx ctx(EVP_MD_CTX_new());
    if (!ctx || EVP_DigestSignInit(ctx.get(), nullptr, nullptr, nullptr, signer.handle()) != 1) {
        fail("EVP_DigestSignInit");
    }
    Bytes sig(kSignatureBytes);
    size_t len = sig.size();
    if (EVP_DigestSign(ctx.get(), sig.data(), &len, message.data(), message.size()) != 1) fail("EVP_DigestSign");
    sig.resize(len);
    return sig;
}

bool verify_signature(const PublicKey& signer, ByteView message, ByteView signature) {
    if (signer.kind() != KeyKind::signing || signature.size() != kSignatureBytes) return false;
    MdCtx ctx(EVP_MD_CTX_new());
    if (!ctx || EVP_DigestVerifyInit(ctx.get(), nullptr, nullptr, nullptr, signer.handle()) != 1) {
        fail("EVP_DigestVerifyInit");
    }
    int rc = EVP_DigestVerify(ctx.get(), signature.data(), signature.size(), message.data(), message.size());
    ERR_clear_error();
    return rc == 1;
}

Bytes wrap_secret(const PublicKey& recipient, ByteView secret) {
    if (recipient.kind() != KeyKind::encryption) throw CryptoError("wrap requires an encryption key");
    auto ctx = rsa_oaep_ctx(recipient.handle(), true);
    size_t len = 0;
    if (EVP_PKEY_encrypt(ctx.get(), nullptr, &len, secret.data(), secret.size()) <= 0) fail("EVP_PKEY_encrypt");
    Bytes out(len);
    if (EVP_PKEY_encrypt(ctx.get(), out.data(), &len, secret.data(), secret.size()) <= 0) fail("EVP_PKEY_encrypt");
    out.resize(len);
    return out;
}

Bytes unwrap_secret(const KeyPair& recipient, ByteView wrapped) {
    if (recipient.kind() != KeyKind::encryption) throw CryptoError("unwrap requires an encryption key");
    auto ctx = rsa_oaep_ctx(recipient.handle(), false);
    size_t len = 0;
    if (EVP_PKEY_decrypt(ctx.get(), nullptr, &len, wrapped.data(), wrapped.size()) <= 0) fail("unwrap");
    Bytes out(len);
    if (EVP_PKEY_decrypt(ctx.get(), out.data(), &len, wrapped.data(), wrapped.size()) <= 0) fail("unwrap");
    out.resize(len);
    return out;
}

Bytes aead_encrypt(ByteView key, ByteView nonce, ByteView aad, ByteView plaintext) {
    check_aead_args(key, nonce);
    CipherCtx ctx(EVP_CIPHER_CTX_new());
    if (!ctx || EVP_EncryptInit_ex(ctx.get(), EVP_aes_256_gcm(), nullptr, key.data(), nonce.data()) != 1) {
        fail("EVP_EncryptInit_ex");
    }
    int len = 0;
    if (!aad.empty() && EVP_EncryptUpdate(ctx.get(), nullptr, &len, aad.data(), static_cast<int>(aad.size())) != 1) {
        fail("aad");
    }
    Bytes out(plaintext.size() + kTagBytes);
    int written = 0;
    if (!plaintext.empty()) {
        if (EVP_EncryptUpdate(ctx.get(), out.data(), &len, plaintext.data(), static_cast<int>(plaintext.size())) != 1) {
            fail("EVP_EncryptUpdate");
        }
        written = len;
    }
    if (EVP_EncryptFinal_ex(ctx.get(), out.data() + written, &len) != 1) fail("EVP_EncryptFinal_ex");
    written += len;
    if (EVP_CIPHER_CTX_ctrl(ctx.get(), EVP_CTRL_GCM_GET_TAG, kTagBytes, out.data() + written) != 1) fail("tag");
    out.resize(static_cast<std::size_t>(written) + kTagBytes);
    return out;
}

Bytes aead_decrypt(ByteView key, ByteView nonce, ByteView aad, ByteView sealed) {
    check_aead_args(key, nonce);
    if (sealed.size() < kTagBytes) throw CryptoError("ciphertext shorter than tag");
    auto body = sealed.first(sealed.size() - kTagBytes);
    Bytes tag(sealed.end() - kTagBytes, sealed.end());
    CipherCtx ctx(EVP_CIPHER_CTX_new());
    if (!ctx || EVP_DecryptInit_ex(ctx.get(), EVP_aes_256_gcm(), nullptr, key.data(), nonce.data()) != 1) {
        fail("EVP_DecryptInit_ex");
    }
    int len = 0;
    if (!aad.empty() && EVP_DecryptUpdate(ctx.get(), nullptr, &len, aad.data(), static_cast<int>(aad.size())) != 1) {
        fail("aad");
    }
    Bytes out(body.size());
    int written = 0;
    if (!body.empty()) {
        if (EVP_DecryptUpdate(ctx.get(), out.data(), &len, body.data(), static_cast<int>(body.size())) != 1) {
            fail("EVP_DecryptUpdate");
        }
        written = len;
    }
    if (EVP_CIPHER_CTX_ctrl(ctx.get(), EVP_CTRL_GCM_SET_TAG, kTagBytes, tag.data()) != 1) fail("tag");
    if (EVP_DecryptFinal_ex(ctx.get(), out.data() + written, &len) != 1) {
        ERR_clear_error();
        throw CryptoError("authentication tag mismatch");
    }
    out.resize(static_cast<std::size_t>(written + len));
    return out;
}

}  // namespace dflshield
