#include "dflshield/controller/controller.hpp"

#include <algorithm>
#include <set>
#include <stdexcept>

#include "dflshield/crypto/token.hpp"
#include "dflshield/mtd/mtd.hpp"

namespace dflshield {

namespace {

std::string_view as_text(ByteView b) { return {reinterpret_cast<const char*>(b.data()), b.size()}; }

constexpr std::size_t kAuthNonceBytes = 16;

}  // namespace

void Registry::enrol(NodeId node, Role role, Bytes credential, PeerAddress address) {
    std::lock_guard lock(mu_);
    if (records_.count(node)) throw std::invalid_argument("node " + std::to_string(node) + " enrolled twice");
    RegistryRecord rec;
    rec.node = node;
    rec.role = role;
    rec.credential = std::move(credential);
    rec.address = address;
    records_.emplace(node, std::move(rec));
}

std::optional<RegistryRecord> Registry::find(NodeId node) const {
    std::lock_guard lock(mu_);
    auto it = records_.find(node);
    if (it == records_.end()) return std::nullopt;
    return it->second;
}

std::vector<RegistryRecord> Registry::records() const {
    std::lock_guard lock(mu_);
    std::vector<RegistryRecord> out;
    for (const auto& [_, r] : records_) out.push_back(r);
    return out;
}

std::vector<NodeId> Registry::authenticated_nodes() const {
    std::lock_guard lock(mu_);
    std::vector<NodeId> out;
    for (const auto& [id, r] : records_) {
        if (r.authenticated) out.push_back(id);
    }
    return out;
}

std::size_t Registry::size() const {
    std::lock_guard lock(mu_);
    return records_.size();
}

void Registry::mark_authenticated(NodeId node, std::int64_t token_expires_ms) {
    std::lock_guard lock(mu_);
    auto& r = records_.at(node);
    r.authenticated = true;
    r.token_expires_ms = token_expires_ms;
    ++r.tokens_issued;
}

bool Registry::set_certificate(NodeId node, const Certificate& cert) {
    std::lock_guard lock(mu_);
    auto& r = records_.at(node);
    if (r.certificate && r.certificate->key_epoch > cert.key_epoch) return false;
    r.certificate = cert;
    return true;
}

bool Registry::set_address(NodeId node, PeerAddress addr, std::uint32_t epoch) {
    std::lock_guard lock(mu_);
    auto it = records_.find(node);
    if (it == records_.end() || epoch <= it->second.address_epoch) return false;
    it->second.address = addr;
    it->second.address_epoch = epoch;
    return true;
}

KeyDistribution distribute_keys(const Registry& registry, const PublicKey& controller_key, std::uint32_t key_epoch) {
    KeyDistribution out;
    std::vector<Certificate> certs;
    std::vector<NodeId> members;
    for (const auto& r : registry.records()) {
        if (!r.authenticated) continue;
        if (!r.certificate) {
            out.quarantined.push_back(r.node);
            continue;
        }
        certs.push_back(*r.certificate);
        members.push_back(r.node);
    }
    for (auto owner : members) {
        KeyBundle b;
        b.owner = owner;
        b.key_epoch = key_epoch;
        b.controller_key = controller_key;
        for (const auto& c : certs) {
            if (c.node != owner) b.peers.push_back(c);
        }
        out.bundles.emplace(owner, std::move(b));
    }
    return out;
}

Controller::Controller(ControllerConfig cfg, Fabric& fabric, Clock& clock)
    : cfg_(std::move(cfg)), fabric_(fabric), clock_(clock), signing_(KeyPair::generate(KeyKind::signing, clock.now())) {
    if (cfg_.token_ttl_ms <= 0) throw std::invalid_argument("token ttl must be positive");
    if (uses_encryption(cfg_.security)) {
        encryption_.emplace(KeyPair::generate(KeyKind::encryption, clock_.now(), cfg_.rsa_bits));
        opener_ = std::make_unique<EnvelopeOpener>(*encryption_, directory_);
    }
    endpoint_ = fabric_.bind(kControllerId, cfg_.address, clock_);
}

Controller::~Controller() {
    if (endpoint_) endpoint_->close();
}

std::optional<PublicKey> Controller::encryption_public_key() const {
    if (!encryption_) return std::nullopt;
    return encryption_->public_key();
}

void Controller::send(const PeerAddress& to, Frame f) {
    try {
        endpoint_->send(to, f);
    } catch (const RoutingError&) {
        ++rejected_;
    }
}

void Controller::serve_until(Micros deadline, const std::function<bool()>& done) {
    while (!(done && done())) {
        auto rf = endpoint_->recv_until(deadline);
        if (!rf) return;
        dispatch(*rf);
    }
}

void Controller::dispatch(const ReceivedFrame& rf) {
    switch (rf.frame.kind) {
        case FrameKind::auth_request: on_auth_request(rf); return;
        case FrameKind::metrics_report: on_metrics(rf); return;
        case FrameKind::rendezvous_notice: on_notice(rf); return;
        case FrameKind::control:
            try {
                if (control_type(rf.frame.body) == ControlType::key_update) {
                    on_key_update(decode_key_update(rf.frame.body));
                    return;
                }
            } catch (const std::exception&) {
            }
            ++rejected_;
            return;
        case FrameKind::model_exchange:
        case FrameKind::auth_response: ++rejected_; return;
    }
}

bool Controller::check_proof(const AuthRequest& req, const RegistryRecord& rec, std::string& reason) const {
    if (req.role != rec.role) {
        reason = "role mismatch";
        return false;
    }
    if (req.nonce.size() != kAuthNonceBytes) {
        reason = "bad nonce";
        return false;
    }
    if (!bytes_equal(req.proof, req.compute_proof(rec.credential))) {
        reason = "bad credential";
        return false;
    }
    return true;
}

void Controller::on_auth_request(const ReceivedFrame& rf) {
    AuthRequest req;
    try {
        req = AuthRequest::from_json(as_text(rf.frame.body));
    } catch (const std::exception&) {
        ++rejected_;
        return;
    }
    AuthResponse resp;
    resp.node = req.node;
    auto rec = registry_.find(req.node);
    std::string reason;
    bool ok = rec.has_value();
    if (!ok) reason = "unknown node";
    if (ok) ok = check_proof(req, *rec, reason);
    if (ok && !seen_nonces_.insert({req.node, req.nonce}).second) {
        ok = false;
        reason = "replayed request";
    }
    if (ok && uses_encryption(cfg_.security)) {
        if (req.encryption_key.empty() || req.signing_key.empty()) {
            ok = false;
            reason = "missing public key";
        } else if (rec->certificate && (rec->certificate->encryption_key != req.encryption_key ||
                                        rec->certificate->signing_key != req.signing_key)) {
            ok = false;
            reason = "key change outside renewal";
        } else {
            try {
                req.encryption_key.handle();
                req.signing_key.handle();
            } catch (const CryptoError&) {
                ok = false;
                reason = "unusable public key";
            }
        }
    }
    if (ok) {
        auto token = issue_token(req.node, rec->role, cfg_.token_ttl_ms, signing_, now_ms());
        resp.accepted = true;
        resp.token = token.compact;
        registry_.mark_authenticated(req.node, token.expires_at_ms);
        if (uses_encryption(cfg_.security)) {
            if (!rec->certificate) {
                auto cert = issue_certificate(signing_, req.node, rec->role, key_epoch_, req.encryption_key,
                                              req.signing_key);
                registry_.set_certificate(req.node, cert);
                directory_.update(cert);
                resp.certificate = cert;
            } else {
                resp.certificate = rec->certificate;
            }
            resp.controller_encryption_key = encryption_->public_key();
        }
    } else {
        resp.reason = reason;
    }
    auth_log_.push_back({req.node, ok, reason});
    send(rf.from, Frame{FrameKind::auth_response, rf.frame.correlation_id, to_bytes(resp.to_json())});
}

std::optional<std::pair<NodeId, Bytes>> Controller::unseal(const Bytes& body) {
    if (!uses_encryption(cfg_.security)) return std::pair<NodeId, Bytes>{0, body};
    try {
        auto env = SecureEnvelope::parse(body);
        auto payload = opener_->open(env);
        return std::pair<NodeId, Bytes>{env.sender_id, std::move(payload)};
    } catch (const std::exception&) {
        ++rejected_;
        return std::nullopt;
    }
}

void Controller::on_metrics(const ReceivedFrame& rf) {
    auto opened = unseal(rf.frame.body);
    if (!opened) return;
    try {
        auto m = MetricsReport::from_json(as_text(opened->second));
        if (uses_encryption(cfg_.security) && m.node != opened->first) {
            ++rejected_;
            return;
        }
        auto rec = registry_.find(m.node);
        if (!rec || !rec->authenticated) {
            ++rejected_;
            return;
        }
        reports_.emplace(std::pair(m.round, m.node), m);
    } catch (const DecodeError&) {
        ++rejected_;
    }
}

void Controller::on_notice(const ReceivedFrame& rf) {
    auto opened = unseal(rf.frame.body);
    if (!opened) return;
    try {
        auto n = RendezvousNotice::parse(opened->second);
        if (uses_encryption(cfg_.security) && n.node != opened->first) {
            ++rejected_;
            return;
        }
        registry_.set_address(n.node, n.new_address, n.effective_epoch);
    } catch (const DecodeError&) {
        ++rejected_;
    }
}

void Controller::on_key_update(const AuthRequest& req) {
    auto rec = registry_.find(req.node);
    std::string reason;
    if (!uses_encryption(cfg_.security) || !rec || !rec->authenticated || !check_proof(req, *rec, reason) ||
        req.encryption_key.empty() || req.signing_key.empty()) {
        ++rejected_;
        return;
    }
    if (rec->certificate && rec->certificate->key_epoch >= key_epoch_) return;
    auto cert = issue_certificate(signing_, req.node, rec->role, key_epoch_, req.encryption_key, req.signing_key);
    registry_.set_certificate(req.node, cert);
    ++renewals_received_;
}

DirectoryMessage Controller::make_directory() const {
    DirectoryMessage dir;
    dir.key_epoch = key_epoch_;
    for (const auto& r : registry_.records()) {
        if (!r.authenticated) continue;
        if (uses_encryption(cfg_.security) && !r.certificate) continue;
        dir.entries.push_back(DirectoryEntry{r.node, r.role, r.address, r.address_epoch, r.certificate});
    }
    dir.sign_with(signing_);
    return dir;
}

void Controller::broadcast_directory() {
    auto dir = make_directory();
    // the controller's own view follows the certificates it publishes
    for (const auto& c : dir.certificates()) directory_.update(c);
    const Bytes body = encode_control(dir);
    for (const auto& e : dir.entries) send(e.address, Frame{FrameKind::control, dir.key_epoch, body});
}

void Controller::push_key_renewal() {
    if (!uses_encryption(cfg_.security)) return;
    ++key_epoch_;
    renewals_received_ = 0;
    RenewKeysMessage m;
    m.key_epoch = key_epoch_;
    m.signature = sign(signing_, m.signed_bytes());
    const Bytes body = encode_control(m);
    for (const auto& r : registry_.records()) {
        if (r.authenticated) send(r.address, Frame{FrameKind::control, key_epoch_, body});
    }
}

}  // namespace dflshield
