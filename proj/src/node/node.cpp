#include "dflshield/node/node.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "dflshield/crypto/token.hpp"
#include "dflshield/model/fedavg.hpp"

namespace dflshield {

namespace {

constexpr double kRefreshFraction = 0.8;
constexpr int kMaxRotationAttempts = 16;

std::string_view as_text(ByteView b) { return {reinterpret_cast<const char*>(b.data()), b.size()}; }

}  // namespace

void NodeConfig::validate() const {
    train.validate();
    if (receive_timeout <= 0) throw std::invalid_argument("receive timeout must be positive");
    if (session_renewal_rounds < 1) throw std::invalid_argument("session renewal period must be >= 1 round");
    if (rotation_rounds < 1) throw std::invalid_argument("rotation period must be >= 1 round");
    if (rsa_bits < 1024) throw std::invalid_argument("rsa_bits must be >= 1024");
    if (!(compute_ns_per_mac >= 0.0)) throw std::invalid_argument("compute cost must be non-negative");
}

double compute_activity_ratio(std::span<const RoundRecord> records) {
    Micros total = 0;
    Micros active = 0;
    for (const auto& r : records) {
        total += r.wall_time();
        for (const auto& [from, to] : r.active_intervals) active += to - from;
    }
    if (total <= 0) throw std::invalid_argument("activity ratio needs a positive observation window");
    return std::clamp(static_cast<double>(active) / static_cast<double>(total), 0.0, 1.0);
}

Node::Node(NodeConfig cfg, NodeLinks links, Fabric& fabric, Clock& clock, Dataset train, Dataset test,
           ModelParams initial)
    : cfg_(std::move(cfg)),
      links_(std::move(links)),
      fabric_(fabric),
      clock_(clock),
      train_(std::move(train)),
      test_(std::move(test)),
      params_(std::move(initial)),
      book_(cfg_.node_id, links_.listen),
      train_rng_(derive_seed(cfg_.seed, seed_stream::train_order_base + cfg_.node_id)),
      mtd_rng_(derive_seed(cfg_.seed, seed_stream::mtd_base + cfg_.node_id)) {
    cfg_.validate();
    if (uses_mtd(cfg_.security)) links_.address_pool.validate();
    if (uses_encryption(cfg_.security)) {
        enc_keys_.push_back(KeyPair::generate(KeyKind::encryption, clock_.now(), cfg_.rsa_bits));
        sig_keys_.push_back(KeyPair::generate(KeyKind::signing, clock_.now()));
        opener_ = std::make_unique<EnvelopeOpener>(enc_keys_.back(), directory_);
    }
    endpoint_ = fabric_.bind(cfg_.node_id, links_.listen, clock_);
}

Node::~Node() {
    if (endpoint_) endpoint_->close();
}

PeerAddress Node::address() const { return endpoint_->address(); }

std::optional<PublicKey> Node::encryption_public_key() const {
    if (enc_keys_.empty()) return std::nullopt;
    return enc_keys_.back().public_key();
}

Micros Node::compute_cost(double macs) const {
    return static_cast<Micros>(std::llround(macs * cfg_.compute_ns_per_mac / 1000.0));
}

void Node::mark_active(Micros from, Micros to) {
    if (to <= from) return;
    auto& iv = current_.active_intervals;
    if (!iv.empty() && from <= iv.back().second) {
        iv.back().second = std::max(iv.back().second, to);
    } else {
        iv.emplace_back(from, to);
    }
}

void Node::send_frame(const PeerAddress& to, Frame f) {
    f.body.shrink_to_fit();
    const auto size = f.wire_size();
    try {
        endpoint_->send(to, f);
        bytes_sent_ += size;
    } catch (const RoutingError&) {
        ++current_.routing_errors;
        throw;
    }
}

Bytes Node::seal_to(const PublicKey& recipient, ByteView payload) {
    return sealer_->seal(payload, recipient).serialize();
}

std::optional<std::pair<NodeId, Bytes>> Node::unseal(const Bytes& body) {
    if (!uses_encryption(cfg_.security)) return std::pair<NodeId, Bytes>{0, body};
    if (!opener_) return std::nullopt;
    try {
        auto env = SecureEnvelope::parse(body);
        auto payload = opener_->open(env);
        return std::pair<NodeId, Bytes>{env.sender_id, std::move(payload)};
    } catch (const EnvelopeError& e) {
        ++rejections_.envelope[e.failure()];
    } catch (const CryptoError&) {
        ++rejections_.envelope[EnvelopeFailure::malformed];
    } catch (const DecodeError&) {
        ++rejections_.envelope[EnvelopeFailure::malformed];
    }
    ++current_.rejected_frames;
    return std::nullopt;
}

AuthRequest Node::make_auth_request() {
    AuthRequest req;
    req.node = cfg_.node_id;
    req.role = cfg_.role;
    req.nonce = random_bytes(16);
    if (!enc_keys_.empty()) {
        req.encryption_key = enc_keys_.back().public_key();
        req.signing_key = sig_keys_.back().public_key();
    }
    req.attach_proof(cfg_.credential);
    return req;
}

void Node::request_auth() {
    auto req = make_auth_request();
    auto json = req.to_json();
    ++auth_requests_;
    send_frame(links_.controller,
               Frame{FrameKind::auth_request, static_cast<std::uint32_t>(auth_requests_), to_bytes(json)});
}

bool Node::await_auth(Micros deadline) {
    const std::int64_t before = token_received_ms_;
    const bool had_token = authenticated();
    while (!auth_rejected_) {
        if (had_token ? token_received_ms_ != before : authenticated()) return true;
        auto rf = endpoint_->recv_until(deadline);
        if (!rf) break;
        bytes_received_ += rf->frame.wire_size();
        dispatch(*rf);
    }
    return authenticated() && !auth_rejected_ && (!had_token || token_received_ms_ != before);
}

bool Node::token_needs_refresh() const {
    if (!authenticated()) return false;
    const double life = static_cast<double>(token_expires_ms_ - token_received_ms_);
    return static_cast<double>(now_ms()) >= static_cast<double>(token_received_ms_) + kRefreshFraction * life;
}

void Node::pump_until(Micros deadline) {
    while (auto rf = endpoint_->recv_until(deadline)) {
        bytes_received_ += rf->frame.wire_size();
        dispatch(*rf);
    }
}

void Node::dispatch(const ReceivedFrame& rf) {
    switch (rf.frame.kind) {
        case FrameKind::model_exchange: on_model(rf); break;
        case FrameKind::rendezvous_notice: on_notice(rf); break;
        case FrameKind::auth_response: on_auth_response(rf); break;
        case FrameKind::control: on_control(rf); break;
        case FrameKind::auth_request:
        case FrameKind::metrics_report: ++rejections_.bad_control; break;
    }
}

void Node::on_auth_response(const ReceivedFrame& rf) {
    AuthResponse resp;
    try {
        resp = AuthResponse::from_json(as_text(rf.frame.body));
    } catch (const std::exception&) {
        ++rejections_.malformed;
        return;
    }
    if (resp.node != cfg_.node_id) {
        ++rejections_.not_member;
        return;
    }
    if (!resp.accepted) {
        auth_rejected_ = true;
        return;
    }
    auto check = verify_token(resp.token, links_.controller_signing_key, now_ms());
    if (!check || check.subject != cfg_.node_id) {
        ++rejections_.bad_token;
        return;
    }
    token_ = resp.token;
    token_received_ms_ = now_ms();
    token_expires_ms_ = check.expires_at_ms;
    if (uses_encryption(cfg_.security)) {
        if (resp.certificate && verify_certificate(*resp.certificate, links_.controller_signing_key) &&
            resp.certificate->node == cfg_.node_id) {
            directory_.update(*resp.certificate);
            cert_epoch_ = std::max(cert_epoch_, resp.certificate->key_epoch);
        }
        if (!resp.controller_encryption_key.empty()) controller_enc_ = resp.controller_encryption_key;
        if (!sealer_) {
            sealer_ = std::make_unique<EnvelopeSealer>(cfg_.node_id, sig_keys_.back(), SessionKey::generate(0));
        }
    }
}

void Node::on_control(const ReceivedFrame& rf) {
    try {
        switch (control_type(rf.frame.body)) {
            case ControlType::directory: {
                auto dir = decode_directory(rf.frame.body);
                if (!dir.verify(links_.controller_signing_key)) {
                    ++rejections_.bad_control;
                    return;
                }
                apply_directory(dir);
                return;
            }
            case ControlType::renew_keys: {
                auto m = decode_renew(rf.frame.body);
                if (!verify_signature(links_.controller_signing_key, m.signed_bytes(), m.signature)) {
                    ++rejections_.bad_control;
                    return;
                }
                renew_keys(m);
                return;
            }
            case ControlType::key_update: ++rejections_.bad_control; return;
        }
    } catch (const std::exception&) {
        ++rejections_.malformed;
    }
}

void Node::apply_directory(const DirectoryMessage& dir) {
    if (directory_epoch_ && dir.key_epoch < *directory_epoch_) return;
    for (const auto& e : dir.entries) {
        if (e.certificate) {
            if (!verify_certificate(*e.certificate, links_.controller_signing_key) || e.certificate->node != e.node) {
                ++rejections_.bad_control;
                continue;
            }
            directory_.update(*e.certificate);
        }
        members_[e.node] = e.role;
        if (e.node == cfg_.node_id) continue;
        auto held = book_.entry(e.node);
        if (!held || e.address_epoch >= held->epoch) book_.set(e.node, e.address, e.address_epoch);
    }
    directory_epoch_ = dir.key_epoch;
    if (auto own = directory_.find(cfg_.node_id)) {
        cert_epoch_ = own->key_epoch;
        // start signing with the renewed key once peers can verify it
        if (sealer_ && !sig_keys_.empty() && own->signing_key == sig_keys_.back().public_key()) {
            sealer_->set_signing_key(sig_keys_.back());
            pending_key_epoch_.reset();
        }
    }
}

void Node::renew_keys(const RenewKeysMessage& m) {
    if (!uses_encryption(cfg_.security) || m.key_epoch <= cert_epoch_) return;
    if (pending_key_epoch_ && *pending_key_epoch_ >= m.key_epoch) return;
    enc_keys_.push_back(KeyPair::generate(KeyKind::encryption, clock_.now(), cfg_.rsa_bits));
    sig_keys_.push_back(KeyPair::generate(KeyKind::signing, clock_.now()));
    opener_->rotate_own_key(enc_keys_.back());
    while (enc_keys_.size() > 2) enc_keys_.pop_front();
    // the signing key in use must survive until the new certificate lands
    while (sig_keys_.size() > 3) sig_keys_.pop_front();
    pending_key_epoch_ = m.key_epoch;
    auto update = make_auth_request();
    send_frame(links_.controller, Frame{FrameKind::control, m.key_epoch, encode_control(update)});
}

std::vector<NodeId> Node::eligible_receivers() const {
    std::vector<NodeId> out;
    auto consumer = [&](NodeId j) {
        auto it = members_.find(j);
        return j != cfg_.node_id && it != members_.end() && consumes_models(it->second);
    };
    if (uses_mtd(cfg_.security)) {
        for (const auto& [j, _] : members_) {
            if (consumer(j)) out.push_back(j);
        }
    } else {
        for (auto j : links_.topology_neighbors) {
            if (consumer(j)) out.push_back(j);
        }
        std::sort(out.begin(), out.end());
        out.erase(std::unique(out.begin(), out.end()), out.end());
    }
    return out;
}

void Node::begin_round(std::uint32_t round, Micros start) {
    clock_.wait_until(start);
    current_ = RoundRecord{};
    current_.round = round;
    current_.started_at = clock_.now();
    inbound_.clear();
    round_bytes_sent_mark_ = bytes_sent_;
    round_bytes_received_mark_ = bytes_received_;
    phase_ = Phase::idle;
}

void Node::train_and_send() {
    const Micros t0 = clock_.now();
    const double pc = static_cast<double>(params_.architecture().parameter_count());
    if (cfg_.role == Role::trainer || cfg_.role == Role::aggregator) {
        params_ = train_local(params_, train_, cfg_.train, train_rng_);
        // forward + backward, roughly three passes over the weights per example
        clock_.spend(compute_cost(3.0 * pc * static_cast<double>(train_.size()) * cfg_.train.local_epochs));
    }

    std::vector<NodeId> targets;
    if (produces_models(cfg_.role) && authenticated()) {
        auto eligible = eligible_receivers();
        if (uses_mtd(cfg_.security) && !eligible.empty()) {
            NeighborPool pool{eligible, cfg_.sample_size == 0 ? NeighborPool::default_sample_size(eligible.size())
                                                              : std::min(cfg_.sample_size, eligible.size())};
            targets = mtd_select_neighbors(pool, mtd_rng_);
        } else {
            targets = std::move(eligible);
        }
    }
    current_.neighbors_used = targets;

    if (!targets.empty()) {
        ModelMessage msg{cfg_.node_id, current_.round, token_, params_};
        const Bytes plain = msg.encode();
        for (auto j : targets) {
            auto addr = book_.lookup(j);
            if (!addr) continue;
            Bytes body;
            if (uses_encryption(cfg_.security)) {
                auto cert = directory_.find(j);
                if (!cert || !sealer_) continue;
                body = seal_to(cert->encryption_key, plain);
            } else {
                body = plain;
            }
            try {
                send_frame(*addr, Frame{FrameKind::model_exchange, current_.round, std::move(body)});
                ++current_.params_sent;
            } catch (const RoutingError&) {
            }
        }
    }
    send_done_at_ = clock_.now();
    mark_active(t0, send_done_at_);
    phase_ = Phase::receiving;
}

void Node::on_model(const ReceivedFrame& rf) {
    auto opened = unseal(rf.frame.body);
    if (!opened) return;
    ModelMessage msg = [&]() -> ModelMessage {
        try {
            return ModelMessage::decode(opened->second);
        } catch (const DecodeError&) {
            return ModelMessage{0, 0, {}, ModelParams(params_.architecture())};
        }
    }();
    auto reject = [&](std::size_t& counter) {
        ++counter;
        ++current_.rejected_frames;
    };
    if (msg.token.empty()) return reject(rejections_.malformed);
    if (uses_encryption(cfg_.security) && msg.sender != opened->first) return reject(rejections_.not_member);
    auto check = verify_token(msg.token, links_.controller_signing_key, now_ms());
    if (!check || check.subject != msg.sender || !produces_models(check.role)) return reject(rejections_.bad_token);
    if (msg.sender == cfg_.node_id || !members_.count(msg.sender)) return reject(rejections_.not_member);
    if (!msg.params.same_shape(params_) || !msg.params.all_finite()) return reject(rejections_.malformed);
    if (phase_ != Phase::receiving || msg.round != current_.round) {
        ++current_.late_frames;
        return;
    }
    if (!consumes_models(cfg_.role)) return;
    if (!inbound_.emplace(msg.sender, std::move(msg.params)).second) return reject(rejections_.duplicate);
}

void Node::on_notice(const ReceivedFrame& rf) {
    auto opened = unseal(rf.frame.body);
    if (!opened) return;
    try {
        auto notice = RendezvousNotice::parse(opened->second);
        if (uses_encryption(cfg_.security) && notice.node != opened->first) {
            ++rejections_.not_member;
            return;
        }
        book_.apply(notice);
    } catch (const DecodeError&) {
        ++rejections_.malformed;
    }
}

void Node::receive_and_aggregate() {
    const Micros deadline = send_done_at_ + cfg_.receive_timeout;
    pump_until(deadline);
    phase_ = Phase::idle;

    const Micros t0 = clock_.now();
    const double pc = static_cast<double>(params_.architecture().parameter_count());
    current_.params_received = inbound_.size();
    if (consumes_models(cfg_.role)) {
        std::vector<ModelParams> received;
        received.reserve(inbound_.size());
        for (auto& [_, p] : inbound_) received.push_back(std::move(p));
        inbound_.clear();
        current_.starved = received.empty();
        params_ = aggregate_fedavg(params_, received);
        clock_.spend(compute_cost(pc * static_cast<double>(received.size() + 1)));
    }
    if (cfg_.role != Role::idle && !test_.empty()) {
        current_.eval = evaluate(params_, test_);
        current_.evaluated = true;
        clock_.spend(compute_cost(pc * static_cast<double>(test_.size())));
    }
    mark_active(t0, clock_.now());
}

void Node::report_metrics() {
    if (!authenticated()) return;
    MetricsReport m;
    m.node = cfg_.node_id;
    m.round = current_.round;
    m.f1 = current_.eval.f1_macro;
    m.loss = current_.eval.loss;
    m.bytes_sent = bytes_sent_ - round_bytes_sent_mark_;
    m.bytes_recv = bytes_received_ - round_bytes_received_mark_;
    Micros active = 0;
    for (const auto& [a, b] : current_.active_intervals) active += b - a;
    m.active_ms = us_to_ms(active);
    auto json = to_bytes(m.to_json());
    Bytes body = json;
    if (uses_encryption(cfg_.security)) {
        if (controller_enc_.empty() || !sealer_) return;
        body = seal_to(controller_enc_, json);
    }
    try {
        send_frame(links_.controller, Frame{FrameKind::metrics_report, current_.round, std::move(body)});
    } catch (const RoutingError&) {
    }
}

void Node::rotate_if_due() {
    if (!uses_mtd(cfg_.security) || !authenticated()) return;
    if ((current_.round + 1) % static_cast<std::uint32_t>(cfg_.rotation_rounds) != 0) return;

    std::set<PeerAddress> exclude{links_.controller};
    for (auto j : book_.peers()) {
        if (auto a = book_.lookup(j)) exclude.insert(*a);
    }
    std::optional<Rotation> rot;
    for (int attempt = 0; attempt < kMaxRotationAttempts; ++attempt) {
        rot = mtd_rotate_address(book_, links_.address_pool, mtd_rng_, now_ms(), exclude);
        if (!rot) return;
        if (!fabric_.is_bound(rot->next, clock_.now())) break;
        exclude.insert(rot->next);
        rot.reset();
    }
    if (!rot) return;

    // peers learn the new address before the old one stops answering
    const Bytes notice = rot->notice.serialize();
    auto notify = [&](const PeerAddress& to, const PublicKey* key) {
        Bytes body = notice;
        if (uses_encryption(cfg_.security)) {
            if (!key || key->empty() || !sealer_) return;
            body = seal_to(*key, notice);
        }
        try {
            send_frame(to, Frame{FrameKind::rendezvous_notice, rot->notice.effective_epoch, std::move(body)});
        } catch (const RoutingError&) {
        }
    };
    for (auto j : book_.peers()) {
        auto addr = book_.lookup(j);
        auto cert = directory_.find(j);
        if (addr && cert) notify(*addr, &cert->encryption_key);
    }
    notify(links_.controller, &controller_enc_);
    try {
        endpoint_->rebind(rot->next);
    } catch (const AddressInUse&) {
        return;
    }
    book_.set_self_binding(rot->next, rot->notice.effective_epoch);
    current_.rotated = true;
}

RoundRecord Node::finish_round() {
    if (sealer_ && renewal_due(static_cast<int>(current_.round), cfg_.session_renewal_rounds)) sealer_->renew();
    current_.ended_at = clock_.now();
    current_.bytes_sent = bytes_sent_ - round_bytes_sent_mark_;
    current_.bytes_received = bytes_received_ - round_bytes_received_mark_;
    history_.push_back(current_);
    return current_;
}

RoundRecord Node::run_round(std::uint32_t round) {
    begin_round(round, clock_.now());
    train_and_send();
    receive_and_aggregate();
    report_metrics();
    rotate_if_due();
    return finish_round();
}

bool Node::can_open(ByteView envelope_wire) const {
    if (enc_keys_.empty()) return false;
    try {
        EnvelopeOpener scratch(enc_keys_.back(), directory_);
        scratch.open(envelope_wire);
        return true;
    } catch (const std::exception&) {
        return false;
    }
}

}  // namespace dflshield
