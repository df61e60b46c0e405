#include "dflshield/net/tcp_fabric.hpp"

#include "dflshield/net/sim_fabric.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <chrono>
#include <condition_variable>
#include <cstring>
#include <list>
#include <thread>

namespace dflshield {

namespace {

constexpr std::uint32_t kPreambleMagic = 0x44465348;  // "DFSH"
constexpr std::size_t kPreambleBytes = 22;

Micros steady_us() {
    return std::chrono::duration_cast<std::chrono::microseconds>(
               std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

sockaddr_in to_sockaddr(const PeerAddress& a) {
    sockaddr_in sa{};
    sa.sin_family = AF_INET;
    sa.sin_port = htons(a.port);
    sa.sin_addr.s_addr = htonl(a.ip);
    return sa;
}

class Fd {
public:
    Fd() = default;
    explicit Fd(int fd) : fd_(fd) {}
    Fd(Fd&& o) noexcept : fd_(std::exchange(o.fd_, -1)) {}
    Fd& operator=(Fd&& o) noexcept {
        if (this != &o) {
            reset();
            fd_ = std::exchange(o.fd_, -1);
        }
        return *this;
    }
    ~Fd() { reset(); }

    int get() const { return fd_; }
    explicit operator bool() const { return fd_ >= 0; }
    void reset() {
        if (fd_ >= 0) ::close(fd_);
        fd_ = -1;
    }
    void shutdown_both() const {
        if (fd_ >= 0) ::shutdown(fd_, SHUT_RDWR);
    }

private:
    int fd_ = -1;
};

bool write_all(int fd, ByteView data) {
    std::size_t off = 0;
    while (off < data.size()) {
        ssize_t n = ::send(fd, data.data() + off, data.size() - off, MSG_NOSIGNAL);
        if (n < 0) {
            if (errno == EINTR) continue;
            return false;
        }
        off += static_cast<std::size_t>(n);
    }
    return true;
}

bool read_all(int fd, std::uint8_t* out, std::size_t n) {
    std::size_t off = 0;
    while (off < n) {
        ssize_t r = ::recv(fd, out + off, n - off, 0);
        if (r == 0) return false;
        if (r < 0) {
            if (errno == EINTR) continue;
            return false;
        }
        off += static_cast<std::size_t>(r);
    }
    return true;
}

Fd open_listener(const PeerAddress& addr) {
    Fd fd(::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0));
    if (!fd) throw std::runtime_error(std::string("socket: ") + std::strerror(errno));
    int one = 1;
    ::setsockopt(fd.get(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    auto sa = to_sockaddr(addr);
    if (::bind(fd.get(), reinterpret_cast<sockaddr*>(&sa), sizeof sa) != 0) {
        if (errno == EADDRINUSE) throw AddressInUse("address in use: " + addr.to_string());
        throw std::runtime_error("bind " + addr.to_string() + ": " + std::strerror(errno));
    }
    if (::listen(fd.get(), 64) != 0) throw std::runtime_error(std::string("listen: ") + std::strerror(errno));
    return fd;
}

}  // namespace

class TcpEndpoint final : public Endpoint {
public:
    TcpEndpoint(TcpFabric& fabric, NodeId owner, const PeerAddress& addr, Clock& clock)
        : fabric_(fabric), owner_(owner), address_(addr), clock_(clock) {
        add_listener(addr);
    }
    ~TcpEndpoint() override { close(); }

    NodeId owner() const override { return owner_; }
    PeerAddress address() const override {
        std::lock_guard lock(mu_);
        return address_;
    }
    Clock& clock() const override { return clock_; }

    SendReceipt send(const PeerAddress& to, const Frame& f) override {
        if (closed_) throw ChannelClosed("endpoint closed");
        const std::size_t bytes = f.wire_size();
        if (bytes > fabric_.cfg_.max_frame) {
            throw FrameTooLarge("frame of " + std::to_string(bytes) + " bytes exceeds max_frame");
        }
        auto dst_owner = fabric_.owner_of(to);
        if (!dst_owner) throw RoutingError(to, "no endpoint bound at " + to.to_string());

        FrameRecord rec;
        Interceptor interceptor;
        {
            std::lock_guard lock(fabric_.mu_);
            rec.seq = fabric_.seqs_[owner_]++;
            interceptor = fabric_.interceptor_;
        }
        rec.sent_at = clock_.now();
        rec.src = owner_;
        rec.dst = *dst_owner;
        rec.src_addr = address();
        rec.dst_addr = to;
        rec.kind = f.kind;
        rec.correlation_id = f.correlation_id;
        rec.bytes = bytes;
        fabric_.stats_.on_send(rec.src, rec.dst, f.kind, bytes);

        auto verdict = interceptor ? interceptor(rec, f) : InterceptVerdict::deliver();
        PeerAddress dest = to;
        bool delivered = false;
        if (verdict.action != InterceptVerdict::Action::drop) {
            if (verdict.action == InterceptVerdict::Action::redirect) dest = verdict.redirect_to;
            rec.intercepted = verdict.action == InterceptVerdict::Action::redirect;
            delivered = transmit(dest, f);
        } else {
            rec.intercepted = true;
        }
        rec.lost = !delivered;
        if (rec.lost) fabric_.stats_.on_loss(rec.src, rec.dst);

        std::vector<Tap> taps;
        {
            std::lock_guard lock(fabric_.mu_);
            fabric_.log_.push_back(rec);
            taps = fabric_.taps_;
        }
        for (const auto& tap : taps) tap(rec, f);
        return SendReceipt{delivered, 0};
    }

    std::optional<ReceivedFrame> recv_until(Micros deadline) override {
        std::unique_lock lock(inbox_mu_);
        for (;;) {
            if (closed_) throw ChannelClosed("endpoint closed");
            if (!inbox_.empty()) {
                auto f = std::move(inbox_.front());
                inbox_.pop_front();
                f.delivered_at = clock_.now();
                return f;
            }
            Micros left = deadline - clock_.now();
            if (left <= 0) return std::nullopt;
            inbox_cv_.wait_for(lock, std::chrono::microseconds(left));
        }
    }

    void rebind(const PeerAddress& next) override {
        if (next == address()) return;
        add_listener(next);
        std::lock_guard lock(mu_);
        auto expiry = steady_us() + fabric_.cfg_.rebind_grace();
        for (auto& l : listeners_) {
            if (l.addr == address_) l.expires_at = expiry;
        }
        address_ = next;
        // reconnect so peers see the new source address in the preamble
        outbound_.clear();
    }

    void close() override {
        if (closed_.exchange(true)) return;
        {
            std::lock_guard lock(mu_);
            for (auto& l : listeners_) {
                fabric_.unregister_address(l.addr);
                l.fd.shutdown_both();
            }
            for (auto& [_, c] : outbound_) c.fd.shutdown_both();
            for (auto& r : readers_) r.fd->shutdown_both();
        }
        inbox_cv_.notify_all();
        for (auto& l : listeners_) {
            if (l.thread.joinable()) l.thread.join();
        }
        std::list<Reader> readers;
        {
            std::lock_guard lock(mu_);
            readers.swap(readers_);
        }
        for (auto& r : readers) {
            if (r.thread.joinable()) r.thread.join();
        }
    }

private:
    struct Listener {
        PeerAddress addr;
        Fd fd;
        Micros expires_at = INT64_MAX;
        std::thread thread;
    };
    struct Outbound {
        Fd fd;
        std::uint64_t conn = 0;
    };
    struct Reader {
        std::shared_ptr<Fd> fd;
        std::thread thread;
    };

    void add_listener(const PeerAddress& addr) {
        auto fd = open_listener(addr);
        fabric_.register_address(addr, owner_);
        std::lock_guard lock(mu_);
        auto& l = listeners_.emplace_back();
        l.addr = addr;
        l.fd = std::move(fd);
        l.thread = std::thread([this, &l] { accept_loop(l); });
    }

    void accept_loop(Listener& l) {
        while (!closed_) {
            pollfd p{l.fd.get(), POLLIN, 0};
            int rc = ::poll(&p, 1, 20);
            if (steady_us() >= l.expires_at) break;
            if (rc <= 0) continue;
            int c = ::accept4(l.fd.get(), nullptr, nullptr, SOCK_CLOEXEC);
            if (c < 0) {
                if (closed_) break;
                continue;
            }
            int one = 1;
            ::setsockopt(c, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
            auto fd = std::make_shared<Fd>(c);
            std::lock_guard lock(mu_);
            if (closed_) break;
            auto& r = readers_.emplace_back();
            r.fd = fd;
            r.thread = std::thread([this, fd] { read_loop(*fd); });
        }
        if (!closed_) {
            // grace elapsed: stop accepting on the old address
            fabric_.unregister_address(l.addr);
            l.fd.shutdown_both();
        }
    }

    void read_loop(const Fd& fd) {
        std::uint8_t pre[kPreambleBytes];
        if (!read_all(fd.get(), pre, sizeof pre)) return;
        ByteReader pr(ByteView(pre, sizeof pre));
        if (pr.u32() != kPreambleMagic) return;
        NodeId sender = pr.u32();
        PeerAddress from;
        from.ip = pr.u32();
        from.port = pr.u16();
        std::uint64_t conn = pr.u64();

        std::uint8_t header[kFrameHeaderBytes];
        while (!closed_) {
            if (!read_all(fd.get(), header, sizeof header)) return;
            Frame f;
            std::uint32_t len = 0;
            try {
                len = Frame::parse_header(ByteView(header, sizeof header), f.kind, f.correlation_id);
            } catch (const DecodeError&) {
                return;
            }
            if (kFrameHeaderBytes + len > fabric_.cfg_.max_frame) return;
            f.body.resize(len);
            if (len > 0 && !read_all(fd.get(), f.body.data(), len)) return;

            Micros sent = fabric_.pop_send_time(conn);
            Micros latency = sent > 0 ? steady_us() - sent : 0;
            fabric_.stats_.on_deliver(sender, owner_, f.wire_size(), latency);
            {
                std::lock_guard lock(inbox_mu_);
                inbox_.push_back(ReceivedFrame{std::move(f), from, sender, clock_.now() - latency, clock_.now()});
            }
            inbox_cv_.notify_one();
        }
    }

    bool transmit(const PeerAddress& dest, const Frame& f) {
        std::lock_guard lock(mu_);
        auto it = outbound_.find(dest);
        for (int attempt = 0; attempt < 2; ++attempt) {
            if (it == outbound_.end()) {
                auto conn = connect_to(dest);
                if (!conn) {
                    if (attempt == 0 && !fabric_.owner_of(dest)) {
                        throw RoutingError(dest, "connection refused at " + dest.to_string());
                    }
                    return false;
                }
                it = outbound_.emplace(dest, std::move(*conn)).first;
            }
            auto wire = f.serialize();
            fabric_.push_send_time(it->second.conn, steady_us());
            if (write_all(it->second.fd.get(), wire)) return true;
            outbound_.erase(it);
            it = outbound_.end();
        }
        return false;
    }

    std::optional<Outbound> connect_to(const PeerAddress& dest) {
        Fd fd(::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0));
        if (!fd) return std::nullopt;
        int one = 1;
        ::setsockopt(fd.get(), IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
        auto sa = to_sockaddr(dest);
        if (::connect(fd.get(), reinterpret_cast<sockaddr*>(&sa), sizeof sa) != 0) return std::nullopt;
        Outbound out{std::move(fd), fabric_.open_connection_log()};
        ByteWriter pre(kPreambleBytes);
        pre.u32(kPreambleMagic);
        pre.u32(owner_);
        pre.u32(address_.ip);
        pre.u16(address_.port);
        pre.u64(out.conn);
        if (!write_all(out.fd.get(), pre.bytes())) return std::nullopt;
        return out;
    }

    TcpFabric& fabric_;
    NodeId owner_;
    PeerAddress address_;
    Clock& clock_;
    std::atomic<bool> closed_{false};

    mutable std::mutex mu_;
    std::list<Listener> listeners_;
    std::list<Reader> readers_;
    std::map<PeerAddress, Outbound> outbound_;

    std::mutex inbox_mu_;
    std::condition_variable inbox_cv_;
    std::deque<ReceivedFrame> inbox_;
};

TcpFabric::TcpFabric(FabricConfig cfg) : cfg_(std::move(cfg)) { cfg_.validate(); }

TcpFabric::~TcpFabric() = default;

std::unique_ptr<Endpoint> TcpFabric::bind(NodeId owner, const PeerAddress& addr, Clock& clock) {
    if (!addr.valid()) throw std::invalid_argument("invalid address " + addr.to_string());
    return std::make_unique<TcpEndpoint>(*this, owner, addr, clock);
}

bool TcpFabric::is_bound(const PeerAddress& addr, Micros) const { return owner_of(addr).has_value(); }

std::optional<NodeId> TcpFabric::owner_of(const PeerAddress& addr) const {
    std::lock_guard lock(mu_);
    auto it = live_.find(addr);
    if (it == live_.end()) return std::nullopt;
    return it->second;
}

void TcpFabric::register_address(const PeerAddress& addr, NodeId owner) {
    std::lock_guard lock(mu_);
    live_[addr] = owner;
}

void TcpFabric::unregister_address(const PeerAddress& addr) {
    std::lock_guard lock(mu_);
    live_.erase(addr);
}

std::uint64_t TcpFabric::open_connection_log() {
    std::lock_guard lock(mu_);
    auto id = next_conn_++;
    in_flight_[id];
    return id;
}

void TcpFabric::push_send_time(std::uint64_t conn, Micros t) {
    std::lock_guard lock(mu_);
    in_flight_[conn].push_back(t);
}

Micros TcpFabric::pop_send_time(std::uint64_t conn) {
    std::lock_guard lock(mu_);
    auto it = in_flight_.find(conn);
    if (it == in_flight_.end() || it->second.empty()) return 0;
    auto t = it->second.front();
    it->second.pop_front();
    return t;
}

std::vector<FrameRecord> TcpFabric::frame_log() const {
    std::vector<FrameRecord> out;
    {
        std::lock_guard lock(mu_);
        out = log_;
    }
    std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.order_key() < b.order_key(); });
    return out;
}

void TcpFabric::set_interceptor(Interceptor fn) {
    std::lock_guard lock(mu_);
    interceptor_ = std::move(fn);
}

void TcpFabric::add_tap(Tap fn) {
    std::lock_guard lock(mu_);
    taps_.push_back(std::move(fn));
}

std::unique_ptr<Fabric> make_fabric(const FabricConfig& cfg) {
    if (cfg.backend == Backend::tcp) return std::make_unique<TcpFabric>(cfg);
    return std::make_unique<SimFabric>(cfg);
}

}  // namespace dflshield
