#pragma once

#include <netinet/in.h>
#include <sys/socket.h>

#include <atomic>
#include <condition_variable>
#include <cstring>
#include <deque>
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "treplay/channel.hpp"
#include "treplay/clock.hpp"
#include "treplay/errors.hpp"
#include "treplay/net.hpp"
#include "treplay/packet.hpp"

namespace treplay {

// Carries crafted TCP/IP packets between nodes as opaque UDP payloads.
// Each datagram is a 4-byte big-endian length prefix followed by the raw
// inner packet; a prefix that disagrees with the datagram size drops the
// datagram and bumps a counter. Arrivals are demultiplexed to engines by
// the replay port inside the inner packet. Connections whose endpoints
// live on the same node never touch the socket.
class UdpDataPlane {
  public:
    struct EngineSlot {
        uint16_t port = 0;
        bool initiator_role = true;
        CaptureTap* tap = nullptr;
        std::mutex m;
        std::condition_variable cv;
        std::deque<WirePacket> queue;
    };

    UdpDataPlane(SystemClock& clock, const NetAddress& bind_addr, std::size_t mtu = 65507)
        : clock_(clock), mtu_(mtu) {
        sock_ = Socket(::socket(AF_INET, SOCK_DGRAM, 0));
        if (!sock_.valid())
            throw TransportError("socket: " + std::string(strerror(errno)));
        auto sa = bind_addr.to_sockaddr();
        if (::bind(sock_.fd(), reinterpret_cast<sockaddr*>(&sa), sizeof sa) != 0)
            throw TransportError("bind udp " + bind_addr.to_string() + ": " +
                                 std::string(strerror(errno)));
        timeval tv{0, 100'000};  // wake periodically to observe stop()
        ::setsockopt(sock_.fd(), SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof tv);
        rx_ = std::thread([this] { receive_loop(); });
    }

    ~UdpDataPlane() { stop(); }

    void stop() {
        if (!stopping_.exchange(true) && rx_.joinable())
            rx_.join();
    }

    NetAddress local_address() const {
        sockaddr_in sa{};
        socklen_t len = sizeof sa;
        if (::getsockname(sock_.fd(), reinterpret_cast<sockaddr*>(&sa), &len) != 0)
            throw TransportError("getsockname: " + std::string(strerror(errno)));
        return {ntohl(sa.sin_addr.s_addr), ntohs(sa.sin_port)};
    }

    void configure(const std::string& self_node, const std::map<std::string, NetAddress>& peers) {
        std::lock_guard lock(m_);
        self_node_ = self_node;
        peers_ = peers;
    }

    // Engines register before the run starts; slots stay valid until reset.
    EngineSlot* register_engine(uint16_t port, bool initiator_role, CaptureTap* tap) {
        std::lock_guard lock(m_);
        slots_.emplace_back();
        auto& slot = slots_.back();
        slot.port = port;
        slot.initiator_role = initiator_role;
        slot.tap = tap;
        return &slot;
    }

    // Drops all engine registrations; callers must have joined the engines.
    void reset() {
        std::lock_guard lock(m_);
        slots_.clear();
    }

    // Returns the send timestamp.
    int64_t send_from(EngineSlot& from, const std::string& to_node,
                      std::span<const uint8_t> bytes) {
        if (bytes.size() + 4 > mtu_)
            throw TransportError("packet of " + std::to_string(bytes.size()) +
                                 " bytes exceeds datagram MTU " + std::to_string(mtu_));
        std::string self;
        std::optional<NetAddress> peer;
        {
            std::lock_guard lock(m_);
            self = self_node_;
            if (auto it = peers_.find(to_node); it != peers_.end())
                peer = it->second;
        }
        const int64_t ts = clock_.now_us();
        if (to_node == self) {
            // both endpoints on this node: hand straight to the twin slot
            std::lock_guard lock(m_);
            if (EngineSlot* slot = find_slot_locked(from.port, !from.initiator_role))
                deliver(*slot, bytes);
            else
                ++stray_count_;
            return ts;
        }
        if (!peer)
            throw TransportError("no data address for node '" + to_node + "'");

        std::vector<uint8_t> frame(bytes.size() + 4);
        store_be32(frame.data(), static_cast<uint32_t>(bytes.size()));
        std::copy(bytes.begin(), bytes.end(), frame.begin() + 4);
        auto sa = peer->to_sockaddr();
        const auto n = ::sendto(sock_.fd(), frame.data(), frame.size(), 0,
                                reinterpret_cast<sockaddr*>(&sa), sizeof sa);
        if (n < 0 || static_cast<std::size_t>(n) != frame.size())
            throw TransportError("sendto " + peer->to_string() + ": " +
                                 std::string(strerror(errno)));
        return ts;
    }

    uint64_t framing_drops() const { return framing_drops_.load(); }
    uint64_t stray_count() const { return stray_count_.load(); }

  private:
    EngineSlot* find_slot_locked(uint16_t port, bool role) {
        for (auto& s : slots_)
            if (s.port == port && s.initiator_role == role)
                return &s;
        return nullptr;
    }

    void deliver(EngineSlot& slot, std::span<const uint8_t> bytes) {
        const int64_t ts = clock_.now_us();
        if (slot.tap)
            slot.tap->record(ts, false, bytes);
        {
            std::lock_guard lock(slot.m);
            slot.queue.push_back(WirePacket{ts, std::vector<uint8_t>(bytes.begin(), bytes.end())});
        }
        slot.cv.notify_one();
    }

    void receive_loop() {
        std::vector<uint8_t> buf(mtu_ + 4);
        while (!stopping_.load()) {
            const auto n = ::recvfrom(sock_.fd(), buf.data(), buf.size(), 0, nullptr, nullptr);
            if (n < 0) {
                if (errno == EAGAIN || errno == EWOULDBLOCK || errno == EINTR)
                    continue;
                break;
            }
            if (n < 4 || load_be32(buf.data()) != static_cast<uint32_t>(n - 4)) {
                ++framing_drops_;
                continue;
            }
            auto inner = std::span(buf.data() + 4, static_cast<std::size_t>(n - 4));
            const auto port = peek_replay_port(inner);
            if (!port) {
                ++stray_count_;
                continue;
            }
            // exactly one role of each port is reachable over the wire;
            // same-node pairs are wired internally and never get here
            std::lock_guard lock(m_);
            EngineSlot* a = find_slot_locked(*port, true);
            EngineSlot* b = find_slot_locked(*port, false);
            if ((a != nullptr) == (b != nullptr)) {
                ++stray_count_;
                continue;
            }
            deliver(a ? *a : *b, inner);
        }
    }

    SystemClock& clock_;
    std::size_t mtu_;
    Socket sock_;
    std::thread rx_;
    std::atomic<bool> stopping_{false};
    std::mutex m_;
    std::string self_node_;
    std::map<std::string, NetAddress> peers_;
    std::deque<EngineSlot> slots_;
    std::atomic<uint64_t> framing_drops_{0};
    std::atomic<uint64_t> stray_count_{0};
};

// Engine-facing view of one data-plane slot.
class UdpChannel final : public PacketChannel {
  public:
    UdpChannel(UdpDataPlane& plane, UdpDataPlane::EngineSlot& slot, std::string peer_node,
               SystemClock& clock)
        : plane_(&plane), slot_(&slot), peer_(std::move(peer_node)), clock_(&clock) {}

    void send(std::span<const uint8_t> bytes) override {
        const int64_t ts = plane_->send_from(*slot_, peer_, bytes);
        if (slot_->tap)
            slot_->tap->record(ts, true, bytes);
    }

    std::optional<WirePacket> recv_until(int64_t deadline_abs_us) override {
        std::unique_lock lock(slot_->m);
        for (;;) {
            if (!slot_->queue.empty()) {
                auto pkt = std::move(slot_->queue.front());
                slot_->queue.pop_front();
                return pkt;
            }
            if (clock_->now_us() >= deadline_abs_us)
                return std::nullopt;
            slot_->cv.wait_until(lock, clock_->steady_point(deadline_abs_us));
        }
    }

  private:
    UdpDataPlane* plane_;
    UdpDataPlane::EngineSlot* slot_;
    std::string peer_;
    SystemClock* clock_;
};

}  // namespace treplay
