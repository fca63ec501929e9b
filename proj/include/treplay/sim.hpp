#pragma once

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <limits>
#include <map>
#include <mutex>
#include <optional>
#include <queue>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "treplay/channel.hpp"
#include "treplay/clock.hpp"
#include "treplay/errors.hpp"
#include "treplay/packet.hpp"

namespace treplay {

// Shared-medium parameters applied to every node pair.
struct LinkParams {
    int64_t one_way_delay_us = 0;
    int64_t jitter_us = 0;  // uniform, added symmetrically around the delay
    double loss_prob = 0.0;
    double duplicate_prob = 0.0;
    bool reorder = false;
    uint64_t seed = 0;

    void validate() const {
        if (one_way_delay_us < 0 || jitter_us < 0)
            throw Error("link delay and jitter must be non-negative");
        if (loss_prob < 0.0 || loss_prob > 1.0 || duplicate_prob < 0.0 || duplicate_prob > 1.0)
            throw Error("link probabilities must lie in [0, 1]");
    }
};

// Discrete-event packet network with a virtual clock.
//
// Every thread that blocks on virtual time registers as an actor. The
// clock advances only when every registered actor is blocked, and each
// advance wakes exactly one actor, so runs are deterministic regardless
// of OS scheduling: event order depends only on (virtual time, enqueue
// sequence) and actor registration order.
class SimNet {
  public:
    using ActorId = std::size_t;
    using MailboxId = std::size_t;
    static constexpr int64_t kNever = std::numeric_limits<int64_t>::max();

    explicit SimNet(LinkParams params = {}, int64_t start_us = 0)
        : params_(params), now_us_(start_us) {
        params_.validate();
    }

    int64_t now_us() {
        std::lock_guard lock(m_);
        return now_us_;
    }

    // --- actors ----------------------------------------------------------

    ActorId register_actor(std::string name) {
        std::lock_guard lock(m_);
        actors_.emplace_back();
        actors_.back().name = std::move(name);
        return actors_.size() - 1;
    }

    void deregister_actor(ActorId id) {
        std::lock_guard lock(m_);
        actors_[id].alive = false;
        advance_if_quiescent();
    }

    // While held, the clock never advances; lets a coordinator start many
    // actors without time running away from the early ones.
    void hold() {
        std::lock_guard lock(m_);
        ++holds_;
    }

    void release() {
        std::lock_guard lock(m_);
        if (holds_ == 0)
            throw StateError("release without hold");
        --holds_;
        advance_if_quiescent();
    }

    // --- endpoints ---------------------------------------------------------

    MailboxId register_mailbox(const std::string& node, uint16_t port, CaptureTap* tap) {
        std::lock_guard lock(m_);
        mailboxes_.emplace_back();
        auto& mb = mailboxes_.back();
        mb.node = node;
        mb.port = port;
        mb.tap = tap;
        return mailboxes_.size() - 1;
    }

    // Sends toward to_node; the receiving mailbox is picked at delivery
    // time by the replay port inside the packet. Returns the virtual send
    // timestamp.
    int64_t send(MailboxId from, const std::string& to_node, std::span<const uint8_t> bytes) {
        std::lock_guard lock(m_);
        auto& dir = direction_state(mailboxes_[from].node, to_node);

        const bool lost = uniform01(dir.rng) < params_.loss_prob;
        int64_t delay = params_.one_way_delay_us;
        if (params_.jitter_us > 0) {
            delay += std::uniform_int_distribution<int64_t>(-params_.jitter_us,
                                                            params_.jitter_us)(dir.rng);
            if (delay < 0)
                delay = 0;
        }
        int64_t arrival = now_us_ + delay;
        if (!params_.reorder && arrival < dir.last_arrival_us)
            arrival = dir.last_arrival_us;  // FIFO even under jitter

        const bool duplicated = uniform01(dir.rng) < params_.duplicate_prob;
        if (lost) {
            ++lost_count_;
        } else {
            dir.last_arrival_us = arrival;
            enqueue_delivery(arrival, to_node, from, bytes);
            if (duplicated) {
                ++duplicate_count_;
                enqueue_delivery(arrival, to_node, from, bytes);
            }
        }
        return now_us_;
    }

    std::optional<WirePacket> actor_recv_until(ActorId id, MailboxId mb_id, int64_t deadline) {
        std::unique_lock lock(m_);
        auto& a = actors_[id];
        auto& mb = mailboxes_[mb_id];
        for (;;) {
            if (!mb.queue.empty()) {
                auto pkt = std::move(mb.queue.front());
                mb.queue.pop_front();
                return pkt;
            }
            if (now_us_ >= deadline)
                return std::nullopt;
            a.blocked = true;
            a.waiting_recv = true;
            a.deadline = deadline;
            a.mailbox = mb_id;
            a.woken = false;
            advance_if_quiescent();
            a.cv.wait(lock, [&] { return a.woken; });
            a.blocked = false;
        }
    }

    void actor_sleep_until(ActorId id, int64_t abs_us) {
        std::unique_lock lock(m_);
        auto& a = actors_[id];
        for (;;) {
            if (now_us_ >= abs_us)
                return;
            a.blocked = true;
            a.waiting_recv = false;
            a.deadline = abs_us;
            a.woken = false;
            advance_if_quiescent();
            a.cv.wait(lock, [&] { return a.woken; });
            a.blocked = false;
        }
    }

    // --- statistics --------------------------------------------------------

    uint64_t lost_count() {
        std::lock_guard lock(m_);
        return lost_count_;
    }
    uint64_t duplicate_injections() {
        std::lock_guard lock(m_);
        return duplicate_count_;
    }
    uint64_t stray_count() {
        std::lock_guard lock(m_);
        return stray_count_;
    }

  private:
    struct Actor {
        std::string name;
        bool alive = true;
        bool blocked = false;
        bool waiting_recv = false;
        bool woken = false;
        int64_t deadline = kNever;
        MailboxId mailbox = 0;
        std::condition_variable cv;
    };

    struct Mailbox {
        std::string node;
        uint16_t port = 0;
        CaptureTap* tap = nullptr;
        std::deque<WirePacket> queue;
    };

    struct Delivery {
        int64_t at_us;
        uint64_t order;
        std::string to_node;
        MailboxId from;
        std::vector<uint8_t> bytes;
    };
    struct DeliveryLater {
        bool operator()(const Delivery& a, const Delivery& b) const {
            return std::tie(a.at_us, a.order) > std::tie(b.at_us, b.order);
        }
    };

    struct DirectionState {
        std::mt19937_64 rng;
        int64_t last_arrival_us = 0;
    };

    static double uniform01(std::mt19937_64& rng) {
        return std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    }

    DirectionState& direction_state(const std::string& from, const std::string& to) {
        auto key = std::make_pair(from, to);
        auto it = directions_.find(key);
        if (it == directions_.end()) {
            uint64_t h = 1469598103934665603ull ^ params_.seed;
            for (char c : from + "\x1f" + to) {
                h ^= static_cast<uint8_t>(c);
                h *= 1099511628211ull;
            }
            it = directions_.emplace(std::move(key), DirectionState{std::mt19937_64(h), 0}).first;
        }
        return it->second;
    }

    void enqueue_delivery(int64_t at_us, const std::string& to_node, MailboxId from,
                          std::span<const uint8_t> bytes) {
        deliveries_.push(Delivery{at_us, next_order_++, to_node, from,
                                  std::vector<uint8_t>(bytes.begin(), bytes.end())});
    }

    // Routes one delivery to the mailbox registered for its replay port at
    // the destination node, never back into the sending mailbox.
    std::optional<MailboxId> route(const Delivery& d) {
        const auto port = peek_replay_port(d.bytes);
        if (!port)
            return std::nullopt;
        for (std::size_t i = 0; i < mailboxes_.size(); ++i) {
            auto& mb = mailboxes_[i];
            if (i != d.from && mb.node == d.to_node && mb.port == *port)
                return i;
        }
        return std::nullopt;
    }

    // Advance the virtual clock once every registered actor is blocked.
    // Processes deliveries in (time, order) sequence and wakes exactly one
    // actor per advance; deliveries beat deadline expiries on ties.
    void advance_if_quiescent() {
        if (holds_ > 0)
            return;
        for (const auto& a : actors_)
            if (a.alive && !a.blocked)
                return;
        for (;;) {
            const int64_t next_delivery = deliveries_.empty() ? kNever : deliveries_.top().at_us;
            int64_t next_deadline = kNever;
            Actor* expiring = nullptr;
            for (auto& a : actors_) {
                if (a.alive && a.blocked && !a.woken && a.deadline < next_deadline) {
                    next_deadline = a.deadline;
                    expiring = &a;
                }
            }
            if (next_delivery == kNever && next_deadline == kNever)
                return;  // idle: nothing scheduled, everyone waits forever

            if (next_delivery <= next_deadline) {
                now_us_ = std::max(now_us_, next_delivery);
                Delivery d = deliveries_.top();
                deliveries_.pop();
                const auto routed = route(d);
                if (!routed) {
                    ++stray_count_;
                    continue;
                }
                const MailboxId mb_id = *routed;
                Mailbox& mb = mailboxes_[mb_id];
                if (mb.tap)
                    mb.tap->record(now_us_, false, d.bytes);
                mb.queue.push_back(WirePacket{now_us_, std::move(d.bytes)});
                for (auto& a : actors_) {
                    if (a.alive && a.blocked && !a.woken && a.waiting_recv &&
                        a.mailbox == mb_id) {
                        wake(a);
                        return;
                    }
                }
                // nobody is waiting on that mailbox right now; keep going
            } else {
                now_us_ = std::max(now_us_, next_deadline);
                wake(*expiring);
                return;
            }
        }
    }

    static void wake(Actor& a) {
        a.woken = true;
        a.cv.notify_one();
    }

    LinkParams params_;
    std::mutex m_;
    int64_t now_us_ = 0;
    std::size_t holds_ = 0;
    std::deque<Actor> actors_;
    std::deque<Mailbox> mailboxes_;
    std::priority_queue<Delivery, std::vector<Delivery>, DeliveryLater> deliveries_;
    std::map<std::pair<std::string, std::string>, DirectionState> directions_;
    uint64_t next_order_ = 0;
    uint64_t lost_count_ = 0;
    uint64_t duplicate_count_ = 0;
    uint64_t stray_count_ = 0;
};

// One engine's attachment to a SimNet: a packet channel and a clock view
// sharing the same actor. Active endpoints register their actor up front
// (required for engines started behind a hold); passive endpoints are for
// single-threaded callers and register only for the duration of each
// blocking call.
class SimEndpoint final : public PacketChannel, public Clock {
  public:
    SimEndpoint(SimNet& net, std::string node, std::string peer_node, uint16_t port,
                CaptureTap* tap, std::string actor_name, bool active = true)
        : net_(&net), peer_(std::move(peer_node)), tap_(tap), active_(active),
          actor_name_(std::move(actor_name)) {
        mailbox_ = net_->register_mailbox(node, port, tap);
        if (active_)
            actor_ = net_->register_actor(actor_name_);
    }

    ~SimEndpoint() override { detach(); }

    SimEndpoint(const SimEndpoint&) = delete;
    SimEndpoint& operator=(const SimEndpoint&) = delete;

    // Leaves the actor registry so the clock no longer waits for this
    // endpoint. Call when the owning engine is done; idempotent.
    void detach() {
        if (active_ && !detached_) {
            detached_ = true;
            net_->deregister_actor(actor_);
        }
    }

    void send(std::span<const uint8_t> bytes) override {
        const int64_t ts = net_->send(mailbox_, peer_, bytes);
        if (tap_)
            tap_->record(ts, true, bytes);
    }

    std::optional<WirePacket> recv_until(int64_t deadline_abs_us) override {
        if (active_)
            return net_->actor_recv_until(actor_, mailbox_, deadline_abs_us);
        ScopedActor scoped(*net_, actor_name_);
        return net_->actor_recv_until(scoped.id, mailbox_, deadline_abs_us);
    }

    int64_t now_us() override { return net_->now_us(); }

    void sleep_until(int64_t abs_us) override {
        if (active_) {
            net_->actor_sleep_until(actor_, abs_us);
            return;
        }
        ScopedActor scoped(*net_, actor_name_);
        net_->actor_sleep_until(scoped.id, abs_us);
    }

    SimNet& net() { return *net_; }

  private:
    struct ScopedActor {
        SimNet& net;
        SimNet::ActorId id;
        ScopedActor(SimNet& n, const std::string& name) : net(n), id(n.register_actor(name)) {}
        ~ScopedActor() { net.deregister_actor(id); }
    };

    SimNet* net_;
    std::string peer_;
    CaptureTap* tap_;
    bool active_;
    bool detached_ = false;
    std::string actor_name_;
    SimNet::ActorId actor_ = 0;
    SimNet::MailboxId mailbox_ = 0;
};

}  // namespace treplay
