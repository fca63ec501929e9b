#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <vector>

#include "treplay/checksum.hpp"
#include "treplay/errors.hpp"
#include "treplay/splitter.hpp"

namespace treplay {

enum class Direction : uint8_t { Local, Remote };

// One slot of the replay schedule: a fully rewritten packet to send
// (Local) or the values an incoming packet must carry (Remote).
struct ScheduleEntry {
    Direction direction = Direction::Local;
    PacketRecord packet;
    int64_t due_us = 0;  // relative to connection start, non-decreasing
    uint32_t expected_seq = 0;
    uint32_t expected_ack = 0;

    bool local() const { return direction == Direction::Local; }
};

struct Schedule {
    std::vector<ScheduleEntry> entries;
    std::size_t cursor = 0;
    uint32_t local_seq_offset = 0;
    std::optional<uint32_t> remote_rebase;
    uint32_t local_ip = 0;
    uint32_t remote_ip = 0;
    uint16_t replay_port = 0;
    int64_t start_epoch_us = 0;
    bool initiator = true;

    // the peer's initial sequence number as recorded in the input
    uint32_t original_remote_isn = 0;
    std::optional<std::size_t> first_remote_index;

    bool done() const { return cursor == entries.size(); }
};

// Builds the rewritten schedule for one endpoint of a connection.
//
// The endpoint whose original address matches the chosen role sends the
// Local packets; everything else is expected from the peer. Local
// sequence numbers are shifted by one random offset so pairwise
// differences survive; acknowledgment values stay at their recorded
// numbers until the peer's real initial sequence number is known (see
// rebase_remote). Addresses and ports are rewritten for the replay
// network and all checksums recomputed.
inline Schedule build_schedule(const ConnectionTrace& c, bool initiator, uint32_t local_ip,
                               uint32_t remote_ip, int64_t start_epoch_us, uint64_t rng_seed) {
    Schedule s;
    s.initiator = initiator;
    s.local_ip = local_ip;
    s.remote_ip = remote_ip;
    s.replay_port = c.replay_port;
    s.start_epoch_us = start_epoch_us;

    std::mt19937_64 rng(rng_seed);
    s.local_seq_offset =
        std::uniform_int_distribution<uint32_t>(1, 0xffffffffu)(rng);

    const uint32_t local_orig_ip = initiator ? c.initiator_ip : c.responder_ip;
    const int64_t t0 = c.first_ts_us();
    int64_t prev_due = 0;

    s.entries.reserve(c.packets.size());
    for (const auto& orig : c.packets) {
        ScheduleEntry e;
        e.direction = orig.src_ip == local_orig_ip ? Direction::Local : Direction::Remote;
        e.packet = orig;
        e.due_us = std::max(orig.ts_us - t0, prev_due);
        prev_due = e.due_us;

        auto& p = e.packet;
        if (e.local()) {
            p.src_ip = local_ip;
            p.dst_ip = remote_ip;
            p.seq += s.local_seq_offset;  // 32-bit wrap intended
        } else {
            p.src_ip = remote_ip;
            p.dst_ip = local_ip;
            if (p.has(tcpflag::kAck))
                p.ack += s.local_seq_offset;  // the peer acknowledges our shifted bytes
            if (!s.first_remote_index) {
                s.first_remote_index = s.entries.size();
                s.original_remote_isn = p.seq;
            }
        }
        p.src_port = c.replay_port;
        p.dst_port = c.replay_port;
        fix_checksums(p);

        e.expected_seq = p.seq;
        e.expected_ack = p.ack;
        s.entries.push_back(std::move(e));
    }
    return s;
}

// One-time adjustment after the peer's actual initial sequence number is
// observed (the SYN/ACK for the initiating side, the SYN for the
// responding side): remote expectations shift onto the observed numbering
// and local acknowledgments follow, keeping every relative distance.
// Packets that acknowledge nothing (no ACK flag) are left alone.
inline void rebase_remote(Schedule& s, uint32_t observed_remote_seq) {
    if (s.remote_rebase)
        throw StateError("remote sequence numbers already rebased");
    const uint32_t delta = observed_remote_seq - s.original_remote_isn;  // mod 2^32
    s.remote_rebase = delta;
    if (delta == 0)
        return;
    for (auto& e : s.entries) {
        if (e.local()) {
            if (e.packet.has(tcpflag::kAck)) {
                e.packet.ack += delta;
                e.expected_ack = e.packet.ack;
                fix_checksums(e.packet);
            }
        } else {
            e.packet.seq += delta;
            e.expected_seq = e.packet.seq;
            fix_checksums(e.packet);
        }
    }
}

struct NextAction {
    enum Kind { SendAt, AwaitRemote, Done } kind = Done;
    int64_t at_epoch_us = 0;  // absolute send time, meaningful for SendAt
};

inline NextAction next_due(const Schedule& s) {
    if (s.done())
        return {NextAction::Done, 0};
    const auto& e = s.entries[s.cursor];
    if (e.local())
        return {NextAction::SendAt, s.start_epoch_us + e.due_us};
    return {NextAction::AwaitRemote, 0};
}

}  // namespace treplay
