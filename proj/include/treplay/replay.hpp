#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "treplay/channel.hpp"
#include "treplay/clock.hpp"
#include "treplay/errors.hpp"
#include "treplay/schedule.hpp"

namespace treplay {

// Strict replays the schedule verbatim, retransmissions included;
// DropScheduledDuplicates removes recorded retransmissions up front.
enum class DuplicatePolicy : uint8_t { Strict, DropScheduledDuplicates };

struct ReplayConfig {
    int64_t inactivity_timeout_us = 10'000'000;  // reset by every send and receive
    DuplicatePolicy duplicate_policy = DuplicatePolicy::Strict;
    int64_t max_clock_slip_us = 1000;  // sends later than this are flagged, never dropped
};

enum class ReplayStatus : uint8_t { Completed, TimedOut, Aborted };

inline const char* to_string(ReplayStatus s) {
    switch (s) {
        case ReplayStatus::Completed: return "completed";
        case ReplayStatus::TimedOut: return "timed-out";
        case ReplayStatus::Aborted: return "aborted";
    }
    return "?";
}

struct PacketEvent {
    std::size_t entry_index = 0;
    Direction direction = Direction::Local;
    int64_t ts_us = 0;
};

struct ReplayOutcome {
    ReplayStatus status = ReplayStatus::Aborted;
    std::string abort_reason;
    uint64_t sent_count = 0;
    uint64_t received_count = 0;
    uint64_t duplicate_count = 0;
    uint64_t unexpected_count = 0;
    uint64_t missed_count = 0;
    uint64_t late_count = 0;
    std::optional<int64_t> first_send_us;
    std::vector<PacketEvent> events;

    bool completed() const { return status == ReplayStatus::Completed; }
};

namespace detail {

// Before the peer's real initial sequence number is known, its first
// packet can only be recognized by shape; afterwards numbers match fully.
inline bool entry_matches(const Schedule& s, std::size_t index, const PacketRecord& p) {
    const auto& e = s.entries[index];
    const bool shape_ok = p.flags == e.packet.flags && p.payload.size() == e.packet.payload.size();
    if (!shape_ok)
        return false;
    if (!s.remote_rebase && s.first_remote_index && index == *s.first_remote_index)
        return p.ack == e.expected_ack;
    return p.seq == e.expected_seq && p.ack == e.expected_ack;
}

// Whether a not-yet-rebased schedule can meaningfully match this entry.
inline bool entry_matchable(const Schedule& s, std::size_t index) {
    return s.remote_rebase || (s.first_remote_index && index == *s.first_remote_index);
}

}  // namespace detail

struct Classification {
    enum Kind : uint8_t { Expected, ScheduledLater, DuplicateOfPast, Unexpected } kind =
        Unexpected;
    std::size_t entry_index = 0;  // meaningful except for Unexpected
};

// Matches an incoming packet against the schedule. Duplicates of traffic
// already seen are recognized before anything else — the same order the
// original replay tool uses, which is what makes recorded retransmissions
// poisonous to it.
inline Classification classify_incoming(const Schedule& s, const PacketRecord& p) {
    for (std::size_t i = 0; i < s.cursor; ++i)
        if (!s.entries[i].local() && detail::entry_matches(s, i, p))
            return {Classification::DuplicateOfPast, i};
    if (!s.done() && !s.entries[s.cursor].local() && detail::entry_matchable(s, s.cursor) &&
        detail::entry_matches(s, s.cursor, p))
        return {Classification::Expected, s.cursor};
    for (std::size_t j = s.done() ? 0 : s.cursor + 1; j < s.entries.size(); ++j)
        if (!s.entries[j].local() && detail::entry_matchable(s, j) &&
            detail::entry_matches(s, j, p))
            return {Classification::ScheduledLater, j};
    return {Classification::Unexpected, 0};
}

// Removes recorded retransmissions: any entry that repeats an earlier
// entry's direction, numbers, flags and payload length. Both endpoints
// apply the same rule, so the schedules stay mirror images.
inline void drop_scheduled_duplicates(Schedule& s) {
    if (s.cursor != 0 || s.remote_rebase)
        throw StateError("schedule already in use; duplicates must be dropped before replay");
    std::vector<ScheduleEntry> kept;
    kept.reserve(s.entries.size());
    for (const auto& e : s.entries) {
        const bool dup = std::any_of(kept.begin(), kept.end(), [&](const ScheduleEntry& k) {
            return k.direction == e.direction && k.packet.seq == e.packet.seq &&
                   k.packet.ack == e.packet.ack && k.packet.flags == e.packet.flags &&
                   k.packet.payload.size() == e.packet.payload.size();
        });
        if (!dup)
            kept.push_back(e);
    }
    s.entries = std::move(kept);
    s.first_remote_index.reset();
    for (std::size_t i = 0; i < s.entries.size(); ++i) {
        if (!s.entries[i].local()) {
            s.first_remote_index = i;
            break;
        }
    }
}

// Executes one schedule against a transport: sends Local packets at their
// due times (receiving stays possible while a send is pending), matches
// incoming packets against Remote expectations, rebases on the peer's
// first packet, and applies the duplicate policy.
inline ReplayOutcome run_connection(Schedule& s, PacketChannel& chan, Clock& clock,
                                    const ReplayConfig& cfg = {}) {
    if (cfg.duplicate_policy == DuplicatePolicy::DropScheduledDuplicates)
        drop_scheduled_duplicates(s);

    ReplayOutcome out;
    std::vector<WirePacket> stashed;  // arrivals scheduled further ahead than the cursor

    auto send_cursor = [&](int64_t now) {
        auto& e = s.entries[s.cursor];
        const int64_t due_abs = s.start_epoch_us + e.due_us;
        chan.send(to_wire_bytes(e.packet));
        if (!out.first_send_us)
            out.first_send_us = now;
        if (now > due_abs + cfg.max_clock_slip_us)
            ++out.late_count;
        out.events.push_back({s.cursor, Direction::Local, now});
        ++out.sent_count;
        ++s.cursor;
    };

    auto consume_remote = [&](std::size_t index, const PacketRecord& p, int64_t arrival_us) {
        if (!s.remote_rebase && s.first_remote_index && index == *s.first_remote_index)
            rebase_remote(s, p.seq);
        out.events.push_back({index, Direction::Remote, arrival_us});
        ++out.received_count;
        s.cursor = index + 1;
    };

    try {
        clock.sleep_until(s.start_epoch_us);
        int64_t last_activity = clock.now_us();

        for (;;) {
            const auto nd = next_due(s);
            if (nd.kind == NextAction::Done) {
                if (out.missed_count == 0) {
                    out.status = ReplayStatus::Completed;
                } else {
                    out.status = ReplayStatus::Aborted;
                    out.abort_reason =
                        "skipped " + std::to_string(out.missed_count) + " missed remote packets";
                }
                break;
            }

            // a previously stashed arrival may satisfy the cursor directly
            if (nd.kind == NextAction::AwaitRemote) {
                bool consumed = false;
                for (auto it = stashed.begin(); it != stashed.end(); ++it) {
                    PacketRecord p = parse_wire_packet(it->bytes, it->ts_us);
                    if (detail::entry_matchable(s, s.cursor) &&
                        detail::entry_matches(s, s.cursor, p)) {
                        const int64_t ts = it->ts_us;
                        stashed.erase(it);
                        consume_remote(s.cursor, p, ts);
                        consumed = true;
                        break;
                    }
                }
                if (consumed)
                    continue;
            }

            const int64_t inactivity_deadline = last_activity + cfg.inactivity_timeout_us;
            const int64_t deadline = nd.kind == NextAction::SendAt
                                         ? std::min(nd.at_epoch_us, inactivity_deadline)
                                         : inactivity_deadline;

            auto wire = chan.recv_until(deadline);
            if (!wire) {
                const int64_t now = clock.now_us();
                if (nd.kind == NextAction::SendAt && now >= nd.at_epoch_us) {
                    send_cursor(now);
                    last_activity = now;
                    continue;
                }
                out.status = ReplayStatus::TimedOut;
                break;
            }

            last_activity = wire->ts_us;
            PacketRecord p;
            try {
                p = parse_wire_packet(wire->bytes, wire->ts_us);
            } catch (const FormatError&) {
                ++out.unexpected_count;
                continue;
            }

            const auto cls = classify_incoming(s, p);
            switch (cls.kind) {
                case Classification::Expected:
                    consume_remote(cls.entry_index, p, wire->ts_us);
                    break;
                case Classification::DuplicateOfPast:
                    ++out.duplicate_count;
                    break;
                case Classification::ScheduledLater: {
                    // the peer ran ahead; skip remote expectations it left
                    // behind, but never send our own packets early
                    while (s.cursor < cls.entry_index && !s.entries[s.cursor].local()) {
                        ++out.missed_count;
                        ++s.cursor;
                    }
                    if (s.cursor == cls.entry_index)
                        consume_remote(cls.entry_index, p, wire->ts_us);
                    else
                        stashed.push_back(std::move(*wire));
                    break;
                }
                case Classification::Unexpected:
                    if (p.has(tcpflag::kRst)) {
                        out.status = ReplayStatus::Aborted;
                        out.abort_reason = "unscheduled reset from peer";
                        return out;
                    }
                    ++out.unexpected_count;
                    break;
            }
        }
    } catch (const TransportError& e) {
        out.status = ReplayStatus::Aborted;
        out.abort_reason = std::string("transport: ") + e.what();
    }

    out.duplicate_count += stashed.size();  // leftovers were extra copies
    return out;
}

}  // namespace treplay
