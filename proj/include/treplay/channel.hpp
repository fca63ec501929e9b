#pragma once

#include <cstdint>
#include <mutex>
#include <optional>
#include <span>
#include <vector>

#include "treplay/packet.hpp"

namespace treplay {

// A packet as it crossed an endpoint, stamped with the local clock.
struct WirePacket {
    int64_t ts_us = 0;
    std::vector<uint8_t> bytes;
};

// Engine-facing endpoint of a packet transport. recv_until is the single
// blocking primitive: it returns the next inbound packet, or nullopt once
// the clock reaches the deadline, whichever comes first.
class PacketChannel {
  public:
    virtual ~PacketChannel() = default;
    virtual void send(std::span<const uint8_t> bytes) = 0;
    virtual std::optional<WirePacket> recv_until(int64_t deadline_abs_us) = 0;
};

// Per-node recorder of packets crossing tapped endpoints. Send and
// delivery paths call record exactly once per crossing, so duplicates put
// on the wire by the network show up twice here.
class CaptureTap {
  public:
    void record(int64_t ts_us, bool outbound, std::span<const uint8_t> bytes) {
        std::lock_guard lock(m_);
        records_.push_back({ts_us, next_order_++, outbound,
                            std::vector<uint8_t>(bytes.begin(), bytes.end())});
    }

    // Chronological trace of everything recorded, framed for pcap output.
    Trace to_trace() const {
        std::lock_guard lock(m_);
        auto sorted = records_;
        std::stable_sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) {
            return std::tie(a.ts_us, a.order) < std::tie(b.ts_us, b.order);
        });
        Trace t;
        for (const auto& r : sorted) {
            try {
                auto p = with_ethernet(parse_wire_packet(r.bytes, r.ts_us));
                t.packets.push_back(std::move(p));
            } catch (const FormatError&) {
                ++t.skipped_malformed;
            }
        }
        return t;
    }

    std::size_t count() const {
        std::lock_guard lock(m_);
        return records_.size();
    }

    void clear() {
        std::lock_guard lock(m_);
        records_.clear();
        next_order_ = 0;
    }

  private:
    struct Record {
        int64_t ts_us;
        uint64_t order;
        bool outbound;
        std::vector<uint8_t> bytes;
    };

    mutable std::mutex m_;
    std::vector<Record> records_;
    uint64_t next_order_ = 0;
};

}  // namespace treplay
