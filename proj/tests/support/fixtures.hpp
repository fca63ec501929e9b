#pragma once

// Synthetic captures and harness plumbing shared by the test suites.

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "treplay/checksum.hpp"
#include "treplay/packet.hpp"
#include "treplay/pcap.hpp"
#include "treplay/replay.hpp"
#include "treplay/schedule.hpp"
#include "treplay/sim.hpp"
#include "treplay/splitter.hpp"

namespace fixtures {

using namespace treplay;

inline PacketRecord make_packet(int64_t ts_us, const std::string& src, const std::string& dst,
                                uint16_t sport, uint16_t dport, uint32_t seq, uint32_t ack,
                                uint8_t flags, std::size_t payload_len = 0) {
    PacketRecord p;
    p.ts_us = ts_us;
    p.src_ip = parse_ip4(src);
    p.dst_ip = parse_ip4(dst);
    p.src_port = sport;
    p.dst_port = dport;
    p.seq = seq;
    p.ack = ack;
    p.flags = flags;
    p.window = 65535;
    p.ttl = 64;
    p.payload.resize(payload_len);
    for (std::size_t i = 0; i < payload_len; ++i)
        p.payload[i] = static_cast<uint8_t>('a' + (i + seq) % 26);
    p.link_header = canonical_ethernet_header();
    fix_checksums(p);
    return p;
}

struct SessionSpec {
    std::string a_ip = "10.0.0.1";
    std::string b_ip = "10.0.0.2";
    uint16_t a_port = 5000;
    uint16_t b_port = 80;
    int64_t start_us = 1'000'000;
    int64_t gap_us = 1'000;
    std::size_t data_rounds = 0;      // request/ack pairs after the handshake
    std::size_t payload_bytes = 5;
    bool fin = false;
    uint32_t isn_a = 1000;
    uint32_t isn_b = 50'000;
};

// A well-formed TCP conversation with consistent seq/ack bookkeeping.
inline Trace session_trace(const SessionSpec& spec) {
    Trace t;
    int64_t ts = spec.start_us;
    uint32_t a_seq = spec.isn_a;
    uint32_t b_seq = spec.isn_b;

    auto push = [&](bool from_a, uint8_t flags, std::size_t payload_len) {
        const auto& sip = from_a ? spec.a_ip : spec.b_ip;
        const auto& dip = from_a ? spec.b_ip : spec.a_ip;
        const uint16_t sport = from_a ? spec.a_port : spec.b_port;
        const uint16_t dport = from_a ? spec.b_port : spec.a_port;
        uint32_t& own = from_a ? a_seq : b_seq;
        uint32_t& other = from_a ? b_seq : a_seq;
        const uint32_t ack = (flags & tcpflag::kAck) ? other : 0;
        t.packets.push_back(
            make_packet(ts, sip, dip, sport, dport, own, ack, flags, payload_len));
        ts += spec.gap_us;
        if (flags & (tcpflag::kSyn | tcpflag::kFin))
            ++own;
        own += static_cast<uint32_t>(payload_len);
    };

    push(true, tcpflag::kSyn, 0);
    push(false, tcpflag::kSyn | tcpflag::kAck, 0);
    push(true, tcpflag::kAck, 0);
    for (std::size_t i = 0; i < spec.data_rounds; ++i) {
        push(true, tcpflag::kPsh | tcpflag::kAck, spec.payload_bytes);
        push(false, tcpflag::kAck, 0);
    }
    if (spec.fin) {
        push(true, tcpflag::kFin | tcpflag::kAck, 0);
        push(false, tcpflag::kFin | tcpflag::kAck, 0);
        push(true, tcpflag::kAck, 0);
    }
    return t;
}

inline Trace handshake_trace(int64_t start_us = 1'000'000) {
    SessionSpec spec;
    spec.start_us = start_us;
    return session_trace(spec);
}

// Interleaves several traces into one capture ordered by timestamp.
inline Trace merge_traces(const std::vector<Trace>& traces) {
    Trace out;
    for (const auto& t : traces)
        out.packets.insert(out.packets.end(), t.packets.begin(), t.packets.end());
    std::stable_sort(out.packets.begin(), out.packets.end(),
                     [](const auto& a, const auto& b) { return a.ts_us < b.ts_us; });
    return out;
}

// extract -> filter -> ports -> offsets, the standard preparation chain.
inline std::vector<ConnectionTrace> prepared_flows(const Trace& t, uint16_t base_port = 20000,
                                                   const std::string& source = "fixture") {
    auto flows = extract_flows(t, source);
    flows = filter_handshakes(std::move(flows));
    assign_ports(flows, base_port);
    compute_offsets(flows);
    return flows;
}

inline ConnectionTrace prepared_connection(const Trace& t, uint16_t base_port = 20000) {
    auto flows = prepared_flows(t, base_port);
    if (flows.size() != 1)
        throw Error("fixture expected exactly one connection");
    return flows.front();
}

// Duplicates one data packet in place, like a recorded retransmission.
inline Trace with_retransmission(Trace t, std::size_t packet_index) {
    auto copy = t.packets.at(packet_index);
    copy.ts_us += 1;
    t.packets.insert(t.packets.begin() + static_cast<std::ptrdiff_t>(packet_index) + 1, copy);
    return t;
}

// --- virtual-time engine pair ------------------------------------------------

struct PairResult {
    ReplayOutcome initiator;
    ReplayOutcome responder;
    Trace initiator_capture;
    Schedule initiator_schedule;
    Schedule responder_schedule;
};

// Replays one connection between two engines over a simulated link and
// returns both outcomes plus the initiator-side capture.
inline PairResult run_engine_pair(const ConnectionTrace& c, const LinkParams& link = {},
                                  const ReplayConfig& cfg = {}, int64_t sync_epoch_us = 3'000'000,
                                  uint64_t seed = 42) {
    SimNet net(link);
    CaptureTap tap;
    SimEndpoint init_ep(net, "A", "B", c.replay_port, &tap, "init");
    SimEndpoint resp_ep(net, "B", "A", c.replay_port, nullptr, "resp");

    PairResult r;
    const uint32_t ip_a = parse_ip4("10.99.0.1");
    const uint32_t ip_b = parse_ip4("10.99.0.2");
    r.initiator_schedule =
        build_schedule(c, true, ip_a, ip_b, sync_epoch_us + c.offset_us, seed);
    r.responder_schedule =
        build_schedule(c, false, ip_b, ip_a, sync_epoch_us + c.offset_us, seed + 1);

    std::thread ti([&] {
        r.initiator = run_connection(r.initiator_schedule, init_ep, init_ep, cfg);
        init_ep.detach();
    });
    std::thread tr([&] {
        r.responder = run_connection(r.responder_schedule, resp_ep, resp_ep, cfg);
        resp_ep.detach();
    });
    ti.join();
    tr.join();
    r.initiator_capture = tap.to_trace();
    return r;
}

// --- scratch directories -------------------------------------------------------

struct TempDir {
    std::filesystem::path path;

    explicit TempDir(const std::string& prefix) {
        static std::atomic<uint64_t> counter{0};
        path = std::filesystem::temp_directory_path() /
               (prefix + "-" + std::to_string(::getpid()) + "-" +
                std::to_string(counter.fetch_add(1)));
        std::filesystem::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
};

}  // namespace fixtures
