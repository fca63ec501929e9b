#pragma once

#include <compare>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "treplay/bytes.hpp"
#include "treplay/errors.hpp"

namespace treplay {

namespace tcpflag {
constexpr uint8_t kFin = 0x01;
constexpr uint8_t kSyn = 0x02;
constexpr uint8_t kRst = 0x04;
constexpr uint8_t kPsh = 0x08;
constexpr uint8_t kAck = 0x10;
constexpr uint8_t kUrg = 0x20;
}  // namespace tcpflag

// One captured IPv4/TCP packet. Header fields are stored decoded (host
// order) together with the exact option and link-layer bytes, so that
// serializing and re-parsing a record reproduces it bit for bit.
struct PacketRecord {
    int64_t ts_us = 0;  // capture timestamp, microseconds since the Unix epoch

    uint32_t src_ip = 0;
    uint32_t dst_ip = 0;
    uint16_t src_port = 0;
    uint16_t dst_port = 0;
    uint32_t seq = 0;
    uint32_t ack = 0;
    uint8_t flags = 0;
    uint16_t window = 0;
    uint16_t urgent = 0;

    // IPv4 header fields kept verbatim for byte-exact round trips.
    uint8_t tos = 0;
    uint16_t ip_id = 0;
    uint16_t frag = 0;  // flags + fragment offset field
    uint8_t ttl = 64;
    uint16_t ip_checksum = 0;
    uint16_t tcp_checksum = 0;

    std::vector<uint8_t> link_header;  // as captured; empty for bare IP packets
    std::vector<uint8_t> ip_options;
    std::vector<uint8_t> tcp_options;
    std::vector<uint8_t> payload;

    std::size_t ip_header_len() const { return 20 + ip_options.size(); }
    std::size_t tcp_header_len() const { return 20 + tcp_options.size(); }
    std::size_t raw_len() const {
        return link_header.size() + ip_header_len() + tcp_header_len() + payload.size();
    }

    bool has(uint8_t flag) const { return (flags & flag) != 0; }
    bool syn_only() const { return has(tcpflag::kSyn) && !has(tcpflag::kAck); }

    bool operator==(const PacketRecord&) const = default;
};

inline std::string flags_to_string(uint8_t flags) {
    std::string out;
    auto add = [&](uint8_t f, const char* name) {
        if (flags & f) {
            if (!out.empty())
                out += '+';
            out += name;
        }
    };
    add(tcpflag::kSyn, "SYN");
    add(tcpflag::kAck, "ACK");
    add(tcpflag::kFin, "FIN");
    add(tcpflag::kRst, "RST");
    add(tcpflag::kPsh, "PSH");
    add(tcpflag::kUrg, "URG");
    return out.empty() ? "none" : out;
}

// IP header + TCP header + payload, without any link-layer framing.
inline std::vector<uint8_t> to_wire_bytes(const PacketRecord& p) {
    std::vector<uint8_t> out(p.ip_header_len() + p.tcp_header_len() + p.payload.size());
    uint8_t* ip = out.data();
    const auto total_len = static_cast<uint16_t>(out.size());
    ip[0] = static_cast<uint8_t>(0x40 | (p.ip_header_len() / 4));
    ip[1] = p.tos;
    store_be16(ip + 2, total_len);
    store_be16(ip + 4, p.ip_id);
    store_be16(ip + 6, p.frag);
    ip[8] = p.ttl;
    ip[9] = 6;  // TCP
    store_be16(ip + 10, p.ip_checksum);
    store_be32(ip + 12, p.src_ip);
    store_be32(ip + 16, p.dst_ip);
    std::copy(p.ip_options.begin(), p.ip_options.end(), ip + 20);

    uint8_t* tcp = ip + p.ip_header_len();
    store_be16(tcp, p.src_port);
    store_be16(tcp + 2, p.dst_port);
    store_be32(tcp + 4, p.seq);
    store_be32(tcp + 8, p.ack);
    tcp[12] = static_cast<uint8_t>((p.tcp_header_len() / 4) << 4);
    tcp[13] = p.flags;
    store_be16(tcp + 14, p.window);
    store_be16(tcp + 16, p.tcp_checksum);
    store_be16(tcp + 18, p.urgent);
    std::copy(p.tcp_options.begin(), p.tcp_options.end(), tcp + 20);

    std::copy(p.payload.begin(), p.payload.end(), tcp + p.tcp_header_len());
    return out;
}

inline std::vector<uint8_t> to_frame_bytes(const PacketRecord& p) {
    std::vector<uint8_t> out = p.link_header;
    auto wire = to_wire_bytes(p);
    out.insert(out.end(), wire.begin(), wire.end());
    return out;
}

// Parses an IPv4/TCP packet starting at the IP header. Throws FormatError
// when the bytes are not a complete IPv4/TCP packet.
inline PacketRecord parse_wire_packet(std::span<const uint8_t> b, int64_t ts_us = 0) {
    if (b.size() < 20)
        throw FormatError("short IP header");
    const uint8_t version = b[0] >> 4;
    if (version != 4)
        throw FormatError("not IPv4");
    const std::size_t ihl = static_cast<std::size_t>(b[0] & 0x0f) * 4;
    if (ihl < 20 || b.size() < ihl)
        throw FormatError("bad IP header length");
    if (b[9] != 6)
        throw FormatError("not TCP");
    const uint16_t total_len = load_be16(b.data() + 2);
    if (total_len < ihl + 20 || total_len > b.size())
        throw FormatError("bad IP total length");
    if ((load_be16(b.data() + 6) & 0x3fff) != 0)
        throw FormatError("fragmented packet");

    PacketRecord p;
    p.ts_us = ts_us;
    p.tos = b[1];
    p.ip_id = load_be16(b.data() + 4);
    p.frag = load_be16(b.data() + 6);
    p.ttl = b[8];
    p.ip_checksum = load_be16(b.data() + 10);
    p.src_ip = load_be32(b.data() + 12);
    p.dst_ip = load_be32(b.data() + 16);
    p.ip_options.assign(b.begin() + 20, b.begin() + ihl);

    auto tcp = b.subspan(ihl, total_len - ihl);
    const std::size_t doff = static_cast<std::size_t>(tcp[12] >> 4) * 4;
    if (doff < 20 || tcp.size() < doff)
        throw FormatError("bad TCP header length");
    p.src_port = load_be16(tcp.data());
    p.dst_port = load_be16(tcp.data() + 2);
    p.seq = load_be32(tcp.data() + 4);
    p.ack = load_be32(tcp.data() + 8);
    p.flags = tcp[13] & 0x3f;
    p.window = load_be16(tcp.data() + 14);
    p.tcp_checksum = load_be16(tcp.data() + 16);
    p.urgent = load_be16(tcp.data() + 18);
    p.tcp_options.assign(tcp.begin() + 20, tcp.begin() + doff);
    p.payload.assign(tcp.begin() + doff, tcp.end());
    return p;
}

// Cheap peek used by transport demultiplexers: source port of the inner
// TCP segment, or nullopt if the bytes don't look like IPv4/TCP.
inline std::optional<uint16_t> peek_replay_port(std::span<const uint8_t> b) {
    if (b.size() < 20 || (b[0] >> 4) != 4 || b[9] != 6)
        return std::nullopt;
    const std::size_t ihl = static_cast<std::size_t>(b[0] & 0x0f) * 4;
    if (ihl < 20 || b.size() < ihl + 4)
        return std::nullopt;
    return load_be16(b.data() + ihl);
}

constexpr std::size_t kEthernetHeaderLen = 14;

// Canonical Ethernet framing for packets synthesized in memory.
inline std::vector<uint8_t> canonical_ethernet_header() {
    return {0x02, 0x00, 0x00, 0x00, 0x00, 0x02, 0x02, 0x00, 0x00, 0x00, 0x00, 0x01, 0x08, 0x00};
}

inline bool is_plain_ethernet(const std::vector<uint8_t>& link) {
    return link.size() == kEthernetHeaderLen && load_be16(link.data() + 12) == 0x0800;
}

inline PacketRecord with_ethernet(PacketRecord p) {
    if (!is_plain_ethernet(p.link_header))
        p.link_header = canonical_ethernet_header();
    return p;
}

// An ordered capture slice plus ingest bookkeeping.
struct Trace {
    std::vector<PacketRecord> packets;
    bool nanosecond_source = false;

    // records skipped on load, by reason
    uint64_t skipped_non_ip = 0;
    uint64_t skipped_ipv6 = 0;
    uint64_t skipped_non_tcp = 0;
    uint64_t skipped_malformed = 0;

    uint64_t skipped_total() const {
        return skipped_non_ip + skipped_ipv6 + skipped_non_tcp + skipped_malformed;
    }
    std::size_t size() const { return packets.size(); }
    bool empty() const { return packets.empty(); }
};

// Canonical bidirectional connection identity: the lower (ip, port)
// endpoint always comes first, so both directions map to the same key.
struct FlowKey {
    uint32_t ip_a = 0;
    uint16_t port_a = 0;
    uint32_t ip_b = 0;
    uint16_t port_b = 0;

    auto operator<=>(const FlowKey&) const = default;
};

inline FlowKey flow_key(const PacketRecord& p) {
    const auto src = std::make_pair(p.src_ip, p.src_port);
    const auto dst = std::make_pair(p.dst_ip, p.dst_port);
    if (src <= dst)
        return {p.src_ip, p.src_port, p.dst_ip, p.dst_port};
    return {p.dst_ip, p.dst_port, p.src_ip, p.src_port};
}

struct FlowKeyHash {
    std::size_t operator()(const FlowKey& k) const {
        uint64_t h = 1469598103934665603ull;
        for (uint64_t v : {static_cast<uint64_t>(k.ip_a) << 16 | k.port_a,
                           static_cast<uint64_t>(k.ip_b) << 16 | k.port_b}) {
            h ^= v;
            h *= 1099511628211ull;
        }
        return static_cast<std::size_t>(h);
    }
};

}  // namespace treplay
