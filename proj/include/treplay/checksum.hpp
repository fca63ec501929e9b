#pragma once

#include <cstdint>
#include <span>

#include "treplay/packet.hpp"

namespace treplay {

// Ones-complement sum over 16-bit big-endian words; odd trailing byte is
// padded with zero on the right. Returns the running (unfolded) sum.
inline uint32_t ones_complement_sum(std::span<const uint8_t> data, uint32_t acc = 0) {
    std::size_t i = 0;
    for (; i + 1 < data.size(); i += 2)
        acc += load_be16(data.data() + i);
    if (i < data.size())
        acc += static_cast<uint32_t>(data[i]) << 8;
    return acc;
}

inline uint16_t fold_checksum(uint32_t sum) {
    while (sum >> 16)
        sum = (sum & 0xffff) + (sum >> 16);
    return static_cast<uint16_t>(~sum & 0xffff);
}

// Internet checksum over a byte sequence, as placed into header fields.
inline uint16_t internet_checksum(std::span<const uint8_t> data) {
    return fold_checksum(ones_complement_sum(data));
}

inline uint16_t ip_header_checksum(const PacketRecord& p) {
    PacketRecord copy = p;
    copy.ip_checksum = 0;
    auto bytes = to_wire_bytes(copy);
    return internet_checksum(std::span(bytes).first(p.ip_header_len()));
}

inline uint16_t tcp_segment_checksum(const PacketRecord& p) {
    PacketRecord copy = p;
    copy.tcp_checksum = 0;
    auto bytes = to_wire_bytes(copy);
    const std::size_t tcp_len = copy.tcp_header_len() + copy.payload.size();

    uint8_t pseudo[12];
    store_be32(pseudo, p.src_ip);
    store_be32(pseudo + 4, p.dst_ip);
    pseudo[8] = 0;
    pseudo[9] = 6;
    store_be16(pseudo + 10, static_cast<uint16_t>(tcp_len));

    uint32_t sum = ones_complement_sum(std::span(pseudo, sizeof pseudo));
    sum = ones_complement_sum(std::span(bytes).subspan(p.ip_header_len(), tcp_len), sum);
    return fold_checksum(sum);
}

// Recomputes both the IP header checksum and the TCP checksum (with
// pseudo-header) after any header rewrite.
inline void fix_checksums(PacketRecord& p) {
    p.ip_checksum = ip_header_checksum(p);
    p.tcp_checksum = tcp_segment_checksum(p);
}

inline bool checksums_valid(const PacketRecord& p) {
    return p.ip_checksum == ip_header_checksum(p) && p.tcp_checksum == tcp_segment_checksum(p);
}

}  // namespace treplay
