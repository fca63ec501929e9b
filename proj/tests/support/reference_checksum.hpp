#pragma once

// Stand-alone ones-complement checksum oracle; written independently of
// the library implementation so the two can check each other. Uses
// end-around carry per addition instead of deferred folding.

#include <cstdint>
#include <span>
#include <vector>

#include "treplay/packet.hpp"

namespace refsum {

inline uint16_t add_one_complement(uint16_t a, uint16_t b) {
    const uint32_t s = static_cast<uint32_t>(a) + b;
    return static_cast<uint16_t>((s & 0xffff) + (s >> 16));
}

inline uint16_t sum_words(std::span<const uint8_t> bytes, uint16_t acc = 0) {
    for (std::size_t i = 0; i + 1 < bytes.size(); i += 2)
        acc = add_one_complement(acc, static_cast<uint16_t>(bytes[i] << 8 | bytes[i + 1]));
    if (bytes.size() % 2 != 0)
        acc = add_one_complement(acc, static_cast<uint16_t>(bytes.back() << 8));
    return acc;
}

inline uint16_t checksum(std::span<const uint8_t> bytes) {
    return static_cast<uint16_t>(~sum_words(bytes));
}

// A header region is valid when its words, checksum field included, sum
// to 0xffff.
inline bool ip_header_valid(const treplay::PacketRecord& p) {
    const auto wire = treplay::to_wire_bytes(p);
    return sum_words(std::span(wire).first(p.ip_header_len())) == 0xffff;
}

inline bool tcp_segment_valid(const treplay::PacketRecord& p) {
    const auto wire = treplay::to_wire_bytes(p);
    const std::size_t tcp_len = wire.size() - p.ip_header_len();
    std::vector<uint8_t> pseudo(12);
    treplay::store_be32(pseudo.data(), p.src_ip);
    treplay::store_be32(pseudo.data() + 4, p.dst_ip);
    pseudo[8] = 0;
    pseudo[9] = 6;
    treplay::store_be16(pseudo.data() + 10, static_cast<uint16_t>(tcp_len));
    uint16_t acc = sum_words(pseudo);
    acc = sum_words(std::span(wire).subspan(p.ip_header_len()), acc);
    return acc == 0xffff;
}

}  // namespace refsum
