#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "treplay/bytes.hpp"
#include "treplay/errors.hpp"
#include "treplay/packet.hpp"

namespace treplay {

namespace pcapfmt {
constexpr uint32_t kMagicMicro = 0xa1b2c3d4;
constexpr uint32_t kMagicNano = 0xa1b23c4d;
constexpr uint32_t kLinkEthernet = 1;
constexpr uint32_t kLinkLinuxSll = 113;
constexpr std::size_t kGlobalHeaderLen = 24;
constexpr std::size_t kRecordHeaderLen = 16;
}  // namespace pcapfmt

namespace detail {

struct PcapHeader {
    bool swapped = false;      // file endianness differs from big-endian reads below
    bool nanosecond = false;
    uint32_t network = 0;
};

inline uint32_t read_u32(const uint8_t* p, bool le) {
    return le ? load_le32(p) : load_be32(p);
}

inline PcapHeader parse_global_header(std::span<const uint8_t> b) {
    if (b.size() < pcapfmt::kGlobalHeaderLen)
        throw FormatError("pcap file shorter than its global header");
    PcapHeader h;
    const uint32_t magic_be = load_be32(b.data());
    const uint32_t magic_le = load_le32(b.data());
    bool le = false;
    if (magic_be == pcapfmt::kMagicMicro || magic_be == pcapfmt::kMagicNano) {
        le = false;
        h.nanosecond = magic_be == pcapfmt::kMagicNano;
    } else if (magic_le == pcapfmt::kMagicMicro || magic_le == pcapfmt::kMagicNano) {
        le = true;
        h.nanosecond = magic_le == pcapfmt::kMagicNano;
    } else {
        throw FormatError("not a pcap file (bad magic number)");
    }
    h.swapped = le;
    h.network = read_u32(b.data() + 20, le);
    if (h.network != pcapfmt::kLinkEthernet && h.network != pcapfmt::kLinkLinuxSll)
        throw FormatError("unsupported link type " + std::to_string(h.network) +
                          " (expected Ethernet or Linux cooked capture)");
    return h;
}

// Strips the link-layer header; returns the IP bytes or records a skip.
inline std::span<const uint8_t> strip_link(std::span<const uint8_t> frame, uint32_t network,
                                           Trace& trace, std::vector<uint8_t>& link_out) {
    std::size_t link_len = 0;
    uint16_t ethertype = 0;
    if (network == pcapfmt::kLinkEthernet) {
        if (frame.size() < 14) {
            ++trace.skipped_malformed;
            return {};
        }
        link_len = 14;
        ethertype = load_be16(frame.data() + 12);
    } else {  // Linux cooked capture
        if (frame.size() < 16) {
            ++trace.skipped_malformed;
            return {};
        }
        link_len = 16;
        ethertype = load_be16(frame.data() + 14);
    }
    if (ethertype == 0x86dd) {
        ++trace.skipped_ipv6;
        return {};
    }
    if (ethertype != 0x0800) {
        ++trace.skipped_non_ip;
        return {};
    }
    link_out.assign(frame.begin(), frame.begin() + link_len);
    return frame.subspan(link_len);
}

}  // namespace detail

inline Trace read_pcap_bytes(std::span<const uint8_t> file) {
    const auto header = detail::parse_global_header(file);
    Trace trace;
    trace.nanosecond_source = header.nanosecond;
    const bool le = header.swapped;

    std::size_t pos = pcapfmt::kGlobalHeaderLen;
    std::size_t index = 0;
    while (pos < file.size()) {
        if (file.size() - pos < pcapfmt::kRecordHeaderLen)
            throw TruncationError(index, "record " + std::to_string(index) +
                                             ": truncated record header");
        const uint32_t ts_sec = detail::read_u32(file.data() + pos, le);
        const uint32_t ts_frac = detail::read_u32(file.data() + pos + 4, le);
        const uint32_t incl_len = detail::read_u32(file.data() + pos + 8, le);
        const uint32_t orig_len = detail::read_u32(file.data() + pos + 12, le);
        pos += pcapfmt::kRecordHeaderLen;
        if (file.size() - pos < incl_len)
            throw TruncationError(index, "record " + std::to_string(index) +
                                             ": truncated packet data");
        auto frame = file.subspan(pos, incl_len);
        pos += incl_len;

        if (incl_len < orig_len) {
            // snaplen-truncated capture; cannot be replayed faithfully
            ++trace.skipped_malformed;
            ++index;
            continue;
        }

        std::vector<uint8_t> link;
        auto ip = detail::strip_link(frame, header.network, trace, link);
        if (!ip.empty()) {
            const int64_t ts_us =
                static_cast<int64_t>(ts_sec) * 1'000'000 +
                (header.nanosecond ? static_cast<int64_t>(ts_frac) / 1000
                                   : static_cast<int64_t>(ts_frac));
            try {
                PacketRecord p = parse_wire_packet(ip, ts_us);
                p.link_header = std::move(link);
                trace.packets.push_back(std::move(p));
            } catch (const FormatError&) {
                ++trace.skipped_non_tcp;
            }
        }
        ++index;
    }
    return trace;
}

inline Trace read_pcap(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw IoError("cannot open " + path.string());
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                               std::istreambuf_iterator<char>());
    return read_pcap_bytes(bytes);
}

// Output is always little-endian with the microsecond magic, Ethernet link
// type. Records without a usable Ethernet header get the canonical one.
inline std::vector<uint8_t> write_pcap_bytes(const Trace& trace) {
    ByteWriter w;
    w.le32(pcapfmt::kMagicMicro);
    w.le16(2);
    w.le16(4);
    w.le32(0);  // thiszone
    w.le32(0);  // sigfigs
    w.le32(65535);
    w.le32(pcapfmt::kLinkEthernet);
    for (const auto& p : trace.packets) {
        auto frame = to_frame_bytes(is_plain_ethernet(p.link_header) ? p : with_ethernet(p));
        w.le32(static_cast<uint32_t>(p.ts_us / 1'000'000));
        w.le32(static_cast<uint32_t>(p.ts_us % 1'000'000));
        w.le32(static_cast<uint32_t>(frame.size()));
        w.le32(static_cast<uint32_t>(frame.size()));
        w.bytes(frame);
    }
    return w.take();
}

inline void write_pcap(const Trace& trace, const std::filesystem::path& path) {
    auto bytes = write_pcap_bytes(trace);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw IoError("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out)
        throw IoError("write failed: " + path.string());
}

}  // namespace treplay
