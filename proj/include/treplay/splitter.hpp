#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "treplay/checksum.hpp"
#include "treplay/errors.hpp"
#include "treplay/packet.hpp"

namespace treplay {

// One TCP connection carved out of a capture, ready for distribution.
struct ConnectionTrace {
    uint32_t stream_index = 0;  // order of first appearance in the input
    std::vector<PacketRecord> packets;
    uint32_t initiator_ip = 0;
    uint32_t responder_ip = 0;
    uint16_t replay_port = 0;
    int64_t offset_us = 0;  // start delay relative to the earliest connection
    std::string source_name;

    int64_t first_ts_us() const { return packets.empty() ? 0 : packets.front().ts_us; }
};

// Replaces anything that would collide with the name grammar.
inline std::string sanitize_source_name(std::string s) {
    if (auto dot = s.rfind(".pcap"); dot != std::string::npos && dot == s.size() - 5)
        s.erase(dot);
    for (auto& c : s) {
        const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') ||
                        (c >= '0' && c <= '9') || c == '-' || c == '.' || c == '_';
        if (!ok)
            c = '-';
    }
    if (s.empty())
        s = "trace";
    return s;
}

// Groups packets by flow key, starting a fresh stream whenever a new
// SYN (without ACK) reuses an existing 4-tuple. A retransmitted initial
// SYN (same source, same sequence number) stays in its stream.
inline std::vector<ConnectionTrace> extract_flows(const Trace& trace,
                                                  const std::string& source_name = "trace") {
    std::vector<ConnectionTrace> flows;
    std::unordered_map<FlowKey, std::size_t, FlowKeyHash> active;
    const auto source = sanitize_source_name(source_name);

    for (const auto& p : trace.packets) {
        const auto key = flow_key(p);
        auto it = active.find(key);
        bool fresh = it == active.end();
        if (!fresh && p.syn_only()) {
            const auto& first = flows[it->second].packets.front();
            const bool syn_retransmit =
                first.syn_only() && first.src_ip == p.src_ip && first.src_port == p.src_port &&
                first.seq == p.seq;
            if (!syn_retransmit)
                fresh = true;
        }
        if (fresh) {
            ConnectionTrace c;
            c.stream_index = static_cast<uint32_t>(flows.size());
            c.initiator_ip = p.src_ip;
            c.responder_ip = p.dst_ip;
            c.source_name = source;
            flows.push_back(std::move(c));
            active[key] = flows.size() - 1;
            it = active.find(key);
        }
        flows[it->second].packets.push_back(p);
    }
    return flows;
}

struct FilterStats {
    uint64_t dropped_flows = 0;
    uint64_t dropped_packets = 0;
};

// Keeps only connections with a full handshake in front of them: at least
// three packets, starting with a bare SYN.
inline std::vector<ConnectionTrace> filter_handshakes(std::vector<ConnectionTrace> flows,
                                                      FilterStats* stats = nullptr) {
    std::vector<ConnectionTrace> kept;
    kept.reserve(flows.size());
    for (auto& f : flows) {
        const bool ok = f.packets.size() >= 3 && f.packets.front().syn_only();
        if (ok) {
            kept.push_back(std::move(f));
        } else if (stats) {
            ++stats->dropped_flows;
            stats->dropped_packets += f.packets.size();
        }
    }
    return kept;
}

// Gives connection i the port base_port + i and rewrites both sides of
// every packet to it, recomputing checksums.
inline void assign_ports(std::vector<ConnectionTrace>& flows, uint16_t base_port = 20000) {
    if (!flows.empty() && static_cast<uint32_t>(base_port) + flows.size() - 1 > 65535)
        throw CapacityError("port space exhausted: base " + std::to_string(base_port) + " + " +
                            std::to_string(flows.size()) + " connections exceeds 65535");
    for (std::size_t i = 0; i < flows.size(); ++i) {
        flows[i].replay_port = static_cast<uint16_t>(base_port + i);
        for (auto& p : flows[i].packets) {
            p.src_port = flows[i].replay_port;
            p.dst_port = flows[i].replay_port;
            fix_checksums(p);
        }
    }
}

// Start offset of each connection relative to the earliest first packet.
inline void compute_offsets(std::vector<ConnectionTrace>& flows) {
    if (flows.empty())
        return;
    int64_t earliest = flows.front().first_ts_us();
    for (const auto& f : flows)
        earliest = std::min(earliest, f.first_ts_us());
    for (auto& f : flows)
        f.offset_us = f.first_ts_us() - earliest;
}

// Throws StateError if a connection breaks the invariants the replay
// engine depends on. Used by tests and by agents on upload.
inline void validate_connection(const ConnectionTrace& c) {
    if (c.packets.size() < 3)
        throw StateError("connection " + std::to_string(c.stream_index) +
                         ": fewer than 3 packets");
    const auto& first = c.packets.front();
    if (!first.syn_only())
        throw StateError("connection " + std::to_string(c.stream_index) +
                         ": does not begin with a bare SYN");
    if (first.src_ip != c.initiator_ip)
        throw StateError("connection " + std::to_string(c.stream_index) +
                         ": SYN source is not the initiator");
    const auto key = flow_key(first);
    for (const auto& p : c.packets)
        if (flow_key(p) != key)
            throw StateError("connection " + std::to_string(c.stream_index) +
                             ": packets span multiple flows");
    if (c.offset_us < 0)
        throw StateError("connection " + std::to_string(c.stream_index) + ": negative offset");
}

// --- connection file naming ---------------------------------------------

struct ConnectionName {
    std::string initiator_ip;
    std::string responder_ip;
    uint32_t stream_index = 0;
    std::string source_name;
    uint16_t replay_port = 0;
    int64_t offset_us = 0;

    bool operator==(const ConnectionName&) const = default;
};

inline std::string encode_name(const ConnectionName& n) {
    std::ostringstream out;
    out << n.initiator_ip << '_' << n.responder_ip << "_s" << n.stream_index << '_'
        << n.source_name << "_p" << n.replay_port << "_o" << n.offset_us << ".pcap";
    return out.str();
}

inline std::string encode_name(const ConnectionTrace& c) {
    return encode_name(ConnectionName{format_ip4(c.initiator_ip), format_ip4(c.responder_ip),
                                      c.stream_index, c.source_name, c.replay_port, c.offset_us});
}

inline ConnectionName decode_name(const std::string& name) {
    auto fail = [&](const std::string& why) -> ParseError {
        return ParseError("bad connection file name '" + name + "': " + why);
    };
    if (name.size() < 5 || name.substr(name.size() - 5) != ".pcap")
        throw fail("missing .pcap suffix");
    const std::string stem = name.substr(0, name.size() - 5);

    const auto opos = stem.rfind("_o");
    if (opos == std::string::npos)
        throw fail("missing offset field");
    const auto ppos = stem.rfind("_p", opos == 0 ? 0 : opos - 1);
    if (ppos == std::string::npos)
        throw fail("missing port field");

    auto parse_uint = [&](const std::string& s, uint64_t max, const char* what) -> uint64_t {
        if (s.empty())
            throw fail(std::string("empty ") + what);
        uint64_t v = 0;
        for (char c : s) {
            if (c < '0' || c > '9')
                throw fail(std::string("non-numeric ") + what);
            v = v * 10 + static_cast<uint64_t>(c - '0');
            if (v > max)
                throw fail(std::string(what) + " out of range");
        }
        return v;
    };

    ConnectionName n;
    n.offset_us = static_cast<int64_t>(
        parse_uint(stem.substr(opos + 2), static_cast<uint64_t>(1) << 62, "offset"));
    n.replay_port =
        static_cast<uint16_t>(parse_uint(stem.substr(ppos + 2, opos - ppos - 2), 65535, "port"));

    const std::string head = stem.substr(0, ppos);
    const auto u1 = head.find('_');
    if (u1 == std::string::npos)
        throw fail("missing responder address");
    const auto u2 = head.find('_', u1 + 1);
    if (u2 == std::string::npos)
        throw fail("missing stream field");
    n.initiator_ip = head.substr(0, u1);
    n.responder_ip = head.substr(u1 + 1, u2 - u1 - 1);
    if (!try_parse_ip4(n.initiator_ip) || !try_parse_ip4(n.responder_ip))
        throw fail("endpoint is not an IPv4 address");
    const auto u3 = head.find('_', u2 + 1);
    if (u3 == std::string::npos || head[u2 + 1] != 's')
        throw fail("missing stream field");
    n.stream_index = static_cast<uint32_t>(
        parse_uint(head.substr(u2 + 2, u3 - u2 - 2), 0xffffffffull, "stream index"));
    n.source_name = head.substr(u3 + 1);
    if (n.source_name.empty())
        throw fail("empty source name");
    return n;
}

// --- per-node partitioning ------------------------------------------------

struct HostMapping {
    std::map<uint32_t, std::string> node_of;

    std::optional<std::string> find(uint32_t ip) const {
        auto it = node_of.find(ip);
        if (it == node_of.end())
            return std::nullopt;
        return it->second;
    }
};

// Plain text, one "<ip> <node-id>" pair per line, '#' comments.
inline HostMapping parse_mapping(const std::string& text) {
    HostMapping m;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos)
            line.erase(hash);
        std::istringstream fields(line);
        std::string ip, node, extra;
        if (!(fields >> ip))
            continue;
        if (!(fields >> node) || (fields >> extra))
            throw ParseError("mapping line " + std::to_string(lineno) +
                             ": expected '<ip> <node-id>'");
        m.node_of[parse_ip4(ip)] = node;
    }
    return m;
}

struct ManifestEntry {
    std::string name;
    std::string initiator_node;
    std::string responder_node;
};

struct NodePlan {
    std::map<std::string, std::vector<ConnectionTrace>> by_node;
    std::vector<ManifestEntry> manifest;
};

// Places every connection with both of its endpoints' nodes (once, if they
// coincide). Throws MappingError listing every unmapped IP.
inline NodePlan partition(const std::vector<ConnectionTrace>& flows, const HostMapping& mapping) {
    std::set<std::string> unmapped;
    for (const auto& f : flows) {
        if (!mapping.find(f.initiator_ip))
            unmapped.insert(format_ip4(f.initiator_ip));
        if (!mapping.find(f.responder_ip))
            unmapped.insert(format_ip4(f.responder_ip));
    }
    if (!unmapped.empty()) {
        std::string list;
        for (const auto& ip : unmapped)
            list += (list.empty() ? "" : ", ") + ip;
        throw MappingError("no node mapping for: " + list);
    }

    NodePlan plan;
    for (const auto& f : flows) {
        const auto init_node = *mapping.find(f.initiator_ip);
        const auto resp_node = *mapping.find(f.responder_ip);
        plan.by_node[init_node].push_back(f);
        if (resp_node != init_node)
            plan.by_node[resp_node].push_back(f);
        plan.manifest.push_back({encode_name(f), init_node, resp_node});
    }
    return plan;
}

inline std::string manifest_text(const std::vector<ManifestEntry>& entries) {
    std::string out;
    for (const auto& e : entries)
        out += e.name + " " + e.initiator_node + " " + e.responder_node + "\n";
    return out;
}

inline std::vector<ManifestEntry> parse_manifest(const std::string& text) {
    std::vector<ManifestEntry> entries;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::istringstream fields(line);
        ManifestEntry e;
        std::string extra;
        if (!(fields >> e.name))
            continue;
        if (!(fields >> e.initiator_node >> e.responder_node) || (fields >> extra))
            throw ParseError("manifest line " + std::to_string(lineno) +
                             ": expected '<name> <initiator-node> <responder-node>'");
        entries.push_back(std::move(e));
    }
    return entries;
}

}  // namespace treplay
