#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "treplay/bytes.hpp"
#include "treplay/errors.hpp"

namespace treplay {

// Control-channel message tags. Every frame is a 4-byte big-endian body
// length followed by one tag byte and the tag-specific payload; all
// integers are big-endian. File payloads are raw pcap bytes preceded by a
// 2-byte name length and the name.
namespace msgtag {
constexpr uint8_t kUpload = 1;
constexpr uint8_t kStart = 2;
constexpr uint8_t kStatus = 3;
constexpr uint8_t kFetch = 4;
constexpr uint8_t kError = 5;
}  // namespace msgtag

struct FileBlob {
    std::string name;
    std::vector<uint8_t> bytes;

    bool operator==(const FileBlob&) const = default;
};

struct PeerInfo {
    std::string node_id;
    std::string address;  // data-plane address, or the node id in simulation

    bool operator==(const PeerInfo&) const = default;
};

// Controller -> agent: the node's workload for one run.
struct UploadMsg {
    std::string node_id;  // identity assigned to the receiving agent
    uint64_t seed = 0;
    uint64_t inactivity_timeout_us = 10'000'000;
    uint8_t duplicate_policy = 0;  // DuplicatePolicy numeric value
    std::vector<PeerInfo> peers;
    std::string manifest;
    std::vector<FileBlob> files;

    bool operator==(const UploadMsg&) const = default;
};

struct StartMsg {
    int64_t sync_epoch_us = 0;

    bool operator==(const StartMsg&) const = default;
};

namespace enginestate {
constexpr uint8_t kPending = 0;
constexpr uint8_t kRunning = 1;
constexpr uint8_t kCompleted = 2;
constexpr uint8_t kTimedOut = 3;
constexpr uint8_t kAborted = 4;
inline bool terminal(uint8_t s) { return s >= kCompleted; }
inline const char* name(uint8_t s) {
    switch (s) {
        case kPending: return "pending";
        case kRunning: return "running";
        case kCompleted: return "completed";
        case kTimedOut: return "timed-out";
        case kAborted: return "aborted";
    }
    return "?";
}
}  // namespace enginestate

struct EngineStatus {
    std::string name;  // encoded connection file name
    uint8_t state = enginestate::kPending;
    uint64_t sent = 0;
    uint64_t received = 0;
    uint64_t duplicates = 0;
    uint64_t unexpected = 0;
    uint64_t missed = 0;
    int64_t first_send_us = -1;
    std::string detail;

    bool operator==(const EngineStatus&) const = default;
};

// Agent -> controller: snapshot of this node's engines. Doubles as the
// acknowledgment for Upload and Start.
struct StatusMsg {
    std::string node_id;
    int64_t clock_offset_us = 0;  // local estimate, diagnostics only
    std::vector<std::string> warnings;
    std::vector<EngineStatus> connections;

    bool all_terminal() const {
        for (const auto& c : connections)
            if (!enginestate::terminal(c.state))
                return false;
        return true;
    }

    bool operator==(const StatusMsg&) const = default;
};

struct FetchMsg {
    bool operator==(const FetchMsg&) const = default;
};

// Agent -> controller: reply to Fetch (same tag, response form).
struct CaptureMsg {
    std::vector<FileBlob> files;

    bool operator==(const CaptureMsg&) const = default;
};

struct ErrorMsg {
    std::string text;

    bool operator==(const ErrorMsg&) const = default;
};

using AgentMessage = std::variant<UploadMsg, StartMsg, StatusMsg, FetchMsg, CaptureMsg, ErrorMsg>;

namespace detail {

inline void put_file(ByteWriter& w, const FileBlob& f) {
    w.str16(f.name);
    w.blob32(f.bytes);
}

inline FileBlob get_file(ByteReader& r) {
    FileBlob f;
    f.name = r.str16();
    f.bytes = r.blob32();
    return f;
}

inline void put_files(ByteWriter& w, const std::vector<FileBlob>& files) {
    w.be32(static_cast<uint32_t>(files.size()));
    for (const auto& f : files)
        put_file(w, f);
}

inline std::vector<FileBlob> get_files(ByteReader& r) {
    std::vector<FileBlob> files(r.be32());
    for (auto& f : files)
        f = get_file(r);
    return files;
}

}  // namespace detail

// Serializes one message to a frame body: tag byte + payload.
inline std::vector<uint8_t> encode_message(const AgentMessage& msg) {
    ByteWriter w;
    if (const auto* u = std::get_if<UploadMsg>(&msg)) {
        w.u8(msgtag::kUpload);
        w.str16(u->node_id);
        w.be64(u->seed);
        w.be64(u->inactivity_timeout_us);
        w.u8(u->duplicate_policy);
        w.be16(static_cast<uint16_t>(u->peers.size()));
        for (const auto& p : u->peers) {
            w.str16(p.node_id);
            w.str16(p.address);
        }
        w.blob32(std::span(reinterpret_cast<const uint8_t*>(u->manifest.data()),
                           u->manifest.size()));
        detail::put_files(w, u->files);
    } else if (const auto* s = std::get_if<StartMsg>(&msg)) {
        w.u8(msgtag::kStart);
        w.be64(static_cast<uint64_t>(s->sync_epoch_us));
    } else if (const auto* st = std::get_if<StatusMsg>(&msg)) {
        w.u8(msgtag::kStatus);
        w.str16(st->node_id);
        w.be64(static_cast<uint64_t>(st->clock_offset_us));
        w.be16(static_cast<uint16_t>(st->warnings.size()));
        for (const auto& warning : st->warnings)
            w.str16(warning);
        w.be32(static_cast<uint32_t>(st->connections.size()));
        for (const auto& c : st->connections) {
            w.str16(c.name);
            w.u8(c.state);
            w.be64(c.sent);
            w.be64(c.received);
            w.be64(c.duplicates);
            w.be64(c.unexpected);
            w.be64(c.missed);
            w.be64(static_cast<uint64_t>(c.first_send_us));
            w.str16(c.detail);
        }
    } else if (std::get_if<FetchMsg>(&msg)) {
        w.u8(msgtag::kFetch);
        w.u8(0);  // request form
    } else if (const auto* cap = std::get_if<CaptureMsg>(&msg)) {
        w.u8(msgtag::kFetch);
        w.u8(1);  // response form
        detail::put_files(w, cap->files);
    } else if (const auto* e = std::get_if<ErrorMsg>(&msg)) {
        w.u8(msgtag::kError);
        w.str16(e->text);
    }
    return w.take();
}

inline AgentMessage decode_message(std::span<const uint8_t> body) {
    ByteReader r(body);
    const uint8_t tag = r.u8();
    switch (tag) {
        case msgtag::kUpload: {
            UploadMsg u;
            u.node_id = r.str16();
            u.seed = r.be64();
            u.inactivity_timeout_us = r.be64();
            u.duplicate_policy = r.u8();
            u.peers.resize(r.be16());
            for (auto& p : u.peers) {
                p.node_id = r.str16();
                p.address = r.str16();
            }
            auto manifest = r.blob32();
            u.manifest.assign(manifest.begin(), manifest.end());
            u.files = detail::get_files(r);
            return u;
        }
        case msgtag::kStart: {
            StartMsg s;
            s.sync_epoch_us = static_cast<int64_t>(r.be64());
            return s;
        }
        case msgtag::kStatus: {
            StatusMsg st;
            st.node_id = r.str16();
            st.clock_offset_us = static_cast<int64_t>(r.be64());
            st.warnings.resize(r.be16());
            for (auto& warning : st.warnings)
                warning = r.str16();
            st.connections.resize(r.be32());
            for (auto& c : st.connections) {
                c.name = r.str16();
                c.state = r.u8();
                c.sent = r.be64();
                c.received = r.be64();
                c.duplicates = r.be64();
                c.unexpected = r.be64();
                c.missed = r.be64();
                c.first_send_us = static_cast<int64_t>(r.be64());
                c.detail = r.str16();
            }
            return st;
        }
        case msgtag::kFetch: {
            if (r.u8() == 0)
                return FetchMsg{};
            CaptureMsg cap;
            cap.files = detail::get_files(r);
            return cap;
        }
        case msgtag::kError: {
            return ErrorMsg{r.str16()};
        }
        default:
            throw ProtocolError("unknown message tag " + std::to_string(tag));
    }
}

// Blocking byte pipe the framed protocol runs over.
class ByteStream {
  public:
    virtual ~ByteStream() = default;
    virtual void write_all(std::span<const uint8_t> data) = 0;

    // Fills buf completely. Returns false on a clean end of stream before
    // the first byte; throws TransportError on a mid-read cut.
    virtual bool read_exact(std::span<uint8_t> buf) = 0;
};

constexpr uint32_t kMaxFrameBytes = 1u << 30;

inline void write_frame(ByteStream& io, const AgentMessage& msg) {
    const auto body = encode_message(msg);
    uint8_t len[4];
    store_be32(len, static_cast<uint32_t>(body.size()));
    io.write_all(std::span(len, 4));
    io.write_all(body);
}

inline std::optional<AgentMessage> read_frame(ByteStream& io) {
    uint8_t len[4];
    if (!io.read_exact(std::span(len, 4)))
        return std::nullopt;
    const uint32_t n = load_be32(len);
    if (n == 0 || n > kMaxFrameBytes)
        throw ProtocolError("bad frame length " + std::to_string(n));
    std::vector<uint8_t> body(n);
    if (!io.read_exact(body))
        throw TransportError("connection closed inside a frame");
    return decode_message(body);
}

}  // namespace treplay
