#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "treplay/channel.hpp"
#include "treplay/clock.hpp"
#include "treplay/errors.hpp"
#include "treplay/net.hpp"
#include "treplay/pcap.hpp"
#include "treplay/protocol.hpp"
#include "treplay/replay.hpp"
#include "treplay/schedule.hpp"
#include "treplay/splitter.hpp"
#include "treplay/udp.hpp"

namespace treplay {

// What an agent needs from its host to attach one engine to the network.
struct EngineSpec {
    std::string self_node;
    std::string peer_node;
    uint16_t port = 0;
    bool initiator_role = true;
    CaptureTap* tap = nullptr;  // set when this node records the connection
    std::string actor_name;
};

struct EngineIo {
    std::shared_ptr<PacketChannel> channel;
    std::shared_ptr<Clock> clock;
};

using EngineIoFactory = std::function<EngineIo(const EngineSpec&)>;

// Deterministic replay addresses: nodes sorted by id get 10.99.0.1, .2, ...
inline std::map<std::string, uint32_t> replay_addresses(const std::vector<PeerInfo>& peers) {
    std::vector<std::string> ids;
    ids.reserve(peers.size());
    for (const auto& p : peers)
        ids.push_back(p.node_id);
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    std::map<std::string, uint32_t> out;
    const uint32_t base = parse_ip4("10.99.0.0");
    for (std::size_t i = 0; i < ids.size(); ++i)
        out[ids[i]] = base + static_cast<uint32_t>(i + 1);
    return out;
}

inline uint64_t engine_seed(uint64_t run_seed, uint32_t stream_index, bool initiator_role) {
    uint64_t h = run_seed ^ 0x9e3779b97f4a7c15ull;
    h ^= (static_cast<uint64_t>(stream_index) + 1) * 0xbf58476d1ce4e5b9ull;
    h ^= initiator_role ? 0x94d049bb133111ebull : 0;
    return h;
}

// One node's replay service: accepts a workload, launches an engine per
// connection at the synchronized start, answers status polls, and hands
// back the capture of locally initiated connections. Transport-agnostic;
// the host supplies the engine I/O factory.
class AgentCore {
  public:
    // on_upload runs after the previous run's engines are torn down and
    // before files are accepted; hosts rewire their data plane there.
    explicit AgentCore(EngineIoFactory factory,
                       std::function<int64_t()> clock_offset_probe = {},
                       std::function<void(const UploadMsg&)> on_upload = {})
        : factory_(std::move(factory)),
          clock_offset_probe_(std::move(clock_offset_probe)),
          on_upload_(std::move(on_upload)) {}

    ~AgentCore() { join_engines(); }

    // Exact wire path used in every mode: frame body in, frame body out.
    std::vector<uint8_t> handle_frame(std::span<const uint8_t> body) {
        AgentMessage reply;
        try {
            reply = handle(decode_message(body));
        } catch (const Error& e) {
            reply = ErrorMsg{e.what()};
        }
        return encode_message(reply);
    }

    AgentMessage handle(const AgentMessage& msg) {
        std::lock_guard lock(handler_m_);
        if (const auto* u = std::get_if<UploadMsg>(&msg))
            return handle_upload(*u);
        if (const auto* s = std::get_if<StartMsg>(&msg))
            return handle_start(*s);
        if (std::get_if<StatusMsg>(&msg))
            return snapshot();
        if (std::get_if<FetchMsg>(&msg))
            return handle_fetch();
        return ErrorMsg{"unexpected message"};
    }

    StatusMsg snapshot() {
        std::lock_guard lock(state_m_);
        StatusMsg st;
        st.node_id = node_id_;
        st.clock_offset_us = clock_offset_probe_ ? clock_offset_probe_() : 0;
        st.warnings = warnings_;
        for (const auto& e : engines_)
            st.connections.push_back(e->status);
        return st;
    }

    bool all_terminal() {
        std::lock_guard lock(state_m_);
        for (const auto& e : engines_)
            if (!enginestate::terminal(e->status.state))
                return false;
        return true;
    }

    const std::string& node_id() const { return node_id_; }

  private:
    struct AcceptedConnection {
        ConnectionTrace trace;
        ManifestEntry entry;
    };

    struct Engine {
        EngineStatus status;
        ConnectionTrace trace;
        std::string peer_node;
        bool initiator_role = true;
        std::thread thread;
    };

    AgentMessage handle_upload(const UploadMsg& u) {
        {
            std::lock_guard lock(state_m_);
            if (started_ && !all_terminal_locked())
                return ErrorMsg{"upload while a run is still active"};
        }
        join_engines();
        reset_state();
        if (on_upload_)
            on_upload_(u);

        node_id_ = u.node_id;
        seed_ = u.seed;
        peers_ = u.peers;
        config_.inactivity_timeout_us = static_cast<int64_t>(u.inactivity_timeout_us);
        config_.duplicate_policy = u.duplicate_policy == 0 ? DuplicatePolicy::Strict
                                                           : DuplicatePolicy::DropScheduledDuplicates;

        std::map<std::string, ManifestEntry> manifest;
        try {
            for (auto& e : parse_manifest(u.manifest))
                manifest[e.name] = e;
        } catch (const ParseError& e) {
            return ErrorMsg{std::string("bad manifest: ") + e.what()};
        }

        std::lock_guard lock(state_m_);
        uploaded_ = true;
        for (const auto& f : u.files) {
            try {
                const auto name = decode_name(f.name);
                auto it = manifest.find(f.name);
                if (it == manifest.end())
                    throw ParseError("file not listed in manifest");
                auto trace = read_pcap_bytes(f.bytes);
                ConnectionTrace c;
                c.packets = std::move(trace.packets);
                c.stream_index = name.stream_index;
                c.initiator_ip = parse_ip4(name.initiator_ip);
                c.responder_ip = parse_ip4(name.responder_ip);
                c.replay_port = name.replay_port;
                c.offset_us = name.offset_us;
                c.source_name = name.source_name;
                validate_connection(c);
                const auto& entry = it->second;
                if (entry.initiator_node != node_id_ && entry.responder_node != node_id_)
                    throw ParseError("connection is not addressed to this node");
                accepted_.push_back({std::move(c), entry});
            } catch (const Error& e) {
                warnings_.push_back("rejected " + f.name + ": " + e.what());
            }
        }
        return snapshot_locked();
    }

    AgentMessage handle_start(const StartMsg& s) {
        std::unique_lock lock(state_m_);
        if (!uploaded_)
            return ErrorMsg{"start before upload"};
        if (started_) {
            auto st = snapshot_locked();
            st.warnings.push_back("duplicate start ignored");
            return st;
        }
        started_ = true;
        const auto addresses = replay_addresses(peers_);

        for (const auto& acc : accepted_) {
            const bool here_as_initiator = acc.entry.initiator_node == node_id_;
            const bool here_as_responder = acc.entry.responder_node == node_id_;
            if (here_as_initiator)
                launch_engine(acc, true, acc.entry.responder_node, addresses, s.sync_epoch_us);
            if (here_as_responder)
                launch_engine(acc, false, acc.entry.initiator_node, addresses, s.sync_epoch_us);
        }
        return snapshot_locked();
    }

    void launch_engine(const AcceptedConnection& acc, bool initiator_role,
                       const std::string& peer_node,
                       const std::map<std::string, uint32_t>& addresses, int64_t sync_epoch_us) {
        auto eng = std::make_unique<Engine>();
        eng->status.name = acc.entry.name;
        eng->status.state = enginestate::kRunning;
        eng->status.detail = initiator_role ? "initiator" : "responder";
        eng->trace = acc.trace;
        eng->peer_node = peer_node;
        eng->initiator_role = initiator_role;

        EngineSpec spec;
        spec.self_node = node_id_;
        spec.peer_node = peer_node;
        spec.port = acc.trace.replay_port;
        spec.initiator_role = initiator_role;
        spec.tap = initiator_role ? &tap_ : nullptr;  // record what this node initiates
        spec.actor_name = node_id_ + "/" + acc.entry.name + (initiator_role ? "/i" : "/r");

        // attach to the data plane before the run gate opens
        EngineIo io = factory_(spec);

        Schedule schedule =
            build_schedule(acc.trace, initiator_role, addresses.at(node_id_),
                           addresses.at(peer_node), sync_epoch_us + acc.trace.offset_us,
                           engine_seed(seed_, acc.trace.stream_index, initiator_role));

        Engine* rec = eng.get();
        engines_.push_back(std::move(eng));
        const ReplayConfig cfg = config_;
        rec->thread = std::thread([this, rec, cfg, io = std::move(io),
                                   schedule = std::move(schedule)]() mutable {
            ReplayOutcome outcome;
            try {
                outcome = run_connection(schedule, *io.channel, *io.clock, cfg);
            } catch (const std::exception& e) {
                outcome.status = ReplayStatus::Aborted;
                outcome.abort_reason = std::string("engine failure: ") + e.what();
            }
            io.channel.reset();  // detach from the data plane / virtual clock
            io.clock.reset();
            std::lock_guard lk(state_m_);
            auto& st = rec->status;
            st.state = outcome.status == ReplayStatus::Completed  ? enginestate::kCompleted
                       : outcome.status == ReplayStatus::TimedOut ? enginestate::kTimedOut
                                                                  : enginestate::kAborted;
            st.sent = outcome.sent_count;
            st.received = outcome.received_count;
            st.duplicates = outcome.duplicate_count;
            st.unexpected = outcome.unexpected_count;
            st.missed = outcome.missed_count;
            st.first_send_us = outcome.first_send_us.value_or(-1);
            if (!outcome.abort_reason.empty())
                st.detail += ": " + outcome.abort_reason;
        });
    }

    AgentMessage handle_fetch() {
        {
            std::lock_guard lock(state_m_);
            if (!started_)
                return ErrorMsg{"fetch before start"};
            if (!all_terminal_locked())
                return ErrorMsg{"fetch before completion"};
        }
        join_engines();
        CaptureMsg cap;
        cap.files.push_back(
            {"capture_" + node_id_ + ".pcap", write_pcap_bytes(tap_.to_trace())});
        return cap;
    }

    StatusMsg snapshot_locked() {
        StatusMsg st;
        st.node_id = node_id_;
        st.clock_offset_us = clock_offset_probe_ ? clock_offset_probe_() : 0;
        st.warnings = warnings_;
        for (const auto& e : engines_)
            st.connections.push_back(e->status);
        return st;
    }

    bool all_terminal_locked() const {
        for (const auto& e : engines_)
            if (!enginestate::terminal(e->status.state))
                return false;
        return true;
    }

    void join_engines() {
        std::vector<std::thread> threads;
        {
            std::lock_guard lock(state_m_);
            for (auto& e : engines_)
                if (e->thread.joinable())
                    threads.push_back(std::move(e->thread));
        }
        for (auto& t : threads)
            t.join();
    }

    void reset_state() {
        std::lock_guard lock(state_m_);
        engines_.clear();
        accepted_.clear();
        warnings_.clear();
        uploaded_ = false;
        started_ = false;
        tap_.clear();
    }

    EngineIoFactory factory_;
    std::function<int64_t()> clock_offset_probe_;
    std::function<void(const UploadMsg&)> on_upload_;

    std::mutex handler_m_;  // serializes control messages
    std::mutex state_m_;    // guards everything below

    std::string node_id_;
    uint64_t seed_ = 0;
    ReplayConfig config_;
    std::vector<PeerInfo> peers_;
    std::vector<AcceptedConnection> accepted_;
    std::vector<std::unique_ptr<Engine>> engines_;
    std::vector<std::string> warnings_;
    bool uploaded_ = false;
    bool started_ = false;
    CaptureTap tap_;
};

// Stand-alone agent process: control channel on TCP, data plane on UDP at
// the same port number.
class AgentService {
  public:
    explicit AgentService(const NetAddress& listen_addr) {
        // with an ephemeral control port, retry until the matching UDP
        // port is free as well
        for (int attempt = 0;; ++attempt) {
            listener_ = std::make_unique<TcpListener>(listen_addr);
            const auto actual = listener_->local_address();
            try {
                data_ = std::make_unique<UdpDataPlane>(
                    clock_, NetAddress{listen_addr.ip, actual.port});
                break;
            } catch (const TransportError&) {
                if (listen_addr.port != 0 || attempt >= 16)
                    throw;
                listener_.reset();
            }
        }
        core_ = std::make_unique<AgentCore>(
            [this](const EngineSpec& spec) { return make_io(spec); },
            [this] { return wall_clock_offset_us(); },
            [this](const UploadMsg& u) { configure_data_plane(u); });
    }

    NetAddress address() const { return listener_->local_address(); }

    // Serves controller sessions until stop(); one session at a time.
    void serve() {
        while (!stopping_.load()) {
            TcpStream stream;
            try {
                stream = listener_->accept();
            } catch (const TransportError&) {
                if (stopping_.load())
                    return;
                throw;
            }
            try {
                while (auto msg = read_frame(stream))
                    write_frame(stream, core_->handle(*msg));
            } catch (const Error&) {
                // drop the session; the next controller can reconnect
            }
        }
    }

    void stop() {
        stopping_.store(true);
        listener_->close();  // unblocks accept
    }

    AgentCore& core() { return *core_; }

  private:
    EngineIo make_io(const EngineSpec& spec) {
        auto* slot = data_->register_engine(spec.port, spec.initiator_role, spec.tap);
        EngineIo io;
        io.channel = std::make_shared<UdpChannel>(*data_, *slot, spec.peer_node, clock_);
        io.clock = std::shared_ptr<Clock>(&clock_, [](Clock*) {});
        return io;
    }

    void configure_data_plane(const UploadMsg& u) {
        std::map<std::string, NetAddress> peers;
        for (const auto& p : u.peers)
            if (!p.address.empty())
                peers[p.node_id] = parse_address(p.address);
        data_->reset();
        data_->configure(u.node_id, peers);
    }

    int64_t wall_clock_offset_us() {
        const auto wall = std::chrono::duration_cast<std::chrono::microseconds>(
                              std::chrono::system_clock::now().time_since_epoch())
                              .count();
        return wall - clock_.now_us();
    }

    SystemClock clock_;
    std::unique_ptr<TcpListener> listener_;
    std::unique_ptr<UdpDataPlane> data_;
    std::unique_ptr<AgentCore> core_;
    std::atomic<bool> stopping_{false};
};

}  // namespace treplay
