#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "treplay/agent.hpp"
#include "treplay/clock.hpp"
#include "treplay/errors.hpp"
#include "treplay/net.hpp"
#include "treplay/pcap.hpp"
#include "treplay/protocol.hpp"
#include "treplay/replay.hpp"
#include "treplay/sim.hpp"
#include "treplay/splitter.hpp"
#include "treplay/textio.hpp"

namespace treplay {

// One request/response round trip on the control channel.
class AgentChannel {
  public:
    virtual ~AgentChannel() = default;
    virtual AgentMessage request(const AgentMessage& msg) = 0;
};

class TcpAgentChannel final : public AgentChannel {
  public:
    explicit TcpAgentChannel(const NetAddress& addr) : stream_(TcpStream::connect(addr)) {}

    AgentMessage request(const AgentMessage& msg) override {
        write_frame(stream_, msg);
        auto reply = read_frame(stream_);
        if (!reply)
            throw TransportError("agent closed the control connection");
        return *reply;
    }

  private:
    TcpStream stream_;
};

// In-process agent behind the identical byte-level protocol.
class InProcAgentChannel final : public AgentChannel {
  public:
    explicit InProcAgentChannel(AgentCore& core) : core_(&core) {}

    AgentMessage request(const AgentMessage& msg) override {
        return decode_message(core_->handle_frame(encode_message(msg)));
    }

  private:
    AgentCore* core_;
};

struct RunOptions {
    uint16_t base_port = 20000;
    uint64_t seed = 1;
    int64_t lead_us = 3'000'000;
    DuplicatePolicy duplicate_policy = DuplicatePolicy::Strict;
    int64_t inactivity_timeout_us = 10'000'000;
    LinkParams link;  // simulate mode only
    std::filesystem::path out_dir;
    int64_t poll_interval_us = 1'000;     // wall-clock status poll cadence
    int64_t watchdog_extra_us = 60'000'000;
};

struct SplitSummary {
    uint64_t input_packets = 0;
    uint64_t skipped_records = 0;
    uint64_t kept_connections = 0;
    uint64_t dropped_flows = 0;
    uint64_t dropped_packets = 0;
};

struct RunResult {
    std::filesystem::path run_dir;
    SplitSummary split;
    bool started = false;
    bool all_completed = false;
    bool failed = false;  // infrastructure failure, distinct from replay outcomes
    std::string failure;
    std::vector<StatusMsg> final_status;
};

inline const char* policy_name(DuplicatePolicy p) {
    return p == DuplicatePolicy::Strict ? "strict" : "drop-duplicates";
}

// --- split products on disk -------------------------------------------------

// One directory per node with that node's connection files plus the full
// manifest; the same layout an Upload carries.
inline void write_split_dirs(const std::filesystem::path& root, const NodePlan& plan) {
    std::filesystem::create_directories(root);
    const auto manifest = manifest_text(plan.manifest);
    for (const auto& [node, flows] : plan.by_node) {
        const auto dir = root / node;
        std::filesystem::create_directories(dir);
        for (const auto& f : flows) {
            Trace t;
            t.packets = f.packets;
            write_pcap(t, dir / encode_name(f));
        }
        std::ofstream out(dir / "manifest.txt");
        if (!out)
            throw IoError("cannot write " + (dir / "manifest.txt").string());
        out << manifest;
    }
}

struct SplitProducts {
    std::vector<ConnectionTrace> flows;
    NodePlan plan;
    SplitSummary summary;
};

inline SplitProducts split_capture(const std::filesystem::path& input, const HostMapping& mapping,
                                   uint16_t base_port) {
    const auto trace = read_pcap(input);
    SplitProducts out;
    out.summary.input_packets = trace.size();
    out.summary.skipped_records = trace.skipped_total();

    auto flows = extract_flows(trace, input.stem().string());
    FilterStats fstats;
    flows = filter_handshakes(std::move(flows), &fstats);
    out.summary.dropped_flows = fstats.dropped_flows;
    out.summary.dropped_packets = fstats.dropped_packets;
    assign_ports(flows, base_port);
    compute_offsets(flows);
    out.summary.kept_connections = flows.size();
    out.plan = partition(flows, mapping);
    out.flows = std::move(flows);
    return out;
}

// --- run manifest -------------------------------------------------------------

inline nlohmann::json run_manifest_json(const std::filesystem::path& input,
                                        const std::string& mode, const RunOptions& opts,
                                        const std::vector<PeerInfo>& peers,
                                        const NodePlan& plan,
                                        std::optional<int64_t> sync_epoch_us) {
    nlohmann::json j;
    j["input"] = input.string();
    j["mode"] = mode;
    j["base_port"] = opts.base_port;
    j["seed"] = opts.seed;
    j["lead_us"] = opts.lead_us;
    j["duplicate_policy"] = policy_name(opts.duplicate_policy);
    j["inactivity_timeout_us"] = opts.inactivity_timeout_us;
    if (mode == "simulate") {
        j["link"] = {{"one_way_delay_us", opts.link.one_way_delay_us},
                     {"jitter_us", opts.link.jitter_us},
                     {"loss_prob", opts.link.loss_prob},
                     {"duplicate_prob", opts.link.duplicate_prob},
                     {"reorder", opts.link.reorder},
                     {"seed", opts.link.seed}};
    }
    auto nodes = nlohmann::json::array();
    for (const auto& p : peers)
        nodes.push_back({{"id", p.node_id}, {"address", p.address}});
    j["nodes"] = nodes;
    auto conns = nlohmann::json::array();
    for (const auto& e : plan.manifest)
        conns.push_back(e.name);
    j["connections"] = conns;
    if (sync_epoch_us)
        j["sync_epoch_us"] = *sync_epoch_us;
    return j;
}

// --- the pipeline -------------------------------------------------------------

namespace detail {

inline std::string status_text(const std::vector<StatusMsg>& statuses) {
    std::string out;
    for (const auto& st : statuses) {
        out += "node " + st.node_id + "\n";
        for (const auto& w : st.warnings)
            out += "  warning: " + w + "\n";
        for (const auto& c : st.connections) {
            out += "  " + c.name + " [" + c.detail + "] " + enginestate::name(c.state) +
                   " sent=" + std::to_string(c.sent) + " received=" + std::to_string(c.received) +
                   " duplicates=" + std::to_string(c.duplicates) +
                   " unexpected=" + std::to_string(c.unexpected) +
                   " missed=" + std::to_string(c.missed) + "\n";
        }
    }
    return out;
}

inline int64_t replay_budget_us(const std::vector<ConnectionTrace>& flows,
                                const RunOptions& opts) {
    int64_t horizon = 0;
    for (const auto& f : flows) {
        const int64_t span = f.packets.empty()
                                 ? 0
                                 : f.packets.back().ts_us - f.packets.front().ts_us;
        horizon = std::max(horizon, f.offset_us + span);
    }
    return opts.lead_us + horizon + opts.inactivity_timeout_us + opts.watchdog_extra_us;
}

}  // namespace detail

// Executes the full workflow against a set of agent channels: split,
// upload, synchronized start, status polling, capture retrieval. Agents
// must be listed for every node named by the mapping. `sim` is the shared
// network in simulate mode (used to gate the virtual clock) and null for
// live runs.
inline RunResult run_pipeline(const std::filesystem::path& input, const HostMapping& mapping,
                              const std::vector<PeerInfo>& peers,
                              std::vector<std::pair<std::string, AgentChannel*>> agents,
                              const RunOptions& opts, Clock& clock, const std::string& mode,
                              SimNet* sim = nullptr) {
    RunResult result;
    result.run_dir = opts.out_dir;

    auto products = split_capture(input, mapping, opts.base_port);
    result.split = products.summary;

    std::map<std::string, AgentChannel*> by_node;
    for (auto& [node, chan] : agents)
        by_node[node] = chan;
    for (const auto& [node, flows] : products.plan.by_node)
        if (!by_node.count(node))
            throw MappingError("no agent registered for node '" + node + "'");

    std::filesystem::create_directories(result.run_dir);
    write_split_dirs(result.run_dir / "split", products.plan);
    const auto manifest_path = result.run_dir / "run_manifest.json";
    write_text_file(manifest_path,
                    run_manifest_json(input, mode, opts, peers, products.plan, std::nullopt)
                        .dump(2) +
                        "\n");

    // upload everything before anyone is allowed to start
    const auto manifest = manifest_text(products.plan.manifest);
    for (auto& [node, chan] : agents) {
        UploadMsg upload;
        upload.node_id = node;
        upload.seed = opts.seed;
        upload.inactivity_timeout_us = static_cast<uint64_t>(opts.inactivity_timeout_us);
        upload.duplicate_policy =
            opts.duplicate_policy == DuplicatePolicy::Strict ? 0 : 1;
        upload.peers = peers;
        upload.manifest = manifest;
        auto it = products.plan.by_node.find(node);
        if (it != products.plan.by_node.end()) {
            for (const auto& f : it->second) {
                Trace t;
                t.packets = f.packets;
                upload.files.push_back({encode_name(f), write_pcap_bytes(t)});
            }
        }
        try {
            const auto reply = chan->request(upload);
            if (const auto* err = std::get_if<ErrorMsg>(&reply)) {
                result.failed = true;
                result.failure = "upload rejected by " + node + ": " + err->text;
                return result;
            }
        } catch (const Error& e) {
            result.failed = true;
            result.failure = "agent " + node + " unreachable during upload: " + e.what();
            return result;
        }
    }

    const int64_t sync_epoch_us = clock.now_us() + opts.lead_us;
    write_text_file(manifest_path,
                    run_manifest_json(input, mode, opts, peers, products.plan, sync_epoch_us)
                        .dump(2) +
                        "\n");

    if (sim)
        sim->hold();
    bool start_failed = false;
    std::string start_failure;
    for (auto& [node, chan] : agents) {
        try {
            const auto reply = chan->request(StartMsg{sync_epoch_us});
            if (const auto* err = std::get_if<ErrorMsg>(&reply)) {
                start_failed = true;
                start_failure = "start rejected by " + node + ": " + err->text;
                break;
            }
        } catch (const Error& e) {
            start_failed = true;
            start_failure = "agent " + node + " unreachable during start: " + e.what();
            break;
        }
    }
    if (sim)
        sim->release();
    result.started = true;
    if (start_failed) {
        result.failed = true;
        result.failure = start_failure;
    }

    // poll until every engine everywhere is terminal
    const auto watchdog_deadline =
        std::chrono::steady_clock::now() +
        std::chrono::microseconds(detail::replay_budget_us(products.flows, opts));
    for (;;) {
        bool all_done = true;
        bool poll_failed = false;
        for (auto& [node, chan] : agents) {
            try {
                const auto reply = chan->request(StatusMsg{});
                if (const auto* st = std::get_if<StatusMsg>(&reply)) {
                    if (!st->all_terminal())
                        all_done = false;
                } else {
                    poll_failed = true;
                }
            } catch (const Error&) {
                poll_failed = true;
            }
        }
        if (poll_failed) {
            result.failed = true;
            if (result.failure.empty())
                result.failure = "agent failed during the run; partial results saved";
            break;
        }
        if (all_done)
            break;
        if (std::chrono::steady_clock::now() > watchdog_deadline) {
            result.failed = true;
            if (result.failure.empty())
                result.failure = "watchdog expired before all engines finished";
            break;
        }
        std::this_thread::sleep_for(std::chrono::microseconds(opts.poll_interval_us));
    }

    // retrieve captures and final status; save whatever can be saved
    const auto capture_dir = result.run_dir / "captures";
    std::filesystem::create_directories(capture_dir);
    result.all_completed = true;
    for (auto& [node, chan] : agents) {
        try {
            const auto status_reply = chan->request(StatusMsg{});
            if (const auto* st = std::get_if<StatusMsg>(&status_reply)) {
                result.final_status.push_back(*st);
                for (const auto& c : st->connections)
                    if (c.state != enginestate::kCompleted)
                        result.all_completed = false;
            }
            const auto reply = chan->request(FetchMsg{});
            if (const auto* cap = std::get_if<CaptureMsg>(&reply)) {
                for (const auto& f : cap->files) {
                    std::ofstream out(capture_dir / f.name, std::ios::binary | std::ios::trunc);
                    out.write(reinterpret_cast<const char*>(f.bytes.data()),
                              static_cast<std::streamsize>(f.bytes.size()));
                }
            } else {
                result.failed = true;
                if (result.failure.empty())
                    result.failure = "fetch rejected by " + node;
            }
        } catch (const Error& e) {
            result.failed = true;
            if (result.failure.empty())
                result.failure = "agent " + node + " unreachable during fetch: " + e.what();
        }
    }
    if (result.failed)
        result.all_completed = false;

    write_text_file(result.run_dir / "status.txt", detail::status_text(result.final_status));
    return result;
}

// --- mode wiring ----------------------------------------------------------------

// Controller-side clock view of the virtual network (reads only).
class SimObserverClock final : public Clock {
  public:
    explicit SimObserverClock(SimNet& net) : net_(&net) {}
    int64_t now_us() override { return net_->now_us(); }
    void sleep_until(int64_t) override {
        throw StateError("the controller never blocks on virtual time");
    }

  private:
    SimNet* net_;
};

// Whole workflow in one process over the simulated network. Deterministic
// for a fixed input and options.
inline RunResult simulate_run(const std::filesystem::path& input, const HostMapping& mapping,
                              const RunOptions& opts) {
    std::vector<std::string> nodes;
    for (const auto& [ip, node] : mapping.node_of)
        if (std::find(nodes.begin(), nodes.end(), node) == nodes.end())
            nodes.push_back(node);
    std::sort(nodes.begin(), nodes.end());

    SimNet net(opts.link, 0);
    std::vector<PeerInfo> peers;
    for (const auto& n : nodes)
        peers.push_back({n, n});

    std::vector<std::unique_ptr<AgentCore>> cores;
    std::vector<std::unique_ptr<InProcAgentChannel>> channels;
    std::vector<std::pair<std::string, AgentChannel*>> agents;
    for (const auto& n : nodes) {
        cores.push_back(std::make_unique<AgentCore>([&net](const EngineSpec& spec) {
            auto ep = std::make_shared<SimEndpoint>(net, spec.self_node, spec.peer_node,
                                                    spec.port, spec.tap, spec.actor_name);
            EngineIo io;
            io.channel = ep;
            io.clock = ep;
            return io;
        }));
        channels.push_back(std::make_unique<InProcAgentChannel>(*cores.back()));
        agents.emplace_back(n, channels.back().get());
    }

    SimObserverClock clock(net);
    return run_pipeline(input, mapping, peers, std::move(agents), opts, clock, "simulate", &net);
}

struct AgentEndpoint {
    std::string node_id;
    std::string address;
};

// Lines of "<node-id> <host:port>", '#' comments.
inline std::vector<AgentEndpoint> parse_agents(const std::string& text) {
    std::vector<AgentEndpoint> out;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos)
            line.erase(hash);
        std::istringstream fields(line);
        AgentEndpoint e;
        std::string extra;
        if (!(fields >> e.node_id))
            continue;
        if (!(fields >> e.address) || (fields >> extra))
            throw ParseError("agents line " + std::to_string(lineno) +
                             ": expected '<node-id> <host:port>'");
        parse_address(e.address);  // validate early
        out.push_back(std::move(e));
    }
    return out;
}

// Whole workflow against live agent processes over TCP control channels;
// the data plane runs on UDP at the same port numbers.
inline RunResult live_run(const std::filesystem::path& input, const HostMapping& mapping,
                          const std::vector<AgentEndpoint>& endpoints, const RunOptions& opts) {
    std::vector<PeerInfo> peers;
    for (const auto& e : endpoints)
        peers.push_back({e.node_id, e.address});

    std::vector<std::unique_ptr<TcpAgentChannel>> channels;
    std::vector<std::pair<std::string, AgentChannel*>> agents;
    RunResult early;
    for (const auto& e : endpoints) {
        try {
            channels.push_back(std::make_unique<TcpAgentChannel>(parse_address(e.address)));
        } catch (const TransportError& ex) {
            early.run_dir = opts.out_dir;
            early.failed = true;
            early.failure = "agent " + e.node_id + " unreachable: " + ex.what();
            return early;
        }
        agents.emplace_back(e.node_id, channels.back().get());
    }

    SystemClock clock;
    return run_pipeline(input, mapping, peers, std::move(agents), opts, clock, "live");
}

}  // namespace treplay
