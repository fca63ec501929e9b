// treplay: split TCP captures per connection, replay them across nodes in
// step with the original timing, and measure how faithful the replay was.

#include <csignal>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "treplay/agent.hpp"
#include "treplay/analyzer.hpp"
#include "treplay/controller.hpp"
#include "treplay/errors.hpp"
#include "treplay/textio.hpp"

namespace {

// Stable exit codes: 0 success, 2 mapping, 3 bind, 4 replay failure,
// 5 missing inputs, 1 anything else.
constexpr int kExitMapping = 2;
constexpr int kExitBind = 3;
constexpr int kExitReplay = 4;
constexpr int kExitMissingInput = 5;

treplay::AgentService* g_service = nullptr;

void handle_signal(int) {
    if (g_service)
        g_service->stop();
}

std::string timestamp_dir_name(const std::string& stem, const std::string& kind) {
    char buf[32];
    const std::time_t now = std::time(nullptr);
    std::tm tm{};
    localtime_r(&now, &tm);
    std::strftime(buf, sizeof buf, "%Y%m%d-%H%M%S", &tm);
    return stem + "-" + kind + "-" + buf;
}

treplay::HostMapping load_mapping(const std::string& path) {
    return treplay::parse_mapping(treplay::read_text_file(path));
}

void print_split_summary(const treplay::SplitSummary& s) {
    std::cout << "packets: " << s.input_packets << " (skipped on read: " << s.skipped_records
              << ")\n";
    std::cout << "connections kept: " << s.kept_connections << ", dropped: " << s.dropped_flows
              << " (" << s.dropped_packets << " packets)\n";
}

int finish_run(const treplay::RunResult& result) {
    print_split_summary(result.split);
    std::cout << "run directory: " << result.run_dir.string() << "\n";
    if (result.failed) {
        std::cerr << "run failed: " << result.failure << "\n";
        return kExitReplay;
    }

    std::size_t completed = 0, total = 0;
    for (const auto& st : result.final_status) {
        for (const auto& c : st.connections) {
            ++total;
            if (c.state == treplay::enginestate::kCompleted)
                ++completed;
        }
    }
    std::cout << "engines completed: " << completed << "/" << total << "\n";

    try {
        const auto report = treplay::analyze_run_dir(result.run_dir);
        treplay::emit_csv(report, result.run_dir / "reports");
        treplay::write_text_file(result.run_dir / "reports" / "summary.txt",
                                 treplay::summary_text(report));
        std::cout << treplay::summary_text(report);
    } catch (const treplay::Error& e) {
        std::cerr << "analysis skipped: " << e.what() << "\n";
    }

    if (!result.all_completed) {
        std::cerr << "not all connections completed\n";
        return kExitReplay;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"distributed TCP trace replay toolkit"};
    app.require_subcommand(1);

    // --- split ---------------------------------------------------------
    std::string split_pcap, split_map, split_out;
    uint16_t split_base_port = 20000;
    auto* split = app.add_subcommand("split", "split a capture into per-node workloads");
    split->add_option("pcap", split_pcap, "input capture")->required();
    split->add_option("--map", split_map, "ip-to-node mapping file")->required();
    split->add_option("--base-port", split_base_port, "first replay port");
    split->add_option("--out", split_out, "output directory");

    // --- agent ---------------------------------------------------------
    std::string agent_listen = "127.0.0.1:0";
    auto* agent = app.add_subcommand("agent", "run a replay agent");
    agent->add_option("--listen", agent_listen, "control address host:port");

    // --- run / simulate ------------------------------------------------
    std::string run_pcap, run_map, run_agents, run_out;
    uint16_t run_base_port = 20000;
    uint64_t run_seed = 1;
    int64_t run_lead_ms = 3000;
    int64_t run_timeout_ms = 10000;
    bool run_drop_dups = false;
    auto* run = app.add_subcommand("run", "replay a capture across live agents");
    run->add_option("pcap", run_pcap, "input capture")->required();
    run->add_option("--map", run_map, "ip-to-node mapping file")->required();
    run->add_option("--agents", run_agents, "agents file (node-id host:port per line)")
        ->envname("TREPLAY_AGENTS");
    run->add_option("--lead-ms", run_lead_ms, "delay before the synchronized start");
    run->add_option("--base-port", run_base_port, "first replay port");
    run->add_option("--seed", run_seed, "run seed");
    run->add_option("--timeout-ms", run_timeout_ms, "engine inactivity timeout");
    run->add_flag("--drop-duplicates", run_drop_dups, "drop recorded retransmissions");
    run->add_option("--out", run_out, "run directory");

    std::string sim_pcap, sim_map, sim_out;
    uint16_t sim_base_port = 20000;
    uint64_t sim_seed = 1;
    int64_t sim_lead_ms = 3000;
    int64_t sim_timeout_ms = 10000;
    int64_t sim_delay_us = 0, sim_jitter_us = 0;
    double sim_loss = 0.0, sim_dup = 0.0;
    bool sim_drop_dups = false;
    auto* simulate = app.add_subcommand("simulate", "replay in one process over a virtual network");
    simulate->add_option("pcap", sim_pcap, "input capture")->required();
    simulate->add_option("--map", sim_map, "ip-to-node mapping file")->required();
    simulate->add_option("--delay-us", sim_delay_us, "one-way link delay");
    simulate->add_option("--jitter-us", sim_jitter_us, "uniform link jitter");
    simulate->add_option("--loss", sim_loss, "packet loss probability");
    simulate->add_option("--dup", sim_dup, "packet duplication probability");
    simulate->add_option("--seed", sim_seed, "run seed (also seeds the link)");
    simulate->add_option("--lead-ms", sim_lead_ms, "virtual delay before the synchronized start");
    simulate->add_option("--base-port", sim_base_port, "first replay port");
    simulate->add_option("--timeout-ms", sim_timeout_ms, "engine inactivity timeout");
    simulate->add_flag("--drop-duplicates", sim_drop_dups, "drop recorded retransmissions");
    simulate->add_option("--out", sim_out, "run directory");

    // --- analyze ---------------------------------------------------------
    std::string analyze_dir;
    auto* analyze = app.add_subcommand("analyze", "recompute reports for a finished run");
    analyze->add_option("rundir", analyze_dir, "run directory")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (*split) {
            const std::filesystem::path input(split_pcap);
            const auto mapping = load_mapping(split_map);
            const std::filesystem::path out =
                split_out.empty() ? input.stem().string() + "-split" : split_out;
            const auto products = treplay::split_capture(input, mapping, split_base_port);
            treplay::write_split_dirs(out, products.plan);
            print_split_summary(products.summary);
            std::cout << "split directory: " << out.string() << "\n";
            return 0;
        }

        if (*agent) {
            treplay::NetAddress addr;
            try {
                addr = treplay::parse_address(agent_listen);
            } catch (const treplay::ParseError& e) {
                std::cerr << e.what() << "\n";
                return kExitBind;
            }
            std::unique_ptr<treplay::AgentService> service;
            try {
                service = std::make_unique<treplay::AgentService>(addr);
            } catch (const treplay::TransportError& e) {
                std::cerr << e.what() << "\n";
                return kExitBind;
            }
            g_service = service.get();
            std::signal(SIGINT, handle_signal);
            std::signal(SIGTERM, handle_signal);
            std::cout << "agent listening on " << service->address().to_string() << std::endl;
            service->serve();
            return 0;
        }

        if (*run) {
            if (run_agents.empty()) {
                std::cerr << "no agents file: pass --agents or set TREPLAY_AGENTS\n";
                return kExitMissingInput;
            }
            const std::filesystem::path input(run_pcap);
            treplay::RunOptions opts;
            opts.base_port = run_base_port;
            opts.seed = run_seed;
            opts.lead_us = run_lead_ms * 1000;
            opts.inactivity_timeout_us = run_timeout_ms * 1000;
            opts.duplicate_policy = run_drop_dups ? treplay::DuplicatePolicy::DropScheduledDuplicates
                                                  : treplay::DuplicatePolicy::Strict;
            opts.poll_interval_us = 100'000;
            opts.out_dir = run_out.empty() ? std::filesystem::path(timestamp_dir_name(input.stem().string(), "run"))
                                           : std::filesystem::path(run_out);
            const auto endpoints = treplay::parse_agents(treplay::read_text_file(run_agents));
            const auto result = treplay::live_run(input, load_mapping(run_map), endpoints, opts);
            return finish_run(result);
        }

        if (*simulate) {
            const std::filesystem::path input(sim_pcap);
            treplay::RunOptions opts;
            opts.base_port = sim_base_port;
            opts.seed = sim_seed;
            opts.lead_us = sim_lead_ms * 1000;
            opts.inactivity_timeout_us = sim_timeout_ms * 1000;
            opts.duplicate_policy = sim_drop_dups ? treplay::DuplicatePolicy::DropScheduledDuplicates
                                                  : treplay::DuplicatePolicy::Strict;
            opts.link.one_way_delay_us = sim_delay_us;
            opts.link.jitter_us = sim_jitter_us;
            opts.link.loss_prob = sim_loss;
            opts.link.duplicate_prob = sim_dup;
            opts.link.seed = sim_seed;
            opts.out_dir = sim_out.empty() ? std::filesystem::path(timestamp_dir_name(input.stem().string(), "sim"))
                                           : std::filesystem::path(sim_out);
            const auto result = treplay::simulate_run(input, load_mapping(sim_map), opts);
            return finish_run(result);
        }

        if (*analyze) {
            const std::filesystem::path dir(analyze_dir);
            treplay::Report report;
            try {
                report = treplay::analyze_run_dir(dir);
            } catch (const treplay::IoError& e) {
                std::cerr << e.what() << "\n";
                return kExitMissingInput;
            }
            treplay::emit_csv(report, dir / "reports");
            treplay::write_text_file(dir / "reports" / "summary.txt",
                                     treplay::summary_text(report));
            std::cout << treplay::summary_text(report);
            if (report.alignment_warnings() > 0)
                std::cout << "warnings: " << report.alignment_warnings()
                          << " packets missing or unmatched\n";
            return 0;
        }
    } catch (const treplay::MappingError& e) {
        std::cerr << e.what() << "\n";
        return kExitMapping;
    } catch (const treplay::Error& e) {
        std::cerr << e.what() << "\n";
        return 1;
    }
    return 0;
}
