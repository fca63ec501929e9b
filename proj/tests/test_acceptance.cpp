// Acceptance suite: one test per release criterion, each printing a
// single PASS/FAIL line. Tolerances are pinned in the assertions.

#include <gtest/gtest.h>

#include <cstdio>
#include <functional>
#include <map>
#include <random>
#include <set>

#include "support/fixtures.hpp"
#include "support/reference_checksum.hpp"
#include "treplay/analyzer.hpp"
#include "treplay/controller.hpp"
#include "treplay/replay.hpp"

using namespace treplay;
using fixtures::SessionSpec;

namespace {

void run_criterion(int n, const char* desc, const std::function<void()>& body) {
    bool threw = false;
    try {
        body();
    } catch (const std::exception& e) {
        ADD_FAILURE() << "unexpected exception: " << e.what();
        threw = true;
    } catch (...) {
        ADD_FAILURE() << "unexpected exception";
        threw = true;
    }
    const bool failed = threw || ::testing::Test::HasFatalFailure() ||
                        ::testing::Test::HasNonfatalFailure();
    std::printf("ACCEPTANCE %2d  %-28s %s\n", n, desc, failed ? "FAIL" : "PASS");
    std::fflush(stdout);
}

ConnectionTrace random_connection(std::mt19937_64& rng, std::size_t max_rounds = 5) {
    SessionSpec spec;
    spec.data_rounds = 1 + rng() % max_rounds;
    spec.payload_bytes = 1 + rng() % 400;
    spec.fin = rng() % 2 == 0;
    spec.isn_a = static_cast<uint32_t>(rng());
    spec.isn_b = static_cast<uint32_t>(rng());
    spec.gap_us = static_cast<int64_t>(1 + rng() % 3000);
    return fixtures::prepared_connection(fixtures::session_trace(spec));
}

// deterministic multi-connection capture shaped like public traces:
// many hosts, mixed connection lengths, interleaved starts
Trace desk_trace(std::size_t connections, uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<Trace> sessions;
    for (std::size_t i = 0; i < connections; ++i) {
        SessionSpec spec;
        spec.a_ip = "10.1." + std::to_string(i % 5) + "." + std::to_string(1 + i % 200);
        spec.b_ip = "10.2." + std::to_string(i % 3) + "." + std::to_string(1 + (i * 7) % 200);
        spec.a_port = static_cast<uint16_t>(30000 + i);
        spec.start_us = 1'000'000 + static_cast<int64_t>(rng() % 3'000'000);
        spec.gap_us = static_cast<int64_t>(200 + rng() % 20'000);
        // lengths spread across the 3-10 / 11-50 / 51-100 / >100 buckets
        const std::size_t shape = i % 4;
        const std::size_t rounds[] = {1, 10, 30, 55};
        spec.data_rounds = rounds[shape] + rng() % 4;
        spec.fin = true;
        spec.payload_bytes = 1 + rng() % 600;
        spec.isn_a = static_cast<uint32_t>(rng());
        spec.isn_b = static_cast<uint32_t>(rng());
        sessions.push_back(fixtures::session_trace(spec));
    }
    return fixtures::merge_traces(sessions);
}

HostMapping desk_mapping() {
    // every 10.1.x.y host on one node, every 10.2.x.y host on the other
    std::string text;
    for (int i = 0; i < 5; ++i)
        for (int j = 1; j <= 200; ++j)
            text += "10.1." + std::to_string(i) + "." + std::to_string(j) + " left\n";
    for (int i = 0; i < 3; ++i)
        for (int j = 1; j <= 200; ++j)
            text += "10.2." + std::to_string(i) + "." + std::to_string(j) + " right\n";
    return parse_mapping(text);
}

}  // namespace

TEST(Acceptance, C01_SeqDeltaPreservation) {
    run_criterion(1, "seq delta preservation", [] {
        std::mt19937_64 rng(101);
        for (int iter = 0; iter < 1000; ++iter) {
            const auto c = random_connection(rng);
            const bool initiator = rng() % 2 == 0;
            const auto s = build_schedule(c, initiator, 0x0a630001, 0x0a630002, 0, rng());
            const uint32_t local_ip = initiator ? c.initiator_ip : c.responder_ip;
            std::vector<uint32_t> orig, rewritten;
            for (std::size_t i = 0; i < c.packets.size(); ++i) {
                if (c.packets[i].src_ip == local_ip) {
                    orig.push_back(c.packets[i].seq);
                    rewritten.push_back(s.entries[i].packet.seq);
                }
            }
            for (std::size_t i = 0; i < orig.size(); ++i)
                for (std::size_t j = 0; j < orig.size(); ++j)
                    ASSERT_EQ(rewritten[i] - rewritten[j], orig[i] - orig[j]);
        }
    });
}

TEST(Acceptance, C02_ChecksumOracle) {
    run_criterion(2, "checksum oracle", [] {
        std::mt19937_64 rng(202);
        for (int iter = 0; iter < 150; ++iter) {
            const auto c = random_connection(rng);
            auto s = build_schedule(c, rng() % 2 == 0, 0x0a630001, 0x0a630002, 0, rng());
            for (const auto& e : s.entries) {
                if (!e.local())
                    continue;
                ASSERT_TRUE(refsum::ip_header_valid(e.packet));
                ASSERT_TRUE(refsum::tcp_segment_valid(e.packet));
            }
            rebase_remote(s, s.original_remote_isn + static_cast<uint32_t>(rng()));
            for (const auto& e : s.entries) {
                if (!e.local())
                    continue;
                ASSERT_TRUE(refsum::ip_header_valid(e.packet));
                ASSERT_TRUE(refsum::tcp_segment_valid(e.packet));
            }
        }
    });
}

TEST(Acceptance, C03_HandshakeFilter) {
    run_criterion(3, "handshake filter", [] {
        SessionSpec ten;  // 3 handshake + 4 data + 3 fin = 10 packets
        ten.data_rounds = 2;
        ten.fin = true;
        SessionSpec three;
        three.a_ip = "10.0.7.1";
        SessionSpec two_spec;
        two_spec.a_ip = "10.0.8.1";
        Trace two = fixtures::session_trace(two_spec);
        two.packets.resize(2);

        auto flows = extract_flows(
            fixtures::merge_traces(
                {fixtures::session_trace(ten), fixtures::session_trace(three), two}),
            "filter");
        ASSERT_EQ(flows.size(), 3u);
        FilterStats stats;
        const auto kept = filter_handshakes(std::move(flows), &stats);
        ASSERT_EQ(kept.size(), 2u);
        std::multiset<std::size_t> sizes;
        for (const auto& f : kept)
            sizes.insert(f.packets.size());
        ASSERT_EQ(sizes, (std::multiset<std::size_t>{3, 10}));
        ASSERT_EQ(stats.dropped_flows, 1u);
    });
}

TEST(Acceptance, C04_SynchronizedStart) {
    run_criterion(4, "synchronized start", [] {
        fixtures::TempDir tmp("acc-sync");
        SessionSpec a;
        a.start_us = 50'000'000;
        a.data_rounds = 1;
        SessionSpec b = a;
        b.a_ip = "10.0.1.3";
        b.b_ip = "10.0.1.4";
        b.start_us = a.start_us + 1'000'000;
        SessionSpec c = a;
        c.a_ip = "10.0.1.5";
        c.b_ip = "10.0.1.6";
        c.start_us = a.start_us + 2'500'000;
        const auto input = tmp.path / "in.pcap";
        write_pcap(fixtures::merge_traces({fixtures::session_trace(a), fixtures::session_trace(b),
                                           fixtures::session_trace(c)}),
                   input);

        RunOptions opts;
        opts.out_dir = tmp.path / "run";
        opts.lead_us = 3'000'000;
        const auto mapping = parse_mapping(
            "10.0.0.1 n1\n10.0.0.2 n2\n10.0.1.3 n1\n10.0.1.4 n2\n10.0.1.5 n1\n10.0.1.6 n2\n");
        const auto result = simulate_run(input, mapping, opts);
        ASSERT_FALSE(result.failed) << result.failure;
        ASSERT_TRUE(result.all_completed);

        const auto capture = read_pcap(result.run_dir / "captures" / "capture_n1.pcap");
        std::map<uint16_t, int64_t> first_send;
        for (const auto& p : capture.packets)
            if (!first_send.count(p.src_port))
                first_send[p.src_port] = p.ts_us;
        const int64_t sync = opts.lead_us;  // virtual clock starts at zero
        ASSERT_EQ(first_send.at(20000), sync + 0);
        ASSERT_EQ(first_send.at(20001), sync + 1'000'000);
        ASSERT_EQ(first_send.at(20002), sync + 2'500'000);
    });
}

TEST(Acceptance, C05_EndToEndFidelity) {
    run_criterion(5, "end-to-end fidelity", [] {
        fixtures::TempDir tmp("acc-e2e");
        const auto input = tmp.path / "desk.pcap";
        const auto trace = desk_trace(50, 500);
        write_pcap(trace, input);

        RunOptions opts;
        opts.out_dir = tmp.path / "run";
        opts.seed = 11;
        const auto result = simulate_run(input, desk_mapping(), opts);
        ASSERT_FALSE(result.failed) << result.failure;
        ASSERT_EQ(result.split.kept_connections, 50u);
        ASSERT_TRUE(result.all_completed);
        for (const auto& st : result.final_status)
            for (const auto& conn : st.connections)
                ASSERT_EQ(conn.state, enginestate::kCompleted) << conn.name;

        // captured packet counts, flags, and payload lengths per connection
        const auto originals = fixtures::prepared_flows(trace, opts.base_port, "desk");
        std::map<std::string, Trace> captures;
        for (const char* node : {"left", "right"})
            captures[node] =
                read_pcap(result.run_dir / "captures" / ("capture_" + std::string(node) + ".pcap"));
        const auto mapping = desk_mapping();
        for (const auto& orig : originals) {
            const auto node = *mapping.find(orig.initiator_ip);
            std::vector<const PacketRecord*> captured;
            for (const auto& p : captures.at(node).packets)
                if (p.src_port == orig.replay_port)
                    captured.push_back(&p);
            ASSERT_EQ(captured.size(), orig.packets.size()) << "port " << orig.replay_port;

            // flags and payload lengths must match per direction
            std::vector<std::pair<uint8_t, std::size_t>> orig_out, orig_in, got_out, got_in;
            for (const auto& p : orig.packets)
                (p.src_ip == orig.initiator_ip ? orig_out : orig_in)
                    .emplace_back(p.flags, p.payload.size());
            uint32_t cap_init = 0;
            for (const auto* p : captured)
                if (p->syn_only()) {
                    cap_init = p->src_ip;
                    break;
                }
            for (const auto* p : captured)
                (p->src_ip == cap_init ? got_out : got_in)
                    .emplace_back(p->flags, p->payload.size());
            ASSERT_EQ(orig_out, got_out) << "port " << orig.replay_port;
            ASSERT_EQ(orig_in, got_in) << "port " << orig.replay_port;
        }

        // overall median deviation within 2 ms of the plan (expected: 0)
        const auto report = analyze_run_dir(result.run_dir);
        std::vector<int64_t> all;
        for (const auto& c : report.connections)
            for (const auto& d : c.deviations)
                if (d.deviation_us)
                    all.push_back(*d.deviation_us);
        ASSERT_FALSE(all.empty());
        std::sort(all.begin(), all.end());
        const int64_t median = all[(all.size() - 1) / 2];
        ASSERT_LE(std::abs(median), 2000);
    });
}

TEST(Acceptance, C06_DelayShiftLaw) {
    run_criterion(6, "delay shift law", [] {
        fixtures::TempDir tmp("acc-delay");
        SessionSpec spec;  // inter-packet spacing well above the link delay
        spec.gap_us = 200'000;
        spec.data_rounds = 3;
        spec.fin = true;
        const auto input = tmp.path / "in.pcap";
        write_pcap(fixtures::session_trace(spec), input);

        RunOptions opts;
        opts.out_dir = tmp.path / "run";
        opts.link.one_way_delay_us = 30'000;
        const auto result =
            simulate_run(input, parse_mapping("10.0.0.1 n1\n10.0.0.2 n2\n"), opts);
        ASSERT_FALSE(result.failed) << result.failure;
        ASSERT_TRUE(result.all_completed);

        const auto report = analyze_run_dir(result.run_dir);
        ASSERT_EQ(report.connections.size(), 1u);
        std::size_t remote_rows = 0;
        for (const auto& d : report.connections[0].deviations) {
            if (d.from_initiator)
                continue;  // local sends are pinned by the clock, not the link
            ASSERT_TRUE(d.deviation_us.has_value());
            ASSERT_NEAR(static_cast<double>(*d.deviation_us), -30'000.0, 1.0);
            ++remote_rows;
        }
        ASSERT_GT(remote_rows, 0u);
    });
}

TEST(Acceptance, C07_DuplicateLimitation) {
    run_criterion(7, "duplicate limitation", [] {
        SessionSpec spec;
        spec.data_rounds = 2;
        const auto trace = fixtures::with_retransmission(fixtures::session_trace(spec), 3);
        const auto c = fixtures::prepared_connection(trace);

        ReplayConfig strict;
        strict.inactivity_timeout_us = 500'000;
        const auto r = fixtures::run_engine_pair(c, {}, strict);
        ASSERT_TRUE(r.initiator.status != ReplayStatus::Completed ||
                    r.responder.status != ReplayStatus::Completed);

        ReplayConfig drop = strict;
        drop.duplicate_policy = DuplicatePolicy::DropScheduledDuplicates;
        const auto r2 = fixtures::run_engine_pair(c, {}, drop);
        ASSERT_EQ(r2.initiator.status, ReplayStatus::Completed);
        ASSERT_EQ(r2.responder.status, ReplayStatus::Completed);
    });
}

TEST(Acceptance, C08_StatisticsOracle) {
    run_criterion(8, "statistics oracle", [] {
        std::mt19937_64 rng(808);
        std::uniform_int_distribution<int64_t> val(-10'000'000, 10'000'000);
        std::uniform_int_distribution<int> n(1, 60);
        for (int iter = 0; iter < 10'000; ++iter) {
            std::vector<int64_t> values(static_cast<std::size_t>(n(rng)));
            for (auto& v : values)
                v = val(rng);

            auto sorted = values;
            std::sort(sorted.begin(), sorted.end());
            long double sum = 0;
            for (auto v : sorted)
                sum += v;
            const long double mean = sum / static_cast<long double>(sorted.size());
            long double acc = 0;
            for (auto v : sorted)
                acc += (v - mean) * (v - mean);
            const long double stddev = sqrtl(acc / static_cast<long double>(sorted.size()));

            const auto got = connection_stats(values);
            ASSERT_EQ(got.min_us, sorted.front());
            ASSERT_EQ(got.max_us, sorted.back());
            ASSERT_EQ(got.median_us, sorted[(sorted.size() - 1) / 2]);
            ASSERT_NEAR(got.mean_us, static_cast<double>(mean),
                        std::abs(static_cast<double>(mean)) * 1e-9 + 1e-12);
            ASSERT_NEAR(got.stddev_us, static_cast<double>(stddev),
                        static_cast<double>(stddev) * 1e-9 + 1e-12);
        }
    });
}

TEST(Acceptance, C09_HighRateSustainment) {
    run_criterion(9, "high-rate sustainment", [] {
        fixtures::TempDir tmp("acc-rate");
        SessionSpec spec;  // 500 packets per second for two seconds
        spec.gap_us = 2'000;
        spec.data_rounds = 500;
        spec.payload_bytes = 64;
        const auto input = tmp.path / "in.pcap";
        write_pcap(fixtures::session_trace(spec), input);

        RunOptions opts;
        opts.out_dir = tmp.path / "run";
        const auto result =
            simulate_run(input, parse_mapping("10.0.0.1 n1\n10.0.0.2 n2\n"), opts);
        ASSERT_FALSE(result.failed) << result.failure;
        ASSERT_TRUE(result.all_completed);
        for (const auto& st : result.final_status)
            for (const auto& conn : st.connections) {
                ASSERT_EQ(conn.state, enginestate::kCompleted);
                ASSERT_EQ(conn.unexpected, 0u);
                ASSERT_EQ(conn.missed, 0u);
            }
    });
}

TEST(Acceptance, C10_Determinism) {
    run_criterion(10, "determinism", [] {
        fixtures::TempDir tmp("acc-det");
        const auto input = tmp.path / "in.pcap";
        write_pcap(desk_trace(12, 99), input);

        auto one_run = [&](const char* name) {
            RunOptions opts;
            opts.out_dir = tmp.path / name;
            opts.seed = 4242;
            opts.link.one_way_delay_us = 1'000;
            opts.link.jitter_us = 700;
            opts.link.loss_prob = 0.03;
            opts.link.duplicate_prob = 0.02;
            opts.link.seed = 4242;
            const auto result = simulate_run(input, desk_mapping(), opts);
            const auto report = analyze_run_dir(result.run_dir);
            emit_csv(report, result.run_dir / "reports");
            return read_text_file(result.run_dir / "reports" / "deviations.csv");
        };
        const auto first = one_run("run1");
        const auto second = one_run("run2");
        ASSERT_FALSE(first.empty());
        ASSERT_EQ(first, second);
    });
}
