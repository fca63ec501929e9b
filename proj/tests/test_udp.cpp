#include <gtest/gtest.h>

#include <sys/socket.h>

#include <thread>

#include "support/fixtures.hpp"
#include "treplay/replay.hpp"
#include "treplay/udp.hpp"

using namespace treplay;

namespace {

struct TwoNodes {
    SystemClock clock;
    UdpDataPlane a;
    UdpDataPlane b;

    TwoNodes()
        : a(clock, parse_address("127.0.0.1:0")), b(clock, parse_address("127.0.0.1:0")) {
        const std::map<std::string, NetAddress> peers = {{"A", a.local_address()},
                                                         {"B", b.local_address()}};
        a.configure("A", peers);
        b.configure("B", peers);
    }
};

std::vector<uint8_t> probe_packet(uint16_t port, uint32_t seq, std::size_t len = 32) {
    return to_wire_bytes(fixtures::make_packet(0, "10.99.0.1", "10.99.0.2", port, port, seq, 0,
                                               tcpflag::kAck, len));
}

}  // namespace

TEST(Udp, OpaqueCarriageIsByteExact) {
    TwoNodes nodes;
    auto* tx = nodes.a.register_engine(21000, true, nullptr);
    auto* rx = nodes.b.register_engine(21000, false, nullptr);
    UdpChannel out(nodes.a, *tx, "B", nodes.clock);
    UdpChannel in(nodes.b, *rx, "A", nodes.clock);

    const auto bytes = probe_packet(21000, 7, 200);
    out.send(bytes);
    const auto got = in.recv_until(nodes.clock.now_us() + 2'000'000);
    ASSERT_TRUE(got.has_value());
    EXPECT_EQ(got->bytes, bytes);
}

TEST(Udp, DemultiplexesTwoConnectionsOnOneEndpoint) {
    TwoNodes nodes;
    auto* tx1 = nodes.a.register_engine(21000, true, nullptr);
    auto* tx2 = nodes.a.register_engine(21001, true, nullptr);
    auto* rx1 = nodes.b.register_engine(21000, false, nullptr);
    auto* rx2 = nodes.b.register_engine(21001, false, nullptr);
    UdpChannel out1(nodes.a, *tx1, "B", nodes.clock);
    UdpChannel out2(nodes.a, *tx2, "B", nodes.clock);
    UdpChannel in1(nodes.b, *rx1, "A", nodes.clock);
    UdpChannel in2(nodes.b, *rx2, "A", nodes.clock);

    out1.send(probe_packet(21000, 1));
    out2.send(probe_packet(21001, 2));
    const auto got1 = in1.recv_until(nodes.clock.now_us() + 2'000'000);
    const auto got2 = in2.recv_until(nodes.clock.now_us() + 2'000'000);
    ASSERT_TRUE(got1 && got2);
    EXPECT_EQ(parse_wire_packet(got1->bytes).seq, 1u);
    EXPECT_EQ(parse_wire_packet(got2->bytes).seq, 2u);
}

TEST(Udp, SameNodePairIsWiredInternally) {
    SystemClock clock;
    UdpDataPlane plane(clock, parse_address("127.0.0.1:0"));
    plane.configure("solo", {{"solo", plane.local_address()}});
    auto* init = plane.register_engine(22000, true, nullptr);
    auto* resp = plane.register_engine(22000, false, nullptr);
    UdpChannel out(plane, *init, "solo", clock);
    UdpChannel in(plane, *resp, "solo", clock);

    out.send(probe_packet(22000, 9));
    const auto got = in.recv_until(clock.now_us() + 1'000'000);
    ASSERT_TRUE(got.has_value());
    EXPECT_EQ(parse_wire_packet(got->bytes).seq, 9u);
}

TEST(Udp, BadFramingIsDroppedAndCounted) {
    TwoNodes nodes;
    auto* rx = nodes.b.register_engine(21000, false, nullptr);
    UdpChannel in(nodes.b, *rx, "A", nodes.clock);

    // raw datagram whose length prefix disagrees with its size
    Socket s(::socket(AF_INET, SOCK_DGRAM, 0));
    ASSERT_TRUE(s.valid());
    auto dst = nodes.b.local_address().to_sockaddr();
    std::vector<uint8_t> bogus = {0x00, 0x00, 0x00, 0x63, 1, 2, 3};  // claims 99 bytes
    ASSERT_EQ(::sendto(s.fd(), bogus.data(), bogus.size(), 0,
                       reinterpret_cast<sockaddr*>(&dst), sizeof dst),
              static_cast<ssize_t>(bogus.size()));

    EXPECT_FALSE(in.recv_until(nodes.clock.now_us() + 300'000).has_value());
    EXPECT_EQ(nodes.b.framing_drops(), 1u);
}

TEST(Udp, OversizedPacketIsATransportError) {
    TwoNodes nodes;
    auto* tx = nodes.a.register_engine(21000, true, nullptr);
    UdpChannel out(nodes.a, *tx, "B", nodes.clock);
    std::vector<uint8_t> huge(70'000, 0);
    EXPECT_THROW(out.send(huge), TransportError);
}

TEST(Udp, UnknownPeerIsATransportError) {
    TwoNodes nodes;
    auto* tx = nodes.a.register_engine(21000, true, nullptr);
    UdpChannel out(nodes.a, *tx, "nowhere", nodes.clock);
    EXPECT_THROW(out.send(probe_packet(21000, 1)), TransportError);
}

TEST(Udp, HandshakeReplayOverLoopback) {
    const auto c = fixtures::prepared_connection(fixtures::handshake_trace());
    TwoNodes nodes;
    CaptureTap tap;
    auto* islot = nodes.a.register_engine(c.replay_port, true, &tap);
    auto* rslot = nodes.b.register_engine(c.replay_port, false, nullptr);
    UdpChannel ichan(nodes.a, *islot, "B", nodes.clock);
    UdpChannel rchan(nodes.b, *rslot, "A", nodes.clock);

    const int64_t sync = nodes.clock.now_us() + 50'000;
    auto si = build_schedule(c, true, parse_ip4("10.99.0.1"), parse_ip4("10.99.0.2"), sync, 1);
    auto sr = build_schedule(c, false, parse_ip4("10.99.0.2"), parse_ip4("10.99.0.1"), sync, 2);

    ReplayConfig cfg;
    cfg.inactivity_timeout_us = 3'000'000;
    ReplayOutcome oi, orr;
    std::thread ti([&] { oi = run_connection(si, ichan, nodes.clock, cfg); });
    std::thread tr([&] { orr = run_connection(sr, rchan, nodes.clock, cfg); });
    ti.join();
    tr.join();

    EXPECT_EQ(oi.status, ReplayStatus::Completed);
    EXPECT_EQ(orr.status, ReplayStatus::Completed);
    EXPECT_EQ(tap.to_trace().size(), 3u);
    // wall-clock scheduling: sends never early, within loose slack
    ASSERT_TRUE(oi.first_send_us.has_value());
    EXPECT_GE(*oi.first_send_us, sync);
}
