#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "treplay/errors.hpp"
#include "treplay/pcap.hpp"
#include "treplay/splitter.hpp"
#include "treplay/textio.hpp"

namespace treplay {

// deviation = expected - recorded; negative means the packet was late.
struct PacketDeviation {
    uint32_t connection_id = 0;  // stream index
    uint32_t packet_index = 0;   // position in the original connection
    bool from_initiator = true;
    int64_t expected_us = 0;
    std::optional<int64_t> recorded_us;   // empty when the packet never showed up
    std::optional<int64_t> deviation_us;
};

struct ConnectionStats {
    int64_t min_us = 0;     // latest a packet arrived relative to plan
    int64_t max_us = 0;     // earliest
    double mean_us = 0.0;
    int64_t median_us = 0;  // lower middle for even counts
    double stddev_us = 0.0;  // population
    std::size_t packet_count = 0;
};

inline ConnectionStats connection_stats(std::vector<int64_t> devs) {
    if (devs.empty())
        throw Error("no deviations to aggregate");
    ConnectionStats s;
    s.packet_count = devs.size();
    std::sort(devs.begin(), devs.end());
    s.min_us = devs.front();
    s.max_us = devs.back();
    s.median_us = devs[(devs.size() - 1) / 2];
    double sum = 0.0;
    for (int64_t d : devs)
        sum += static_cast<double>(d);
    s.mean_us = sum / static_cast<double>(devs.size());
    double var = 0.0;
    for (int64_t d : devs) {
        const double delta = static_cast<double>(d) - s.mean_us;
        var += delta * delta;
    }
    s.stddev_us = std::sqrt(var / static_cast<double>(devs.size()));
    return s;
}

struct AnalyzedConnection {
    std::string name;
    uint32_t stream_index = 0;
    std::size_t original_packets = 0;
    std::vector<PacketDeviation> deviations;  // one row per original packet
    std::size_t missing = 0;   // originals with no matched capture packet
    std::size_t extra = 0;     // captured packets beyond the originals
    std::optional<ConnectionStats> stats;
};

// Matches capture against original positionally per direction. Sequence
// numbers are randomized at replay, so position is the only stable key;
// lost packets surface as missing rather than being re-matched.
inline AnalyzedConnection align(const ConnectionTrace& original,
                                const std::vector<PacketRecord>& captured,
                                int64_t sync_epoch_us) {
    AnalyzedConnection out;
    out.name = encode_name(original);
    out.stream_index = original.stream_index;
    out.original_packets = original.packets.size();

    // the capture's initiator is whoever sent its bare SYN
    uint32_t cap_initiator_ip = 0;
    for (const auto& p : captured) {
        if (p.syn_only()) {
            cap_initiator_ip = p.src_ip;
            break;
        }
    }
    if (cap_initiator_ip == 0 && !captured.empty())
        cap_initiator_ip = captured.front().src_ip;

    std::vector<const PacketRecord*> cap_out, cap_in;
    for (const auto& p : captured)
        (p.src_ip == cap_initiator_ip ? cap_out : cap_in).push_back(&p);

    const int64_t t0 = original.first_ts_us();
    std::size_t used_out = 0, used_in = 0;
    for (std::size_t i = 0; i < original.packets.size(); ++i) {
        const auto& orig = original.packets[i];
        PacketDeviation d;
        d.connection_id = original.stream_index;
        d.packet_index = static_cast<uint32_t>(i);
        d.from_initiator = orig.src_ip == original.initiator_ip;
        d.expected_us = sync_epoch_us + original.offset_us + (orig.ts_us - t0);
        auto& lane = d.from_initiator ? cap_out : cap_in;
        auto& used = d.from_initiator ? used_out : used_in;
        if (used < lane.size()) {
            d.recorded_us = lane[used]->ts_us;
            d.deviation_us = d.expected_us - *d.recorded_us;
            ++used;
        } else {
            ++out.missing;
        }
        out.deviations.push_back(d);
    }
    out.extra = (cap_out.size() - used_out) + (cap_in.size() - used_in);

    std::vector<int64_t> matched;
    for (const auto& d : out.deviations)
        if (d.deviation_us)
            matched.push_back(*d.deviation_us);
    if (!matched.empty())
        out.stats = connection_stats(std::move(matched));
    return out;
}

// --- aggregation -----------------------------------------------------------------

namespace metric {
constexpr std::size_t kMin = 0;
constexpr std::size_t kMax = 1;
constexpr std::size_t kMean = 2;
constexpr std::size_t kMedian = 3;
constexpr std::size_t kStddev = 4;
constexpr std::size_t kCount = 5;
inline const char* name(std::size_t m) {
    constexpr const char* names[] = {"min", "max", "mean", "median", "stddev"};
    return names[m];
}
inline double get(const ConnectionStats& s, std::size_t m) {
    switch (m) {
        case kMin: return static_cast<double>(s.min_us);
        case kMax: return static_cast<double>(s.max_us);
        case kMean: return s.mean_us;
        case kMedian: return static_cast<double>(s.median_us);
        default: return s.stddev_us;
    }
}
}  // namespace metric

struct MetricSeries {
    std::vector<double> sorted_values;  // one per connection, ascending
    double overall_mean = 0.0;
    double overall_median = 0.0;
    double lowest = 0.0;
    double highest = 0.0;
};

struct AggregateReport {
    std::size_t connections = 0;
    MetricSeries series[metric::kCount];
};

inline AggregateReport aggregate(const std::vector<ConnectionStats>& all) {
    if (all.empty())
        throw Error("nothing to aggregate");
    AggregateReport r;
    r.connections = all.size();
    for (std::size_t m = 0; m < metric::kCount; ++m) {
        auto& s = r.series[m];
        for (const auto& c : all)
            s.sorted_values.push_back(metric::get(c, m));
        std::sort(s.sorted_values.begin(), s.sorted_values.end());
        double sum = 0.0;
        for (double v : s.sorted_values)
            sum += v;
        s.overall_mean = sum / static_cast<double>(s.sorted_values.size());
        s.overall_median = s.sorted_values[(s.sorted_values.size() - 1) / 2];
        s.lowest = s.sorted_values.front();
        s.highest = s.sorted_values.back();
    }
    return r;
}

// --- connection-length buckets ------------------------------------------------------

struct BucketStats {
    std::string label;
    std::string agg_kind;  // "mean" or "median"
    double value_us[metric::kCount] = {};
    std::size_t count = 0;
};

inline std::string bucket_label(std::size_t packets) {
    if (packets <= 10)
        return "3-10";
    if (packets <= 50)
        return "11-50";
    if (packets <= 100)
        return "51-100";
    return ">100";
}

inline const std::vector<std::string>& bucket_labels() {
    static const std::vector<std::string> labels = {"3-10", "11-50", "51-100", ">100"};
    return labels;
}

// Per bucket and per metric, both the mean and the median across the
// bucket's connections. Empty buckets are left out of the result.
inline std::vector<BucketStats> bucket_by_length(const std::vector<AnalyzedConnection>& conns) {
    std::map<std::string, std::vector<const ConnectionStats*>> groups;
    for (const auto& c : conns)
        if (c.stats)
            groups[bucket_label(c.original_packets)].push_back(&*c.stats);

    std::vector<BucketStats> out;
    for (const auto& label : bucket_labels()) {
        auto it = groups.find(label);
        if (it == groups.end())
            continue;
        const auto& members = it->second;
        for (const char* kind : {"mean", "median"}) {
            BucketStats b;
            b.label = label;
            b.agg_kind = kind;
            b.count = members.size();
            for (std::size_t m = 0; m < metric::kCount; ++m) {
                std::vector<double> vals;
                vals.reserve(members.size());
                for (const auto* s : members)
                    vals.push_back(metric::get(*s, m));
                std::sort(vals.begin(), vals.end());
                if (std::string(kind) == "mean") {
                    double sum = 0.0;
                    for (double v : vals)
                        sum += v;
                    b.value_us[m] = sum / static_cast<double>(vals.size());
                } else {
                    b.value_us[m] = vals[(vals.size() - 1) / 2];
                }
            }
            out.push_back(std::move(b));
        }
    }
    return out;
}

// --- report ---------------------------------------------------------------------------

struct Report {
    std::vector<AnalyzedConnection> connections;
    std::optional<AggregateReport> totals;
    std::vector<BucketStats> buckets;
    std::size_t total_missing = 0;
    std::size_t total_extra = 0;

    std::size_t alignment_warnings() const { return total_missing + total_extra; }
};

inline Report build_report(std::vector<AnalyzedConnection> conns) {
    std::sort(conns.begin(), conns.end(), [](const auto& a, const auto& b) {
        return a.stream_index < b.stream_index;
    });
    Report r;
    for (const auto& c : conns) {
        r.total_missing += c.missing;
        r.total_extra += c.extra;
    }
    std::vector<ConnectionStats> stats;
    for (const auto& c : conns)
        if (c.stats)
            stats.push_back(*c.stats);
    if (!stats.empty())
        r.totals = aggregate(stats);
    r.buckets = bucket_by_length(conns);
    r.connections = std::move(conns);
    return r;
}

// --- CSV emission -----------------------------------------------------------------------

namespace detail {
inline int64_t round_us(double v) { return static_cast<int64_t>(std::llround(v)); }
}

inline std::string deviations_csv(const Report& r) {
    std::string out = "connection_id,packet_index,direction,expected_us,recorded_us,deviation_us\n";
    for (const auto& c : r.connections) {
        for (const auto& d : c.deviations) {
            out += std::to_string(d.connection_id) + "," + std::to_string(d.packet_index) + "," +
                   (d.from_initiator ? "out" : "in") + "," + std::to_string(d.expected_us) + ",";
            if (d.recorded_us)
                out += std::to_string(*d.recorded_us);
            out += ",";
            if (d.deviation_us)
                out += std::to_string(*d.deviation_us);
            out += "\n";
        }
    }
    return out;
}

inline std::string connections_csv(const Report& r) {
    std::string out = "connection_id,packets,min_us,max_us,mean_us,median_us,stddev_us\n";
    for (const auto& c : r.connections) {
        if (!c.stats)
            continue;
        const auto& s = *c.stats;
        out += std::to_string(c.stream_index) + "," + std::to_string(c.original_packets) + "," +
               std::to_string(s.min_us) + "," + std::to_string(s.max_us) + "," +
               std::to_string(detail::round_us(s.mean_us)) + "," + std::to_string(s.median_us) +
               "," + std::to_string(detail::round_us(s.stddev_us)) + "\n";
    }
    return out;
}

inline std::string buckets_csv(const Report& r) {
    std::string out = "bucket,agg_kind,metric,value_us,count\n";
    for (const auto& b : r.buckets)
        for (std::size_t m = 0; m < metric::kCount; ++m)
            out += b.label + "," + b.agg_kind + "," + metric::name(m) + "," +
                   std::to_string(detail::round_us(b.value_us[m])) + "," +
                   std::to_string(b.count) + "\n";
    return out;
}

inline void emit_csv(const Report& r, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    auto write = [&](const char* name, const std::string& text) {
        std::ofstream out(dir / name, std::ios::trunc);
        if (!out)
            throw IoError("cannot write " + (dir / name).string());
        out << text;
    };
    write("deviations.csv", deviations_csv(r));
    write("connections.csv", connections_csv(r));
    write("buckets.csv", buckets_csv(r));
}

// Parses deviations.csv back into rows; the analyzer's own output is the
// reference syntax.
inline std::vector<PacketDeviation> parse_deviations_csv(const std::string& text) {
    std::vector<PacketDeviation> rows;
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line))
        throw ParseError("empty deviations csv");
    while (std::getline(in, line)) {
        if (line.empty())
            continue;
        std::vector<std::string> cells;
        std::string cell;
        std::istringstream ls(line);
        while (std::getline(ls, cell, ','))
            cells.push_back(cell);
        while (cells.size() < 6)
            cells.emplace_back();
        PacketDeviation d;
        d.connection_id = static_cast<uint32_t>(std::stoul(cells[0]));
        d.packet_index = static_cast<uint32_t>(std::stoul(cells[1]));
        d.from_initiator = cells[2] == "out";
        d.expected_us = std::stoll(cells[3]);
        if (!cells[4].empty())
            d.recorded_us = std::stoll(cells[4]);
        if (!cells[5].empty())
            d.deviation_us = std::stoll(cells[5]);
        rows.push_back(d);
    }
    return rows;
}

inline std::string summary_text(const Report& r) {
    std::ostringstream out;
    out << "connections analyzed: " << r.connections.size() << "\n";
    out << "alignment warnings: " << r.alignment_warnings() << " (missing " << r.total_missing
        << ", extra " << r.total_extra << ")\n";
    if (r.totals) {
        out << "overall (over per-connection values, ms):\n";
        for (std::size_t m = 0; m < metric::kCount; ++m) {
            const auto& s = r.totals->series[m];
            out << "  " << metric::name(m) << ": mean " << s.overall_mean / 1000.0 << " median "
                << s.overall_median / 1000.0 << " lowest " << s.lowest / 1000.0 << " highest "
                << s.highest / 1000.0 << "\n";
        }
    }
    std::map<std::string, std::size_t> present;
    for (const auto& b : r.buckets)
        present[b.label] = b.count;
    out << "buckets by connection length (median aggregation, ms):\n";
    for (const auto& label : bucket_labels()) {
        auto it = present.find(label);
        if (it == present.end()) {
            out << "  " << label << ": no connections\n";
            continue;
        }
        for (const auto& b : r.buckets) {
            if (b.label != label || b.agg_kind != "median")
                continue;
            out << "  " << label << " (" << b.count << "): ";
            for (std::size_t m = 0; m < metric::kCount; ++m)
                out << metric::name(m) << " " << b.value_us[m] / 1000.0
                    << (m + 1 < metric::kCount ? ", " : "\n");
        }
    }
    return out.str();
}

// --- run-directory analysis ------------------------------------------------------------

// Rebuilds the report for a finished run: originals from split/, captures
// from captures/, timing from run_manifest.json.
inline Report analyze_run_dir(const std::filesystem::path& run_dir) {
    const auto manifest_path = run_dir / "run_manifest.json";
    if (!std::filesystem::exists(manifest_path))
        throw IoError("missing " + manifest_path.string());
    const auto j = nlohmann::json::parse(read_text_file(manifest_path));
    if (!j.contains("sync_epoch_us"))
        throw IoError("run manifest has no sync_epoch_us; the run never started");
    const int64_t sync_epoch_us = j["sync_epoch_us"].get<int64_t>();

    // the split manifest is replicated into every node directory
    const auto split_dir = run_dir / "split";
    std::vector<ManifestEntry> entries;
    bool found = false;
    if (std::filesystem::exists(split_dir)) {
        for (const auto& d : std::filesystem::directory_iterator(split_dir)) {
            if (!d.is_directory())
                continue;
            const auto mf = d.path() / "manifest.txt";
            if (std::filesystem::exists(mf)) {
                entries = parse_manifest(read_text_file(mf));
                found = true;
                break;
            }
        }
    }
    if (!found && !std::filesystem::exists(split_dir))
        throw IoError("missing split directory " + split_dir.string());

    // captures, per initiating node
    std::map<std::string, Trace> captures;
    for (const auto& e : entries) {
        if (captures.count(e.initiator_node))
            continue;
        const auto path = run_dir / "captures" / ("capture_" + e.initiator_node + ".pcap");
        if (!std::filesystem::exists(path))
            throw IoError("missing capture " + path.string());
        captures[e.initiator_node] = read_pcap(path);
    }

    std::vector<AnalyzedConnection> conns;
    for (const auto& e : entries) {
        const auto name = decode_name(e.name);
        const auto file = split_dir / e.initiator_node / e.name;
        auto trace = read_pcap(file);
        ConnectionTrace original;
        original.packets = std::move(trace.packets);
        original.stream_index = name.stream_index;
        original.initiator_ip = parse_ip4(name.initiator_ip);
        original.responder_ip = parse_ip4(name.responder_ip);
        original.replay_port = name.replay_port;
        original.offset_us = name.offset_us;
        original.source_name = name.source_name;

        std::vector<PacketRecord> captured;
        for (const auto& p : captures[e.initiator_node].packets)
            if (p.src_port == name.replay_port && p.dst_port == name.replay_port)
                captured.push_back(p);
        conns.push_back(align(original, captured, sync_epoch_us));
    }
    return build_report(std::move(conns));
}

}  // namespace treplay
