#pragma once

#include <cstdint>
#include <cstring>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "treplay/errors.hpp"

namespace treplay {

inline uint16_t load_be16(const uint8_t* p) {
    return static_cast<uint16_t>(p[0] << 8 | p[1]);
}

inline uint32_t load_be32(const uint8_t* p) {
    return static_cast<uint32_t>(p[0]) << 24 | static_cast<uint32_t>(p[1]) << 16 |
           static_cast<uint32_t>(p[2]) << 8 | static_cast<uint32_t>(p[3]);
}

inline uint64_t load_be64(const uint8_t* p) {
    return static_cast<uint64_t>(load_be32(p)) << 32 | load_be32(p + 4);
}

inline uint16_t load_le16(const uint8_t* p) {
    return static_cast<uint16_t>(p[1] << 8 | p[0]);
}

inline uint32_t load_le32(const uint8_t* p) {
    return static_cast<uint32_t>(p[3]) << 24 | static_cast<uint32_t>(p[2]) << 16 |
           static_cast<uint32_t>(p[1]) << 8 | static_cast<uint32_t>(p[0]);
}

inline void store_be16(uint8_t* p, uint16_t v) {
    p[0] = static_cast<uint8_t>(v >> 8);
    p[1] = static_cast<uint8_t>(v);
}

inline void store_be32(uint8_t* p, uint32_t v) {
    p[0] = static_cast<uint8_t>(v >> 24);
    p[1] = static_cast<uint8_t>(v >> 16);
    p[2] = static_cast<uint8_t>(v >> 8);
    p[3] = static_cast<uint8_t>(v);
}

inline void store_be64(uint8_t* p, uint64_t v) {
    store_be32(p, static_cast<uint32_t>(v >> 32));
    store_be32(p + 4, static_cast<uint32_t>(v));
}

inline void store_le16(uint8_t* p, uint16_t v) {
    p[0] = static_cast<uint8_t>(v);
    p[1] = static_cast<uint8_t>(v >> 8);
}

inline void store_le32(uint8_t* p, uint32_t v) {
    p[0] = static_cast<uint8_t>(v);
    p[1] = static_cast<uint8_t>(v >> 8);
    p[2] = static_cast<uint8_t>(v >> 16);
    p[3] = static_cast<uint8_t>(v >> 24);
}

// Sequential big-endian-by-default writer used by the wire formats.
class ByteWriter {
  public:
    void u8(uint8_t v) { buf_.push_back(v); }

    void be16(uint16_t v) {
        uint8_t tmp[2];
        store_be16(tmp, v);
        append(tmp, 2);
    }

    void be32(uint32_t v) {
        uint8_t tmp[4];
        store_be32(tmp, v);
        append(tmp, 4);
    }

    void be64(uint64_t v) {
        uint8_t tmp[8];
        store_be64(tmp, v);
        append(tmp, 8);
    }

    void le16(uint16_t v) {
        uint8_t tmp[2];
        store_le16(tmp, v);
        append(tmp, 2);
    }

    void le32(uint32_t v) {
        uint8_t tmp[4];
        store_le32(tmp, v);
        append(tmp, 4);
    }

    void bytes(std::span<const uint8_t> b) { append(b.data(), b.size()); }

    void str16(const std::string& s) {
        if (s.size() > 0xffff)
            throw Error("string too long for 16-bit length prefix");
        be16(static_cast<uint16_t>(s.size()));
        append(reinterpret_cast<const uint8_t*>(s.data()), s.size());
    }

    void blob32(std::span<const uint8_t> b) {
        be32(static_cast<uint32_t>(b.size()));
        bytes(b);
    }

    std::vector<uint8_t> take() { return std::move(buf_); }
    const std::vector<uint8_t>& data() const { return buf_; }

  private:
    void append(const uint8_t* p, std::size_t n) { buf_.insert(buf_.end(), p, p + n); }

    std::vector<uint8_t> buf_;
};

// Bounds-checked sequential reader; throws FormatError on underrun.
class ByteReader {
  public:
    explicit ByteReader(std::span<const uint8_t> data) : data_(data) {}

    std::size_t remaining() const { return data_.size() - pos_; }
    bool done() const { return pos_ == data_.size(); }
    std::size_t position() const { return pos_; }

    uint8_t u8() { return take(1)[0]; }
    uint16_t be16() { return load_be16(take(2).data()); }
    uint32_t be32() { return load_be32(take(4).data()); }
    uint64_t be64() { return load_be64(take(8).data()); }

    std::span<const uint8_t> take(std::size_t n) {
        if (remaining() < n)
            throw FormatError("message truncated: need " + std::to_string(n) + " bytes, have " +
                              std::to_string(remaining()));
        auto out = data_.subspan(pos_, n);
        pos_ += n;
        return out;
    }

    std::string str16() {
        auto n = be16();
        auto b = take(n);
        return std::string(reinterpret_cast<const char*>(b.data()), b.size());
    }

    std::vector<uint8_t> blob32() {
        auto n = be32();
        auto b = take(n);
        return std::vector<uint8_t>(b.begin(), b.end());
    }

  private:
    std::span<const uint8_t> data_;
    std::size_t pos_ = 0;
};

// IPv4 addresses are passed around as host-order integers.
inline std::string format_ip4(uint32_t ip) {
    return std::to_string(ip >> 24) + "." + std::to_string((ip >> 16) & 0xff) + "." +
           std::to_string((ip >> 8) & 0xff) + "." + std::to_string(ip & 0xff);
}

inline std::optional<uint32_t> try_parse_ip4(const std::string& s) {
    uint32_t ip = 0;
    int octets = 0;
    std::size_t i = 0;
    while (octets < 4) {
        if (i >= s.size() || s[i] < '0' || s[i] > '9')
            return std::nullopt;
        uint32_t v = 0;
        std::size_t digits = 0;
        while (i < s.size() && s[i] >= '0' && s[i] <= '9') {
            v = v * 10 + static_cast<uint32_t>(s[i] - '0');
            if (v > 255 || ++digits > 3)
                return std::nullopt;
            ++i;
        }
        ip = ip << 8 | v;
        ++octets;
        if (octets < 4) {
            if (i >= s.size() || s[i] != '.')
                return std::nullopt;
            ++i;
        }
    }
    if (i != s.size())
        return std::nullopt;
    return ip;
}

inline uint32_t parse_ip4(const std::string& s) {
    auto ip = try_parse_ip4(s);
    if (!ip)
        throw ParseError("not an IPv4 address: '" + s + "'");
    return *ip;
}

}  // namespace treplay
