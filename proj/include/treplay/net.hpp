#pragma once

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstdint>
#include <cstring>
#include <string>
#include <utility>

#include "treplay/bytes.hpp"
#include "treplay/errors.hpp"
#include "treplay/protocol.hpp"

namespace treplay {

// "<ipv4>:<port>"; "localhost" is accepted for convenience.
struct NetAddress {
    uint32_t ip = 0;  // host order
    uint16_t port = 0;

    sockaddr_in to_sockaddr() const {
        sockaddr_in sa{};
        sa.sin_family = AF_INET;
        sa.sin_addr.s_addr = htonl(ip);
        sa.sin_port = htons(port);
        return sa;
    }

    std::string to_string() const { return format_ip4(ip) + ":" + std::to_string(port); }
};

inline NetAddress parse_address(const std::string& text) {
    const auto colon = text.rfind(':');
    if (colon == std::string::npos)
        throw ParseError("address '" + text + "' is missing a port");
    std::string host = text.substr(0, colon);
    if (host == "localhost")
        host = "127.0.0.1";
    NetAddress a;
    a.ip = parse_ip4(host);
    unsigned long port = 0;
    try {
        port = std::stoul(text.substr(colon + 1));
    } catch (const std::exception&) {
        throw ParseError("bad port in address '" + text + "'");
    }
    if (port > 65535)
        throw ParseError("bad port in address '" + text + "'");
    a.port = static_cast<uint16_t>(port);
    return a;
}

// Owning POSIX socket wrapper; moves, never copies.
class Socket {
  public:
    Socket() = default;
    explicit Socket(int fd) : fd_(fd) {}
    Socket(Socket&& other) noexcept : fd_(std::exchange(other.fd_, -1)) {}
    Socket& operator=(Socket&& other) noexcept {
        if (this != &other) {
            close_fd();
            fd_ = std::exchange(other.fd_, -1);
        }
        return *this;
    }
    ~Socket() { close_fd(); }

    int fd() const { return fd_; }
    bool valid() const { return fd_ >= 0; }
    void close() { close_fd(); }

  private:
    void close_fd() {
        if (fd_ >= 0) {
            ::close(fd_);
            fd_ = -1;
        }
    }
    int fd_ = -1;
};

class TcpStream final : public ByteStream {
  public:
    TcpStream() = default;
    explicit TcpStream(Socket sock) : sock_(std::move(sock)) {}

    static TcpStream connect(const NetAddress& addr) {
        Socket s(::socket(AF_INET, SOCK_STREAM, 0));
        if (!s.valid())
            throw TransportError("socket: " + std::string(strerror(errno)));
        auto sa = addr.to_sockaddr();
        if (::connect(s.fd(), reinterpret_cast<sockaddr*>(&sa), sizeof sa) != 0)
            throw TransportError("connect " + addr.to_string() + ": " +
                                 std::string(strerror(errno)));
        return TcpStream(std::move(s));
    }

    void write_all(std::span<const uint8_t> data) override {
        std::size_t off = 0;
        while (off < data.size()) {
            const auto n = ::send(sock_.fd(), data.data() + off, data.size() - off, MSG_NOSIGNAL);
            if (n < 0) {
                if (errno == EINTR)
                    continue;
                throw TransportError("send: " + std::string(strerror(errno)));
            }
            off += static_cast<std::size_t>(n);
        }
    }

    bool read_exact(std::span<uint8_t> buf) override {
        std::size_t off = 0;
        while (off < buf.size()) {
            const auto n = ::recv(sock_.fd(), buf.data() + off, buf.size() - off, 0);
            if (n < 0) {
                if (errno == EINTR)
                    continue;
                throw TransportError("recv: " + std::string(strerror(errno)));
            }
            if (n == 0) {
                if (off == 0)
                    return false;
                throw TransportError("connection closed mid-read");
            }
            off += static_cast<std::size_t>(n);
        }
        return true;
    }

    void close() { sock_.close(); }
    bool valid() const { return sock_.valid(); }

  private:
    Socket sock_;
};

class TcpListener {
  public:
    // Binds and listens; port 0 picks a free port (see local_address).
    explicit TcpListener(const NetAddress& addr) {
        sock_ = Socket(::socket(AF_INET, SOCK_STREAM, 0));
        if (!sock_.valid())
            throw TransportError("socket: " + std::string(strerror(errno)));
        const int one = 1;
        ::setsockopt(sock_.fd(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
        auto sa = addr.to_sockaddr();
        if (::bind(sock_.fd(), reinterpret_cast<sockaddr*>(&sa), sizeof sa) != 0)
            throw TransportError("bind " + addr.to_string() + ": " +
                                 std::string(strerror(errno)));
        if (::listen(sock_.fd(), 16) != 0)
            throw TransportError("listen: " + std::string(strerror(errno)));
    }

    NetAddress local_address() const {
        sockaddr_in sa{};
        socklen_t len = sizeof sa;
        if (::getsockname(sock_.fd(), reinterpret_cast<sockaddr*>(&sa), &len) != 0)
            throw TransportError("getsockname: " + std::string(strerror(errno)));
        return {ntohl(sa.sin_addr.s_addr), ntohs(sa.sin_port)};
    }

    TcpStream accept() {
        for (;;) {
            const int fd = ::accept(sock_.fd(), nullptr, nullptr);
            if (fd >= 0)
                return TcpStream(Socket(fd));
            if (errno == EINTR)
                continue;
            throw TransportError("accept: " + std::string(strerror(errno)));
        }
    }

    void close() { sock_.close(); }
    int fd() const { return sock_.fd(); }

  private:
    Socket sock_;
};

}  // namespace treplay
