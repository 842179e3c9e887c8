#pragma once

// Edge <-> cloud over a TCP stream. Every message is a frame:
//   u32 LE length | bytes
// Session:
//   edge  -> "AVQH" | version u8 | count u32 | count x u64 codebook hash
//   cloud -> "AVQH" | status u8 (0 ok, 1 rejected) | reason (rest of frame)
//   edge  -> request_id u64 | payload (wire.hpp format)
//   cloud -> request_id u64 | status u8 | ok: B u32, K u32, B*K f32 logits; error: reason
// The cloud handles one request at a time per connection and one connection
// at a time. A rejected handshake closes the connection before any inference.

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <optional>
#include <string>
#include <thread>

#include "avq/split.hpp"

namespace avq {

inline constexpr std::string_view kHandshakeMagic = "AVQH";
inline constexpr std::uint8_t kHandshakeVersion = 1;
inline constexpr std::uint32_t kMaxFrameBytes = 64u << 20;

inline Error sys_error(const std::string& what) { return Error(ErrorKind::io, what + ": " + std::strerror(errno)); }

class Socket {
 public:
  Socket() = default;
  explicit Socket(int fd) : fd_(fd) {}
  Socket(Socket&& o) noexcept : fd_(std::exchange(o.fd_, -1)) {}
  Socket& operator=(Socket&& o) noexcept {
    if (this != &o) {
      close();
      fd_ = std::exchange(o.fd_, -1);
    }
    return *this;
  }
  Socket(const Socket&) = delete;
  Socket& operator=(const Socket&) = delete;
  ~Socket() { close(); }

  int fd() const noexcept { return fd_; }
  bool valid() const noexcept { return fd_ >= 0; }
  void close() {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
  }

  void send_all(std::span<const std::uint8_t> data) const {
    std::size_t off = 0;
    while (off < data.size()) {
      const ssize_t n = ::send(fd_, data.data() + off, data.size() - off, MSG_NOSIGNAL);
      if (n < 0) {
        if (errno == EINTR) continue;
        throw sys_error("send");
      }
      off += static_cast<std::size_t>(n);
    }
  }

  // False on clean EOF before the first byte; throws on EOF mid-read.
  bool recv_all(std::span<std::uint8_t> out) const {
    std::size_t off = 0;
    while (off < out.size()) {
      const ssize_t n = ::recv(fd_, out.data() + off, out.size() - off, 0);
      if (n < 0) {
        if (errno == EINTR) continue;
        throw sys_error("recv");
      }
      if (n == 0) {
        if (off == 0) return false;
        throw Error(ErrorKind::protocol, "connection closed mid-frame");
      }
      off += static_cast<std::size_t>(n);
    }
    return true;
  }

 private:
  int fd_ = -1;
};

inline void send_frame(const Socket& s, std::span<const std::uint8_t> body) {
  require(body.size() <= kMaxFrameBytes, ErrorKind::protocol, "frame too large");
  ByteWriter w;
  w.u32(static_cast<std::uint32_t>(body.size()));
  w.raw(body);
  s.send_all(std::move(w).bytes());
}

// nullopt when the peer closed the connection cleanly between frames.
inline std::optional<Bytes> recv_frame(const Socket& s) {
  std::uint8_t len_bytes[4];
  if (!s.recv_all(len_bytes)) return std::nullopt;
  const std::uint32_t len = ByteReader(len_bytes, ErrorKind::protocol, "frame").u32();
  require(len <= kMaxFrameBytes, ErrorKind::protocol, "frame length " + std::to_string(len) + " exceeds limit");
  Bytes body(len);
  if (len > 0 && !s.recv_all(body)) throw Error(ErrorKind::protocol, "connection closed mid-frame");
  return body;
}

inline Bytes expect_frame(const Socket& s) {
  auto f = recv_frame(s);
  if (!f) throw Error(ErrorKind::protocol, "peer closed the connection");
  return std::move(*f);
}

class Listener {
 public:
  // port 0 picks an ephemeral port; see port().
  Listener(const std::string& host, std::uint16_t port) {
    sock_ = Socket(::socket(AF_INET, SOCK_STREAM, 0));
    if (!sock_.valid()) throw sys_error("socket");
    int one = 1;
    ::setsockopt(sock_.fd(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(port);
    require(::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) == 1, ErrorKind::config,
            "listen host must be an IPv4 address, got '" + host + "'");
    if (::bind(sock_.fd(), reinterpret_cast<sockaddr*>(&addr), sizeof addr) < 0) throw sys_error("bind");
    if (::listen(sock_.fd(), 8) < 0) throw sys_error("listen");
    socklen_t len = sizeof addr;
    ::getsockname(sock_.fd(), reinterpret_cast<sockaddr*>(&addr), &len);
    port_ = ntohs(addr.sin_port);
  }

  std::uint16_t port() const noexcept { return port_; }

  Socket accept() const {
    for (;;) {
      const int fd = ::accept(sock_.fd(), nullptr, nullptr);
      if (fd >= 0) {
        int one = 1;
        ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
        return Socket(fd);
      }
      if (errno != EINTR) throw sys_error("accept");
    }
  }

 private:
  Socket sock_;
  std::uint16_t port_ = 0;
};

// Retries while the server is still coming up.
inline Socket connect_tcp(const std::string& host, std::uint16_t port, int attempts = 50) {
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  if (::getaddrinfo(host.c_str(), std::to_string(port).c_str(), &hints, &res) != 0 || !res)
    throw Error(ErrorKind::io, "cannot resolve host '" + host + "'");
  std::unique_ptr<addrinfo, decltype(&::freeaddrinfo)> guard(res, ::freeaddrinfo);
  for (int i = 0;; ++i) {
    Socket s(::socket(AF_INET, SOCK_STREAM, 0));
    if (!s.valid()) throw sys_error("socket");
    if (::connect(s.fd(), res->ai_addr, res->ai_addrlen) == 0) {
      int one = 1;
      ::setsockopt(s.fd(), IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
      return s;
    }
    if (i + 1 >= attempts) throw sys_error("connect to " + host + ":" + std::to_string(port));
    std::this_thread::sleep_for(std::chrono::milliseconds(100));
  }
}

inline Bytes encode_handshake(std::span<const std::uint64_t> hashes) {
  ByteWriter w;
  w.raw(kHandshakeMagic);
  w.u8(kHandshakeVersion);
  w.u32(static_cast<std::uint32_t>(hashes.size()));
  for (auto h : hashes) w.u64(h);
  return std::move(w).bytes();
}

// Returns an empty string when the handshake matches `hashes`, else the reason.
inline std::string check_handshake(std::span<const std::uint8_t> frame, std::span<const std::uint64_t> hashes) {
  try {
    ByteReader r(frame, ErrorKind::protocol, "handshake");
    if (r.str(4) != kHandshakeMagic) return "bad handshake magic";
    const auto version = r.u8();
    if (version != kHandshakeVersion) return "unsupported handshake version " + std::to_string(version);
    const auto count = r.u32();
    if (count != hashes.size())
      return "codebook count mismatch: edge has " + std::to_string(count) + ", cloud has " +
             std::to_string(hashes.size());
    for (std::uint32_t i = 0; i < count; ++i)
      if (r.u64() != hashes[i]) return "codebook hash mismatch at codebook " + std::to_string(i);
    if (!r.at_end()) return "trailing bytes in handshake";
  } catch (const Error& e) {
    return e.what();
  }
  return {};
}

struct ServeStats {
  std::size_t connections = 0;
  std::size_t requests = 0;
  std::size_t rejected_handshakes = 0;
};

// Serves one accepted connection until the edge closes it.
inline void serve_connection(const Model& m, const Socket& conn, ServeStats& stats) {
  const auto hashes = m.vq->hashes();
  const std::string reason = check_handshake(expect_frame(conn), hashes);
  {
    ByteWriter w;
    w.raw(kHandshakeMagic);
    w.u8(reason.empty() ? 0 : 1);
    w.raw(reason);
    send_frame(conn, std::move(w).bytes());
  }
  if (!reason.empty()) {
    ++stats.rejected_handshakes;
    return;
  }
  while (auto frame = recv_frame(conn)) {
    ByteReader r(*frame, ErrorKind::protocol, "request");
    const std::uint64_t id = r.u64();
    ByteWriter w;
    w.u64(id);
    try {
      auto res = cloud_run(m, std::span<const std::uint8_t>(*frame).subspan(8));
      w.u8(0);
      w.u32(static_cast<std::uint32_t>(res.logits.rows()));
      w.u32(static_cast<std::uint32_t>(res.logits.cols()));
      w.f32s(res.logits.data());
    } catch (const Error& e) {
      w.u8(1);
      w.raw(std::string_view(e.what()));
    }
    send_frame(conn, std::move(w).bytes());
    ++stats.requests;
  }
}

// Accepts up to `max_connections` connections (0 = forever), one at a time.
inline ServeStats serve_cloud(const Model& m, const Listener& listener, std::size_t max_connections = 0) {
  require(m.quantized(), ErrorKind::config, "cloud role needs a model with a partition and AlignedVQ module");
  ServeStats stats;
  while (max_connections == 0 || stats.connections < max_connections) {
    Socket conn = listener.accept();
    ++stats.connections;
    try {
      serve_connection(m, conn, stats);
    } catch (const Error&) {
      // A broken connection must not take the server down; drop it and continue.
    }
  }
  return stats;
}

struct RemoteResult {
  Tensor logits;
  std::uint64_t request_id = 0;
  std::size_t payload_bytes = 0;
  double edge_compute_s = 0.0;
  double round_trip_s = 0.0;
};

// Edge side: connects, handshakes, then sends payloads and reads logits.
class EdgeClient {
 public:
  EdgeClient(const Model& m, const std::string& host, std::uint16_t port) : model_(m) {
    require(m.quantized(), ErrorKind::config, "edge role needs a model with a partition and AlignedVQ module");
    sock_ = connect_tcp(host, port);
    send_frame(sock_, encode_handshake(m.vq->hashes()));
    Bytes reply = expect_frame(sock_);
    ByteReader r(reply, ErrorKind::protocol, "handshake reply");
    require(r.str(4) == kHandshakeMagic, ErrorKind::protocol, "bad handshake reply");
    if (r.u8() != 0) {
      auto rest = r.take(r.remaining());
      throw WireError(WireErrorCode::hash_mismatch,
                      "cloud rejected handshake: " + std::string(rest.begin(), rest.end()));
    }
  }

  RemoteResult infer(const Tensor& images) {
    RemoteResult out;
    out.request_id = next_id_++;
    auto edge = edge_run(model_, images);
    out.edge_compute_s = edge.compute_s;
    out.payload_bytes = edge.payload.size();
    ByteWriter w;
    w.u64(out.request_id);
    w.raw(edge.payload);
    const auto t0 = std::chrono::steady_clock::now();
    send_frame(sock_, std::move(w).bytes());
    Bytes reply = expect_frame(sock_);
    out.round_trip_s = seconds_since(t0);
    ByteReader r(reply, ErrorKind::protocol, "reply");
    const std::uint64_t id = r.u64();
    require(id == out.request_id, ErrorKind::protocol,
            "reply id " + std::to_string(id) + " does not match request " + std::to_string(out.request_id));
    if (r.u8() != 0) {
      auto rest = r.take(r.remaining());
      throw Error(ErrorKind::protocol, "cloud error: " + std::string(rest.begin(), rest.end()));
    }
    const std::size_t rows = r.u32(), cols = r.u32();
    out.logits = Tensor({rows, cols}, r.f32s(rows * cols));
    require(r.at_end(), ErrorKind::protocol, "trailing bytes in reply");
    return out;
  }

 private:
  const Model& model_;
  Socket sock_;
  std::uint64_t next_id_ = 1;
};

}  // namespace avq
