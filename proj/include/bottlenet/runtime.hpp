#pragma once

// Split execution over TCP: the client runs the mobile half through the
// codec encoder, the server decodes and finishes the network.

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <bit>
#include <cerrno>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <cstring>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <span>
#include <vector>

#include "bottlenet/codec_layer.hpp"
#include "bottlenet/graph.hpp"
#include "bottlenet/protocol.hpp"

namespace bottlenet {

class NetworkError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Could not establish the connection (refused, unreachable, timed out).
class ConnectError : public NetworkError {
 public:
  using NetworkError::NetworkError;
};

/// The connection failed after it was established.
class StreamError : public NetworkError {
 public:
  using NetworkError::NetworkError;
};

/// The server answered with an ERROR frame.
class RemoteError : public NetworkError {
 public:
  RemoteError(std::uint16_t code, std::string message)
      : NetworkError("server error " + std::to_string(code) + ": " + message), code_(code), message_(std::move(message)) {}
  std::uint16_t code() const { return code_; }
  const std::string& message() const { return message_; }

 private:
  std::uint16_t code_;
  std::string message_;
};

inline constexpr int kDefaultTimeoutMs = 5000;

/// BOTTLENET_TIMEOUT_MS if set to a positive integer, else `fallback`.
inline int timeout_ms(int fallback = kDefaultTimeoutMs) {
  if (const char* env = std::getenv("BOTTLENET_TIMEOUT_MS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v > 0 && v < 86'400'000) return static_cast<int>(v);
  }
  return fallback;
}

struct Endpoint {
  std::string host = "127.0.0.1";
  std::uint16_t port = 0;
};

/// "host:port"; a bare port means localhost.
inline Endpoint parse_endpoint(const std::string& s) {
  const auto colon = s.rfind(':');
  Endpoint e;
  std::string port = s;
  if (colon != std::string::npos) {
    e.host = s.substr(0, colon);
    port = s.substr(colon + 1);
  }
  char* end = nullptr;
  const long p = std::strtol(port.c_str(), &end, 10);
  if (port.empty() || *end != '\0' || p <= 0 || p > 65535) throw std::invalid_argument("bad endpoint '" + s + "', want HOST:PORT");
  e.port = static_cast<std::uint16_t>(p);
  if (e.host.empty()) e.host = "127.0.0.1";
  return e;
}

namespace net {

/// Owning socket descriptor.
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

  int fd() const { return fd_; }
  bool valid() const { return fd_ >= 0; }
  void close() {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
  }
  void shutdown() {
    if (fd_ >= 0) ::shutdown(fd_, SHUT_RDWR);
  }

 private:
  int fd_ = -1;
};

inline void set_io_timeout(int fd, int ms) {
  timeval tv{ms / 1000, (ms % 1000) * 1000};
  ::setsockopt(fd, SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof tv);
  ::setsockopt(fd, SOL_SOCKET, SO_SNDTIMEO, &tv, sizeof tv);
}

enum class IoStatus { ok, closed, timeout, error };

inline IoStatus send_all(int fd, std::span<const std::uint8_t> data) {
  std::size_t sent = 0;
  while (sent < data.size()) {
    const ssize_t n = ::send(fd, data.data() + sent, data.size() - sent, MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) continue;
      return (errno == EAGAIN || errno == EWOULDBLOCK) ? IoStatus::timeout : IoStatus::error;
    }
    sent += static_cast<std::size_t>(n);
  }
  return IoStatus::ok;
}

inline IoStatus recv_all(int fd, std::uint8_t* out, std::size_t len) {
  std::size_t got = 0;
  while (got < len) {
    const ssize_t n = ::recv(fd, out + got, len - got, 0);
    if (n == 0) return IoStatus::closed;
    if (n < 0) {
      if (errno == EINTR) continue;
      return (errno == EAGAIN || errno == EWOULDBLOCK) ? IoStatus::timeout : IoStatus::error;
    }
    got += static_cast<std::size_t>(n);
  }
  return IoStatus::ok;
}

inline Socket connect_to(const Endpoint& ep, int timeout) {
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  const std::string port = std::to_string(ep.port);
  if (const int rc = ::getaddrinfo(ep.host.c_str(), port.c_str(), &hints, &res); rc != 0) {
    throw ConnectError("cannot resolve " + ep.host + ": " + ::gai_strerror(rc));
  }
  std::unique_ptr<addrinfo, decltype(&::freeaddrinfo)> guard(res, ::freeaddrinfo);
  Socket s(::socket(res->ai_family, res->ai_socktype, res->ai_protocol));
  if (!s.valid()) throw ConnectError(std::string("socket: ") + std::strerror(errno));
  const int flags = ::fcntl(s.fd(), F_GETFL, 0);
  ::fcntl(s.fd(), F_SETFL, flags | O_NONBLOCK);
  const std::string where = ep.host + ":" + port;
  if (::connect(s.fd(), res->ai_addr, res->ai_addrlen) != 0) {
    if (errno != EINPROGRESS) throw ConnectError("connect to " + where + ": " + std::strerror(errno));
    pollfd p{s.fd(), POLLOUT, 0};
    int rc = 0;
    do {
      rc = ::poll(&p, 1, timeout);
    } while (rc < 0 && errno == EINTR);
    if (rc == 0) throw ConnectError("connect to " + where + ": timed out after " + std::to_string(timeout) + " ms");
    int err = 0;
    socklen_t len = sizeof err;
    ::getsockopt(s.fd(), SOL_SOCKET, SO_ERROR, &err, &len);
    if (rc < 0 || err != 0) throw ConnectError("connect to " + where + ": " + std::strerror(err ? err : errno));
  }
  ::fcntl(s.fd(), F_SETFL, flags);
  const int one = 1;
  ::setsockopt(s.fd(), IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
  set_io_timeout(s.fd(), timeout);
  return s;
}

}  // namespace net

/// Cloud side. Serves every model keyed by partition id; each connection
/// gets its own thread and is handled request by request.
class Server {
 public:
  struct Options {
    std::string host = "127.0.0.1";
    std::uint16_t port = 0;  // 0 = ephemeral
    std::optional<double> load_stub;
    std::size_t capacity = 4;  // in-flight requests that make K_cloud = 2
    int io_timeout_ms = 0;     // 0 = BOTTLENET_TIMEOUT_MS or the default
  };

  Server(std::map<std::uint16_t, NetworkGraph> models, Options opts) : opts_(std::move(opts)) {
    for (auto& [id, g] : models) {
      if (!g.bottleneck()) throw std::invalid_argument("model for partition " + std::to_string(id) + " has no bottleneck unit");
      models_.emplace(id, std::make_shared<const NetworkGraph>(std::move(g)));
    }
    if (opts_.capacity == 0) throw std::invalid_argument("server capacity must be >= 1");
    stub_bits_.store(opts_.load_stub ? std::bit_cast<std::uint64_t>(*opts_.load_stub) : kNoStub);
  }

  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;
  ~Server() { stop(); }

  void start() {
    listener_ = net::Socket(::socket(AF_INET, SOCK_STREAM, 0));
    if (!listener_.valid()) throw NetworkError(std::string("socket: ") + std::strerror(errno));
    const int one = 1;
    ::setsockopt(listener_.fd(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(opts_.port);
    if (::inet_pton(AF_INET, opts_.host.c_str(), &addr.sin_addr) != 1) throw NetworkError("bad listen address " + opts_.host);
    if (::bind(listener_.fd(), reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0) {
      throw NetworkError("bind " + opts_.host + ":" + std::to_string(opts_.port) + ": " + std::strerror(errno));
    }
    if (::listen(listener_.fd(), SOMAXCONN) != 0) throw NetworkError(std::string("listen: ") + std::strerror(errno));
    socklen_t len = sizeof addr;
    ::getsockname(listener_.fd(), reinterpret_cast<sockaddr*>(&addr), &len);
    port_ = ntohs(addr.sin_port);
    running_ = true;
    acceptor_ = std::thread([this] { accept_loop(); });
  }

  void stop() {
    if (!running_.exchange(false)) return;
    listener_.shutdown();
    if (acceptor_.joinable()) acceptor_.join();
    listener_.close();
    std::vector<std::thread> workers;
    {
      std::lock_guard lock(mu_);
      for (auto& c : conns_) c->sock.shutdown();
      for (auto& c : conns_) workers.push_back(std::move(c->worker));
    }
    for (auto& w : workers) {
      if (w.joinable()) w.join();
    }
    std::lock_guard lock(mu_);
    conns_.clear();
  }

  std::uint16_t port() const { return port_; }
  std::size_t in_flight() const { return in_flight_.load(); }
  std::size_t requests_served() const { return served_.load(); }

  void set_load_stub(std::optional<double> k) { stub_bits_.store(k ? std::bit_cast<std::uint64_t>(*k) : kNoStub); }

  /// Stub value when set, else 1 + in_flight / capacity.
  double k_cloud() const {
    const std::uint64_t bits = stub_bits_.load();
    if (bits != kNoStub) return std::bit_cast<double>(bits);
    return 1.0 + static_cast<double>(in_flight_.load()) / static_cast<double>(opts_.capacity);
  }

  /// Called on the worker thread while an inference is in flight (tests use
  /// it to hold a request open).
  void set_infer_hook(std::function<void(std::uint16_t)> hook) {
    std::lock_guard lock(mu_);
    hook_ = std::move(hook);
  }

  /// Logits for one request, or an ERROR message. Never throws.
  proto::Message handle(const proto::Message& msg, std::map<std::uint16_t, NetworkGraph>& scratch) {
    try {
      if (const auto* req = std::get_if<proto::InferRequest>(&msg)) return infer(*req, scratch);
      if (std::holds_alternative<proto::LoadQuery>(msg)) {
        return proto::LoadReport{static_cast<float>(k_cloud()), static_cast<std::uint32_t>(in_flight_.load())};
      }
      return proto::ErrorMessage{proto::bad_request, "unexpected message type for a server"};
    } catch (const std::exception& e) {
      return proto::ErrorMessage{proto::internal, e.what()};
    }
  }

 private:
  static constexpr std::uint64_t kNoStub = ~std::uint64_t{0};

  struct Connection {
    net::Socket sock;
    std::thread worker;
    std::atomic<bool> done{false};
  };

  proto::Message infer(const proto::InferRequest& req, std::map<std::uint16_t, NetworkGraph>& scratch) {
    auto it = models_.find(req.partition_id);
    if (it == models_.end()) {
      return proto::ErrorMessage{proto::unknown_partition, "unknown partition " + std::to_string(req.partition_id)};
    }
    struct InFlight {
      std::atomic<std::size_t>& n;
      explicit InFlight(std::atomic<std::size_t>& c) : n(c) { ++n; }
      ~InFlight() { --n; }
    } guard(in_flight_);
    std::function<void(std::uint16_t)> hook;
    {
      std::lock_guard lock(mu_);
      hook = hook_;
    }
    if (hook) hook(req.partition_id);
    // Each connection evaluates on its own copy; the loaded halves stay untouched.
    auto local = scratch.find(req.partition_id);
    if (local == scratch.end()) local = scratch.emplace(req.partition_id, *it->second).first;
    NetworkGraph& g = local->second;
    const auto& b = *g.bottleneck();
    Tensor restored;
    try {
      restored = g.codec_layer()->decode_sample(codec::EncodedFeature::parse(req.feature));
    } catch (const std::exception& e) {
      return proto::ErrorMessage{proto::bad_request, std::string("malformed feature: ") + e.what()};
    }
    const Tensor logits = g.run(restored, b.codec_layer + 1, g.size() - 1, Mode::eval);
    proto::InferResponse resp;
    resp.logits.reserve(logits.size());
    for (double v : logits.values()) resp.logits.push_back(static_cast<float>(v));
    for (float v : resp.logits) {
      if (!std::isfinite(v)) return proto::ErrorMessage{proto::internal, "non-finite logits"};
    }
    ++served_;
    return resp;
  }

  void accept_loop() {
    while (running_) {
      const int fd = ::accept(listener_.fd(), nullptr, nullptr);
      if (fd < 0) {
        if (errno == EINTR || errno == ECONNABORTED) continue;
        if (!running_) break;
        std::this_thread::sleep_for(std::chrono::milliseconds(10));
        continue;
      }
      const int one = 1;
      ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
      std::lock_guard lock(mu_);
      reap();
      if (!running_) {
        ::close(fd);
        break;
      }
      auto c = std::make_unique<Connection>();
      c->sock = net::Socket(fd);
      Connection* raw = c.get();
      c->worker = std::thread([this, raw] {
        serve_connection(raw->sock.fd());
        // The descriptor is released at the next reap; the peer sees EOF now.
        raw->sock.shutdown();
        raw->done = true;
      });
      conns_.push_back(std::move(c));
    }
  }

  // Caller holds mu_.
  void reap() {
    for (auto it = conns_.begin(); it != conns_.end();) {
      if ((*it)->done) {
        if ((*it)->worker.joinable()) (*it)->worker.join();
        it = conns_.erase(it);
      } else {
        ++it;
      }
    }
  }

  bool reply(int fd, const proto::Message& m) { return net::send_all(fd, proto::encode(m)) == net::IoStatus::ok; }

  void serve_connection(int fd) {
    const int io_ms = opts_.io_timeout_ms > 0 ? opts_.io_timeout_ms : timeout_ms();
    std::map<std::uint16_t, NetworkGraph> scratch;
    std::vector<std::uint8_t> buf;
    while (running_) {
      std::uint8_t header[proto::kHeaderSize];
      // Idle connections may wait indefinitely between requests.
      net::set_io_timeout(fd, 0);
      if (net::recv_all(fd, header, 1) != net::IoStatus::ok) return;
      net::set_io_timeout(fd, io_ms);
      if (net::recv_all(fd, header + 1, proto::kHeaderSize - 1) != net::IoStatus::ok) return;
      proto::FrameHeader h;
      try {
        h = proto::parse_header(header);
      } catch (const FormatError& e) {
        // Framing is lost; report and drop the connection.
        reply(fd, proto::ErrorMessage{proto::bad_request, e.what()});
        return;
      }
      buf.resize(h.body_len);
      if (h.body_len > 0 && net::recv_all(fd, buf.data(), buf.size()) != net::IoStatus::ok) return;
      proto::Message response;
      if (!proto::known_type(h.type)) {
        response = proto::ErrorMessage{proto::bad_request, "unknown message type " + std::to_string(h.type)};
      } else {
        try {
          response = handle(proto::from_frame({static_cast<proto::MsgType>(h.type), buf}), scratch);
        } catch (const std::exception& e) {
          response = proto::ErrorMessage{proto::bad_request, e.what()};
        }
      }
      if (!reply(fd, response)) return;
    }
  }

  Options opts_;
  std::map<std::uint16_t, std::shared_ptr<const NetworkGraph>> models_;
  net::Socket listener_;
  std::uint16_t port_ = 0;
  std::atomic<bool> running_{false};
  std::thread acceptor_;
  std::mutex mu_;
  std::vector<std::unique_ptr<Connection>> conns_;
  std::function<void(std::uint16_t)> hook_;
  std::atomic<std::size_t> in_flight_{0};
  std::atomic<std::size_t> served_{0};
  std::atomic<std::uint64_t> stub_bits_{kNoStub};
};

struct InferTimings {
  double mobile_ms = 0.0;  // mobile half + encode
  double send_ms = 0.0;    // request written to the socket
  double round_trip_ms = 0.0;
  std::size_t feature_bytes = 0;
};

struct InferResult {
  std::vector<float> logits;
  InferTimings timings;
};

/// Mobile side: one connection, reused across requests.
class SplitClient {
 public:
  explicit SplitClient(Endpoint server, int timeout = timeout_ms()) : server_(std::move(server)), timeout_(timeout) {}

  void connect() {
    if (!sock_.valid()) sock_ = net::connect_to(server_, timeout_);
  }
  void disconnect() { sock_.close(); }
  bool connected() const { return sock_.valid(); }

  /// Sends one message and waits for the reply.
  proto::Message exchange(const proto::Message& m) {
    connect();
    const auto bytes = proto::encode(m);
    if (auto st = net::send_all(sock_.fd(), bytes); st != net::IoStatus::ok) fail("send", st);
    std::uint8_t header[proto::kHeaderSize];
    if (auto st = net::recv_all(sock_.fd(), header, sizeof header); st != net::IoStatus::ok) fail("receive", st);
    proto::FrameHeader h;
    try {
      h = proto::parse_header(header);
    } catch (const FormatError& e) {
      disconnect();
      throw StreamError(std::string("bad response frame: ") + e.what());
    }
    std::vector<std::uint8_t> body(h.body_len);
    if (!body.empty()) {
      if (auto st = net::recv_all(sock_.fd(), body.data(), body.size()); st != net::IoStatus::ok) fail("receive", st);
    }
    proto::Message reply;
    try {
      if (!proto::known_type(h.type)) throw FormatError("unknown message type " + std::to_string(h.type), 5);
      reply = proto::from_frame({static_cast<proto::MsgType>(h.type), std::move(body)});
    } catch (const FormatError& e) {
      throw StreamError(std::string("bad response: ") + e.what());
    }
    if (const auto* err = std::get_if<proto::ErrorMessage>(&reply)) throw RemoteError(err->code, err->message);
    return reply;
  }

  /// Already-encoded feature for `partition_id`.
  std::vector<float> infer_encoded(std::uint16_t partition_id, std::vector<std::uint8_t> feature) {
    auto reply = exchange(proto::InferRequest{partition_id, std::move(feature)});
    auto* resp = std::get_if<proto::InferResponse>(&reply);
    if (!resp) throw StreamError("expected INFER_RESP");
    return std::move(resp->logits);
  }

  /// Runs the mobile half of `model` on a single sample, ships the encoded
  /// feature and returns the server's logits.
  InferResult infer(NetworkGraph& model, const Tensor& x, std::uint16_t partition_id) {
    const auto& b = model.bottleneck();
    if (!b) throw std::invalid_argument("infer: model has no bottleneck unit");
    if (x.shape().n != 1) throw ShapeError("infer: expected a single sample, got " + x.shape().str());
    using clock = std::chrono::steady_clock;
    auto ms = [](clock::duration d) { return std::chrono::duration<double, std::milli>(d).count(); };
    InferResult r;
    const auto t0 = clock::now();
    const Tensor feat = model.run(x, 0, b->codec_layer - 1, Mode::eval);
    auto wire = model.codec_layer()->encode_sample(feat, 0).serialize();
    const auto t1 = clock::now();
    r.timings.mobile_ms = ms(t1 - t0);
    r.timings.feature_bytes = wire.size();
    connect();
    const auto frame = proto::encode(proto::InferRequest{partition_id, std::move(wire)});
    const auto t2 = clock::now();
    if (auto st = net::send_all(sock_.fd(), frame); st != net::IoStatus::ok) fail("send", st);
    r.timings.send_ms = ms(clock::now() - t2);
    std::uint8_t header[proto::kHeaderSize];
    if (auto st = net::recv_all(sock_.fd(), header, sizeof header); st != net::IoStatus::ok) fail("receive", st);
    proto::FrameHeader h;
    std::vector<std::uint8_t> body;
    try {
      h = proto::parse_header(header);
      body.resize(h.body_len);
      if (!body.empty()) {
        if (auto st = net::recv_all(sock_.fd(), body.data(), body.size()); st != net::IoStatus::ok) fail("receive", st);
      }
      if (!proto::known_type(h.type)) throw FormatError("unknown message type " + std::to_string(h.type), 5);
    } catch (const FormatError& e) {
      disconnect();
      throw StreamError(std::string("bad response frame: ") + e.what());
    }
    r.timings.round_trip_ms = ms(clock::now() - t2);
    proto::Message reply;
    try {
      reply = proto::from_frame({static_cast<proto::MsgType>(h.type), std::move(body)});
    } catch (const FormatError& e) {
      throw StreamError(std::string("bad response: ") + e.what());
    }
    if (const auto* err = std::get_if<proto::ErrorMessage>(&reply)) throw RemoteError(err->code, err->message);
    auto* resp = std::get_if<proto::InferResponse>(&reply);
    if (!resp) throw StreamError("expected INFER_RESP");
    r.logits = std::move(resp->logits);
    return r;
  }

  proto::LoadReport query_load() {
    auto reply = exchange(proto::LoadQuery{});
    auto* rep = std::get_if<proto::LoadReport>(&reply);
    if (!rep) throw StreamError("expected LOAD_REPORT");
    return *rep;
  }

 private:
  [[noreturn]] void fail(const char* what, net::IoStatus st) {
    disconnect();
    std::string why = st == net::IoStatus::closed ? "connection closed by peer"
                      : st == net::IoStatus::timeout ? "timed out after " + std::to_string(timeout_) + " ms"
                                                     : std::strerror(errno);
    throw StreamError(std::string(what) + " failed mid-stream: " + why);
  }

  Endpoint server_;
  int timeout_;
  net::Socket sock_;
};

/// Partition id the client uses for its next request.
class ActivePartition {
 public:
  explicit ActivePartition(std::uint16_t id) : id_(id) {}
  std::uint16_t get() const { return id_.load(std::memory_order_acquire); }
  void set(std::uint16_t id) { id_.store(id, std::memory_order_release); }

 private:
  std::atomic<std::uint16_t> id_;
};

/// Watches K_cloud samples and repartitions when the load leaves the band
/// around the load the current partition was planned for.
class LoadMonitor {
 public:
  struct Options {
    double band = 0.25;  // relative half-width around the reference load
    std::size_t max_missed = 3;
    double initial_k = 1.0;
  };

  using Sampler = std::function<std::optional<double>()>;  // nullopt = missed ping
  using Planner = std::function<std::uint16_t(double)>;    // K_cloud -> partition id

  LoadMonitor(Sampler sample, Planner plan, ActivePartition& active, Options opts)
      : sample_(std::move(sample)), plan_(std::move(plan)), active_(active), opts_(opts), reference_(opts.initial_k) {}

  /// One ping. Returns true when the active partition changed.
  bool step() {
    const std::optional<double> k = sample_();
    if (!k) {
      if (++missed_ >= opts_.max_missed) stale_ = true;
      return false;
    }
    missed_ = 0;
    stale_ = false;
    last_k_ = *k;
    ++samples_;
    if (std::fabs(*k - reference_) <= opts_.band * reference_) return false;
    reference_ = *k;
    ++replans_;
    const std::uint16_t next = plan_(*k);
    if (next == active_.get()) return false;
    active_.set(next);
    ++swaps_;
    return true;
  }

  /// Pings every `period` until `stop` is set.
  void run(std::chrono::milliseconds period, const std::atomic<bool>& stop) {
    while (!stop.load()) {
      step();
      std::this_thread::sleep_for(period);
    }
  }

  bool stale() const { return stale_; }
  std::size_t swaps() const { return swaps_; }
  std::size_t replans() const { return replans_; }
  std::size_t samples() const { return samples_; }
  std::optional<double> last_k() const { return last_k_; }
  double reference_k() const { return reference_; }

 private:
  Sampler sample_;
  Planner plan_;
  ActivePartition& active_;
  Options opts_;
  double reference_;
  std::optional<double> last_k_;
  std::size_t missed_ = 0;
  std::size_t samples_ = 0;
  std::size_t replans_ = 0;
  std::size_t swaps_ = 0;
  bool stale_ = false;
};

/// Sampler that queries a server over its own connection; failures count as
/// missed pings.
inline LoadMonitor::Sampler server_sampler(std::shared_ptr<SplitClient> client) {
  return [client]() -> std::optional<double> {
    try {
      return static_cast<double>(client->query_load().k_cloud);
    } catch (const NetworkError&) {
      client->disconnect();
      return std::nullopt;
    }
  };
}

}  // namespace bottlenet
