// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <condition_variable>
#include <cstdlib>
#include <deque>
#include <thread>

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include "henet/models.hpp"
#include "henet/serialize.hpp"

namespace henet {

// ---------------------------------------------------------------------------
// Length-prefixed framing over a blocking byte stream:
//   type u8 | length u64 LE | payload
// One session per connection, frames strictly sequential.
// ---------------------------------------------------------------------------

enum class FrameType : u8 {
  Hello = 1,
  HelloAck = 2,
  InferReq = 3,
  NonlinReq = 4,
  NonlinResp = 5,
  Result = 6,
  Error = 7,
};

struct Frame {
  FrameType type;
  std::vector<u8> payload;
};

constexpr u16 kProtocolVersion = 1;
constexpr u64 kMaxFramePayload = u64{1} << 32;

class Stream {
 public:
  virtual ~Stream() = default;
  virtual void send(std::span<const u8> bytes) = 0;
  virtual void recv(u8* buf, std::size_t n) = 0;
  virtual void close() = 0;
};

/// Byte accounting for a session; interactive bytes cover only the
/// nonlinearity exchange.
struct SessionStats {
  u64 bytes_sent = 0;
  u64 bytes_received = 0;
  u64 interactive_bytes = 0;  // NonlinReq + NonlinResp, both directions
  u64 nonlin_round_trips = 0;
  double wall_ms = 0.0;
  std::vector<std::pair<std::string, double>> layer_ms;
  std::size_t batch = 0;

  double amortized_bytes_per_sample() const {
    return batch == 0 ? 0.0 : static_cast<double>(interactive_bytes) / static_cast<double>(batch);
  }
};

inline void write_frame(Stream& stream, FrameType type, std::span<const u8> payload,
                        SessionStats* stats = nullptr, bool interactive = false) {
  std::vector<u8> header;
  header.reserve(9);
  put_u8(header, static_cast<u8>(type));
  put_u64(header, payload.size());
  stream.send(header);
  stream.send(payload);
  if (stats) {
    stats->bytes_sent += header.size() + payload.size();
    if (interactive) stats->interactive_bytes += header.size() + payload.size();
  }
}

inline Frame read_frame(Stream& stream, SessionStats* stats = nullptr,
                        bool interactive = false) {
  u8 header[9];
  stream.recv(header, 9);
  Frame f;
  const u8 type = header[0];
  if (type < 1 || type > 7) throw TransportError("unknown frame type");
  f.type = static_cast<FrameType>(type);
  u64 length = 0;
  for (int i = 7; i >= 0; --i) length = (length << 8) | header[1 + i];
  if (length > kMaxFramePayload) throw TransportError("oversized frame");
  f.payload.resize(length);
  if (length) stream.recv(f.payload.data(), length);
  if (stats) {
    stats->bytes_received += 9 + length;
    if (interactive) stats->interactive_bytes += 9 + length;
  }
  return f;
}

// ---------------------------------------------------------------------------
// Transports: an in-memory duplex pipe for tests and loopback runs, a TCP
// stream for real deployments.
// ---------------------------------------------------------------------------

namespace detail {

struct PipeBuffer {
  std::mutex mutex;
  std::condition_variable cv;
  std::deque<u8> data;
  bool closed = false;
};

}  // namespace detail

class PipeStream : public Stream {
 public:
  PipeStream(std::shared_ptr<detail::PipeBuffer> in, std::shared_ptr<detail::PipeBuffer> out)
      : in_(std::move(in)), out_(std::move(out)) {}

  ~PipeStream() override { close(); }

  void send(std::span<const u8> bytes) override {
    std::lock_guard<std::mutex> lock(out_->mutex);
    if (out_->closed) throw TransportError("pipe closed");
    out_->data.insert(out_->data.end(), bytes.begin(), bytes.end());
    out_->cv.notify_all();
  }

  void recv(u8* buf, std::size_t n) override {
    std::unique_lock<std::mutex> lock(in_->mutex);
    for (std::size_t done = 0; done < n;) {
      in_->cv.wait(lock, [&] { return !in_->data.empty() || in_->closed; });
      if (in_->data.empty() && in_->closed) throw TransportError("pipe closed");
      while (done < n && !in_->data.empty()) {
        buf[done++] = in_->data.front();
        in_->data.pop_front();
      }
    }
  }

  void close() override {
    for (auto& buf : {in_, out_}) {
      std::lock_guard<std::mutex> lock(buf->mutex);
      buf->closed = true;
      buf->cv.notify_all();
    }
  }

 private:
  std::shared_ptr<detail::PipeBuffer> in_;
  std::shared_ptr<detail::PipeBuffer> out_;
};

inline std::pair<std::unique_ptr<Stream>, std::unique_ptr<Stream>> make_pipe() {
  auto a = std::make_shared<detail::PipeBuffer>();
  auto b = std::make_shared<detail::PipeBuffer>();
  return {std::make_unique<PipeStream>(a, b), std::make_unique<PipeStream>(b, a)};
}

inline int idle_timeout_secs() {
  if (const char* env = std::getenv("NGHE2_TIMEOUT_SECS")) {
    int v = std::atoi(env);
    if (v > 0) return v;
  }
  return 30;
}

class TcpStream : public Stream {
 public:
  explicit TcpStream(int fd) : fd_(fd) {
    timeval tv{};
    tv.tv_sec = idle_timeout_secs();
    setsockopt(fd_, SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof(tv));
    setsockopt(fd_, SOL_SOCKET, SO_SNDTIMEO, &tv, sizeof(tv));
    int one = 1;
    setsockopt(fd_, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
  }

  ~TcpStream() override { close(); }
  TcpStream(const TcpStream&) = delete;
  TcpStream& operator=(const TcpStream&) = delete;

  static std::unique_ptr<TcpStream> connect(const std::string& host, u16 port) {
    int fd = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd < 0) throw TransportError("socket() failed");
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(port);
    if (inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
      ::close(fd);
      throw TransportError("bad host address: " + host);
    }
    if (::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
      ::close(fd);
      throw TransportError("connect to " + host + ":" + std::to_string(port) + " failed");
    }
    return std::make_unique<TcpStream>(fd);
  }

  void send(std::span<const u8> bytes) override {
    std::size_t done = 0;
    while (done < bytes.size()) {
      ssize_t n = ::send(fd_, bytes.data() + done, bytes.size() - done, MSG_NOSIGNAL);
      if (n <= 0) throw TransportError("send failed or timed out");
      done += static_cast<std::size_t>(n);
    }
  }

  void recv(u8* buf, std::size_t n) override {
    std::size_t done = 0;
    while (done < n) {
      ssize_t r = ::recv(fd_, buf + done, n - done, 0);
      if (r == 0) throw TransportError("peer closed the connection");
      if (r < 0) throw TransportError("recv failed or timed out");
      done += static_cast<std::size_t>(r);
    }
  }

  void close() override {
    if (fd_ >= 0) {
      ::close(fd_);
      fd_ = -1;
    }
  }

 private:
  int fd_;
};

class TcpListener {
 public:
  explicit TcpListener(u16 port) {
    fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd_ < 0) throw TransportError("socket() failed");
    int one = 1;
    setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_addr.s_addr = htonl(INADDR_ANY);
    addr.sin_port = htons(port);
    if (::bind(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
      ::close(fd_);
      throw TransportError("bind to port " + std::to_string(port) + " failed");
    }
    if (::listen(fd_, 16) != 0) {
      ::close(fd_);
      throw TransportError("listen failed");
    }
  }

  ~TcpListener() {
    if (fd_ >= 0) ::close(fd_);
  }

  u16 port() const {
    sockaddr_in addr{};
    socklen_t len = sizeof(addr);
    getsockname(fd_, reinterpret_cast<sockaddr*>(&addr), &len);
    return ntohs(addr.sin_port);
  }

  std::unique_ptr<TcpStream> accept() {
    int client = ::accept(fd_, nullptr, nullptr);
    if (client < 0) throw TransportError("accept failed");
    return std::make_unique<TcpStream>(client);
  }

 private:
  int fd_;
};

// ---------------------------------------------------------------------------
// Payload encodings.
// ---------------------------------------------------------------------------

struct SessionConfig {
  u16 version = kProtocolVersion;
  Preset preset = Preset::P11;
  PackingMode packing = PackingMode::Real;
  std::string model_id;
  u32 batch = 0;
};

namespace detail {

inline std::vector<u8> encode_hello(const SessionConfig& c) {
  std::vector<u8> out;
  put_u8(out, static_cast<u8>(c.version));
  put_u8(out, static_cast<u8>(c.version >> 8));
  put_u8(out, static_cast<u8>(c.preset));
  put_u8(out, static_cast<u8>(c.packing));
  put_u32(out, c.batch);
  put_u32(out, static_cast<u32>(c.model_id.size()));
  out.insert(out.end(), c.model_id.begin(), c.model_id.end());
  return out;
}

inline SessionConfig decode_hello(const std::vector<u8>& payload) {
  ByteReader in(payload);
  SessionConfig c;
  u16 lo = in.get_u8(), hi = in.get_u8();
  c.version = static_cast<u16>(lo | (hi << 8));
  u8 preset = in.get_u8();
  require(preset <= static_cast<u8>(Preset::P14), "unknown preset id");
  c.preset = static_cast<Preset>(preset);
  u8 packing = in.get_u8();
  require(packing <= 1, "unknown packing id");
  c.packing = static_cast<PackingMode>(packing);
  c.batch = in.get_u32();
  u32 len = in.get_u32();
  const u8* p = in.take(len);
  c.model_id.assign(reinterpret_cast<const char*>(p), len);
  return c;
}

inline std::vector<u8> encode_error(u16 code, const std::string& message) {
  std::vector<u8> out;
  put_u8(out, static_cast<u8>(code));
  put_u8(out, static_cast<u8>(code >> 8));
  out.insert(out.end(), message.begin(), message.end());
  return out;
}

inline std::pair<u16, std::string> decode_error(const std::vector<u8>& payload) {
  ByteReader in(payload);
  u16 lo = in.get_u8(), hi = in.get_u8();
  std::string msg(reinterpret_cast<const char*>(payload.data()) + 2, payload.size() - 2);
  return {static_cast<u16>(lo | (hi << 8)), msg};
}

inline void put_tensor(std::vector<u8>& out, const CkksContext& ctx, const CipherTensor& t) {
  put_u8(out, static_cast<u8>(t.shape.dims.size()));
  for (u32 d : t.shape.dims) put_u32(out, d);
  put_u32(out, static_cast<u32>(t.elems.size()));
  for (const auto& ct : t.elems) {
    auto bytes = serialize_ciphertext(ctx, ct);
    put_u64(out, bytes.size());
    out.insert(out.end(), bytes.begin(), bytes.end());
  }
}

inline CipherTensor get_tensor(ByteReader& in, const CkksContext& ctx) {
  CipherTensor t;
  u8 ndims = in.get_u8();
  for (u8 i = 0; i < ndims; ++i) t.shape.dims.push_back(in.get_u32());
  u32 count = in.get_u32();
  require(count == t.shape.elem_count(), "tensor element count mismatch");
  t.elems.reserve(count);
  for (u32 i = 0; i < count; ++i) {
    u64 len = in.get_u64();
    ByteReader ct_reader(in.take(len), len);
    t.elems.push_back(deserialize_ciphertext(ctx, ct_reader));
  }
  return t;
}

inline std::vector<u8> encode_nonlin_req(const CkksContext& ctx, NonlinKind kind, u32 layer,
                                         u32 window, const std::vector<Ciphertext>& cts) {
  std::vector<u8> out;
  put_u8(out, static_cast<u8>(kind));
  put_u32(out, layer);
  put_u32(out, window);
  put_u32(out, static_cast<u32>(cts.size()));
  for (const auto& ct : cts) {
    auto bytes = serialize_ciphertext(ctx, ct);
    put_u64(out, bytes.size());
    out.insert(out.end(), bytes.begin(), bytes.end());
  }
  return out;
}

struct NonlinRequest {
  NonlinKind kind;
  u32 layer;
  u32 window;
  std::vector<Ciphertext> cts;
};

inline NonlinRequest decode_nonlin_req(const CkksContext& ctx, const std::vector<u8>& payload) {
  ByteReader in(payload);
  NonlinRequest req;
  u8 kind = in.get_u8();
  require(kind == static_cast<u8>(NonlinKind::Relu) || kind == static_cast<u8>(NonlinKind::MaxPool),
          "unknown nonlinearity kind");
  req.kind = static_cast<NonlinKind>(kind);
  req.layer = in.get_u32();
  req.window = in.get_u32();
  u32 count = in.get_u32();
  req.cts.reserve(count);
  for (u32 i = 0; i < count; ++i) {
    u64 len = in.get_u64();
    ByteReader ct_reader(in.take(len), len);
    req.cts.push_back(deserialize_ciphertext(ctx, ct_reader));
  }
  return req;
}

inline std::vector<u8> encode_ct_list(const CkksContext& ctx,
                                      const std::vector<Ciphertext>& cts) {
  std::vector<u8> out;
  put_u32(out, static_cast<u32>(cts.size()));
  for (const auto& ct : cts) {
    auto bytes = serialize_ciphertext(ctx, ct);
    put_u64(out, bytes.size());
    out.insert(out.end(), bytes.begin(), bytes.end());
  }
  return out;
}

inline std::vector<Ciphertext> decode_ct_list(const CkksContext& ctx,
                                              const std::vector<u8>& payload) {
  ByteReader in(payload);
  u32 count = in.get_u32();
  std::vector<Ciphertext> cts;
  cts.reserve(count);
  for (u32 i = 0; i < count; ++i) {
    u64 len = in.get_u64();
    ByteReader ct_reader(in.take(len), len);
    cts.push_back(deserialize_ciphertext(ctx, ct_reader));
  }
  return cts;
}

}  // namespace detail

/// Client-side service for one NonlinReq payload: decrypt, apply f, return
/// fresh encryptions at the top level.
inline std::vector<u8> serve_nonlinearity(const NonlinearityEngine& engine,
                                          const std::vector<u8>& request_payload) {
  auto req = detail::decode_nonlin_req(engine.context(), request_payload);
  auto fresh = engine.apply(req.kind, req.window, req.layer, req.cts);
  return detail::encode_ct_list(engine.context(), fresh);
}

// ---------------------------------------------------------------------------
// Server. Holds plaintext models; evaluates linear layers under HE and
// round-trips nonlinearities to the key-holding client.
// ---------------------------------------------------------------------------

class InferenceServer {
 public:
  struct ModelEntry {
    std::shared_ptr<const CkksContext> ctx;
    PlainModel model;
    RescalePlan plan;
  };

  void add_model(const std::string& id, PlainModel model,
                 std::shared_ptr<const CkksContext> ctx = nullptr) {
    if (!ctx) ctx = CkksContext::create(model.preset);
    auto plan = plan_lazy_rescaling(*ctx, model);
    models_.emplace(id, ModelEntry{std::move(ctx), std::move(model), std::move(plan)});
  }

  void set_threads(unsigned threads) { threads_ = threads; }

  const ModelEntry& entry(const std::string& id) const { return models_.at(id); }

  /// Runs one complete session on an established stream. Returns the
  /// server-side accounting.
  SessionStats handle_session(Stream& stream) const {
    SessionStats stats;
    auto t0 = std::chrono::steady_clock::now();
    try {
      // Await HELLO.
      Frame hello = read_frame(stream, &stats);
      if (hello.type != FrameType::Hello) {
        fail(stream, stats, 4, "expected HELLO");
        return stats;
      }
      SessionConfig config;
      try {
        config = detail::decode_hello(hello.payload);
      } catch (const ValidationError& e) {
        fail(stream, stats, 3, std::string("bad HELLO: ") + e.what());
        return stats;
      }
      if (config.version != kProtocolVersion) {
        fail(stream, stats, 1, "protocol version mismatch");
        return stats;
      }
      auto it = models_.find(config.model_id);
      if (it == models_.end()) {
        fail(stream, stats, 2, "unknown model: " + config.model_id);
        return stats;
      }
      const ModelEntry& entry = it->second;
      if (config.preset != entry.model.preset) {
        fail(stream, stats, 2, "model is registered under a different preset");
        return stats;
      }
      if (config.packing != entry.model.packing) {
        fail(stream, stats, 2, "model is registered under a different packing");
        return stats;
      }
      if (config.batch == 0 || config.batch > batch_capacity(*entry.ctx, config.packing)) {
        fail(stream, stats, 3, "batch size outside slot capacity");
        return stats;
      }
      stats.batch = config.batch;
      write_frame(stream, FrameType::HelloAck, detail::encode_hello(config), &stats);

      // Await INFER_REQ.
      Frame infer = read_frame(stream, &stats);
      if (infer.type != FrameType::InferReq) {
        fail(stream, stats, 4, infer.type == FrameType::Hello ? "HELLO replayed mid-session"
                                                              : "expected INFER_REQ");
        return stats;
      }
      CipherTensor input;
      try {
        ByteReader in(infer.payload);
        input = detail::get_tensor(in, *entry.ctx);
      } catch (const ValidationError& e) {
        fail(stream, stats, 3, std::string("bad INFER_REQ: ") + e.what());
        return stats;
      }

      RemoteProvider provider(stream, *entry.ctx, stats);
      ExecutionConfig cfg;
      cfg.threads = threads_;
      cfg.provider = &provider;
      ExecutionStats exec_stats;
      CipherTensor output = execute(entry.ctx, entry.model, entry.plan, input, cfg, &exec_stats);
      stats.layer_ms = std::move(exec_stats.layer_ms);

      std::vector<u8> result;
      detail::put_tensor(result, *entry.ctx, output);
      write_frame(stream, FrameType::Result, result, &stats);
    } catch (const TransportError&) {
      // Peer went away; nothing further to do.
    } catch (const ValidationError& e) {
      try {
        fail(stream, stats, 3, e.what());
      } catch (...) {
      }
    }
    stats.wall_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    return stats;
  }

  /// Accept loop: one thread per connection, sessions independent.
  void serve(TcpListener& listener, const std::atomic<bool>& stop) const {
    std::vector<std::thread> sessions;
    while (!stop.load()) {
      std::unique_ptr<TcpStream> conn;
      try {
        conn = listener.accept();
      } catch (const TransportError&) {
        break;
      }
      sessions.emplace_back([this, c = std::move(conn)]() mutable { handle_session(*c); });
    }
    for (auto& t : sessions) t.join();
  }

 private:
  class RemoteProvider : public NonlinearityProvider {
   public:
    RemoteProvider(Stream& stream, const CkksContext& ctx, SessionStats& stats)
        : stream_(stream), ctx_(ctx), stats_(stats) {}

    std::vector<Ciphertext> apply(NonlinKind kind, u32 window, u32 layer_seq,
                                  const std::vector<Ciphertext>& cts) override {
      auto payload = detail::encode_nonlin_req(ctx_, kind, layer_seq, window, cts);
      write_frame(stream_, FrameType::NonlinReq, payload, &stats_, /*interactive=*/true);
      Frame resp = read_frame(stream_, &stats_, /*interactive=*/true);
      if (resp.type != FrameType::NonlinResp) {
        throw TransportError("expected NONLIN_RESP at layer " + std::to_string(layer_seq));
      }
      auto fresh = detail::decode_ct_list(ctx_, resp.payload);
      const std::size_t expected =
          kind == NonlinKind::Relu ? cts.size() : cts.size() / window;
      require(fresh.size() == expected, "provider returned the wrong element count");
      ++stats_.nonlin_round_trips;
      return fresh;
    }

   private:
    Stream& stream_;
    const CkksContext& ctx_;
    SessionStats& stats_;
  };

  void fail(Stream& stream, SessionStats& stats, u16 code, const std::string& message) const {
    write_frame(stream, FrameType::Error, detail::encode_error(code, message), &stats);
    stream.close();
  }

  std::map<std::string, ModelEntry> models_;
  unsigned threads_ = 1;
};

// ---------------------------------------------------------------------------
// Client. Encrypts the batch, streams it to the server, answers nonlinearity
// requests with its secret key, and decrypts the result.
// ---------------------------------------------------------------------------

struct ClientResult {
  std::vector<std::vector<double>> outputs;  // per sample
  SessionStats stats;
};

inline ClientResult client_infer(Stream& stream, std::shared_ptr<const CkksContext> ctx,
                                 const SessionConfig& config, const BatchInput& input,
                                 const SecretKey& sk, u64 seed) {
  require(!input.samples.empty(), "batch must be non-empty");
  require(input.samples.size() == config.batch, "batch does not match the session config");
  require(config.batch <= batch_capacity(*ctx, config.packing), "batch exceeds slot capacity");

  ClientResult result;
  result.stats.batch = config.batch;
  auto t0 = std::chrono::steady_clock::now();

  write_frame(stream, FrameType::Hello, detail::encode_hello(config), &result.stats);
  Frame ack = read_frame(stream, &result.stats);
  if (ack.type == FrameType::Error) {
    auto [code, msg] = detail::decode_error(ack.payload);
    throw TransportError("server rejected session (code " + std::to_string(code) + "): " + msg);
  }
  require(ack.type == FrameType::HelloAck, "expected HELLO_ACK");

  auto enc = encrypt_tensor(*ctx, input, sk, seed, config.packing);
  std::vector<u8> infer_payload;
  detail::put_tensor(infer_payload, *ctx, enc);
  write_frame(stream, FrameType::InferReq, infer_payload, &result.stats);

  NonlinearityEngine engine(ctx, sk, seed + 1);
  for (;;) {
    Frame frame = read_frame(stream, &result.stats,
                             /*interactive=*/false);
    if (frame.type == FrameType::NonlinReq) {
      result.stats.interactive_bytes += 9 + frame.payload.size();
      ++result.stats.nonlin_round_trips;
      auto resp = serve_nonlinearity(engine, frame.payload);
      write_frame(stream, FrameType::NonlinResp, resp, &result.stats, /*interactive=*/true);
      continue;
    }
    if (frame.type == FrameType::Result) {
      ByteReader in(frame.payload);
      CipherTensor output = detail::get_tensor(in, *ctx);
      result.outputs = decrypt_tensor(*ctx, output, sk, config.batch);
      break;
    }
    if (frame.type == FrameType::Error) {
      auto [code, msg] = detail::decode_error(frame.payload);
      throw TransportError("server error (code " + std::to_string(code) + "): " + msg);
    }
    throw TransportError("unexpected frame in session");
  }

  result.stats.wall_ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  return result;
}

}  // namespace henet
