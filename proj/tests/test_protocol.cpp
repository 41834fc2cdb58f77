// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>
#include <future>
#include <map>

#include "henet/protocol.hpp"

using namespace henet;

namespace {

std::shared_ptr<const CkksContext> test_ctx(Preset p) {
  static std::map<Preset, std::shared_ptr<const CkksContext>> cache;
  auto it = cache.find(p);
  if (it == cache.end()) it = cache.emplace(p, CkksContext::create(p)).first;
  return it->second;
}

PlainModel relu_model(Preset preset, u32 count) {
  nlohmann::json j;
  j["preset"] = preset_name(preset);
  j["nodes"] = nlohmann::json::array(
      {detail::node_json("input", "Input", {}, {{"shape", {count}}}),
       detail::node_json("relu", "Relu", {"input"}),
       detail::node_json("out", "Output", {"relu"})});
  return load_model(j.dump(), {});
}

/// Runs a server session on one pipe end; returns its stats once the peer
/// finishes.
struct ServerRun {
  std::unique_ptr<Stream> client_end;
  std::future<SessionStats> stats;

  ServerRun(const InferenceServer& server) {
    auto [a, b] = make_pipe();
    client_end = std::move(a);
    stats = std::async(std::launch::async,
                       [&server, s = std::shared_ptr<Stream>(std::move(b))]() mutable {
                         auto st = server.handle_session(*s);
                         s->close();
                         return st;
                       });
  }
};

}  // namespace

TEST_CASE("frames round-trip over the pipe transport", "[protocol]") {
  auto [a, b] = make_pipe();
  std::vector<u8> payload = {1, 2, 3, 4, 5};
  write_frame(*a, FrameType::NonlinResp, payload);
  auto f = read_frame(*b);
  CHECK(f.type == FrameType::NonlinResp);
  CHECK(f.payload == payload);

  a->close();
  CHECK_THROWS_AS(read_frame(*b), TransportError);
}

TEST_CASE("handshake accepts matching configs and rejects bad ones", "[protocol]") {
  auto ctx = test_ctx(Preset::P12);
  auto keys = keygen(*ctx, 3, false);
  InferenceServer server;
  server.add_model("tiny", relu_model(Preset::P12, 4), ctx);

  BatchInput input{TensorShape{{4}}, {{1.0, -2.0, 0.5, 3.0}, {-1.0, 2.0, -0.5, 0.0}}};
  SessionConfig config;
  config.preset = Preset::P12;
  config.model_id = "tiny";
  config.batch = 2;

  // Happy path.
  {
    ServerRun run(server);
    auto result = client_infer(*run.client_end, ctx, config, input, keys.secret, 900);
    run.client_end->close();
    REQUIRE(result.outputs.size() == 2);
    CHECK(result.outputs[0][0] == Catch::Approx(1.0).margin(1e-4));
    CHECK(result.outputs[0][1] == Catch::Approx(0.0).margin(1e-4));
    CHECK(result.stats.nonlin_round_trips == 1);
    run.stats.get();
  }

  // Unknown model id.
  {
    ServerRun run(server);
    auto bad = config;
    bad.model_id = "missing";
    CHECK_THROWS_AS(client_infer(*run.client_end, ctx, bad, input, keys.secret, 900),
                    TransportError);
    run.client_end->close();
    run.stats.get();
  }

  // Version mismatch.
  {
    ServerRun run(server);
    auto bad = config;
    bad.version = 9;
    CHECK_THROWS_AS(client_infer(*run.client_end, ctx, bad, input, keys.secret, 900),
                    TransportError);
    run.client_end->close();
    run.stats.get();
  }

  // Oversized batch is rejected client-side before any traffic.
  {
    auto bad = config;
    bad.batch = batch_capacity(*ctx, PackingMode::Real) + 1;
    BatchInput big{TensorShape{{4}},
                   std::vector<std::vector<double>>(bad.batch, std::vector<double>(4, 0.0))};
    auto [a, b] = make_pipe();
    CHECK_THROWS_AS(client_infer(*a, ctx, bad, big, keys.secret, 900), ValidationError);
  }

  // Replayed HELLO mid-session draws an error.
  {
    ServerRun run(server);
    write_frame(*run.client_end, FrameType::Hello, detail::encode_hello(config));
    auto ack = read_frame(*run.client_end);
    REQUIRE(ack.type == FrameType::HelloAck);
    write_frame(*run.client_end, FrameType::Hello, detail::encode_hello(config));
    auto err = read_frame(*run.client_end);
    CHECK(err.type == FrameType::Error);
    run.client_end->close();
    run.stats.get();
  }
}

TEST_CASE("serve_nonlinearity refreshes to the top level", "[protocol]") {
  auto ctx = test_ctx(Preset::P12);
  auto keys = keygen(*ctx, 5, false);
  NonlinearityEngine engine(ctx, keys.secret, 42);

  // Request at a reduced level; response must come back at the top.
  auto low = encrypt_batch(*ctx, pack_real({-1.0, 2.0}), keys.secret, 7);
  low = rescale_next(
      *ctx, mul_ct_pt_scalar(*ctx, low, encode_scalar(*ctx, 1.0, ctx->chain_length(),
                                                      ctx->params().default_scale)));
  REQUIRE(low.level() == ctx->chain_length() - 1);

  auto payload = detail::encode_nonlin_req(*ctx, NonlinKind::Relu, 0, 1, {low});
  auto resp_payload = serve_nonlinearity(engine, payload);
  auto fresh = detail::decode_ct_list(*ctx, resp_payload);
  REQUIRE(fresh.size() == 1);
  CHECK(fresh[0].level() == ctx->chain_length());
  auto vals = decrypt_batch(*ctx, fresh[0], keys.secret, 2);
  CHECK(vals.values[0] == Catch::Approx(0.0).margin(1e-4));
  CHECK(vals.values[1] == Catch::Approx(2.0).margin(1e-4));

  // Byte-level round-trip of the serialized form inside the payload.
  auto bytes = serialize_ciphertext(*ctx, low);
  auto back = deserialize_ciphertext(*ctx, bytes);
  CHECK(serialize_ciphertext(*ctx, back) == bytes);

  // Unknown kind is rejected.
  auto corrupt = payload;
  corrupt[0] = 99;
  CHECK_THROWS_AS(serve_nonlinearity(engine, corrupt), ValidationError);
}

TEST_CASE("out-of-order frame sequences are rejected without progress", "[protocol]") {
  auto ctx = test_ctx(Preset::P12);
  InferenceServer server;
  server.add_model("tiny", relu_model(Preset::P12, 4), ctx);

  SessionConfig config;
  config.preset = Preset::P12;
  config.model_id = "tiny";
  config.batch = 2;
  const auto valid_hello = detail::encode_hello(config);

  // Every sequence of frame types of length <= 2; HELLO carries a valid
  // payload so the state machine can advance past the handshake, everything
  // else is empty and must be rejected.
  for (int len = 1; len <= 2; ++len) {
    std::vector<int> seq(len, 1);
    for (;;) {
      ServerRun run(server);
      bool got_result = false;
      try {
        for (int i = 0; i < len; ++i) {
          FrameType t = static_cast<FrameType>(seq[i]);
          write_frame(*run.client_end, t,
                      t == FrameType::Hello ? valid_hello : std::vector<u8>{});
          auto resp = read_frame(*run.client_end);
          if (resp.type == FrameType::Result) got_result = true;
          if (resp.type == FrameType::Error) break;
        }
      } catch (const TransportError&) {
        // Server closed on us; that counts as rejection.
      }
      CHECK_FALSE(got_result);
      run.client_end->close();
      run.stats.get();

      int pos = len - 1;
      while (pos >= 0 && seq[pos] == 7) seq[pos--] = 1;
      if (pos < 0) break;
      ++seq[pos];
    }
  }
}

TEST_CASE("loopback inference is bit-exact with local execution", "[protocol]") {
  auto ctx = test_ctx(Preset::P11);
  auto keys = keygen(*ctx, 11, false);
  auto model = load_model(make_cryptonets_relu(Preset::P11, PackingMode::Real, 71).manifest,
                          make_cryptonets_relu(Preset::P11, PackingMode::Real, 71).blob);
  auto plan = plan_lazy_rescaling(*ctx, model);
  const u64 seed = 1234;
  auto input = make_random_input(model.shapes.at("input"), 4, 99);

  // Direct local run with the same seeds the client will use.
  auto enc = encrypt_tensor(*ctx, input, keys.secret, seed, PackingMode::Real);
  LocalProvider provider(NonlinearityEngine(ctx, keys.secret, seed + 1));
  ExecutionConfig cfg;
  cfg.provider = &provider;
  auto local_out = execute(ctx, model, plan, enc, cfg);
  auto local_vals = decrypt_tensor(*ctx, local_out, keys.secret, 4);

  // Protocol run over the in-process transport.
  InferenceServer server;
  server.add_model("cryptonets-relu", std::move(model), ctx);
  SessionConfig config;
  config.preset = Preset::P11;
  config.model_id = "cryptonets-relu";
  config.batch = 4;

  ServerRun run(server);
  auto result = client_infer(*run.client_end, ctx, config, input, keys.secret, seed);
  run.client_end->close();
  auto server_stats = run.stats.get();

  REQUIRE(result.outputs.size() == local_vals.size());
  for (std::size_t s = 0; s < local_vals.size(); ++s) {
    for (std::size_t e = 0; e < local_vals[s].size(); ++e) {
      REQUIRE(result.outputs[s][e] == local_vals[s][e]);  // identical decrypt, bit-exact path
    }
  }
  CHECK(result.stats.nonlin_round_trips == 2);  // one per ReLU layer
  CHECK(server_stats.interactive_bytes > 0);
  CHECK(result.stats.interactive_bytes == server_stats.interactive_bytes);
}

TEST_CASE("interactive bytes are zero without nonlinear layers and scale with them",
          "[protocol]") {
  auto ctx = test_ctx(Preset::P12);
  auto keys = keygen(*ctx, 13, false);

  InferenceServer server;
  {
    nlohmann::json j;
    j["preset"] = "P12";
    j["nodes"] = nlohmann::json::array(
        {detail::node_json("input", "Input", {}, {{"shape", {4}}}),
         detail::node_json("out", "Output", {"input"})});
    server.add_model("identity", load_model(j.dump(), {}), ctx);
  }
  server.add_model("relu4", relu_model(Preset::P12, 4), ctx);
  server.add_model("relu8", relu_model(Preset::P12, 8), ctx);

  auto run_one = [&](const std::string& id, u32 count) {
    BatchInput input{TensorShape{{count}},
                     std::vector<std::vector<double>>(2, std::vector<double>(count, 0.5))};
    SessionConfig config;
    config.preset = Preset::P12;
    config.model_id = id;
    config.batch = 2;
    ServerRun run(server);
    auto result = client_infer(*run.client_end, ctx, config, input, keys.secret, 55);
    run.client_end->close();
    run.stats.get();
    return result.stats;
  };

  auto id_stats = run_one("identity", 4);
  CHECK(id_stats.interactive_bytes == 0);
  CHECK(id_stats.nonlin_round_trips == 0);

  auto s4 = run_one("relu4", 4);
  auto s8 = run_one("relu8", 8);
  CHECK(s4.interactive_bytes > 0);
  // Payload bytes scale linearly with the ReLU element count; the fixed
  // 21-byte headers per frame do not.
  const u64 payload4 = s4.interactive_bytes - 2 * 9 - 13 - 4;
  const u64 payload8 = s8.interactive_bytes - 2 * 9 - 13 - 4;
  CHECK(payload8 == 2 * payload4);
}
