// SPDX-License-Identifier: Apache-2.0
//
// henet: key management, microbenchmarks, and encrypted model execution in
// local and client/server modes.

#include <filesystem>
#include <iostream>

#include <CLI11.hpp>

#include "henet/henet.hpp"

namespace fs = std::filesystem;
using namespace henet;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitValidation = 3;
constexpr int kExitTransport = 4;
constexpr int kExitTolerance = 5;

// ---------------------------------------------------------------------------
// File conventions. Model: manifest JSON + f32 blob referenced by its "blob"
// field (or <manifest>.bin). Input: JSON {shape, batch, blob} + f32 blob,
// sample-major. Keys: <dir>/secret.key and optional <dir>/relin.key.
// ---------------------------------------------------------------------------

std::string read_text(const std::string& path) {
  auto bytes = read_file(path);
  return std::string(bytes.begin(), bytes.end());
}

std::vector<u8> resolve_blob(const std::string& manifest_path, const std::string& blob_field) {
  fs::path dir = fs::path(manifest_path).parent_path();
  fs::path blob = blob_field.empty()
                      ? fs::path(manifest_path).replace_extension(".bin")
                      : dir / blob_field;
  if (!fs::exists(blob)) {
    if (blob_field.empty()) return {};
    throw ValidationError("weight blob not found: " + blob.string());
  }
  return read_file(blob.string());
}

PlainModel load_model_file(const std::string& manifest_path) {
  auto text = read_text(manifest_path);
  std::string blob_field;
  try {
    auto j = nlohmann::json::parse(text);
    blob_field = j.value("blob", "");
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("manifest parse error: ") + e.what());
  }
  return load_model(text, resolve_blob(manifest_path, blob_field));
}

BatchInput load_input_file(const std::string& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text(path));
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("input parse error: ") + e.what());
  }
  BatchInput input;
  for (auto& d : j.at("shape")) input.shape.dims.push_back(d.get<u32>());
  const std::size_t batch = j.at("batch").get<std::size_t>();
  require(batch >= 1, "input batch must be at least 1");
  fs::path blob = fs::path(path).parent_path() / j.at("blob").get<std::string>();
  auto bytes = read_file(blob.string());
  const std::size_t count = input.shape.elem_count();
  require(bytes.size() == batch * count * 4, "input blob size does not match shape and batch");
  input.samples.resize(batch);
  const u8* p = bytes.data();
  for (std::size_t s = 0; s < batch; ++s) {
    input.samples[s].resize(count);
    for (std::size_t e = 0; e < count; ++e) {
      float v;
      std::memcpy(&v, p, 4);
      p += 4;
      input.samples[s][e] = v;
    }
  }
  return input;
}

void write_input_file(const std::string& prefix, const BatchInput& input) {
  std::vector<u8> blob;
  blob.reserve(input.samples.size() * input.shape.elem_count() * 4);
  for (const auto& sample : input.samples) {
    for (double v : sample) {
      float f = static_cast<float>(v);
      u32 bits;
      std::memcpy(&bits, &f, 4);
      put_u32(blob, bits);
    }
  }
  fs::path bin = prefix + ".bin";
  write_file(bin.string(), blob);
  nlohmann::json j;
  j["shape"] = input.shape.dims;
  j["batch"] = input.samples.size();
  j["blob"] = bin.filename().string();
  std::string text = j.dump(2);
  write_file(prefix + ".json", std::vector<u8>(text.begin(), text.end()));
}

struct LoadedKeys {
  SecretKey secret;
  std::optional<RelinKey> relin;
};

LoadedKeys load_keys(const CkksContext& ctx, const std::string& dir) {
  LoadedKeys keys;
  keys.secret = deserialize_secret_key(ctx, read_file((fs::path(dir) / "secret.key").string()));
  fs::path relin = fs::path(dir) / "relin.key";
  if (fs::exists(relin)) keys.relin = deserialize_relin_key(ctx, read_file(relin.string()));
  return keys;
}

// ---------------------------------------------------------------------------
// keygen
// ---------------------------------------------------------------------------

struct KeygenArgs {
  std::string preset = "P13";
  u64 seed = 0;
  std::string out_dir = "keys";
  bool force = false;
};

int cmd_keygen(const KeygenArgs& args) {
  auto ctx = CkksContext::create(preset_from_name(args.preset));
  fs::create_directories(args.out_dir);
  fs::path secret = fs::path(args.out_dir) / "secret.key";
  fs::path relin = fs::path(args.out_dir) / "relin.key";
  if (!args.force && (fs::exists(secret) || fs::exists(relin))) {
    throw ValidationError("key files exist; pass --force to overwrite");
  }
  auto keys = keygen(*ctx, args.seed, ctx->has_special());
  write_file(secret.string(), serialize_secret_key(*ctx, keys.secret));
  std::cout << "wrote " << secret.string() << "\n";
  if (keys.relin) {
    write_file(relin.string(), serialize_relin_key(*ctx, *keys.relin));
    std::cout << "wrote " << relin.string() << "\n";
  } else {
    std::cout << "no relin key (parameters carry no special prime)\n";
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// gen-model / gen-input
// ---------------------------------------------------------------------------

struct GenModelArgs {
  std::string kind = "cryptonets";
  std::string preset;
  std::string packing = "real";
  u64 seed = 0;
  std::string out = "model";
};

int cmd_gen_model(const GenModelArgs& args) {
  std::string preset_str = args.preset;
  if (preset_str.empty()) {
    preset_str = args.kind == "cryptonets-relu" ? "P11" : "P13";
  }
  auto gen = make_model(args.kind, preset_from_name(preset_str),
                        packing_from_name(args.packing), args.seed);
  // Point the manifest at its blob file.
  auto j = nlohmann::json::parse(gen.manifest);
  j["blob"] = fs::path(args.out + ".bin").filename().string();
  std::string manifest = j.dump(2);
  write_file(args.out + ".json", std::vector<u8>(manifest.begin(), manifest.end()));
  write_file(args.out + ".bin", gen.blob);
  std::cout << "wrote " << args.out << ".json and " << args.out << ".bin\n";
  return kExitOk;
}

struct GenInputArgs {
  std::vector<u32> shape = {1, 28, 28};
  std::size_t batch = 16;
  u64 seed = 0;
  std::string out = "input";
};

int cmd_gen_input(const GenInputArgs& args) {
  auto input = make_random_input(TensorShape{args.shape}, args.batch, args.seed);
  write_input_file(args.out, input);
  std::cout << "wrote " << args.out << ".json and " << args.out << ".bin\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// perf
// ---------------------------------------------------------------------------

struct PerfArgs {
  std::string preset = "P13";
  std::size_t trials = 1000;
  std::string out = "table";
};

int cmd_perf(const PerfArgs& args) {
  const Preset preset = preset_from_name(args.preset);
  auto ctx = CkksContext::create(preset);
  const std::string pname = preset_name(preset);
  const double s = ctx->params().default_scale;
  const std::size_t level = ctx->chain_length();
  const u32 n = ctx->degree();
  const std::size_t heavy = std::max<std::size_t>(kBenchMinTrials, args.trials / 10);

  auto keys = keygen(*ctx, 1, ctx->has_special());
  Chacha20Rng rng(2);
  std::vector<double> values(ctx->slot_count());
  for (auto& v : values) v = rng.next_double() * 2 - 1;
  std::vector<std::complex<double>> slots(ctx->slot_count());
  for (std::size_t i = 0; i < slots.size(); ++i) slots[i] = {values[i], 0.0};
  auto ct = encrypt_batch(*ctx, pack_real(values), keys.secret, 3);
  auto ct2 = encrypt_batch(*ctx, pack_real(values), keys.secret, 4);
  auto spt = encode_scalar(*ctx, 0.5, level, s);
  auto vpt = expand_scalar(*ctx, spt);
  auto pt = encode_vector(*ctx, slots, level, s);
  auto raised = mul_ct_pt_scalar(*ctx, ct, spt);

  BenchReport report;
  volatile u64 sink = 0;

  report.rows.push_back(bench_op("encode_general", pname, args.trials, level * n, [&] {
    auto p = encode_vector(*ctx, slots, level, s);
    sink += p.poly.words()[0];
  }));
  report.rows.push_back(bench_op("encode_scalar", pname, args.trials, level, [&] {
    auto p = encode_scalar(*ctx, 0.5, level, s);
    sink += p.residues[0];
  }));
  report.rows.push_back(bench_op("add", pname, args.trials, 2 * level * n, [&] {
    auto r = add_ct_ct(*ctx, ct, ct2);
    sink += r.polys[0].words()[0];
  }));
  report.rows.push_back(bench_op("add_plain_vector", pname, args.trials, level * n, [&] {
    auto r = add_ct_pt_vector(*ctx, ct, vpt);
    sink += r.polys[0].words()[0];
  }));
  report.rows.push_back(bench_op("add_plain_scalar", pname, args.trials, level, [&] {
    auto r = add_ct_pt_scalar(*ctx, ct, spt);
    sink += r.polys[0].words()[0];
  }));
  report.rows.push_back(bench_op("multiply_plain_vector", pname, args.trials, level * n, [&] {
    auto r = mul_ct_pt_general(*ctx, ct, vpt);
    sink += r.polys[0].words()[0];
  }));
  report.rows.push_back(bench_op("multiply_plain_scalar", pname, args.trials, level, [&] {
    auto r = mul_ct_pt_scalar(*ctx, ct, spt);
    sink += r.polys[0].words()[0];
  }));
  report.rows.push_back(bench_op("decrypt", pname, heavy, 2 * level * n, [&] {
    auto p = decrypt(*ctx, ct, keys.secret);
    sink += p.poly.words()[0];
  }));
  report.rows.push_back(bench_op("decode", pname, heavy, level * n, [&] {
    auto v = decode_slots(*ctx, pt);
    sink += static_cast<u64>(v[0].real());
  }));
  report.rows.push_back(bench_op("encrypt", pname, heavy, 2 * level * n, [&] {
    auto c = encrypt(*ctx, pt, keys.secret, 5);
    sink += c.polys[0].words()[0];
  }));
  if (ctx->has_special()) {
    report.rows.push_back(bench_op("square", pname, heavy, 3 * level * n, [&] {
      auto r = square(*ctx, ct);
      sink += r.polys[2].words()[0];
    }));
    report.rows.push_back(bench_op("multiply", pname, heavy, 3 * level * n, [&] {
      auto r = mul_ct_ct(*ctx, ct, ct2);
      sink += r.polys[2].words()[0];
    }));
    auto sq = square(*ctx, ct);
    report.rows.push_back(bench_op("relinearize", pname, heavy, 2 * level * n, [&] {
      auto r = relinearize(*ctx, sq, *keys.relin);
      sink += r.polys[0].words()[0];
    }));
  }
  if (level >= 2) {
    report.rows.push_back(bench_op("rescale", pname, heavy, 2 * (level - 1) * n, [&] {
      auto r = rescale_next(*ctx, raised);
      sink += r.polys[0].words()[0];
    }));
  }

  // Graph-level comparison: the same dot layer under both rescaling plans.
  if (level >= 2) {
    auto gen = make_dot_toy(preset, 4, 6);
    auto model = load_model(gen.manifest, gen.blob);
    // Append a square so the dot's deferred rescale is live in lazy mode.
    auto j = nlohmann::json::parse(gen.manifest);
    j["nodes"].insert(j["nodes"].end() - 1,
                      nlohmann::json{{"id", "sq"}, {"op", "Square"}, {"inputs", {"dot"}}});
    j["nodes"].back()["inputs"] = {"sq"};
    auto model_live = load_model(j.dump(), gen.blob);
    const PlainModel& bench_model = ctx->has_special() ? model_live : model;

    auto lazy = plan_rescaling(*ctx, bench_model, RescaleMode::Lazy);
    auto naive = plan_rescaling(*ctx, bench_model, RescaleMode::Naive);
    auto input = make_random_input(TensorShape{{4}}, 4, 8);
    auto enc = encrypt_tensor(*ctx, input, keys.secret, 9, PackingMode::Real);
    ExecutionConfig cfg;
    cfg.relin = keys.relin ? &*keys.relin : nullptr;
    for (auto mode : {std::make_pair("graph_dot_lazy", &lazy),
                      std::make_pair("graph_dot_naive", &naive)}) {
      report.rows.push_back(bench_op(mode.first, pname, args.trials, 0, [&] {
        auto out = execute(ctx, bench_model, *mode.second, enc, cfg);
        sink += out.elems[0].polys[0].words()[0];
      }));
    }
  }

  if (args.out == "csv") {
    std::cout << report.to_csv();
  } else {
    std::cout << report.to_table();
    auto ratio = [&](const char* fast, const char* slow) {
      return report.row(slow).mean_ns / report.row(fast).mean_ns;
    };
    std::cout << "\nscalar encoding:   " << ratio("encode_scalar", "encode_general")
              << "x speedup, memory factor " << n << " (exact: " << level * n << " words vs "
              << level << ")\n";
    std::cout << "scalar addition:   " << ratio("add_plain_scalar", "add_plain_vector")
              << "x speedup\n";
    std::cout << "scalar multiply:   " << ratio("multiply_plain_scalar", "multiply_plain_vector")
              << "x speedup\n";
    if (level >= 2) {
      std::cout << "lazy rescaling:    " << ratio("graph_dot_lazy", "graph_dot_naive")
                << "x speedup on the dot layer\n";
    }
  }
  (void)sink;
  return kExitOk;
}

// ---------------------------------------------------------------------------
// run / compare
// ---------------------------------------------------------------------------

struct RunArgs {
  std::string model;
  std::string input;
  std::string keys = "keys";
  std::string mode = "local";
  std::string host = "127.0.0.1";
  u16 port = 47114;
  unsigned threads = 1;
  u64 seed = 1;
  bool naive = false;
  std::size_t sessions = 0;  // server mode: 0 = serve forever
  std::string output;
};

void print_outputs(const std::vector<std::vector<double>>& outputs, std::size_t limit = 1) {
  for (std::size_t s = 0; s < std::min(limit, outputs.size()); ++s) {
    std::cout << "sample " << s << ":";
    for (double v : outputs[s]) std::cout << ' ' << v;
    std::cout << '\n';
  }
}

void save_outputs(const std::string& path, const std::vector<std::vector<double>>& outputs) {
  nlohmann::json j = outputs;
  std::string text = j.dump();
  write_file(path, std::vector<u8>(text.begin(), text.end()));
}

int cmd_run_local(const RunArgs& args) {
  auto model = load_model_file(args.model);
  auto ctx = CkksContext::create(model.preset);
  auto keys = load_keys(*ctx, args.keys);
  auto input = load_input_file(args.input);
  auto plan = plan_rescaling(*ctx, model, args.naive ? RescaleMode::Naive : RescaleMode::Lazy);

  auto t0 = std::chrono::steady_clock::now();
  auto enc = encrypt_tensor(*ctx, input, keys.secret, args.seed, model.packing, args.threads);
  auto t1 = std::chrono::steady_clock::now();

  NonlinearityEngine engine(ctx, keys.secret, args.seed + 1);
  LocalProvider provider(std::move(engine));
  ExecutionConfig cfg;
  cfg.threads = args.threads;
  cfg.relin = keys.relin ? &*keys.relin : nullptr;
  cfg.provider = &provider;
  ExecutionStats stats;
  auto out = execute(ctx, model, plan, enc, cfg, &stats);
  auto t2 = std::chrono::steady_clock::now();
  auto outputs = decrypt_tensor(*ctx, out, keys.secret, input.samples.size());

  const double encrypt_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
  const double exec_s = std::chrono::duration<double>(t2 - t1).count();
  print_outputs(outputs);
  std::cout << "batch " << input.samples.size() << ", threads " << args.threads << ", "
            << (args.naive ? "naive" : "lazy") << " rescaling\n";
  std::cout << "encrypt: " << encrypt_ms << " ms\n";
  std::cout << "total: " << exec_s << " s, amortized: "
            << exec_s * 1000.0 / static_cast<double>(input.samples.size()) << " ms/sample\n";
  std::cout << "rescales: " << stats.rescale_ops << ", relinearizations: " << stats.relin_ops
            << "\n";
  if (!args.output.empty()) save_outputs(args.output, outputs);
  return kExitOk;
}

int cmd_run_server(const RunArgs& args) {
  auto model = load_model_file(args.model);
  const std::string id = model.name;
  InferenceServer server;
  server.set_threads(args.threads);
  server.add_model(id, std::move(model));
  TcpListener listener(args.port);
  std::cout << "serving model '" << id << "' on port " << listener.port() << "\n" << std::flush;
  std::size_t handled = 0;
  while (args.sessions == 0 || handled < args.sessions) {
    auto conn = listener.accept();
    auto stats = server.handle_session(*conn);
    ++handled;
    std::cout << "session " << handled << ": " << stats.wall_ms << " ms, received "
              << stats.bytes_received << " B, sent " << stats.bytes_sent << " B, interactive "
              << stats.interactive_bytes << " B";
    if (stats.batch) {
      std::cout << " (" << stats.amortized_bytes_per_sample() / 1.0e6 << " MB/sample)";
    }
    std::cout << "\n" << std::flush;
  }
  return kExitOk;
}

int cmd_run_client(const RunArgs& args) {
  auto model = load_model_file(args.model);
  auto ctx = CkksContext::create(model.preset);
  auto keys = load_keys(*ctx, args.keys);
  auto input = load_input_file(args.input);

  SessionConfig config;
  config.preset = model.preset;
  config.packing = model.packing;
  config.model_id = model.name;
  config.batch = static_cast<u32>(input.samples.size());

  auto stream = TcpStream::connect(args.host, args.port);
  auto result = client_infer(*stream, ctx, config, input, keys.secret, args.seed);
  print_outputs(result.outputs);
  std::cout << "batch " << config.batch << "\n";
  std::cout << "total: " << result.stats.wall_ms / 1000.0 << " s, amortized: "
            << result.stats.wall_ms / static_cast<double>(config.batch) << " ms/sample\n";
  std::cout << "interactive: " << result.stats.interactive_bytes << " B ("
            << result.stats.amortized_bytes_per_sample() / 1.0e6 << " MB/sample), round trips: "
            << result.stats.nonlin_round_trips << "\n";
  if (!args.output.empty()) save_outputs(args.output, result.outputs);
  return kExitOk;
}

struct CompareArgs {
  std::string model;
  std::string input;
  std::string keys = "keys";
  unsigned threads = 1;
  u64 seed = 1;
  double tolerance = 1e-2;
  bool inject_fault = false;
};

int cmd_compare(const CompareArgs& args) {
  auto model = load_model_file(args.model);
  auto ctx = CkksContext::create(model.preset);
  auto keys = load_keys(*ctx, args.keys);
  auto input = load_input_file(args.input);
  auto plan = plan_lazy_rescaling(*ctx, model);

  auto enc = encrypt_tensor(*ctx, input, keys.secret, args.seed, model.packing, args.threads);
  if (args.inject_fault && !enc.elems.empty()) {
    // Flip one residue to validate that the comparison catches corruption.
    auto limb = enc.elems[0].polys[0].limb(0);
    limb[0] = mod_add(limb[0], 1, ctx->modulus(0));
  }

  NonlinearityEngine engine(ctx, keys.secret, args.seed + 1);
  LocalProvider provider(std::move(engine));
  ExecutionConfig cfg;
  cfg.threads = args.threads;
  cfg.relin = keys.relin ? &*keys.relin : nullptr;
  cfg.provider = &provider;
  auto out = execute(ctx, model, plan, enc, cfg);
  auto encrypted = decrypt_tensor(*ctx, out, keys.secret, input.samples.size());
  auto clear = execute_clear(model, input);

  require(encrypted.size() == clear.size() && !clear.empty(), "output batch mismatch");
  const std::size_t out_count = clear[0].size();
  double overall = 0.0;
  std::cout << "per-output max |encrypted - cleartext| across the batch:\n";
  for (std::size_t e = 0; e < out_count; ++e) {
    double worst = 0.0;
    for (std::size_t s = 0; s < clear.size(); ++s) {
      worst = std::max(worst, std::fabs(encrypted[s][e] - clear[s][e]));
    }
    std::cout << "  out[" << e << "]: " << worst << "\n";
    overall = std::max(overall, worst);
  }
  std::cout << "max deviation: " << overall << " (tolerance " << args.tolerance << ")\n";
  if (overall > args.tolerance) {
    std::cerr << "deviation exceeds tolerance\n";
    return kExitTolerance;
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Batch-packed CKKS inference engine"};
  app.require_subcommand(1);

  KeygenArgs keygen_args;
  auto* sc_keygen = app.add_subcommand("keygen", "Generate secret/relin key files");
  sc_keygen->add_option("--preset", keygen_args.preset, "Parameter preset (P11, P12, P13, P14)");
  sc_keygen->add_option("--seed", keygen_args.seed, "Deterministic key seed");
  sc_keygen->add_option("--out", keygen_args.out_dir, "Output directory");
  sc_keygen->add_flag("--force", keygen_args.force, "Overwrite existing key files");

  GenModelArgs gen_model_args;
  auto* sc_gen_model = app.add_subcommand("gen-model", "Write a built-in model with seeded weights");
  sc_gen_model->add_option("--kind", gen_model_args.kind,
                           "cryptonets | cryptonets-relu | cryptonets-toy | identity");
  sc_gen_model->add_option("--preset", gen_model_args.preset, "Override the default preset");
  sc_gen_model->add_option("--packing", gen_model_args.packing, "real | complex");
  sc_gen_model->add_option("--seed", gen_model_args.seed, "Weight seed");
  sc_gen_model->add_option("--out", gen_model_args.out, "Output path prefix");

  GenInputArgs gen_input_args;
  auto* sc_gen_input = app.add_subcommand("gen-input", "Write a synthetic input batch");
  sc_gen_input->add_option("--shape", gen_input_args.shape, "Tensor shape, e.g. 1 28 28");
  sc_gen_input->add_option("--batch", gen_input_args.batch, "Batch size");
  sc_gen_input->add_option("--seed", gen_input_args.seed, "Sample seed");
  sc_gen_input->add_option("--out", gen_input_args.out, "Output path prefix");

  PerfArgs perf_args;
  auto* sc_perf = app.add_subcommand("perf", "Microbenchmark the operation set");
  sc_perf->add_option("--preset", perf_args.preset, "Parameter preset");
  sc_perf->add_option("--trials", perf_args.trials, "Trials per light operation (min 100)");
  sc_perf->add_option("--out", perf_args.out, "table | csv");

  RunArgs run_args;
  auto* sc_run = app.add_subcommand("run", "Execute a model on encrypted inputs");
  sc_run->add_option("--model", run_args.model, "Model manifest path")->required();
  sc_run->add_option("--input", run_args.input, "Input batch path (client/local modes)");
  sc_run->add_option("--keys", run_args.keys, "Key directory (client/local modes)");
  sc_run->add_option("--mode", run_args.mode, "local | server | client");
  sc_run->add_option("--host", run_args.host, "Server host (client mode)");
  sc_run->add_option("--port", run_args.port, "Server port");
  sc_run->add_option("--threads", run_args.threads, "Worker threads for Dot/Convolution");
  sc_run->add_option("--seed", run_args.seed, "Encryption seed");
  sc_run->add_flag("--naive", run_args.naive, "Use the per-product rescaling baseline");
  sc_run->add_option("--sessions", run_args.sessions, "Server mode: stop after N sessions");
  sc_run->add_option("--output", run_args.output, "Write decrypted outputs (JSON)");

  CompareArgs compare_args;
  auto* sc_compare = app.add_subcommand("compare", "Encrypted vs cleartext deviation report");
  sc_compare->add_option("--model", compare_args.model, "Model manifest path")->required();
  sc_compare->add_option("--input", compare_args.input, "Input batch path")->required();
  sc_compare->add_option("--keys", compare_args.keys, "Key directory");
  sc_compare->add_option("--threads", compare_args.threads, "Worker threads");
  sc_compare->add_option("--seed", compare_args.seed, "Encryption seed");
  sc_compare->add_option("--tolerance", compare_args.tolerance, "Failure threshold");
  sc_compare->add_flag("--inject-fault", compare_args.inject_fault,
                       "Corrupt one input ciphertext (testing aid)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (sc_keygen->parsed()) return cmd_keygen(keygen_args);
    if (sc_gen_model->parsed()) return cmd_gen_model(gen_model_args);
    if (sc_gen_input->parsed()) return cmd_gen_input(gen_input_args);
    if (sc_perf->parsed()) return cmd_perf(perf_args);
    if (sc_run->parsed()) {
      if (run_args.mode == "local") return cmd_run_local(run_args);
      if (run_args.mode == "server") return cmd_run_server(run_args);
      if (run_args.mode == "client") return cmd_run_client(run_args);
      throw ValidationError("unknown mode: " + run_args.mode);
    }
    if (sc_compare->parsed()) return cmd_compare(compare_args);
  } catch (const TransportError& e) {
    std::cerr << "transport error: " << e.what() << "\n";
    return kExitTransport;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  }
  return kExitOk;
}
