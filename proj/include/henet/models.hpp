// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "henet/graph.hpp"

namespace henet {

// ---------------------------------------------------------------------------
// Built-in model generators. Weights are seeded uniform values scaled by
// 1/sqrt(fan_in) so activations stay O(1); no dataset download is ever
// needed to exercise the full pipeline.
// ---------------------------------------------------------------------------

struct GeneratedModel {
  std::string manifest;
  std::vector<u8> blob;
};

namespace detail {

class BlobBuilder {
 public:
  explicit BlobBuilder(u64 seed) : rng_(seed, /*stream=*/7) {}

  nlohmann::json add_random(const std::string& name, std::vector<u32> shape, double bound) {
    TensorShape ts{shape};
    nlohmann::json entry;
    entry["offset"] = bytes_.size();
    entry["shape"] = shape;
    for (std::size_t i = 0; i < ts.elem_count(); ++i) {
      push_f32(static_cast<float>((rng_.next_double() * 2.0 - 1.0) * bound));
    }
    table_[name] = entry;
    return entry;
  }

  nlohmann::json add_values(const std::string& name, std::vector<u32> shape,
                            std::span<const float> values) {
    nlohmann::json entry;
    entry["offset"] = bytes_.size();
    entry["shape"] = shape;
    for (float v : values) push_f32(v);
    table_[name] = entry;
    return entry;
  }

  nlohmann::json table() const { return table_; }
  std::vector<u8> take_bytes() { return std::move(bytes_); }

 private:
  void push_f32(float v) {
    u32 bits;
    std::memcpy(&bits, &v, 4);
    put_u32(bytes_, bits);
  }

  Chacha20Rng rng_;
  std::vector<u8> bytes_;
  nlohmann::json table_ = nlohmann::json::object();
};

inline nlohmann::json node_json(const std::string& id, const std::string& op,
                                std::vector<std::string> inputs,
                                nlohmann::json attrs = nlohmann::json::object(),
                                const std::string& weight_ref = "",
                                const std::string& bias_ref = "") {
  nlohmann::json n;
  n["id"] = id;
  n["op"] = op;
  if (!inputs.empty()) n["inputs"] = inputs;
  if (!attrs.empty()) n["attrs"] = attrs;
  if (!weight_ref.empty()) n["weight_ref"] = weight_ref;
  if (!bias_ref.empty()) n["bias_ref"] = bias_ref;
  return n;
}

}  // namespace detail

/// The classic MNIST square-activation network: Conv(5x5, stride 2, 5
/// filters) -> x^2 -> FC(845->100) -> x^2 -> FC(100->10). Multiplicative
/// depth 5.
inline GeneratedModel make_cryptonets(Preset preset, u64 seed) {
  detail::BlobBuilder blob(seed);
  blob.add_random("conv1_w", {5, 1, 5, 5}, 1.0 / 5.0);
  blob.add_random("fc1_w", {845, 100}, 1.0 / 29.0);
  blob.add_random("fc2_w", {100, 10}, 1.0 / 10.0);

  nlohmann::json j;
  j["name"] = "cryptonets";
  j["packing"] = "real";
  j["preset"] = preset_name(preset);
  j["weights"] = blob.table();
  j["nodes"] = nlohmann::json::array(
      {detail::node_json("input", "Input", {}, {{"shape", {1, 28, 28}}}),
       detail::node_json("conv1", "Convolution", {"input"},
                         {{"stride", 2}, {"window", 5}, {"filters", 5}, {"pad", {0, 0, 1, 1}}},
                         "conv1_w"),
       detail::node_json("act1", "Square", {"conv1"}),
       detail::node_json("flatten", "Reshape", {"act1"}, {{"shape", {845}}}),
       detail::node_json("fc1", "Dot", {"flatten"}, nlohmann::json::object(), "fc1_w"),
       detail::node_json("act2", "Square", {"fc1"}),
       detail::node_json("fc2", "Dot", {"act2"}, nlohmann::json::object(), "fc2_w"),
       detail::node_json("out", "Output", {"fc2"})});
  return GeneratedModel{j.dump(2), blob.take_bytes()};
}

/// The client-aided variant: biases everywhere and ReLU activations, so the
/// multiplicative depth between refreshes is 1.
inline GeneratedModel make_cryptonets_relu(Preset preset, PackingMode packing, u64 seed) {
  detail::BlobBuilder blob(seed);
  blob.add_random("conv1_w", {5, 1, 5, 5}, 1.0 / 5.0);
  blob.add_random("conv1_b", {5}, 0.1);
  blob.add_random("fc1_w", {845, 100}, 1.0 / 29.0);
  blob.add_random("fc1_b", {100}, 0.1);
  blob.add_random("fc2_w", {100, 10}, 1.0 / 10.0);
  blob.add_random("fc2_b", {10}, 0.1);

  nlohmann::json j;
  j["name"] = "cryptonets-relu";
  j["packing"] = packing_name(packing);
  j["preset"] = preset_name(preset);
  j["weights"] = blob.table();
  j["nodes"] = nlohmann::json::array(
      {detail::node_json("input", "Input", {}, {{"shape", {1, 28, 28}}}),
       detail::node_json("conv1", "Convolution", {"input"},
                         {{"stride", 2}, {"window", 5}, {"filters", 5}, {"pad", {0, 0, 1, 1}}},
                         "conv1_w", "conv1_b"),
       detail::node_json("act1", "Relu", {"conv1"}),
       detail::node_json("flatten", "Reshape", {"act1"}, {{"shape", {845}}}),
       detail::node_json("fc1", "Dot", {"flatten"}, nlohmann::json::object(), "fc1_w", "fc1_b"),
       detail::node_json("act2", "Relu", {"fc1"}),
       detail::node_json("fc2", "Dot", {"act2"}, nlohmann::json::object(), "fc2_w", "fc2_b"),
       detail::node_json("out", "Output", {"fc2"})});
  return GeneratedModel{j.dump(2), blob.take_bytes()};
}

/// Pass-through graph; useful for measuring the bare encrypt/decrypt error.
inline GeneratedModel make_identity(Preset preset, std::vector<u32> shape) {
  nlohmann::json j;
  j["name"] = "identity";
  j["packing"] = "real";
  j["preset"] = preset_name(preset);
  j["weights"] = nlohmann::json::object();
  j["nodes"] = nlohmann::json::array(
      {detail::node_json("input", "Input", {}, {{"shape", shape}}),
       detail::node_json("out", "Output", {"input"})});
  return GeneratedModel{j.dump(2), {}};
}

/// Single fully-connected layer with inner dimension k and one output; the
/// canonical rescale-count instrumentation graph.
inline GeneratedModel make_dot_toy(Preset preset, u32 inner_dim, u64 seed) {
  detail::BlobBuilder blob(seed);
  blob.add_random("w", {inner_dim, 1}, 0.5);

  nlohmann::json j;
  j["name"] = "dot-toy";
  j["packing"] = "real";
  j["preset"] = preset_name(preset);
  j["weights"] = blob.table();
  j["nodes"] = nlohmann::json::array(
      {detail::node_json("input", "Input", {}, {{"shape", {inner_dim}}}),
       detail::node_json("dot", "Dot", {"input"}, nlohmann::json::object(), "w"),
       detail::node_json("out", "Output", {"dot"})});
  return GeneratedModel{j.dump(2), blob.take_bytes()};
}

/// Chain of `depth` constant multiplications with an optional trailing
/// constant addition; exercises the terminal skip decisions.
inline GeneratedModel make_mult_chain(Preset preset, u32 depth, bool trailing_add, u64 seed) {
  detail::BlobBuilder blob(seed);
  std::vector<float> half = {0.5f};
  std::vector<float> quarter = {0.25f};
  blob.add_values("c_mul", {1}, half);
  blob.add_values("c_add", {1}, quarter);

  nlohmann::json nodes = nlohmann::json::array();
  nodes.push_back(detail::node_json("input", "Input", {}, {{"shape", {4}}}));
  nodes.push_back(detail::node_json("c_mul", "ConstWeight", {}, nlohmann::json::object(), "c_mul"));
  std::string prev = "input";
  for (u32 i = 0; i < depth; ++i) {
    std::string id = "mul" + std::to_string(i);
    nodes.push_back(detail::node_json(id, "Multiply", {prev, "c_mul"}));
    prev = id;
  }
  if (trailing_add) {
    nodes.push_back(
        detail::node_json("c_add", "ConstWeight", {}, nlohmann::json::object(), "c_add"));
    nodes.push_back(detail::node_json("add", "Add", {prev, "c_add"}));
    prev = "add";
  }
  nodes.push_back(detail::node_json("out", "Output", {prev}));

  nlohmann::json j;
  j["name"] = "mult-chain";
  j["packing"] = "real";
  j["preset"] = preset_name(preset);
  j["weights"] = blob.table();
  j["nodes"] = nodes;
  return GeneratedModel{j.dump(2), blob.take_bytes()};
}

/// A scaled-down CryptoNets-shaped pipeline (conv -> square -> fc -> square
/// -> fc) for graph-level benchmarking at small sizes.
inline GeneratedModel make_cryptonets_shaped_toy(Preset preset, u64 seed) {
  detail::BlobBuilder blob(seed);
  blob.add_random("conv_w", {2, 1, 3, 3}, 1.0 / 3.0);
  blob.add_random("fc1_w", {18, 4}, 1.0 / 4.0);
  blob.add_random("fc2_w", {4, 2}, 1.0 / 2.0);

  nlohmann::json j;
  j["name"] = "cryptonets-toy";
  j["packing"] = "real";
  j["preset"] = preset_name(preset);
  j["weights"] = blob.table();
  j["nodes"] = nlohmann::json::array(
      {detail::node_json("input", "Input", {}, {{"shape", {1, 8, 8}}}),
       detail::node_json("conv", "Convolution", {"input"},
                         {{"stride", 2}, {"window", 3}, {"filters", 2}}, "conv_w"),
       detail::node_json("act1", "Square", {"conv"}),
       detail::node_json("flatten", "Reshape", {"act1"}, {{"shape", {18}}}),
       detail::node_json("fc1", "Dot", {"flatten"}, nlohmann::json::object(), "fc1_w"),
       detail::node_json("act2", "Square", {"fc1"}),
       detail::node_json("fc2", "Dot", {"act2"}, nlohmann::json::object(), "fc2_w"),
       detail::node_json("out", "Output", {"fc2"})});
  return GeneratedModel{j.dump(2), blob.take_bytes()};
}

inline GeneratedModel make_model(const std::string& kind, Preset preset, PackingMode packing,
                                 u64 seed) {
  if (kind == "cryptonets") return make_cryptonets(preset, seed);
  if (kind == "cryptonets-relu") return make_cryptonets_relu(preset, packing, seed);
  if (kind == "cryptonets-toy") return make_cryptonets_shaped_toy(preset, seed);
  if (kind == "identity") return make_identity(preset, {1, 28, 28});
  throw ValidationError("unknown model kind: " + kind +
                        " (expected cryptonets, cryptonets-relu, cryptonets-toy, identity)");
}

/// Synthetic 28x28-style samples in [0, 1).
inline BatchInput make_random_input(TensorShape shape, std::size_t batch, u64 seed) {
  Chacha20Rng rng(seed, /*stream=*/9);
  BatchInput input;
  input.shape = std::move(shape);
  input.samples.resize(batch);
  for (auto& s : input.samples) {
    s.resize(input.shape.elem_count());
    for (auto& v : s) v = rng.next_double();
  }
  return input;
}

}  // namespace henet
