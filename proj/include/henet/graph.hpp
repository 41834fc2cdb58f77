// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <atomic>
#include <chrono>
#include <functional>
#include <map>
#include <mutex>
#include <unordered_map>

#include <nlohmann/json.hpp>

#include "henet/ckks.hpp"

namespace henet {

// ---------------------------------------------------------------------------
// Tensors. The batch dimension is virtual: a tensor of stored shape (C,H,W)
// or (features,) holds one ciphertext per element, each packing the S batch
// samples into slots.
// ---------------------------------------------------------------------------

struct TensorShape {
  std::vector<u32> dims;

  std::size_t elem_count() const {
    std::size_t n = 1;
    for (u32 d : dims) n *= d;
    return n;
  }

  bool operator==(const TensorShape& o) const { return dims == o.dims; }

  std::string to_string() const {
    std::string s = "(";
    for (std::size_t i = 0; i < dims.size(); ++i) {
      if (i) s += ",";
      s += std::to_string(dims[i]);
    }
    return s + ")";
  }
};

struct PlainTensor {
  TensorShape shape;
  std::vector<float> data;  // row-major
};

struct CipherTensor {
  TensorShape shape;
  std::vector<Ciphertext> elems;

  std::size_t level() const {
    require(!elems.empty(), "empty cipher tensor");
    return elems[0].level();
  }
  double scale() const { return elems[0].scale; }
  PackingMode packing() const { return elems[0].packing; }
};

/// A batch of flattened samples destined for batch-axis packing.
struct BatchInput {
  TensorShape shape;
  std::vector<std::vector<double>> samples;  // samples[s] has shape.elem_count() entries
};

inline CipherTensor encrypt_tensor(const CkksContext& ctx, const BatchInput& input,
                                   const SecretKey& sk, u64 seed, PackingMode packing,
                                   unsigned threads = 1) {
  require(!input.samples.empty(), "batch must be non-empty");
  const std::size_t batch = input.samples.size();
  require(batch <= batch_capacity(ctx, packing), "batch exceeds slot capacity");
  if (packing == PackingMode::Complex) {
    require(batch % 2 == 0, "complex packing needs an even batch");
  }
  const std::size_t count = input.shape.elem_count();
  for (const auto& s : input.samples) {
    require(s.size() == count, "sample size does not match the tensor shape");
  }
  CipherTensor out;
  out.shape = input.shape;
  out.elems.resize(count);
  parallel_for(count, threads, [&](std::size_t e) {
    std::vector<double> values(batch);
    for (std::size_t s = 0; s < batch; ++s) values[s] = input.samples[s][e];
    CleartextBatch cb{packing, std::move(values)};
    out.elems[e] = encrypt_batch(ctx, cb, sk, derive_seed(seed, e));
  });
  return out;
}

inline std::vector<std::vector<double>> decrypt_tensor(const CkksContext& ctx,
                                                       const CipherTensor& ct,
                                                       const SecretKey& sk, std::size_t batch) {
  std::vector<std::vector<double>> samples(batch,
                                           std::vector<double>(ct.shape.elem_count()));
  for (std::size_t e = 0; e < ct.elems.size(); ++e) {
    auto vals = decrypt_batch(ctx, ct.elems[e], sk, batch);
    for (std::size_t s = 0; s < batch; ++s) samples[s][e] = vals.values[s];
  }
  return samples;
}

// ---------------------------------------------------------------------------
// Model IR.
// ---------------------------------------------------------------------------

enum class OpKind : u8 {
  Input,
  ConstWeight,
  Add,
  Multiply,
  Square,
  Dot,
  Convolution,
  Reshape,
  Relu,
  MaxPool,
  Output,
};

inline OpKind op_from_name(const std::string& name) {
  static const std::map<std::string, OpKind> table = {
      {"Input", OpKind::Input},     {"ConstWeight", OpKind::ConstWeight},
      {"Add", OpKind::Add},         {"Multiply", OpKind::Multiply},
      {"Square", OpKind::Square},   {"Dot", OpKind::Dot},
      {"Convolution", OpKind::Convolution}, {"Reshape", OpKind::Reshape},
      {"Relu", OpKind::Relu},       {"MaxPool", OpKind::MaxPool},
      {"Output", OpKind::Output}};
  auto it = table.find(name);
  if (it == table.end()) throw ValidationError("unknown op: " + name);
  return it->second;
}

struct NodeAttrs {
  std::vector<u32> shape;        // Input / Reshape
  u32 stride = 1;                // Convolution
  u32 window = 0;                // Convolution / MaxPool
  u32 filters = 0;               // Convolution
  std::array<u32, 4> pad = {0, 0, 0, 0};  // top, left, bottom, right
  u32 pool_stride = 0;           // MaxPool; defaults to the window
};

struct Node {
  std::string id;
  OpKind op = OpKind::Input;
  NodeAttrs attrs;
  std::vector<std::string> inputs;
  std::string weight_ref;  // Dot/Convolution/ConstWeight
  std::string bias_ref;    // Dot/Convolution, optional
};

struct PlainModel {
  std::string name;
  PackingMode packing = PackingMode::Real;
  Preset preset = Preset::P13;
  std::vector<Node> nodes;  // topologically ordered after load
  std::map<std::string, PlainTensor> weights;
  std::map<std::string, TensorShape> shapes;  // inferred per node
  std::map<std::string, std::size_t> index;   // node id -> position

  const Node& node(const std::string& id) const { return nodes[index.at(id)]; }
  const Node& output_node() const {
    for (const auto& n : nodes) {
      if (n.op == OpKind::Output) return n;
    }
    throw ValidationError("graph has no Output node");
  }
  const Node& input_node() const {
    for (const auto& n : nodes) {
      if (n.op == OpKind::Input) return n;
    }
    throw ValidationError("graph has no Input node");
  }
  bool has_op(OpKind k) const {
    for (const auto& n : nodes) {
      if (n.op == k) return true;
    }
    return false;
  }
};

namespace detail {

inline bool is_cipher_producing(const PlainModel& m, const std::string& id) {
  return m.node(id).op != OpKind::ConstWeight;
}

/// True when the node multiplies ciphertext values (raises the scale).
inline bool raises_scale(const PlainModel& m, const Node& n) {
  switch (n.op) {
    case OpKind::Square:
    case OpKind::Dot:
    case OpKind::Convolution:
      return true;
    case OpKind::Multiply:
      return true;
    default:
      return false;
  }
  (void)m;
}

inline bool is_refresh(OpKind k) { return k == OpKind::Relu || k == OpKind::MaxPool; }

inline TensorShape conv_output_shape(const Node& n, const TensorShape& in) {
  require(in.dims.size() == 3, "Convolution expects a (C,H,W) input");
  const u32 h = in.dims[1] + n.attrs.pad[0] + n.attrs.pad[2];
  const u32 w = in.dims[2] + n.attrs.pad[1] + n.attrs.pad[3];
  require(n.attrs.window >= 1 && n.attrs.stride >= 1, "bad convolution attributes");
  require(h >= n.attrs.window && w >= n.attrs.window, "window exceeds padded input");
  const u32 oh = (h - n.attrs.window) / n.attrs.stride + 1;
  const u32 ow = (w - n.attrs.window) / n.attrs.stride + 1;
  return TensorShape{{n.attrs.filters, oh, ow}};
}

inline TensorShape pool_output_shape(const Node& n, const TensorShape& in) {
  require(in.dims.size() == 3, "MaxPool expects a (C,H,W) input");
  const u32 stride = n.attrs.pool_stride ? n.attrs.pool_stride : n.attrs.window;
  require(n.attrs.window >= 1, "bad pooling window");
  require(in.dims[1] >= n.attrs.window && in.dims[2] >= n.attrs.window,
          "pooling window exceeds input");
  const u32 oh = (in.dims[1] - n.attrs.window) / stride + 1;
  const u32 ow = (in.dims[2] - n.attrs.window) / stride + 1;
  return TensorShape{{in.dims[0], oh, ow}};
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Manifest loading. JSON manifest plus a single little-endian f32 blob whose
// offsets and shapes the manifest declares.
// ---------------------------------------------------------------------------

inline PlainModel load_model(const std::string& manifest_json, std::span<const u8> weight_blob) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(manifest_json);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("manifest parse error: ") + e.what());
  }

  PlainModel model;
  model.name = j.value("name", "model");
  model.packing = packing_from_name(j.value("packing", "real"));
  model.preset = preset_from_name(j.value("preset", "P13"));

  if (j.contains("weights")) {
    for (auto& [name, entry] : j.at("weights").items()) {
      TensorShape shape;
      for (auto& d : entry.at("shape")) shape.dims.push_back(d.get<u32>());
      const std::size_t offset = entry.at("offset").get<std::size_t>();
      const std::size_t count = shape.elem_count();
      require(offset % 4 == 0, "weight offset must be 4-byte aligned");
      require(offset + count * 4 <= weight_blob.size(),
              "weight blob truncated for entry " + name);
      PlainTensor t;
      t.shape = shape;
      t.data.resize(count);
      std::memcpy(t.data.data(), weight_blob.data() + offset, count * 4);
      model.weights.emplace(name, std::move(t));
    }
  }

  require(j.contains("nodes") && j.at("nodes").is_array() && !j.at("nodes").empty(),
          "manifest has no nodes");
  for (auto& nj : j.at("nodes")) {
    Node n;
    n.id = nj.at("id").get<std::string>();
    n.op = op_from_name(nj.at("op").get<std::string>());
    if (nj.contains("inputs")) {
      for (auto& i : nj.at("inputs")) n.inputs.push_back(i.get<std::string>());
    }
    if (nj.contains("attrs")) {
      auto& a = nj.at("attrs");
      if (a.contains("shape")) {
        for (auto& d : a.at("shape")) n.attrs.shape.push_back(d.get<u32>());
      }
      n.attrs.stride = a.value("stride", 1u);
      n.attrs.window = a.value("window", 0u);
      n.attrs.filters = a.value("filters", 0u);
      n.attrs.pool_stride = a.value("pool_stride", 0u);
      if (a.contains("pad")) {
        auto& p = a.at("pad");
        require(p.size() == 4, "pad must be [top, left, bottom, right]");
        for (int i = 0; i < 4; ++i) n.attrs.pad[i] = p[i].get<u32>();
      }
    }
    n.weight_ref = nj.value("weight_ref", "");
    n.bias_ref = nj.value("bias_ref", "");
    require(!model.index.count(n.id), "duplicate node id: " + n.id);
    model.index.emplace(n.id, model.nodes.size());
    model.nodes.push_back(std::move(n));
  }

  // Topological sort; rejects cycles and dangling references.
  {
    std::map<std::string, std::vector<std::string>> fanout;
    std::map<std::string, std::size_t> indegree;
    for (const auto& n : model.nodes) indegree[n.id] = n.inputs.size();
    for (const auto& n : model.nodes) {
      for (const auto& in : n.inputs) {
        require(model.index.count(in), "node " + n.id + " references unknown input " + in);
        fanout[in].push_back(n.id);
      }
    }
    std::vector<Node> ordered;
    std::vector<std::string> ready;
    for (const auto& n : model.nodes) {
      if (indegree[n.id] == 0) ready.push_back(n.id);
    }
    while (!ready.empty()) {
      std::string id = ready.back();
      ready.pop_back();
      ordered.push_back(model.node(id));
      for (const auto& next : fanout[id]) {
        if (--indegree[next] == 0) ready.push_back(next);
      }
    }
    require(ordered.size() == model.nodes.size(), "cycle detected in the graph");
    model.nodes = std::move(ordered);
    model.index.clear();
    for (std::size_t i = 0; i < model.nodes.size(); ++i) model.index[model.nodes[i].id] = i;
  }

  // Structural checks and shape inference.
  std::size_t inputs = 0, outputs = 0;
  for (const auto& n : model.nodes) {
    switch (n.op) {
      case OpKind::Input: {
        ++inputs;
        require(n.inputs.empty(), "Input takes no inputs");
        require(!n.attrs.shape.empty(), "Input needs a shape attribute");
        model.shapes[n.id] = TensorShape{n.attrs.shape};
        break;
      }
      case OpKind::ConstWeight: {
        require(!n.weight_ref.empty() && model.weights.count(n.weight_ref),
                "ConstWeight needs a resolvable weight_ref");
        model.shapes[n.id] = model.weights.at(n.weight_ref).shape;
        break;
      }
      case OpKind::Add:
      case OpKind::Multiply: {
        require(n.inputs.size() == 2, "Add/Multiply take two inputs");
        auto a = model.shapes.at(n.inputs[0]);
        auto b = model.shapes.at(n.inputs[1]);
        require(a == b || a.elem_count() == 1 || b.elem_count() == 1,
                "shape mismatch at node " + n.id + ": " + a.to_string() + " vs " + b.to_string());
        model.shapes[n.id] = a.elem_count() == 1 ? b : a;
        break;
      }
      case OpKind::Square: {
        require(n.inputs.size() == 1, "Square takes one input");
        model.shapes[n.id] = model.shapes.at(n.inputs[0]);
        break;
      }
      case OpKind::Dot: {
        require(n.inputs.size() == 1, "Dot takes one input");
        require(!n.weight_ref.empty() && model.weights.count(n.weight_ref),
                "Dot needs a resolvable weight_ref");
        const auto& w = model.weights.at(n.weight_ref);
        require(w.shape.dims.size() == 2, "Dot weight must be (K,M)");
        auto in = model.shapes.at(n.inputs[0]);
        require(in.dims.size() == 1 && in.dims[0] == w.shape.dims[0],
                "Dot inner dimension mismatch at node " + n.id);
        if (!n.bias_ref.empty()) {
          require(model.weights.count(n.bias_ref), "unresolvable bias_ref");
          require(model.weights.at(n.bias_ref).shape.elem_count() == w.shape.dims[1],
                  "bias shape mismatch at node " + n.id);
        }
        model.shapes[n.id] = TensorShape{{w.shape.dims[1]}};
        break;
      }
      case OpKind::Convolution: {
        require(n.inputs.size() == 1, "Convolution takes one input");
        require(!n.weight_ref.empty() && model.weights.count(n.weight_ref),
                "Convolution needs a resolvable weight_ref");
        auto in = model.shapes.at(n.inputs[0]);
        const auto& w = model.weights.at(n.weight_ref);
        require(w.shape.dims.size() == 4, "Convolution weight must be (F,C,KH,KW)");
        require(w.shape.dims[0] == n.attrs.filters, "filter count mismatch");
        require(w.shape.dims[1] == in.dims[0], "channel count mismatch");
        require(w.shape.dims[2] == n.attrs.window && w.shape.dims[3] == n.attrs.window,
                "kernel window mismatch");
        if (!n.bias_ref.empty()) {
          require(model.weights.count(n.bias_ref), "unresolvable bias_ref");
          require(model.weights.at(n.bias_ref).shape.elem_count() == n.attrs.filters,
                  "bias shape mismatch at node " + n.id);
        }
        model.shapes[n.id] = detail::conv_output_shape(n, in);
        break;
      }
      case OpKind::Reshape: {
        require(n.inputs.size() == 1, "Reshape takes one input");
        TensorShape target{n.attrs.shape};
        require(target.elem_count() == model.shapes.at(n.inputs[0]).elem_count(),
                "Reshape changes the element count at node " + n.id);
        model.shapes[n.id] = target;
        break;
      }
      case OpKind::Relu: {
        require(n.inputs.size() == 1, "Relu takes one input");
        model.shapes[n.id] = model.shapes.at(n.inputs[0]);
        break;
      }
      case OpKind::MaxPool: {
        require(n.inputs.size() == 1, "MaxPool takes one input");
        model.shapes[n.id] = detail::pool_output_shape(n, model.shapes.at(n.inputs[0]));
        break;
      }
      case OpKind::Output: {
        ++outputs;
        require(n.inputs.size() == 1, "Output takes one input");
        model.shapes[n.id] = model.shapes.at(n.inputs[0]);
        break;
      }
    }
  }
  require(inputs == 1, "graph needs exactly one Input node");
  require(outputs == 1, "graph needs exactly one Output node");

  // Complex packing cannot evaluate cipher-cipher products.
  if (model.packing == PackingMode::Complex) {
    for (const auto& n : model.nodes) {
      bool cc = n.op == OpKind::Square;
      if (n.op == OpKind::Multiply) {
        cc = detail::is_cipher_producing(model, n.inputs[0]) &&
             detail::is_cipher_producing(model, n.inputs[1]);
      }
      require(!cc, "complex packing cannot evaluate node " + n.id +
                       " (cipher-cipher multiplication)");
    }
  }
  return model;
}

// ---------------------------------------------------------------------------
// Rescaling plans. Lazy: one rescale per scale-raising node, placed after
// full accumulation, and skipped entirely when no multiplication lies
// downstream before the value is decrypted (Relu/MaxPool hand the value to
// the client, which bounds the search). Naive: a rescale after every
// elementary multiplication, the comparison baseline.
// ---------------------------------------------------------------------------

enum class RescaleMode : u8 { Lazy, Naive };
enum class RescaleDecision : u8 { Skip, RescaleAfter };

struct NodePlan {
  RescaleDecision decision = RescaleDecision::Skip;
  std::size_t level_in = 0;
  std::size_t level_out = 0;
  double scale_out = 0.0;
};

struct RescalePlan {
  RescaleMode mode = RescaleMode::Lazy;
  std::map<std::string, NodePlan> nodes;
  std::size_t planned_rescale_ops = 0;  // executor must match this exactly
};

namespace detail {

inline std::size_t elementary_products(const PlainModel& m, const Node& n) {
  // Number of ciphertext-touching multiplications the node executes per
  // output element times the output element count.
  const auto& out_shape = m.shapes.at(n.id);
  switch (n.op) {
    case OpKind::Square:
      return out_shape.elem_count();
    case OpKind::Multiply:
      return out_shape.elem_count();
    case OpKind::Dot:
      return m.shapes.at(n.inputs[0]).dims[0] * out_shape.elem_count();
    case OpKind::Convolution: {
      // Valid (unpadded) taps only; padded taps contribute nothing and are
      // skipped structurally.
      const auto& in = m.shapes.at(n.inputs[0]);
      const u32 stride = n.attrs.stride;
      const u32 win = n.attrs.window;
      const u32 oh = out_shape.dims[1], ow = out_shape.dims[2];
      std::size_t taps = 0;
      for (u32 y = 0; y < oh; ++y) {
        for (u32 x = 0; x < ow; ++x) {
          for (u32 ky = 0; ky < win; ++ky) {
            for (u32 kx = 0; kx < win; ++kx) {
              const i64 iy = static_cast<i64>(y * stride + ky) - n.attrs.pad[0];
              const i64 ix = static_cast<i64>(x * stride + kx) - n.attrs.pad[1];
              if (iy >= 0 && iy < in.dims[1] && ix >= 0 && ix < in.dims[2]) ++taps;
            }
          }
        }
      }
      return taps * in.dims[0] * out_shape.dims[0];
    }
    default:
      return 0;
  }
}

}  // namespace detail

inline RescalePlan plan_rescaling(const CkksContext& ctx, const PlainModel& model,
                                  RescaleMode mode) {
  RescalePlan plan;
  plan.mode = mode;
  const std::size_t top = ctx.chain_length();

  // Reverse pass: does a multiplication lie downstream before a refresh or
  // the output?
  std::map<std::string, bool> mult_downstream;
  for (auto it = model.nodes.rbegin(); it != model.nodes.rend(); ++it) {
    mult_downstream[it->id] = false;
  }
  for (auto it = model.nodes.rbegin(); it != model.nodes.rend(); ++it) {
    const Node& n = *it;
    for (const auto& in : n.inputs) {
      bool contributes = detail::raises_scale(model, n) ||
                         (!detail::is_refresh(n.op) && mult_downstream[n.id]);
      if (contributes) mult_downstream[in] = true;
    }
  }

  // Forward pass: levels and scales.
  const double s = ctx.params().default_scale;
  for (const auto& n : model.nodes) {
    NodePlan np;
    double scale_in = s;
    std::size_t level_in = top;
    if (!n.inputs.empty()) {
      bool first = true;
      for (const auto& in : n.inputs) {
        if (!detail::is_cipher_producing(model, in)) continue;
        const auto& p = plan.nodes.at(in);
        if (first) {
          level_in = p.level_out;
          scale_in = p.scale_out;
          first = false;
        } else {
          require(p.level_out == level_in,
                  "level mismatch between inputs of node " + n.id);
        }
      }
    }
    np.level_in = level_in;
    np.level_out = level_in;
    np.scale_out = scale_in;

    if (detail::is_refresh(n.op)) {
      np.level_out = top;
      np.scale_out = s;
    } else if (detail::raises_scale(model, n)) {
      bool cipher_cipher =
          n.op == OpKind::Square ||
          (n.op == OpKind::Multiply && detail::is_cipher_producing(model, n.inputs[0]) &&
           detail::is_cipher_producing(model, n.inputs[1]));
      const double raised = cipher_cipher ? scale_in * scale_in : scale_in * s;
      const bool rescale_after =
          (mode == RescaleMode::Naive) || mult_downstream[n.id];
      np.decision = rescale_after ? RescaleDecision::RescaleAfter : RescaleDecision::Skip;
      if (rescale_after) {
        if (level_in < 2) {
          throw ValidationError("infeasible depth: node " + n.id +
                                " needs a rescale below level 1");
        }
        np.level_out = level_in - 1;
        np.scale_out = raised / static_cast<double>(ctx.modulus(level_in - 1).value);
        plan.planned_rescale_ops +=
            mode == RescaleMode::Naive
                ? detail::elementary_products(model, n)
                : model.shapes.at(n.id).elem_count();
      } else {
        np.scale_out = raised;
      }
      // The value must still fit the modulus at its output level.
      if (static_cast<long double>(np.scale_out) >= ctx.modulus_product(np.level_out)) {
        throw ValidationError("infeasible depth: scale overflows q_level at node " + n.id);
      }
    }
    plan.nodes[n.id] = np;
  }
  return plan;
}

inline RescalePlan plan_lazy_rescaling(const CkksContext& ctx, const PlainModel& model) {
  return plan_rescaling(ctx, model, RescaleMode::Lazy);
}

// ---------------------------------------------------------------------------
// Just-in-time weight encoding, memoized per (value, level, scale). Weights
// stay native floats until the executor knows the consumer's level.
// ---------------------------------------------------------------------------

class WeightEncoder {
 public:
  explicit WeightEncoder(std::shared_ptr<const CkksContext> ctx) : ctx_(std::move(ctx)) {}

  std::shared_ptr<const ScalarPlaintext> encode(double value, std::size_t level, double scale) {
    const Key key{std::bit_cast<u64>(value), level, std::bit_cast<u64>(scale)};
    std::lock_guard<std::mutex> lock(mutex_);
    auto it = cache_.find(key);
    if (it != cache_.end()) {
      ++hits_;
      return it->second;
    }
    auto pt = std::make_shared<const ScalarPlaintext>(encode_scalar(*ctx_, value, level, scale));
    cache_.emplace(key, pt);
    return pt;
  }

  /// Packing-aware broadcast constant for additions (bias terms).
  std::shared_ptr<const PackedPlaintext> encode_broadcast(double value, PackingMode packing,
                                                          std::size_t level, double scale) {
    const Key key{std::bit_cast<u64>(value), level, std::bit_cast<u64>(scale)};
    std::lock_guard<std::mutex> lock(mutex_);
    auto& map = packing == PackingMode::Real ? packed_real_ : packed_complex_;
    auto it = map.find(key);
    if (it != map.end()) return it->second;
    auto pt = std::make_shared<const PackedPlaintext>(
        encode_constant_packed(*ctx_, value, packing, level, scale));
    map.emplace(key, pt);
    return pt;
  }

  std::size_t size() const { return cache_.size(); }
  std::size_t hits() const { return hits_; }

 private:
  struct Key {
    u64 value_bits;
    std::size_t level;
    u64 scale_bits;
    bool operator==(const Key& o) const {
      return value_bits == o.value_bits && level == o.level && scale_bits == o.scale_bits;
    }
  };
  struct KeyHash {
    std::size_t operator()(const Key& k) const {
      u64 h = k.value_bits * 0x9e3779b97f4a7c15ULL;
      h ^= (k.level + 0x12345) * 0xbf58476d1ce4e5b9ULL;
      h ^= k.scale_bits * 0x94d049bb133111ebULL;
      return static_cast<std::size_t>(h ^ (h >> 29));
    }
  };

  std::shared_ptr<const CkksContext> ctx_;
  std::mutex mutex_;
  std::unordered_map<Key, std::shared_ptr<const ScalarPlaintext>, KeyHash> cache_;
  std::unordered_map<Key, std::shared_ptr<const PackedPlaintext>, KeyHash> packed_real_;
  std::unordered_map<Key, std::shared_ptr<const PackedPlaintext>, KeyHash> packed_complex_;
  std::size_t hits_ = 0;
};

/// Compile-time encoding variant: walk the plan and encode every weight at
/// its annotated consumer level before execution.
inline void precompile_weights(WeightEncoder& encoder, const CkksContext& ctx,
                               const PlainModel& model, const RescalePlan& plan) {
  const double s = ctx.params().default_scale;
  for (const auto& n : model.nodes) {
    if (n.op != OpKind::Dot && n.op != OpKind::Convolution) continue;
    const auto& np = plan.nodes.at(n.id);
    const auto& w = model.weights.at(n.weight_ref);
    for (float v : w.data) encoder.encode(v, np.level_in, s);
    if (!n.bias_ref.empty()) {
      const double acc_scale =
          plan.mode == RescaleMode::Naive && np.decision == RescaleDecision::RescaleAfter
              ? plan.nodes.at(n.inputs[0]).scale_out * s /
                    static_cast<double>(ctx.modulus(np.level_in - 1).value)
              : plan.nodes.at(n.inputs[0]).scale_out * s;
      const std::size_t bias_level = plan.mode == RescaleMode::Naive &&
                                             np.decision == RescaleDecision::RescaleAfter
                                         ? np.level_in - 1
                                         : np.level_in;
      const auto& b = model.weights.at(n.bias_ref);
      for (float v : b.data) encoder.encode_broadcast(v, model.packing, bias_level, acc_scale);
    }
  }
}

// ---------------------------------------------------------------------------
// Nonlinearity provider: the executor hands a whole layer's ciphertexts to
// the key holder, which decrypts, applies the function per slot, and returns
// fresh encryptions at the top level.
// ---------------------------------------------------------------------------

enum class NonlinKind : u8 { Relu = 1, MaxPool = 2 };

class NonlinearityProvider {
 public:
  virtual ~NonlinearityProvider() = default;

  /// `cts` holds groups of `window` ciphertexts; the result has one
  /// ciphertext per group (window == 1 for ReLU).
  virtual std::vector<Ciphertext> apply(NonlinKind kind, u32 window, u32 layer_seq,
                                        const std::vector<Ciphertext>& cts) = 0;
};

/// The decrypt -> f -> re-encrypt computation itself, shared by the local
/// provider and the protocol client. Fresh encryptions are deterministic
/// under (seed, layer, group).
class NonlinearityEngine {
 public:
  NonlinearityEngine(std::shared_ptr<const CkksContext> ctx, SecretKey sk, u64 seed)
      : ctx_(std::move(ctx)), sk_(std::move(sk)), seed_(seed) {}

  std::vector<Ciphertext> apply(NonlinKind kind, u32 window, u32 layer_seq,
                                const std::vector<Ciphertext>& cts) const {
    require(window >= 1, "window must be at least 1");
    require(cts.size() % window == 0, "ciphertext count is not a multiple of the window");
    if (kind == NonlinKind::Relu) require(window == 1, "ReLU is element-wise");
    const std::size_t groups = cts.size() / window;
    std::vector<Ciphertext> out(groups);
    for (std::size_t g = 0; g < groups; ++g) {
      const PackingMode packing = cts[g * window].packing;
      std::vector<std::vector<std::complex<double>>> slots(window);
      for (u32 k = 0; k < window; ++k) {
        slots[k] = decode_slots(*ctx_, decrypt(*ctx_, cts[g * window + k], sk_));
      }
      std::vector<std::complex<double>> result(slots[0].size());
      for (std::size_t j = 0; j < result.size(); ++j) {
        if (kind == NonlinKind::Relu) {
          result[j] = {std::max(0.0, slots[0][j].real()), std::max(0.0, slots[0][j].imag())};
        } else {
          // Per-slot max across the window; both packed components are
          // independent batch samples.
          double re = slots[0][j].real(), im = slots[0][j].imag();
          for (u32 k = 1; k < window; ++k) {
            re = std::max(re, slots[k][j].real());
            im = std::max(im, slots[k][j].imag());
          }
          result[j] = {re, im};
        }
      }
      auto pt = encode_vector(*ctx_, result, ctx_->chain_length(),
                              ctx_->params().default_scale);
      u64 group_seed = derive_seed(derive_seed(seed_, layer_seq), g);
      out[g] = encrypt(*ctx_, pt, sk_, group_seed, packing);
    }
    return out;
  }

  const CkksContext& context() const { return *ctx_; }
  const SecretKey& secret() const { return sk_; }

 private:
  std::shared_ptr<const CkksContext> ctx_;
  SecretKey sk_;
  u64 seed_;
};

class LocalProvider : public NonlinearityProvider {
 public:
  explicit LocalProvider(NonlinearityEngine engine) : engine_(std::move(engine)) {}

  std::vector<Ciphertext> apply(NonlinKind kind, u32 window, u32 layer_seq,
                                const std::vector<Ciphertext>& cts) override {
    return engine_.apply(kind, window, layer_seq, cts);
  }

 private:
  NonlinearityEngine engine_;
};

// ---------------------------------------------------------------------------
// Executor.
// ---------------------------------------------------------------------------

struct ExecutionConfig {
  unsigned threads = 1;
  const RelinKey* relin = nullptr;
  NonlinearityProvider* provider = nullptr;
  WeightEncoder* encoder = nullptr;  // optional shared cache
};

struct ExecutionStats {
  u64 rescale_ops = 0;
  u64 relin_ops = 0;
  u64 nonlin_elements = 0;
  double wall_ms = 0.0;
  std::vector<std::pair<std::string, double>> layer_ms;
};

namespace detail {

struct NodeValue {
  bool is_cipher = false;
  CipherTensor cipher;
  const PlainTensor* plain = nullptr;
};

class Executor {
 public:
  Executor(std::shared_ptr<const CkksContext> ctx, const PlainModel& model,
           const RescalePlan& plan, const ExecutionConfig& cfg, ExecutionStats* stats)
      : ctx_(std::move(ctx)),
        model_(model),
        plan_(plan),
        cfg_(cfg),
        stats_(stats),
        owned_encoder_(cfg.encoder ? nullptr : std::make_unique<WeightEncoder>(ctx_)),
        encoder_(cfg.encoder ? *cfg.encoder : *owned_encoder_) {}

  CipherTensor run(const CipherTensor& input) {
    require(input.level() == ctx_->chain_length(), "input must enter at the top level");
    require(input.packing() == model_.packing, "input packing does not match the model");
    require(model_.shapes.at(model_.input_node().id) == input.shape,
            "input shape does not match the model");
    auto t0 = std::chrono::steady_clock::now();

    // Remaining-use counts let finished tensors be freed as the walk
    // proceeds; ciphertext tensors are large.
    std::map<std::string, std::size_t> uses;
    for (const auto& n : model_.nodes) {
      for (const auto& in : n.inputs) ++uses[in];
    }

    std::map<std::string, NodeValue> values;
    u32 layer_seq = 0;
    for (const auto& n : model_.nodes) {
      auto tn = std::chrono::steady_clock::now();
      NodeValue v;
      switch (n.op) {
        case OpKind::Input:
          v.is_cipher = true;
          v.cipher = input;
          break;
        case OpKind::ConstWeight:
          v.plain = &model_.weights.at(n.weight_ref);
          break;
        case OpKind::Add:
        case OpKind::Multiply:
          v = eval_elementwise(n, values);
          break;
        case OpKind::Square:
          v = eval_square(n, values);
          break;
        case OpKind::Dot:
          v = eval_dot(n, values);
          break;
        case OpKind::Convolution:
          v = eval_convolution(n, values);
          break;
        case OpKind::Reshape:
          v = uses[n.inputs[0]] == 1 ? std::move(values.at(n.inputs[0])) : values.at(n.inputs[0]);
          v.cipher.shape = model_.shapes.at(n.id);
          break;
        case OpKind::Relu:
        case OpKind::MaxPool:
          v = eval_nonlinear(n, values, layer_seq++);
          break;
        case OpKind::Output:
          v = uses[n.inputs[0]] == 1 ? std::move(values.at(n.inputs[0])) : values.at(n.inputs[0]);
          break;
      }
      if (v.is_cipher) {
        const auto& np = plan_.nodes.at(n.id);
        require(v.cipher.level() == np.level_out,
                "executed level diverged from the plan at node " + n.id);
      }
      if (stats_) {
        double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() -
                                                              tn)
                        .count();
        stats_->layer_ms.emplace_back(n.id, ms);
      }
      for (const auto& in : n.inputs) {
        if (--uses[in] == 0) values.erase(in);
      }
      values[n.id] = std::move(v);
    }

    if (stats_) {
      stats_->rescale_ops = rescales_.load();
      stats_->relin_ops = relins_.load();
      stats_->wall_ms =
          std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
              .count();
    }
    require(rescales_.load() == plan_.planned_rescale_ops,
            "executed rescale count diverged from the plan");
    auto it = values.find(model_.output_node().id);
    require(it != values.end(), "output value missing");
    return std::move(it->second.cipher);
  }

 private:
  Ciphertext rescaled(Ciphertext ct) {
    ct = rescale_next(*ctx_, ct);
    rescales_.fetch_add(1);
    return ct;
  }

  Ciphertext relinearized(Ciphertext ct) {
    require(cfg_.relin != nullptr, "graph contains cipher-cipher products but no relin key");
    ct = relinearize(*ctx_, ct, *cfg_.relin);
    relins_.fetch_add(1);
    return ct;
  }

  /// Multiply-accumulate core shared by Dot and Convolution. Terms are
  /// accumulated in ascending index order; under the naive plan every
  /// product is rescaled before accumulation, under the lazy plan the sum
  /// carries the raised scale and one deferred rescale covers it.
  Ciphertext mac_output(const Node& n, const CipherTensor& x,
                        std::span<const std::pair<std::size_t, float>> taps, double bias,
                        bool has_bias) {
    const auto& np = plan_.nodes.at(n.id);
    const bool naive = plan_.mode == RescaleMode::Naive;
    const bool layer_rescale = np.decision == RescaleDecision::RescaleAfter;
    const double s = ctx_->params().default_scale;

    Ciphertext acc;
    bool first = true;
    for (const auto& [idx, w] : taps) {
      auto pt = encoder_.encode(w, x.level(), s);
      Ciphertext term = mul_ct_pt_scalar(*ctx_, x.elems[idx], *pt);
      if (naive && layer_rescale) term = rescaled(std::move(term));
      if (first) {
        acc = std::move(term);
        first = false;
      } else {
        acc = add_ct_ct(*ctx_, acc, term);
      }
    }
    require(!first, "empty accumulation");
    if (has_bias) {
      auto bpt = encoder_.encode_broadcast(bias, model_.packing, acc.level(), acc.scale);
      acc = add_ct_pt_vector(*ctx_, acc, *bpt);
    }
    if (!naive && layer_rescale) acc = rescaled(std::move(acc));
    return acc;
  }

  NodeValue eval_dot(const Node& n, std::map<std::string, NodeValue>& values) {
    const auto& x = values.at(n.inputs[0]).cipher;
    const auto& w = model_.weights.at(n.weight_ref);
    const PlainTensor* b = n.bias_ref.empty() ? nullptr : &model_.weights.at(n.bias_ref);
    const u32 k = w.shape.dims[0];
    const u32 m = w.shape.dims[1];

    NodeValue v;
    v.is_cipher = true;
    v.cipher.shape = model_.shapes.at(n.id);
    v.cipher.elems.resize(m);
    parallel_for(m, cfg_.threads, [&](std::size_t j) {
      std::vector<std::pair<std::size_t, float>> taps;
      taps.reserve(k);
      for (u32 i = 0; i < k; ++i) taps.emplace_back(i, w.data[i * m + j]);
      v.cipher.elems[j] =
          mac_output(n, x, taps, b ? b->data[j] : 0.0f, b != nullptr);
    });
    return v;
  }

  NodeValue eval_convolution(const Node& n, std::map<std::string, NodeValue>& values) {
    const auto& x = values.at(n.inputs[0]).cipher;
    const auto& w = model_.weights.at(n.weight_ref);
    const PlainTensor* b = n.bias_ref.empty() ? nullptr : &model_.weights.at(n.bias_ref);
    const auto& in_shape = x.shape;
    const auto out_shape = model_.shapes.at(n.id);
    const u32 channels = in_shape.dims[0], ih = in_shape.dims[1], iw = in_shape.dims[2];
    const u32 filters = out_shape.dims[0], oh = out_shape.dims[1], ow = out_shape.dims[2];
    const u32 win = n.attrs.window, stride = n.attrs.stride;

    NodeValue v;
    v.is_cipher = true;
    v.cipher.shape = out_shape;
    v.cipher.elems.resize(out_shape.elem_count());
    parallel_for(out_shape.elem_count(), cfg_.threads, [&](std::size_t e) {
      const u32 f = static_cast<u32>(e / (oh * ow));
      const u32 y = static_cast<u32>((e / ow) % oh);
      const u32 xo = static_cast<u32>(e % ow);
      std::vector<std::pair<std::size_t, float>> taps;
      taps.reserve(static_cast<std::size_t>(channels) * win * win);
      for (u32 c = 0; c < channels; ++c) {
        for (u32 ky = 0; ky < win; ++ky) {
          for (u32 kx = 0; kx < win; ++kx) {
            const i64 iy = static_cast<i64>(y) * stride + ky - n.attrs.pad[0];
            const i64 ix = static_cast<i64>(xo) * stride + kx - n.attrs.pad[1];
            if (iy < 0 || iy >= ih || ix < 0 || ix >= iw) continue;  // zero padding
            const std::size_t in_idx = (static_cast<std::size_t>(c) * ih + iy) * iw + ix;
            const float wv = w.data[((static_cast<std::size_t>(f) * channels + c) * win + ky) *
                                        win +
                                    kx];
            taps.emplace_back(in_idx, wv);
          }
        }
      }
      v.cipher.elems[e] = mac_output(n, x, taps, b ? b->data[f] : 0.0f, b != nullptr);
    });
    return v;
  }

  NodeValue eval_square(const Node& n, std::map<std::string, NodeValue>& values) {
    const auto& x = values.at(n.inputs[0]).cipher;
    const auto& np = plan_.nodes.at(n.id);
    NodeValue v;
    v.is_cipher = true;
    v.cipher.shape = x.shape;
    v.cipher.elems.resize(x.elems.size());
    parallel_for(x.elems.size(), cfg_.threads, [&](std::size_t e) {
      Ciphertext sq = relinearized(square(*ctx_, x.elems[e]));
      if (np.decision == RescaleDecision::RescaleAfter) sq = rescaled(std::move(sq));
      v.cipher.elems[e] = std::move(sq);
    });
    return v;
  }

  NodeValue eval_elementwise(const Node& n, std::map<std::string, NodeValue>& values) {
    const NodeValue& a = values.at(n.inputs[0]);
    const NodeValue& b = values.at(n.inputs[1]);
    require(a.is_cipher || b.is_cipher, "constant-only op " + n.id);
    const auto& np = plan_.nodes.at(n.id);
    const bool mul = n.op == OpKind::Multiply;
    const double s = ctx_->params().default_scale;

    NodeValue v;
    v.is_cipher = true;
    v.cipher.shape = model_.shapes.at(n.id);

    if (a.is_cipher && b.is_cipher) {
      const auto& ca = a.cipher;
      const auto& cb = b.cipher;
      require(ca.elems.size() == cb.elems.size(), "elementwise shape mismatch");
      v.cipher.elems.resize(ca.elems.size());
      parallel_for(ca.elems.size(), cfg_.threads, [&](std::size_t e) {
        if (mul) {
          Ciphertext prod = relinearized(mul_ct_ct(*ctx_, ca.elems[e], cb.elems[e]));
          if (np.decision == RescaleDecision::RescaleAfter) prod = rescaled(std::move(prod));
          v.cipher.elems[e] = std::move(prod);
        } else {
          v.cipher.elems[e] = add_ct_ct(*ctx_, ca.elems[e], cb.elems[e]);
        }
      });
      return v;
    }

    const CipherTensor& x = a.is_cipher ? a.cipher : b.cipher;
    const PlainTensor& c = *(a.is_cipher ? b.plain : a.plain);
    const bool broadcast = c.shape.elem_count() == 1;
    require(broadcast || c.shape.elem_count() == x.elems.size(), "elementwise shape mismatch");
    v.cipher.elems.resize(x.elems.size());
    parallel_for(x.elems.size(), cfg_.threads, [&](std::size_t e) {
      const double cv = broadcast ? c.data[0] : c.data[e];
      if (mul) {
        auto pt = encoder_.encode(cv, x.level(), s);
        Ciphertext prod = mul_ct_pt_scalar(*ctx_, x.elems[e], *pt);
        if (np.decision == RescaleDecision::RescaleAfter) prod = rescaled(std::move(prod));
        v.cipher.elems[e] = std::move(prod);
      } else {
        auto pt = encoder_.encode_broadcast(cv, model_.packing, x.level(), x.scale());
        v.cipher.elems[e] = add_ct_pt_vector(*ctx_, x.elems[e], *pt);
      }
    });
    return v;
  }

  NodeValue eval_nonlinear(const Node& n, std::map<std::string, NodeValue>& values,
                           u32 layer_seq) {
    require(cfg_.provider != nullptr,
            "graph contains " + n.id + " but no nonlinearity provider is attached");
    const auto& x = values.at(n.inputs[0]).cipher;
    NodeValue v;
    v.is_cipher = true;
    v.cipher.shape = model_.shapes.at(n.id);

    std::vector<Ciphertext> request;
    u32 window = 1;
    if (n.op == OpKind::Relu) {
      request = x.elems;
    } else {
      // One window-sized group per output element, batched into one request.
      const u32 stride = n.attrs.pool_stride ? n.attrs.pool_stride : n.attrs.window;
      const u32 win = n.attrs.window;
      window = win * win;
      const auto& out_shape = v.cipher.shape;
      const u32 channels = out_shape.dims[0], oh = out_shape.dims[1], ow = out_shape.dims[2];
      const u32 ihh = x.shape.dims[1], iww = x.shape.dims[2];
      request.reserve(static_cast<std::size_t>(channels) * oh * ow * window);
      for (u32 c = 0; c < channels; ++c) {
        for (u32 y = 0; y < oh; ++y) {
          for (u32 xo = 0; xo < ow; ++xo) {
            for (u32 ky = 0; ky < win; ++ky) {
              for (u32 kx = 0; kx < win; ++kx) {
                const std::size_t idx =
                    (static_cast<std::size_t>(c) * ihh + (y * stride + ky)) * iww +
                    (xo * stride + kx);
                request.push_back(x.elems[idx]);
              }
            }
          }
        }
      }
    }
    auto fresh = cfg_.provider->apply(n.op == OpKind::Relu ? NonlinKind::Relu : NonlinKind::MaxPool,
                                      window, layer_seq, request);
    require(fresh.size() == v.cipher.shape.elem_count(),
            "provider returned the wrong element count");
    for (const auto& ct : fresh) {
      require(ct.level() == ctx_->chain_length(), "provider must refresh to the top level");
    }
    if (stats_) stats_->nonlin_elements += request.size();
    v.cipher.elems = std::move(fresh);
    return v;
  }

  std::shared_ptr<const CkksContext> ctx_;
  const PlainModel& model_;
  const RescalePlan& plan_;
  const ExecutionConfig& cfg_;
  ExecutionStats* stats_;
  std::unique_ptr<WeightEncoder> owned_encoder_;
  WeightEncoder& encoder_;
  std::atomic<u64> rescales_{0};
  std::atomic<u64> relins_{0};
};

}  // namespace detail

inline CipherTensor execute(std::shared_ptr<const CkksContext> ctx, const PlainModel& model,
                            const RescalePlan& plan, const CipherTensor& input,
                            const ExecutionConfig& cfg, ExecutionStats* stats = nullptr) {
  detail::Executor exec(std::move(ctx), model, plan, cfg, stats);
  return exec.run(input);
}

// ---------------------------------------------------------------------------
// Cleartext reference: the same graph on plain floats, used by the compare
// tooling and as the accuracy oracle.
// ---------------------------------------------------------------------------

inline std::vector<std::vector<double>> execute_clear(const PlainModel& model,
                                                      const BatchInput& input) {
  std::vector<std::vector<double>> batch = input.samples;
  std::map<std::string, std::vector<std::vector<double>>> values;
  std::map<std::string, std::vector<double>> const_values;

  for (const auto& n : model.nodes) {
    switch (n.op) {
      case OpKind::Input:
        values[n.id] = batch;
        break;
      case OpKind::ConstWeight: {
        const auto& w = model.weights.at(n.weight_ref);
        const_values[n.id] = std::vector<double>(w.data.begin(), w.data.end());
        break;
      }
      case OpKind::Add:
      case OpKind::Multiply: {
        const bool a_cipher = values.count(n.inputs[0]) > 0;
        const bool b_cipher = values.count(n.inputs[1]) > 0;
        if (a_cipher && b_cipher) {
          auto out = values.at(n.inputs[0]);
          const auto& rhs = values.at(n.inputs[1]);
          for (std::size_t s = 0; s < out.size(); ++s) {
            for (std::size_t e = 0; e < out[s].size(); ++e) {
              out[s][e] = n.op == OpKind::Add ? out[s][e] + rhs[s][e] : out[s][e] * rhs[s][e];
            }
          }
          values[n.id] = std::move(out);
        } else {
          auto out = values.at(a_cipher ? n.inputs[0] : n.inputs[1]);
          const auto& c = const_values.at(a_cipher ? n.inputs[1] : n.inputs[0]);
          for (auto& sample : out) {
            for (std::size_t e = 0; e < sample.size(); ++e) {
              const double cv = c.size() == 1 ? c[0] : c[e];
              sample[e] = n.op == OpKind::Add ? sample[e] + cv : sample[e] * cv;
            }
          }
          values[n.id] = std::move(out);
        }
        break;
      }
      case OpKind::Square: {
        auto out = values.at(n.inputs[0]);
        for (auto& sample : out) {
          for (auto& v : sample) v = v * v;
        }
        values[n.id] = std::move(out);
        break;
      }
      case OpKind::Dot: {
        const auto& w = model.weights.at(n.weight_ref);
        const u32 k = w.shape.dims[0], m = w.shape.dims[1];
        const PlainTensor* b = n.bias_ref.empty() ? nullptr : &model.weights.at(n.bias_ref);
        const auto& in = values.at(n.inputs[0]);
        std::vector<std::vector<double>> out(in.size(), std::vector<double>(m, 0.0));
        for (std::size_t s = 0; s < in.size(); ++s) {
          for (u32 j = 0; j < m; ++j) {
            double acc = 0;
            for (u32 i = 0; i < k; ++i) acc += in[s][i] * w.data[i * m + j];
            out[s][j] = acc + (b ? b->data[j] : 0.0);
          }
        }
        values[n.id] = std::move(out);
        break;
      }
      case OpKind::Convolution: {
        const auto& w = model.weights.at(n.weight_ref);
        const PlainTensor* b = n.bias_ref.empty() ? nullptr : &model.weights.at(n.bias_ref);
        const auto& in_shape = model.shapes.at(n.inputs[0]);
        const auto& out_shape = model.shapes.at(n.id);
        const u32 channels = in_shape.dims[0], ih = in_shape.dims[1], iw = in_shape.dims[2];
        const u32 filters = out_shape.dims[0], oh = out_shape.dims[1], ow = out_shape.dims[2];
        const u32 win = n.attrs.window, stride = n.attrs.stride;
        const auto& in = values.at(n.inputs[0]);
        std::vector<std::vector<double>> out(in.size(),
                                             std::vector<double>(out_shape.elem_count(), 0.0));
        for (std::size_t s = 0; s < in.size(); ++s) {
          for (u32 f = 0; f < filters; ++f) {
            for (u32 y = 0; y < oh; ++y) {
              for (u32 xo = 0; xo < ow; ++xo) {
                double acc = 0;
                for (u32 c = 0; c < channels; ++c) {
                  for (u32 ky = 0; ky < win; ++ky) {
                    for (u32 kx = 0; kx < win; ++kx) {
                      const i64 iy = static_cast<i64>(y) * stride + ky - n.attrs.pad[0];
                      const i64 ix = static_cast<i64>(xo) * stride + kx - n.attrs.pad[1];
                      if (iy < 0 || iy >= ih || ix < 0 || ix >= iw) continue;
                      acc += in[s][(static_cast<std::size_t>(c) * ih + iy) * iw + ix] *
                             w.data[((static_cast<std::size_t>(f) * channels + c) * win + ky) *
                                        win +
                                    kx];
                    }
                  }
                }
                out[s][(static_cast<std::size_t>(f) * oh + y) * ow + xo] =
                    acc + (b ? b->data[f] : 0.0);
              }
            }
          }
        }
        values[n.id] = std::move(out);
        break;
      }
      case OpKind::Reshape:
        values[n.id] = values.at(n.inputs[0]);
        break;
      case OpKind::Relu: {
        auto out = values.at(n.inputs[0]);
        for (auto& sample : out) {
          for (auto& v : sample) v = std::max(0.0, v);
        }
        values[n.id] = std::move(out);
        break;
      }
      case OpKind::MaxPool: {
        const auto& in_shape = model.shapes.at(n.inputs[0]);
        const auto& out_shape = model.shapes.at(n.id);
        const u32 stride = n.attrs.pool_stride ? n.attrs.pool_stride : n.attrs.window;
        const u32 win = n.attrs.window;
        const u32 channels = out_shape.dims[0], oh = out_shape.dims[1], ow = out_shape.dims[2];
        const auto& in = values.at(n.inputs[0]);
        std::vector<std::vector<double>> out(in.size(),
                                             std::vector<double>(out_shape.elem_count()));
        for (std::size_t s = 0; s < in.size(); ++s) {
          for (u32 c = 0; c < channels; ++c) {
            for (u32 y = 0; y < oh; ++y) {
              for (u32 xo = 0; xo < ow; ++xo) {
                double best = -1e300;
                for (u32 ky = 0; ky < win; ++ky) {
                  for (u32 kx = 0; kx < win; ++kx) {
                    best = std::max(
                        best, in[s][(static_cast<std::size_t>(c) * in_shape.dims[1] +
                                     (y * stride + ky)) *
                                        in_shape.dims[2] +
                                    (xo * stride + kx)]);
                  }
                }
                out[s][(static_cast<std::size_t>(c) * oh + y) * ow + xo] = best;
              }
            }
          }
        }
        values[n.id] = std::move(out);
        break;
      }
      case OpKind::Output:
        values[n.id] = values.at(n.inputs[0]);
        break;
    }
  }
  return values.at(model.output_node().id);
}

}  // namespace henet
