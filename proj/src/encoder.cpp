#include "kpgnn/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_map>

#include "kpgnn/random.hpp"

namespace kpgnn::encoder {

using tensor::Matrix;
using tensor::Tape;
using tensor::Var;

void EncoderConfig::validate() const {
  if (input_dim == 0) throw ConfigError("encoder input dimension must be positive");
  if (heads == 0 || hidden == 0 || hidden % heads != 0) {
    throw ConfigError("head count must divide the embedding dimension");
  }
  if (layers == 0) throw ConfigError("encoder needs at least one layer");
}

std::string EncoderParams::projection_name(std::size_t layer, std::size_t head) {
  return "l" + std::to_string(layer) + ".h" + std::to_string(head) + ".W";
}

std::string EncoderParams::attention_name(std::size_t layer, std::size_t head) {
  return "l" + std::to_string(layer) + ".h" + std::to_string(head) + ".a";
}

namespace {

Matrix glorot(std::size_t rows, std::size_t cols, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(rows + cols));
  Matrix m(rows, cols);
  for (double& v : m.data()) v = rng.uniform(-bound, bound);
  return m;
}

}  // namespace

EncoderParams EncoderParams::initialize(const EncoderConfig& config, std::uint64_t seed) {
  config.validate();
  EncoderParams p;
  p.config = config;
  Rng rng(seed);
  const std::size_t k = config.head_width();
  for (std::size_t l = 0; l < config.layers; ++l) {
    const std::size_t in = l == 0 ? config.input_dim : config.hidden;
    for (std::size_t h = 0; h < config.heads; ++h) {
      p.params.push_back({projection_name(l, h), glorot(in, k, rng)});
      p.params.push_back({attention_name(l, h), glorot(2 * k, 1, rng)});
    }
  }
  p.params.push_back({kDiscriminator, glorot(config.hidden, config.hidden, rng)});
  return p;
}

const Matrix& EncoderParams::projection(std::size_t layer, std::size_t head) const {
  return tensor::find_parameter(params, projection_name(layer, head)).value;
}

const Matrix& EncoderParams::attention(std::size_t layer, std::size_t head) const {
  return tensor::find_parameter(params, attention_name(layer, head)).value;
}

const Matrix& EncoderParams::discriminator() const {
  return tensor::find_parameter(params, kDiscriminator).value;
}

Matrix& EncoderParams::mutable_tensor(const std::string& name) {
  for (auto& p : params)
    if (p.name == name) return p.value;
  throw Error("unknown parameter '" + name + "'");
}

std::uint64_t neighbor_seed(std::uint64_t seed, std::size_t layer, std::size_t node) {
  return derive_seed(seed, "neighbors", layer, node);
}

std::vector<std::size_t> sample_neighbors(std::span<const std::size_t> neighbors,
                                          std::size_t fanout, std::uint64_t seed) {
  std::vector<std::size_t> pool(neighbors.begin(), neighbors.end());
  if (pool.size() > fanout) {
    Rng rng(seed);
    for (std::size_t i = 0; i < fanout; ++i) {
      std::swap(pool[i], pool[i + rng.uniform_index(pool.size() - i)]);
    }
    pool.resize(fanout);
  }
  std::sort(pool.begin(), pool.end());
  return pool;
}

SampledSubgraph sample_subgraph(const graph::MessageGraph& g, std::span<const std::size_t> seeds,
                                std::span<const std::size_t> fanouts, std::uint64_t seed) {
  if (fanouts.empty()) throw ConfigError("at least one fan-out is required");
  for (std::size_t c : fanouts)
    if (c == 0) throw ConfigError("fan-outs must be >= 1");
  const std::size_t layers = fanouts.size();

  SampledSubgraph sg;
  sg.seeds.assign(seeds.begin(), seeds.end());
  sg.layer_nodes.resize(layers + 1);
  sg.sampled.resize(layers);
  sg.edges.resize(layers);
  sg.layer_nodes[layers] = sg.seeds;
  {
    auto sorted = sg.seeds;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
      throw ConfigError("subgraph seeds must be unique");
    }
    for (std::size_t s : sorted) g.neighbors(s);  // range check
  }

  for (std::size_t l = layers; l >= 1; --l) {
    const auto& targets = sg.layer_nodes[l];
    auto& lower = sg.layer_nodes[l - 1];
    lower = targets;
    std::unordered_map<std::size_t, std::size_t> local;
    local.reserve(targets.size() * 4);
    for (std::size_t i = 0; i < targets.size(); ++i) local.emplace(targets[i], i);

    auto& sampled = sg.sampled[l - 1];
    auto& edges = sg.edges[l - 1];
    sampled.resize(targets.size());
    edges.offsets.assign(1, 0);
    for (std::size_t t = 0; t < targets.size(); ++t) {
      sampled[t] = sample_neighbors(g.neighbors(targets[t]), fanouts[l - 1],
                                    neighbor_seed(seed, l, targets[t]));
      edges.target.push_back(t);
      edges.source.push_back(t);
      for (std::size_t v : sampled[t]) {
        auto [it, inserted] = local.emplace(v, lower.size());
        if (inserted) lower.push_back(v);
        edges.target.push_back(t);
        edges.source.push_back(it->second);
      }
      edges.offsets.push_back(edges.source.size());
    }
  }
  return sg;
}

BoundParams bind(Tape& tape, const EncoderParams& params, bool trainable) {
  BoundParams b;
  const auto& cfg = params.config;
  b.projection.assign(cfg.layers, std::vector<Var>(cfg.heads));
  b.attention.assign(cfg.layers, std::vector<Var>(cfg.heads));
  for (const auto& p : params.params)
    b.all.push_back(trainable ? tape.leaf(p.value) : tape.constant(p.value));
  for (std::size_t k = 0; k < params.params.size(); ++k) {
    const auto& name = params.params[k].name;
    for (std::size_t l = 0; l < cfg.layers; ++l)
      for (std::size_t h = 0; h < cfg.heads; ++h) {
        if (name == EncoderParams::projection_name(l, h)) b.projection[l][h] = b.all[k];
        if (name == EncoderParams::attention_name(l, h)) b.attention[l][h] = b.all[k];
      }
    if (name == EncoderParams::kDiscriminator) b.discriminator = b.all[k];
  }
  return b;
}

Var layer_forward(Var input, const LayerEdges& edges, std::size_t targets,
                  const BoundParams& params, std::size_t layer, bool last, LayerTrace* trace) {
  if (layer >= params.projection.size()) throw ConfigError("layer index out of range");
  if (edges.offsets.size() != targets + 1) throw ShapeError("layer edges do not match targets");
  const auto& heads = params.projection[layer];
  if (input.cols() != heads.front().rows()) {
    throw ShapeError("layer " + std::to_string(layer) + " expects input width " +
                     std::to_string(heads.front().rows()) + ", got " +
                     std::to_string(input.cols()));
  }
  std::vector<Var> outputs;
  for (std::size_t h = 0; h < heads.size(); ++h) {
    Var z = tensor::matmul(input, heads[h]);
    Var zt = tensor::gather_rows(z, edges.target);
    Var zs = tensor::gather_rows(z, edges.source);
    const Var pair[] = {zt, zs};
    Var logits = tensor::leaky_relu(tensor::matmul(tensor::concat_cols(pair), params.attention[layer][h]));
    Var alpha = tensor::segment_softmax(logits, edges.offsets);
    if (trace) trace->attention.push_back(alpha.value());
    outputs.push_back(tensor::segment_sum(tensor::scale_rows(zs, alpha), edges.offsets));
  }
  Var out = outputs.size() == 1 ? outputs.front() : tensor::concat_cols(outputs);
  return last ? out : tensor::elu(out);
}

Var forward(Tape& tape, const SampledSubgraph& subgraph, const Matrix& inputs,
            const BoundParams& params, std::vector<LayerTrace>* traces) {
  const std::size_t layers = subgraph.edges.size();
  if (layers != params.projection.size()) {
    throw ConfigError("subgraph has " + std::to_string(layers) + " layers, encoder has " +
                      std::to_string(params.projection.size()));
  }
  if (inputs.rows() != subgraph.input_nodes().size()) {
    throw ShapeError("input rows do not match the subgraph's input nodes");
  }
  if (traces) traces->assign(layers, {});
  Var h = tape.constant(inputs);
  for (std::size_t l = 0; l < layers; ++l) {
    h = layer_forward(h, subgraph.edges[l], subgraph.layer_nodes[l + 1].size(), params, l,
                      l + 1 == layers, traces ? &(*traces)[l] : nullptr);
  }
  return h;
}

Matrix input_features(const graph::MessageGraph& g, const SampledSubgraph& subgraph) {
  return tensor::gather_rows(g.features(), subgraph.input_nodes());
}

std::vector<std::size_t> corruption_permutation(std::size_t rows, std::uint64_t seed) {
  std::vector<std::size_t> perm(rows);
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(seed);
  rng.shuffle(perm);
  return perm;
}

Matrix permute_rows(const Matrix& m, std::span<const std::size_t> perm) {
  if (perm.size() != m.rows()) throw ShapeError("permutation length does not match rows");
  return tensor::gather_rows(m, perm);
}

namespace {

Matrix run_encode(const graph::MessageGraph& g, std::span<const std::size_t> nodes,
                  const EncoderParams& params, std::span<const std::size_t> fanouts,
                  std::uint64_t sample_seed, const std::uint64_t* corruption_seed) {
  if (nodes.empty()) return Matrix(0, params.config.hidden);
  std::vector<std::size_t> unique;
  std::unordered_map<std::size_t, std::size_t> position;
  std::vector<std::size_t> row_of(nodes.size());
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    auto [it, inserted] = position.emplace(nodes[i], unique.size());
    if (inserted) unique.push_back(nodes[i]);
    row_of[i] = it->second;
  }
  const auto sg = sample_subgraph(g, unique, fanouts, sample_seed);
  Matrix inputs = input_features(g, sg);
  if (corruption_seed) {
    inputs = permute_rows(inputs, corruption_permutation(inputs.rows(), *corruption_seed));
  }
  Tape tape;
  const auto bound = bind(tape, params, false);
  const Matrix out = forward(tape, sg, inputs, bound).value();
  return tensor::gather_rows(out, row_of);
}

}  // namespace

Matrix encode(const graph::MessageGraph& g, std::span<const std::size_t> nodes,
              const EncoderParams& params, std::span<const std::size_t> fanouts,
              std::uint64_t sample_seed) {
  return run_encode(g, nodes, params, fanouts, sample_seed, nullptr);
}

Matrix encode_corrupted(const graph::MessageGraph& g, std::span<const std::size_t> nodes,
                        const EncoderParams& params, std::span<const std::size_t> fanouts,
                        std::uint64_t sample_seed, std::uint64_t corruption_seed) {
  return run_encode(g, nodes, params, fanouts, sample_seed, &corruption_seed);
}

}  // namespace kpgnn::encoder
