#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "kpgnn/graph.hpp"
#include "kpgnn/tensor.hpp"

namespace kpgnn::encoder {

struct EncoderConfig {
  std::size_t input_dim = 0;
  std::size_t hidden = 32;  ///< d', the concatenated width of every layer
  std::size_t heads = 4;
  std::size_t layers = 2;

  std::size_t head_width() const { return hidden / heads; }
  void validate() const;
};

/// Per-layer, per-head projection W (in x d'/heads) and attention vector a
/// (2*d'/heads x 1), plus the bilinear discriminator W_b (d' x d').
struct EncoderParams {
  EncoderConfig config;
  tensor::ParameterSet params;

  /// Glorot-uniform initialization from a seed.
  static EncoderParams initialize(const EncoderConfig& config, std::uint64_t seed);

  static std::string projection_name(std::size_t layer, std::size_t head);
  static std::string attention_name(std::size_t layer, std::size_t head);
  static constexpr const char* kDiscriminator = "disc.W";

  const tensor::Matrix& projection(std::size_t layer, std::size_t head) const;
  const tensor::Matrix& attention(std::size_t layer, std::size_t head) const;
  const tensor::Matrix& discriminator() const;
  tensor::Matrix& mutable_tensor(const std::string& name);
};

/// Edges of one layer in local indices, grouped by target. Target t owns
/// edges [offsets[t], offsets[t+1]); the first edge of each group is the
/// self edge.
struct LayerEdges {
  std::vector<std::size_t> offsets;
  std::vector<std::size_t> target;
  std::vector<std::size_t> source;
};

/// Nodes and sampled neighborhoods needed to compute the seeds' embeddings.
/// layer_nodes[l] lists the global nodes whose layer-l representation is
/// needed; layer_nodes[L] are the seeds and each layer_nodes[l] is a prefix
/// of layer_nodes[l-1].
struct SampledSubgraph {
  std::vector<std::size_t> seeds;
  std::vector<std::vector<std::size_t>> layer_nodes;
  /// sampled[l-1][t] = global neighbors drawn for target t at layer l.
  std::vector<std::vector<std::vector<std::size_t>>> sampled;
  std::vector<LayerEdges> edges;

  const std::vector<std::size_t>& input_nodes() const { return layer_nodes.front(); }
};

/// Uniform sample without replacement of min(|neighbors|, fanout) entries,
/// returned sorted.
std::vector<std::size_t> sample_neighbors(std::span<const std::size_t> neighbors,
                                          std::size_t fanout, std::uint64_t seed);

/// Seed of the generator used for `node` at `layer` (1-based).
std::uint64_t neighbor_seed(std::uint64_t seed, std::size_t layer, std::size_t node);

/// `seeds` must be unique. fanouts[l-1] caps layer l.
SampledSubgraph sample_subgraph(const graph::MessageGraph& g, std::span<const std::size_t> seeds,
                                std::span<const std::size_t> fanouts, std::uint64_t seed);

/// Tape handles for every parameter, in parameter order. Frozen bindings
/// record constants and skip gradient bookkeeping.
struct BoundParams {
  std::vector<tensor::Var> all;
  std::vector<std::vector<tensor::Var>> projection;  // [layer][head]
  std::vector<std::vector<tensor::Var>> attention;   // [layer][head]
  tensor::Var discriminator;
};

BoundParams bind(tensor::Tape& tape, const EncoderParams& params, bool trainable = true);

/// Attention coefficients of one layer, one E x 1 column per head.
struct LayerTrace {
  std::vector<tensor::Matrix> attention;
};

/// One attention layer: rows of `input` follow layer_nodes[l-1], output rows
/// follow layer_nodes[l]. `layer` is 0-based.
tensor::Var layer_forward(tensor::Var input, const LayerEdges& edges, std::size_t targets,
                          const BoundParams& params, std::size_t layer, bool last,
                          LayerTrace* trace = nullptr);

/// Runs every layer over the subgraph. `inputs` holds the feature rows of
/// subgraph.input_nodes(), in that order. Output rows follow subgraph.seeds.
tensor::Var forward(tensor::Tape& tape, const SampledSubgraph& subgraph,
                    const tensor::Matrix& inputs, const BoundParams& params,
                    std::vector<LayerTrace>* traces = nullptr);

tensor::Matrix input_features(const graph::MessageGraph& g, const SampledSubgraph& subgraph);

/// Row permutation used to corrupt a subgraph's features.
std::vector<std::size_t> corruption_permutation(std::size_t rows, std::uint64_t seed);
tensor::Matrix permute_rows(const tensor::Matrix& m, std::span<const std::size_t> perm);

/// Embeddings of `nodes` (duplicates allowed), one row per entry.
tensor::Matrix encode(const graph::MessageGraph& g, std::span<const std::size_t> nodes,
                      const EncoderParams& params, std::span<const std::size_t> fanouts,
                      std::uint64_t sample_seed);

/// As encode, with the subgraph's feature rows shuffled before propagation.
tensor::Matrix encode_corrupted(const graph::MessageGraph& g, std::span<const std::size_t> nodes,
                                const EncoderParams& params, std::span<const std::size_t> fanouts,
                                std::uint64_t sample_seed, std::uint64_t corruption_seed);

}  // namespace kpgnn::encoder
