#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "kpgnn/checkpoint.hpp"
#include "kpgnn/cluster.hpp"
#include "kpgnn/encoder.hpp"
#include "kpgnn/graph.hpp"
#include "kpgnn/ingest.hpp"
#include "kpgnn/losses.hpp"

namespace kpgnn::lifecycle {

enum class ClusterMethod { kmeans, dbscan };

struct LifecycleConfig {
  int window = 3;
  std::size_t batch_size = 2000;
  std::size_t epochs = 100;
  std::size_t patience = 5;
  double val_fraction = 0.1;
  double margin = 3.0;
  /// One entry per layer.
  std::vector<std::size_t> fanouts{800, 800};
  double learning_rate = 0.001;
  std::size_t hidden = 32;
  std::size_t heads = 4;
  std::size_t layers = 2;
  graph::Strategy strategy = graph::Strategy::latest;
  ClusterMethod cluster = ClusterMethod::kmeans;
  /// 0: the number of ground-truth classes in the block.
  std::size_t k = 0;
  cluster::DbscanOptions dbscan;
  std::uint64_t seed = 0;

  // ingest
  std::string embedding_file;
  std::size_t embedding_dim = 300;
  std::size_t min_df = 2;
  double max_df_ratio = 0.5;
  double day_scale = 1e-5;

  void validate() const;
  /// Per-layer fan-outs; a single entry applies to every layer.
  std::vector<std::size_t> layer_fanouts() const;
  encoder::EncoderConfig encoder_config(std::size_t input_dim) const;

  /// Flat key=value lines using the command-line flag names.
  std::string to_text() const;
  /// Sets one key; unknown keys and bad values throw ConfigError.
  void set(const std::string& key, const std::string& value);
  static LifecycleConfig from_text(const std::string& text);
};

std::string_view to_string(ClusterMethod m);
ClusterMethod parse_cluster_method(std::string_view name);

struct LifecycleState {
  LifecycleConfig config;
  std::shared_ptr<const ingest::EmbeddingProvider> embeddings;
  encoder::EncoderParams params;
  tensor::AdamState adam;
  graph::MessageGraph graph;
  int t = 0;
  /// Rows already emitted, kept so a resumed run reproduces full outputs.
  std::string metrics_log;
  std::string partitions_log;

  Checkpoint to_checkpoint() const;
  static LifecycleState from_checkpoint(const Checkpoint& ckpt);
};

std::shared_ptr<const ingest::EmbeddingProvider> load_embeddings(const LifecycleConfig& config);

/// Vocabulary filter of the block, elements and features of every message.
std::vector<graph::PreparedMessage> prepare_block(const ingest::MessageBlock& block,
                                                  const ingest::EmbeddingProvider& embeddings,
                                                  const LifecycleConfig& config);

struct EpochLog {
  std::size_t epoch = 0;
  double train_loss = 0.0;  ///< mean total loss over the epoch's batches
  double val_loss = 0.0;    ///< monitored quantity
  std::size_t batches = 0;
};

struct TrainReport {
  std::vector<EpochLog> epochs;
  std::size_t best_epoch = 0;
  bool stopped_early = false;
};

/// Continues training over every node currently in the graph. `session`
/// keys the random schedule (the block counter at which training happens).
TrainReport train_epochs(LifecycleState& state, int session);

/// Stage I: graph from M_0, fresh parameters, training.
LifecycleState pretrain(const ingest::MessageBlock& block0, const LifecycleConfig& config,
                        std::shared_ptr<const ingest::EmbeddingProvider> embeddings = nullptr,
                        TrainReport* report = nullptr);

struct Detection {
  int block = 0;
  std::vector<std::string> ids;
  std::vector<std::size_t> nodes;
  cluster::Partition partition;
  tensor::Matrix embeddings;
  /// Raw feature rows of the same messages.
  tensor::Matrix features;
  /// Ground-truth labels of the block's messages, when present.
  std::vector<std::optional<int>> labels;
  std::optional<cluster::Scores> scores;
};

/// Inserts the block and clusters the encodings of its messages.
Detection detect(LifecycleState& state, const ingest::MessageBlock& block);

/// Clusters the raw feature rows of a detection's nodes the same way.
std::optional<cluster::Scores> raw_feature_baseline(const Detection& d,
                                                    const LifecycleConfig& config);

/// Stage III: prunes the graph and continues training.
TrainReport maintain(LifecycleState& state);

struct BlockResult {
  Detection detection;
  bool maintained = false;
  double wall_ms = 0.0;
};

using BlockCallback = std::function<void(const LifecycleState&, const BlockResult&)>;

/// Processes blocks with index > state.t in order.
std::vector<BlockResult> continue_run(LifecycleState& state,
                                      const std::vector<ingest::MessageBlock>& blocks,
                                      const BlockCallback& callback = {});

/// pretrain on blocks[0], then continue_run over the rest.
LifecycleState run(const std::vector<ingest::MessageBlock>& blocks, const LifecycleConfig& config,
                   std::vector<BlockResult>* results = nullptr,
                   const BlockCallback& callback = {});

std::string metrics_header();
std::string metrics_row(const BlockResult& r);
std::string partition_lines(const Detection& d);

}  // namespace kpgnn::lifecycle
