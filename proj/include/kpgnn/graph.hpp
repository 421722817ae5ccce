#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "kpgnn/ingest.hpp"
#include "kpgnn/tensor.hpp"

namespace kpgnn::graph {

/// Undirected edges as (i, j) with i < j, sorted.
using EdgeSet = std::vector<std::pair<std::size_t, std::size_t>>;

/// A message ready for insertion: elements extracted and features built.
struct PreparedMessage {
  std::string id;
  int block = 0;
  std::optional<int> label;
  ingest::ElementSet elements;
  std::vector<double> features;
};

/// Inverted index from (type, element) to the messages containing it.
class ElementIndex {
 public:
  /// Registers `node` under each of its elements and returns the number of
  /// element lookups performed.
  std::size_t add(std::size_t node, const ingest::ElementSet& elements);

  const std::vector<std::size_t>& postings(std::string_view key) const;
  std::size_t element_count() const { return postings_.size(); }

  /// Applies a node-index remap; nodes mapped to nullopt are dropped and
  /// elements left without messages are evicted.
  void remap(std::span<const std::optional<std::size_t>> old_to_new);

  /// True when the index is exactly the inverse of `per_node`.
  bool consistent_with(std::span<const ingest::ElementSet> per_node) const;

  template <class F>
  void for_each(F&& f) const {
    for (const auto& [key, nodes] : postings_) f(key, nodes);
  }

  static std::string key(char type, const std::string& element) {
    return std::string{type, ':'} + element;
  }

 private:
  friend class MessageGraph;
  std::unordered_map<std::string, std::vector<std::size_t>> postings_;
};

/// Edge set of the homogeneous projection min{sum_k W_mk W_mk^T, 1} without
/// the diagonal.
EdgeSet project_homogeneous(const ElementIndex& index);
EdgeSet project_homogeneous(std::span<const ingest::ElementSet> messages);

enum class Strategy { all, relevant, latest };

Strategy parse_strategy(std::string_view name);
std::string_view to_string(Strategy s);

struct Node {
  std::string id;
  int block = 0;
  std::optional<int> label;
  ingest::ElementSet elements;
};

struct InsertStats {
  std::size_t inserted = 0;
  std::size_t touched_elements = 0;
  std::size_t element_multiplicity = 0;
  std::size_t new_edges = 0;
};

struct RemovalResult {
  /// old index -> new index, nullopt for removed nodes.
  std::vector<std::optional<std::size_t>> old_to_new;
  std::size_t removed = 0;
};

/// Homogeneous message graph G = (X, A) with its element index.
class MessageGraph {
 public:
  explicit MessageGraph(std::size_t feature_dim = 0) : features_(0, feature_dim) {}

  std::size_t size() const { return nodes_.size(); }
  std::size_t feature_dim() const { return features_.cols(); }
  std::size_t edge_count() const { return edge_count_; }

  const Node& node(std::size_t i) const { return nodes_.at(i); }
  const std::vector<Node>& nodes() const { return nodes_; }
  const tensor::Matrix& features() const { return features_; }
  const ElementIndex& index() const { return index_; }

  std::optional<std::size_t> find(const std::string& id) const;
  std::optional<int> max_block() const;

  /// Sorted neighbor indices, self excluded.
  std::span<const std::size_t> neighbors(std::size_t node) const;
  std::size_t degree(std::size_t node) const { return neighbors(node).size(); }
  std::size_t max_degree() const;
  EdgeSet edges() const;

  /// Appends the messages and links them to every node sharing an element.
  /// Only edges incident to new nodes are created.
  InsertStats insert_block(std::span<const PreparedMessage> messages);

  /// Drops obsolete nodes per `strategy` at maintenance block `current`.
  RemovalResult remove_obsolete(Strategy strategy, int window, int current);

  /// Replaces the feature matrix (same shape). Used by tests and oracles.
  void set_features(tensor::Matrix features);

 private:
  void compact(const std::vector<bool>& keep, RemovalResult& result);

  std::vector<Node> nodes_;
  tensor::Matrix features_;
  std::vector<std::vector<std::size_t>> adjacency_;
  std::unordered_map<std::string, std::size_t> by_id_;
  ElementIndex index_;
  std::size_t edge_count_ = 0;
};

/// Writes `<prefix>.nodes.jsonl`, `<prefix>.edges.tsv` and
/// `<prefix>.features.bin` (magic "KPGF", u32 version, u64 N, u64 d,
/// little-endian f64 rows).
void write_snapshot(const MessageGraph& g, const std::filesystem::path& prefix);
tensor::Matrix read_feature_snapshot(const std::filesystem::path& path);

}  // namespace kpgnn::graph
