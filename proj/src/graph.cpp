#include "kpgnn/graph.hpp"

#include <algorithm>
#include <bit>
#include <fstream>
#include <iterator>
#include <limits>

#include "json.hpp"

namespace kpgnn::graph {

namespace {

constexpr std::size_t kUnmarked = std::numeric_limits<std::size_t>::max();

template <class F>
void for_each_key(const ingest::ElementSet& e, F&& f) {
  for (const auto& w : e.words) f(ElementIndex::key('o', w));
  for (const auto& x : e.entities) f(ElementIndex::key('e', x));
  for (const auto& u : e.users) f(ElementIndex::key('u', u));
}

const std::vector<std::size_t> kEmpty;

}  // namespace

std::size_t ElementIndex::add(std::size_t node, const ingest::ElementSet& elements) {
  std::size_t touched = 0;
  for_each_key(elements, [&](const std::string& k) {
    auto& post = postings_[k];
    if (post.empty() || post.back() < node) post.push_back(node);
    ++touched;
  });
  return touched;
}

const std::vector<std::size_t>& ElementIndex::postings(std::string_view key) const {
  auto it = postings_.find(std::string(key));
  return it == postings_.end() ? kEmpty : it->second;
}

void ElementIndex::remap(std::span<const std::optional<std::size_t>> old_to_new) {
  for (auto it = postings_.begin(); it != postings_.end();) {
    auto& post = it->second;
    std::size_t w = 0;
    for (std::size_t r = 0; r < post.size(); ++r) {
      if (post[r] < old_to_new.size() && old_to_new[post[r]]) post[w++] = *old_to_new[post[r]];
    }
    post.resize(w);
    it = post.empty() ? postings_.erase(it) : std::next(it);
  }
}

bool ElementIndex::consistent_with(std::span<const ingest::ElementSet> per_node) const {
  ElementIndex expected;
  for (std::size_t i = 0; i < per_node.size(); ++i) expected.add(i, per_node[i]);
  if (expected.postings_.size() != postings_.size()) return false;
  for (const auto& [k, post] : postings_) {
    auto it = expected.postings_.find(k);
    if (it == expected.postings_.end() || it->second != post) return false;
  }
  return true;
}

EdgeSet project_homogeneous(const ElementIndex& index) {
  EdgeSet edges;
  index.for_each([&](const std::string&, const std::vector<std::size_t>& post) {
    for (std::size_t a = 0; a < post.size(); ++a)
      for (std::size_t b = a + 1; b < post.size(); ++b) {
        const auto i = std::min(post[a], post[b]), j = std::max(post[a], post[b]);
        if (i != j) edges.emplace_back(i, j);
      }
  });
  std::sort(edges.begin(), edges.end());
  edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
  return edges;
}

EdgeSet project_homogeneous(std::span<const ingest::ElementSet> messages) {
  ElementIndex index;
  for (std::size_t i = 0; i < messages.size(); ++i) index.add(i, messages[i]);
  return project_homogeneous(index);
}

Strategy parse_strategy(std::string_view name) {
  if (name == "all") return Strategy::all;
  if (name == "relevant") return Strategy::relevant;
  if (name == "latest") return Strategy::latest;
  throw ConfigError("unknown maintenance strategy '" + std::string(name) + "'");
}

std::string_view to_string(Strategy s) {
  switch (s) {
    case Strategy::all: return "all";
    case Strategy::relevant: return "relevant";
    case Strategy::latest: return "latest";
  }
  return "?";
}

std::optional<std::size_t> MessageGraph::find(const std::string& id) const {
  auto it = by_id_.find(id);
  if (it == by_id_.end()) return std::nullopt;
  return it->second;
}

std::optional<int> MessageGraph::max_block() const {
  if (nodes_.empty()) return std::nullopt;
  int mx = nodes_.front().block;
  for (const auto& n : nodes_) mx = std::max(mx, n.block);
  return mx;
}

std::span<const std::size_t> MessageGraph::neighbors(std::size_t node) const {
  if (node >= nodes_.size()) {
    throw Error("node index " + std::to_string(node) + " out of range (graph has " +
                std::to_string(nodes_.size()) + " nodes)");
  }
  return adjacency_[node];
}

std::size_t MessageGraph::max_degree() const {
  std::size_t mx = 0;
  for (const auto& adj : adjacency_) mx = std::max(mx, adj.size());
  return mx;
}

EdgeSet MessageGraph::edges() const {
  EdgeSet out;
  out.reserve(edge_count_);
  for (std::size_t i = 0; i < adjacency_.size(); ++i)
    for (std::size_t j : adjacency_[i])
      if (i < j) out.emplace_back(i, j);
  return out;
}

InsertStats MessageGraph::insert_block(std::span<const PreparedMessage> messages) {
  InsertStats stats;
  if (messages.empty()) return stats;
  if (nodes_.empty() && features_.cols() == 0) {
    features_ = tensor::Matrix(0, messages.front().features.size());
  }
  const auto current_max = max_block();
  std::unordered_map<std::string, bool> incoming;
  for (const auto& m : messages) {
    if (current_max && m.block <= *current_max) {
      throw ConfigError("block " + std::to_string(m.block) +
                        " is not newer than the graph's latest block " +
                        std::to_string(*current_max));
    }
    if (by_id_.count(m.id) || !incoming.emplace(m.id, true).second) {
      throw ConfigError("duplicate message id '" + m.id + "'");
    }
    if (m.features.size() != features_.cols()) {
      throw ShapeError("feature row of '" + m.id + "' has length " +
                       std::to_string(m.features.size()) + ", expected " +
                       std::to_string(features_.cols()));
    }
  }

  const std::size_t base = nodes_.size();
  std::vector<double> data = std::move(features_.data());
  std::vector<std::size_t> mark(base + messages.size(), kUnmarked);
  for (std::size_t k = 0; k < messages.size(); ++k) {
    const auto& m = messages[k];
    const std::size_t idx = base + k;
    nodes_.push_back({m.id, m.block, m.label, m.elements});
    adjacency_.emplace_back();
    by_id_.emplace(m.id, idx);
    data.insert(data.end(), m.features.begin(), m.features.end());

    auto& own = adjacency_[idx];
    stats.element_multiplicity +=
        m.elements.words.size() + m.elements.entities.size() + m.elements.users.size();
    for_each_key(m.elements, [&](const std::string& key) {
      ++stats.touched_elements;
      auto& post = index_.postings_[key];
      for (std::size_t j : post) {
        if (mark[j] == idx) continue;
        mark[j] = idx;
        own.push_back(j);
        adjacency_[j].push_back(idx);  // idx exceeds every index already listed
        ++stats.new_edges;
      }
      post.push_back(idx);
    });
    std::sort(own.begin(), own.end());
  }
  features_ = tensor::Matrix(nodes_.size(), features_.cols(), std::move(data));
  edge_count_ += stats.new_edges;
  stats.inserted = messages.size();
  return stats;
}

RemovalResult MessageGraph::remove_obsolete(Strategy strategy, int window, int current) {
  if (window < 1) throw ConfigError("maintenance window must be >= 1");
  if (current == 0 || current % window != 0) {
    throw ConfigError("remove_obsolete called off a maintenance boundary (t=" +
                      std::to_string(current) + ", w=" + std::to_string(window) + ")");
  }
  std::vector<bool> keep(nodes_.size(), true);
  const int stale_upto = current - window;
  auto in_window = [&](int b) { return b > stale_upto && b <= current; };
  switch (strategy) {
    case Strategy::all:
      break;
    case Strategy::latest:
      for (std::size_t i = 0; i < nodes_.size(); ++i) keep[i] = nodes_[i].block == current;
      break;
    case Strategy::relevant:
      for (std::size_t i = 0; i < nodes_.size(); ++i) {
        if (nodes_[i].block > stale_upto) continue;
        keep[i] = std::any_of(adjacency_[i].begin(), adjacency_[i].end(),
                              [&](std::size_t j) { return in_window(nodes_[j].block); });
      }
      break;
  }
  RemovalResult result;
  compact(keep, result);
  return result;
}

void MessageGraph::compact(const std::vector<bool>& keep, RemovalResult& result) {
  const std::size_t n = nodes_.size();
  result.old_to_new.assign(n, std::nullopt);
  std::size_t next = 0;
  for (std::size_t i = 0; i < n; ++i)
    if (keep[i]) result.old_to_new[i] = next++;
  result.removed = n - next;
  if (result.removed == 0) return;

  std::vector<Node> nodes;
  std::vector<std::vector<std::size_t>> adjacency;
  std::vector<double> data;
  nodes.reserve(next);
  adjacency.reserve(next);
  data.reserve(next * features_.cols());
  edge_count_ = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!keep[i]) continue;
    std::vector<std::size_t> adj;
    for (std::size_t j : adjacency_[i])
      if (keep[j]) adj.push_back(*result.old_to_new[j]);
    edge_count_ += adj.size();
    adjacency.push_back(std::move(adj));
    nodes.push_back(std::move(nodes_[i]));
    auto row = features_.row(i);
    data.insert(data.end(), row.begin(), row.end());
  }
  edge_count_ /= 2;
  nodes_ = std::move(nodes);
  adjacency_ = std::move(adjacency);
  features_ = tensor::Matrix(next, features_.cols(), std::move(data));
  by_id_.clear();
  for (std::size_t i = 0; i < nodes_.size(); ++i) by_id_.emplace(nodes_[i].id, i);
  index_.remap(result.old_to_new);
}

void MessageGraph::set_features(tensor::Matrix features) {
  if (features.rows() != nodes_.size() || features.cols() != features_.cols()) {
    throw ShapeError("set_features: shape " + tensor::shape_string(features) +
                     " does not match graph " + tensor::shape_string(features_));
  }
  features_ = std::move(features);
}

namespace {

void put_le(std::ofstream& out, std::uint64_t v, int width) {
  for (int i = 0; i < width; ++i) out.put(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint64_t get_le(std::ifstream& in, int width) {
  std::uint64_t v = 0;
  for (int i = 0; i < width; ++i) {
    const int c = in.get();
    if (c == EOF) throw ParseError("feature snapshot truncated");
    v |= static_cast<std::uint64_t>(c & 0xFF) << (8 * i);
  }
  return v;
}

}  // namespace

void write_snapshot(const MessageGraph& g, const std::filesystem::path& prefix) {
  const std::string base = prefix.string();
  {
    std::ofstream nodes(base + ".nodes.jsonl");
    if (!nodes) throw Error("cannot write " + base + ".nodes.jsonl");
    for (std::size_t i = 0; i < g.size(); ++i) {
      const Node& n = g.node(i);
      nlohmann::ordered_json j;
      j["index"] = i;
      j["id"] = n.id;
      j["block"] = n.block;
      j["label"] = n.label ? nlohmann::ordered_json(*n.label) : nlohmann::ordered_json(nullptr);
      nodes << j.dump() << '\n';
    }
  }
  {
    std::ofstream edges(base + ".edges.tsv");
    if (!edges) throw Error("cannot write " + base + ".edges.tsv");
    for (const auto& [i, j] : g.edges()) edges << g.node(i).id << '\t' << g.node(j).id << '\n';
  }
  std::ofstream feat(base + ".features.bin", std::ios::binary);
  if (!feat) throw Error("cannot write " + base + ".features.bin");
  feat.write("KPGF", 4);
  put_le(feat, 1, 4);
  put_le(feat, g.features().rows(), 8);
  put_le(feat, g.features().cols(), 8);
  for (double v : g.features().data()) put_le(feat, std::bit_cast<std::uint64_t>(v), 8);
}

tensor::Matrix read_feature_snapshot(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path.string());
  char magic[4];
  if (!in.read(magic, 4) || std::string(magic, 4) != "KPGF") {
    throw ParseError("feature snapshot: bad magic");
  }
  if (get_le(in, 4) != 1) throw ParseError("feature snapshot: unsupported version");
  const auto rows = get_le(in, 8), cols = get_le(in, 8);
  std::vector<double> data(rows * cols);
  for (double& v : data) v = std::bit_cast<double>(get_le(in, 8));
  return tensor::Matrix(rows, cols, std::move(data));
}

}  // namespace kpgnn::graph
