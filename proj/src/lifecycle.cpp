#include "kpgnn/lifecycle.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <limits>
#include <set>
#include <sstream>

#include "json.hpp"

#include "kpgnn/random.hpp"

namespace kpgnn::lifecycle {

using tensor::Matrix;

std::string_view to_string(ClusterMethod m) { return m == ClusterMethod::kmeans ? "kmeans" : "dbscan"; }

ClusterMethod parse_cluster_method(std::string_view name) {
  if (name == "kmeans") return ClusterMethod::kmeans;
  if (name == "dbscan") return ClusterMethod::dbscan;
  throw ConfigError("unknown clustering method '" + std::string(name) + "'");
}

void LifecycleConfig::validate() const {
  if (window < 1) throw ConfigError("window must be >= 1");
  if (batch_size < 2) throw ConfigError("batch-size must be >= 2");
  if (!(val_fraction > 0.0 && val_fraction < 0.5)) {
    throw ConfigError("val-fraction must lie in (0, 0.5)");
  }
  if (!(margin >= 0.0)) throw ConfigError("margin must be non-negative");
  if (!(learning_rate >= 0.0)) throw ConfigError("lr must be non-negative");
  if (fanouts.size() != 1 && fanouts.size() != layers) {
    throw ConfigError("fanout needs one value or one per layer (" + std::to_string(layers) + ")");
  }
  for (std::size_t f : fanouts)
    if (f == 0) throw ConfigError("fanout must be >= 1");
  if (embedding_file.empty() && embedding_dim == 0) throw ConfigError("embedding-dim must be >= 1");
  if (cluster == ClusterMethod::dbscan && (dbscan.eps <= 0.0 || dbscan.min_pts == 0)) {
    throw ConfigError("dbscan needs eps > 0 and min-pts >= 1");
  }
  encoder_config(1).validate();
}

std::vector<std::size_t> LifecycleConfig::layer_fanouts() const {
  if (fanouts.size() == 1) return std::vector<std::size_t>(layers, fanouts.front());
  return fanouts;
}

encoder::EncoderConfig LifecycleConfig::encoder_config(std::size_t input_dim) const {
  return {input_dim, hidden, heads, layers};
}

namespace {

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::size_t to_size(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  unsigned long long x = 0;
  try {
    if (!v.empty() && v[0] == '-') throw std::invalid_argument("negative");
    x = std::stoull(v, &pos);
  } catch (const std::exception&) {
    pos = std::string::npos;
  }
  if (pos != v.size()) throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  return static_cast<std::size_t>(x);
}

double to_double(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  double x = 0.0;
  try {
    x = std::stod(v, &pos);
  } catch (const std::exception&) {
    pos = std::string::npos;
  }
  if (pos != v.size()) throw ConfigError(key + ": expected a number, got '" + v + "'");
  return x;
}

}  // namespace

std::string LifecycleConfig::to_text() const {
  std::ostringstream out;
  std::string fan;
  for (std::size_t i = 0; i < fanouts.size(); ++i) fan += (i ? "," : "") + std::to_string(fanouts[i]);
  out << "window=" << window << '\n'
      << "batch-size=" << batch_size << '\n'
      << "epochs=" << epochs << '\n'
      << "patience=" << patience << '\n'
      << "val-fraction=" << fmt_double(val_fraction) << '\n'
      << "margin=" << fmt_double(margin) << '\n'
      << "fanout=" << fan << '\n'
      << "lr=" << fmt_double(learning_rate) << '\n'
      << "dim=" << hidden << '\n'
      << "heads=" << heads << '\n'
      << "layers=" << layers << '\n'
      << "strategy=" << graph::to_string(strategy) << '\n'
      << "cluster=" << to_string(cluster) << '\n'
      << "k=" << k << '\n'
      << "eps=" << fmt_double(dbscan.eps) << '\n'
      << "min-pts=" << dbscan.min_pts << '\n'
      << "seed=" << seed << '\n'
      << "embedding-file=" << embedding_file << '\n'
      << "embedding-dim=" << embedding_dim << '\n'
      << "min-df=" << min_df << '\n'
      << "max-df=" << fmt_double(max_df_ratio) << '\n'
      << "day-scale=" << fmt_double(day_scale) << '\n';
  return out.str();
}

void LifecycleConfig::set(const std::string& key, const std::string& value) {
  if (key == "window") {
    window = static_cast<int>(to_size(key, value));
  } else if (key == "batch-size") {
    batch_size = to_size(key, value);
  } else if (key == "epochs") {
    epochs = to_size(key, value);
  } else if (key == "patience") {
    patience = to_size(key, value);
  } else if (key == "val-fraction") {
    val_fraction = to_double(key, value);
  } else if (key == "margin") {
    margin = to_double(key, value);
  } else if (key == "fanout") {
    fanouts.clear();
    std::stringstream ss(value);
    std::string part;
    while (std::getline(ss, part, ',')) fanouts.push_back(to_size(key, part));
    if (fanouts.empty()) throw ConfigError("fanout: empty list");
  } else if (key == "lr") {
    learning_rate = to_double(key, value);
  } else if (key == "dim") {
    hidden = to_size(key, value);
  } else if (key == "heads") {
    heads = to_size(key, value);
  } else if (key == "layers") {
    layers = to_size(key, value);
  } else if (key == "strategy") {
    strategy = graph::parse_strategy(value);
  } else if (key == "cluster") {
    cluster = parse_cluster_method(value);
  } else if (key == "k") {
    k = to_size(key, value);
  } else if (key == "eps") {
    dbscan.eps = to_double(key, value);
  } else if (key == "min-pts") {
    dbscan.min_pts = to_size(key, value);
  } else if (key == "seed") {
    seed = to_size(key, value);
  } else if (key == "embedding-file") {
    embedding_file = value;
  } else if (key == "embedding-dim") {
    embedding_dim = to_size(key, value);
  } else if (key == "min-df") {
    min_df = to_size(key, value);
  } else if (key == "max-df") {
    max_df_ratio = to_double(key, value);
  } else if (key == "day-scale") {
    day_scale = to_double(key, value);
  } else {
    throw ConfigError("unknown config key '" + key + "'");
  }
}

LifecycleConfig LifecycleConfig::from_text(const std::string& text) {
  LifecycleConfig c;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto first = line.find_first_not_of(" \t");
    if (first == std::string::npos || line[first] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key=value");
    }
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t");
      const auto e = s.find_last_not_of(" \t");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    c.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return c;
}

std::shared_ptr<const ingest::EmbeddingProvider> load_embeddings(const LifecycleConfig& config) {
  if (config.embedding_file.empty()) {
    return std::make_shared<const ingest::EmbeddingProvider>(config.embedding_dim);
  }
  return std::make_shared<const ingest::EmbeddingProvider>(
      ingest::EmbeddingProvider::from_file(config.embedding_file));
}

std::vector<graph::PreparedMessage> prepare_block(const ingest::MessageBlock& block,
                                                  const ingest::EmbeddingProvider& embeddings,
                                                  const LifecycleConfig& config) {
  const auto filter = ingest::build_vocab_filter(block, config.min_df, config.max_df_ratio);
  const ingest::FeatureOptions opts{config.day_scale};
  std::vector<graph::PreparedMessage> out;
  out.reserve(block.messages.size());
  for (const auto& m : block.messages) {
    out.push_back({m.id, block.index, m.label, ingest::extract_elements(m, filter),
                   ingest::build_features(m, filter, embeddings, opts)});
  }
  return out;
}

namespace {

struct BatchSeeds {
  std::uint64_t sample;
  std::uint64_t corruption;
};

losses::LossReport train_batch(LifecycleState& state, const std::vector<std::size_t>& batch,
                               const BatchSeeds& seeds) {
  const auto& cfg = state.config;
  tensor::Tape tape;
  const auto bound = encoder::bind(tape, state.params, true);
  const auto fanouts = cfg.layer_fanouts();
  const auto sg = encoder::sample_subgraph(state.graph, batch, fanouts, seeds.sample);
  const Matrix x = encoder::input_features(state.graph, sg);
  const Matrix xc =
      encoder::permute_rows(x, encoder::corruption_permutation(x.rows(), seeds.corruption));
  auto h = encoder::forward(tape, sg, x, bound);
  auto hc = encoder::forward(tape, sg, xc, bound);
  std::vector<std::optional<int>> labels;
  labels.reserve(batch.size());
  for (std::size_t n : batch) labels.push_back(state.graph.node(n).label);
  auto loss = losses::combined_loss(h, hc, labels, cfg.margin, bound.discriminator);
  tape.backward(loss.total);
  std::vector<Matrix> grads;
  grads.reserve(bound.all.size());
  for (const auto& v : bound.all) grads.push_back(tape.grad(v));
  state.adam.learning_rate = cfg.learning_rate;
  tensor::adam_step(state.params.params, grads, state.adam);
  return loss.report;
}

double validation_loss(const LifecycleState& state, const std::vector<std::size_t>& val,
                       int session) {
  const auto& cfg = state.config;
  const auto fanouts = cfg.layer_fanouts();
  const auto sample = derive_seed(cfg.seed, "val-sample", static_cast<std::uint64_t>(session));
  const auto corrupt = derive_seed(cfg.seed, "val-corruption", static_cast<std::uint64_t>(session));
  const Matrix h = encoder::encode(state.graph, val, state.params, fanouts, sample);
  const Matrix hc =
      encoder::encode_corrupted(state.graph, val, state.params, fanouts, sample, corrupt);
  std::vector<std::optional<int>> labels;
  for (std::size_t n : val) labels.push_back(state.graph.node(n).label);
  return losses::evaluate(h, hc, labels, cfg.margin, state.params.discriminator()).total;
}

}  // namespace

TrainReport train_epochs(LifecycleState& state, int session) {
  const auto& cfg = state.config;
  TrainReport report;
  if (cfg.epochs == 0 || state.graph.size() == 0) return report;
  const auto s = static_cast<std::uint64_t>(session);

  // Held-out labeled nodes, re-drawn at every training session.
  std::vector<std::size_t> labeled;
  for (std::size_t i = 0; i < state.graph.size(); ++i)
    if (state.graph.node(i).label) labeled.push_back(i);
  Rng split_rng(derive_seed(cfg.seed, "validation", s));
  split_rng.shuffle(labeled);
  const auto n_val = static_cast<std::size_t>(cfg.val_fraction * static_cast<double>(labeled.size()));
  std::vector<std::size_t> val(labeled.begin(), labeled.begin() + static_cast<std::ptrdiff_t>(n_val));
  std::sort(val.begin(), val.end());
  std::vector<bool> held(state.graph.size(), false);
  for (std::size_t v : val) held[v] = true;
  std::vector<std::size_t> train;
  for (std::size_t i = 0; i < state.graph.size(); ++i)
    if (!held[i]) train.push_back(i);

  double best = std::numeric_limits<double>::infinity();
  tensor::ParameterSet best_params = state.params.params;
  std::size_t since_best = 0;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto params_before = state.params.params;
    const auto adam_before = state.adam;
    EpochLog log;
    log.epoch = epoch;
    try {
      auto order = train;
      Rng shuffle_rng(derive_seed(cfg.seed, "shuffle", s, epoch));
      shuffle_rng.shuffle(order);
      double sum = 0.0;
      for (std::size_t start = 0, b = 0; start < order.size(); start += cfg.batch_size, ++b) {
        std::vector<std::size_t> batch(
            order.begin() + static_cast<std::ptrdiff_t>(start),
            order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), start + cfg.batch_size)));
        const BatchSeeds seeds{derive_seed(cfg.seed, "graph-sample", s, epoch, b),
                               derive_seed(cfg.seed, "corruption", s, epoch, b)};
        sum += train_batch(state, batch, seeds).total;
        ++log.batches;
      }
      log.train_loss = log.batches ? sum / static_cast<double>(log.batches) : 0.0;
      log.val_loss = val.empty() ? log.train_loss : validation_loss(state, val, session);
    } catch (const NumericError&) {
      state.params.params = params_before;
      state.adam = adam_before;
      throw;
    }
    report.epochs.push_back(log);
    if (log.val_loss < best) {
      best = log.val_loss;
      best_params = state.params.params;
      report.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      report.stopped_early = true;
      break;
    }
  }
  state.params.params = std::move(best_params);
  return report;
}

LifecycleState pretrain(const ingest::MessageBlock& block0, const LifecycleConfig& config,
                        std::shared_ptr<const ingest::EmbeddingProvider> embeddings,
                        TrainReport* report) {
  config.validate();
  bool any_label = false;
  for (const auto& m : block0.messages) any_label = any_label || m.label.has_value();
  if (!any_label) throw ConfigError("pre-training block has no labeled messages");

  LifecycleState state;
  state.config = config;
  state.embeddings = embeddings ? std::move(embeddings) : load_embeddings(config);
  const auto prepared = prepare_block(block0, *state.embeddings, config);
  const std::size_t dim = state.embeddings->dimension() + 2;
  state.graph = graph::MessageGraph(dim);
  state.graph.insert_block(prepared);
  state.params = encoder::EncoderParams::initialize(config.encoder_config(dim),
                                                    derive_seed(config.seed, "init"));
  state.adam.learning_rate = config.learning_rate;
  state.t = block0.index;
  auto r = train_epochs(state, state.t);
  if (report) *report = std::move(r);
  return state;
}

Detection detect(LifecycleState& state, const ingest::MessageBlock& block) {
  const auto& cfg = state.config;
  if (block.index <= state.t) {
    throw ConfigError("block " + std::to_string(block.index) + " is not after block " +
                      std::to_string(state.t));
  }
  state.t = block.index;
  Detection d;
  d.block = block.index;
  d.embeddings = Matrix(0, cfg.hidden);
  d.features = Matrix(0, state.graph.feature_dim());
  if (block.messages.empty()) return d;

  const auto prepared = prepare_block(block, *state.embeddings, cfg);
  state.graph.insert_block(prepared);
  for (const auto& m : block.messages) {
    d.ids.push_back(m.id);
    d.nodes.push_back(*state.graph.find(m.id));
    d.labels.push_back(m.label);
  }
  const auto t = static_cast<std::uint64_t>(block.index);
  d.embeddings = encoder::encode(state.graph, d.nodes, state.params, cfg.layer_fanouts(),
                                 derive_seed(cfg.seed, "detect-sample", t));
  d.features = tensor::gather_rows(state.graph.features(), d.nodes);

  std::set<int> classes;
  for (const auto& l : d.labels)
    if (l) classes.insert(*l);
  if (cfg.cluster == ClusterMethod::kmeans) {
    std::size_t k = cfg.k ? cfg.k : classes.size();
    if (k == 0) throw ConfigError("k=0 needs ground-truth labels to size the clustering");
    k = std::min(k, d.nodes.size());
    d.partition = cluster::kmeans(d.embeddings, k, derive_seed(cfg.seed, "kmeans", t)).partition;
  } else {
    d.partition = cluster::dbscan(d.embeddings, cfg.dbscan);
  }

  // score over the labeled messages
  cluster::Partition pred, truth;
  for (std::size_t i = 0; i < d.labels.size(); ++i) {
    if (!d.labels[i]) continue;
    pred.assignment.push_back(d.partition.assignment[i]);
    truth.assignment.push_back(*d.labels[i]);
  }
  if (!truth.assignment.empty()) d.scores = cluster::score(pred, truth);
  return d;
}

std::optional<cluster::Scores> raw_feature_baseline(const Detection& d,
                                                    const LifecycleConfig& config) {
  std::set<int> classes;
  for (const auto& l : d.labels)
    if (l) classes.insert(*l);
  if (classes.empty() || d.features.rows() == 0) return std::nullopt;
  std::size_t k = config.k ? config.k : classes.size();
  k = std::min(k, d.features.rows());
  const auto part =
      cluster::kmeans(d.features, k, derive_seed(config.seed, "kmeans", static_cast<std::uint64_t>(d.block)))
          .partition;
  cluster::Partition pred, truth;
  for (std::size_t i = 0; i < d.labels.size(); ++i) {
    if (!d.labels[i]) continue;
    pred.assignment.push_back(part.assignment[i]);
    truth.assignment.push_back(*d.labels[i]);
  }
  return cluster::score(pred, truth);
}

TrainReport maintain(LifecycleState& state) {
  const auto& cfg = state.config;
  if (state.t == 0 || state.t % cfg.window != 0) {
    throw ConfigError("maintenance runs only when t is a non-zero multiple of the window");
  }
  state.graph.remove_obsolete(cfg.strategy, cfg.window, state.t);
  if (state.graph.size() == 0) throw Error("maintenance left an empty graph");
  return train_epochs(state, state.t);
}

std::vector<BlockResult> continue_run(LifecycleState& state,
                                      const std::vector<ingest::MessageBlock>& blocks,
                                      const BlockCallback& callback) {
  std::vector<BlockResult> results;
  for (const auto& block : blocks) {
    if (block.index <= state.t) continue;
    const auto start = std::chrono::steady_clock::now();
    BlockResult r;
    r.detection = detect(state, block);
    if (state.t % state.config.window == 0) {
      maintain(state);
      r.maintained = true;
    }
    r.wall_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    state.metrics_log += metrics_row(r);
    state.partitions_log += partition_lines(r.detection);
    if (callback) callback(state, r);
    results.push_back(std::move(r));
  }
  return results;
}

LifecycleState run(const std::vector<ingest::MessageBlock>& blocks, const LifecycleConfig& config,
                   std::vector<BlockResult>* results, const BlockCallback& callback) {
  if (blocks.empty()) throw ConfigError("stream has no blocks");
  LifecycleState state = pretrain(blocks.front(), config);
  auto r = continue_run(state, blocks, callback);
  if (results) *results = std::move(r);
  return state;
}

std::string metrics_header() { return "block,nmi,ami,ari,n_messages,n_events_detected,wall_ms\n"; }

std::string metrics_row(const BlockResult& r) {
  const auto& d = r.detection;
  char buf[256];
  if (d.scores) {
    std::snprintf(buf, sizeof buf, "%d,%.6f,%.6f,%.6f,%zu,%zu,%.3f\n", d.block, d.scores->nmi,
                  d.scores->ami, d.scores->ari, d.ids.size(), d.partition.cluster_count(), r.wall_ms);
  } else {
    std::snprintf(buf, sizeof buf, "%d,,,,%zu,%zu,%.3f\n", d.block, d.ids.size(),
                  d.partition.cluster_count(), r.wall_ms);
  }
  return buf;
}

std::string partition_lines(const Detection& d) {
  std::string out;
  for (std::size_t i = 0; i < d.ids.size(); ++i) {
    nlohmann::ordered_json j;
    j["block"] = d.block;
    j["id"] = d.ids[i];
    j["event"] = d.partition.assignment[i];
    out += j.dump() + '\n';
  }
  return out;
}

Checkpoint LifecycleState::to_checkpoint() const {
  Checkpoint c;
  store_parameters(c, params.params);
  store_adam(c, adam);
  c.blobs["config"] = config.to_text();
  c.blobs["t"] = std::to_string(t);
  c.blobs["log/metrics"] = metrics_log;
  c.blobs["log/partitions"] = partitions_log;
  std::string nodes;
  for (const auto& n : graph.nodes()) {
    nlohmann::ordered_json j;
    j["id"] = n.id;
    j["block"] = n.block;
    j["label"] = n.label ? nlohmann::ordered_json(*n.label) : nlohmann::ordered_json(nullptr);
    j["words"] = n.elements.words;
    j["entities"] = n.elements.entities;
    j["users"] = n.elements.users;
    nodes += j.dump() + '\n';
  }
  c.blobs["graph/nodes"] = nodes;
  c.tensors["graph/X"] = graph.features();
  return c;
}

LifecycleState LifecycleState::from_checkpoint(const Checkpoint& ckpt) {
  LifecycleState s;
  s.config = LifecycleConfig::from_text(ckpt.blob("config"));
  s.config.validate();
  s.embeddings = load_embeddings(s.config);
  const Matrix& x = ckpt.tensor("graph/X");
  s.graph = graph::MessageGraph(x.cols());
  s.params.config = s.config.encoder_config(x.cols());
  s.params.params = load_parameters(ckpt);
  s.adam = load_adam(ckpt);
  try {
    s.t = std::stoi(ckpt.blob("t"));
  } catch (const std::exception&) {
    throw ParseError("checkpoint block counter is not an integer");
  }
  s.metrics_log = ckpt.blob("log/metrics");
  s.partitions_log = ckpt.blob("log/partitions");

  // Rebuild block by block; node order is block-sorted, so the replay
  // reproduces indices, adjacency and the element index.
  std::istringstream in(ckpt.blob("graph/nodes"));
  std::string line;
  std::vector<graph::PreparedMessage> group;
  std::size_t row = 0;
  auto flush = [&] {
    if (!group.empty()) s.graph.insert_block(group);
    group.clear();
  };
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("checkpoint node record: ") + e.what());
    }
    if (row >= x.rows()) throw ParseError("checkpoint has more nodes than feature rows");
    graph::PreparedMessage m;
    m.id = j.at("id").get<std::string>();
    m.block = j.at("block").get<int>();
    if (!j.at("label").is_null()) m.label = j.at("label").get<int>();
    m.elements.words = j.at("words").get<std::vector<std::string>>();
    m.elements.entities = j.at("entities").get<std::vector<std::string>>();
    m.elements.users = j.at("users").get<std::vector<std::string>>();
    const auto r = x.row(row++);
    m.features.assign(r.begin(), r.end());
    if (!group.empty() && group.back().block != m.block) flush();
    group.push_back(std::move(m));
  }
  flush();
  if (row != x.rows()) throw ParseError("checkpoint feature rows do not match its nodes");
  return s;
}

}  // namespace kpgnn::lifecycle
