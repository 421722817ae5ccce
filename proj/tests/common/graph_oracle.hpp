#pragma once

#include <algorithm>
#include <random>
#include <string>
#include <vector>

#include "kpgnn/graph.hpp"

namespace oracle {

using kpgnn::graph::EdgeSet;
using kpgnn::graph::PreparedMessage;
using kpgnn::ingest::ElementSet;

// Random incidence: each message picks elements of each type with prob p.
inline std::vector<ElementSet> random_incidence(std::size_t messages, std::size_t elements,
                                                double p, std::mt19937_64& gen) {
  std::bernoulli_distribution pick(p);
  std::vector<ElementSet> out(messages);
  for (auto& e : out)
    for (std::size_t k = 0; k < elements; ++k) {
      if (!pick(gen)) continue;
      const std::string name = "x" + std::to_string(k);
      switch (k % 3) {
        case 0: e.words.push_back(name); break;
        case 1: e.entities.push_back(name); break;
        default: e.users.push_back(name); break;
      }
    }
  for (auto& e : out) {
    std::sort(e.words.begin(), e.words.end());
    std::sort(e.entities.begin(), e.entities.end());
    std::sort(e.users.begin(), e.users.end());
  }
  return out;
}

// Off-diagonal entries of min{W W^T, 1} with a dense incidence matrix W over
// typed elements.
inline EdgeSet dense_projection(const std::vector<ElementSet>& msgs) {
  std::vector<std::string> cols;
  auto col_of = [&](const std::string& key) {
    for (std::size_t c = 0; c < cols.size(); ++c)
      if (cols[c] == key) return c;
    cols.push_back(key);
    return cols.size() - 1;
  };
  std::vector<std::vector<int>> w(msgs.size());
  for (std::size_t i = 0; i < msgs.size(); ++i) {
    auto set = [&](const std::string& key) {
      const auto c = col_of(key);
      if (w[i].size() <= c) w[i].resize(c + 1, 0);
      w[i][c] = 1;
    };
    for (const auto& x : msgs[i].words) set("o:" + x);
    for (const auto& x : msgs[i].entities) set("e:" + x);
    for (const auto& x : msgs[i].users) set("u:" + x);
  }
  for (auto& row : w) row.resize(cols.size(), 0);
  EdgeSet out;
  for (std::size_t i = 0; i < msgs.size(); ++i)
    for (std::size_t j = i + 1; j < msgs.size(); ++j) {
      int dot = 0;
      for (std::size_t c = 0; c < cols.size(); ++c) dot += w[i][c] * w[j][c];
      if (std::min(dot, 1) == 1) out.emplace_back(i, j);
    }
  return out;
}

inline std::vector<PreparedMessage> prepare(const std::vector<ElementSet>& elems, int block,
                                            const std::string& prefix, std::size_t dim = 2) {
  std::vector<PreparedMessage> out;
  for (std::size_t i = 0; i < elems.size(); ++i) {
    PreparedMessage m;
    m.id = prefix + std::to_string(i);
    m.block = block;
    m.elements = elems[i];
    m.features.assign(dim, static_cast<double>(block) + 0.001 * static_cast<double>(i));
    out.push_back(std::move(m));
  }
  return out;
}

// The graph's edges mapped to node ids, compared with projecting the
// retained nodes' element sets from scratch.
inline bool matches_from_scratch(const kpgnn::graph::MessageGraph& g) {
  std::vector<ElementSet> elems;
  for (const auto& n : g.nodes()) elems.push_back(n.elements);
  if (g.edges() != dense_projection(elems)) return false;
  if (!g.index().consistent_with(elems)) return false;
  for (std::size_t i = 0; i < g.size(); ++i) {
    auto nb = g.neighbors(i);
    for (std::size_t k = 0; k < nb.size(); ++k) {
      if (nb[k] == i) return false;
      if (k > 0 && nb[k - 1] >= nb[k]) return false;
      auto back = g.neighbors(nb[k]);
      if (!std::binary_search(back.begin(), back.end(), i)) return false;
    }
  }
  return true;
}

}  // namespace oracle
