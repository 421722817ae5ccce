#include <set>
#include <sstream>

#include "doctest.h"
#include "kpgnn/graph.hpp"
#include "kpgnn/streamgen.hpp"

using namespace kpgnn;
using namespace kpgnn::streamgen;

namespace {

std::string dump(const std::vector<ingest::RawMessage>& m) {
  std::ostringstream ss;
  write_stream(ss, m);
  return ss.str();
}

}  // namespace

TEST_CASE("single event single block") {
  GeneratorConfig cfg;
  cfg.events = 1;
  cfg.initial_events = 1;
  cfg.schedule = {50};
  auto m = generate_stream(cfg, 3);
  REQUIRE(m.size() == 50);
  for (const auto& x : m) {
    CHECK(x.label == 0);
    CHECK(x.block == 0);
  }
}

TEST_CASE("generation is deterministic per seed") {
  GeneratorConfig cfg;
  CHECK(dump(generate_stream(cfg, 42)) == dump(generate_stream(cfg, 42)));
  CHECK(dump(generate_stream(cfg, 42)) != dump(generate_stream(cfg, 43)));
}

TEST_CASE("records are valid and ordered") {
  GeneratorConfig cfg;
  auto m = generate_stream(cfg, 1);
  std::istringstream in(dump(m));
  auto parsed = ingest::parse_stream(in);
  CHECK(parsed.malformed == 0);
  CHECK(parsed.blocks.size() == cfg.schedule.size());
  for (std::size_t i = 1; i < m.size(); ++i) CHECK(m[i - 1].timestamp < m[i].timestamp);
  for (const auto& x : m) {
    const auto words = ingest::tokenize(x.text);
    CHECK(words.size() >= cfg.min_words);
    CHECK(words.size() <= cfg.max_words);
    CHECK(x.users.size() == 1);
  }
}

TEST_CASE("labels are contiguous and new events arrive later") {
  GeneratorConfig cfg;
  cfg.events = 5;
  cfg.initial_events = 3;
  cfg.schedule.assign(6, 150);
  auto m = generate_stream(cfg, 8);
  std::set<int> all;
  std::vector<std::set<int>> per_block(6);
  for (const auto& x : m) {
    all.insert(*x.label);
    per_block[*x.block].insert(*x.label);
  }
  CHECK(*all.begin() == 0);
  CHECK(*all.rbegin() == static_cast<int>(all.size()) - 1);
  CHECK(all.size() == 5);
  CHECK(per_block[0].size() == 3);
  for (std::size_t b = 3; b < 6; ++b) {
    bool unseen = false;
    for (int l : per_block[b]) unseen = unseen || !per_block[0].count(l);
    CHECK(unseen);
  }
}

TEST_CASE("without crossover events link only through background words") {
  GeneratorConfig cfg;
  cfg.crossover = 0.0;
  cfg.schedule = {300};
  cfg.events = 5;
  auto m = generate_stream(cfg, 11);
  std::set<std::string> every;
  for (const auto& x : m)
    for (auto& t : ingest::tokenize(x.text)) every.insert(t);
  ingest::VocabFilter keep_all(every, 1, 1.0);
  std::vector<graph::PreparedMessage> prepared;
  for (const auto& x : m)
    prepared.push_back({x.id, 0, x.label, ingest::extract_elements(x, keep_all), {0.0}});
  graph::MessageGraph g;
  g.insert_block(prepared);
  std::size_t inter = 0;
  for (const auto& [i, j] : g.edges()) {
    const auto& a = g.node(i);
    const auto& b = g.node(j);
    if (a.label == b.label) continue;
    ++inter;
    std::vector<std::string> shared;
    std::set_intersection(a.elements.words.begin(), a.elements.words.end(),
                          b.elements.words.begin(), b.elements.words.end(), std::back_inserter(shared));
    CHECK(!shared.empty());
    for (const auto& w : shared) CHECK(w[0] != 'x');
    CHECK(a.elements.users != b.elements.users);
    if (!a.elements.entities.empty() && !b.elements.entities.empty())
      CHECK(a.elements.entities != b.elements.entities);
  }
  CHECK(inter > 0);
}

TEST_CASE("generator validation") {
  GeneratorConfig cfg;
  cfg.crossover = 1.5;
  CHECK_THROWS_AS(generate_stream(cfg, 1), ConfigError);
  cfg = {};
  cfg.initial_events = 9;
  CHECK_THROWS_AS(generate_stream(cfg, 1), ConfigError);
  cfg = {};
  cfg.schedule = {10, 0};
  CHECK_THROWS_AS(generate_stream(cfg, 1), ConfigError);
  cfg = {};
  cfg.max_words = 2;
  CHECK_THROWS_AS(generate_stream(cfg, 1), ConfigError);
}
