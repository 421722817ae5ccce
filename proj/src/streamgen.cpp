#include "kpgnn/streamgen.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <ostream>
#include <string>

#include "kpgnn/random.hpp"

namespace kpgnn::streamgen {

void GeneratorConfig::validate() const {
  if (events == 0 || initial_events == 0 || event_vocab == 0 || background_vocab == 0 ||
      users_per_event == 0 || min_words == 0 || lifetime == 0) {
    throw ConfigError("generator counts must be >= 1");
  }
  if (initial_events > events) throw ConfigError("initial_events exceeds events");
  if (schedule.empty()) throw ConfigError("generator needs at least one block");
  for (std::size_t s : schedule)
    if (s == 0) throw ConfigError("block sizes must be >= 1");
  if (max_words < min_words) throw ConfigError("max_words < min_words");
  for (double p : {background_mix, crossover, entity_rate})
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("probabilities must lie in [0, 1]");
  if (!(zipf_exponent >= 0.0) || !(background_exponent >= 0.0)) throw ConfigError("zipf exponent must be non-negative");
}

namespace {

std::vector<double> zipf_cumulative(std::size_t n, double exponent) {
  std::vector<double> c(n);
  double total = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    total += 1.0 / std::pow(static_cast<double>(r + 1), exponent);
    c[r] = total;
  }
  return c;
}

// Pronounceable pseudo-words so tokens look like text and never collide
// across vocabularies.
std::string pseudo_word(const char* prefix, std::size_t a, std::size_t b) {
  static const char* syllables[] = {"ka", "lo", "mi", "ne", "ru", "sa", "ti", "vo",
                                    "be", "da", "fu", "go", "hi", "ja", "pe", "zu"};
  std::string w = prefix;
  std::size_t x = a * 1000 + b;
  do {
    w += syllables[x % 16];
    x /= 16;
  } while (x > 0);
  return w;
}

}  // namespace

std::vector<ingest::RawMessage> generate_stream(const GeneratorConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(derive_seed(seed, "streamgen"));
  const std::size_t blocks = config.schedule.size();

  std::vector<std::size_t> start(config.events, 0);
  for (std::size_t e = config.initial_events; e < config.events; ++e) {
    const std::size_t later = std::max<std::size_t>(blocks, 2) - 1;
    start[e] = 1 + (e - config.initial_events) % later;
  }

  const auto event_cdf = zipf_cumulative(config.event_vocab, config.zipf_exponent);
  const auto background_cdf = zipf_cumulative(config.background_vocab, config.background_exponent);
  const auto entity_cdf = zipf_cumulative(config.entities_per_event, config.zipf_exponent);

  std::vector<ingest::RawMessage> out;
  std::map<std::size_t, int> label_of;
  auto when = ingest::Timestamp::from_civil(2012, 10, 11, 0, 0, 0);
  std::size_t counter = 0;

  for (std::size_t b = 0; b < blocks; ++b) {
    std::vector<std::size_t> active;
    for (std::size_t e = 0; e < config.events; ++e)
      if (start[e] <= b && b < start[e] + config.lifetime) active.push_back(e);
    if (active.empty()) {
      // keep the most recently started event alive
      std::size_t latest = 0;
      for (std::size_t e = 0; e < config.events; ++e)
        if (start[e] <= b && start[e] >= start[latest]) latest = e;
      active.push_back(latest);
    }

    for (std::size_t i = 0; i < config.schedule[b]; ++i) {
      const std::size_t e = active[rng.uniform_index(active.size())];
      ingest::RawMessage m;
      m.id = "msg" + std::to_string(counter++);
      m.block = static_cast<int>(b);
      auto [it, fresh] = label_of.emplace(e, static_cast<int>(label_of.size()));
      m.label = it->second;

      const std::size_t words =
          config.min_words + rng.uniform_index(config.max_words - config.min_words + 1);
      for (std::size_t k = 0; k < words; ++k) {
        if (k) m.text += ' ';
        if (rng.uniform01() < config.background_mix) {
          m.text += pseudo_word("", 0, rng.categorical(background_cdf));
        } else {
          m.text += pseudo_word("x", e + 1, rng.categorical(event_cdf));
        }
      }

      std::size_t pool = e;
      if (config.events > 1 && rng.uniform01() < config.crossover) {
        pool = rng.uniform_index(config.events - 1);
        if (pool >= e) ++pool;
      }
      m.users.push_back("user" + std::to_string(pool) + "_" +
                        std::to_string(rng.uniform_index(config.users_per_event)));

      m.entities.emplace();
      if (config.entities_per_event > 0 && rng.uniform01() < config.entity_rate) {
        m.entities->push_back("Place " + std::to_string(e) + "-" +
                              std::to_string(rng.categorical(entity_cdf)));
      }

      when.micros += static_cast<std::int64_t>(1 + rng.uniform_index(120)) * 1000000;
      m.timestamp = when;
      out.push_back(std::move(m));
    }
  }
  return out;
}

void write_stream(std::ostream& out, const std::vector<ingest::RawMessage>& messages) {
  for (const auto& m : messages) out << ingest::to_record(m) << '\n';
}

}  // namespace kpgnn::streamgen
