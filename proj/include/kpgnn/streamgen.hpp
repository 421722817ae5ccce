#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <vector>

#include "kpgnn/ingest.hpp"

namespace kpgnn::streamgen {

struct GeneratorConfig {
  std::size_t events = 8;
  /// Events live in block 0; the rest start one per block from block 1.
  std::size_t initial_events = 5;
  std::size_t event_vocab = 60;
  std::size_t background_vocab = 1500;
  /// Chance that a token comes from the shared background vocabulary.
  double background_mix = 0.65;
  std::size_t users_per_event = 12;
  /// Chance that a message's user is drawn from another event's pool.
  double crossover = 0.35;
  std::size_t entities_per_event = 4;
  /// Chance that a message names one of its event's entities.
  double entity_rate = 0.6;
  /// Messages per block; block 0 is the pre-training block.
  std::vector<std::size_t> schedule{200, 200, 200, 200, 200, 200, 200};
  std::size_t min_words = 6;
  std::size_t max_words = 12;
  /// Blocks an event stays active, counted from its first block.
  std::size_t lifetime = 7;
  double zipf_exponent = 1.1;
  /// Exponent for the background vocabulary; 0 draws it uniformly.
  double background_exponent = 0.5;

  void validate() const;
};

/// Messages in stream order with block and label fields set. Labels are
/// contiguous from 0 in order of first appearance.
std::vector<ingest::RawMessage> generate_stream(const GeneratorConfig& config, std::uint64_t seed);

void write_stream(std::ostream& out, const std::vector<ingest::RawMessage>& messages);

}  // namespace kpgnn::streamgen
