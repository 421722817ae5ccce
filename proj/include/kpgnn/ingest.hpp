#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "kpgnn/common.hpp"

namespace kpgnn::ingest {

/// UTC instant with microsecond resolution, counted from the Unix epoch.
struct Timestamp {
  std::int64_t micros = 0;

  static Timestamp from_civil(int year, unsigned month, unsigned day, int hour = 0,
                              int minute = 0, int second = 0, std::int64_t micro = 0);
  auto operator<=>(const Timestamp&) const = default;
};

/// Parses "YYYY-MM-DDTHH:MM:SS[.frac](Z|+hh:mm|-hh:mm)".
Timestamp parse_rfc3339(std::string_view text);
/// Formats as "YYYY-MM-DDTHH:MM:SS[.ffffff]Z".
std::string format_rfc3339(Timestamp t);

struct RawMessage {
  std::string id;
  std::string text;
  std::vector<std::string> users;
  Timestamp timestamp;
  std::optional<std::vector<std::string>> entities;
  std::optional<int> label;
  std::optional<int> block;
};

struct MessageBlock {
  int index = 0;
  std::vector<RawMessage> messages;
};

/// Integral and fractional OLE-date parts: days since 1899-12-30T00:00:00Z.
struct OleDate {
  double days = 0.0;
  double fraction = 0.0;
};

OleDate encode_timestamp(Timestamp t);

/// Lowercased tokens split on non-alphanumeric characters. Tokens written as
/// "@name" are user mentions and are dropped; "#tag" contributes "tag".
std::vector<std::string> tokenize(std::string_view text);

class VocabFilter {
 public:
  VocabFilter() = default;
  VocabFilter(std::set<std::string> kept, std::size_t min_df, double max_df_ratio)
      : kept_(std::move(kept)), min_df_(min_df), max_df_ratio_(max_df_ratio) {}

  bool keeps(const std::string& word) const { return kept_.count(word) != 0; }
  const std::set<std::string>& kept() const { return kept_; }
  std::size_t min_df() const { return min_df_; }
  double max_df_ratio() const { return max_df_ratio_; }

 private:
  std::set<std::string> kept_;
  std::size_t min_df_ = 2;
  double max_df_ratio_ = 0.5;
};

/// Keeps words whose message frequency df satisfies
/// min_df <= df <= max_df_ratio * block size.
VocabFilter build_vocab_filter(const MessageBlock& block, std::size_t min_df = 2,
                               double max_df_ratio = 0.5);

/// Deduplicated, sorted graph elements of one message.
struct ElementSet {
  std::vector<std::string> words;
  std::vector<std::string> entities;
  std::vector<std::string> users;
  bool operator==(const ElementSet&) const = default;
};

/// Capitalized-run heuristic used when a message carries no entity list.
std::vector<std::string> heuristic_entities(std::string_view text);

ElementSet extract_elements(const RawMessage& m, const VocabFilter& filter);

/// Word vectors from a text file, with a seeded unit-vector fallback for
/// words the file does not cover.
class EmbeddingProvider {
 public:
  explicit EmbeddingProvider(std::size_t dimension = 300) : dimension_(dimension) {}

  /// One line per word: the word followed by `dimension` floats.
  static EmbeddingProvider from_file(const std::filesystem::path& path);
  static EmbeddingProvider from_stream(std::istream& in);

  std::size_t dimension() const { return dimension_; }
  std::size_t vocabulary_size() const { return table_.size(); }
  std::vector<double> lookup(const std::string& word) const;
  /// Unit-norm vector seeded by the word string.
  std::vector<double> fallback(const std::string& word) const;

 private:
  std::size_t dimension_;
  std::unordered_map<std::string, std::vector<double>> table_;
};

struct FeatureOptions {
  /// Multiplier applied to the integral OLE-day column. 1.0 stores raw days.
  double day_scale = 1e-5;
};

/// [mean word vector over kept tokens | days * day_scale | day fraction].
std::vector<double> build_features(const RawMessage& m, const VocabFilter& filter,
                                   const EmbeddingProvider& provider,
                                   const FeatureOptions& options = {});

enum class BlockRule { by_field, by_schedule };

struct ParseOptions {
  BlockRule rule = BlockRule::by_field;
  /// Block sizes for BlockRule::by_schedule; messages beyond the schedule
  /// form one final block.
  std::vector<std::size_t> schedule;
  /// A timestamp may trail the running maximum by at most this much.
  double tolerance_seconds = 60.0;
};

struct ParseResult {
  std::vector<MessageBlock> blocks;
  std::size_t malformed = 0;
};

RawMessage parse_record(std::string_view line);
std::string to_record(const RawMessage& m);

ParseResult parse_stream(std::istream& in, const ParseOptions& options = {});
ParseResult parse_stream_file(const std::filesystem::path& path, const ParseOptions& options = {});

}  // namespace kpgnn::ingest
