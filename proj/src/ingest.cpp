#include "kpgnn/ingest.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <map>
#include <sstream>

#include "json.hpp"
#include "kpgnn/random.hpp"

namespace kpgnn::ingest {

namespace {

constexpr std::int64_t kMicrosPerSecond = 1'000'000;
constexpr std::int64_t kMicrosPerDay = 86'400 * kMicrosPerSecond;
// 1899-12-30 is 25569 days before 1970-01-01.
constexpr std::int64_t kOleEpochMicros = -25'569 * kMicrosPerDay;

bool is_token_char(unsigned char c) { return std::isalnum(c) != 0 || c >= 0x80; }

char lower(char c) { return (c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : c; }

int parse_digits(std::string_view s, std::size_t pos, std::size_t n) {
  if (pos + n > s.size()) throw ParseError("timestamp truncated: " + std::string(s));
  int v = 0;
  for (std::size_t i = pos; i < pos + n; ++i) {
    if (s[i] < '0' || s[i] > '9') throw ParseError("bad timestamp: " + std::string(s));
    v = v * 10 + (s[i] - '0');
  }
  return v;
}

void expect(std::string_view s, std::size_t pos, char c) {
  if (pos >= s.size() || (s[pos] != c && !(c == 'T' && (s[pos] == 't' || s[pos] == ' ')))) {
    throw ParseError("bad timestamp: " + std::string(s));
  }
}

}  // namespace

Timestamp Timestamp::from_civil(int year, unsigned month, unsigned day, int hour, int minute,
                                int second, std::int64_t micro) {
  using namespace std::chrono;
  const year_month_day ymd{std::chrono::year{year}, std::chrono::month{month},
                           std::chrono::day{day}};
  if (!ymd.ok()) throw ParseError("invalid calendar date");
  const std::int64_t days = sys_days{ymd}.time_since_epoch().count();
  return {days * kMicrosPerDay +
          (static_cast<std::int64_t>(hour) * 3600 + minute * 60 + second) * kMicrosPerSecond +
          micro};
}

Timestamp parse_rfc3339(std::string_view s) {
  const int y = parse_digits(s, 0, 4);
  expect(s, 4, '-');
  const int mo = parse_digits(s, 5, 2);
  expect(s, 7, '-');
  const int d = parse_digits(s, 8, 2);
  expect(s, 10, 'T');
  const int h = parse_digits(s, 11, 2);
  expect(s, 13, ':');
  const int mi = parse_digits(s, 14, 2);
  expect(s, 16, ':');
  const int se = parse_digits(s, 17, 2);
  if (h > 23 || mi > 59 || se > 60) throw ParseError("bad timestamp: " + std::string(s));
  std::size_t pos = 19;
  std::int64_t micro = 0;
  if (pos < s.size() && s[pos] == '.') {
    ++pos;
    std::int64_t scale = 100'000;
    const std::size_t start = pos;
    while (pos < s.size() && s[pos] >= '0' && s[pos] <= '9') {
      micro += (s[pos] - '0') * scale;
      scale /= 10;
      ++pos;
    }
    if (pos == start) throw ParseError("bad timestamp fraction: " + std::string(s));
  }
  std::int64_t offset = 0;
  if (pos < s.size() && (s[pos] == 'Z' || s[pos] == 'z')) {
    ++pos;
  } else if (pos < s.size() && (s[pos] == '+' || s[pos] == '-')) {
    const int sign = s[pos] == '+' ? 1 : -1;
    const int oh = parse_digits(s, pos + 1, 2);
    expect(s, pos + 3, ':');
    const int om = parse_digits(s, pos + 4, 2);
    offset = sign * (static_cast<std::int64_t>(oh) * 3600 + om * 60) * kMicrosPerSecond;
    pos += 6;
  } else {
    throw ParseError("timestamp lacks a UTC offset: " + std::string(s));
  }
  if (pos != s.size()) throw ParseError("trailing characters in timestamp: " + std::string(s));
  Timestamp t = Timestamp::from_civil(y, static_cast<unsigned>(mo), static_cast<unsigned>(d), h,
                                      mi, se, micro);
  t.micros -= offset;
  return t;
}

std::string format_rfc3339(Timestamp t) {
  using namespace std::chrono;
  std::int64_t days = t.micros / kMicrosPerDay;
  std::int64_t rem = t.micros % kMicrosPerDay;
  if (rem < 0) {
    rem += kMicrosPerDay;
    --days;
  }
  const year_month_day ymd{sys_days{std::chrono::days{days}}};
  const std::int64_t secs = rem / kMicrosPerSecond;
  const std::int64_t micro = rem % kMicrosPerSecond;
  char buf[64];
  int n = std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02lld:%02lld:%02lld",
                        static_cast<int>(ymd.year()), static_cast<unsigned>(ymd.month()),
                        static_cast<unsigned>(ymd.day()), static_cast<long long>(secs / 3600),
                        static_cast<long long>((secs / 60) % 60),
                        static_cast<long long>(secs % 60));
  std::string out(buf, static_cast<std::size_t>(n));
  if (micro != 0) {
    std::snprintf(buf, sizeof buf, ".%06lld", static_cast<long long>(micro));
    out += buf;
  }
  return out + "Z";
}

OleDate encode_timestamp(Timestamp t) {
  const std::int64_t elapsed = t.micros - kOleEpochMicros;
  if (elapsed < 0) throw ConfigError("timestamp precedes the OLE epoch 1899-12-30");
  return {static_cast<double>(elapsed / kMicrosPerDay),
          static_cast<double>(elapsed % kMicrosPerDay) / static_cast<double>(kMicrosPerDay)};
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::size_t i = 0;
  while (i < text.size()) {
    if (!is_token_char(static_cast<unsigned char>(text[i]))) {
      ++i;
      continue;
    }
    const std::size_t start = i;
    while (i < text.size() && is_token_char(static_cast<unsigned char>(text[i]))) ++i;
    if (start > 0 && text[start - 1] == '@') continue;
    std::string tok(text.substr(start, i - start));
    std::transform(tok.begin(), tok.end(), tok.begin(), lower);
    tokens.push_back(std::move(tok));
  }
  return tokens;
}

VocabFilter build_vocab_filter(const MessageBlock& block, std::size_t min_df,
                               double max_df_ratio) {
  std::map<std::string, std::size_t> df;
  for (const auto& m : block.messages) {
    auto tokens = tokenize(m.text);
    std::sort(tokens.begin(), tokens.end());
    tokens.erase(std::unique(tokens.begin(), tokens.end()), tokens.end());
    for (auto& t : tokens) ++df[t];
  }
  const double max_df = max_df_ratio * static_cast<double>(block.messages.size());
  std::set<std::string> kept;
  for (const auto& [word, count] : df) {
    if (count >= min_df && static_cast<double>(count) <= max_df) kept.insert(word);
  }
  return VocabFilter(std::move(kept), min_df, max_df_ratio);
}

std::vector<std::string> heuristic_entities(std::string_view text) {
  struct Item {
    std::string token;
    bool sentence_start;
    bool joined_to_previous;  // only whitespace since the previous token
  };
  std::vector<Item> items;
  bool sentence_start = true;
  bool joined = false;
  std::size_t i = 0;
  while (i < text.size()) {
    const unsigned char c = static_cast<unsigned char>(text[i]);
    if (!is_token_char(c)) {
      if (c == '.' || c == '!' || c == '?') sentence_start = true;
      if (!std::isspace(c)) joined = false;
      ++i;
      continue;
    }
    const std::size_t start = i;
    while (i < text.size() && is_token_char(static_cast<unsigned char>(text[i]))) ++i;
    if (start > 0 && text[start - 1] == '@') {
      joined = false;
      sentence_start = false;
      continue;
    }
    items.push_back({std::string(text.substr(start, i - start)), sentence_start, joined});
    sentence_start = false;
    joined = true;
  }

  std::vector<std::string> entities;
  std::size_t k = 0;
  while (k < items.size()) {
    if (!(items[k].token[0] >= 'A' && items[k].token[0] <= 'Z')) {
      ++k;
      continue;
    }
    std::size_t e = k + 1;
    while (e < items.size() && items[e].joined_to_previous && !items[e].sentence_start &&
           items[e].token[0] >= 'A' && items[e].token[0] <= 'Z') {
      ++e;
    }
    const bool single = e - k == 1;
    if (!(single && items[k].sentence_start)) {
      std::string name = items[k].token;
      for (std::size_t j = k + 1; j < e; ++j) name += " " + items[j].token;
      entities.push_back(std::move(name));
    }
    k = e;
  }
  std::sort(entities.begin(), entities.end());
  entities.erase(std::unique(entities.begin(), entities.end()), entities.end());
  return entities;
}

namespace {

std::vector<std::string> sorted_unique(std::vector<std::string> v) {
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
  return v;
}

}  // namespace

ElementSet extract_elements(const RawMessage& m, const VocabFilter& filter) {
  ElementSet out;
  for (auto& t : tokenize(m.text)) {
    if (filter.keeps(t)) out.words.push_back(std::move(t));
  }
  out.words = sorted_unique(std::move(out.words));
  out.entities = m.entities ? sorted_unique(*m.entities) : heuristic_entities(m.text);
  out.users = sorted_unique(m.users);
  return out;
}

EmbeddingProvider EmbeddingProvider::from_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open embedding file " + path.string());
  return from_stream(in);
}

EmbeddingProvider EmbeddingProvider::from_stream(std::istream& in) {
  EmbeddingProvider p(0);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ls(line);
    std::string word;
    if (!(ls >> word)) continue;
    std::vector<double> vec;
    for (double v; ls >> v;) vec.push_back(v);
    if (!ls.eof()) throw ParseError("embedding file line " + std::to_string(lineno) + ": bad number");
    if (p.dimension_ == 0) p.dimension_ = vec.size();
    if (vec.empty() || vec.size() != p.dimension_) {
      throw ParseError("embedding file line " + std::to_string(lineno) + ": expected " +
                       std::to_string(p.dimension_) + " values");
    }
    p.table_.insert_or_assign(std::move(word), std::move(vec));
  }
  if (p.dimension_ == 0) throw ParseError("embedding file holds no vectors");
  return p;
}

std::vector<double> EmbeddingProvider::lookup(const std::string& word) const {
  auto it = table_.find(word);
  return it != table_.end() ? it->second : fallback(word);
}

std::vector<double> EmbeddingProvider::fallback(const std::string& word) const {
  Rng rng(derive_seed(0x6b70676e6e ^ dimension_, word));
  std::vector<double> v(dimension_);
  double norm = 0.0;
  do {
    norm = 0.0;
    for (double& x : v) {
      x = rng.normal();
      norm += x * x;
    }
  } while (norm == 0.0 && dimension_ > 0);
  norm = std::sqrt(norm);
  for (double& x : v) x /= norm;
  return v;
}

std::vector<double> build_features(const RawMessage& m, const VocabFilter& filter,
                                   const EmbeddingProvider& provider,
                                   const FeatureOptions& options) {
  const std::size_t dw = provider.dimension();
  std::vector<double> out(dw + 2, 0.0);
  std::vector<std::string> kept;
  for (auto& t : tokenize(m.text)) {
    if (filter.keeps(t)) kept.push_back(std::move(t));
  }
  // Canonical order so the sum is independent of token order.
  std::sort(kept.begin(), kept.end());
  std::size_t i = 0;
  while (i < kept.size()) {
    std::size_t j = i;
    while (j < kept.size() && kept[j] == kept[i]) ++j;
    const auto vec = provider.lookup(kept[i]);
    const double mult = static_cast<double>(j - i);
    for (std::size_t k = 0; k < dw; ++k) out[k] += mult * vec[k];
    i = j;
  }
  if (!kept.empty()) {
    const double n = static_cast<double>(kept.size());
    for (std::size_t k = 0; k < dw; ++k) out[k] /= n;
  }
  const OleDate ole = encode_timestamp(m.timestamp);
  out[dw] = ole.days * options.day_scale;
  out[dw + 1] = ole.fraction;
  return out;
}

namespace {

std::vector<std::string> string_array(const nlohmann::json& j, const char* field) {
  if (!j.is_array()) throw ParseError(std::string(field) + " must be an array");
  std::vector<std::string> out;
  for (const auto& e : j) {
    if (!e.is_string()) throw ParseError(std::string(field) + " entries must be strings");
    out.push_back(e.get<std::string>());
  }
  return out;
}

int non_negative_int(const nlohmann::json& j, const char* field) {
  if (!j.is_number_integer() || j.get<long long>() < 0 || j.get<long long>() > INT32_MAX) {
    throw ParseError(std::string(field) + " must be a non-negative integer");
  }
  return j.get<int>();
}

}  // namespace

RawMessage parse_record(std::string_view line) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("invalid JSON record: ") + e.what());
  }
  if (!j.is_object()) throw ParseError("record must be a JSON object");
  RawMessage m;
  auto need = [&](const char* key) -> const nlohmann::json& {
    auto it = j.find(key);
    if (it == j.end()) throw ParseError(std::string("record lacks '") + key + "'");
    return *it;
  };
  const auto& id = need("id");
  const auto& text = need("text");
  const auto& ts = need("timestamp");
  if (!id.is_string() || id.get<std::string>().empty()) throw ParseError("id must be a non-empty string");
  if (!text.is_string()) throw ParseError("text must be a string");
  if (!ts.is_string()) throw ParseError("timestamp must be a string");
  m.id = id.get<std::string>();
  m.text = text.get<std::string>();
  m.users = string_array(need("users"), "users");
  if (m.users.empty()) throw ParseError("users must be non-empty");
  m.timestamp = parse_rfc3339(ts.get<std::string>());
  if (auto it = j.find("entities"); it != j.end() && !it->is_null()) {
    m.entities = string_array(*it, "entities");
  }
  if (auto it = j.find("label"); it != j.end() && !it->is_null()) {
    m.label = non_negative_int(*it, "label");
  }
  if (auto it = j.find("block"); it != j.end() && !it->is_null()) {
    m.block = non_negative_int(*it, "block");
  }
  return m;
}

std::string to_record(const RawMessage& m) {
  nlohmann::ordered_json j;
  j["id"] = m.id;
  j["text"] = m.text;
  j["users"] = m.users;
  j["timestamp"] = format_rfc3339(m.timestamp);
  if (m.entities) j["entities"] = *m.entities;
  if (m.label) j["label"] = *m.label;
  if (m.block) j["block"] = *m.block;
  return j.dump();
}

ParseResult parse_stream(std::istream& in, const ParseOptions& options) {
  ParseResult result;
  std::set<std::string> seen_ids;
  std::optional<Timestamp> latest;
  const auto tolerance = static_cast<std::int64_t>(options.tolerance_seconds * kMicrosPerSecond);
  std::size_t schedule_pos = 0;
  std::size_t in_current = 0;

  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    RawMessage m;
    try {
      m = parse_record(line);
    } catch (const ParseError&) {
      ++result.malformed;
      continue;
    }
    if (options.rule == BlockRule::by_field && !m.block) {
      ++result.malformed;
      continue;
    }
    if (!seen_ids.insert(m.id).second) {
      throw ParseError("line " + std::to_string(lineno) + ": duplicate message id '" + m.id + "'");
    }
    if (latest && m.timestamp.micros < latest->micros - tolerance) {
      throw ParseError("line " + std::to_string(lineno) +
                       ": timestamp out of order beyond tolerance");
    }
    if (!latest || m.timestamp > *latest) latest = m.timestamp;

    int index = 0;
    if (options.rule == BlockRule::by_field) {
      index = *m.block;
      if (!result.blocks.empty() && index < result.blocks.back().index) {
        throw ParseError("line " + std::to_string(lineno) + ": block ids must not decrease");
      }
    } else {
      if (result.blocks.empty()) {
        index = 0;
      } else if (schedule_pos < options.schedule.size() &&
                 in_current >= options.schedule[schedule_pos]) {
        index = result.blocks.back().index + 1;
        ++schedule_pos;
        in_current = 0;
      } else {
        index = result.blocks.back().index;
      }
    }
    if (result.blocks.empty() || result.blocks.back().index != index) {
      result.blocks.push_back({index, {}});
    }
    result.blocks.back().messages.push_back(std::move(m));
    ++in_current;
  }
  return result;
}

ParseResult parse_stream_file(const std::filesystem::path& path, const ParseOptions& options) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read stream " + path.string());
  return parse_stream(in, options);
}

}  // namespace kpgnn::ingest
