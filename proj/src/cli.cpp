#include "kpgnn/cli.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "CLI11.hpp"
#include "json.hpp"

#include "kpgnn/lifecycle.hpp"
#include "kpgnn/streamgen.hpp"

namespace kpgnn::cli {

namespace fs = std::filesystem;

namespace {

const char* const kConfigKeys[] = {
    "window", "batch-size", "epochs", "patience", "val-fraction", "margin",
    "fanout", "lr", "dim", "heads", "layers", "strategy",
    "cluster", "k", "eps", "min-pts", "seed", "embedding-file",
    "embedding-dim", "min-df", "max-df", "day-scale"};

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error("cannot read '" + p.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& p, const std::string& bytes) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out) throw Error("cannot write '" + p.string() + "'");
  out << bytes;
}

void write_outputs(const lifecycle::LifecycleState& state, const fs::path& out_dir,
                   const fs::path& ckpt) {
  fs::create_directories(out_dir);
  write_file(out_dir / "metrics.csv", lifecycle::metrics_header() + state.metrics_log);
  write_file(out_dir / "partitions.jsonl", state.partitions_log);
  state.to_checkpoint().save(ckpt);
}

// id -> cluster id, from lines carrying "event" or "label". Lines whose
// value is null are recorded in `unlabeled`.
std::map<std::string, int> read_assignment(const fs::path& path,
                                           std::unordered_set<std::string>* unlabeled) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read '" + path.string() + "'");
  std::map<std::string, int> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception&) {
      throw ParseError(path.string() + ":" + std::to_string(lineno) + ": not JSON");
    }
    if (!j.contains("id") || !j["id"].is_string()) {
      throw ParseError(path.string() + ":" + std::to_string(lineno) + ": missing id");
    }
    const std::string id = j["id"];
    const char* key = j.contains("event") ? "event" : "label";
    if (out.count(id) || (unlabeled && unlabeled->count(id))) {
      throw ParseError(path.string() + ": duplicate id '" + id + "'");
    }
    if (!j.contains(key) || j[key].is_null()) {
      if (!unlabeled) throw ParseError(path.string() + ":" + std::to_string(lineno) + ": no event");
      unlabeled->insert(id);
      continue;
    }
    out[id] = j[key].get<int>();
  }
  return out;
}

int cmd_eval(const std::string& pred_path, const std::string& truth_path, std::ostream& out) {
  std::unordered_set<std::string> unlabeled;
  const auto truth = read_assignment(truth_path, &unlabeled);
  const auto pred = read_assignment(pred_path, nullptr);
  cluster::Partition p, t;
  for (const auto& [id, label] : truth) {
    auto it = pred.find(id);
    if (it == pred.end()) throw ConfigError("message '" + id + "' has no predicted event");
    p.assignment.push_back(it->second);
    t.assignment.push_back(label);
  }
  for (const auto& [id, c] : pred)
    if (!truth.count(id) && !unlabeled.count(id)) {
      throw ConfigError("predicted message '" + id + "' is absent from the ground truth");
    }
  if (t.assignment.empty()) throw ConfigError("no labeled messages to score");
  const auto s = cluster::score(p, t);
  char buf[160];
  std::snprintf(buf, sizeof buf, "nmi=%.10f\nami=%.10f\nari=%.10f\n", s.nmi, s.ami, s.ari);
  out << buf;
  return 0;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Incremental social event detection over message streams"};
  app.require_subcommand(1);

  // gen
  auto* gen = app.add_subcommand("gen", "Write a synthetic labeled stream");
  streamgen::GeneratorConfig gcfg;
  std::string gen_out = "stream.jsonl";
  std::size_t gen_blocks = 6, gen_block_size = 200;
  std::uint64_t gen_seed = 42;
  gen->add_option("--out", gen_out, "Output stream file");
  gen->add_option("--events", gcfg.events, "Total planted events");
  gen->add_option("--initial-events", gcfg.initial_events, "Events present in block 0");
  gen->add_option("--blocks", gen_blocks, "Blocks after the pre-training block");
  gen->add_option("--block-size", gen_block_size, "Messages per block");
  gen->add_option("--event-vocab", gcfg.event_vocab);
  gen->add_option("--background-vocab", gcfg.background_vocab);
  gen->add_option("--background-mix", gcfg.background_mix);
  gen->add_option("--users", gcfg.users_per_event, "Users per event");
  gen->add_option("--crossover", gcfg.crossover);
  gen->add_option("--entities", gcfg.entities_per_event, "Entities per event");
  gen->add_option("--entity-rate", gcfg.entity_rate);
  gen->add_option("--lifetime", gcfg.lifetime, "Blocks an event stays active");
  gen->add_option("--seed", gen_seed);

  // run / resume share the output flags
  std::map<std::string, std::string> values;
  std::map<std::string, CLI::Option*> flags;
  auto* run_cmd = app.add_subcommand("run", "Pre-train on block 0, then detect and maintain");
  std::string input, out_dir = "out", checkpoint, config_file;
  run_cmd->add_option("--input", input, "Stream file")->required();
  run_cmd->add_option("--out", out_dir, "Output directory");
  run_cmd->add_option("--checkpoint", checkpoint, "Checkpoint path (default <out>/model.ckpt)");
  run_cmd->add_option("--config", config_file, "key=value file");
  for (const char* key : kConfigKeys) {
    flags[key] = run_cmd->add_option(std::string("--") + key, values[key]);
  }

  auto* eval = app.add_subcommand("eval", "Score a predicted partition against ground truth");
  std::string pred_path, truth_path;
  eval->add_option("pred", pred_path, "Predicted partitions (jsonl)")->required();
  eval->add_option("truth", truth_path, "Ground truth (jsonl with label or event)")->required();

  auto* resume = app.add_subcommand("resume", "Continue a saved run over later blocks");
  std::string resume_ckpt, resume_input, resume_out;
  resume->add_option("--checkpoint", resume_ckpt, "Checkpoint to continue from")->required();
  resume->add_option("--input", resume_input, "Stream file; blocks up to the saved one are skipped");
  resume->add_option("--out", resume_out, "Output directory (default: beside the checkpoint)");

  std::vector<std::string> argv_store{"kpgnn"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const auto& a : argv_store) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    if (*gen) {
      gcfg.schedule.assign(gen_blocks + 1, gen_block_size);
      const auto messages = streamgen::generate_stream(gcfg, gen_seed);
      std::ostringstream ss;
      streamgen::write_stream(ss, messages);
      write_file(gen_out, ss.str());
      out << "wrote " << messages.size() << " messages to " << gen_out << '\n';
      return 0;
    }
    if (*eval) return cmd_eval(pred_path, truth_path, out);
    if (*run_cmd) {
      lifecycle::LifecycleConfig cfg;
      if (!config_file.empty()) cfg = lifecycle::LifecycleConfig::from_text(read_file(config_file));
      for (const char* key : kConfigKeys)
        if (flags[key]->count() > 0) cfg.set(key, values[key]);
      cfg.validate();
      const auto parsed = ingest::parse_stream_file(input);
      if (parsed.malformed) err << "skipped " << parsed.malformed << " malformed records\n";
      const auto state = lifecycle::run(parsed.blocks, cfg, nullptr,
                                        [&](const lifecycle::LifecycleState&, const lifecycle::BlockResult& r) {
                                          out << lifecycle::metrics_row(r);
                                        });
      write_outputs(state, out_dir, checkpoint.empty() ? fs::path(out_dir) / "model.ckpt" : fs::path(checkpoint));
      return 0;
    }
    if (*resume) {
      auto state = lifecycle::LifecycleState::from_checkpoint(Checkpoint::load(resume_ckpt));
      if (!resume_input.empty()) {
        const auto parsed = ingest::parse_stream_file(resume_input);
        if (parsed.malformed) err << "skipped " << parsed.malformed << " malformed records\n";
        lifecycle::continue_run(state, parsed.blocks,
                                [&](const lifecycle::LifecycleState&, const lifecycle::BlockResult& r) {
                                  out << lifecycle::metrics_row(r);
                                });
      }
      const fs::path dir = resume_out.empty() ? fs::path(resume_ckpt).parent_path() : fs::path(resume_out);
      write_outputs(state, dir.empty() ? fs::path(".") : dir, (dir.empty() ? fs::path(".") : dir) / "model.ckpt");
      return 0;
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

}  // namespace kpgnn::cli
