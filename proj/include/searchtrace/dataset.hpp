#pragma once

// Deduplicated train/test corpora of tokenized planning sequences.
//
// Layout on disk (one directory per dataset):
//   manifest.json   build configuration, counts, vocabulary reference
//   vocab.txt       one symbol per line, line number = id
//   train.jsonl     header line, then one example per line
//   test.jsonl      same format
//
// Every admitted task contributes two rows, solution_only and
// search_augmented, adjacent and in admission order. The split is decided by
// a hash band of the prompt (bits 32.. of the task id, one band in eight is
// test), so membership is stable under regeneration. A task whose
// search-augmented response would exceed max_response_tokens is discarded
// and generation continues, keeping the variants paired. All build steps are
// pure functions of (config, seed); files are byte-identical across reruns.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "searchtrace/astar.hpp"
#include "searchtrace/common.hpp"
#include "searchtrace/generate.hpp"
#include "searchtrace/grid.hpp"
#include "searchtrace/tokenizer.hpp"
#include "searchtrace/trainer.hpp"

namespace searchtrace {

enum class Variant { SolutionOnly, SearchAugmented };

inline std::string variant_name(Variant v) {
  return v == Variant::SolutionOnly ? "solution_only" : "search_augmented";
}

inline Variant variant_from_name(const std::string& name) {
  if (name == "solution_only") return Variant::SolutionOnly;
  if (name == "search_augmented") return Variant::SearchAugmented;
  throw IoError("dataset: unknown variant '" + name + "'");
}

struct SequenceExample {
  std::uint64_t task_id{};
  TokenList prompt;
  TokenList response;
  Variant variant{Variant::SolutionOnly};
  int trace_len{};
  int plan_len{};
  std::uint64_t seed{};  // task generation seed
};

struct DatasetManifest {
  int format_version{1};
  TaskKind kind{TaskKind::Maze};
  int grid_size{5};
  SearchMode mode{SearchMode::Deterministic};
  int n_train{};
  int n_test{};
  std::string vocab_file{"vocab.txt"};
  int max_response_tokens{10000};
  std::uint64_t global_seed{};
  int max_cost{};  // cost-token ceiling baked into the vocabulary
};

struct Dataset {
  DatasetManifest manifest;
  Vocabulary vocab;
  std::vector<SequenceExample> train;
  std::vector<SequenceExample> test;

  const std::vector<SequenceExample>& split(const std::string& name) const {
    if (name == "train") return train;
    if (name == "test") return test;
    throw ConfigError("dataset: unknown split '" + name + "'");
  }
};

struct BuildConfig {
  TaskKind kind{TaskKind::Maze};
  int size{5};  // grid side; sokoban is fixed at 7
  SearchMode mode{SearchMode::Deterministic};
  int n_train{1};
  int n_test{1};
  int max_response_tokens{10000};
  std::uint64_t seed{0};
  int workers{0};
};

inline std::uint64_t prompt_task_id(const TokenList& prompt) {
  std::string joined;
  for (const auto& t : prompt) {
    joined += t;
    joined += '\x1f';
  }
  return fnv1a64(joined);
}

inline bool in_test_band(std::uint64_t task_id) {
  return ((task_id >> 32) & 7u) == 7u;
}

namespace detail {

struct Candidate {
  bool valid{false};
  std::uint64_t task_id{};
  TokenList prompt;
  TokenList response_sa;
  TokenList response_so;
  int trace_len{};
  int plan_len{};
  int max_cost{};  // largest c or h in the trace
  std::uint64_t seed{};
};

inline Candidate make_candidate(const BuildConfig& config,
                                std::uint64_t task_seed) {
  Candidate cand;
  cand.seed = task_seed;
  const std::uint64_t solve_seed = mix_seed(task_seed, 1);
  if (config.kind == TaskKind::Maze) {
    const MazeTask task = generate_maze(config.size, config.size, task_seed);
    const auto result = run_astar(task, config.mode, solve_seed);
    cand.prompt = encode_prompt(task);
    cand.response_sa = encode_response(&result.trace, result.plan);
    cand.response_so = encode_response(nullptr, result.plan);
    cand.trace_len = trace_token_length(result.trace);
    cand.plan_len = plan_token_length(result.plan);
    for (const auto& e : result.trace) {
      cand.max_cost = std::max({cand.max_cost, e.cost, e.heuristic});
    }
  } else {
    const SokobanTask task = generate_sokoban(task_seed);
    const auto result = run_astar(task, config.mode, solve_seed);
    cand.prompt = encode_prompt(task);
    cand.response_sa = encode_response(&result.trace, result.plan, task);
    cand.response_so = encode_response(nullptr, result.plan);
    cand.trace_len = trace_token_length(result.trace, task);
    cand.plan_len = plan_token_length(result.plan);
    for (const auto& e : result.trace) {
      cand.max_cost = std::max({cand.max_cost, e.cost, e.heuristic});
    }
  }
  cand.task_id = prompt_task_id(cand.prompt);
  cand.valid = true;
  return cand;
}

}  // namespace detail

// Generates, solves and tokenizes tasks until both split quotas are met.
// Candidates are produced in parallel (each is a pure function of its
// per-index seed) and admitted sequentially in index order.
inline Dataset build_dataset(const BuildConfig& config) {
  if (config.n_train < 1 || config.n_test < 1) {
    throw ConfigError("build_dataset: train and test counts must be >= 1");
  }
  if (config.kind == TaskKind::Sokoban && config.size != 7) {
    throw ConfigError("build_dataset: sokoban grids are fixed at 7x7");
  }

  Dataset ds;
  ds.manifest.kind = config.kind;
  ds.manifest.grid_size = config.size;
  ds.manifest.mode = config.mode;
  ds.manifest.n_train = config.n_train;
  ds.manifest.n_test = config.n_test;
  ds.manifest.max_response_tokens = config.max_response_tokens;
  ds.manifest.global_seed = config.seed;

  std::set<std::uint64_t> seen;
  int train_tasks = 0;
  int test_tasks = 0;
  int observed_max_cost = 0;
  std::uint64_t next_index = 0;
  constexpr std::uint64_t kChunk = 64;
  constexpr std::uint64_t kIndexBudget = 1u << 24;

  std::vector<detail::Candidate> chunk(kChunk);
  while (train_tasks < config.n_train || test_tasks < config.n_test) {
    if (next_index >= kIndexBudget) {
      throw GenerationError("build_dataset: candidate budget exhausted");
    }
    parallel_for(kChunk, config.workers, [&](std::size_t i) {
      chunk[i] = detail::make_candidate(
          config, mix_seed(config.seed, next_index + i));
    });
    for (std::size_t i = 0; i < kChunk; ++i) {
      const detail::Candidate& cand = chunk[i];
      if (static_cast<int>(cand.response_sa.size()) >
          config.max_response_tokens) {
        continue;  // task replaced by a later candidate
      }
      if (!seen.insert(cand.task_id).second) continue;  // duplicate prompt
      const bool is_test = in_test_band(cand.task_id);
      auto& bucket = is_test ? ds.test : ds.train;
      int& count = is_test ? test_tasks : train_tasks;
      const int quota = is_test ? config.n_test : config.n_train;
      if (count >= quota) continue;
      ++count;
      observed_max_cost = std::max(observed_max_cost, cand.max_cost);

      SequenceExample so;
      so.task_id = cand.task_id;
      so.prompt = cand.prompt;
      so.response = cand.response_so;
      so.variant = Variant::SolutionOnly;
      so.trace_len = 0;
      so.plan_len = cand.plan_len;
      so.seed = cand.seed;
      SequenceExample sa = so;
      sa.response = cand.response_sa;
      sa.variant = Variant::SearchAugmented;
      sa.trace_len = cand.trace_len;
      bucket.push_back(std::move(so));
      bucket.push_back(std::move(sa));
    }
    next_index += kChunk;
  }

  // Cost tokens cover the largest observed c or h plus a safety margin of 1.
  ds.manifest.max_cost = observed_max_cost + 1;
  ds.vocab = Vocabulary::build(config.kind, config.size, ds.manifest.max_cost);
  for (const auto* split : {&ds.train, &ds.test}) {
    for (const auto& ex : *split) {
      ds.vocab.encode(ex.prompt);  // throws if anything is uncovered
      ds.vocab.encode(ex.response);
    }
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Persistence

namespace detail {

inline std::string hex_id(std::uint64_t id) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(id));
  return std::string(buf);
}

inline std::uint64_t parse_hex_id(const std::string& s) {
  return std::stoull(s, nullptr, 16);
}

inline void write_examples(const std::filesystem::path& path,
                           const std::string& split,
                           const std::vector<SequenceExample>& examples) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("dataset: cannot write " + path.string());
  nlohmann::json header{{"format_version", 1}, {"split", split}};
  out << header.dump() << '\n';
  for (const auto& ex : examples) {
    nlohmann::json row{{"task_id", hex_id(ex.task_id)},
                       {"variant", variant_name(ex.variant)},
                       {"seed", ex.seed},
                       {"trace_len", ex.trace_len},
                       {"plan_len", ex.plan_len},
                       {"prompt", ex.prompt},
                       {"response", ex.response}};
    out << row.dump() << '\n';
  }
  if (!out) throw IoError("dataset: write failed for " + path.string());
}

inline std::vector<SequenceExample> read_examples(
    const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("dataset: cannot read " + path.string());
  std::string line;
  if (!std::getline(in, line)) {
    throw IoError("dataset: missing header in " + path.string());
  }
  const auto header = nlohmann::json::parse(line, nullptr, false);
  if (header.is_discarded() || header.value("format_version", 0) != 1) {
    throw IoError("dataset: unsupported format in " + path.string());
  }
  std::vector<SequenceExample> examples;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto row = nlohmann::json::parse(line);
    SequenceExample ex;
    ex.task_id = parse_hex_id(row.at("task_id").get<std::string>());
    ex.variant = variant_from_name(row.at("variant").get<std::string>());
    ex.seed = row.at("seed").get<std::uint64_t>();
    ex.trace_len = row.at("trace_len").get<int>();
    ex.plan_len = row.at("plan_len").get<int>();
    ex.prompt = row.at("prompt").get<TokenList>();
    ex.response = row.at("response").get<TokenList>();
    examples.push_back(std::move(ex));
  }
  return examples;
}

}  // namespace detail

inline void save_dataset(const Dataset& ds, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  const fs::path root(dir);

  nlohmann::json manifest{
      {"format_version", ds.manifest.format_version},
      {"kind", task_kind_name(ds.manifest.kind)},
      {"grid_size", ds.manifest.grid_size},
      {"mode", search_mode_name(ds.manifest.mode)},
      {"n_train", ds.manifest.n_train},
      {"n_test", ds.manifest.n_test},
      {"vocab_file", ds.manifest.vocab_file},
      {"max_response_tokens", ds.manifest.max_response_tokens},
      {"global_seed", ds.manifest.global_seed},
      {"max_cost", ds.manifest.max_cost}};
  std::ofstream mf(root / "manifest.json", std::ios::binary);
  if (!mf) throw IoError("dataset: cannot write manifest in " + dir);
  mf << manifest.dump(2) << '\n';

  ds.vocab.save((root / ds.manifest.vocab_file).string());
  detail::write_examples(root / "train.jsonl", "train", ds.train);
  detail::write_examples(root / "test.jsonl", "test", ds.test);
}

inline Dataset load_dataset(const std::string& dir) {
  namespace fs = std::filesystem;
  const fs::path root(dir);
  std::ifstream mf(root / "manifest.json", std::ios::binary);
  if (!mf) throw IoError("dataset: cannot read manifest in " + dir);
  nlohmann::json manifest;
  mf >> manifest;

  Dataset ds;
  ds.manifest.format_version = manifest.at("format_version").get<int>();
  if (ds.manifest.format_version != 1) {
    throw IoError("dataset: unsupported manifest version in " + dir);
  }
  ds.manifest.kind = manifest.at("kind").get<std::string>() == "maze"
                         ? TaskKind::Maze
                         : TaskKind::Sokoban;
  ds.manifest.grid_size = manifest.at("grid_size").get<int>();
  ds.manifest.mode = manifest.at("mode").get<std::string>() == "deterministic"
                         ? SearchMode::Deterministic
                         : SearchMode::NonDeterministic;
  ds.manifest.n_train = manifest.at("n_train").get<int>();
  ds.manifest.n_test = manifest.at("n_test").get<int>();
  ds.manifest.vocab_file = manifest.at("vocab_file").get<std::string>();
  ds.manifest.max_response_tokens = manifest.at("max_response_tokens").get<int>();
  ds.manifest.global_seed = manifest.at("global_seed").get<std::uint64_t>();
  ds.manifest.max_cost = manifest.at("max_cost").get<int>();

  ds.vocab = Vocabulary::load((root / ds.manifest.vocab_file).string());
  ds.train = detail::read_examples(root / "train.jsonl");
  ds.test = detail::read_examples(root / "test.jsonl");
  return ds;
}

// ---------------------------------------------------------------------------
// Slicing and statistics

// Returns a dataset whose train split holds the first `n_tasks` tasks after a
// stable ascending sort by task_id (both variants of each task). Used for
// dataset-size sweeps; the test split is untouched.
inline Dataset slice_dataset(const Dataset& ds, int n_tasks) {
  std::set<std::uint64_t> ids;
  for (const auto& ex : ds.train) ids.insert(ex.task_id);
  if (n_tasks < 1) throw ConfigError("slice_dataset: need at least one task");
  if (n_tasks > static_cast<int>(ids.size())) {
    throw ConfigError("slice_dataset: only " + std::to_string(ids.size()) +
                      " tasks available");
  }
  std::set<std::uint64_t> keep;
  for (auto it = ids.begin(); keep.size() < static_cast<std::size_t>(n_tasks);
       ++it) {
    keep.insert(*it);
  }
  Dataset out;
  out.manifest = ds.manifest;
  out.vocab = ds.vocab;
  out.test = ds.test;
  std::unordered_map<std::uint64_t, std::pair<const SequenceExample*,
                                              const SequenceExample*>>
      by_id;
  for (const auto& ex : ds.train) {
    auto& slot = by_id[ex.task_id];
    (ex.variant == Variant::SolutionOnly ? slot.first : slot.second) = &ex;
  }
  for (std::uint64_t id : keep) {
    const auto& slot = by_id.at(id);
    if (slot.first != nullptr) out.train.push_back(*slot.first);
    if (slot.second != nullptr) out.train.push_back(*slot.second);
  }
  return out;
}

namespace detail {

inline nlohmann::json length_stats(std::vector<int> values) {
  if (values.empty()) return nlohmann::json{{"count", 0}};
  std::sort(values.begin(), values.end());
  const auto quantile = [&](double q) {
    const auto rank = static_cast<std::size_t>(
        std::ceil(q * static_cast<double>(values.size()))) - 1;
    return values[std::min(rank, values.size() - 1)];
  };
  double mean = 0;
  for (int v : values) mean += v;
  mean /= static_cast<double>(values.size());
  return nlohmann::json{{"count", values.size()},
                        {"min", values.front()},
                        {"max", values.back()},
                        {"mean", mean},
                        {"q25", quantile(0.25)},
                        {"q50", quantile(0.50)},
                        {"q75", quantile(0.75)}};
}

}  // namespace detail

// Trace/plan token length distributions per split, machine readable.
inline nlohmann::json dataset_stats(const Dataset& ds) {
  nlohmann::json report{{"kind", task_kind_name(ds.manifest.kind)},
                        {"grid_size", ds.manifest.grid_size},
                        {"mode", search_mode_name(ds.manifest.mode)}};
  for (const auto& [name, split] :
       {std::pair{"train", &ds.train}, std::pair{"test", &ds.test}}) {
    std::vector<int> trace_lens;
    std::vector<int> plan_lens;
    for (const auto& ex : *split) {
      if (ex.variant == Variant::SearchAugmented) {
        trace_lens.push_back(ex.trace_len);
        plan_lens.push_back(ex.plan_len);
      }
    }
    report[name] = {{"tasks", trace_lens.size()},
                    {"trace_len", detail::length_stats(trace_lens)},
                    {"plan_len", detail::length_stats(plan_lens)}};
  }
  return report;
}

// ---------------------------------------------------------------------------
// Bridges to the trainer and evaluator

inline std::vector<BatchExample> to_batch_examples(
    const std::vector<SequenceExample>& examples, Variant variant,
    const Vocabulary& vocab) {
  std::vector<BatchExample> out;
  for (const auto& ex : examples) {
    if (ex.variant != variant) continue;
    out.push_back({vocab.encode(ex.prompt), vocab.encode(ex.response)});
  }
  return out;
}

// Unique tasks of a split in admission order, with the reference response of
// the requested variant.
struct TaskView {
  std::uint64_t task_id{};
  TokenList prompt;
  TokenList reference_response;
  int reference_trace_len{};
  std::uint64_t seed{};
};

inline std::vector<TaskView> task_views(
    const std::vector<SequenceExample>& examples, Variant variant) {
  std::vector<TaskView> out;
  for (const auto& ex : examples) {
    if (ex.variant != variant) continue;
    out.push_back({ex.task_id, ex.prompt, ex.response, ex.trace_len, ex.seed});
  }
  return out;
}

}  // namespace searchtrace
