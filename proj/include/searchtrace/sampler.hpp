#pragma once

// Autoregressive sampling from trained models plus the evaluation metrics:
// exact-match, any-optimal-n, SWC, ILR (on-solved / on-optimal) and
// average-on-optimal trace lengths.
//
// Metric definitions over n test tasks with per-task oracle cost l*_i:
//   solved/optimal   a task counts once if any of its n samples ends in a
//                    correct (resp. optimal) plan
//   SWC              (1/n) sum c_i * l*_i / max(l_i, l*_i) with c_i the
//                    solved flag and l_i the best correct plan cost
//   ILR              (1/k) sum over included tasks of t*_i / t_i, where t_i
//                    is the shortest model trace (tokens) among qualifying
//                    samples, t*_i the shortest trace over the same number
//                    of seeded reference searches, and k the number of
//                    included tasks ("on-solved" includes solved tasks,
//                    "on-optimal" tasks with an optimal sample)
//
// Truncated or unparseable samples count as incorrect but still consume one
// of the n trials. Evaluation is reproducible: per-(task, sample) seeds are
// derived from the evaluation seed and the task id, and per-task results are
// merged in task order.

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "searchtrace/astar.hpp"
#include "searchtrace/common.hpp"
#include "searchtrace/dataset.hpp"
#include "searchtrace/model.hpp"
#include "searchtrace/tokenizer.hpp"

namespace searchtrace {

struct SampleOutcome {
  TokenList tokens;  // bos ... (eos unless truncated)
  bool truncated{false};
};

// Samples one response: starts from bos, draws each next token from the
// softmax distribution (or argmax when greedy), stops at eos or after
// max_len response tokens (truncated). Deterministic given the seed.
template <typename Scalar>
SampleOutcome sample_response(const ModelParameters<Scalar>& params,
                              const Vocabulary& vocab,
                              const std::vector<int>& prompt_ids,
                              std::uint64_t seed, int max_len,
                              double temperature = 1.0, bool greedy = false) {
  if (max_len < 1) throw ConfigError("sample: max_len must be >= 1");
  const Mat<Scalar> enc = encode(params, prompt_ids);
  IncrementalDecoder<Scalar> decoder(params, enc, max_len);
  Rng rng(seed);

  SampleOutcome out;
  std::vector<int> ids{Vocabulary::kBos};
  int current = Vocabulary::kBos;
  while (true) {
    if (static_cast<int>(ids.size()) >= max_len) {
      out.truncated = true;
      break;
    }
    const RowVec<Scalar> logits = decoder.step(current);
    int next = 0;
    if (greedy) {
      Eigen::Index arg;
      logits.maxCoeff(&arg);
      next = static_cast<int>(arg);
    } else {
      RowVec<Scalar> scaled =
          logits / static_cast<Scalar>(temperature <= 0 ? 1.0 : temperature);
      const Scalar max_v = scaled.maxCoeff();
      RowVec<Scalar> probs = (scaled.array() - max_v).exp();
      probs /= probs.sum();
      const double u = rng.real01();
      double cum = 0.0;
      next = params.config.vocab_size - 1;
      for (int v = 0; v < params.config.vocab_size; ++v) {
        cum += static_cast<double>(probs(v));
        if (u < cum) {
          next = v;
          break;
        }
      }
    }
    ids.push_back(next);
    current = next;
    if (next == Vocabulary::kEos) break;
  }
  out.tokens = vocab.decode(ids);
  return out;
}

// ---------------------------------------------------------------------------
// Metric arithmetic (pure; unit-tested against hand-computed fixtures)

struct SwcItem {
  bool solved{false};
  int best_cost{0};    // cost of the best correct plan when solved
  int oracle_cost{0};  // l*_i
};

inline double swc_score(const std::vector<SwcItem>& items) {
  if (items.empty()) return 0.0;
  double total = 0.0;
  for (const auto& item : items) {
    if (!item.solved) continue;
    total += static_cast<double>(item.oracle_cost) /
             static_cast<double>(std::max(item.best_cost, item.oracle_cost));
  }
  return total / static_cast<double>(items.size());
}

struct IlrItem {
  bool included{false};
  int model_trace{0};      // t_i, tokens
  int reference_trace{0};  // t*_i, tokens
};

// Mean of t*/t over included tasks; the divisor is the included count (the
// all-tasks alternative reading of the formula is not used).
inline double ilr_score(const std::vector<IlrItem>& items) {
  double total = 0.0;
  int included = 0;
  for (const auto& item : items) {
    if (!item.included) continue;
    if (item.model_trace <= 0) {
      throw ConfigError("ilr: included task with non-positive trace length");
    }
    ++included;
    total += static_cast<double>(item.reference_trace) /
             static_cast<double>(item.model_trace);
  }
  return included == 0 ? 0.0 : total / static_cast<double>(included);
}

// ---------------------------------------------------------------------------
// Evaluation

struct EvalConfig {
  int n_samples{64};
  double temperature{1.0};
  int max_len{0};  // 0: dataset cap + slack
  std::uint64_t seed{0};
  int workers{0};
  std::string label;
};

struct TaskEval {
  std::uint64_t task_id{};
  int oracle_cost{};
  int n_samples{};
  int n_parsed{};
  int n_solved{};
  int n_optimal{};
  int n_truncated{};
  int best_cost{-1};
  int shortest_trace_solved{-1};
  int shortest_trace_optimal{-1};
  double mean_trace_optimal{-1.0};
  int reference_trace_len{-1};
};

struct EvalReport {
  std::string label;
  int n_tasks{};
  int n_samples{};
  double solved_pct{};
  double optimal_pct{};
  double swc{};
  double ilr_solved{};
  double ilr_optimal{};
  std::vector<TaskEval> tasks;
};

// Produces all n samples for one task; thread-safe across tasks.
using TaskSampler = std::function<std::vector<SampleOutcome>(
    std::size_t task_index, const Task& task, const TokenList& prompt)>;

// Shortest reference trace length (tokens) over `runs` searches in the
// dataset's mode; seeds are a pure function of the task id.
inline int reference_trace_length(const Task& task, SearchMode mode,
                                  int runs) {
  const std::uint64_t base = std::visit(
      [](const auto& t) { return prompt_task_id(encode_prompt(t)); }, task);
  int shortest = -1;
  const int effective_runs = mode == SearchMode::Deterministic ? 1 : runs;
  for (int j = 0; j < effective_runs; ++j) {
    const std::uint64_t seed = mix_seed(mix_seed(base, 0xA57A), j);
    int len = 0;
    if (const auto* maze = std::get_if<MazeTask>(&task)) {
      len = trace_token_length(run_astar(*maze, mode, seed).trace);
    } else {
      const auto& sok = std::get<SokobanTask>(task);
      len = trace_token_length(run_astar(sok, mode, seed).trace, sok);
    }
    if (shortest < 0 || len < shortest) shortest = len;
  }
  return shortest;
}

inline EvalReport evaluate_with_sampler(const Dataset& ds,
                                        const std::string& split,
                                        Variant variant,
                                        const EvalConfig& config,
                                        const TaskSampler& sampler) {
  const auto views = task_views(ds.split(split), variant);
  if (views.empty()) throw ConfigError("eval: split holds no tasks");

  EvalReport report;
  report.label = config.label;
  report.n_tasks = static_cast<int>(views.size());
  report.n_samples = config.n_samples;
  report.tasks.resize(views.size());

  parallel_for(views.size(), config.workers, [&](std::size_t i) {
    const auto& view = views[i];
    const Task task = decode_prompt(view.prompt, ds.manifest.kind,
                                    ds.manifest.grid_size);
    TaskEval row;
    row.task_id = view.task_id;
    row.oracle_cost = oracle_shortest_cost(task);
    row.reference_trace_len =
        reference_trace_length(task, ds.manifest.mode, config.n_samples);

    const auto samples = sampler(i, task, view.prompt);
    row.n_samples = static_cast<int>(samples.size());
    double optimal_trace_sum = 0.0;
    int optimal_trace_count = 0;
    for (const auto& sample : samples) {
      if (sample.truncated) {
        ++row.n_truncated;
        continue;
      }
      const DecodeResult parsed = decode_response(sample.tokens, task);
      if (!parsed.ok) continue;
      ++row.n_parsed;
      const PlanVerdict verdict =
          validate_plan(task, parsed.plan, row.oracle_cost);
      if (!verdict.correct()) continue;
      ++row.n_solved;
      const int trace_tokens = response_trace_tokens(sample.tokens);
      if (row.best_cost < 0 || verdict.cost < row.best_cost) {
        row.best_cost = verdict.cost;
      }
      if (row.shortest_trace_solved < 0 ||
          trace_tokens < row.shortest_trace_solved) {
        row.shortest_trace_solved = trace_tokens;
      }
      if (verdict.optimal()) {
        ++row.n_optimal;
        optimal_trace_sum += trace_tokens;
        ++optimal_trace_count;
        if (row.shortest_trace_optimal < 0 ||
            trace_tokens < row.shortest_trace_optimal) {
          row.shortest_trace_optimal = trace_tokens;
        }
      }
    }
    if (optimal_trace_count > 0) {
      row.mean_trace_optimal =
          optimal_trace_sum / static_cast<double>(optimal_trace_count);
    }
    report.tasks[i] = row;
  });

  int solved_tasks = 0;
  int optimal_tasks = 0;
  std::vector<SwcItem> swc_items;
  std::vector<IlrItem> ilr_solved_items, ilr_optimal_items;
  for (const auto& row : report.tasks) {
    const bool solved = row.n_solved > 0;
    const bool optimal = row.n_optimal > 0;
    solved_tasks += solved ? 1 : 0;
    optimal_tasks += optimal ? 1 : 0;
    swc_items.push_back({solved, row.best_cost, row.oracle_cost});
    // Solution-only samples have empty traces; ILR is skipped for them.
    const bool has_solved_trace = solved && row.shortest_trace_solved > 0;
    const bool has_optimal_trace = optimal && row.shortest_trace_optimal > 0;
    ilr_solved_items.push_back(
        {has_solved_trace, row.shortest_trace_solved, row.reference_trace_len});
    ilr_optimal_items.push_back({has_optimal_trace, row.shortest_trace_optimal,
                                 row.reference_trace_len});
  }
  const double n = static_cast<double>(report.tasks.size());
  report.solved_pct = 100.0 * solved_tasks / n;
  report.optimal_pct = 100.0 * optimal_tasks / n;
  report.swc = swc_score(swc_items);
  report.ilr_solved = ilr_score(ilr_solved_items);
  report.ilr_optimal = ilr_score(ilr_optimal_items);
  return report;
}

// Standard model-backed evaluation: n seeded samples per task at the given
// temperature.
template <typename Scalar>
EvalReport evaluate_model(const ModelParameters<Scalar>& params,
                          const Dataset& ds, const std::string& split,
                          Variant variant, const EvalConfig& config) {
  EvalConfig cfg = config;
  if (cfg.max_len == 0) {
    cfg.max_len = ds.manifest.max_response_tokens + 16;
  }
  const TaskSampler sampler = [&](std::size_t, const Task&,
                                  const TokenList& prompt) {
    const std::vector<int> prompt_ids = ds.vocab.encode(prompt);
    const std::uint64_t task_base =
        mix_seed(cfg.seed, prompt_task_id(prompt));
    std::vector<SampleOutcome> out;
    out.reserve(static_cast<std::size_t>(cfg.n_samples));
    for (int j = 0; j < cfg.n_samples; ++j) {
      out.push_back(sample_response(params, ds.vocab, prompt_ids,
                                    mix_seed(task_base, j), cfg.max_len,
                                    cfg.temperature, /*greedy=*/false));
    }
    return out;
  };
  return evaluate_with_sampler(ds, split, variant, cfg, sampler);
}

// Greedy decoding compared token-for-token with the stored reference
// response. Only meaningful on deterministic datasets.
template <typename Scalar>
double exact_match_eval(const ModelParameters<Scalar>& params,
                        const Dataset& ds, const std::string& split,
                        Variant variant, int max_len = 0, int workers = 0) {
  const auto views = task_views(ds.split(split), variant);
  if (views.empty()) throw ConfigError("eval: split holds no tasks");
  const int cap =
      max_len > 0 ? max_len : ds.manifest.max_response_tokens + 16;
  std::vector<int> correct(views.size(), 0);
  parallel_for(views.size(), workers, [&](std::size_t i) {
    const auto& view = views[i];
    const SampleOutcome sample =
        sample_response(params, ds.vocab, ds.vocab.encode(view.prompt), 0, cap,
                        1.0, /*greedy=*/true);
    correct[i] = !sample.truncated && sample.tokens == view.reference_response
                     ? 1
                     : 0;
  });
  int total = 0;
  for (int c : correct) total += c;
  return static_cast<double>(total) / static_cast<double>(views.size());
}

// ---------------------------------------------------------------------------
// Report serialization

inline nlohmann::json eval_report_to_json(const EvalReport& report) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& t : report.tasks) {
    rows.push_back({{"task_id", detail::hex_id(t.task_id)},
                    {"oracle_cost", t.oracle_cost},
                    {"n_samples", t.n_samples},
                    {"n_parsed", t.n_parsed},
                    {"n_solved", t.n_solved},
                    {"n_optimal", t.n_optimal},
                    {"n_truncated", t.n_truncated},
                    {"best_cost", t.best_cost},
                    {"shortest_trace_solved", t.shortest_trace_solved},
                    {"shortest_trace_optimal", t.shortest_trace_optimal},
                    {"mean_trace_optimal", t.mean_trace_optimal},
                    {"reference_trace_len", t.reference_trace_len}});
  }
  return nlohmann::json{{"label", report.label},
                        {"n_tasks", report.n_tasks},
                        {"n_samples", report.n_samples},
                        {"solved_pct", report.solved_pct},
                        {"optimal_pct", report.optimal_pct},
                        {"swc", report.swc},
                        {"ilr_solved", report.ilr_solved},
                        {"ilr_optimal", report.ilr_optimal},
                        {"tasks", rows}};
}

inline EvalReport eval_report_from_json(const nlohmann::json& j) {
  EvalReport report;
  report.label = j.at("label").get<std::string>();
  report.n_tasks = j.at("n_tasks").get<int>();
  report.n_samples = j.at("n_samples").get<int>();
  report.solved_pct = j.at("solved_pct").get<double>();
  report.optimal_pct = j.at("optimal_pct").get<double>();
  report.swc = j.at("swc").get<double>();
  report.ilr_solved = j.at("ilr_solved").get<double>();
  report.ilr_optimal = j.at("ilr_optimal").get<double>();
  for (const auto& row : j.at("tasks")) {
    TaskEval t;
    t.task_id = detail::parse_hex_id(row.at("task_id").get<std::string>());
    t.oracle_cost = row.at("oracle_cost").get<int>();
    t.n_samples = row.at("n_samples").get<int>();
    t.n_parsed = row.at("n_parsed").get<int>();
    t.n_solved = row.at("n_solved").get<int>();
    t.n_optimal = row.at("n_optimal").get<int>();
    t.n_truncated = row.at("n_truncated").get<int>();
    t.best_cost = row.at("best_cost").get<int>();
    t.shortest_trace_solved = row.at("shortest_trace_solved").get<int>();
    t.shortest_trace_optimal = row.at("shortest_trace_optimal").get<int>();
    t.mean_trace_optimal = row.at("mean_trace_optimal").get<double>();
    t.reference_trace_len = row.at("reference_trace_len").get<int>();
    report.tasks.push_back(t);
  }
  return report;
}

// Line-delimited per-task records plus a summary block.
inline void save_eval_report(const EvalReport& report, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  const auto j = eval_report_to_json(report);
  std::ofstream summary(fs::path(dir) / "report.json", std::ios::binary);
  if (!summary) throw IoError("eval: cannot write report in " + dir);
  nlohmann::json head = j;
  head.erase("tasks");
  summary << head.dump(2) << '\n';
  std::ofstream rows(fs::path(dir) / "report_tasks.jsonl", std::ios::binary);
  for (const auto& row : j.at("tasks")) rows << row.dump() << '\n';
  std::ofstream full(fs::path(dir) / "report_full.json", std::ios::binary);
  full << j.dump(2) << '\n';
}

// (bin_lo, bin_hi, count) triples over per-task average-on-optimal lengths.
struct HistogramBin {
  double lo{}, hi{};
  int count{};
};

inline std::vector<HistogramBin> average_on_optimal_histogram(
    const EvalReport& report, int bins) {
  std::vector<double> values;
  for (const auto& t : report.tasks) {
    if (t.mean_trace_optimal >= 0) values.push_back(t.mean_trace_optimal);
  }
  std::vector<HistogramBin> out;
  if (values.empty() || bins < 1) return out;
  const auto [lo_it, hi_it] = std::minmax_element(values.begin(), values.end());
  const double lo = *lo_it;
  const double hi = std::max(*hi_it, lo + 1.0);
  const double width = (hi - lo) / bins;
  out.resize(static_cast<std::size_t>(bins));
  for (int b = 0; b < bins; ++b) {
    out[static_cast<std::size_t>(b)] = {lo + b * width, lo + (b + 1) * width, 0};
  }
  for (double v : values) {
    int b = static_cast<int>((v - lo) / width);
    b = std::min(b, bins - 1);
    ++out[static_cast<std::size_t>(b)].count;
  }
  return out;
}

}  // namespace searchtrace
