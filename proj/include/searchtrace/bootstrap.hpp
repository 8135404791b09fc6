#pragma once

// Search dynamics bootstrapping: sample the trained model on its own
// training prompts, keep the shortest sampled response that still parses and
// ends in an optimal plan when it is strictly shorter than the stored one,
// fine-tune on the shortened dataset, and repeat. The test split never
// enters dataset construction; these operations only accept train rows.
//
// "Shorter" is measured in total response tokens (trace + plan + framing).
// Optimal plans for a task all have the same token count, so this is
// equivalent to trace shortening. Ties among equally short qualifying
// samples resolve to the lowest sample index.

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "searchtrace/common.hpp"
#include "searchtrace/dataset.hpp"
#include "searchtrace/sampler.hpp"
#include "searchtrace/trainer.hpp"

namespace searchtrace {

struct BootstrapConfig {
  int samples_per_task{32};
  int finetune_steps{10000};
  int iterations{3};
  std::uint64_t seed{0};
  double temperature{1.0};
  int max_len{0};  // 0: dataset cap + slack
  int eval_samples{32};
  int workers{0};
  // Schedule template for each fine-tune round; the total step count is
  // overridden by finetune_steps and the schedule restarts each round.
  TrainConfig finetune{.peak_lr = 1e-3,
                       .warmup_steps = 200,
                       .total_steps = 10000,
                       .batch_size = 16};
};

struct BootstrapRecord {
  std::uint64_t task_id{};
  enum class Origin { Model, Original } origin{Origin::Original};
  int old_len{};
  int new_len{};
};

struct ShortTrainResult {
  std::vector<SequenceExample> train;
  std::vector<BootstrapRecord> records;
};

namespace detail {

// Core adoption rule, sampler-injectable for testing.
inline ShortTrainResult build_short_train(
    const DatasetManifest& manifest, const Vocabulary& vocab,
    const std::vector<SequenceExample>& train_examples,
    const BootstrapConfig& config, const TaskSampler& sampler) {
  if (manifest.mode != SearchMode::NonDeterministic) {
    throw ConfigError(
        "bootstrap: requires a non-deterministic search-augmented dataset");
  }
  ShortTrainResult result;
  result.train = train_examples;

  std::vector<std::size_t> sa_rows;
  for (std::size_t i = 0; i < train_examples.size(); ++i) {
    if (train_examples[i].variant == Variant::SearchAugmented) {
      sa_rows.push_back(i);
    }
  }
  if (sa_rows.empty()) {
    throw ConfigError("bootstrap: no search-augmented rows in train split");
  }
  result.records.resize(sa_rows.size());

  parallel_for(sa_rows.size(), config.workers, [&](std::size_t r) {
    const std::size_t row = sa_rows[r];
    const SequenceExample& original = train_examples[row];
    const Task task =
        decode_prompt(original.prompt, manifest.kind, manifest.grid_size);
    const int oracle = oracle_shortest_cost(task);
    const int old_len = static_cast<int>(original.response.size());

    const auto samples = sampler(r, task, original.prompt);
    int best_len = old_len;
    const TokenList* best_tokens = nullptr;
    for (const auto& sample : samples) {
      if (sample.truncated) continue;
      if (static_cast<int>(sample.tokens.size()) >= best_len) continue;
      const DecodeResult parsed = decode_response(sample.tokens, task, &vocab);
      if (!parsed.ok) continue;
      if (!validate_plan(task, parsed.plan, oracle).optimal()) continue;
      best_len = static_cast<int>(sample.tokens.size());
      best_tokens = &sample.tokens;
    }

    BootstrapRecord record;
    record.task_id = original.task_id;
    record.old_len = old_len;
    if (best_tokens != nullptr) {
      SequenceExample shortened = original;
      shortened.response = *best_tokens;
      shortened.trace_len = response_trace_tokens(*best_tokens);
      shortened.plan_len =
          best_len - shortened.trace_len - 2;  // bos/eos framing
      result.train[row] = std::move(shortened);
      record.origin = BootstrapRecord::Origin::Model;
      record.new_len = best_len;
    } else {
      record.origin = BootstrapRecord::Origin::Original;
      record.new_len = old_len;
    }
    result.records[r] = record;
  });
  return result;
}

}  // namespace detail

// Samples `samples_per_task` responses per training task from the model and
// applies the adoption rule above.
template <typename Scalar>
ShortTrainResult build_short_dataset(
    const ModelParameters<Scalar>& params, const DatasetManifest& manifest,
    const Vocabulary& vocab, const std::vector<SequenceExample>& train_examples,
    const BootstrapConfig& config) {
  if (params.config.vocab_size != vocab.size()) {
    throw ConfigError("bootstrap: model/dataset vocabulary mismatch");
  }
  const int max_len = config.max_len > 0
                          ? config.max_len
                          : manifest.max_response_tokens + 16;
  const TaskSampler sampler = [&](std::size_t, const Task&,
                                  const TokenList& prompt) {
    const std::vector<int> prompt_ids = vocab.encode(prompt);
    const std::uint64_t base = mix_seed(config.seed, prompt_task_id(prompt));
    std::vector<SampleOutcome> out;
    out.reserve(static_cast<std::size_t>(config.samples_per_task));
    for (int j = 0; j < config.samples_per_task; ++j) {
      out.push_back(sample_response(params, vocab, prompt_ids,
                                    mix_seed(base, j), max_len,
                                    config.temperature));
    }
    return out;
  };
  return detail::build_short_train(manifest, vocab, train_examples, config,
                                   sampler);
}

// Continues optimization on the shortened dataset with a fresh schedule
// (restart of warmup + cosine at the same peak rate) and fresh optimizer
// moments. steps = 0 returns the input parameters untouched.
template <typename Scalar>
ModelParameters<Scalar> finetune(const ModelParameters<Scalar>& params,
                                 const std::vector<SequenceExample>& train,
                                 const Vocabulary& vocab, int steps,
                                 TrainConfig schedule,
                                 std::ostream* metrics = nullptr) {
  if (steps == 0) return params;
  schedule.total_steps = steps;
  if (schedule.warmup_steps >= steps) schedule.warmup_steps = steps / 2;
  const auto examples =
      to_batch_examples(train, Variant::SearchAugmented, vocab);
  Trainer trainer(params, examples, schedule);
  trainer.run(nullptr, metrics);
  return trainer.params();
}

struct IterationReport {
  int round{};
  double adoption_rate{};
  double mean_old_len{};
  double mean_new_len{};
  EvalReport eval;
};

inline nlohmann::json iteration_report_to_json(const IterationReport& r) {
  auto eval = eval_report_to_json(r.eval);
  eval.erase("tasks");
  return nlohmann::json{{"round", r.round},
                        {"adoption_rate", r.adoption_rate},
                        {"mean_old_len", r.mean_old_len},
                        {"mean_new_len", r.mean_new_len},
                        {"eval", eval}};
}

struct BootstrapResult {
  std::vector<SequenceExample> final_train;
  ModelParameters<float> final_params;
  std::vector<IterationReport> reports;
};

// Alternates build_short_dataset and finetune, evaluating each round's model
// on the held-out test split. Artifacts land under out_dir when provided.
inline BootstrapResult bootstrap_loop(const ModelParameters<float>& initial,
                                      const Dataset& ds,
                                      const BootstrapConfig& config,
                                      const std::string& out_dir = "") {
  if (config.iterations < 1) {
    throw ConfigError("bootstrap: iterations must be >= 1");
  }
  BootstrapResult result;
  result.final_params = initial;
  result.final_train = ds.train;

  for (int round = 1; round <= config.iterations; ++round) {
    BootstrapConfig round_config = config;
    round_config.seed = mix_seed(config.seed, static_cast<std::uint64_t>(round));
    auto shortened =
        build_short_dataset(result.final_params, ds.manifest, ds.vocab,
                            result.final_train, round_config);

    IterationReport report;
    report.round = round;
    double old_sum = 0, new_sum = 0, adopted = 0;
    for (const auto& rec : shortened.records) {
      old_sum += rec.old_len;
      new_sum += rec.new_len;
      adopted += rec.origin == BootstrapRecord::Origin::Model ? 1 : 0;
    }
    const double n = static_cast<double>(shortened.records.size());
    report.adoption_rate = adopted / n;
    report.mean_old_len = old_sum / n;
    report.mean_new_len = new_sum / n;

    result.final_train = std::move(shortened.train);
    TrainConfig schedule = config.finetune;
    schedule.seed = mix_seed(config.seed, 0xF17E + static_cast<std::uint64_t>(round));
    result.final_params =
        finetune(result.final_params, result.final_train, ds.vocab,
                 config.finetune_steps, schedule);

    EvalConfig eval_config;
    eval_config.n_samples = config.eval_samples;
    eval_config.seed = mix_seed(config.seed, 0xE7A1 + static_cast<std::uint64_t>(round));
    eval_config.workers = config.workers;
    eval_config.label = "round_" + std::to_string(round);
    report.eval = evaluate_model(result.final_params, ds, "test",
                                 Variant::SearchAugmented, eval_config);

    if (!out_dir.empty()) {
      namespace fs = std::filesystem;
      fs::create_directories(out_dir);
      std::ofstream out(fs::path(out_dir) /
                            ("round_" + std::to_string(round) + ".json"),
                        std::ios::binary);
      out << iteration_report_to_json(report).dump(2) << '\n';
      Dataset round_ds;
      round_ds.manifest = ds.manifest;
      round_ds.vocab = ds.vocab;
      round_ds.train = result.final_train;
      round_ds.test = ds.test;
      save_dataset(round_ds, (fs::path(out_dir) /
                              ("dataset_round_" + std::to_string(round)))
                                 .string());
      Checkpoint ckpt;
      ckpt.params = result.final_params;
      ckpt.step = config.finetune_steps;
      ckpt.vocab_ref = ds.manifest.vocab_file;
      save_checkpoint((fs::path(out_dir) /
                       ("checkpoint_round_" + std::to_string(round) + ".stckpt"))
                          .string(),
                      ckpt);
      save_eval_report(report.eval,
                       (fs::path(out_dir) / ("eval_round_" + std::to_string(round)))
                           .string());
    }
    result.reports.push_back(std::move(report));
  }
  return result;
}

}  // namespace searchtrace
