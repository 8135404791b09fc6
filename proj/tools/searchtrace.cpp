// Command-line entry point for the full pipeline:
//
//   searchtrace gen-dataset  generate + solve + tokenize a task corpus
//   searchtrace stats        sequence-length distributions of a dataset
//   searchtrace train        teacher-forcing training on one variant
//   searchtrace eval         sampling metrics / exact-match for a checkpoint
//   searchtrace bootstrap    iterative search dynamics shortening
//   searchtrace report       merge eval reports into plot-ready CSV tables
//
// Every run writes a resolved-config snapshot into its output directory.
// Options can come from a config file (--config, INI format, same keys as
// the long flags); command-line flags win. SEARCHTRACE_SEED provides the
// seed when --seed is absent. Exit codes: 0 success, 1 pipeline error,
// 2 usage error.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "searchtrace/bootstrap.hpp"
#include "searchtrace/checkpoint.hpp"
#include "searchtrace/dataset.hpp"
#include "searchtrace/sampler.hpp"
#include "searchtrace/trainer.hpp"

namespace fs = std::filesystem;
using namespace searchtrace;

namespace {

std::uint64_t resolve_seed(const CLI::App* cmd, std::uint64_t seed_flag) {
  if (cmd->count("--seed") > 0) return seed_flag;
  if (const char* env = std::getenv("SEARCHTRACE_SEED")) {
    return std::strtoull(env, nullptr, 10);
  }
  return seed_flag;
}

void write_snapshot(const CLI::App* cmd, const std::string& out_dir) {
  fs::create_directories(out_dir);
  std::ofstream out(fs::path(out_dir) / "resolved_config.ini",
                    std::ios::binary);
  out << "[" << cmd->get_name() << "]\n" << cmd->config_to_str(true, false);
}

TaskKind parse_kind(const std::string& kind) {
  if (kind == "maze") return TaskKind::Maze;
  if (kind == "sokoban") return TaskKind::Sokoban;
  throw ConfigError("unknown task kind '" + kind + "'");
}

SearchMode parse_mode(const std::string& mode) {
  if (mode == "det" || mode == "deterministic") return SearchMode::Deterministic;
  if (mode == "nondet" || mode == "nondeterministic") {
    return SearchMode::NonDeterministic;
  }
  throw ConfigError("unknown mode '" + mode + "'");
}

Variant parse_variant(const std::string& variant) {
  if (variant == "solution" || variant == "solution_only") {
    return Variant::SolutionOnly;
  }
  if (variant == "search" || variant == "search_augmented") {
    return Variant::SearchAugmented;
  }
  throw ConfigError("unknown variant '" + variant + "'");
}

std::string csv_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

// Column layout is mirrored by the README; report consumers rely on these
// exact header strings.
constexpr const char* kSummaryHeader =
    "label,solved_pct,optimal_pct,swc,ilr_solved,ilr_optimal";
constexpr const char* kHistHeader = "label,bin_lo,bin_hi,count";
constexpr const char* kScatterHeader =
    "label,task_id,ref_len,model_mean_len,model_shortest_len";

int run_cli(int argc, char** argv) {
  CLI::App app{"A* execution-trace language modeling workbench"};
  app.require_subcommand(1);
  app.set_config("--config", "", "INI config file; flags override it");

  // --- gen-dataset ---------------------------------------------------------
  auto* gen = app.add_subcommand("gen-dataset", "Generate a task corpus");
  std::string gen_kind = "maze", gen_mode = "det", gen_out;
  BuildConfig build;
  std::uint64_t gen_seed = 0;
  gen->add_option("--kind", gen_kind, "maze|sokoban");
  gen->add_option("--size", build.size, "grid side length");
  gen->add_option("--mode", gen_mode, "det|nondet");
  gen->add_option("--train", build.n_train, "train task count")->required();
  gen->add_option("--test", build.n_test, "test task count")->required();
  gen->add_option("--max-tokens", build.max_response_tokens,
                  "drop search-augmented responses longer than this");
  gen->add_option("--seed", gen_seed, "global seed");
  gen->add_option("--workers", build.workers, "worker threads (0 = cores)");
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->callback([&] {
    build.kind = parse_kind(gen_kind);
    build.mode = parse_mode(gen_mode);
    if (build.kind == TaskKind::Sokoban) build.size = 7;
    build.seed = resolve_seed(gen, gen_seed);
    write_snapshot(gen, gen_out);
    const Dataset ds = build_dataset(build);
    save_dataset(ds, gen_out);
    std::cout << "dataset written to " << gen_out << " (train "
              << ds.train.size() / 2 << " tasks, test " << ds.test.size() / 2
              << " tasks, vocab " << ds.vocab.size() << ")\n";
  });

  // --- stats ---------------------------------------------------------------
  auto* stats = app.add_subcommand("stats", "Dataset length distributions");
  std::string stats_dataset, stats_out;
  stats->add_option("--dataset", stats_dataset, "dataset directory")->required();
  stats->add_option("--out", stats_out, "output file (default stdout)");
  stats->callback([&] {
    const Dataset ds = load_dataset(stats_dataset);
    const auto report = dataset_stats(ds);
    if (stats_out.empty()) {
      std::cout << report.dump(2) << '\n';
    } else {
      const auto parent = fs::path(stats_out).parent_path();
      if (!parent.empty()) fs::create_directories(parent);
      std::ofstream out(stats_out, std::ios::binary);
      out << report.dump(2) << '\n';
      std::cout << "stats written to " << stats_out << '\n';
    }
  });

  // --- train ---------------------------------------------------------------
  auto* train = app.add_subcommand("train", "Train a model on one variant");
  std::string train_dataset, train_variant = "search", train_out, train_resume;
  int train_slice = 0;
  ModelConfig model_config;  // desk-scale defaults
  model_config.layers = 2;
  model_config.heads = 2;
  model_config.head_dim = 16;
  TrainConfig train_config;
  train_config.total_steps = 5000;
  train_config.batch_size = 16;
  std::uint64_t train_seed = 0;
  train->add_option("--dataset", train_dataset, "dataset directory")->required();
  train->add_option("--variant", train_variant, "solution|search");
  train->add_option("--out", train_out, "output directory")->required();
  train->add_option("--resume", train_resume, "checkpoint to continue from");
  train->add_option("--slice", train_slice,
                    "train on the first N tasks after sorting by task id");
  train->add_option("--layers", model_config.layers, "encoder/decoder layers");
  train->add_option("--heads", model_config.heads, "attention heads");
  train->add_option("--head-dim", model_config.head_dim, "feature dim per head");
  train->add_option("--rope-base", model_config.rope_base, "RoPE frequency base");
  train->add_option("--steps", train_config.total_steps, "total training steps");
  train->add_option("--warmup", train_config.warmup_steps, "warmup steps");
  train->add_option("--batch", train_config.batch_size, "batch size");
  train->add_option("--lr", train_config.peak_lr, "peak learning rate");
  train->add_option("--weight-decay", train_config.weight_decay, "AdamW decay");
  train->add_option("--max-grad-norm", train_config.max_grad_norm,
                    "gradient clip (0 = off)");
  train->add_option("--checkpoint-interval", train_config.checkpoint_interval,
                    "steps between checkpoints (0 = final only)");
  train->add_option("--seed", train_seed, "training seed");
  train->add_option("--workers", train_config.workers, "worker threads");
  train->callback([&] {
    train_config.seed = resolve_seed(train, train_seed);
    write_snapshot(train, train_out);
    Dataset ds = load_dataset(train_dataset);
    if (train_slice > 0) ds = slice_dataset(ds, train_slice);
    const Variant variant = parse_variant(train_variant);
    const auto examples = to_batch_examples(ds.train, variant, ds.vocab);
    std::ofstream metrics(fs::path(train_out) / "metrics.jsonl",
                          std::ios::binary | std::ios::app);

    auto make_trainer = [&]() {
      if (!train_resume.empty()) {
        const Checkpoint ckpt = load_checkpoint(train_resume);
        return Trainer::resume(ckpt, examples, train_config);
      }
      model_config.vocab_size = ds.vocab.size();
      model_config.max_seq_len = ds.manifest.max_response_tokens + 16;
      return Trainer(init_params<float>(model_config, train_config.seed),
                     examples, train_config);
    };
    Trainer trainer = make_trainer();
    trainer.run(nullptr, &metrics, train_out, ds.manifest.vocab_file);
    const std::string final_path =
        (fs::path(train_out) / "checkpoint_final.stckpt").string();
    save_checkpoint(final_path, trainer.make_checkpoint(ds.manifest.vocab_file));
    std::cout << "trained " << trainer.step() << " steps; checkpoint at "
              << final_path << '\n';
  });

  // --- eval ----------------------------------------------------------------
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  std::string eval_ckpt, eval_dataset, eval_out, eval_split = "test",
              eval_variant = "search", eval_metrics = "any-optimal",
              eval_label;
  EvalConfig eval_config;
  std::uint64_t eval_seed = 0;
  eval->add_option("--checkpoint", eval_ckpt, "checkpoint file")->required();
  eval->add_option("--dataset", eval_dataset, "dataset directory")->required();
  eval->add_option("--out", eval_out, "output directory")->required();
  eval->add_option("--split", eval_split, "train|test");
  eval->add_option("--variant", eval_variant, "solution|search");
  eval->add_option("--n-samples", eval_config.n_samples, "samples per task");
  eval->add_option("--temperature", eval_config.temperature,
                   "sampling temperature");
  eval->add_option("--max-len", eval_config.max_len, "response length cap");
  eval->add_option("--metrics", eval_metrics,
                   "comma list of any-optimal,exact-match");
  eval->add_option("--label", eval_label, "report label");
  eval->add_option("--seed", eval_seed, "sampling seed");
  eval->add_option("--workers", eval_config.workers, "worker threads");
  eval->callback([&] {
    eval_config.seed = resolve_seed(eval, eval_seed);
    write_snapshot(eval, eval_out);
    const Checkpoint ckpt = load_checkpoint(eval_ckpt);
    const Dataset ds = load_dataset(eval_dataset);
    if (ckpt.params.config.vocab_size != ds.vocab.size()) {
      throw ConfigError("eval: checkpoint/dataset vocabulary mismatch");
    }
    const Variant variant = parse_variant(eval_variant);
    eval_config.label = eval_label.empty()
                            ? fs::path(eval_ckpt).stem().string()
                            : eval_label;
    nlohmann::json extras;
    if (eval_metrics.find("any-optimal") != std::string::npos) {
      const EvalReport report =
          evaluate_model(ckpt.params, ds, eval_split, variant, eval_config);
      save_eval_report(report, eval_out);
      std::cout << "solved " << csv_double(report.solved_pct) << "% optimal "
                << csv_double(report.optimal_pct) << "% swc "
                << csv_double(report.swc) << " ilr_opt "
                << csv_double(report.ilr_optimal) << '\n';
    }
    if (eval_metrics.find("exact-match") != std::string::npos) {
      const double em =
          exact_match_eval(ckpt.params, ds, eval_split, variant,
                           eval_config.max_len, eval_config.workers);
      extras["exact_match"] = em;
      std::cout << "exact_match " << csv_double(em) << '\n';
    }
    if (!extras.empty()) {
      fs::create_directories(eval_out);
      std::ofstream out(fs::path(eval_out) / "exact_match.json",
                        std::ios::binary);
      extras["split"] = eval_split;
      extras["variant"] = eval_variant;
      out << extras.dump(2) << '\n';
    }
  });

  // --- bootstrap -----------------------------------------------------------
  auto* boot = app.add_subcommand("bootstrap", "Search dynamics bootstrapping");
  std::string boot_ckpt, boot_dataset, boot_out;
  BootstrapConfig boot_config;
  std::uint64_t boot_seed = 0;
  boot->add_option("--checkpoint", boot_ckpt, "starting checkpoint")->required();
  boot->add_option("--dataset", boot_dataset, "nondeterministic dataset dir")
      ->required();
  boot->add_option("--out", boot_out, "output directory")->required();
  boot->add_option("--samples", boot_config.samples_per_task,
                   "samples per task");
  boot->add_option("--finetune-steps", boot_config.finetune_steps,
                   "steps per fine-tune round");
  boot->add_option("--iterations", boot_config.iterations, "bootstrap rounds");
  boot->add_option("--eval-samples", boot_config.eval_samples,
                   "samples per task for round evaluation");
  boot->add_option("--max-len", boot_config.max_len, "sampling length cap");
  boot->add_option("--lr", boot_config.finetune.peak_lr, "fine-tune peak lr");
  boot->add_option("--warmup", boot_config.finetune.warmup_steps,
                   "fine-tune warmup steps");
  boot->add_option("--batch", boot_config.finetune.batch_size,
                   "fine-tune batch size");
  boot->add_option("--seed", boot_seed, "bootstrap seed");
  boot->add_option("--workers", boot_config.workers, "worker threads");
  boot->callback([&] {
    boot_config.seed = resolve_seed(boot, boot_seed);
    boot_config.finetune.workers = boot_config.workers;
    write_snapshot(boot, boot_out);
    const Checkpoint ckpt = load_checkpoint(boot_ckpt);
    const Dataset ds = load_dataset(boot_dataset);
    if (ckpt.params.config.vocab_size != ds.vocab.size()) {
      throw ConfigError("bootstrap: checkpoint/dataset vocabulary mismatch");
    }
    const auto result = bootstrap_loop(ckpt.params, ds, boot_config, boot_out);
    for (const auto& report : result.reports) {
      std::cout << "round " << report.round << ": adoption "
                << csv_double(report.adoption_rate) << " mean_len "
                << csv_double(report.mean_old_len) << " -> "
                << csv_double(report.mean_new_len) << " ilr_opt "
                << csv_double(report.eval.ilr_optimal) << '\n';
    }
  });

  // --- report --------------------------------------------------------------
  auto* rep = app.add_subcommand("report", "Merge eval reports into CSV");
  std::vector<std::string> rep_inputs;
  std::string rep_out;
  int rep_bins = 10;
  rep->add_option("--input", rep_inputs,
                  "eval output dirs or report_full.json files")
      ->required();
  rep->add_option("--out", rep_out, "output directory")->required();
  rep->add_option("--bins", rep_bins, "histogram bin count");
  rep->callback([&] {
    write_snapshot(rep, rep_out);
    std::vector<EvalReport> reports;
    for (const auto& input : rep_inputs) {
      fs::path path(input);
      if (fs::is_directory(path)) path /= "report_full.json";
      std::ifstream in(path, std::ios::binary);
      if (!in) throw IoError("report: cannot read " + path.string());
      nlohmann::json j;
      in >> j;
      reports.push_back(eval_report_from_json(j));
    }

    std::ofstream summary(fs::path(rep_out) / "summary.csv", std::ios::binary);
    summary << kSummaryHeader << '\n';
    for (const auto& r : reports) {
      summary << r.label << ',' << csv_double(r.solved_pct) << ','
              << csv_double(r.optimal_pct) << ',' << csv_double(r.swc) << ','
              << csv_double(r.ilr_solved) << ',' << csv_double(r.ilr_optimal)
              << '\n';
    }

    std::ofstream hist(fs::path(rep_out) / "avg_on_optimal_hist.csv",
                       std::ios::binary);
    hist << kHistHeader << '\n';
    for (const auto& r : reports) {
      for (const auto& bin : average_on_optimal_histogram(r, rep_bins)) {
        hist << r.label << ',' << csv_double(bin.lo) << ','
             << csv_double(bin.hi) << ',' << bin.count << '\n';
      }
    }

    std::ofstream scatter(fs::path(rep_out) / "trace_scatter.csv",
                          std::ios::binary);
    scatter << kScatterHeader << '\n';
    for (const auto& r : reports) {
      for (const auto& t : r.tasks) {
        if (t.mean_trace_optimal < 0) continue;
        scatter << r.label << ',' << detail::hex_id(t.task_id) << ','
                << t.reference_trace_len << ','
                << csv_double(t.mean_trace_optimal) << ','
                << t.shortest_trace_optimal << '\n';
      }
    }
    std::cout << "report tables written to " << rep_out << '\n';
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run_cli(argc, argv);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
