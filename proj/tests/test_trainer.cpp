#include "searchtrace/trainer.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "loss_oracle.hpp"
#include "searchtrace/dataset.hpp"

namespace searchtrace {
namespace {

using testing::naive_loss;

ModelConfig tiny_config(int vocab) {
  ModelConfig c;
  c.layers = 2;
  c.heads = 2;
  c.head_dim = 8;
  c.vocab_size = vocab;
  c.max_seq_len = 512;
  return c;
}

std::vector<BatchExample> random_batch(int vocab, int count, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<BatchExample> batch;
  for (int d = 0; d < count; ++d) {
    BatchExample ex;
    ex.prompt = {0};
    for (int i = 0; i < 3 + static_cast<int>(rng.below(4)); ++i) {
      ex.prompt.push_back(2 + static_cast<int>(rng.below(vocab - 2)));
    }
    ex.prompt.push_back(1);
    ex.response = {0};
    for (int i = 0; i < 2 + static_cast<int>(rng.below(6)); ++i) {
      ex.response.push_back(2 + static_cast<int>(rng.below(vocab - 2)));
    }
    ex.response.push_back(1);
    batch.push_back(std::move(ex));
  }
  return batch;
}

TEST(BatchLoss, MatchesNaiveReimplementation) {
  const auto params = init_params<double>(tiny_config(11), 5);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto batch = random_batch(11, 3, seed);
    const double fast = batch_loss<double>(params, batch, nullptr);
    const double naive = naive_loss(params, batch);
    EXPECT_NEAR(fast, naive, 1e-10 * std::max(1.0, std::abs(naive)));
  }
}

TEST(BatchLoss, UniformLogitsGiveLogVocab) {
  auto params = init_params<double>(tiny_config(13), 6);
  params.output_proj.setZero();
  const auto batch = random_batch(13, 4, 1);
  EXPECT_NEAR(batch_loss<double>(params, batch, nullptr), std::log(13.0), 1e-6);
}

TEST(BatchLoss, BosEosResponseIsEosNll) {
  const auto params = init_params<double>(tiny_config(9), 7);
  BatchExample ex;
  ex.prompt = {0, 2, 1};
  ex.response = {0, 1};
  const double loss = batch_loss<double>(params, {ex}, nullptr);
  const auto logits = decode(params, encode(params, ex.prompt), {0});
  double denom = 0.0;
  for (int v = 0; v < 9; ++v) denom += std::exp(logits(0, v));
  EXPECT_NEAR(loss, -std::log(std::exp(logits(0, 1)) / denom), 1e-12);
}

TEST(BatchLoss, GradientIsMeanOverExamples) {
  const auto params = init_params<double>(tiny_config(11), 8);
  const auto batch = random_batch(11, 2, 3);

  auto grads_pair = zeros_like(params);
  batch_loss<double>(params, batch, &grads_pair);
  auto grads_a = zeros_like(params);
  batch_loss<double>(params, {batch[0]}, &grads_a);
  auto grads_b = zeros_like(params);
  batch_loss<double>(params, {batch[1]}, &grads_b);

  auto lp = param_list(grads_pair);
  auto la = param_list(grads_a);
  auto lb = param_list(grads_b);
  for (std::size_t i = 0; i < lp.size(); ++i) {
    const Mat<double> expected = (*la[i] + *lb[i]) / 2.0;
    EXPECT_LT((*lp[i] - expected).cwiseAbs().maxCoeff(), 1e-12);
  }

  // A batch holding one example twice equals the single-example step.
  auto grads_dup = zeros_like(params);
  batch_loss<double>(params, {batch[0], batch[0]}, &grads_dup);
  auto ld = param_list(grads_dup);
  for (std::size_t i = 0; i < ld.size(); ++i) {
    EXPECT_LT((*ld[i] - *la[i]).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(BatchLoss, WorkerCountDoesNotChangeResults) {
  const auto params = init_params<float>(tiny_config(11), 9);
  const auto batch = random_batch(11, 5, 4);
  auto g1 = zeros_like(params);
  auto g2 = zeros_like(params);
  const double l1 = batch_loss<float>(params, batch, &g1, 1);
  const double l2 = batch_loss<float>(params, batch, &g2, 2);
  EXPECT_EQ(l1, l2);
  auto p1 = param_list(g1);
  auto p2 = param_list(g2);
  for (std::size_t i = 0; i < p1.size(); ++i) {
    EXPECT_TRUE(p1[i]->isApprox(*p2[i], 0.0f));
  }
}

TEST(LrSchedule, WarmupAndCosineShape) {
  TrainConfig config;
  config.peak_lr = 3e-3;
  config.warmup_steps = 100;
  config.total_steps = 1100;
  EXPECT_DOUBLE_EQ(lr_schedule(0, config), 0.0);
  EXPECT_DOUBLE_EQ(lr_schedule(50, config), 1.5e-3);
  EXPECT_DOUBLE_EQ(lr_schedule(100, config), 3e-3);
  EXPECT_NEAR(lr_schedule(600, config), 1.5e-3, 1e-12);
  EXPECT_NEAR(lr_schedule(1100, config), 0.0, 1e-18);
  double max_lr = 0;
  double prev = 0;
  for (int s = 0; s <= 1100; ++s) {
    const double lr = lr_schedule(s, config);
    max_lr = std::max(max_lr, lr);
    EXPECT_LT(std::abs(lr - prev), config.peak_lr * 0.05);  // no jumps
    prev = lr;
  }
  EXPECT_DOUBLE_EQ(max_lr, config.peak_lr);
}

TEST(AdamW, ZeroGradZeroDecayIsIdentity) {
  auto params = init_params<float>(tiny_config(9), 11);
  const auto before = params;
  auto grads = zeros_like(params);
  auto m1 = zeros_like(params);
  auto m2 = zeros_like(params);
  TrainConfig config;
  config.weight_decay = 0.0;
  adamw_step(params, grads, m1, m2, 1, 1e-3, config);
  auto pa = param_list(params);
  auto pb = param_list(const_cast<ModelParameters<float>&>(before));
  for (std::size_t i = 0; i < pa.size(); ++i) {
    EXPECT_TRUE(pa[i]->isApprox(*pb[i], 0.0f));
  }
}

TEST(AdamW, FirstStepWithUnitGradientMovesByLr) {
  auto params = init_params<double>(tiny_config(9), 12);
  auto grads = zeros_like(params);
  auto m1 = zeros_like(params);
  auto m2 = zeros_like(params);
  grads.embedding(3, 2) = 1.0;
  const double before = params.embedding(3, 2);
  const double untouched = params.embedding(4, 2);
  TrainConfig config;
  config.weight_decay = 0.0;
  const double eps_lr = 1e-4;
  adamw_step(params, grads, m1, m2, 1, eps_lr, config);
  // Bias-corrected m-hat = v-hat = 1 at step 1, so the update is ~lr.
  EXPECT_NEAR(before - params.embedding(3, 2), eps_lr, eps_lr * 1e-6);
  EXPECT_DOUBLE_EQ(params.embedding(4, 2), untouched);
}

TEST(Trainer, DeterministicRunsAndResume) {
  const Dataset ds = [] {
    BuildConfig config;
    config.kind = TaskKind::Maze;
    config.size = 3;
    config.mode = SearchMode::Deterministic;
    config.n_train = 8;
    config.n_test = 2;
    config.seed = 3;
    return build_dataset(config);
  }();
  const auto examples =
      to_batch_examples(ds.train, Variant::SolutionOnly, ds.vocab);

  ModelConfig mc = tiny_config(ds.vocab.size());
  TrainConfig tc;
  tc.total_steps = 15;
  tc.warmup_steps = 5;
  tc.batch_size = 4;
  tc.peak_lr = 1e-3;
  tc.seed = 42;
  tc.checkpoint_interval = 0;

  const auto run_all = [&]() {
    Trainer t(init_params<float>(mc, 1), examples, tc);
    std::vector<double> losses;
    t.run([&](const StepRecord& rec) {
      losses.push_back(rec.loss);
      return true;
    });
    return std::pair{losses, t.make_checkpoint("v")};
  };
  const auto [losses_a, ckpt_a] = run_all();
  const auto [losses_b, ckpt_b] = run_all();
  EXPECT_EQ(losses_a, losses_b);

  // Interrupt at step 10, resume, and compare the tail.
  Trainer first(init_params<float>(mc, 1), examples, tc);
  std::vector<double> head;
  first.run([&](const StepRecord& rec) {
    head.push_back(rec.loss);
    return rec.step < 10;
  });
  Trainer resumed = Trainer::resume(first.make_checkpoint("v"), examples, tc);
  std::vector<double> tail;
  resumed.run([&](const StepRecord& rec) {
    tail.push_back(rec.loss);
    return true;
  });
  ASSERT_EQ(head.size(), 10u);
  ASSERT_EQ(tail.size(), 5u);
  for (int i = 0; i < 5; ++i) {
    EXPECT_EQ(tail[static_cast<std::size_t>(i)],
              losses_a[static_cast<std::size_t>(10 + i)]);
  }

  // Bit-identical final parameters via checkpoint bytes.
  const auto dir = std::filesystem::temp_directory_path();
  const auto pa = (dir / "st_tr_a.bin").string();
  const auto pb = (dir / "st_tr_b.bin").string();
  save_checkpoint(pa, ckpt_a);
  save_checkpoint(pb, resumed.make_checkpoint("v"));
  std::ifstream fa(pa, std::ios::binary), fb(pb, std::ios::binary);
  const std::string bytes_a((std::istreambuf_iterator<char>(fa)),
                            std::istreambuf_iterator<char>());
  const std::string bytes_b((std::istreambuf_iterator<char>(fb)),
                            std::istreambuf_iterator<char>());
  EXPECT_EQ(bytes_a, bytes_b);
  std::filesystem::remove(pa);
  std::filesystem::remove(pb);
}

TEST(Trainer, BatchScheduleCoversDataset) {
  const auto examples = random_batch(9, 10, 5);
  TrainConfig tc;
  tc.total_steps = 6;
  tc.warmup_steps = 1;
  tc.batch_size = 4;
  Trainer t(init_params<float>(tiny_config(9), 2), examples, tc);
  // One epoch = ceil(10/4) = 3 steps covering all ten examples.
  std::size_t total = 0;
  for (int s = 0; s < 3; ++s) total += t.batch_for_step(s).size();
  EXPECT_EQ(total, 10u);
  EXPECT_EQ(t.batch_for_step(0).size(), 4u);
  EXPECT_EQ(t.batch_for_step(2).size(), 2u);  // short tail batch
}

TEST(Trainer, DivergenceAborts) {
  const auto examples = random_batch(9, 6, 6);
  TrainConfig tc;
  tc.total_steps = 400;
  tc.warmup_steps = 1;
  tc.batch_size = 6;
  tc.peak_lr = 50.0;  // absurd on purpose
  Trainer t(init_params<float>(tiny_config(9), 3), examples, tc);
  EXPECT_THROW(t.run(), TrainingError);
}

TEST(Trainer, LossDecreasesWhenOverfittingTenExamples) {
  const Dataset ds = [] {
    BuildConfig config;
    config.kind = TaskKind::Maze;
    config.size = 3;
    config.mode = SearchMode::Deterministic;
    config.n_train = 10;
    config.n_test = 1;
    config.seed = 17;
    return build_dataset(config);
  }();
  const auto examples =
      to_batch_examples(ds.train, Variant::SearchAugmented, ds.vocab);
  ASSERT_EQ(examples.size(), 10u);

  ModelConfig mc;
  mc.layers = 2;
  mc.heads = 2;
  mc.head_dim = 16;
  mc.vocab_size = ds.vocab.size();
  mc.max_seq_len = 512;
  TrainConfig tc;
  tc.total_steps = 200;
  tc.warmup_steps = 20;
  tc.batch_size = 10;
  tc.peak_lr = 2e-3;
  tc.seed = 1;
  tc.checkpoint_interval = 0;

  Trainer t(init_params<float>(mc, 4), examples, tc);
  std::vector<double> losses;
  t.run([&](const StepRecord& rec) {
    losses.push_back(rec.loss);
    return true;
  });
  ASSERT_EQ(losses.size(), 200u);

  // Window means must not rise by more than 5%.
  const auto window_mean = [&](std::size_t begin) {
    double sum = 0;
    for (std::size_t i = begin; i < begin + 20; ++i) sum += losses[i];
    return sum / 20.0;
  };
  double prev = window_mean(0);
  for (std::size_t w = 20; w + 20 <= losses.size(); w += 20) {
    const double cur = window_mean(w);
    EXPECT_LE(cur, prev * 1.05) << "window at " << w;
    prev = cur;
  }
  EXPECT_LT(window_mean(180), window_mean(0) * 0.5);
}

}  // namespace
}  // namespace searchtrace
