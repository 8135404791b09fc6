#pragma once

// Teacher-forcing training: reweighted cross-entropy loss (per-example mean
// of next-token NLL, averaged over the batch), linear-warmup cosine learning
// rate schedule, and AdamW with decoupled weight decay.
//
// Reproducibility notes: the batch schedule is a pure function of
// (seed, step), per-example gradients are computed independently (possibly
// in parallel) and summed in example order, so training is bit-reproducible
// for a given seed regardless of the worker count, and a run resumed from a
// checkpoint continues identically.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <numbers>
#include <string>
#include <vector>

#include "searchtrace/checkpoint.hpp"
#include "searchtrace/common.hpp"
#include "searchtrace/model.hpp"

namespace searchtrace {

struct TrainConfig {
  double peak_lr{1e-3};
  int warmup_steps{2000};
  int total_steps{5000};
  int batch_size{16};
  double beta1{0.9};
  double beta2{0.99};
  double weight_decay{0.01};
  double adam_eps{1e-8};
  double max_grad_norm{0.0};  // 0 disables clipping
  std::uint64_t seed{0};
  int checkpoint_interval{1000};
  int workers{0};

  void validate() const {
    if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
    if (total_steps < 0) throw ConfigError("train: total_steps must be >= 0");
    if (warmup_steps < 0) throw ConfigError("train: warmup_steps must be >= 0");
    if (total_steps > 0 && warmup_steps >= total_steps) {
      throw ConfigError("train: warmup must end before total_steps");
    }
    if (peak_lr <= 0) throw ConfigError("train: peak_lr must be positive");
  }
};

struct BatchExample {
  std::vector<int> prompt;    // bos ... eos
  std::vector<int> response;  // bos ... eos, length m >= 2
};

// Linear 0 -> peak over [0, warmup], then cosine peak -> 0 over
// [warmup, total].
inline double lr_schedule(std::int64_t step, const TrainConfig& config) {
  const double peak = config.peak_lr;
  if (step < 0) throw ConfigError("lr_schedule: negative step");
  if (config.warmup_steps > 0 && step <= config.warmup_steps) {
    return peak * static_cast<double>(step) /
           static_cast<double>(config.warmup_steps);
  }
  const double span =
      static_cast<double>(config.total_steps - config.warmup_steps);
  if (span <= 0) return peak;
  const double progress =
      static_cast<double>(step - config.warmup_steps) / span;
  return peak * 0.5 * (1.0 + std::cos(std::numbers::pi * std::min(progress, 1.0)));
}

// ---------------------------------------------------------------------------
// Loss

// Mean over examples of (1 / (m_d - 1)) * sum of next-token NLL, teacher
// forced on the gold response prefix. When `grads` is non-null, accumulates
// d(loss)/d(params) into it (grads must be zeroed by the caller). Gradients
// are computed per example and summed in example order.
template <typename Scalar>
double batch_loss(const ModelParameters<Scalar>& params,
                  const std::vector<BatchExample>& batch,
                  ModelParameters<Scalar>* grads, int workers = 1) {
  if (batch.empty()) throw TrainingError("loss: empty batch");
  const std::size_t d = batch.size();
  std::vector<double> losses(d, 0.0);

  if (grads == nullptr) {
    parallel_for(d, workers, [&](std::size_t i) {
      const auto& ex = batch[i];
      const double nll = backward_example<Scalar>(params, ex.prompt,
                                                  ex.response, Scalar(0), nullptr);
      losses[i] = nll / static_cast<double>(ex.response.size() - 1);
    });
  } else {
    std::vector<ModelParameters<Scalar>> buffers;
    buffers.reserve(d);
    for (std::size_t i = 0; i < d; ++i) buffers.push_back(zeros_like(params));
    parallel_for(d, workers, [&](std::size_t i) {
      const auto& ex = batch[i];
      const Scalar weight = static_cast<Scalar>(
          1.0 / (static_cast<double>(d) *
                 static_cast<double>(ex.response.size() - 1)));
      const double nll = backward_example<Scalar>(params, ex.prompt,
                                                  ex.response, weight,
                                                  &buffers[i]);
      losses[i] = nll / static_cast<double>(ex.response.size() - 1);
    });
    auto targets = param_list(*grads);
    for (std::size_t i = 0; i < d; ++i) {
      const auto sources = param_list(buffers[i]);
      for (std::size_t p = 0; p < targets.size(); ++p) {
        *targets[p] += *sources[p];
      }
    }
  }

  double total = 0.0;
  for (std::size_t i = 0; i < d; ++i) total += losses[i];
  total /= static_cast<double>(d);
  if (!std::isfinite(total)) throw TrainingError("loss: non-finite value");
  return total;
}

// ---------------------------------------------------------------------------
// AdamW

template <typename Scalar>
double gradient_norm(ModelParameters<Scalar>& grads) {
  double sq = 0.0;
  for_each_param(grads, [&](const std::string&, Mat<Scalar>& m) {
    sq += static_cast<double>(m.template cast<double>().squaredNorm());
  });
  return std::sqrt(sq);
}

// One decoupled-weight-decay Adam update; `step` is 1-based for the bias
// correction.
template <typename Scalar>
void adamw_step(ModelParameters<Scalar>& params, ModelParameters<Scalar>& grads,
                ModelParameters<Scalar>& moment1, ModelParameters<Scalar>& moment2,
                std::int64_t step, double lr, const TrainConfig& config) {
  const Scalar b1 = static_cast<Scalar>(config.beta1);
  const Scalar b2 = static_cast<Scalar>(config.beta2);
  const Scalar eps = static_cast<Scalar>(config.adam_eps);
  const Scalar wd = static_cast<Scalar>(config.weight_decay);
  const Scalar alpha = static_cast<Scalar>(lr);
  const Scalar bias1 = static_cast<Scalar>(
      1.0 - std::pow(config.beta1, static_cast<double>(step)));
  const Scalar bias2 = static_cast<Scalar>(
      1.0 - std::pow(config.beta2, static_cast<double>(step)));

  const auto ps = param_list(params);
  const auto gs = param_list(grads);
  const auto ms = param_list(moment1);
  const auto vs = param_list(moment2);
  for (std::size_t i = 0; i < ps.size(); ++i) {
    Mat<Scalar>& p = *ps[i];
    Mat<Scalar>& g = *gs[i];
    Mat<Scalar>& m = *ms[i];
    Mat<Scalar>& v = *vs[i];
    if (p.rows() != g.rows() || p.cols() != g.cols()) {
      throw TrainingError("adamw: gradient shape mismatch");
    }
    m = b1 * m + (Scalar(1) - b1) * g;
    v = b2 * v + (Scalar(1) - b2) * g.cwiseProduct(g);
    p.array() -= alpha * ((m.array() / bias1) /
                              ((v.array() / bias2).sqrt() + eps) +
                          wd * p.array());
  }
}

// ---------------------------------------------------------------------------
// Training loop

struct StepRecord {
  std::int64_t step{};
  double loss{};
  double lr{};
  double grad_norm{};
  double wall_ms{};
};

class Trainer {
 public:
  Trainer(ModelParameters<float> params, std::vector<BatchExample> dataset,
          TrainConfig config)
      : params_(std::move(params)),
        dataset_(std::move(dataset)),
        config_(config),
        moment1_(zeros_like(params_)),
        moment2_(zeros_like(params_)) {
    config_.validate();
    if (dataset_.empty()) throw TrainingError("train: empty dataset");
    for (const auto& ex : dataset_) {
      if (ex.response.size() < 2 || ex.response.front() != 0) {
        throw TrainingError("train: responses must be bos ... eos");
      }
    }
  }

  static Trainer resume(const Checkpoint& ckpt,
                        std::vector<BatchExample> dataset, TrainConfig config) {
    Trainer t(ckpt.params, std::move(dataset), config);
    t.step_ = ckpt.step;
    if (ckpt.optimizer) {
      t.moment1_ = ckpt.optimizer->m;
      t.moment2_ = ckpt.optimizer->v;
    }
    return t;
  }

  std::int64_t step() const { return step_; }
  const ModelParameters<float>& params() const { return params_; }
  const TrainConfig& config() const { return config_; }

  Checkpoint make_checkpoint(const std::string& vocab_ref) const {
    Checkpoint ckpt;
    ckpt.params = params_;
    ckpt.vocab_ref = vocab_ref;
    ckpt.step = step_;
    ckpt.optimizer = OptimizerState{moment1_, moment2_, step_};
    return ckpt;
  }

  // Deterministic batch for a given step: epoch-wise seeded shuffle,
  // consecutive chunks of batch_size (the final chunk of an epoch may be
  // short).
  std::vector<BatchExample> batch_for_step(std::int64_t step) const {
    const std::int64_t n = static_cast<std::int64_t>(dataset_.size());
    const std::int64_t b = config_.batch_size;
    const std::int64_t per_epoch = (n + b - 1) / b;
    const std::int64_t epoch = step / per_epoch;
    const std::int64_t slot = step % per_epoch;
    std::vector<std::uint32_t> perm(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) {
      perm[static_cast<std::size_t>(i)] = static_cast<std::uint32_t>(i);
    }
    Rng rng(mix_seed(config_.seed, static_cast<std::uint64_t>(epoch)));
    rng.shuffle(perm);
    std::vector<BatchExample> batch;
    for (std::int64_t i = slot * b; i < std::min(n, (slot + 1) * b); ++i) {
      batch.push_back(dataset_[perm[static_cast<std::size_t>(i)]]);
    }
    return batch;
  }

  StepRecord step_once() {
    const auto t0 = std::chrono::steady_clock::now();
    const auto batch = batch_for_step(step_);
    ModelParameters<float> grads = zeros_like(params_);
    const double loss =
        batch_loss<float>(params_, batch, &grads, config_.workers);

    double norm = gradient_norm(grads);
    if (config_.max_grad_norm > 0 && norm > config_.max_grad_norm) {
      const float scale = static_cast<float>(config_.max_grad_norm / norm);
      for_each_param(grads, [&](const std::string&, Mat<float>& m) {
        m *= scale;
      });
    }

    const double lr = lr_schedule(step_ + 1, config_);
    adamw_step(params_, grads, moment1_, moment2_, step_ + 1, lr, config_);
    ++step_;

    if (initial_loss_ < 0) initial_loss_ = loss;
    if (loss > 10.0 * initial_loss_) {
      ++divergence_streak_;
      if (divergence_streak_ >= 100) {
        throw TrainingError("train: loss diverged (above 10x initial for 100 "
                            "consecutive steps) at step " +
                            std::to_string(step_));
      }
    } else {
      divergence_streak_ = 0;
    }

    const auto t1 = std::chrono::steady_clock::now();
    StepRecord rec;
    rec.step = step_;
    rec.loss = loss;
    rec.lr = lr;
    rec.grad_norm = norm;
    rec.wall_ms =
        std::chrono::duration<double, std::milli>(t1 - t0).count();
    return rec;
  }

  // Runs to total_steps. `on_step` (if given) sees every record and may
  // return false to stop early; checkpoints land in `out_dir` when set.
  void run(const std::function<bool(const StepRecord&)>& on_step = nullptr,
           std::ostream* metrics = nullptr, const std::string& out_dir = "",
           const std::string& vocab_ref = "") {
    while (step_ < config_.total_steps) {
      const StepRecord rec = step_once();
      if (metrics != nullptr) {
        *metrics << "{\"step\":" << rec.step << ",\"loss\":" << rec.loss
                 << ",\"lr\":" << rec.lr << ",\"grad_norm\":" << rec.grad_norm
                 << ",\"wall_ms\":" << rec.wall_ms << "}\n";
      }
      if (!out_dir.empty() && config_.checkpoint_interval > 0 &&
          rec.step % config_.checkpoint_interval == 0) {
        save_checkpoint(out_dir + "/checkpoint_" + std::to_string(rec.step) +
                            ".stckpt",
                        make_checkpoint(vocab_ref));
      }
      if (on_step && !on_step(rec)) break;
    }
  }

 private:
  ModelParameters<float> params_;
  std::vector<BatchExample> dataset_;
  TrainConfig config_;
  ModelParameters<float> moment1_, moment2_;
  std::int64_t step_{0};
  double initial_loss_{-1.0};
  int divergence_streak_{0};
};

}  // namespace searchtrace
