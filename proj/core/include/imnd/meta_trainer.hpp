#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "imnd/denoiser.hpp"
#include "imnd/rng.hpp"

namespace imnd {

struct TrainConfig {
  double alpha = 1e-3;      // inner-loop SGD rate
  double beta = 1e-4;       // outer Adam rate
  int inner_steps = 3;
  // Test-time adaptation budget stored in the checkpoint; 0 falls back to the
  // meta-training inner recipe. More (and larger) steps than the inner loop
  // are usual at test time.
  int adapt_steps = 0;
  double adapt_alpha = 0.0;
  int task_batch = 4;
  int outer_iters = 200;
  std::size_t window_len = 600;
  std::size_t window_stride = 100;
  int max_windows = 64;     // per-task windows sampled per loss evaluation
  std::uint64_t seed = 0;
  TrainMode mode = TrainMode::kFsdaF;
  bool first_order = false;
  bool outer_include_support = false;
  double support_seconds = 60.0;
  ModelConfig model;
  LossConfig loss;

  void validate() const;
};

struct TrainLogRow {
  long iter = 0;
  std::string mode;
  std::string task;
  double loss_r = 0.0;
  double loss_d = 0.0;
  double loss_total = 0.0;
};

void write_train_log(const std::vector<TrainLogRow>& rows, const std::filesystem::path& file);

/// `steps` plain SGD updates of theta_e on the batched window loss; everything
/// else in `params` is left untouched. Reconstruction noise is frozen per step
/// from noise_seed.
ParamSet inner_adapt(const DenoiserParams& params, std::span<const WindowData> support,
                     double alpha, int steps, const LossConfig& cfg, std::uint64_t noise_seed);

// ---- generic MAML machinery (also drives the synthetic-problem tests) ----

/// Loss oracle for one task. phase >= 0 selects the support batch of inner
/// step `phase`; phase == -1 is the query batch. Either gradient output may be
/// null. Evaluations must be deterministic per phase.
using MamlEval = std::function<void(const ParamSet& inner, int phase, double* loss,
                                    ParamSet* grad_inner, ParamSet* grad_outer)>;

struct MamlTaskResult {
  double query_loss = 0.0;
  ParamSet adapted_inner;
  ParamSet grad_inner_init;  // d query_loss / d inner initialization
  ParamSet grad_outer;       // direct + through-the-inner-update terms
};

/// Runs the inner SGD trajectory and backpropagates the query loss through it.
/// Second-order terms use central-difference Hessian-vector products; with
/// first_order they are dropped.
MamlTaskResult maml_task_grads(const MamlEval& eval, const ParamSet& inner_init,
                               const ParamSet& outer_template, double alpha, int steps,
                               bool first_order);

// ---- denoiser training ----

struct TaskWindows {
  std::string tag;
  std::vector<WindowData> support;
  std::vector<WindowData> query;
};

TaskWindows prepare_task(const MetaTask& task, const NormStats& norm, const TrainConfig& cfg);

/// One Algorithm-1 outer update over a batch of tasks.
void meta_step(DenoiserParams& params, std::span<const TaskWindows> batch,
               const TrainConfig& cfg, AdamState& adam, Rng& rng,
               std::vector<TrainLogRow>* log = nullptr, long iter = 0);

struct TrainOutput {
  Checkpoint checkpoint;
  std::vector<TrainLogRow> log;
};

/// Dispatch on cfg.mode: fsda_f = full meta-training, fsda = joint descent
/// without the inner loop, digdl = generator-only baseline.
TrainOutput train(const TrainConfig& cfg, const std::vector<MetaTask>& train_tasks);

/// Inner-loop adaptation of theta_e on a labelled support segment from a new
/// domain; returns a checkpoint tagged with the domain.
Checkpoint few_shot_adapt(const Checkpoint& ckpt, const ImuSequence& support,
                          std::uint64_t seed = 0);

}  // namespace imnd
