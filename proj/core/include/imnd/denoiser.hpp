#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "imnd/dataset.hpp"
#include "imnd/graph.hpp"
#include "imnd/imu_model.hpp"
#include "imnd/optim.hpp"

namespace imnd {

struct ModelConfig {
  int d_embed = 32;
  std::vector<int> mlp_hidden = {64, 64};
  int conv_channels = 32;
  int kernel = 7;
  std::vector<int> dilations = {1, 4, 16, 64, 1};

  int receptive_field() const;  // 1 + (kernel-1) * sum(dilations)
};

struct LossConfig {
  double gamma = 0.1;                       // weight of the rotation-increment loss
  std::vector<std::size_t> j_set = {16, 32};  // increment strides
  double huber_delta = 0.005;               // rad
  double recon_noise_std = 0.1;             // embedding units

  void validate() const;
};

enum class TrainMode { kFsdaF, kFsda, kDigdl };

std::string to_string(TrainMode mode);
TrainMode parse_mode(const std::string& s);

/// Frozen per-channel input normalization (gyro xyz, accel xyz).
struct NormStats {
  Vec6 mean = Vec6::Zero();
  Vec6 std = Vec6::Ones();
};

NormStats compute_norm_stats(std::span<const ImuSequence* const> seqs);

struct DenoiserParams {
  ModelConfig model;
  ParamSet theta_e;       // per-sample MLP, 6 -> d_embed
  ParamSet theta_r;       // dilated CNN, d_embed -> 6
  ParamSet theta_g;       // dilated CNN, d_embed -> 3 (6 -> 3 in digdl mode)
  Mat3 c_hat = Mat3::Identity();
};

/// Random initialization; digdl mode leaves theta_e/theta_r empty and wires
/// the generator directly to the 6 raw channels.
DenoiserParams init_denoiser(const ModelConfig& cfg, TrainMode mode, std::uint64_t seed);

// ---- forward-only building blocks ----

/// Per-layer a = gelu(Wx + b), identity on the output layer. x is [Cin x T].
Tensor mlp_forward(const ParamSet& params, const Tensor& x);

/// Stacked dilated causal convolutions with gelu between layers.
Tensor dilated_conv_forward(const ParamSet& params, const Tensor& x,
                            const std::vector<int>& dilations);

/// Normalized-input embedding of a window, [d_embed x T].
Tensor embed(const ParamSet& theta_e, const ImuSequence& window, const NormStats& norm);

struct Reconstruction {
  std::vector<Vec3> gyro;   // rad/s, denormalized
  std::vector<Vec3> accel;  // m/s^2, denormalized
};

Reconstruction reconstruct(const ParamSet& theta_e, const ParamSet& theta_r,
                           const ModelConfig& model, const ImuSequence& window,
                           const NormStats& norm, double noise_std, std::uint64_t seed);

/// MSE over time and 6 channels in normalized units.
double recon_loss(const Reconstruction& rec, const ImuSequence& src, const NormStats& norm);

/// Corrected rates: c_hat * gyro + generator output.
std::vector<Vec3> denoise(const DenoiserParams& params, const ImuSequence& window,
                          const NormStats& norm, TrainMode mode = TrainMode::kFsdaF);

double orientation_loss(const std::vector<Vec3>& omega_hat, const std::vector<Mat3>& gt_poses,
                        double dt, const LossConfig& cfg);

// ---- training-side batched loss with gradients ----

/// Cached per-window tensors for loss evaluation.
struct WindowData {
  Tensor u_norm;    // [6 x T]
  Tensor raw_gyro;  // [3 x T]
  OrientationLossSpec orient;
};

WindowData prepare_window(const ImuSequence& window, const NormStats& norm,
                          const LossConfig& cfg);
OrientationLossSpec make_orientation_spec(const std::vector<Mat3>& gt_poses, double dt,
                                          const LossConfig& cfg);

struct LossResult {
  double total = 0.0;
  double loss_r = 0.0;
  double loss_d = 0.0;
  ParamSet grad_e, grad_r, grad_g;
  Mat3 grad_c_hat = Mat3::Zero();
};

/// L = L^R + gamma L^D averaged over the batch (L^D only in digdl mode).
/// Reconstruction noise is drawn deterministically from noise_seed.
LossResult task_loss(const DenoiserParams& params, std::span<const WindowData> batch,
                     const LossConfig& cfg, TrainMode mode, std::uint64_t noise_seed,
                     bool want_grads);

// ---- checkpoint = params + normalization + loss config + adaptation recipe ----

struct Checkpoint {
  DenoiserParams params;
  NormStats norm;
  LossConfig loss;
  TrainMode mode = TrainMode::kFsdaF;
  double alpha = 1e-3;   // inner-loop rate used for test-time adaptation
  int inner_steps = 3;
  std::size_t adapt_window = 600;  // window length for adaptation batches
  std::string domain_tag;  // set after few-shot adaptation
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& file);
Checkpoint load_checkpoint(const std::filesystem::path& file);

}  // namespace imnd
