#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "imnd/denoiser.hpp"
#include "imnd/imu_model.hpp"
#include "imnd/rng.hpp"
#include "imnd/so3.hpp"

using imnd::DenoiserParams;
using imnd::ImuSequence;
using imnd::LossConfig;
using imnd::Mat3;
using imnd::ModelConfig;
using imnd::NormStats;
using imnd::ParamSet;
using imnd::Rng;
using imnd::Tensor;
using imnd::TrainMode;
using imnd::Vec3;
namespace so3 = imnd::so3;

namespace {

ModelConfig small_model() {
  ModelConfig m;
  m.d_embed = 8;
  m.mlp_hidden = {16};
  m.conv_channels = 8;
  m.kernel = 3;
  m.dilations = {1, 2, 1};
  return m;
}

ImuSequence noisy_sequence(std::size_t n, std::uint64_t seed, double dt = 0.01) {
  Rng rng(seed);
  ImuSequence seq;
  seq.domain_tag = "fixture";
  seq.dt = dt;
  std::vector<Vec3> omegas;
  for (std::size_t k = 0; k < n; ++k) {
    const double t = (double)k * dt;
    omegas.push_back(Vec3(0.4 * std::sin(2.0 * t), 0.3 * std::cos(1.3 * t),
                          0.5 * std::sin(0.7 * t + 1.0)));
  }
  seq.gt_poses = so3::integrate_orientation(Mat3::Identity(), omegas, dt);
  for (std::size_t k = 0; k < n; ++k) {
    seq.t_ns.push_back(static_cast<std::int64_t>(std::llround((double)k * dt * 1e9)));
    seq.gyro.push_back(omegas[k] + Vec3(0.01, -0.02, 0.015) +
                       0.002 * Vec3(rng.normal(), rng.normal(), rng.normal()));
    seq.accel.push_back(Vec3(0.1 * rng.normal(), 0.1 * rng.normal(), 9.81));
  }
  return seq;
}

NormStats stats_for(const ImuSequence& seq) {
  const ImuSequence* p = &seq;
  return imnd::compute_norm_stats(std::span<const ImuSequence* const>(&p, 1));
}

double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}

}  // namespace

TEST_CASE("model config and modes") {
  ModelConfig def;
  CHECK(def.receptive_field() == 517);
  CHECK(small_model().receptive_field() == 1 + 2 * (1 + 2 + 1));

  CHECK(imnd::parse_mode("fsda_f") == TrainMode::kFsdaF);
  CHECK(imnd::parse_mode("fsda") == TrainMode::kFsda);
  CHECK(imnd::parse_mode("digdl") == TrainMode::kDigdl);
  CHECK(imnd::to_string(TrainMode::kFsda) == "fsda");
  CHECK_THROWS(imnd::parse_mode("bogus"));

  LossConfig bad;
  bad.gamma = -1.0;
  CHECK_THROWS(bad.validate());
  bad = LossConfig{};
  bad.huber_delta = 0.0;
  CHECK_THROWS(bad.validate());
  bad = LossConfig{};
  bad.j_set = {0};
  CHECK_THROWS(bad.validate());
}

TEST_CASE("init_denoiser structure") {
  DenoiserParams p = imnd::init_denoiser(small_model(), TrainMode::kFsdaF, 3);
  CHECK((p.c_hat - Mat3::Identity()).norm() == 0.0);
  CHECK(p.theta_e.size() > 0);
  CHECK(p.theta_r.size() > 0);
  CHECK(p.theta_g.size() > 0);

  DenoiserParams d = imnd::init_denoiser(small_model(), TrainMode::kDigdl, 3);
  CHECK(d.theta_e.size() == 0);
  CHECK(d.theta_r.size() == 0);
  CHECK(d.theta_g.size() > 0);

  // determinism
  DenoiserParams q = imnd::init_denoiser(small_model(), TrainMode::kFsdaF, 3);
  CHECK(q.theta_e.at("l0.w").data == p.theta_e.at("l0.w").data);
}

TEST_CASE("embed") {
  const ImuSequence seq = noisy_sequence(64, 1);
  const NormStats norm = stats_for(seq);
  DenoiserParams p = imnd::init_denoiser(small_model(), TrainMode::kFsdaF, 5);

  Tensor a = imnd::embed(p.theta_e, seq, norm);
  Tensor b = imnd::embed(p.theta_e, seq, norm);
  CHECK(a.data == b.data);  // determinism
  CHECK(a.dim(0) == 8);
  CHECK(a.dim(1) == 64);

  // zero weights -> constant bias image
  ParamSet zero = p.theta_e;
  for (auto& [name, t] : zero)
    if (name.ends_with(".w"))
      for (double& v : t.data) v = 0.0;
  Tensor c = imnd::embed(zero, seq, norm);
  for (std::int64_t ch = 0; ch < c.dim(0); ++ch)
    for (std::int64_t t = 1; t < c.dim(1); ++t)
      CHECK(c.data[ch * c.dim(1) + t] == c.data[ch * c.dim(1)]);
}

TEST_CASE("reconstruct and recon_loss") {
  const ImuSequence seq = noisy_sequence(80, 2);
  const NormStats norm = stats_for(seq);
  const ModelConfig model = small_model();
  DenoiserParams p = imnd::init_denoiser(model, TrainMode::kFsdaF, 7);

  auto r1 = imnd::reconstruct(p.theta_e, p.theta_r, model, seq, norm, 0.1, 42);
  auto r2 = imnd::reconstruct(p.theta_e, p.theta_r, model, seq, norm, 0.1, 42);
  auto r3 = imnd::reconstruct(p.theta_e, p.theta_r, model, seq, norm, 0.1, 43);
  CHECK(r1.gyro.size() == seq.size());
  CHECK(r1.accel.size() == seq.size());
  for (std::size_t k = 0; k < seq.size(); ++k)
    CHECK((r1.gyro[k] - r2.gyro[k]).norm() == 0.0);
  bool differs = false;
  for (std::size_t k = 0; k < seq.size(); ++k)
    if ((r1.gyro[k] - r3.gyro[k]).norm() > 0.0) differs = true;
  CHECK(differs);

  // recon_loss oracle
  imnd::Reconstruction perfect{seq.gyro, seq.accel};
  CHECK(imnd::recon_loss(perfect, seq, norm) == 0.0);

  imnd::Reconstruction offset = perfect;
  for (std::size_t k = 0; k < seq.size(); ++k) {
    for (int c = 0; c < 3; ++c) {
      offset.gyro[k][c] += norm.std[c];          // +1 in normalized units
      offset.accel[k][c] += norm.std[3 + c];
    }
  }
  CHECK(imnd::recon_loss(offset, seq, norm) == doctest::Approx(1.0).epsilon(1e-9));

  // naive two-loop oracle on a random pair
  double acc = 0.0;
  for (std::size_t k = 0; k < seq.size(); ++k)
    for (int c = 0; c < 6; ++c) {
      const double rec = c < 3 ? r1.gyro[k][c] : r1.accel[k][c - 3];
      const double src = c < 3 ? seq.gyro[k][c] : seq.accel[k][c - 3];
      const double d = (rec - src) / norm.std[c];
      acc += d * d;
    }
  acc /= (double)(6 * seq.size());
  CHECK(rel_err(imnd::recon_loss(r1, seq, norm), acc) < 1e-12);
}

TEST_CASE("denoise identity configurations") {
  const ModelConfig model = small_model();
  const ImuSequence seq = noisy_sequence(64, 3);
  const NormStats norm = stats_for(seq);
  DenoiserParams p = imnd::init_denoiser(model, TrainMode::kFsdaF, 11);

  // zero generator -> exactly the raw gyro
  for (auto& [name, t] : p.theta_g)
    for (double& v : t.data) v = 0.0;
  auto out = imnd::denoise(p, seq, norm);
  REQUIRE(out.size() == seq.size());
  for (std::size_t k = 0; k < seq.size(); ++k)
    CHECK((out[k] - seq.gyro[k]).norm() == 0.0);

  // c_hat scales channels
  p.c_hat = Vec3(0.5, 1.0, 1.0).asDiagonal();
  auto halved = imnd::denoise(p, seq, norm);
  for (std::size_t k = 0; k < seq.size(); ++k)
    CHECK(halved[k].x() == doctest::Approx(0.5 * seq.gyro[k].x()).epsilon(1e-15));

  // warm start: freshly initialized generator stays near the raw gyro
  DenoiserParams fresh = imnd::init_denoiser(model, TrainMode::kFsdaF, 13);
  auto warm = imnd::denoise(fresh, seq, norm);
  for (std::size_t k = 0; k < seq.size(); ++k)
    CHECK((warm[k] - seq.gyro[k]).norm() < 1e-1);

  // short window rejected
  CHECK_THROWS(imnd::denoise(p, seq.slice(0, 4), norm));
}

TEST_CASE("orientation_loss oracles") {
  LossConfig cfg;
  cfg.j_set = {16, 32};
  const double dt = 0.01;

  SUBCASE("perfect rates give zero") {
    const ImuSequence seq = noisy_sequence(200, 4, dt);
    auto omegas = so3::gt_angular_velocity(seq.gt_poses, dt);
    std::vector<Vec3> omega_hat{Vec3::Zero()};  // rate 0 unused by increments
    omega_hat.insert(omega_hat.end(), omegas.begin(), omegas.end());
    CHECK(imnd::orientation_loss(omega_hat, seq.gt_poses, dt, cfg) < 1e-18);
  }

  SUBCASE("single-axis closed form, quadratic branch") {
    const double rate = 0.3, eps = 0.01;
    const std::size_t n = 200;
    std::vector<Vec3> gt_rates(n, Vec3(0, 0, rate));
    auto gt = so3::integrate_orientation(Mat3::Identity(), gt_rates, dt);
    std::vector<Vec3> omega_hat(n, Vec3(0, 0, rate + eps));
    double expected = 0.0;
    for (std::size_t j : cfg.j_set) {
      const double r = (double)j * dt * eps;  // |residual| per window
      REQUIRE(r < cfg.huber_delta);
      expected += 0.5 * r * r / 3.0;  // mean over 3 components
    }
    const double got = imnd::orientation_loss(omega_hat, gt, dt, cfg);
    CHECK(std::abs(got - expected) < 1e-10);
  }

  SUBCASE("j=1 reduces to the per-step geodesic distance") {
    LossConfig j1 = cfg;
    j1.j_set = {1};
    Rng rng(5);
    const std::size_t n = 50;
    std::vector<Vec3> gt_rates, est;
    for (std::size_t k = 0; k < n; ++k) {
      gt_rates.push_back(Vec3(rng.normal(), rng.normal(), rng.normal()) * 0.2);
      est.push_back(gt_rates.back() +
                    Vec3(rng.normal(), rng.normal(), rng.normal()) * 0.01);
    }
    auto gt = so3::integrate_orientation(Mat3::Identity(), gt_rates, dt);
    double expected = 0.0;
    std::size_t windows = 0;
    for (std::size_t i = 0; i + 1 < n; ++i) {
      const Vec3 r = so3::log_so3(so3::exp_so3(gt_rates[i + 1] * dt) *
                                  so3::exp_so3(est[i + 1] * dt).transpose());
      for (int c = 0; c < 3; ++c) {
        const double a = std::abs(r[c]);
        expected += a <= j1.huber_delta ? 0.5 * r[c] * r[c]
                                        : j1.huber_delta * (a - 0.5 * j1.huber_delta);
      }
      ++windows;
    }
    expected /= 3.0 * (double)windows;
    CHECK(rel_err(imnd::orientation_loss(est, gt, dt, j1), expected) < 1e-10);
  }

  SUBCASE("invariant to a global left rotation of the gt track") {
    const ImuSequence seq = noisy_sequence(150, 6, dt);
    std::vector<Vec3> est = seq.gyro;
    const double base = imnd::orientation_loss(est, seq.gt_poses, dt, cfg);
    const Mat3 q = so3::exp_so3(Vec3(0.4, -1.0, 0.7));
    std::vector<Mat3> rotated;
    for (const Mat3& r : seq.gt_poses) rotated.push_back(q * r);
    CHECK(rel_err(imnd::orientation_loss(est, rotated, dt, cfg), base) < 1e-12);
  }

  SUBCASE("insufficient length") {
    std::vector<Vec3> est(10, Vec3::Zero());
    std::vector<Mat3> gt(10, Mat3::Identity());
    CHECK_THROWS(imnd::orientation_loss(est, gt, dt, cfg));
  }
}

TEST_CASE("task_loss composition and gamma limits") {
  const ModelConfig model = small_model();
  LossConfig cfg;
  cfg.j_set = {4, 8};
  const ImuSequence seq = noisy_sequence(96, 8);
  const NormStats norm = stats_for(seq);
  DenoiserParams p = imnd::init_denoiser(model, TrainMode::kFsdaF, 17);

  std::vector<imnd::WindowData> batch{imnd::prepare_window(seq, norm, cfg)};

  LossConfig g0 = cfg;
  g0.gamma = 0.0;
  auto r0 = imnd::task_loss(p, batch, g0, TrainMode::kFsdaF, 5, false);
  CHECK(r0.total == doctest::Approx(r0.loss_r).epsilon(1e-15));

  auto r = imnd::task_loss(p, batch, cfg, TrainMode::kFsdaF, 5, false);
  CHECK(r.total == doctest::Approx(r.loss_r + cfg.gamma * r.loss_d).epsilon(1e-12));

  // loss_d equals the denoise-path orientation loss oracle; with noise off,
  // loss_r equals the reconstruction oracle
  LossConfig quiet = cfg;
  quiet.recon_noise_std = 0.0;
  std::vector<imnd::WindowData> qbatch{imnd::prepare_window(seq, norm, quiet)};
  auto rq = imnd::task_loss(p, qbatch, quiet, TrainMode::kFsdaF, 5, false);
  auto rec = imnd::reconstruct(p.theta_e, p.theta_r, model, seq, norm, 0.0, 5);
  CHECK(rel_err(rq.loss_r, imnd::recon_loss(rec, seq, norm)) < 1e-10);
  auto est = imnd::denoise(p, seq, norm);
  CHECK(rel_err(rq.loss_d, imnd::orientation_loss(est, seq.gt_poses, seq.dt, quiet)) < 1e-10);
}

TEST_CASE("task_loss finite-difference gradients over every group") {
  const ModelConfig model = small_model();
  LossConfig cfg;
  cfg.j_set = {4, 8};
  cfg.gamma = 5.0;  // keep both loss parts visible in the gradient
  const ImuSequence seq = noisy_sequence(96, 9);
  const NormStats norm = stats_for(seq);
  DenoiserParams p = imnd::init_denoiser(model, TrainMode::kFsdaF, 19);
  std::vector<imnd::WindowData> batch{imnd::prepare_window(seq, norm, cfg)};

  auto loss_at = [&](const DenoiserParams& q) {
    return imnd::task_loss(q, batch, cfg, TrainMode::kFsdaF, 5, false).total;
  };
  auto grads = imnd::task_loss(p, batch, cfg, TrainMode::kFsdaF, 5, true);

  Rng pick(100);
  const double h = 1e-5;
  auto check_group = [&](ParamSet& group, const ParamSet& grad, int samples) {
    for (auto& [name, t] : group) {
      for (int s = 0; s < samples; ++s) {
        const std::int64_t i = (std::int64_t)pick.integer((std::uint64_t)t.numel());
        const double keep = t.data[i];
        t.data[i] = keep + h;
        const double up = loss_at(p);
        t.data[i] = keep - h;
        const double dn = loss_at(p);
        t.data[i] = keep;
        CHECK(rel_err(grad.at(name).data[i], (up - dn) / (2.0 * h)) < 1e-4);
      }
    }
  };
  check_group(p.theta_e, grads.grad_e, 4);
  check_group(p.theta_r, grads.grad_r, 4);
  check_group(p.theta_g, grads.grad_g, 4);

  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      const double keep = p.c_hat(i, j);
      p.c_hat(i, j) = keep + h;
      const double up = loss_at(p);
      p.c_hat(i, j) = keep - h;
      const double dn = loss_at(p);
      p.c_hat(i, j) = keep;
      CHECK(rel_err(grads.grad_c_hat(i, j), (up - dn) / (2.0 * h)) < 1e-4);
    }
}

TEST_CASE("digdl mode only uses the orientation loss") {
  const ModelConfig model = small_model();
  LossConfig cfg;
  cfg.j_set = {4};
  const ImuSequence seq = noisy_sequence(64, 10);
  const NormStats norm = stats_for(seq);
  DenoiserParams p = imnd::init_denoiser(model, TrainMode::kDigdl, 23);
  std::vector<imnd::WindowData> batch{imnd::prepare_window(seq, norm, cfg)};
  auto r = imnd::task_loss(p, batch, cfg, TrainMode::kDigdl, 1, true);
  CHECK(r.loss_r == 0.0);
  // digdl optimizes the orientation loss alone, without the gamma weighting
  CHECK(r.total == doctest::Approx(r.loss_d).epsilon(1e-15));
  CHECK(r.grad_g.size() > 0);
}

TEST_CASE("checkpoint round trip") {
  namespace fs = std::filesystem;
  const fs::path file = fs::temp_directory_path() / "imnd_ckpt_test.imnd";
  imnd::Checkpoint ckpt;
  ckpt.params = imnd::init_denoiser(small_model(), TrainMode::kFsdaF, 29);
  ckpt.params.c_hat(0, 1) = 0.123;
  ckpt.norm.mean << 1, 2, 3, 4, 5, 6;
  ckpt.norm.std << 2, 2, 2, 3, 3, 3;
  ckpt.loss.gamma = 0.25;
  ckpt.loss.j_set = {8, 16};
  ckpt.mode = TrainMode::kFsda;
  ckpt.alpha = 0.002;
  ckpt.inner_steps = 5;
  ckpt.adapt_window = 321;
  ckpt.domain_tag = "toy";
  imnd::save_checkpoint(ckpt, file);
  imnd::Checkpoint back = imnd::load_checkpoint(file);
  CHECK(back.params.c_hat == ckpt.params.c_hat);
  CHECK(back.params.theta_e.at("l0.w").data == ckpt.params.theta_e.at("l0.w").data);
  CHECK(back.norm.mean == ckpt.norm.mean);
  CHECK(back.loss.gamma == 0.25);
  CHECK(back.loss.j_set == std::vector<std::size_t>{8, 16});
  CHECK(back.mode == TrainMode::kFsda);
  CHECK(back.alpha == 0.002);
  CHECK(back.inner_steps == 5);
  CHECK(back.adapt_window == 321);
  CHECK(back.domain_tag == "toy");
  CHECK(back.params.model.d_embed == 8);

  std::ofstream(file) << "garbage";
  CHECK_THROWS(imnd::load_checkpoint(file));
  fs::remove(file);
}
