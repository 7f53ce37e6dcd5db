#pragma once

#include <cstdint>
#include <string>

#include "imnd/dataset.hpp"
#include "imnd/rng.hpp"
#include "imnd/so3.hpp"

namespace imnd {

using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat6 = Eigen::Matrix<double, 6, 6>;

/// Corruption model: u = C [w; a] + b_n + eta_n, with
/// C = [[S_w M_w, A], [0, S_a M_a]] and b_n a static bias plus random walk.
struct CalibrationParams {
  Mat3 S_w = Mat3::Identity();  // strictly positive diagonal
  Mat3 M_w = Mat3::Identity();  // lower unitriangular
  Mat3 S_a = Mat3::Identity();
  Mat3 M_a = Mat3::Identity();
  Mat3 A = Mat3::Zero();        // g-sensitivity, rad/s per m/s^2
  Vec6 b = Vec6::Zero();        // quasi-constant bias (gyro rad/s, accel m/s^2)
  Vec6 eta_std = Vec6::Zero();  // white noise std devs
  Vec6 bias_walk_std = Vec6::Zero();  // random-walk std devs per sqrt(s)

  Mat6 C() const;
  void validate() const;
};

struct SynthTrajectory {
  double dt = 0.0;
  Mat3 r0 = Mat3::Identity();   // pose before the first sample
  Vec3 v_init = Vec3::Zero();   // velocity before the first sample, global frame
  std::vector<Mat3> poses;      // pose after sample n
  std::vector<Vec3> omegas;     // body-frame rad/s
  std::vector<Vec3> velocities; // global-frame m/s
  std::vector<Vec3> accels;     // body frame, gravity-free
  Vec3 gravity = Vec3(0.0, 0.0, -9.81);

  std::size_t size() const { return omegas.size(); }
};

/// Applies the measurement model deterministically for a given seed and
/// attaches the ground-truth pose track.
ImuSequence corrupt(const SynthTrajectory& traj, const CalibrationParams& cal,
                    std::uint64_t seed, const std::string& domain_tag = "synth");

/// Corrected angular velocity: c_hat * omega_imu + bias_est.
Vec3 apply_intrinsics(const Mat3& c_hat, const Vec3& omega_imu, const Vec3& bias_est);

struct Range {
  double lo = 0.0;
  double hi = 0.0;
  double draw(Rng& rng) const;
};

struct DomainSpec {
  std::string name = "synth";
  std::string profile = "handheld";  // handheld | wheeled | legged
  double duration_s = 60.0;          // >= 10
  double rate_hz = 200.0;            // >= 50
  // Calibration draw ranges (symmetric ranges drawn per axis).
  Range gyro_bias{-0.01, 0.01};         // rad/s
  Range accel_bias{-0.05, 0.05};        // m/s^2
  Range gyro_scale_dev{-0.02, 0.02};    // S_w = 1 + dev
  Range misalign_dev{-0.01, 0.01};      // M_w lower off-diagonals
  Range gyro_noise_std{0.002, 0.006};   // rad/s per sample
  Range accel_noise_std{0.01, 0.03};    // m/s^2 per sample
  Range gyro_walk_std{0.0, 0.0002};     // rad/s per sqrt(s)
  bool g_sensitivity = false;           // generate a small A when set

  void validate() const;
};

struct SynthDomain {
  SynthTrajectory trajectory;
  CalibrationParams calibration;
  ImuSequence sequence;
};

/// Band-limited sum-of-sinusoids motion plus a seeded calibration draw.
SynthDomain synth_domain(const DomainSpec& spec, std::uint64_t seed);

}  // namespace imnd
