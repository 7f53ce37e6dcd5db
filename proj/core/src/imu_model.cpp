#include "imnd/imu_model.hpp"

#include <array>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace imnd {

namespace {
constexpr double kTwoPi = 2.0 * std::numbers::pi;
}

Mat6 CalibrationParams::C() const {
  Mat6 c = Mat6::Zero();
  c.topLeftCorner<3, 3>() = S_w * M_w;
  c.topRightCorner<3, 3>() = A;
  c.bottomRightCorner<3, 3>() = S_a * M_a;
  return c;
}

void CalibrationParams::validate() const {
  auto check_scale = [](const Mat3& s, const char* what) {
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        if (i == j && s(i, j) <= 0.0)
          throw std::invalid_argument(std::string(what) + ": diagonal must be strictly positive");
        if (i != j && s(i, j) != 0.0)
          throw std::invalid_argument(std::string(what) + ": must be diagonal");
      }
  };
  auto check_unitri = [](const Mat3& m, const char* what) {
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        if (i == j && m(i, j) != 1.0)
          throw std::invalid_argument(std::string(what) + ": unit diagonal required");
        if (j > i && m(i, j) != 0.0)
          throw std::invalid_argument(std::string(what) + ": upper triangle must be zero");
      }
  };
  check_scale(S_w, "S_w");
  check_scale(S_a, "S_a");
  check_unitri(M_w, "M_w");
  check_unitri(M_a, "M_a");
  if ((eta_std.array() < 0.0).any() || (bias_walk_std.array() < 0.0).any())
    throw std::invalid_argument("CalibrationParams: std devs must be >= 0");
}

ImuSequence corrupt(const SynthTrajectory& traj, const CalibrationParams& cal,
                    std::uint64_t seed, const std::string& domain_tag) {
  cal.validate();
  Rng rng(seed);
  const Mat6 c = cal.C();
  const std::size_t n = traj.size();

  ImuSequence out;
  out.domain_tag = domain_tag;
  out.dt = traj.dt;
  out.t_ns.reserve(n);
  out.gyro.reserve(n);
  out.accel.reserve(n);
  out.gt_poses = traj.poses;

  Vec6 walk = Vec6::Zero();
  const double sqrt_dt = std::sqrt(traj.dt);
  for (std::size_t k = 0; k < n; ++k) {
    Vec6 clean;
    clean << traj.omegas[k], traj.accels[k];
    for (int i = 0; i < 6; ++i)
      walk[i] += cal.bias_walk_std[i] * sqrt_dt * rng.normal();
    Vec6 eta;
    for (int i = 0; i < 6; ++i) eta[i] = cal.eta_std[i] * rng.normal();
    const Vec6 u = c * clean + cal.b + walk + eta;
    out.t_ns.push_back(static_cast<std::int64_t>(std::llround(k * traj.dt * 1e9)));
    out.gyro.push_back(u.head<3>());
    out.accel.push_back(u.tail<3>());
  }
  return out;
}

Vec3 apply_intrinsics(const Mat3& c_hat, const Vec3& omega_imu, const Vec3& bias_est) {
  if (!c_hat.allFinite() || !omega_imu.allFinite() || !bias_est.allFinite())
    throw std::invalid_argument("apply_intrinsics: non-finite input");
  return c_hat * omega_imu + bias_est;
}

double Range::draw(Rng& rng) const {
  if (hi < lo) throw std::invalid_argument("Range: hi < lo");
  return rng.uniform(lo, hi);
}

void DomainSpec::validate() const {
  if (rate_hz < 50.0) throw std::invalid_argument("DomainSpec: rate must be >= 50 Hz");
  if (duration_s < 10.0) throw std::invalid_argument("DomainSpec: duration must be >= 10 s");
  if (profile != "handheld" && profile != "wheeled" && profile != "legged")
    throw std::invalid_argument("DomainSpec: unknown motion profile '" + profile + "'");
}

namespace {

struct Sinusoid {
  double amp = 0.0;
  double freq = 0.0;  // Hz
  double phase = 0.0;
  double eval(double t) const { return amp * std::sin(kTwoPi * freq * t + phase); }
};

using AxisMotion = std::vector<Sinusoid>;

double eval_axis(const AxisMotion& m, double t) {
  double v = 0.0;
  for (const auto& s : m) v += s.eval(t);
  return v;
}

/// Per-axis angular-rate envelopes. "wheeled" keeps a single dominant yaw
/// harmonic so the roll/pitch amplitude bound holds pointwise.
std::array<AxisMotion, 3> draw_rate_profile(const std::string& profile, Rng& rng) {
  std::array<AxisMotion, 3> axes;
  auto harm = [&](double amp_lo, double amp_hi, double f_lo, double f_hi) {
    return Sinusoid{rng.uniform(amp_lo, amp_hi), rng.uniform(f_lo, f_hi),
                    rng.uniform(0.0, kTwoPi)};
  };
  if (profile == "handheld") {
    for (int a = 0; a < 3; ++a)
      for (int h = 0; h < 3; ++h) axes[a].push_back(harm(0.1, 0.5, 0.1, 1.5));
  } else if (profile == "wheeled") {
    const Sinusoid yaw = harm(0.3, 0.8, 0.05, 0.4);
    axes[2].push_back(yaw);
    // roll/pitch proportional to the yaw rate (banked turns), so
    // hypot(roll, pitch) <= 0.2 |yaw| holds at every sample
    for (int a = 0; a < 2; ++a) {
      const double c = rng.uniform(-0.14, 0.14);
      axes[a].push_back(Sinusoid{c * yaw.amp, yaw.freq, yaw.phase});
    }
  } else {  // legged: higher-frequency oscillation, moderate amplitude
    for (int a = 0; a < 3; ++a)
      for (int h = 0; h < 4; ++h) axes[a].push_back(harm(0.05, 0.4, 1.0, 4.0));
  }
  return axes;
}

}  // namespace

SynthDomain synth_domain(const DomainSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng rng(seed);

  SynthDomain out;
  SynthTrajectory& traj = out.trajectory;
  traj.dt = 1.0 / spec.rate_hz;
  const std::size_t n = static_cast<std::size_t>(std::llround(spec.duration_s * spec.rate_hz));

  const auto rate_axes = draw_rate_profile(spec.profile, rng);
  std::array<AxisMotion, 3> vel_axes;
  for (int a = 0; a < 3; ++a)
    for (int h = 0; h < 3; ++h)
      vel_axes[a].push_back(Sinusoid{rng.uniform(0.1, 0.6), rng.uniform(0.1, 1.0),
                                     rng.uniform(0.0, kTwoPi)});

  auto velocity_at = [&](double t) {
    return Vec3(eval_axis(vel_axes[0], t), eval_axis(vel_axes[1], t), eval_axis(vel_axes[2], t));
  };

  traj.r0 = Mat3::Identity();
  traj.v_init = velocity_at(-traj.dt);
  traj.omegas.reserve(n);
  traj.velocities.reserve(n);
  for (std::size_t k = 0; k < n; ++k) {
    const double t = k * traj.dt;
    traj.omegas.emplace_back(eval_axis(rate_axes[0], t), eval_axis(rate_axes[1], t),
                             eval_axis(rate_axes[2], t));
    traj.velocities.push_back(velocity_at(t));
  }
  traj.poses = so3::integrate_orientation(traj.r0, traj.omegas, traj.dt);

  traj.accels.reserve(n);
  Vec3 v_prev = traj.v_init;
  for (std::size_t k = 0; k < n; ++k) {
    const Mat3& r_prev = (k == 0) ? traj.r0 : traj.poses[k - 1];
    traj.accels.push_back(r_prev.transpose() *
                          ((traj.velocities[k] - v_prev) / traj.dt - traj.gravity));
    v_prev = traj.velocities[k];
  }

  CalibrationParams& cal = out.calibration;
  for (int i = 0; i < 3; ++i) {
    cal.S_w(i, i) = 1.0 + spec.gyro_scale_dev.draw(rng);
    cal.b[i] = spec.gyro_bias.draw(rng);
    cal.b[3 + i] = spec.accel_bias.draw(rng);
    cal.eta_std[i] = spec.gyro_noise_std.draw(rng);
    cal.eta_std[3 + i] = spec.accel_noise_std.draw(rng);
    cal.bias_walk_std[i] = spec.gyro_walk_std.draw(rng);
  }
  cal.M_w(1, 0) = spec.misalign_dev.draw(rng);
  cal.M_w(2, 0) = spec.misalign_dev.draw(rng);
  cal.M_w(2, 1) = spec.misalign_dev.draw(rng);
  if (spec.g_sensitivity)
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) cal.A(i, j) = 1e-4 * rng.uniform(-1.0, 1.0);

  out.sequence = corrupt(traj, cal, rng.raw(), spec.name);
  return out;
}

}  // namespace imnd
