#include "imnd/so3.hpp"

#include <Eigen/Geometry>
#include <Eigen/SVD>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace imnd::so3 {

namespace {
constexpr double kPi = std::numbers::pi;
constexpr double kDeg = 180.0 / kPi;
constexpr int kReorthPeriod = 512;
}  // namespace

Mat3 skew(const Vec3& v) {
  Mat3 m;
  m << 0.0, -v.z(), v.y(),
       v.z(), 0.0, -v.x(),
       -v.y(), v.x(), 0.0;
  return m;
}

Mat3 exp_so3(const Vec3& v) {
  if (!v.allFinite()) throw std::invalid_argument("exp_so3: non-finite input");
  const double theta2 = v.squaredNorm();
  const double theta = std::sqrt(theta2);
  const Mat3 W = skew(v);
  double a, b;
  if (theta < 1e-8) {
    a = 1.0 - theta2 / 6.0;
    b = 0.5 - theta2 / 24.0;
  } else {
    a = std::sin(theta) / theta;
    b = (1.0 - std::cos(theta)) / theta2;
  }
  return Mat3::Identity() + a * W + b * W * W;
}

bool is_rotation(const Mat3& R, double tol) {
  return (R.transpose() * R - Mat3::Identity()).norm() < tol &&
         std::abs(R.determinant() - 1.0) < tol;
}

Vec3 log_so3(const Mat3& R, double tol) {
  if (!is_rotation(R, tol)) throw std::invalid_argument("log_so3: input is not in SO(3)");
  Eigen::Quaterniond q(R);
  q.normalize();
  if (q.w() < 0.0) q.coeffs() = -q.coeffs();
  const double sin_half = q.vec().norm();
  const double angle = 2.0 * std::atan2(sin_half, q.w());
  if (sin_half < 1e-12) return 2.0 * q.vec();  // angle/sin(angle/2) -> 2
  return (angle / sin_half) * q.vec();
}

Mat3 project_to_so3(const Mat3& m) {
  Eigen::JacobiSVD<Mat3> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 r = svd.matrixU() * svd.matrixV().transpose();
  if (r.determinant() < 0.0) {
    Mat3 d = Mat3::Identity();
    d(2, 2) = -1.0;
    r = svd.matrixU() * d * svd.matrixV().transpose();
  }
  return r;
}

std::vector<Mat3> integrate_orientation(const Mat3& r0,
                                        const std::vector<Vec3>& omegas,
                                        double dt) {
  if (dt <= 0.0) throw std::invalid_argument("integrate_orientation: dt must be positive");
  std::vector<Mat3> out;
  out.reserve(omegas.size());
  Mat3 cur = r0;
  int since_reorth = 0;
  for (const Vec3& w : omegas) {
    cur = cur * exp_so3(w * dt);
    if (++since_reorth >= kReorthPeriod) {
      cur = project_to_so3(cur);
      since_reorth = 0;
    }
    out.push_back(cur);
  }
  return out;
}

Mat3 relative_rotation(const std::vector<Mat3>& seq, std::size_t i, std::size_t j) {
  if (j < 1) throw std::out_of_range("relative_rotation: stride must be >= 1");
  if (i >= seq.size() || i + j >= seq.size())
    throw std::out_of_range("relative_rotation: index i+j out of range");
  return seq[i].transpose() * seq[i + j];
}

EulerZYX rotation_to_euler(const Mat3& R) {
  EulerZYX e;
  const double sp = -R(2, 0);
  // Margin wider than the documented 1e-6 deg: sin() rounds to 1.0 well
  // before the angle does, so a 1e-6 threshold would never trigger.
  static const double sp_lock = std::sin((90.0 - 1e-4) / kDeg);
  if (std::abs(sp) >= sp_lock) {
    e.gimbal_lock = true;
    e.pitch_deg = (sp > 0.0 ? 90.0 : -90.0);
    e.yaw_deg = 0.0;
    e.roll_deg = std::atan2(sp > 0.0 ? R(0, 1) : -R(0, 1), R(1, 1)) * kDeg;
    return e;
  }
  e.pitch_deg = std::asin(std::clamp(sp, -1.0, 1.0)) * kDeg;
  e.yaw_deg = std::atan2(R(1, 0), R(0, 0)) * kDeg;
  e.roll_deg = std::atan2(R(2, 1), R(2, 2)) * kDeg;
  return e;
}

Mat3 euler_to_rotation(double roll_deg, double pitch_deg, double yaw_deg) {
  const double r = roll_deg / kDeg, p = pitch_deg / kDeg, y = yaw_deg / kDeg;
  return (Eigen::AngleAxisd(y, Vec3::UnitZ()) *
          Eigen::AngleAxisd(p, Vec3::UnitY()) *
          Eigen::AngleAxisd(r, Vec3::UnitX())).toRotationMatrix();
}

std::vector<Vec3> gt_angular_velocity(const std::vector<Mat3>& poses, double dt) {
  if (poses.size() < 2) throw std::invalid_argument("gt_angular_velocity: need >= 2 poses");
  if (dt <= 0.0) throw std::invalid_argument("gt_angular_velocity: dt must be positive");
  std::vector<Vec3> out;
  out.reserve(poses.size() - 1);
  for (std::size_t k = 0; k + 1 < poses.size(); ++k) {
    const Vec3 v = log_so3(poses[k].transpose() * poses[k + 1]);
    if (v.norm() >= kPi - 1e-6)
      throw std::invalid_argument("gt_angular_velocity: consecutive poses at the pi aliasing boundary");
    out.push_back(v / dt);
  }
  return out;
}

Mat3 slerp(const Mat3& a, const Mat3& b, double t) {
  return a * exp_so3(t * log_so3(a.transpose() * b));
}

Mat3 right_jacobian(const Vec3& v) {
  const double theta2 = v.squaredNorm();
  const double theta = std::sqrt(theta2);
  const Mat3 W = skew(v);
  if (theta < 1e-5)
    return Mat3::Identity() - 0.5 * W + W * W / 6.0;
  return Mat3::Identity() - W * (1.0 - std::cos(theta)) / theta2 +
         W * W * (theta - std::sin(theta)) / (theta2 * theta);
}

Mat3 right_jacobian_inv(const Vec3& v) {
  const double theta2 = v.squaredNorm();
  const double theta = std::sqrt(theta2);
  const Mat3 W = skew(v);
  if (theta < 1e-5)
    return Mat3::Identity() + 0.5 * W + W * W / 12.0;
  return Mat3::Identity() + 0.5 * W +
         W * W * (1.0 / theta2 - (1.0 + std::cos(theta)) / (2.0 * theta * std::sin(theta)));
}

}  // namespace imnd::so3
