#pragma once

#include <Eigen/Core>
#include <vector>

namespace imnd::so3 {

using Mat3 = Eigen::Matrix3d;
using Vec3 = Eigen::Vector3d;

Mat3 skew(const Vec3& v);

/// Rodrigues exponential map; series branch below 1e-8 rad.
Mat3 exp_so3(const Vec3& v);

/// Logarithm map via quaternion extraction, stable near the pi boundary.
/// Throws std::invalid_argument if R is not orthonormal within `tol`.
Vec3 log_so3(const Mat3& R, double tol = 1e-6);

bool is_rotation(const Mat3& R, double tol = 1e-6);

/// Nearest rotation (polar projection by SVD).
Mat3 project_to_so3(const Mat3& m);

/// output[n] = output[n-1] * exp(omegas[n] * dt), output[-1] = r0.
/// Re-orthonormalizes every 512 steps.
std::vector<Mat3> integrate_orientation(const Mat3& r0,
                                        const std::vector<Vec3>& omegas,
                                        double dt);

/// R_i^T R_{i+j}; throws std::out_of_range on bad indices, j >= 1 required.
Mat3 relative_rotation(const std::vector<Mat3>& seq, std::size_t i, std::size_t j);

struct EulerZYX {
  double roll_deg = 0.0;
  double pitch_deg = 0.0;
  double yaw_deg = 0.0;
  bool gimbal_lock = false;
};

/// Intrinsic ZYX (yaw-pitch-roll) angles in degrees, pitch in [-90, 90].
/// Within 1e-6 deg of |pitch| = 90 the result is flagged, yaw is set to 0 and
/// roll absorbs the free angle.
EulerZYX rotation_to_euler(const Mat3& R);

Mat3 euler_to_rotation(double roll_deg, double pitch_deg, double yaw_deg);

/// omega[k] = log(R_k^T R_{k+1}) / dt. Throws on consecutive poses separated
/// by an angle at the pi aliasing boundary.
std::vector<Vec3> gt_angular_velocity(const std::vector<Mat3>& poses, double dt);

/// Geodesic interpolation a * exp(t * log(a^T b)).
Mat3 slerp(const Mat3& a, const Mat3& b, double t);

/// Right Jacobian of the exponential map and its inverse.
Mat3 right_jacobian(const Vec3& v);
Mat3 right_jacobian_inv(const Vec3& v);

}  // namespace imnd::so3
