#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "imnd/so3.hpp"

namespace imnd {

using so3::Mat3;
using so3::Vec3;

struct ImuSequence {
  std::string domain_tag;
  double dt = 0.0;                  // seconds
  std::vector<std::int64_t> t_ns;   // strictly increasing
  std::vector<Vec3> gyro;           // rad/s
  std::vector<Vec3> accel;          // m/s^2
  std::vector<Mat3> gt_poses;       // empty, or aligned 1:1 with samples

  std::size_t size() const { return t_ns.size(); }
  bool has_gt() const { return !gt_poses.empty(); }
  void validate() const;  // throws std::invalid_argument on broken invariants

  /// Copy of samples [begin, begin+len).
  ImuSequence slice(std::size_t begin, std::size_t len) const;
};

struct MetaTask {
  std::string domain_tag;
  ImuSequence support;
  ImuSequence query;
};

struct TimedPose {
  std::int64_t t_ns = 0;
  Mat3 pose = Mat3::Identity();
};

/// Canonical on-disk format: header `t_ns,wx,wy,wz,ax,ay,az,qw,qx,qy,qz`.
void write_canonical_csv(const ImuSequence& seq, const std::filesystem::path& file);
ImuSequence read_canonical_csv(const std::filesystem::path& file, const std::string& domain_tag = "");

/// EuRoC layout: mav0/imu0/data.csv + mav0/state_groundtruth_estimate0/data.csv.
ImuSequence parse_euroc(const std::filesystem::path& dir);

/// TUM-VI layout: mav0/imu0/data.csv + mav0/mocap0/data.csv.
ImuSequence parse_tumvi(const std::filesystem::path& dir);

/// Slerp gt onto IMU timestamps; samples outside the gt span are dropped and a
/// gt gap > 0.5 s truncates the sequence at the gap (warning to stderr).
ImuSequence align_ground_truth(const ImuSequence& imu, const std::vector<TimedPose>& gt);

MetaTask split_meta_task(const ImuSequence& seq, double support_seconds = 60.0);

struct MetaSplitConfig {
  std::filesystem::path data_dir;
  std::vector<std::string> train_names;  // empty -> standard benchmark splits
  std::vector<std::string> test_names;
  double support_seconds = 60.0;
};

std::pair<std::vector<MetaTask>, std::vector<MetaTask>> make_meta_splits(const MetaSplitConfig& cfg);

std::vector<std::string> default_train_names();
std::vector<std::string> default_test_names();

/// Fixed-length views materialized as copies; count = floor((len - n)/stride) + 1.
std::vector<ImuSequence> window(const ImuSequence& seq, std::size_t n, std::size_t stride);

}  // namespace imnd
