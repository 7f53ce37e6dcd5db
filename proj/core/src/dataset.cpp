#include "imnd/dataset.hpp"

#include <Eigen/Geometry>
#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace imnd {

namespace fs = std::filesystem;

void ImuSequence::validate() const {
  const std::size_t n = size();
  if (gyro.size() != n || accel.size() != n)
    throw std::invalid_argument("ImuSequence: channel lengths differ");
  if (has_gt() && gt_poses.size() != n)
    throw std::invalid_argument("ImuSequence: gt length differs from samples");
  if (dt <= 0.0 && n > 1) throw std::invalid_argument("ImuSequence: dt must be positive");
  const double tol_ns = 0.1 * dt * 1e9;
  for (std::size_t k = 0; k + 1 < n; ++k) {
    if (t_ns[k + 1] <= t_ns[k])
      throw std::invalid_argument("ImuSequence: timestamps not strictly increasing");
    if (std::abs(double(t_ns[k + 1] - t_ns[k]) - dt * 1e9) > tol_ns)
      throw std::invalid_argument("ImuSequence: timestamp spacing deviates beyond 10% of dt");
  }
}

ImuSequence ImuSequence::slice(std::size_t begin, std::size_t len) const {
  if (begin + len > size()) throw std::out_of_range("ImuSequence::slice out of range");
  ImuSequence out;
  out.domain_tag = domain_tag;
  out.dt = dt;
  out.t_ns.assign(t_ns.begin() + begin, t_ns.begin() + begin + len);
  out.gyro.assign(gyro.begin() + begin, gyro.begin() + begin + len);
  out.accel.assign(accel.begin() + begin, accel.begin() + begin + len);
  if (has_gt()) out.gt_poses.assign(gt_poses.begin() + begin, gt_poses.begin() + begin + len);
  return out;
}

namespace {

std::vector<double> parse_row(const std::string& line, const fs::path& file, std::size_t line_no) {
  std::vector<double> vals;
  std::size_t pos = 0;
  while (pos <= line.size()) {
    std::size_t comma = line.find(',', pos);
    if (comma == std::string::npos) comma = line.size();
    std::string_view tok(line.data() + pos, comma - pos);
    while (!tok.empty() && (tok.front() == ' ' || tok.front() == '\t')) tok.remove_prefix(1);
    while (!tok.empty() && (tok.back() == ' ' || tok.back() == '\r' || tok.back() == '\t'))
      tok.remove_suffix(1);
    if (!tok.empty()) {
      double v = 0.0;
      const auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
      if (res.ec != std::errc() || res.ptr != tok.data() + tok.size())
        throw std::runtime_error(file.string() + ":" + std::to_string(line_no) +
                                 ": malformed numeric field '" + std::string(tok) + "'");
      vals.push_back(v);
    }
    pos = comma + 1;
    if (comma == line.size()) break;
  }
  return vals;
}

bool is_comment_or_blank(const std::string& line) {
  for (char c : line) {
    if (c == '#') return true;
    if (!std::isspace(static_cast<unsigned char>(c))) return false;
  }
  return true;
}

double infer_dt(const std::vector<std::int64_t>& t_ns) {
  if (t_ns.size() < 2) return 0.0;
  std::vector<std::int64_t> gaps;
  gaps.reserve(t_ns.size() - 1);
  for (std::size_t k = 0; k + 1 < t_ns.size(); ++k) gaps.push_back(t_ns[k + 1] - t_ns[k]);
  std::nth_element(gaps.begin(), gaps.begin() + gaps.size() / 2, gaps.end());
  return gaps[gaps.size() / 2] * 1e-9;
}

Mat3 quat_to_rot(double w, double x, double y, double z) {
  Eigen::Quaterniond q(w, x, y, z);
  q.normalize();
  return q.toRotationMatrix();
}

struct RawImu {
  std::vector<std::int64_t> t_ns;
  std::vector<Vec3> gyro, accel;
};

RawImu read_imu_csv(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw std::runtime_error("cannot open IMU file " + file.string());
  RawImu raw;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (is_comment_or_blank(line)) continue;
    const auto v = parse_row(line, file, line_no);
    if (v.size() < 7)
      throw std::runtime_error(file.string() + ":" + std::to_string(line_no) +
                               ": expected 7 columns, got " + std::to_string(v.size()));
    raw.t_ns.push_back(static_cast<std::int64_t>(v[0]));
    raw.gyro.emplace_back(v[1], v[2], v[3]);
    raw.accel.emplace_back(v[4], v[5], v[6]);
  }
  if (raw.t_ns.empty()) throw std::runtime_error("empty IMU file " + file.string());
  return raw;
}

std::vector<TimedPose> read_pose_csv(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw std::runtime_error("cannot open ground-truth file " + file.string());
  std::vector<TimedPose> poses;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (is_comment_or_blank(line)) continue;
    const auto v = parse_row(line, file, line_no);
    if (v.size() < 8)
      throw std::runtime_error(file.string() + ":" + std::to_string(line_no) +
                               ": expected >= 8 columns, got " + std::to_string(v.size()));
    // layout: t, px, py, pz, qw, qx, qy, qz, ...
    poses.push_back({static_cast<std::int64_t>(v[0]), quat_to_rot(v[4], v[5], v[6], v[7])});
  }
  if (poses.empty()) throw std::runtime_error("empty ground-truth file " + file.string());
  return poses;
}

/// Nearest-neighbor resampling onto a uniform grid when jitter exceeds 10% of dt.
void resample_uniform(RawImu& raw, double dt) {
  const double dt_ns = dt * 1e9;
  bool needs = false;
  for (std::size_t k = 0; k + 1 < raw.t_ns.size(); ++k)
    if (std::abs(double(raw.t_ns[k + 1] - raw.t_ns[k]) - dt_ns) > 0.1 * dt_ns) {
      needs = true;
      break;
    }
  if (!needs) return;
  RawImu out;
  const std::int64_t t0 = raw.t_ns.front();
  const std::size_t n =
      static_cast<std::size_t>(std::floor((raw.t_ns.back() - t0) / dt_ns)) + 1;
  std::size_t src = 0;
  for (std::size_t k = 0; k < n; ++k) {
    const std::int64_t t = t0 + static_cast<std::int64_t>(std::llround(k * dt_ns));
    while (src + 1 < raw.t_ns.size() &&
           std::llabs(raw.t_ns[src + 1] - t) <= std::llabs(raw.t_ns[src] - t))
      ++src;
    out.t_ns.push_back(t);
    out.gyro.push_back(raw.gyro[src]);
    out.accel.push_back(raw.accel[src]);
  }
  raw = std::move(out);
}

ImuSequence parse_dataset_dir(const fs::path& dir, const fs::path& gt_rel,
                              const std::string& tag) {
  const fs::path imu_file = dir / "mav0" / "imu0" / "data.csv";
  const fs::path gt_file = dir / gt_rel / "data.csv";
  RawImu raw = read_imu_csv(imu_file);
  const double dt = infer_dt(raw.t_ns);
  resample_uniform(raw, dt);
  ImuSequence seq;
  seq.domain_tag = tag.empty() ? dir.filename().string() : tag;
  seq.dt = dt;
  seq.t_ns = std::move(raw.t_ns);
  seq.gyro = std::move(raw.gyro);
  seq.accel = std::move(raw.accel);
  return align_ground_truth(seq, read_pose_csv(gt_file));
}

}  // namespace

void write_canonical_csv(const ImuSequence& seq, const fs::path& file) {
  std::ofstream out(file);
  if (!out) throw std::runtime_error("cannot write " + file.string());
  out << "t_ns,wx,wy,wz,ax,ay,az,qw,qx,qy,qz\n";
  char buf[512];
  for (std::size_t k = 0; k < seq.size(); ++k) {
    double qw = 1.0, qx = 0.0, qy = 0.0, qz = 0.0;
    if (seq.has_gt()) {
      Eigen::Quaterniond q(seq.gt_poses[k]);
      if (q.w() < 0.0) q.coeffs() = -q.coeffs();
      qw = q.w(); qx = q.x(); qy = q.y(); qz = q.z();
    }
    std::snprintf(buf, sizeof buf,
                  "%lld,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n",
                  static_cast<long long>(seq.t_ns[k]), seq.gyro[k].x(), seq.gyro[k].y(),
                  seq.gyro[k].z(), seq.accel[k].x(), seq.accel[k].y(), seq.accel[k].z(),
                  qw, qx, qy, qz);
    out << buf;
  }
}

ImuSequence read_canonical_csv(const fs::path& file, const std::string& domain_tag) {
  std::ifstream in(file);
  if (!in) throw std::runtime_error("cannot open " + file.string());
  ImuSequence seq;
  seq.domain_tag = domain_tag.empty() ? file.stem().string() : domain_tag;
  std::string line;
  std::size_t line_no = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (is_comment_or_blank(line)) continue;
    if (!header_seen) {
      header_seen = true;
      if (line.rfind("t_ns,", 0) == 0) continue;  // header row
    }
    const auto v = parse_row(line, file, line_no);
    if (v.size() != 7 && v.size() != 11)
      throw std::runtime_error(file.string() + ":" + std::to_string(line_no) +
                               ": expected 7 or 11 columns");
    seq.t_ns.push_back(static_cast<std::int64_t>(v[0]));
    seq.gyro.emplace_back(v[1], v[2], v[3]);
    seq.accel.emplace_back(v[4], v[5], v[6]);
    if (v.size() == 11) seq.gt_poses.push_back(quat_to_rot(v[7], v[8], v[9], v[10]));
  }
  if (seq.t_ns.empty()) throw std::runtime_error("empty sequence file " + file.string());
  if (!seq.gt_poses.empty() && seq.gt_poses.size() != seq.size())
    throw std::runtime_error(file.string() + ": mixed gt/no-gt rows");
  seq.dt = infer_dt(seq.t_ns);
  return seq;
}

ImuSequence parse_euroc(const fs::path& dir) {
  return parse_dataset_dir(dir, fs::path("mav0") / "state_groundtruth_estimate0", "");
}

ImuSequence parse_tumvi(const fs::path& dir) {
  return parse_dataset_dir(dir, fs::path("mav0") / "mocap0", "");
}

ImuSequence align_ground_truth(const ImuSequence& imu, const std::vector<TimedPose>& gt) {
  if (gt.size() < 2) throw std::runtime_error("align_ground_truth: need >= 2 gt poses");
  const double overlap_s =
      (std::min<double>(imu.t_ns.back(), gt.back().t_ns) -
       std::max<double>(imu.t_ns.front(), gt.front().t_ns)) * 1e-9;
  // Short overlap is only acceptable when gt brackets the whole IMU span
  // (tiny fixtures); partial coverage below 1 s is too little to trust.
  const bool covers_all =
      gt.front().t_ns <= imu.t_ns.front() && gt.back().t_ns >= imu.t_ns.back();
  if (overlap_s < 1.0 && !covers_all)
    throw std::runtime_error("align_ground_truth: IMU and gt overlap below 1 s");

  // Truncate usable gt at the first gap > 0.5 s.
  std::size_t gt_end = gt.size();
  for (std::size_t k = 0; k + 1 < gt.size(); ++k)
    if ((gt[k + 1].t_ns - gt[k].t_ns) * 1e-9 > 0.5) {
      std::cerr << "warning: ground-truth gap > 0.5 s at t=" << gt[k].t_ns
                << " ns; truncating sequence at the gap\n";
      gt_end = k + 1;
      break;
    }

  ImuSequence out;
  out.domain_tag = imu.domain_tag;
  out.dt = imu.dt;
  std::size_t g = 0;
  for (std::size_t k = 0; k < imu.size(); ++k) {
    const std::int64_t t = imu.t_ns[k];
    if (t < gt.front().t_ns || t > gt[gt_end - 1].t_ns) continue;  // outside span
    while (g + 1 < gt_end && gt[g + 1].t_ns <= t) ++g;
    if (g + 1 >= gt_end) {
      if (t == gt[g].t_ns) {
        out.t_ns.push_back(t);
        out.gyro.push_back(imu.gyro[k]);
        out.accel.push_back(imu.accel[k]);
        out.gt_poses.push_back(gt[g].pose);
      }
      continue;
    }
    const double frac = double(t - gt[g].t_ns) / double(gt[g + 1].t_ns - gt[g].t_ns);
    out.t_ns.push_back(t);
    out.gyro.push_back(imu.gyro[k]);
    out.accel.push_back(imu.accel[k]);
    out.gt_poses.push_back(so3::slerp(gt[g].pose, gt[g + 1].pose, frac));
  }
  if (out.t_ns.empty()) throw std::runtime_error("align_ground_truth: no overlapping samples");
  return out;
}

MetaTask split_meta_task(const ImuSequence& seq, double support_seconds) {
  const double total_s = seq.size() * seq.dt;
  const double required = support_seconds + 10.0;
  if (total_s <= required)
    throw std::invalid_argument("split_meta_task: sequence of " + std::to_string(total_s) +
                                " s is too short; need > " + std::to_string(required) + " s");
  const std::size_t n_support =
      static_cast<std::size_t>(std::llround(support_seconds / seq.dt));
  MetaTask task;
  task.domain_tag = seq.domain_tag;
  task.support = seq.slice(0, n_support);
  task.query = seq.slice(n_support, seq.size() - n_support);
  return task;
}

std::vector<std::string> default_train_names() {
  return {"MH01", "MH02", "MH03", "MH05", "V102", "V201", "V203", "room1", "room3", "room5"};
}

std::vector<std::string> default_test_names() {
  return {"MH04", "V101", "V103", "V202", "room2", "room4", "room6"};
}

std::pair<std::vector<MetaTask>, std::vector<MetaTask>> make_meta_splits(
    const MetaSplitConfig& cfg) {
  std::vector<std::string> train = cfg.train_names.empty() ? default_train_names() : cfg.train_names;
  std::vector<std::string> test = cfg.test_names.empty() ? default_test_names() : cfg.test_names;

  std::set<std::string> seen(train.begin(), train.end());
  if (seen.size() != train.size())
    throw std::invalid_argument("make_meta_splits: duplicate names in train split");
  for (const auto& name : test)
    if (!seen.insert(name).second)
      throw std::invalid_argument("make_meta_splits: sequence '" + name +
                                  "' appears in both train and test splits");

  auto load = [&](const std::vector<std::string>& names) {
    std::vector<MetaTask> tasks;
    for (const auto& name : names) {
      const fs::path file = cfg.data_dir / (name + ".csv");
      if (!fs::exists(file))
        throw std::invalid_argument("make_meta_splits: unknown sequence '" + name +
                                    "' (no file " + file.string() + ")");
      ImuSequence seq = read_canonical_csv(file, name);
      if (!seq.has_gt())
        throw std::invalid_argument("make_meta_splits: sequence '" + name + "' has no ground truth");
      tasks.push_back(split_meta_task(seq, cfg.support_seconds));
    }
    return tasks;
  };
  return {load(train), load(test)};
}

std::vector<ImuSequence> window(const ImuSequence& seq, std::size_t n, std::size_t stride) {
  if (n == 0 || stride == 0) throw std::invalid_argument("window: n and stride must be >= 1");
  if (n > seq.size())
    throw std::invalid_argument("window: window length " + std::to_string(n) +
                                " exceeds sequence length " + std::to_string(seq.size()));
  std::vector<ImuSequence> out;
  out.reserve((seq.size() - n) / stride + 1);
  for (std::size_t start = 0; start + n <= seq.size(); start += stride)
    out.push_back(seq.slice(start, n));
  return out;
}

}  // namespace imnd
