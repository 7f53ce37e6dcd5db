#include "imnd/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>

#include "imnd/rng.hpp"

namespace imnd {

namespace {

double wrap_deg(double d) {
  d = std::fmod(d, 360.0);
  if (d > 180.0) d -= 360.0;
  if (d <= -180.0) d += 360.0;
  return d;
}

}  // namespace

RmseEuler rmse_euler(const std::vector<Mat3>& est, const std::vector<Mat3>& gt) {
  if (est.size() != gt.size())
    throw std::invalid_argument("rmse_euler: track length mismatch");
  if (est.size() < 2) throw std::invalid_argument("rmse_euler: need >= 2 poses");
  double sr = 0.0, sp = 0.0, sy = 0.0;
  for (std::size_t k = 0; k < est.size(); ++k) {
    const auto e = so3::rotation_to_euler(est[k]);
    const auto g = so3::rotation_to_euler(gt[k]);
    const double dr = wrap_deg(e.roll_deg - g.roll_deg);
    const double dp = wrap_deg(e.pitch_deg - g.pitch_deg);
    const double dy = wrap_deg(e.yaw_deg - g.yaw_deg);
    sr += dr * dr;
    sp += dp * dp;
    sy += dy * dy;
  }
  const double n = double(est.size());
  return {std::sqrt(sr / n), std::sqrt(sp / n), std::sqrt(sy / n)};
}

namespace {

EvalResult build_result(const MetaTask& task, const std::vector<Vec3>& omega_hat,
                        const std::string& mode) {
  const ImuSequence& q = task.query;
  if (!q.has_gt()) throw std::invalid_argument("evaluate: query carries no ground truth");

  // est[0] anchored at the first gt pose; sample n integrates rates 1..n.
  std::vector<Vec3> rates(omega_hat.begin() + 1, omega_hat.end());
  std::vector<Mat3> est{q.gt_poses.front()};
  {
    std::vector<Mat3> rest = so3::integrate_orientation(q.gt_poses.front(), rates, q.dt);
    est.insert(est.end(), rest.begin(), rest.end());
  }

  EvalResult res;
  res.row.domain_tag = task.domain_tag;
  res.row.mode = mode;
  res.row.rmse = rmse_euler(est, q.gt_poses);
  res.row.duration_s = q.size() * q.dt;
  res.series.reserve(q.size());
  for (std::size_t k = 0; k < q.size(); ++k) {
    TimeSeriesPoint p;
    p.t_ns = q.t_ns[k];
    p.est = so3::rotation_to_euler(est[k]);
    p.gt = so3::rotation_to_euler(q.gt_poses[k]);
    p.err_roll = wrap_deg(p.est.roll_deg - p.gt.roll_deg);
    p.err_pitch = wrap_deg(p.est.pitch_deg - p.gt.pitch_deg);
    p.err_yaw = wrap_deg(p.est.yaw_deg - p.gt.yaw_deg);
    res.series.push_back(p);
  }
  return res;
}

}  // namespace

EvalResult evaluate(const Checkpoint& ckpt, const MetaTask& task, bool adapt,
                    std::uint64_t seed) {
  Checkpoint active = ckpt;
  std::string mode = to_string(ckpt.mode);
  if (adapt) {
    active = few_shot_adapt(ckpt, task.support, seed);
    mode += "+adapt";
  }
  const std::vector<Vec3> omega_hat =
      denoise(active.params, task.query, active.norm, active.mode);
  return build_result(task, omega_hat, mode);
}

EvalResult evaluate_raw(const MetaTask& task) {
  return build_result(task, task.query.gyro, "raw");
}

std::string report_table(const std::vector<EvalRow>& rows) {
  if (rows.empty()) throw std::invalid_argument("report_table: no rows");
  std::ostringstream os;
  os << "+----------------------+------------+----------+----------+----------+\n"
     << "| sequence             | mode       | roll     | pitch    | yaw      |\n"
     << "+----------------------+------------+----------+----------+----------+\n";
  char buf[256];
  std::map<std::string, std::pair<RmseEuler, int>> agg;
  for (const auto& r : rows) {
    if (r.domain_tag.empty() || r.mode.empty())
      throw std::invalid_argument("report_table: row with empty column");
    std::snprintf(buf, sizeof buf, "| %-20s | %-10s | %8.4f | %8.4f | %8.4f |\n",
                  r.domain_tag.c_str(), r.mode.c_str(), r.rmse.roll, r.rmse.pitch, r.rmse.yaw);
    os << buf;
    auto& [sum, n] = agg[r.mode];
    sum.roll += r.rmse.roll;
    sum.pitch += r.rmse.pitch;
    sum.yaw += r.rmse.yaw;
    ++n;
  }
  os << "+----------------------+------------+----------+----------+----------+\n";
  for (const auto& [mode, entry] : agg) {
    const auto& [sum, n] = entry;
    std::snprintf(buf, sizeof buf, "| %-20s | %-10s | %8.4f | %8.4f | %8.4f |\n", "mean",
                  mode.c_str(), sum.roll / n, sum.pitch / n, sum.yaw / n);
    os << buf;
  }
  os << "+----------------------+------------+----------+----------+----------+\n";
  return os.str();
}

void write_report_csv(const std::vector<EvalRow>& rows, const std::filesystem::path& file) {
  std::ofstream out(file);
  if (!out) throw std::runtime_error("cannot write report " + file.string());
  out << "sequence,mode,rmse_roll_deg,rmse_pitch_deg,rmse_yaw_deg,duration_s\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%s,%s,%.6f,%.6f,%.6f,%.3f\n", r.domain_tag.c_str(),
                  r.mode.c_str(), r.rmse.roll, r.rmse.pitch, r.rmse.yaw, r.duration_s);
    out << buf;
  }
}

void write_time_series_csv(const std::vector<TimeSeriesPoint>& series,
                           const std::filesystem::path& file) {
  std::ofstream out(file);
  if (!out) throw std::runtime_error("cannot write time series " + file.string());
  out << "t,est_roll,est_pitch,est_yaw,gt_roll,gt_pitch,gt_yaw,err_roll,err_pitch,err_yaw\n";
  char buf[512];
  for (const auto& p : series) {
    std::snprintf(buf, sizeof buf, "%lld,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f\n",
                  static_cast<long long>(p.t_ns), p.est.roll_deg, p.est.pitch_deg,
                  p.est.yaw_deg, p.gt.roll_deg, p.gt.pitch_deg, p.gt.yaw_deg, p.err_roll,
                  p.err_pitch, p.err_yaw);
    out << buf;
  }
}

namespace {

std::vector<std::size_t> subsample_indices(std::size_t n, std::size_t max_n, Rng& rng) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  if (n <= max_n) return idx;
  for (std::size_t i = 0; i < max_n; ++i)
    std::swap(idx[i], idx[i + rng.integer(n - i)]);
  idx.resize(max_n);
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace

void export_embeddings(const Checkpoint& ckpt, const std::vector<ImuSequence>& sequences,
                       const std::filesystem::path& file, std::size_t max_per_domain,
                       std::uint64_t seed) {
  if (sequences.size() < 2)
    throw std::invalid_argument("export_embeddings: need >= 2 domains");
  std::ofstream out(file);
  if (!out) throw std::runtime_error("cannot write embeddings " + file.string());
  const int d = ckpt.params.model.d_embed;
  out << "# per-timestep embeddings; suggested projector settings: t-SNE with "
         "perplexity=10, steps=1000\n";
  out << "domain_tag,t_ns";
  for (int i = 1; i <= d; ++i) out << ",e_" << i;
  out << "\n";
  Rng rng(seed);
  char buf[64];
  for (const ImuSequence& seq : sequences) {
    const Tensor e = embed(ckpt.params.theta_e, seq, ckpt.norm);
    const std::size_t n = seq.size();
    for (std::size_t k : subsample_indices(n, max_per_domain, rng)) {
      out << seq.domain_tag << "," << seq.t_ns[k];
      for (int c = 0; c < d; ++c) {
        std::snprintf(buf, sizeof buf, ",%.9g", e.data[std::size_t(c) * n + k]);
        out << buf;
      }
      out << "\n";
    }
  }
}

double linear_probe_accuracy(const std::vector<std::vector<double>>& features,
                             const std::vector<int>& labels, int n_classes,
                             std::uint64_t seed) {
  if (features.size() != labels.size() || features.empty())
    throw std::invalid_argument("linear_probe_accuracy: bad inputs");
  const std::size_t n = features.size();
  const std::size_t dim = features.front().size();

  Rng rng(seed);
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.integer(i)]);
  const std::size_t n_train = (n * 7) / 10;

  // W [classes x dim+1] trained by full-batch softmax regression.
  std::vector<double> w(std::size_t(n_classes) * (dim + 1), 0.0);
  std::vector<double> logits(n_classes), probs(n_classes);
  std::vector<double> grad(w.size());
  const double lr = 0.5;
  for (int epoch = 0; epoch < 200; ++epoch) {
    std::fill(grad.begin(), grad.end(), 0.0);
    for (std::size_t ii = 0; ii < n_train; ++ii) {
      const auto& x = features[order[ii]];
      const int y = labels[order[ii]];
      double mx = -1e300;
      for (int c = 0; c < n_classes; ++c) {
        double z = w[std::size_t(c) * (dim + 1) + dim];
        for (std::size_t j = 0; j < dim; ++j) z += w[std::size_t(c) * (dim + 1) + j] * x[j];
        logits[c] = z;
        mx = std::max(mx, z);
      }
      double zsum = 0.0;
      for (int c = 0; c < n_classes; ++c) zsum += (probs[c] = std::exp(logits[c] - mx));
      for (int c = 0; c < n_classes; ++c) {
        const double g = probs[c] / zsum - (c == y ? 1.0 : 0.0);
        for (std::size_t j = 0; j < dim; ++j)
          grad[std::size_t(c) * (dim + 1) + j] += g * x[j];
        grad[std::size_t(c) * (dim + 1) + dim] += g;
      }
    }
    for (std::size_t i = 0; i < w.size(); ++i) w[i] -= lr * grad[i] / double(n_train);
  }

  std::size_t correct = 0;
  for (std::size_t ii = n_train; ii < n; ++ii) {
    const auto& x = features[order[ii]];
    int best = 0;
    double best_z = -1e300;
    for (int c = 0; c < n_classes; ++c) {
      double z = w[std::size_t(c) * (dim + 1) + dim];
      for (std::size_t j = 0; j < dim; ++j) z += w[std::size_t(c) * (dim + 1) + j] * x[j];
      if (z > best_z) {
        best_z = z;
        best = c;
      }
    }
    if (best == labels[order[ii]]) ++correct;
  }
  return double(correct) / double(n - n_train);
}

namespace {

ProbeData build_probe(const std::vector<ImuSequence>& sequences, std::size_t max_per_domain,
                      std::uint64_t seed,
                      const std::function<std::vector<double>(const ImuSequence&, std::size_t)>&
                          featurize_prepared) {
  ProbeData out;
  out.n_classes = int(sequences.size());
  Rng rng(seed);
  for (std::size_t s = 0; s < sequences.size(); ++s) {
    for (std::size_t k : subsample_indices(sequences[s].size(), max_per_domain, rng)) {
      out.features.push_back(featurize_prepared(sequences[s], k));
      out.labels.push_back(int(s));
    }
  }
  return out;
}

}  // namespace

ProbeData probe_data_raw(const std::vector<ImuSequence>& sequences, const NormStats& norm,
                         std::size_t max_per_domain, std::uint64_t seed) {
  return build_probe(sequences, max_per_domain, seed,
                     [&](const ImuSequence& seq, std::size_t k) {
                       std::vector<double> f(6);
                       for (int c = 0; c < 3; ++c) {
                         f[c] = (seq.gyro[k][c] - norm.mean[c]) / norm.std[c];
                         f[3 + c] = (seq.accel[k][c] - norm.mean[3 + c]) / norm.std[3 + c];
                       }
                       return f;
                     });
}

ProbeData probe_data_embedded(const Checkpoint& ckpt, const std::vector<ImuSequence>& sequences,
                              std::size_t max_per_domain, std::uint64_t seed) {
  // Embeddings computed once per sequence, then sampled.
  std::vector<Tensor> embeds;
  embeds.reserve(sequences.size());
  for (const auto& seq : sequences) embeds.push_back(embed(ckpt.params.theta_e, seq, ckpt.norm));
  const int d = ckpt.params.model.d_embed;
  ProbeData out;
  out.n_classes = int(sequences.size());
  Rng rng(seed);
  for (std::size_t s = 0; s < sequences.size(); ++s) {
    const Tensor& e = embeds[s];
    const std::size_t n = sequences[s].size();
    for (std::size_t k : subsample_indices(n, max_per_domain, rng)) {
      std::vector<double> f(d);
      for (int c = 0; c < d; ++c) f[c] = e.data[std::size_t(c) * n + k];
      out.features.push_back(std::move(f));
      out.labels.push_back(int(s));
    }
  }
  return out;
}

}  // namespace imnd
