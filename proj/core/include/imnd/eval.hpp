#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "imnd/denoiser.hpp"
#include "imnd/meta_trainer.hpp"

namespace imnd {

struct RmseEuler {
  double roll = 0.0;
  double pitch = 0.0;
  double yaw = 0.0;  // degrees
};

/// Per-axis RMSE of ZYX Euler angles; differences wrapped to (-180, 180].
RmseEuler rmse_euler(const std::vector<Mat3>& est, const std::vector<Mat3>& gt);

struct EvalRow {
  std::string domain_tag;
  std::string mode;
  RmseEuler rmse;
  double duration_s = 0.0;
};

struct TimeSeriesPoint {
  std::int64_t t_ns = 0;
  so3::EulerZYX est;
  so3::EulerZYX gt;
  double err_roll = 0.0, err_pitch = 0.0, err_yaw = 0.0;  // wrapped degrees
};

struct EvalResult {
  EvalRow row;
  std::vector<TimeSeriesPoint> series;
};

/// Denoise the query, integrate from the query's first gt pose and compare.
/// adapt=true runs few-shot adaptation on the support segment first.
EvalResult evaluate(const Checkpoint& ckpt, const MetaTask& task, bool adapt,
                    std::uint64_t seed = 0);

/// Raw gyro integration baseline (no model).
EvalResult evaluate_raw(const MetaTask& task);

/// Fixed-layout table (sequence x mode x axis) plus a CSV with stable columns.
std::string report_table(const std::vector<EvalRow>& rows);
void write_report_csv(const std::vector<EvalRow>& rows, const std::filesystem::path& file);

void write_time_series_csv(const std::vector<TimeSeriesPoint>& series,
                           const std::filesystem::path& file);

/// Per-timestep embeddings, subsampled to at most `max_per_domain` rows per
/// domain. CSV columns: domain_tag,t_ns,e_1..e_d.
void export_embeddings(const Checkpoint& ckpt, const std::vector<ImuSequence>& sequences,
                       const std::filesystem::path& file, std::size_t max_per_domain = 2000,
                       std::uint64_t seed = 0);

/// Multinomial logistic-regression probe classifying domain_tag from feature
/// rows; returns held-out accuracy. Lower accuracy on embeddings means better
/// domain mixing.
double linear_probe_accuracy(const std::vector<std::vector<double>>& features,
                             const std::vector<int>& labels, int n_classes,
                             std::uint64_t seed = 0);

/// Feature rows for the probe: raw normalized channels or trained embeddings.
struct ProbeData {
  std::vector<std::vector<double>> features;
  std::vector<int> labels;
  int n_classes = 0;
};
ProbeData probe_data_raw(const std::vector<ImuSequence>& sequences, const NormStats& norm,
                         std::size_t max_per_domain = 2000, std::uint64_t seed = 0);
ProbeData probe_data_embedded(const Checkpoint& ckpt, const std::vector<ImuSequence>& sequences,
                              std::size_t max_per_domain = 2000, std::uint64_t seed = 0);

}  // namespace imnd
