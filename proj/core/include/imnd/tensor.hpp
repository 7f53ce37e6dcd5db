#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace imnd {

/// Dense 64-bit tensor, row-major. A [C x T] tensor stores channel c at
/// data[c*T + t].
struct Tensor {
  std::vector<std::int64_t> shape;
  std::vector<double> data;

  Tensor() = default;
  static Tensor zeros(std::vector<std::int64_t> shape);
  static Tensor full(std::vector<std::int64_t> shape, double value);
  static Tensor scalar(double value);

  std::int64_t numel() const;
  std::int64_t dim(std::size_t i) const { return shape.at(i); }
  double& at(std::int64_t i) { return data[i]; }
  double at(std::int64_t i) const { return data[i]; }
  bool same_shape(const Tensor& o) const { return shape == o.shape; }
  bool all_finite() const;
  std::string shape_str() const;
};

/// Named tensors with stable iteration order.
class ParamSet {
 public:
  void add(const std::string& name, Tensor t);
  bool has(const std::string& name) const;
  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  std::size_t size() const { return items_.size(); }
  auto begin() { return items_.begin(); }
  auto end() { return items_.end(); }
  auto begin() const { return items_.begin(); }
  auto end() const { return items_.end(); }

  /// Structural clone with all values zeroed (gradient accumulators).
  ParamSet zeros_like() const;

 private:
  std::vector<std::pair<std::string, Tensor>> items_;
};

/// Versioned little-endian binary: magic "IMND", u32 version, u32 record
/// count, then per record u32 name length, name bytes, u32 ndim, i64 dims,
/// f64 payload.
void save_paramset(const ParamSet& params, std::ostream& out);
void save_paramset(const ParamSet& params, const std::filesystem::path& file);
ParamSet load_paramset(std::istream& in);
ParamSet load_paramset(const std::filesystem::path& file);

}  // namespace imnd
