#include "imnd/tensor.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace imnd {

Tensor Tensor::zeros(std::vector<std::int64_t> shape) {
  Tensor t;
  t.shape = std::move(shape);
  std::int64_t n = 1;
  for (auto d : t.shape) {
    if (d < 0) throw std::invalid_argument("Tensor: negative dimension");
    n *= d;
  }
  t.data.assign(static_cast<std::size_t>(n), 0.0);
  return t;
}

Tensor Tensor::full(std::vector<std::int64_t> shape, double value) {
  Tensor t = zeros(std::move(shape));
  std::fill(t.data.begin(), t.data.end(), value);
  return t;
}

Tensor Tensor::scalar(double value) {
  Tensor t;
  t.shape = {};
  t.data = {value};
  return t;
}

std::int64_t Tensor::numel() const {
  return std::accumulate(shape.begin(), shape.end(), std::int64_t{1},
                         std::multiplies<std::int64_t>());
}

bool Tensor::all_finite() const {
  for (double v : data)
    if (!std::isfinite(v)) return false;
  return true;
}

std::string Tensor::shape_str() const {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << "]";
  return os.str();
}

void ParamSet::add(const std::string& name, Tensor t) {
  if (has(name)) throw std::invalid_argument("ParamSet: duplicate name '" + name + "'");
  items_.emplace_back(name, std::move(t));
}

bool ParamSet::has(const std::string& name) const {
  for (const auto& [n, _] : items_)
    if (n == name) return true;
  return false;
}

Tensor& ParamSet::at(const std::string& name) {
  for (auto& [n, t] : items_)
    if (n == name) return t;
  throw std::out_of_range("ParamSet: no tensor named '" + name + "'");
}

const Tensor& ParamSet::at(const std::string& name) const {
  for (const auto& [n, t] : items_)
    if (n == name) return t;
  throw std::out_of_range("ParamSet: no tensor named '" + name + "'");
}

ParamSet ParamSet::zeros_like() const {
  ParamSet out;
  for (const auto& [n, t] : items_) out.add(n, Tensor::zeros(t.shape));
  return out;
}

namespace {

constexpr char kMagic[4] = {'I', 'M', 'N', 'D'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void write_le(std::ostream& out, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T read_le(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw std::runtime_error("paramset: truncated file");
  return v;
}

}  // namespace

void save_paramset(const ParamSet& params, std::ostream& out) {
  out.write(kMagic, 4);
  write_le(out, kVersion);
  write_le(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, t] : params) {
    write_le(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_le(out, static_cast<std::uint32_t>(t.shape.size()));
    for (auto d : t.shape) write_le(out, d);
    out.write(reinterpret_cast<const char*>(t.data.data()),
              static_cast<std::streamsize>(t.data.size() * sizeof(double)));
  }
  if (!out) throw std::runtime_error("paramset: write failed");
}

void save_paramset(const ParamSet& params, const std::filesystem::path& file) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw std::runtime_error("paramset: cannot open " + file.string());
  save_paramset(params, out);
}

ParamSet load_paramset(std::istream& in) {
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0)
    throw std::runtime_error("paramset: bad magic bytes (not an IMND file)");
  const auto version = read_le<std::uint32_t>(in);
  if (version != kVersion)
    throw std::runtime_error("paramset: unsupported version " + std::to_string(version));
  const auto count = read_le<std::uint32_t>(in);
  ParamSet params;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = read_le<std::uint32_t>(in);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    const auto ndim = read_le<std::uint32_t>(in);
    std::vector<std::int64_t> shape(ndim);
    for (auto& d : shape) d = read_le<std::int64_t>(in);
    Tensor t = Tensor::zeros(shape);
    in.read(reinterpret_cast<char*>(t.data.data()),
            static_cast<std::streamsize>(t.data.size() * sizeof(double)));
    if (!in) throw std::runtime_error("paramset: truncated tensor payload for '" + name + "'");
    params.add(name, std::move(t));
  }
  return params;
}

ParamSet load_paramset(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw std::runtime_error("paramset: cannot open " + file.string());
  return load_paramset(in);
}

}  // namespace imnd
