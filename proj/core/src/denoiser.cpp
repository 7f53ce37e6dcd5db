#include "imnd/denoiser.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

#include "imnd/rng.hpp"

namespace imnd {

int ModelConfig::receptive_field() const {
  return 1 + (kernel - 1) * std::accumulate(dilations.begin(), dilations.end(), 0);
}

void LossConfig::validate() const {
  if (gamma < 0.0) throw std::invalid_argument("LossConfig: gamma must be >= 0");
  if (huber_delta <= 0.0) throw std::invalid_argument("LossConfig: huber_delta must be > 0");
  if (recon_noise_std < 0.0) throw std::invalid_argument("LossConfig: noise std must be >= 0");
  if (j_set.empty()) throw std::invalid_argument("LossConfig: j_set must be non-empty");
  for (auto j : j_set)
    if (j < 1) throw std::invalid_argument("LossConfig: every j must be >= 1");
}

std::string to_string(TrainMode mode) {
  switch (mode) {
    case TrainMode::kFsdaF: return "fsda_f";
    case TrainMode::kFsda: return "fsda";
    case TrainMode::kDigdl: return "digdl";
  }
  return "?";
}

TrainMode parse_mode(const std::string& s) {
  if (s == "fsda_f") return TrainMode::kFsdaF;
  if (s == "fsda") return TrainMode::kFsda;
  if (s == "digdl") return TrainMode::kDigdl;
  throw std::invalid_argument("unknown training mode '" + s + "' (expected fsda_f|fsda|digdl)");
}

NormStats compute_norm_stats(std::span<const ImuSequence* const> seqs) {
  NormStats out;
  Vec6 sum = Vec6::Zero(), sq = Vec6::Zero();
  std::size_t n = 0;
  for (const ImuSequence* seq : seqs) {
    for (std::size_t k = 0; k < seq->size(); ++k) {
      Vec6 u;
      u << seq->gyro[k], seq->accel[k];
      sum += u;
      sq += u.cwiseProduct(u);
      ++n;
    }
  }
  if (n < 2) throw std::invalid_argument("compute_norm_stats: not enough samples");
  out.mean = sum / double(n);
  const Vec6 var = sq / double(n) - out.mean.cwiseProduct(out.mean);
  for (int i = 0; i < 6; ++i) out.std[i] = std::max(std::sqrt(std::max(var[i], 0.0)), 1e-8);
  return out;
}

namespace {

Tensor uniform_init(std::vector<std::int64_t> shape, double fan_in, double fan_out, Rng& rng,
                    double gain = 1.0) {
  Tensor t = Tensor::zeros(std::move(shape));
  const double limit = gain * std::sqrt(6.0 / (fan_in + fan_out));
  for (double& v : t.data) v = rng.uniform(-limit, limit);
  return t;
}

ParamSet init_mlp(const std::vector<int>& dims, Rng& rng) {
  ParamSet p;
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    p.add("l" + std::to_string(i) + ".w",
          uniform_init({dims[i + 1], dims[i]}, dims[i], dims[i + 1], rng));
    p.add("l" + std::to_string(i) + ".b", Tensor::zeros({dims[i + 1]}));
  }
  return p;
}

ParamSet init_cnn(int in_ch, int hidden_ch, int out_ch, int kernel, std::size_t layers, Rng& rng,
                  double final_gain) {
  ParamSet p;
  for (std::size_t i = 0; i < layers; ++i) {
    const int ci = (i == 0) ? in_ch : hidden_ch;
    const int co = (i + 1 == layers) ? out_ch : hidden_ch;
    const double gain = (i + 1 == layers) ? final_gain : 1.0;
    p.add("c" + std::to_string(i) + ".w",
          uniform_init({co, ci, kernel}, double(ci) * kernel, double(co) * kernel, rng, gain));
    p.add("c" + std::to_string(i) + ".b", Tensor::zeros({co}));
  }
  return p;
}

struct Bound {
  const ParamSet* src = nullptr;
  std::vector<Tape::NodeId> ids;

  Tape::NodeId find(const std::string& name) const {
    std::size_t i = 0;
    for (const auto& [n, _] : *src) {
      if (n == name) return ids[i];
      ++i;
    }
    throw std::out_of_range("bound params: no tensor named '" + name + "'");
  }
};

Bound bind(Tape& tape, const ParamSet& params) {
  Bound b;
  b.src = &params;
  for (const auto& [_, t] : params) b.ids.push_back(tape.param(t));
  return b;
}

ParamSet collect_grads(const Tape& tape, const Bound& b) {
  ParamSet out;
  std::size_t i = 0;
  for (const auto& [name, t] : *b.src) {
    Tensor g;
    try {
      g = tape.grad(b.ids[i]);
    } catch (const std::runtime_error&) {
      g = Tensor::zeros(t.shape);  // disconnected parameter
    }
    out.add(name, std::move(g));
    ++i;
  }
  return out;
}

Tape::NodeId mlp_graph(Tape& tape, const Bound& p, Tape::NodeId x) {
  Tape::NodeId cur = x;
  for (std::size_t i = 0;; ++i) {
    const std::string w = "l" + std::to_string(i) + ".w";
    if (!p.src->has(w)) break;
    const bool last = !p.src->has("l" + std::to_string(i + 1) + ".w");
    cur = tape.dense(cur, p.find(w), p.find("l" + std::to_string(i) + ".b"));
    if (!last) cur = tape.gelu(cur);
  }
  return cur;
}

Tape::NodeId cnn_graph(Tape& tape, const Bound& p, Tape::NodeId x,
                       const std::vector<int>& dilations) {
  Tape::NodeId cur = x;
  for (std::size_t i = 0; i < dilations.size(); ++i) {
    const std::string w = "c" + std::to_string(i) + ".w";
    cur = tape.conv1d(cur, p.find(w), p.find("c" + std::to_string(i) + ".b"), dilations[i]);
    if (i + 1 < dilations.size()) cur = tape.gelu(cur);
  }
  return cur;
}

Tensor normalized_input(const ImuSequence& window, const NormStats& norm) {
  const std::size_t n = window.size();
  if (n == 0) throw std::invalid_argument("empty window");
  Tensor u = Tensor::zeros({6, static_cast<std::int64_t>(n)});
  for (std::size_t k = 0; k < n; ++k) {
    for (int c = 0; c < 3; ++c) {
      u.data[c * n + k] = (window.gyro[k][c] - norm.mean[c]) / norm.std[c];
      u.data[(3 + c) * n + k] = (window.accel[k][c] - norm.mean[3 + c]) / norm.std[3 + c];
    }
  }
  return u;
}

Tensor raw_gyro_tensor(const ImuSequence& window) {
  const std::size_t n = window.size();
  Tensor x = Tensor::zeros({3, static_cast<std::int64_t>(n)});
  for (std::size_t k = 0; k < n; ++k)
    for (int c = 0; c < 3; ++c) x.data[c * n + k] = window.gyro[k][c];
  return x;
}

Tensor noise_tensor(std::vector<std::int64_t> shape, double std, std::uint64_t seed) {
  Tensor t = Tensor::zeros(std::move(shape));
  Rng rng(seed);
  for (double& v : t.data) v = std * rng.normal();
  return t;
}

Tensor c_hat_tensor(const Mat3& c) {
  Tensor t = Tensor::zeros({3, 3});
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) t.data[i * 3 + j] = c(i, j);
  return t;
}

}  // namespace

DenoiserParams init_denoiser(const ModelConfig& cfg, TrainMode mode, std::uint64_t seed) {
  Rng rng(seed);
  DenoiserParams p;
  p.model = cfg;
  const std::size_t layers = cfg.dilations.size();
  if (mode == TrainMode::kDigdl) {
    p.theta_g = init_cnn(6, cfg.conv_channels, 3, cfg.kernel, layers, rng, 0.1);
    return p;
  }
  std::vector<int> dims{6};
  dims.insert(dims.end(), cfg.mlp_hidden.begin(), cfg.mlp_hidden.end());
  dims.push_back(cfg.d_embed);
  p.theta_e = init_mlp(dims, rng);
  p.theta_r = init_cnn(cfg.d_embed, cfg.conv_channels, 6, cfg.kernel, layers, rng, 1.0);
  p.theta_g = init_cnn(cfg.d_embed, cfg.conv_channels, 3, cfg.kernel, layers, rng, 0.1);
  return p;
}

Tensor mlp_forward(const ParamSet& params, const Tensor& x) {
  Tape tape;
  Bound b = bind(tape, params);
  return tape.value(mlp_graph(tape, b, tape.constant(x)));
}

Tensor dilated_conv_forward(const ParamSet& params, const Tensor& x,
                            const std::vector<int>& dilations) {
  Tape tape;
  Bound b = bind(tape, params);
  return tape.value(cnn_graph(tape, b, tape.constant(x), dilations));
}

Tensor embed(const ParamSet& theta_e, const ImuSequence& window, const NormStats& norm) {
  return mlp_forward(theta_e, normalized_input(window, norm));
}

Reconstruction reconstruct(const ParamSet& theta_e, const ParamSet& theta_r,
                           const ModelConfig& model, const ImuSequence& window,
                           const NormStats& norm, double noise_std, std::uint64_t seed) {
  Tape tape;
  Bound be = bind(tape, theta_e);
  Bound br = bind(tape, theta_r);
  const Tape::NodeId u = tape.constant(normalized_input(window, norm));
  Tape::NodeId e = mlp_graph(tape, be, u);
  if (noise_std > 0.0)
    e = tape.add(e, tape.constant(noise_tensor(tape.value(e).shape, noise_std, seed)));
  const Tensor& rec = tape.value(cnn_graph(tape, br, e, model.dilations));

  Reconstruction out;
  const std::size_t n = window.size();
  out.gyro.resize(n);
  out.accel.resize(n);
  for (std::size_t k = 0; k < n; ++k)
    for (int c = 0; c < 3; ++c) {
      out.gyro[k][c] = rec.data[c * n + k] * norm.std[c] + norm.mean[c];
      out.accel[k][c] = rec.data[(3 + c) * n + k] * norm.std[3 + c] + norm.mean[3 + c];
    }
  return out;
}

double recon_loss(const Reconstruction& rec, const ImuSequence& src, const NormStats& norm) {
  if (rec.gyro.size() != src.size() || rec.accel.size() != src.size())
    throw std::invalid_argument("recon_loss: length mismatch");
  double acc = 0.0;
  for (std::size_t k = 0; k < src.size(); ++k)
    for (int c = 0; c < 3; ++c) {
      const double dg = (rec.gyro[k][c] - src.gyro[k][c]) / norm.std[c];
      const double da = (rec.accel[k][c] - src.accel[k][c]) / norm.std[3 + c];
      acc += dg * dg + da * da;
    }
  return acc / (6.0 * double(src.size()));
}

std::vector<Vec3> denoise(const DenoiserParams& params, const ImuSequence& window,
                          const NormStats& norm, TrainMode mode) {
  const int rf = params.model.receptive_field();
  if (window.size() < static_cast<std::size_t>(rf))
    throw std::invalid_argument("denoise: window of " + std::to_string(window.size()) +
                                " samples is below the receptive field (" + std::to_string(rf) +
                                ")");
  Tape tape;
  const Tensor u = normalized_input(window, norm);
  Tape::NodeId gin;
  if (mode == TrainMode::kDigdl) {
    gin = tape.constant(u);
  } else {
    Bound be = bind(tape, params.theta_e);
    gin = mlp_graph(tape, be, tape.constant(u));
  }
  Bound bg = bind(tape, params.theta_g);
  const Tensor& w_prime = tape.value(cnn_graph(tape, bg, gin, params.model.dilations));

  const std::size_t n = window.size();
  std::vector<Vec3> out(n);
  for (std::size_t k = 0; k < n; ++k) {
    const Vec3 wp(w_prime.data[0 * n + k], w_prime.data[1 * n + k], w_prime.data[2 * n + k]);
    out[k] = params.c_hat * window.gyro[k] + wp;
  }
  return out;
}

OrientationLossSpec make_orientation_spec(const std::vector<Mat3>& gt_poses, double dt,
                                          const LossConfig& cfg) {
  cfg.validate();
  const std::size_t n = gt_poses.size();
  const std::size_t max_j = *std::max_element(cfg.j_set.begin(), cfg.j_set.end());
  if (n <= max_j)
    throw std::invalid_argument("orientation loss: sequence length " + std::to_string(n) +
                                " must exceed max stride " + std::to_string(max_j));
  OrientationLossSpec spec;
  spec.dt = dt;
  spec.huber_delta = cfg.huber_delta;
  for (std::size_t j : cfg.j_set) {
    OrientationLossSpec::StrideSet ss;
    ss.j = j;
    for (std::size_t i = 0; i + j <= n - 1; i += j) {
      ss.starts.push_back(i);
      ss.gt_increments.push_back(gt_poses[i].transpose() * gt_poses[i + j]);
    }
    spec.strides.push_back(std::move(ss));
  }
  return spec;
}

double orientation_loss(const std::vector<Vec3>& omega_hat, const std::vector<Mat3>& gt_poses,
                        double dt, const LossConfig& cfg) {
  if (omega_hat.size() != gt_poses.size())
    throw std::invalid_argument("orientation_loss: rate/pose length mismatch");
  Tape tape;
  Tensor w = Tensor::zeros({3, static_cast<std::int64_t>(omega_hat.size())});
  for (std::size_t k = 0; k < omega_hat.size(); ++k)
    for (int c = 0; c < 3; ++c) w.data[c * omega_hat.size() + k] = omega_hat[k][c];
  return tape.value_scalar(
      tape.orientation_loss(tape.constant(std::move(w)), make_orientation_spec(gt_poses, dt, cfg)));
}

WindowData prepare_window(const ImuSequence& window, const NormStats& norm,
                          const LossConfig& cfg) {
  if (!window.has_gt()) throw std::invalid_argument("prepare_window: window carries no gt");
  WindowData wd;
  wd.u_norm = normalized_input(window, norm);
  wd.raw_gyro = raw_gyro_tensor(window);
  wd.orient = make_orientation_spec(window.gt_poses, window.dt, cfg);
  return wd;
}

LossResult task_loss(const DenoiserParams& params, std::span<const WindowData> batch,
                     const LossConfig& cfg, TrainMode mode, std::uint64_t noise_seed,
                     bool want_grads) {
  if (batch.empty()) throw std::invalid_argument("task_loss: empty batch");
  cfg.validate();
  Tape tape;
  const bool digdl = (mode == TrainMode::kDigdl);
  Bound be, br;
  if (!digdl) {
    be = bind(tape, params.theta_e);
    br = bind(tape, params.theta_r);
  }
  Bound bg = bind(tape, params.theta_g);
  const Tape::NodeId c_hat = tape.param(c_hat_tensor(params.c_hat));

  std::vector<std::pair<Tape::NodeId, double>> recon_terms, orient_terms;
  Rng seeder(noise_seed);
  const double inv_b = 1.0 / double(batch.size());
  for (const WindowData& wd : batch) {
    const Tape::NodeId u = tape.constant(wd.u_norm);
    Tape::NodeId gin = u;
    if (!digdl) {
      const Tape::NodeId e = mlp_graph(tape, be, u);
      Tape::NodeId r_in = e;
      if (cfg.recon_noise_std > 0.0)
        r_in = tape.add(e, tape.constant(noise_tensor(tape.value(e).shape, cfg.recon_noise_std,
                                                      seeder.raw())));
      recon_terms.emplace_back(tape.mse(cnn_graph(tape, br, r_in, params.model.dilations), u),
                               inv_b);
      gin = e;
    }
    const Tape::NodeId w_prime = cnn_graph(tape, bg, gin, params.model.dilations);
    const Tape::NodeId w_hat =
        tape.add(tape.dense(tape.constant(wd.raw_gyro), c_hat), w_prime);
    orient_terms.emplace_back(tape.orientation_loss(w_hat, wd.orient), inv_b);
  }

  LossResult res;
  for (const auto& [id, w] : recon_terms) res.loss_r += w * tape.value_scalar(id);
  for (const auto& [id, w] : orient_terms) res.loss_d += w * tape.value_scalar(id);

  std::vector<std::pair<Tape::NodeId, double>> all;
  if (digdl) {
    all = orient_terms;
    res.total = res.loss_d;
  } else {
    all = recon_terms;
    for (auto [id, w] : orient_terms) all.emplace_back(id, cfg.gamma * w);
    res.total = res.loss_r + cfg.gamma * res.loss_d;
  }

  if (want_grads) {
    tape.backward(tape.combine(all));
    if (!digdl) {
      res.grad_e = collect_grads(tape, be);
      res.grad_r = collect_grads(tape, br);
    }
    res.grad_g = collect_grads(tape, bg);
    try {
      const Tensor& gc = tape.grad(c_hat);
      for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) res.grad_c_hat(i, j) = gc.data[i * 3 + j];
    } catch (const std::runtime_error&) {
      res.grad_c_hat.setZero();
    }
  }
  return res;
}

namespace {

Tensor vec_to_tensor(const std::vector<double>& v) {
  Tensor t = Tensor::zeros({static_cast<std::int64_t>(v.size())});
  t.data = v;
  return t;
}

void add_prefixed(ParamSet& dst, const std::string& prefix, const ParamSet& src) {
  for (const auto& [name, t] : src) dst.add(prefix + name, t);
}

ParamSet take_prefixed(const ParamSet& src, const std::string& prefix) {
  ParamSet out;
  for (const auto& [name, t] : src)
    if (name.rfind(prefix, 0) == 0) out.add(name.substr(prefix.size()), t);
  return out;
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& file) {
  ParamSet all;
  const ModelConfig& m = ckpt.params.model;
  all.add("meta.mode", Tensor::scalar(double(static_cast<int>(ckpt.mode))));
  all.add("meta.model", vec_to_tensor({double(m.d_embed), double(m.conv_channels),
                                       double(m.kernel)}));
  all.add("meta.mlp_hidden",
          vec_to_tensor(std::vector<double>(m.mlp_hidden.begin(), m.mlp_hidden.end())));
  all.add("meta.dilations",
          vec_to_tensor(std::vector<double>(m.dilations.begin(), m.dilations.end())));
  all.add("meta.loss", vec_to_tensor({ckpt.loss.gamma, ckpt.loss.huber_delta,
                                      ckpt.loss.recon_noise_std}));
  all.add("meta.j_set",
          vec_to_tensor(std::vector<double>(ckpt.loss.j_set.begin(), ckpt.loss.j_set.end())));
  all.add("meta.adapt", vec_to_tensor({ckpt.alpha, double(ckpt.inner_steps),
                                      double(ckpt.adapt_window)}));
  all.add("meta.domain_tag",
          vec_to_tensor(std::vector<double>(ckpt.domain_tag.begin(), ckpt.domain_tag.end())));
  all.add("norm.mean", vec_to_tensor({ckpt.norm.mean[0], ckpt.norm.mean[1], ckpt.norm.mean[2],
                                      ckpt.norm.mean[3], ckpt.norm.mean[4], ckpt.norm.mean[5]}));
  all.add("norm.std", vec_to_tensor({ckpt.norm.std[0], ckpt.norm.std[1], ckpt.norm.std[2],
                                     ckpt.norm.std[3], ckpt.norm.std[4], ckpt.norm.std[5]}));
  all.add("c_hat", c_hat_tensor(ckpt.params.c_hat));
  add_prefixed(all, "e.", ckpt.params.theta_e);
  add_prefixed(all, "r.", ckpt.params.theta_r);
  add_prefixed(all, "g.", ckpt.params.theta_g);
  save_paramset(all, file);
}

Checkpoint load_checkpoint(const std::filesystem::path& file) {
  const ParamSet all = load_paramset(file);
  Checkpoint ckpt;
  ckpt.mode = static_cast<TrainMode>(int(all.at("meta.mode").data[0]));
  const auto& mm = all.at("meta.model").data;
  ckpt.params.model.d_embed = int(mm[0]);
  ckpt.params.model.conv_channels = int(mm[1]);
  ckpt.params.model.kernel = int(mm[2]);
  ckpt.params.model.mlp_hidden.clear();
  for (double v : all.at("meta.mlp_hidden").data) ckpt.params.model.mlp_hidden.push_back(int(v));
  ckpt.params.model.dilations.clear();
  for (double v : all.at("meta.dilations").data) ckpt.params.model.dilations.push_back(int(v));
  const auto& ml = all.at("meta.loss").data;
  ckpt.loss.gamma = ml[0];
  ckpt.loss.huber_delta = ml[1];
  ckpt.loss.recon_noise_std = ml[2];
  ckpt.loss.j_set.clear();
  for (double v : all.at("meta.j_set").data) ckpt.loss.j_set.push_back(std::size_t(v));
  const auto& ma = all.at("meta.adapt").data;
  ckpt.alpha = ma[0];
  ckpt.inner_steps = int(ma[1]);
  if (ma.size() > 2) ckpt.adapt_window = std::size_t(ma[2]);
  ckpt.domain_tag.clear();
  for (double v : all.at("meta.domain_tag").data) ckpt.domain_tag.push_back(char(int(v)));
  for (int i = 0; i < 6; ++i) {
    ckpt.norm.mean[i] = all.at("norm.mean").data[i];
    ckpt.norm.std[i] = all.at("norm.std").data[i];
  }
  const auto& ch = all.at("c_hat").data;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) ckpt.params.c_hat(i, j) = ch[i * 3 + j];
  ckpt.params.theta_e = take_prefixed(all, "e.");
  ckpt.params.theta_r = take_prefixed(all, "r.");
  ckpt.params.theta_g = take_prefixed(all, "g.");
  return ckpt;
}

}  // namespace imnd
