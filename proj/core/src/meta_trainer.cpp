#include "imnd/meta_trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace imnd {

void TrainConfig::validate() const {
  if (alpha <= 0.0 || beta <= 0.0)
    throw std::invalid_argument("TrainConfig: learning rates must be > 0");
  if (inner_steps < 1) throw std::invalid_argument("TrainConfig: inner_steps must be >= 1");
  if (adapt_steps < 0 || adapt_alpha < 0.0)
    throw std::invalid_argument("TrainConfig: adapt recipe must be >= 0");
  if (task_batch < 1) throw std::invalid_argument("TrainConfig: task_batch must be >= 1");
  if (outer_iters < 1) throw std::invalid_argument("TrainConfig: outer_iters must be >= 1");
  if (max_windows < 1) throw std::invalid_argument("TrainConfig: max_windows must be >= 1");
  if (window_len < static_cast<std::size_t>(model.receptive_field()))
    throw std::invalid_argument("TrainConfig: window_len below the receptive field (" +
                                std::to_string(model.receptive_field()) + ")");
  loss.validate();
}

void write_train_log(const std::vector<TrainLogRow>& rows, const std::filesystem::path& file) {
  std::ofstream out(file);
  if (!out) throw std::runtime_error("cannot write training log " + file.string());
  out << "iter,mode,task,loss_R,loss_D,loss_total\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%ld,%s,%s,%.17g,%.17g,%.17g\n", r.iter, r.mode.c_str(),
                  r.task.c_str(), r.loss_r, r.loss_d, r.loss_total);
    out << buf;
  }
}

ParamSet inner_adapt(const DenoiserParams& params, std::span<const WindowData> support,
                     double alpha, int steps, const LossConfig& cfg, std::uint64_t noise_seed) {
  if (support.empty()) throw std::invalid_argument("inner_adapt: empty support batch");
  DenoiserParams cur = params;
  for (int k = 0; k < steps; ++k) {
    const LossResult res =
        task_loss(cur, support, cfg, TrainMode::kFsdaF, noise_seed + std::uint64_t(k), true);
    sgd_step(cur.theta_e, res.grad_e, alpha);
  }
  return cur.theta_e;
}

namespace {

void axpy(ParamSet& y, const ParamSet& x, double a) {
  for (auto& [name, t] : y) {
    const Tensor& s = x.at(name);
    for (std::size_t i = 0; i < t.data.size(); ++i) t.data[i] += a * s.data[i];
  }
}

double param_norm(const ParamSet& p) {
  double acc = 0.0;
  for (const auto& [_, t] : p)
    for (double v : t.data) acc += v * v;
  return std::sqrt(acc);
}

}  // namespace

MamlTaskResult maml_task_grads(const MamlEval& eval, const ParamSet& inner_init,
                               const ParamSet& outer_template, double alpha, int steps,
                               bool first_order) {
  MamlTaskResult res;
  std::vector<ParamSet> trajectory;  // inner params entering each step
  ParamSet inner = inner_init;
  for (int k = 0; k < steps; ++k) {
    trajectory.push_back(inner);
    ParamSet g = inner.zeros_like();
    eval(inner, k, nullptr, &g, nullptr);
    axpy(inner, g, -alpha);
  }
  res.adapted_inner = inner;

  ParamSet v = inner.zeros_like();
  res.grad_outer = outer_template.zeros_like();
  eval(inner, -1, &res.query_loss, &v, &res.grad_outer);

  if (!first_order) {
    for (int k = steps - 1; k >= 0; --k) {
      const double vn = param_norm(v);
      if (vn < 1e-300) break;
      const double eps = 1e-5 * (1.0 + param_norm(trajectory[k])) / vn;
      ParamSet plus = trajectory[k];
      axpy(plus, v, eps);
      ParamSet minus = trajectory[k];
      axpy(minus, v, -eps);
      ParamSet gp_in = v.zeros_like(), gm_in = v.zeros_like();
      ParamSet gp_out = outer_template.zeros_like(), gm_out = outer_template.zeros_like();
      eval(plus, k, nullptr, &gp_in, &gp_out);
      eval(minus, k, nullptr, &gm_in, &gm_out);
      const double s = -alpha / (2.0 * eps);
      axpy(res.grad_outer, gp_out, s);
      axpy(res.grad_outer, gm_out, -s);
      axpy(v, gp_in, s);
      axpy(v, gm_in, -s);
    }
  }
  res.grad_inner_init = std::move(v);
  return res;
}

namespace {

ParamSet pack_outer(const DenoiserParams& p, TrainMode mode) {
  ParamSet out;
  if (mode != TrainMode::kDigdl)
    for (const auto& [name, t] : p.theta_r) out.add("r." + name, t);
  for (const auto& [name, t] : p.theta_g) out.add("g." + name, t);
  Tensor ch = Tensor::zeros({3, 3});
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) ch.data[i * 3 + j] = p.c_hat(i, j);
  out.add("c_hat", std::move(ch));
  return out;
}

void unpack_outer(const ParamSet& packed, DenoiserParams& p, TrainMode mode) {
  if (mode != TrainMode::kDigdl)
    for (auto& [name, t] : p.theta_r) t = packed.at("r." + name);
  for (auto& [name, t] : p.theta_g) t = packed.at("g." + name);
  const Tensor& ch = packed.at("c_hat");
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) p.c_hat(i, j) = ch.data[i * 3 + j];
}

ParamSet outer_grads_from(const LossResult& res, TrainMode mode) {
  ParamSet out;
  if (mode != TrainMode::kDigdl)
    for (const auto& [name, t] : res.grad_r) out.add("r." + name, t);
  for (const auto& [name, t] : res.grad_g) out.add("g." + name, t);
  Tensor ch = Tensor::zeros({3, 3});
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) ch.data[i * 3 + j] = res.grad_c_hat(i, j);
  out.add("c_hat", std::move(ch));
  return out;
}

std::vector<WindowData> sample_windows(std::span<const WindowData> all, int max_n, Rng& rng) {
  if (all.size() <= static_cast<std::size_t>(max_n))
    return {all.begin(), all.end()};
  std::vector<std::size_t> idx(all.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  for (std::size_t i = 0; i < static_cast<std::size_t>(max_n); ++i)
    std::swap(idx[i], idx[i + rng.integer(idx.size() - i)]);
  idx.resize(static_cast<std::size_t>(max_n));
  std::sort(idx.begin(), idx.end());
  std::vector<WindowData> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(all[i]);
  return out;
}

}  // namespace

TaskWindows prepare_task(const MetaTask& task, const NormStats& norm, const TrainConfig& cfg) {
  TaskWindows tw;
  tw.tag = task.domain_tag;
  for (const ImuSequence& w : window(task.support, cfg.window_len, cfg.window_stride))
    tw.support.push_back(prepare_window(w, norm, cfg.loss));
  for (const ImuSequence& w : window(task.query, cfg.window_len, cfg.window_stride))
    tw.query.push_back(prepare_window(w, norm, cfg.loss));
  return tw;
}

void meta_step(DenoiserParams& params, std::span<const TaskWindows> batch,
               const TrainConfig& cfg, AdamState& adam, Rng& rng,
               std::vector<TrainLogRow>* log, long iter) {
  if (batch.empty()) throw std::invalid_argument("meta_step: empty task batch");

  ParamSet grad_e = params.theta_e.zeros_like();
  ParamSet outer_template = pack_outer(params, cfg.mode);
  ParamSet grad_outer = outer_template.zeros_like();
  const double inv_b = 1.0 / double(batch.size());

  for (const TaskWindows& task : batch) {
    // Per-phase batches and noise seeds are frozen up front so repeated
    // evaluations at perturbed parameters see identical losses.
    std::vector<std::vector<WindowData>> support_steps;
    std::vector<std::uint64_t> seeds;
    for (int k = 0; k < cfg.inner_steps; ++k) {
      support_steps.push_back(sample_windows(task.support, cfg.max_windows, rng));
      seeds.push_back(rng.raw());
    }
    std::vector<WindowData> query = sample_windows(task.query, cfg.max_windows, rng);
    if (cfg.outer_include_support && !support_steps.empty())
      for (const auto& w : support_steps.front()) query.push_back(w);
    const std::uint64_t query_seed = rng.raw();

    double task_r = 0.0, task_d = 0.0, task_total = 0.0;
    const MamlEval eval = [&](const ParamSet& inner, int phase, double* loss,
                              ParamSet* g_inner, ParamSet* g_outer) {
      DenoiserParams p = params;
      p.theta_e = inner;
      unpack_outer(outer_template, p, cfg.mode);
      const auto& windows = (phase < 0) ? query : support_steps[phase];
      const std::uint64_t seed = (phase < 0) ? query_seed : seeds[phase];
      const bool want = (g_inner != nullptr) || (g_outer != nullptr);
      const LossResult res = task_loss(p, windows, cfg.loss, cfg.mode, seed, want);
      if (loss) *loss = res.total;
      if (g_inner) *g_inner = res.grad_e;
      if (g_outer) *g_outer = outer_grads_from(res, cfg.mode);
      if (phase < 0 && loss) {
        task_r = res.loss_r;
        task_d = res.loss_d;
        task_total = res.total;
      }
    };

    const MamlTaskResult res = maml_task_grads(eval, params.theta_e, outer_template, cfg.alpha,
                                               cfg.inner_steps, cfg.first_order);
    axpy(grad_e, res.grad_inner_init, inv_b);
    axpy(grad_outer, res.grad_outer, inv_b);
    if (log)
      log->push_back({iter, to_string(cfg.mode), task.tag, task_r, task_d, task_total});
  }

  ParamSet packed = pack_outer(params, cfg.mode);
  ParamSet packed_grads = grad_outer;
  ParamSet all;
  for (const auto& [name, t] : params.theta_e) all.add("e." + name, t);
  for (const auto& [name, t] : packed) all.add(name, t);
  ParamSet all_grads;
  for (const auto& [name, t] : grad_e) all_grads.add("e." + name, t);
  for (const auto& [name, t] : packed_grads) all_grads.add(name, t);
  adam_step(adam, all, all_grads, cfg.beta);
  for (auto& [name, t] : params.theta_e) t = all.at("e." + name);
  ParamSet new_outer = outer_template.zeros_like();
  for (auto& [name, t] : new_outer) t = all.at(name);
  unpack_outer(new_outer, params, cfg.mode);
}

TrainOutput train(const TrainConfig& cfg, const std::vector<MetaTask>& train_tasks) {
  cfg.validate();
  if (train_tasks.empty()) throw std::invalid_argument("train: no training tasks");

  std::vector<const ImuSequence*> stat_seqs;
  for (const MetaTask& t : train_tasks) {
    stat_seqs.push_back(&t.support);
    stat_seqs.push_back(&t.query);
  }
  const NormStats norm = compute_norm_stats(stat_seqs);

  std::vector<TaskWindows> tasks;
  for (const MetaTask& t : train_tasks) tasks.push_back(prepare_task(t, norm, cfg));

  Rng rng(cfg.seed);
  DenoiserParams params = init_denoiser(cfg.model, cfg.mode, rng.raw());

  TrainOutput out;
  if (cfg.mode == TrainMode::kFsdaF) {
    ParamSet packed = pack_outer(params, cfg.mode);
    ParamSet all;
    for (const auto& [name, t] : params.theta_e) all.add("e." + name, t);
    for (const auto& [name, t] : packed) all.add(name, t);
    AdamState adam = AdamState::init(all);
    for (int it = 0; it < cfg.outer_iters; ++it) {
      std::vector<TaskWindows> batch;
      for (int b = 0; b < cfg.task_batch; ++b)
        batch.push_back(tasks[rng.integer(tasks.size())]);
      meta_step(params, batch, cfg, adam, rng, &out.log, it);
    }
  } else {
    // Joint descent on the batched loss: fsda keeps the full framework, digdl
    // keeps only the generator path.
    ParamSet all;
    if (cfg.mode == TrainMode::kFsda) {
      for (const auto& [name, t] : params.theta_e) all.add("e." + name, t);
      for (const auto& [name, t] : params.theta_r) all.add("r." + name, t);
    }
    for (const auto& [name, t] : params.theta_g) all.add("g." + name, t);
    {
      Tensor ch = Tensor::zeros({3, 3});
      for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) ch.data[i * 3 + j] = params.c_hat(i, j);
      all.add("c_hat", std::move(ch));
    }
    AdamState adam = AdamState::init(all);
    for (int it = 0; it < cfg.outer_iters; ++it) {
      std::vector<WindowData> batch;
      std::vector<std::string> touched;
      for (int b = 0; b < cfg.task_batch; ++b) {
        const TaskWindows& task = tasks[rng.integer(tasks.size())];
        touched.push_back(task.tag);
        const std::vector<WindowData>& pool =
            (task.query.empty() || rng.integer(2) == 0) && !task.support.empty() ? task.support
                                                                                 : task.query;
        batch.push_back(pool[rng.integer(pool.size())]);
      }
      const LossResult res = task_loss(params, batch, cfg.loss, cfg.mode, rng.raw(), true);
      ParamSet grads;
      if (cfg.mode == TrainMode::kFsda) {
        for (const auto& [name, t] : res.grad_e) grads.add("e." + name, t);
        for (const auto& [name, t] : res.grad_r) grads.add("r." + name, t);
      }
      for (const auto& [name, t] : res.grad_g) grads.add("g." + name, t);
      Tensor ch = Tensor::zeros({3, 3});
      for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) ch.data[i * 3 + j] = res.grad_c_hat(i, j);
      grads.add("c_hat", std::move(ch));
      adam_step(adam, all, grads, cfg.beta);
      if (cfg.mode == TrainMode::kFsda)
        for (auto& [name, t] : params.theta_e) t = all.at("e." + name);
      if (cfg.mode == TrainMode::kFsda)
        for (auto& [name, t] : params.theta_r) t = all.at("r." + name);
      for (auto& [name, t] : params.theta_g) t = all.at("g." + name);
      const Tensor& ch2 = all.at("c_hat");
      for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) params.c_hat(i, j) = ch2.data[i * 3 + j];
      out.log.push_back({it, to_string(cfg.mode), touched.front(), res.loss_r, res.loss_d,
                         res.total});
    }
  }

  out.checkpoint.params = std::move(params);
  out.checkpoint.norm = norm;
  out.checkpoint.loss = cfg.loss;
  out.checkpoint.mode = cfg.mode;
  out.checkpoint.alpha = cfg.adapt_alpha > 0.0 ? cfg.adapt_alpha : cfg.alpha;
  out.checkpoint.inner_steps = cfg.adapt_steps > 0 ? cfg.adapt_steps : cfg.inner_steps;
  out.checkpoint.adapt_window = cfg.window_len;
  return out;
}

Checkpoint few_shot_adapt(const Checkpoint& ckpt, const ImuSequence& support,
                          std::uint64_t seed) {
  if (ckpt.mode == TrainMode::kDigdl)
    throw std::invalid_argument("few_shot_adapt: digdl checkpoints have no embedding module");
  if (!support.has_gt())
    throw std::invalid_argument("few_shot_adapt: support segment carries no ground truth");
  const std::size_t rf = static_cast<std::size_t>(ckpt.params.model.receptive_field());
  if (support.size() < rf)
    throw std::invalid_argument("few_shot_adapt: support of " + std::to_string(support.size()) +
                                " samples is below the receptive field (" + std::to_string(rf) +
                                ")");
  const std::size_t wlen = std::min(ckpt.adapt_window, support.size());
  const std::size_t stride = std::max<std::size_t>(wlen / 2, 1);
  std::vector<WindowData> windows;
  for (const ImuSequence& w : window(support, wlen, stride))
    windows.push_back(prepare_window(w, ckpt.norm, ckpt.loss));
  Rng rng(seed);
  windows = sample_windows(windows, 64, rng);

  Checkpoint out = ckpt;
  if (ckpt.inner_steps > 0)
    out.params.theta_e = inner_adapt(ckpt.params, windows, ckpt.alpha, ckpt.inner_steps,
                                     ckpt.loss, rng.raw());
  out.domain_tag = support.domain_tag;
  return out;
}

}  // namespace imnd
