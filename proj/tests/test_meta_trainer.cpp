#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>

#include "imnd/imu_model.hpp"
#include "imnd/meta_trainer.hpp"
#include "imnd/so3.hpp"

using imnd::DenoiserParams;
using imnd::ImuSequence;
using imnd::LossConfig;
using imnd::MetaTask;
using imnd::ModelConfig;
using imnd::NormStats;
using imnd::ParamSet;
using imnd::Tensor;
using imnd::TrainConfig;
using imnd::TrainMode;
using imnd::Vec3;
using imnd::WindowData;

namespace {

ModelConfig tiny_model() {
  ModelConfig m;
  m.d_embed = 6;
  m.mlp_hidden = {12};
  m.conv_channels = 6;
  m.kernel = 3;
  m.dilations = {1, 2, 1};
  return m;
}

TrainConfig toy_train_config() {
  TrainConfig cfg;
  cfg.model = tiny_model();
  cfg.loss.j_set = {4, 8};
  cfg.window_len = 80;
  cfg.window_stride = 40;
  cfg.max_windows = 2;
  cfg.task_batch = 2;
  cfg.outer_iters = 5;
  cfg.inner_steps = 2;
  cfg.support_seconds = 12.0;
  cfg.beta = 1e-3;
  return cfg;
}

MetaTask synth_task(std::uint64_t seed, const std::string& tag) {
  imnd::DomainSpec spec;
  spec.name = tag;
  spec.duration_s = 30.0;
  spec.rate_hz = 100.0;
  imnd::SynthDomain dom = imnd::synth_domain(spec, seed);
  dom.sequence.domain_tag = tag;
  return imnd::split_meta_task(dom.sequence, 12.0);
}

bool same_data(const ParamSet& a, const ParamSet& b) {
  if (a.size() != b.size()) return false;
  auto ai = a.begin();
  auto bi = b.begin();
  for (; ai != a.end(); ++ai, ++bi)
    if (ai->first != bi->first || ai->second.data != bi->second.data) return false;
  return true;
}

}  // namespace

TEST_CASE("train config validation") {
  TrainConfig cfg = toy_train_config();
  cfg.validate();
  cfg.alpha = 0.0;
  CHECK_THROWS(cfg.validate());
  cfg = toy_train_config();
  cfg.inner_steps = 0;
  CHECK_THROWS(cfg.validate());
  cfg = toy_train_config();
  cfg.task_batch = 0;
  CHECK_THROWS(cfg.validate());
}

TEST_CASE("inner_adapt") {
  TrainConfig cfg = toy_train_config();
  MetaTask task = synth_task(1, "a");
  const ImuSequence* p = &task.support;
  NormStats norm = imnd::compute_norm_stats(std::span<const ImuSequence* const>(&p, 1));
  imnd::TaskWindows tw = imnd::prepare_task(task, norm, cfg);
  REQUIRE(!tw.support.empty());
  DenoiserParams params = imnd::init_denoiser(cfg.model, TrainMode::kFsdaF, 7);

  SUBCASE("alpha = 0 leaves theta_e untouched") {
    ParamSet out = imnd::inner_adapt(params, tw.support, 0.0, 3, cfg.loss, 5);
    CHECK(same_data(out, params.theta_e));
  }

  SUBCASE("one step equals one explicit sgd update on theta_e") {
    auto g = imnd::task_loss(params, tw.support, cfg.loss, TrainMode::kFsdaF, 5, true);
    ParamSet manual = params.theta_e;
    imnd::sgd_step(manual, g.grad_e, cfg.alpha);
    ParamSet out = imnd::inner_adapt(params, tw.support, cfg.alpha, 1, cfg.loss, 5);
    CHECK(same_data(out, manual));
  }

  SUBCASE("support loss decreases after adaptation") {
    const double before =
        imnd::task_loss(params, tw.support, cfg.loss, TrainMode::kFsdaF, 5, false).total;
    DenoiserParams adapted = params;
    adapted.theta_e = imnd::inner_adapt(params, tw.support, 1e-2, 5, cfg.loss, 5);
    const double after =
        imnd::task_loss(adapted, tw.support, cfg.loss, TrainMode::kFsdaF, 5, false).total;
    CHECK(after < before);
  }
}

// Scalar meta-least-squares problem with a closed-form MAML gradient:
// support loss 0.5 (w + b - y_s)^2, query loss 0.5 (w_K + b - y_q)^2 with
// w_K the K-step inner SGD iterate. Then e_K = (1-a)^K e_0 and
//   d Lq / d w_0 = eq (1-a)^K,   d Lq / d b = eq (1-a)^K.
TEST_CASE("maml_task_grads matches the analytic least-squares oracle") {
  const double alpha = 0.1, w0 = 0.3, b0 = -0.2, ys = 1.0, yq = 2.0;
  const int steps = 3;

  imnd::MamlEval eval = [&](const ParamSet& inner, int phase, double* loss,
                            ParamSet* grad_inner, ParamSet* grad_outer) {
    const double w = inner.at("w").data[0];
    const double y = phase < 0 ? yq : ys;
    const double e = w + b0 - y;
    if (loss) *loss = 0.5 * e * e;
    if (grad_inner) {
      *grad_inner = inner.zeros_like();
      grad_inner->at("w").data[0] = e;
    }
    if (grad_outer) {
      ParamSet tmpl;
      tmpl.add("b", Tensor::scalar(0.0));
      *grad_outer = tmpl;
      grad_outer->at("b").data[0] = e;
    }
  };

  ParamSet inner_init;
  inner_init.add("w", Tensor::scalar(w0));
  ParamSet outer_tmpl;
  outer_tmpl.add("b", Tensor::scalar(0.0));

  const double decay = std::pow(1.0 - alpha, steps);
  const double wk = ys - b0 + decay * (w0 + b0 - ys);
  const double eq = wk + b0 - yq;

  SUBCASE("second order") {
    auto res = imnd::maml_task_grads(eval, inner_init, outer_tmpl, alpha, steps, false);
    CHECK(res.query_loss == doctest::Approx(0.5 * eq * eq).epsilon(1e-10));
    CHECK(res.adapted_inner.at("w").data[0] == doctest::Approx(wk).epsilon(1e-10));
    CHECK(res.grad_inner_init.at("w").data[0] == doctest::Approx(eq * decay).epsilon(1e-5));
    CHECK(res.grad_outer.at("b").data[0] == doctest::Approx(eq * decay).epsilon(1e-5));
  }

  SUBCASE("first order drops the through-the-update terms") {
    auto res = imnd::maml_task_grads(eval, inner_init, outer_tmpl, alpha, steps, true);
    CHECK(res.grad_inner_init.at("w").data[0] == doctest::Approx(eq).epsilon(1e-10));
    CHECK(res.grad_outer.at("b").data[0] == doctest::Approx(eq).epsilon(1e-10));
  }

  SUBCASE("first and second order coincide for steps = 0") {
    auto a = imnd::maml_task_grads(eval, inner_init, outer_tmpl, alpha, 0, false);
    auto b = imnd::maml_task_grads(eval, inner_init, outer_tmpl, alpha, 0, true);
    CHECK(a.grad_inner_init.at("w").data[0] ==
          doctest::Approx(b.grad_inner_init.at("w").data[0]).epsilon(1e-12));
    CHECK(a.grad_outer.at("b").data[0] ==
          doctest::Approx(b.grad_outer.at("b").data[0]).epsilon(1e-12));
  }
}

TEST_CASE("scalar meta-problem converges to the analytic meta-optimum") {
  // Two tasks with y_s = y_q per task: the meta-optimal (w0, b) satisfies
  // residual zero at the adapted point for both tasks simultaneously when
  // w0 + b = mean(y) after full adaptation; with K steps and symmetric
  // targets y in {1, 3}, query losses are minimized at w0 + b = 2.
  const double alpha = 0.2;
  const int steps = 2;
  ParamSet inner;
  inner.add("w", Tensor::scalar(0.0));
  ParamSet outer;
  outer.add("b", Tensor::scalar(0.0));
  double b = 0.0, w = 0.0;
  const double lr = 0.1;
  for (int iter = 0; iter < 2000; ++iter) {
    double gw = 0.0, gb = 0.0;
    for (double y : {1.0, 3.0}) {
      imnd::MamlEval eval = [&](const ParamSet& inner_p, int, double* loss,
                                ParamSet* grad_inner, ParamSet* grad_outer) {
        const double e = inner_p.at("w").data[0] + b - y;
        if (loss) *loss = 0.5 * e * e;
        if (grad_inner) {
          *grad_inner = inner_p.zeros_like();
          grad_inner->at("w").data[0] = e;
        }
        if (grad_outer) {
          *grad_outer = outer.zeros_like();
          grad_outer->at("b").data[0] = e;
        }
      };
      ParamSet ip;
      ip.add("w", Tensor::scalar(w));
      auto res = imnd::maml_task_grads(eval, ip, outer, alpha, steps, false);
      gw += res.grad_inner_init.at("w").data[0];
      gb += res.grad_outer.at("b").data[0];
    }
    w -= lr * gw;
    b -= lr * gb;
  }
  CHECK(std::abs(w + b - 2.0) < 1e-3);
}

TEST_CASE("meta_step basics") {
  TrainConfig cfg = toy_train_config();
  cfg.seed = 3;
  MetaTask t1 = synth_task(1, "a");
  const ImuSequence* p = &t1.support;
  NormStats norm = imnd::compute_norm_stats(std::span<const ImuSequence* const>(&p, 1));
  imnd::TaskWindows tw = imnd::prepare_task(t1, norm, cfg);

  DenoiserParams params = imnd::init_denoiser(cfg.model, TrainMode::kFsdaF, 11);
  const ParamSet r_before = params.theta_r;

  // adam moments live on the flattened e./r./g. + c_hat parameter vector
  ParamSet all;
  for (const auto& [n, t] : params.theta_e) all.add("e." + n, t);
  for (const auto& [n, t] : params.theta_r) all.add("r." + n, t);
  for (const auto& [n, t] : params.theta_g) all.add("g." + n, t);
  all.add("c_hat", Tensor::zeros({3, 3}));
  imnd::AdamState adam = imnd::AdamState::init(all);
  imnd::Rng rng(5);
  std::vector<imnd::TaskWindows> batch{tw};
  CHECK_THROWS(imnd::meta_step(params, std::span<const imnd::TaskWindows>(batch.data(), 0),
                               cfg, adam, rng));
  // a real step changes the restructor (outer param)
  imnd::meta_step(params, batch, cfg, adam, rng);
  CHECK_FALSE(same_data(params.theta_r, r_before));
}

TEST_CASE("train determinism and modes") {
  TrainConfig cfg = toy_train_config();
  cfg.outer_iters = 4;
  cfg.seed = 9;
  std::vector<MetaTask> tasks{synth_task(1, "a"), synth_task(2, "b")};

  for (TrainMode mode : {TrainMode::kFsdaF, TrainMode::kFsda, TrainMode::kDigdl}) {
    cfg.mode = mode;
    auto out1 = imnd::train(cfg, tasks);
    auto out2 = imnd::train(cfg, tasks);
    CHECK(same_data(out1.checkpoint.params.theta_e, out2.checkpoint.params.theta_e));
    CHECK(same_data(out1.checkpoint.params.theta_g, out2.checkpoint.params.theta_g));
    CHECK((out1.checkpoint.params.c_hat - out2.checkpoint.params.c_hat).norm() == 0.0);
    REQUIRE(!out1.log.empty());
    CHECK(out1.log.size() == out2.log.size());
    CHECK(out1.log.back().loss_total == out2.log.back().loss_total);
  }

  cfg.mode = TrainMode::kDigdl;
  auto digdl = imnd::train(cfg, tasks);
  CHECK(digdl.checkpoint.params.theta_e.size() == 0);
  CHECK(digdl.checkpoint.params.theta_r.size() == 0);

  // fsda_f and fsda checkpoints share shapes (interchangeable at eval)
  cfg.mode = TrainMode::kFsdaF;
  auto f = imnd::train(cfg, tasks);
  cfg.mode = TrainMode::kFsda;
  auto j = imnd::train(cfg, tasks);
  auto fi = f.checkpoint.params.theta_e.begin();
  auto ji = j.checkpoint.params.theta_e.begin();
  for (; fi != f.checkpoint.params.theta_e.end(); ++fi, ++ji) {
    CHECK(fi->first == ji->first);
    CHECK(fi->second.shape == ji->second.shape);
  }
}

TEST_CASE("fsda training fits a single toy domain") {
  TrainConfig cfg = toy_train_config();
  cfg.mode = TrainMode::kFsda;
  cfg.outer_iters = 2000;
  cfg.max_windows = 8;
  cfg.beta = 3e-3;
  cfg.seed = 4;
  std::vector<MetaTask> tasks{synth_task(5, "solo")};
  auto out = imnd::train(cfg, tasks);
  REQUIRE(out.log.size() >= 100);
  double first = 0.0, last = 0.0;
  int head = 0, tail = 0;
  for (std::size_t i = 0; i < out.log.size(); ++i) {
    if (out.log[i].iter == 0) {
      first += out.log[i].loss_total;
      ++head;
    }
    if (out.log[i].iter >= cfg.outer_iters - 10) {
      last += out.log[i].loss_total;
      ++tail;
    }
  }
  first /= head;
  last /= tail;
  CHECK(last * 10.0 <= first);
}

TEST_CASE("full-batch autoencoder descent decreases L^R monotonically for 50 iters") {
  TrainConfig cfg = toy_train_config();
  cfg.loss.gamma = 0.0;
  cfg.loss.recon_noise_std = 0.0;
  MetaTask task = synth_task(6, "solo");
  const ImuSequence* p = &task.support;
  NormStats norm = imnd::compute_norm_stats(std::span<const ImuSequence* const>(&p, 1));
  imnd::TaskWindows tw = imnd::prepare_task(task, norm, cfg);
  std::vector<WindowData> batch(tw.support.begin(),
                                tw.support.begin() + std::min<std::size_t>(4, tw.support.size()));

  DenoiserParams params = imnd::init_denoiser(cfg.model, TrainMode::kFsda, 12);
  ParamSet all;
  for (const auto& [n, t] : params.theta_e) all.add("e." + n, t);
  for (const auto& [n, t] : params.theta_r) all.add("r." + n, t);
  imnd::AdamState adam = imnd::AdamState::init(all);

  double prev = std::numeric_limits<double>::infinity();
  for (int it = 0; it < 50; ++it) {
    const auto res = imnd::task_loss(params, batch, cfg.loss, TrainMode::kFsda, 0, true);
    CHECK(res.loss_r < prev);
    prev = res.loss_r;
    ParamSet grads;
    for (const auto& [n, t] : res.grad_e) grads.add("e." + n, t);
    for (const auto& [n, t] : res.grad_r) grads.add("r." + n, t);
    imnd::adam_step(adam, all, grads, 1e-3);
    for (auto& [n, t] : params.theta_e) t = all.at("e." + n);
    for (auto& [n, t] : params.theta_r) t = all.at("r." + n);
  }
}

TEST_CASE("few_shot_adapt") {
  TrainConfig cfg = toy_train_config();
  cfg.mode = TrainMode::kFsda;
  cfg.outer_iters = 30;
  cfg.seed = 2;
  std::vector<MetaTask> tasks{synth_task(1, "a"), synth_task(2, "b")};
  auto trained = imnd::train(cfg, tasks);
  imnd::Checkpoint ckpt = trained.checkpoint;
  ckpt.adapt_window = 80;

  MetaTask held_out = synth_task(77, "new_domain");

  SUBCASE("steps = 0 leaves parameters unchanged") {
    imnd::Checkpoint z = ckpt;
    z.inner_steps = 0;
    imnd::Checkpoint adapted = imnd::few_shot_adapt(z, held_out.support, 1);
    CHECK(same_data(adapted.params.theta_e, ckpt.params.theta_e));
    CHECK(adapted.domain_tag == "new_domain");
  }

  SUBCASE("adaptation only touches theta_e") {
    imnd::Checkpoint adapted = imnd::few_shot_adapt(ckpt, held_out.support, 1);
    CHECK(same_data(adapted.params.theta_r, ckpt.params.theta_r));
    CHECK(same_data(adapted.params.theta_g, ckpt.params.theta_g));
    CHECK((adapted.params.c_hat - ckpt.params.c_hat).norm() == 0.0);
    CHECK_FALSE(same_data(adapted.params.theta_e, ckpt.params.theta_e));
  }

  SUBCASE("unlabelled support is rejected") {
    ImuSequence no_gt = held_out.support;
    no_gt.gt_poses.clear();
    CHECK_THROWS(imnd::few_shot_adapt(ckpt, no_gt, 1));
  }

  SUBCASE("digdl checkpoints cannot adapt") {
    TrainConfig dcfg = cfg;
    dcfg.mode = TrainMode::kDigdl;
    dcfg.outer_iters = 2;
    auto d = imnd::train(dcfg, tasks);
    CHECK_THROWS(imnd::few_shot_adapt(d.checkpoint, held_out.support, 1));
  }
}

TEST_CASE("train log CSV format") {
  namespace fs = std::filesystem;
  const fs::path file = fs::temp_directory_path() / "imnd_train_log_test.csv";
  std::vector<imnd::TrainLogRow> rows{{0, "fsda_f", "a", 1.5, 0.25, 1.75},
                                      {1, "fsda_f", "b", 1.0, 0.5, 1.5}};
  imnd::write_train_log(rows, file);
  std::ifstream in(file);
  std::string line;
  std::getline(in, line);
  CHECK(line == "iter,mode,task,loss_R,loss_D,loss_total");
  std::getline(in, line);
  CHECK(line == "0,fsda_f,a,1.5,0.25,1.75");
  fs::remove(file);
}
