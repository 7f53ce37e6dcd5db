#include <benchmark/benchmark.h>

#include "imnd/denoiser.hpp"
#include "imnd/graph.hpp"
#include "imnd/imu_model.hpp"
#include "imnd/rng.hpp"
#include "imnd/so3.hpp"

namespace {

void BM_ExpSo3(benchmark::State& state) {
  imnd::Rng rng(7);
  std::vector<imnd::Vec3> vs(1024);
  for (auto& v : vs) v = imnd::Vec3(rng.normal(), rng.normal(), rng.normal());
  std::size_t i = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(imnd::so3::exp_so3(vs[i++ & 1023]));
  }
}
BENCHMARK(BM_ExpSo3);

void BM_LogSo3(benchmark::State& state) {
  imnd::Rng rng(7);
  std::vector<imnd::Mat3> rs(1024);
  for (auto& r : rs)
    r = imnd::so3::exp_so3(imnd::Vec3(rng.normal(), rng.normal(), rng.normal()));
  std::size_t i = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(imnd::so3::log_so3(rs[i++ & 1023]));
  }
}
BENCHMARK(BM_LogSo3);

void BM_DilatedConvForward(benchmark::State& state) {
  const int T = (int)state.range(0);
  imnd::ModelConfig model;
  imnd::Rng rng(11);
  imnd::ParamSet theta = imnd::init_denoiser(model, imnd::TrainMode::kFsdaF, 11).theta_g;
  imnd::Tensor x = imnd::Tensor::zeros({(std::int64_t)model.d_embed, (std::int64_t)T});
  for (double& v : x.data) v = rng.normal();
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        imnd::dilated_conv_forward(theta, x, model.dilations));
  }
  state.SetItemsProcessed(state.iterations() * T);
}
BENCHMARK(BM_DilatedConvForward)->Arg(600)->Arg(2000);

void BM_OrientationLoss(benchmark::State& state) {
  const std::size_t n = (std::size_t)state.range(0);
  imnd::DomainSpec spec;
  spec.duration_s = n / spec.rate_hz + 1.0;
  imnd::SynthDomain dom = imnd::synth_domain(spec, 3);
  std::vector<imnd::Vec3> omega(dom.trajectory.omegas.begin(),
                                dom.trajectory.omegas.begin() + n);
  std::vector<imnd::Mat3> gt(dom.trajectory.poses.begin(), dom.trajectory.poses.begin() + n);
  imnd::LossConfig cfg;
  for (auto _ : state) {
    benchmark::DoNotOptimize(imnd::orientation_loss(omega, gt, dom.trajectory.dt, cfg));
  }
  state.SetItemsProcessed(state.iterations() * n);
}
BENCHMARK(BM_OrientationLoss)->Arg(600)->Arg(2000);

}  // namespace

BENCHMARK_MAIN();
