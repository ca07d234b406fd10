#include <benchmark/benchmark.h>

#include <opencv2/imgproc.hpp>

#include "fundus/clahe.hpp"
#include "fundus/nn/layers.hpp"
#include "fundus/postprocess.hpp"
#include "fundus/preprocess.hpp"
#include "fundus/segnet.hpp"

using namespace fundus;

namespace {

cv::Mat noise(int h, int w, int type) {
  cv::Mat m(h, w, type);
  cv::theRNG().state = 12345;
  cv::randu(m, cv::Scalar::all(0), cv::Scalar::all(256));
  return m;
}

void BM_Clahe(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  const cv::Mat img = noise(n, n, CV_8UC1);
  for (auto _ : state) benchmark::DoNotOptimize(clahe(img, {8, 8, 2.0}));
  state.SetItemsProcessed(state.iterations() * n * n);
}
BENCHMARK(BM_Clahe)->Arg(128)->Arg(512)->Unit(benchmark::kMillisecond);

void BM_ClsStack(benchmark::State& state) {
  const FundusImage patch(noise(550, 550, CV_8UC3), "bench");
  for (auto _ : state) benchmark::DoNotOptimize(build_cls_stack(patch));
}
BENCHMARK(BM_ClsStack)->Unit(benchmark::kMillisecond);

void BM_Conv3x3(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0));
  nn::Rng rng(1);
  nn::Conv2d conv(c, c, 3, 1, 1, true, rng);
  conv.set_training(false);
  nn::Tensor x({1, c, 64, 64}, 0.5f);
  for (auto _ : state) benchmark::DoNotOptimize(conv.forward(x));
  state.SetItemsProcessed(state.iterations() * 2LL * 9 * c * c * 64 * 64);
}
BENCHMARK(BM_Conv3x3)->Arg(16)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_TinySegNetForward(benchmark::State& state) {
  auto net = build_segnet(SegNetConfig::from_preset(SegPreset::Tiny, 11, 1));
  net->set_training(false);
  const nn::Tensor x({1, 11, 128, 128}, 0.25f);
  for (auto _ : state) benchmark::DoNotOptimize(net->forward(x));
}
BENCHMARK(BM_TinySegNetForward)->Unit(benchmark::kMillisecond);

void BM_EllipseFit(benchmark::State& state) {
  cv::Mat m = cv::Mat::zeros(320, 320, CV_8UC1);
  cv::ellipse(m, {160, 150}, {90, 60}, 25, 0, 360, cv::Scalar(1), cv::FILLED);
  for (auto _ : state) benchmark::DoNotOptimize(fit_max_ellipse(m));
}
BENCHMARK(BM_EllipseFit)->Unit(benchmark::kMicrosecond);

}  // namespace

BENCHMARK_MAIN();
