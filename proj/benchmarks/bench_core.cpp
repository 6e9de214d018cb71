#include <benchmark/benchmark.h>

#include <vector>

#include "fcdd/backbone.hpp"
#include "fcdd/heatmap.hpp"
#include "fcdd/metrics.hpp"
#include "fcdd/objective.hpp"
#include "fcdd/rng.hpp"
#include "fcdd/tensor.hpp"

namespace {

using namespace fcdd;

Tensor4 random_batch(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w,
                     std::uint64_t seed) {
    Rng rng(seed);
    Tensor4 t(n, c, h, w);
    for (double& v : t.values) v = rng.uniform(0.0, 1.0);
    return t;
}

void BM_forward_desk_s(benchmark::State& state) {
    BackboneSpec spec = BackboneSpec::preset("cnn-desk-s");
    spec.input_h = spec.input_w = state.range(0);
    const Backbone net = Backbone::build(spec, 1);
    const Tensor4 batch = random_batch(1, 3, spec.input_h, spec.input_w, 2);
    for (auto _ : state) {
        benchmark::DoNotOptimize(net.forward(batch));
    }
}
BENCHMARK(BM_forward_desk_s)->Arg(64)->Arg(128)->Arg(224);

void BM_train_step_desk_s(benchmark::State& state) {
    BackboneSpec spec = BackboneSpec::preset("cnn-desk-s");
    spec.input_h = spec.input_w = state.range(0);
    Backbone net = Backbone::build(spec, 1);
    const Tensor4 batch = random_batch(8, 3, spec.input_h, spec.input_w, 2);
    const std::vector<int> labels = {0, 1, 0, 1, 0, 1, 0, 1};
    for (auto _ : state) {
        ForwardCache cache;
        const Tensor4 out = net.forward(batch, cache);
        const LossGrad lg = fcdd_loss_grad(out, labels);
        benchmark::DoNotOptimize(net.backward(cache, lg.score_grad));
    }
}
BENCHMARK(BM_train_step_desk_s)->Arg(32)->Arg(64);

void BM_upsample(benchmark::State& state) {
    const bool fast = state.range(0) != 0;
    BackboneSpec spec = BackboneSpec::preset("cnn-desk-s");
    spec.input_h = spec.input_w = 224;
    const FieldGeometry geom = receptive_field(spec);
    Rng rng(3);
    AnomalyMap map;
    map.h = geom.out_h;
    map.w = geom.out_w;
    map.values.resize(static_cast<std::size_t>(map.cells()));
    for (double& v : map.values) v = rng.uniform(0.0, 1.0);
    const double delta = static_cast<double>(geom.extent) / 4.0;
    for (auto _ : state) {
        benchmark::DoNotOptimize(upsample(map, geom, delta, fast));
    }
}
BENCHMARK(BM_upsample)->Arg(0)->Arg(1);

void BM_roc_auc(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    Rng rng(4);
    std::vector<double> scores(n);
    std::vector<int> labels(n);
    for (std::size_t i = 0; i < n; ++i) {
        labels[i] = static_cast<int>(rng.uniform_int(0, 1));
        scores[i] = rng.uniform(0.0, 1.0) + 0.3 * labels[i];
    }
    for (auto _ : state) {
        benchmark::DoNotOptimize(roc_auc(scores, labels));
    }
}
BENCHMARK(BM_roc_auc)->Arg(1000)->Arg(10000)->Arg(100000);

}  // namespace

BENCHMARK_MAIN();
