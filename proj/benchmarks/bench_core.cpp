#include <benchmark/benchmark.h>

#include "minidetr/checkpoint.hpp"
#include "minidetr/data.hpp"
#include "minidetr/eval.hpp"
#include "minidetr/matching.hpp"
#include "minidetr/model.hpp"
#include "minidetr/rng.hpp"
#include "minidetr/trainer.hpp"

using namespace minidetr;

namespace {

Tensor random_tensor(const Shape& shape, Rng& rng) {
    Tensor t = Tensor::zeros(shape);
    for (double& v : t.value()) v = rng.uniform(-1.0, 1.0);
    return t;
}

void bm_matmul(benchmark::State& state) {
    int n = static_cast<int>(state.range(0));
    Rng rng(1);
    Tensor a = random_tensor({n, n}, rng), b = random_tensor({n, n}, rng);
    for (auto _ : state) {
        Tensor c = matmul(a, b);
        benchmark::DoNotOptimize(c.value().data());
    }
    state.SetItemsProcessed(state.iterations() * static_cast<long long>(n) * n * n);
}
BENCHMARK(bm_matmul)->Arg(64)->Arg(128)->Arg(256);

void bm_conv2d(benchmark::State& state) {
    Rng rng(2);
    Tensor input = random_tensor({3, 128, 128}, rng);
    Tensor kernels = random_tensor({8, 3, 3, 3}, rng);
    for (auto _ : state) {
        Tensor out = conv2d(input, kernels, 2, 1);
        benchmark::DoNotOptimize(out.value().data());
    }
}
BENCHMARK(bm_conv2d);

void bm_attention(benchmark::State& state) {
    int tokens = static_cast<int>(state.range(0));
    int d = 64;
    Rng rng(3);
    Tensor x = random_tensor({tokens, d}, rng);
    MhaWeights w;
    w.wq = random_tensor({d, d}, rng);
    w.bq = Tensor::zeros({d});
    w.wk = random_tensor({d, d}, rng);
    w.bk = Tensor::zeros({d});
    w.wv = random_tensor({d, d}, rng);
    w.bv = Tensor::zeros({d});
    w.wo = random_tensor({d, d}, rng);
    w.bo = Tensor::zeros({d});
    for (auto _ : state) {
        Tensor out = multi_head_attention(x, x, x, w, 4);
        benchmark::DoNotOptimize(out.value().data());
    }
}
BENCHMARK(bm_attention)->Arg(64)->Arg(256);

void bm_detector_forward(benchmark::State& state) {
    ModelConfig cfg;
    Detector model(cfg);
    Dataset ds = generate_synthetic_shapes(1, 3, 128, 7);
    for (auto _ : state) {
        DetectorOutput out = model.forward(ds.samples[0].image);
        benchmark::DoNotOptimize(out.boxes.value().data());
    }
}
BENCHMARK(bm_detector_forward)->Unit(benchmark::kMillisecond);

void bm_train_step(benchmark::State& state) {
    ModelConfig cfg;
    Detector model(cfg);
    Dataset ds = generate_synthetic_shapes(1, 3, 128, 7);
    const AnnotatedSample& s = ds.samples[0];
    for (auto _ : state) {
        Tape tape;
        Tape::Scope scope(tape);
        DetectorOutput out = model.forward(s.image);
        Assignment a = hungarian(match_cost(out.class_logits, out.boxes, s.gts, {}));
        Tensor loss = set_loss(out.class_logits, out.boxes, s.gts, a, {});
        tape.backward(loss);
        benchmark::DoNotOptimize(loss.value().data());
    }
}
BENCHMARK(bm_train_step)->Unit(benchmark::kMillisecond);

void bm_hungarian(benchmark::State& state) {
    int q = static_cast<int>(state.range(0)), g = static_cast<int>(state.range(1));
    Rng rng(4);
    CostMatrix cost;
    cost.q = q;
    cost.g = g;
    cost.total.resize(static_cast<size_t>(q) * g);
    for (double& v : cost.total) v = rng.uniform(0.0, 10.0);
    cost.class_cost = cost.l1_cost = cost.iou_cost = cost.total;
    for (auto _ : state) {
        Assignment a = hungarian(cost);
        benchmark::DoNotOptimize(a.total_cost);
    }
}
BENCHMARK(bm_hungarian)->Args({16, 3})->Args({7, 7})->Args({16, 16});

void bm_evaluate(benchmark::State& state) {
    Rng rng(5);
    std::vector<Detection> dets;
    std::vector<GroundTruth> gts;
    for (int img = 0; img < 100; ++img) {
        for (int k = 0; k < 3; ++k) {
            GroundTruth gt;
            gt.image_id = img;
            gt.class_id = static_cast<int>(rng.uniform_index(3));
            gt.box = Box{0.2 + 0.6 * rng.uniform(), 0.2 + 0.6 * rng.uniform(), 0.15, 0.15};
            gts.push_back(gt);
        }
        for (int k = 0; k < 16; ++k) {
            Detection d;
            d.image_id = img;
            d.class_id = static_cast<int>(rng.uniform_index(3));
            d.score = rng.uniform();
            d.box = Box{0.2 + 0.6 * rng.uniform(), 0.2 + 0.6 * rng.uniform(), 0.15, 0.15};
            dets.push_back(d);
        }
    }
    for (auto _ : state) {
        MetricReport r = evaluate(dets, gts);
        benchmark::DoNotOptimize(r.detection_count);
    }
    state.SetItemsProcessed(state.iterations() * static_cast<long long>(dets.size()));
}
BENCHMARK(bm_evaluate)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
