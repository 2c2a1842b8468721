#include <benchmark/benchmark.h>

#include "civic/attribution.hpp"
#include "civic/baseline.hpp"
#include "civic/eval.hpp"
#include "civic/neural.hpp"
#include "civic/rng.hpp"
#include "civic/tokenizer.hpp"
#include "synthetic.hpp"

using namespace civic;

namespace {

neural::ModelConfig bench_config(int context) {
    neural::ModelConfig c;
    c.context_width = context;
    c.vocab_size = 2000;
    return c;
}

std::vector<tokenizer::TokenSequence> random_batch(std::size_t n, std::size_t len, int vocab) {
    Rng rng(1);
    std::vector<tokenizer::TokenSequence> out;
    for (std::size_t i = 0; i < n; ++i) {
        tokenizer::TokenSequence s;
        s.ids.push_back(0);
        for (std::size_t k = 0; k + 2 < len; ++k) s.ids.push_back(static_cast<tokenizer::TokenId>(5 + rng.uniform_index(static_cast<std::uint64_t>(vocab - 5))));
        s.ids.push_back(1);
        s.attention_length = s.ids.size();
        out.push_back(std::move(s));
    }
    return out;
}

void BM_Forward(benchmark::State& state) {
    const auto len = static_cast<std::size_t>(state.range(0));
    const auto model = neural::init_model(bench_config(static_cast<int>(len)), 1);
    const auto batch = random_batch(8, len, 2000);
    for (auto _ : state) benchmark::DoNotOptimize(neural::forward_encode(model, batch));
    state.SetItemsProcessed(state.iterations() * 8);
}
BENCHMARK(BM_Forward)->Arg(32)->Arg(128)->Unit(benchmark::kMillisecond);

void BM_BackwardMultilabel(benchmark::State& state) {
    const auto len = static_cast<std::size_t>(state.range(0));
    const auto model = neural::init_model(bench_config(static_cast<int>(len)), 1);
    const auto batch = random_batch(8, len, 2000);
    const std::vector<LabelVector> labels(8, LabelVector::of({Level::B}));
    for (auto _ : state) benchmark::DoNotOptimize(neural::backward_multilabel(model, batch, labels));
    state.SetItemsProcessed(state.iterations() * 8);
}
BENCHMARK(BM_BackwardMultilabel)->Arg(32)->Arg(128)->Unit(benchmark::kMillisecond);

void BM_IntegratedGradients(benchmark::State& state) {
    const auto model = neural::init_model(bench_config(64), 1);
    const auto seq = random_batch(1, 64, 2000).front();
    attribution::AttributionConfig cfg;
    cfg.steps = static_cast<int>(state.range(0));
    for (auto _ : state) benchmark::DoNotOptimize(attribution::integrated_gradients(model, seq, cfg));
}
BENCHMARK(BM_IntegratedGradients)->Arg(32)->Unit(benchmark::kMillisecond);

void BM_TokenizerTrain(benchmark::State& state) {
    std::vector<std::string> texts;
    for (const auto& it : testing::keyword_dataset(500, 2)) texts.push_back(it.abstract);
    for (auto _ : state) benchmark::DoNotOptimize(tokenizer::train_vocab(texts, static_cast<std::size_t>(state.range(0))));
}
BENCHMARK(BM_TokenizerTrain)->Arg(500)->Unit(benchmark::kMillisecond);

void BM_TokenizerEncode(benchmark::State& state) {
    std::vector<std::string> texts;
    for (const auto& it : testing::keyword_dataset(500, 2)) texts.push_back(it.abstract);
    const auto vocab = tokenizer::train_vocab(texts, 500);
    std::size_t bytes = 0;
    for (const auto& t : texts) bytes += t.size();
    for (auto _ : state)
        for (const auto& t : texts) benchmark::DoNotOptimize(tokenizer::encode(vocab, t, 512));
    state.SetBytesProcessed(static_cast<std::int64_t>(state.iterations()) * static_cast<std::int64_t>(bytes));
}
BENCHMARK(BM_TokenizerEncode);

void BM_Calibration(benchmark::State& state) {
    Rng rng(5);
    const auto n = static_cast<std::size_t>(state.range(0));
    std::vector<double> s(n);
    std::vector<bool> y(n);
    for (std::size_t i = 0; i < n; ++i) {
        y[i] = rng.bernoulli(0.3);
        s[i] = rng.uniform01();
    }
    for (auto _ : state) benchmark::DoNotOptimize(eval::calibrate_threshold(s, y));
}
BENCHMARK(BM_Calibration)->Arg(1000)->Arg(100000);

void BM_BaselineFit(benchmark::State& state) {
    const auto items = testing::keyword_dataset(1000, 3);
    std::vector<std::string> texts;
    std::vector<LabelVector> labels;
    for (const auto& it : items) {
        texts.push_back(it.abstract);
        labels.push_back(it.labels);
    }
    for (auto _ : state) benchmark::DoNotOptimize(baseline::fit_baseline(texts, labels));
}
BENCHMARK(BM_BaselineFit)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
