// Microbenchmarks for the hot paths: full forwards, batched leaf stepping
// (the amortization that makes lookahead affordable), and per-token decode
// throughput. Run sla_microbench directly; these are not registered as tests.

#include <benchmark/benchmark.h>

#include <memory>
#include <vector>

#include "sla/decode.hpp"
#include "sla/model.hpp"
#include "sla/rng.hpp"
#include "sla/tasks.hpp"
#include "sla/tensor.hpp"

namespace {

const sla::RewardTransformer& desk_model() {
  static sla::RewardTransformer m =
      sla::RewardTransformer::init(sla::ModelConfig{}, 7);
  return m;
}

std::vector<int> cycle_tokens(int count) {
  std::vector<int> tokens(static_cast<size_t>(count));
  for (int i = 0; i < count; ++i) tokens[static_cast<size_t>(i)] = 2 + (i % 10);
  tokens[0] = sla::kBos;
  return tokens;
}

void BM_forward(benchmark::State& state) {
  const auto& m = desk_model();
  sla::NoGradGuard no_grad;
  const std::vector<int> tokens = cycle_tokens(static_cast<int>(state.range(0)));
  for (auto _ : state) {
    sla::ForwardOut out = sla::forward(m, tokens);
    benchmark::DoNotOptimize(out.rewards.data().data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_forward)->Arg(16)->Arg(64);

// Extending B sibling leaves by one token each in a single batched pass.
// items/s is leaf-tokens per second; the interesting read is how slowly
// time per iteration grows with B.
void BM_step_leaves(benchmark::State& state) {
  const auto& m = desk_model();
  const int batch = static_cast<int>(state.range(0));
  const auto prefix = sla::forward_incremental(m, nullptr, cycle_tokens(8)).segment;

  for (auto _ : state) {
    std::vector<sla::LeafCursor> cursors;
    cursors.reserve(static_cast<size_t>(batch));
    std::vector<sla::LeafCursor*> ptrs;
    std::vector<int> tokens;
    for (int b = 0; b < batch; ++b)
      cursors.emplace_back(m, prefix);
    for (int b = 0; b < batch; ++b) {
      ptrs.push_back(&cursors[static_cast<size_t>(b)]);
      tokens.push_back(2 + b);
    }
    sla::step_leaves(m, ptrs, tokens);
    benchmark::DoNotOptimize(cursors.front().last_reward());
  }
  state.SetItemsProcessed(state.iterations() * batch);
}
BENCHMARK(BM_step_leaves)->Arg(1)->Arg(2)->Arg(4)->Arg(8);

void bench_decode(benchmark::State& state, const sla::DecodeParams& params) {
  const auto& m = desk_model();
  sla::TaskSpec task = sla::sortedness_task();
  sla::Rng rng(sla::derive_seed(11, "bench-prompt"));
  const std::vector<int> prompt = task.sample_prompt(rng);

  int64_t tokens = 0;
  for (auto _ : state) {
    sla::Trajectory t = sla::decode(m, prompt, params);
    tokens += static_cast<int64_t>(t.response.size());
    benchmark::DoNotOptimize(t.final_reward);
  }
  state.SetItemsProcessed(tokens);  // emitted tokens per second
}

void BM_greedy_decode(benchmark::State& state) {
  sla::DecodeParams p;
  p.algorithm = sla::Algorithm::greedy;
  p.max_new_tokens = 12;
  bench_decode(state, p);
}
BENCHMARK(BM_greedy_decode);

void BM_sla_decode(benchmark::State& state) {
  sla::DecodeParams p;
  p.algorithm = sla::Algorithm::sla;
  p.max_new_tokens = 12;
  p.sla = {2, 2, 10, false};
  bench_decode(state, p);
}
BENCHMARK(BM_sla_decode);

void BM_mcts_decode(benchmark::State& state) {
  sla::DecodeParams p;
  p.algorithm = sla::Algorithm::mcts;
  p.max_new_tokens = 12;
  p.mcts.rollouts = 8;
  p.mcts.step = 10;
  bench_decode(state, p);
}
BENCHMARK(BM_mcts_decode);

}  // namespace

BENCHMARK_MAIN();
