#include <benchmark/benchmark.h>

#include "blm/bytecorpus.hpp"
#include "blm/chunkcore.hpp"
#include "blm/evalrobust.hpp"
#include "blm/inference.hpp"
#include "blm/mixer.hpp"
#include "blm/rng.hpp"
#include "blm/student.hpp"

namespace {

using namespace blm;

void bm_route_lookahead(benchmark::State& state) {
  const int d = static_cast<int>(state.range(0));
  Rng rng(1);
  Tensor states(512, d);
  rng.fill_normal(states, 1.0);
  for (auto _ : state) {
    int degenerate = 0;
    benchmark::DoNotOptimize(route_sequence(states, &degenerate));
  }
  state.SetItemsProcessed(state.iterations() * (states.rows - 1));
}
BENCHMARK(bm_route_lookahead)->Arg(32)->Arg(64)->Arg(128);

void bm_mixer_forward(benchmark::State& state) {
  const int L = static_cast<int>(state.range(0));
  MixerStackConfig cfg{.kind = state.range(1) ? MixerKind::CausalAttention
                                              : MixerKind::GatedStateRecurrence,
                       .layers = 2,
                       .width = 64,
                       .ffn_width = 256,
                       .n_heads = 4,
                       .max_pos = 1024};
  ParamStore ps;
  Rng rng(2);
  MixerStack stack;
  stack.init(ps, "bench", cfg, rng);
  Tensor x(L, cfg.width);
  rng.fill_normal(x, 1.0);
  for (auto _ : state) {
    Tape t;
    benchmark::DoNotOptimize(t.val(stack.forward(t, t.leaf(x))));
  }
  state.SetItemsProcessed(state.iterations() * L);
}
BENCHMARK(bm_mixer_forward)
    ->ArgsProduct({{128, 256, 512}, {0, 1}})
    ->ArgNames({"L", "attn"});

void bm_bpe_tokenize(benchmark::State& state) {
  const std::string text = synth_corpus(1 << 18, 3);
  const ByteSequence corpus(text.begin(), text.end());
  const TokenizerModel tok = train_bpe(corpus, 512);
  const ByteSequence window(corpus.begin(), corpus.begin() + state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(tok.tokenize(window));
  state.SetBytesProcessed(state.iterations() * state.range(0));
}
BENCHMARK(bm_bpe_tokenize)->Arg(256)->Arg(4096)->Arg(65536);

void bm_bpe_train(benchmark::State& state) {
  const std::string text = synth_corpus(static_cast<size_t>(state.range(0)), 3);
  const ByteSequence corpus(text.begin(), text.end());
  for (auto _ : state) benchmark::DoNotOptimize(train_bpe(corpus, 512));
  state.SetBytesProcessed(state.iterations() * state.range(0));
}
BENCHMARK(bm_bpe_train)->Arg(1 << 16)->Arg(1 << 18)->Unit(benchmark::kMillisecond);

StudentConfig bench_student_cfg() {
  StudentConfig cfg;
  cfg.encoder = {.kind = MixerKind::GatedStateRecurrence,
                 .layers = 2,
                 .width = 64,
                 .ffn_width = 256,
                 .n_heads = 4,
                 .max_pos = 512};
  cfg.decoder = cfg.encoder;
  cfg.core = {.dim = 64, .n_layers = 4, .n_heads = 4, .ffn_width = 384, .max_pos = 512};
  cfg.token_vocab = 1024;
  cfg.head_mode = HeadMode::Jbp;
  return cfg;
}

void bm_student_forward(benchmark::State& state) {
  const StudentModel model(bench_student_cfg(), 4);
  const std::string text = synth_corpus(1 << 14, 5);
  const ByteSequence seq(text.begin(), text.begin() + state.range(0));
  for (auto _ : state) {
    Tape t;
    benchmark::DoNotOptimize(t.val(model.forward_stage2(t, seq, false).logits));
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(bm_student_forward)->Arg(64)->Arg(128)->Arg(256)->Unit(benchmark::kMillisecond);

void bm_decode(benchmark::State& state) {
  const StudentModel model(bench_student_cfg(), 4);
  const std::string text = synth_corpus(1 << 12, 6);
  const ByteSequence prompt(text.begin(), text.begin() + 32);
  const SamplerConfig sampler = SamplerConfig::topk(16);
  for (auto _ : state) {
    DecodeState st = prefill(model, prompt, 7);
    benchmark::DoNotOptimize(decode_jbp(model, st, static_cast<int>(state.range(0)), sampler));
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(bm_decode)->Arg(16)->Arg(64)->Unit(benchmark::kMillisecond);

void bm_perturb(benchmark::State& state) {
  const std::string text = synth_corpus(1 << 16, 8);
  const PerturbationSpec spec = PerturbationSpec::parse("drop:0.1", 9);
  for (auto _ : state) benchmark::DoNotOptimize(perturb(text, spec));
  state.SetBytesProcessed(state.iterations() * static_cast<int64_t>(text.size()));
}
BENCHMARK(bm_perturb);

}  // namespace

BENCHMARK_MAIN();
