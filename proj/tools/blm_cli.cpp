// blm: train, distill, generate and evaluate hierarchical byte-level models.
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "blm/checkpoint.hpp"
#include "blm/evalrobust.hpp"
#include "blm/inference.hpp"
#include "blm/pipeline.hpp"

namespace fs = std::filesystem;
using namespace blm;

namespace {

struct GlobalOpts {
  std::string config;
  std::string out = "out";
  uint64_t seed = 1;
};

// Model-shape flags shared by the training subcommands. Persisted next to
// each checkpoint as arch.cfg so the load-side commands need no flags.
struct ArchFlags {
  int dim = 64;
  int core_layers = 4;
  int heads = 4;
  int ffn = 256;
  int max_pos = 512;
  int vocab = 1024;
  int enc_layers = 2;
  int dec_layers = 2;
  std::string mixer = "gsr";
};

void add_arch_flags(CLI::App* cmd, ArchFlags& a) {
  cmd->add_option("--dim", a.dim, "model width");
  cmd->add_option("--core-layers", a.core_layers, "core transformer layers");
  cmd->add_option("--heads", a.heads, "attention heads");
  cmd->add_option("--ffn-width", a.ffn, "feed-forward width");
  cmd->add_option("--max-pos", a.max_pos, "maximum sequence length");
  cmd->add_option("--vocab", a.vocab, "token vocabulary size");
  cmd->add_option("--enc-layers", a.enc_layers, "encoder mixer layers");
  cmd->add_option("--dec-layers", a.dec_layers, "decoder mixer layers");
  cmd->add_option("--mixer", a.mixer, "byte mixer kind: gsr|attention");
}

MixerKind parse_mixer(const std::string& s) {
  if (s == "gsr") return MixerKind::GatedStateRecurrence;
  if (s == "attention") return MixerKind::CausalAttention;
  throw CLI::ValidationError("--mixer must be gsr or attention");
}

TeacherConfig teacher_cfg(const ArchFlags& a) {
  TeacherConfig cfg;
  cfg.vocab = a.vocab;
  cfg.core = {.dim = a.dim,
              .n_layers = a.core_layers,
              .n_heads = a.heads,
              .ffn_width = a.ffn,
              .max_pos = a.max_pos};
  return cfg;
}

StudentConfig student_cfg(const ArchFlags& a, HeadMode head, BoundarySource labels,
                          RouterKind router) {
  StudentConfig cfg;
  cfg.encoder = {.kind = parse_mixer(a.mixer),
                 .layers = a.enc_layers,
                 .width = a.dim,
                 .ffn_width = a.ffn,
                 .n_heads = a.heads,
                 .max_pos = a.max_pos};
  cfg.decoder = cfg.encoder;
  cfg.decoder.layers = a.dec_layers;
  cfg.core = teacher_cfg(a).core;
  cfg.token_vocab = a.vocab;
  cfg.head_mode = head;
  cfg.boundary_source = labels;
  cfg.router = router;
  return cfg;
}

void write_arch(const std::string& dir, const ArchFlags& a, const std::string& extra = "") {
  fs::create_directories(dir);
  std::ofstream f(fs::path(dir) / "arch.cfg");
  f << "dim=" << a.dim << "\ncore_layers=" << a.core_layers << "\nheads=" << a.heads
    << "\nffn=" << a.ffn << "\nmax_pos=" << a.max_pos << "\nvocab=" << a.vocab
    << "\nenc_layers=" << a.enc_layers << "\ndec_layers=" << a.dec_layers
    << "\nmixer=" << a.mixer << "\n"
    << extra;
}

// arch.cfg beats command-line shape flags when present; extras (head mode,
// label source, router kind) come back through *extra.
ArchFlags read_arch(const std::string& dir, const ArchFlags& fallback,
                    std::map<std::string, std::string>* extra = nullptr) {
  const fs::path p = fs::path(dir) / "arch.cfg";
  if (!fs::exists(p)) return fallback;
  ArchFlags a = fallback;
  for (const auto& [k, v] : parse_config_file(p.string())) {
    if (k == "dim")
      a.dim = std::stoi(v);
    else if (k == "core_layers")
      a.core_layers = std::stoi(v);
    else if (k == "heads")
      a.heads = std::stoi(v);
    else if (k == "ffn")
      a.ffn = std::stoi(v);
    else if (k == "max_pos")
      a.max_pos = std::stoi(v);
    else if (k == "vocab")
      a.vocab = std::stoi(v);
    else if (k == "enc_layers")
      a.enc_layers = std::stoi(v);
    else if (k == "dec_layers")
      a.dec_layers = std::stoi(v);
    else if (k == "mixer")
      a.mixer = v;
    else if (extra)
      (*extra)[k] = v;
  }
  return a;
}

RunSettings load_settings(const GlobalOpts& g) {
  return g.config.empty() ? RunSettings{} : RunSettings::from_file(g.config);
}

ByteSequence read_bytes(const std::string& path) { return read_corpus(path); }

// Trailing slice of the corpus as held-out windows (never trained on).
std::vector<ByteSequence> holdout_windows(ByteSequence* corpus, int window_bytes) {
  const size_t keep = std::min<size_t>(corpus->size() / 10, 16u * window_bytes);
  if (keep < static_cast<size_t>(window_bytes)) return {};
  const ByteSequence tail(corpus->end() - keep, corpus->end());
  corpus->resize(corpus->size() - keep);
  return cut_windows(tail, window_bytes, window_bytes);
}

SamplerConfig parse_sampler(const std::string& s) {
  if (s == "greedy") return SamplerConfig::greedy();
  const auto colon = s.find(':');
  const std::string kind = s.substr(0, colon);
  if (kind == "temp") {
    if (colon == std::string::npos) throw CLI::ValidationError("temp needs a value: temp:0.8");
    return SamplerConfig::temp(std::stod(s.substr(colon + 1)));
  }
  if (kind == "topk") {
    if (colon == std::string::npos) throw CLI::ValidationError("topk needs a value: topk:40");
    return SamplerConfig::topk(std::stoi(s.substr(colon + 1)));
  }
  throw CLI::ValidationError("--sampler must be greedy, temp:TAU or topk:K");
}

StudentModel load_student(const std::string& ckpt, const ArchFlags& flags) {
  std::map<std::string, std::string> extra;
  const ArchFlags a = read_arch(ckpt, flags, &extra);
  const HeadMode head = extra.count("head") && extra["head"] == "jbp"   ? HeadMode::Jbp
                        : extra.count("head") && extra["head"] == "mbp" ? HeadMode::Mbp
                                                                        : HeadMode::Token;
  const BoundarySource labels = extra.count("labels") && extra["labels"] == "router"
                                    ? BoundarySource::LearnedRouter
                                    : BoundarySource::TeacherLabels;
  const RouterKind router = extra.count("router") && extra["router"] == "decoupled"
                                ? RouterKind::Decoupled
                                : RouterKind::LookaheadCosine;
  return StudentModel::load(ckpt, student_cfg(a, head, labels, router),
                            read_checkpoint_meta(ckpt).stage);
}

std::string student_extra(const StudentConfig& cfg) {
  std::ostringstream os;
  os << "head=" << to_string(cfg.head_mode) << "\nlabels=" << to_string(cfg.boundary_source)
     << "\nrouter=" << (cfg.router == RouterKind::Decoupled ? "decoupled" : "lookahead")
     << "\n";
  return os.str();
}

int cmd_tokenizer_train(const GlobalOpts& g, const std::string& corpus_path, int vocab) {
  const ByteSequence corpus = read_bytes(corpus_path);
  TokenizerModel tok = train_bpe(corpus, vocab);
  fs::create_directories(g.out);
  const std::string path = (fs::path(g.out) / "tokenizer.bpe").string();
  tok.save(path);
  std::cout << "wrote " << path << " (vocab " << tok.vocab_size() << ")\n";
  return 0;
}

int cmd_teacher_train(const GlobalOpts& g, const std::string& corpus_path,
                      const std::string& tok_path, const ArchFlags& arch) {
  const ByteSequence corpus = read_bytes(corpus_path);
  const TokenizerModel tok = TokenizerModel::load(tok_path);
  const RunSettings s = load_settings(g);

  TeacherTrainConfig train;
  train.peak_lr = s.peak_lr > 0 ? s.peak_lr : 1e-3;
  train.warmup_ratio = s.warmup_ratio >= 0 ? s.warmup_ratio : 0.1;
  train.batch_size = s.batch_size;
  train.window_bytes = s.window_bytes;
  train.steps = std::max<long long>(1, s.total_bytes / (s.batch_size * s.window_bytes));
  train.seed = g.seed;
  fs::create_directories(g.out);
  train.log_path = (fs::path(g.out) / "train.log").string();

  TeacherModel teacher = train_teacher(corpus, tok, teacher_cfg(arch), train);
  const std::string dir = (fs::path(g.out) / "teacher").string();
  teacher.save(dir);
  write_arch(dir, arch);
  std::cout << "wrote " << dir << " (" << teacher.params().scalar_count() << " params, "
            << train.steps << " steps)\n";
  return 0;
}

int cmd_stage1(const GlobalOpts& g, const std::string& corpus_path, const std::string& tok_path,
               const std::string& teacher_dir, bool skip_align, bool decoupled, bool trim,
               double whitespace_penalty, const ArchFlags& flags) {
  ByteSequence corpus = read_bytes(corpus_path);
  const TokenizerModel tok = TokenizerModel::load(tok_path);
  const ArchFlags arch = read_arch(teacher_dir, flags);
  const TeacherModel teacher = TeacherModel::load_from(teacher_dir, teacher_cfg(arch));
  const RunSettings s = load_settings(g);

  const StudentConfig cfg =
      student_cfg(arch, HeadMode::Token, BoundarySource::TeacherLabels,
                  decoupled ? RouterKind::Decoupled : RouterKind::LookaheadCosine);
  StudentModel student = init_from_teacher(teacher, cfg, g.seed);

  auto cfgs = default_stage1_configs(s.total_bytes, s.window_bytes, s.batch_size, g.seed);
  for (auto& c : cfgs) s.apply(c);

  PipelineOptions opt;
  opt.skip_align = skip_align;
  opt.trim_data = trim;
  opt.whitespace_penalty = whitespace_penalty;
  opt.out_dir = g.out;
  opt.log_path = (fs::path(g.out) / "train.log").string();

  const std::vector<ByteSequence> holdout = holdout_windows(&corpus, s.window_bytes);
  run_stage1(teacher, tok, std::move(student), corpus, holdout, cfgs, opt);
  for (const auto& c : cfgs)
    if (fs::exists(fs::path(g.out) / c.name)) write_arch((fs::path(g.out) / c.name).string(), arch, student_extra(cfg));
  std::cout << "wrote " << g.out << "/stage1_* checkpoints\n";
  return 0;
}

int cmd_stage2(const GlobalOpts& g, const std::string& corpus_path, const std::string& tok_path,
               const std::string& ckpt, const std::string& head, const std::string& labels,
               const ArchFlags& flags) {
  ByteSequence corpus = read_bytes(corpus_path);
  const TokenizerModel tok = TokenizerModel::load(tok_path);
  std::map<std::string, std::string> extra;
  const ArchFlags arch = read_arch(ckpt, flags, &extra);
  const RouterKind router = extra.count("router") && extra["router"] == "decoupled"
                                ? RouterKind::Decoupled
                                : RouterKind::LookaheadCosine;

  if (head != "jbp" && head != "mbp")
    throw CLI::ValidationError("--head must be jbp or mbp");
  if (labels != "tokenizer" && labels != "router")
    throw CLI::ValidationError("--boundary-labels must be tokenizer or router");

  const std::string from_stage = read_checkpoint_meta(ckpt).stage;
  const StudentConfig cfg =
      student_cfg(arch, head == "jbp" ? HeadMode::Jbp : HeadMode::Mbp,
                  labels == "router" ? BoundarySource::LearnedRouter
                                     : BoundarySource::TeacherLabels,
                  router);
  StudentModel student =
      StudentModel::load(ckpt, cfg, from_stage, /*migrate=*/true, /*init_seed=*/g.seed);

  const RunSettings s = load_settings(g);
  auto cfgs = default_stage2_configs(s.total_bytes, s.window_bytes, s.batch_size, g.seed);
  for (auto& c : cfgs) s.apply(c);

  PipelineOptions opt;
  opt.stage2_labels = cfg.boundary_source;
  opt.out_dir = g.out;
  opt.log_path = (fs::path(g.out) / "train.log").string();

  const std::vector<ByteSequence> holdout = holdout_windows(&corpus, s.window_bytes);
  run_stage2(std::move(student), tok, corpus, holdout, cfgs, opt, from_stage);
  for (const auto& c : cfgs)
    if (fs::exists(fs::path(g.out) / c.name)) write_arch((fs::path(g.out) / c.name).string(), arch, student_extra(cfg));
  std::cout << "wrote " << g.out << "/stage2_* checkpoints\n";
  return 0;
}

int cmd_generate(const GlobalOpts& g, const std::string& ckpt, const std::string& prompt_file,
                 int max_bytes, const std::string& strategy, const std::string& sampler_str,
                 const std::string& trace_path, const ArchFlags& flags) {
  const StudentModel model = load_student(ckpt, flags);
  const ByteSequence prompt = read_bytes(prompt_file);
  const SamplerConfig sampler = parse_sampler(sampler_str);

  const bool mbp = model.config().head_mode == HeadMode::Mbp;
  if (!strategy.empty() && strategy != (mbp ? "mbp" : "jbp"))
    throw CLI::ValidationError("--strategy " + strategy + " does not match the checkpoint head");

  DecodeState state = prefill(model, prompt, g.seed);
  const ByteSequence out = mbp ? decode_mbp(model, state, max_bytes, sampler)
                               : decode_jbp(model, state, max_bytes, sampler);
  std::cout.write(reinterpret_cast<const char*>(out.data()),
                  static_cast<std::streamsize>(out.size()));
  std::cout.flush();

  if (!trace_path.empty()) {
    std::ofstream f(trace_path);
    for (size_t i = 0; i < state.boundary_bits.size(); ++i)
      if (state.boundary_bits[i]) f << i << "\n";
  }
  return 0;
}

int cmd_eval(const GlobalOpts& g, const std::string& ckpt, const std::string& corpus_path,
             const std::string& tok_path, const std::vector<std::string>& perturbs,
             const std::string& report_path, const ArchFlags& flags) {
  const StudentModel model = load_student(ckpt, flags);
  const RunSettings s = load_settings(g);
  const int window = std::min(s.window_bytes, model.config().core.max_pos);

  ByteSequence corpus = read_bytes(corpus_path);
  const std::string clean_text(corpus.begin(), corpus.end());

  std::ostringstream report;
  report.precision(6);
  report << std::fixed;

  auto score = [&](const std::string& label, const std::string& text) {
    const ByteSequence bytes(text.begin(), text.end());
    const BpbReport bpb = eval_bpb(model, bytes, window);
    report << label << ".byte_bpb=" << bpb.byte_bpb << "\n"
           << label << ".joint_bpb=" << bpb.joint_bpb << "\n"
           << label << ".bytes=" << bpb.bytes << "\n";
    if (!tok_path.empty()) {
      // router boundaries vs tokenizer labels, windowed like the bpb pass
      const TokenizerModel tok = TokenizerModel::load(tok_path);
      std::vector<uint8_t> pred, gold;
      for (const ByteSequence& w : cut_windows(bytes, window, window)) {
        Tape t;
        const TapeChunking ch = model.route(t, model.encode(t, w));
        const TokenSegmentation seg = segment(tok, w);
        pred.insert(pred.end(), ch.plan.mask.begin(), ch.plan.mask.end());
        gold.insert(gold.end(), seg.boundary_labels.begin(), seg.boundary_labels.end());
      }
      const BoundaryMetrics m = boundary_metrics(pred, gold);
      report << label << ".boundary_precision=" << m.precision << "\n"
             << label << ".boundary_recall=" << m.recall << "\n"
             << label << ".boundary_f1=" << m.f1 << "\n";
    }
  };

  score("clean", clean_text);
  for (const std::string& p : perturbs) {
    const PerturbationSpec spec = PerturbationSpec::parse(p, g.seed);
    score(std::string("perturbed.") + to_string(spec.kind), perturb(clean_text, spec));
  }

  if (report_path.empty()) {
    std::cout << report.str();
  } else {
    std::ofstream f(report_path);
    f << report.str();
    std::cout << "wrote " << report_path << "\n";
  }
  return 0;
}

int cmd_viz(const std::string& ckpt, std::string text, const std::string& file,
            const ArchFlags& flags) {
  if (text.empty() == file.empty())
    throw CLI::ValidationError("pass exactly one of --text and --file");
  if (!file.empty()) {
    const ByteSequence b = read_bytes(file);
    text.assign(b.begin(), b.end());
  }
  const StudentModel model = load_student(ckpt, flags);
  std::cout << viz_boundaries(model, text) << "\n";
  return 0;
}

int cmd_make_corpus(const GlobalOpts& g, long long bytes) {
  fs::create_directories(g.out);
  const std::string path = (fs::path(g.out) / "corpus.txt").string();
  std::ofstream f(path, std::ios::binary);
  f << synth_corpus(static_cast<size_t>(bytes), g.seed);
  std::cout << "wrote " << path << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hierarchical byte-level language model toolkit"};
  app.require_subcommand(1);

  GlobalOpts g;
  app.add_option("--config", g.config, "key=value run settings file")->expected(1);
  app.add_option("--seed", g.seed, "global random seed");
  app.add_option("--out", g.out, "output directory");

  // tokenizer-train
  std::string corpus_path, tok_path;
  int vocab = 1024;
  auto* tok_cmd = app.add_subcommand("tokenizer-train", "learn a BPE tokenizer");
  tok_cmd->add_option("--corpus", corpus_path)->required();
  tok_cmd->add_option("--vocab", vocab);

  // teacher-train
  ArchFlags teacher_arch;
  std::string tt_corpus, tt_tok;
  auto* teach_cmd = app.add_subcommand("teacher-train", "train the token-level teacher");
  teach_cmd->add_option("--corpus", tt_corpus)->required();
  teach_cmd->add_option("--tokenizer", tt_tok)->required();
  add_arch_flags(teach_cmd, teacher_arch);

  // stage1
  ArchFlags s1_arch;
  std::string s1_corpus, s1_tok, s1_teacher;
  bool skip_align = false, decoupled = false, trim = false;
  double whitespace_penalty = 0.0;
  auto* s1_cmd = app.add_subcommand("stage1", "alignment / distillation / boundary curriculum");
  s1_cmd->add_option("--corpus", s1_corpus)->required();
  s1_cmd->add_option("--tokenizer", s1_tok)->required();
  s1_cmd->add_option("--teacher", s1_teacher)->required();
  s1_cmd->add_flag("--skip-align", skip_align, "drop the embedding-alignment step");
  s1_cmd->add_flag("--decoupled-router", decoupled, "boundary from the current state alone");
  s1_cmd->add_flag("--trim-data", trim, "strip spaces from the training bytes");
  s1_cmd->add_option("--whitespace-penalty", whitespace_penalty,
                     "penalty weight on boundaries before spaces");
  add_arch_flags(s1_cmd, s1_arch);

  // stage2
  ArchFlags s2_arch;
  std::string s2_corpus, s2_tok, s2_ckpt, s2_head = "jbp", s2_labels = "tokenizer";
  auto* s2_cmd = app.add_subcommand("stage2", "byte-head adaptation and end-to-end tuning");
  s2_cmd->add_option("--corpus", s2_corpus)->required();
  s2_cmd->add_option("--tokenizer", s2_tok)->required();
  s2_cmd->add_option("--checkpoint", s2_ckpt, "stage1_boundary checkpoint dir")->required();
  s2_cmd->add_option("--head", s2_head, "jbp|mbp");
  s2_cmd->add_option("--boundary-labels", s2_labels, "tokenizer|router");
  add_arch_flags(s2_cmd, s2_arch);

  // generate
  ArchFlags gen_arch;
  std::string gen_ckpt, prompt_file, strategy, sampler = "greedy", trace;
  int max_bytes = 256;
  auto* gen_cmd = app.add_subcommand("generate", "autoregressive byte generation");
  gen_cmd->add_option("--checkpoint", gen_ckpt)->required();
  gen_cmd->add_option("--prompt-file", prompt_file)->required();
  gen_cmd->add_option("--max-bytes", max_bytes);
  gen_cmd->add_option("--strategy", strategy, "jbp|mbp (must match the checkpoint)");
  gen_cmd->add_option("--sampler", sampler, "greedy|temp:TAU|topk:K");
  gen_cmd->add_option("--trace", trace, "write boundary byte indices to this file");
  add_arch_flags(gen_cmd, gen_arch);

  // eval
  ArchFlags eval_arch;
  std::string eval_ckpt, eval_corpus, eval_tok, report;
  std::vector<std::string> perturbs;
  auto* eval_cmd = app.add_subcommand("eval", "bits-per-byte and robustness evaluation");
  eval_cmd->add_option("--checkpoint", eval_ckpt)->required();
  eval_cmd->add_option("--corpus", eval_corpus)->required();
  eval_cmd->add_option("--tokenizer", eval_tok, "enables boundary metrics");
  eval_cmd->add_option("--perturb", perturbs, "KIND[:rate], repeatable");
  eval_cmd->add_option("--report", report, "write the report here instead of stdout");
  add_arch_flags(eval_cmd, eval_arch);

  // viz-boundaries
  ArchFlags viz_arch;
  std::string viz_ckpt, viz_text, viz_file;
  auto* viz_cmd = app.add_subcommand("viz-boundaries", "render router chunk boundaries");
  viz_cmd->add_option("--checkpoint", viz_ckpt)->required();
  viz_cmd->add_option("--text", viz_text);
  viz_cmd->add_option("--file", viz_file);
  add_arch_flags(viz_cmd, viz_arch);

  // make-corpus
  long long corpus_bytes = 5ll << 20;
  auto* mk_cmd = app.add_subcommand("make-corpus", "write a synthetic training corpus");
  mk_cmd->add_option("--bytes", corpus_bytes);

  CLI11_PARSE(app, argc, argv);

  try {
    if (tok_cmd->parsed()) return cmd_tokenizer_train(g, corpus_path, vocab);
    if (teach_cmd->parsed()) return cmd_teacher_train(g, tt_corpus, tt_tok, teacher_arch);
    if (s1_cmd->parsed())
      return cmd_stage1(g, s1_corpus, s1_tok, s1_teacher, skip_align, decoupled, trim,
                        whitespace_penalty, s1_arch);
    if (s2_cmd->parsed())
      return cmd_stage2(g, s2_corpus, s2_tok, s2_ckpt, s2_head, s2_labels, s2_arch);
    if (gen_cmd->parsed())
      return cmd_generate(g, gen_ckpt, prompt_file, max_bytes, strategy, sampler, trace,
                          gen_arch);
    if (eval_cmd->parsed())
      return cmd_eval(g, eval_ckpt, eval_corpus, eval_tok, perturbs, report, eval_arch);
    if (viz_cmd->parsed()) return cmd_viz(viz_ckpt, viz_text, viz_file, viz_arch);
    if (mk_cmd->parsed()) return cmd_make_corpus(g, corpus_bytes);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
