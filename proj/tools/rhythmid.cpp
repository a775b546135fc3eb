// SPDX-License-Identifier: Apache-2.0
// rhythmid: FACS encoding, synthetic corpora, training, evaluation and
// gradient checks from one binary.

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include <CLI11.hpp>
#include <json.hpp>

#include "rhythmid/checkpoint.hpp"
#include "rhythmid/encoder.hpp"
#include "rhythmid/facs.hpp"
#include "rhythmid/fileio.hpp"
#include "rhythmid/fusion.hpp"
#include "rhythmid/gradcheck.hpp"
#include "rhythmid/metrics.hpp"
#include "rhythmid/synthgen.hpp"
#include "rhythmid/training.hpp"

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;
using namespace rhythmid;

namespace {

constexpr double kGradTolerance = 1e-4;

std::uint64_t default_seed() {
  if (const char* env = std::getenv("RHYTHMID_SEED")) {
    try {
      return std::stoull(env);
    } catch (const std::exception&) {
      std::cerr << "warning: ignoring non-numeric RHYTHMID_SEED='" << env << "'\n";
    }
  }
  return 0;
}

int verbosity = 0;

void summary(const ojson& j) { std::cout << j.dump() << std::endl; }

Vocabulary load_vocab(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open vocabulary " + path.string());
  return Vocabulary::read(in);
}

std::vector<FacsSequence> load_facs(const fs::path& path, const Vocabulary& vocab, int frame_ms) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open FACS corpus " + path.string());
  return read_facs_corpus(in, vocab, frame_ms);
}

std::vector<AlignedUtterance> load_alignments(const fs::path& path) {
  auto parsed = parse_alignment_file(path);
  for (const auto& [line, reason] : parsed.discards.records) {
    if (verbosity > 0) std::cerr << path.string() << ":" << line << ": discarded (" << reason << ")\n";
  }
  if (parsed.discards.total() > 0) {
    std::cerr << "warning: discarded " << parsed.discards.total() << " alignment record(s) from "
              << path.string() << "\n";
  }
  return std::move(parsed.utterances);
}

ojson discard_json(const DiscardReport& report) {
  ojson j = ojson::object();
  for (const auto& [reason, n] : report.counts) j[reason] = n;
  return j;
}

// ---- facs / vocab -------------------------------------------------------

struct FacsEncodeArgs {
  fs::path alignments, vocab, out;
  int frame_ms = kDefaultFrameMs;
};

int run_facs_encode(const FacsEncodeArgs& a) {
  auto parsed = parse_alignment_file(a.alignments);
  const auto vocab = load_vocab(a.vocab);
  std::vector<FacsSequence> corpus;
  corpus.reserve(parsed.utterances.size());
  std::size_t frames = 0;
  for (const auto& utt : parsed.utterances) {
    corpus.push_back(facs_encode(utt, vocab, a.frame_ms));
    frames += corpus.back().token_ids.size();
  }
  write_file_atomic(a.out, [&](std::ostream& out) { write_facs_corpus(out, corpus, vocab); });
  summary({{"command", "facs encode"},
           {"out", a.out.string()},
           {"utterances", corpus.size()},
           {"frames", frames},
           {"frame_ms", a.frame_ms},
           {"discarded", parsed.discards.total()},
           {"discard_reasons", discard_json(parsed.discards)}});
  return 0;
}

struct FacsDecodeArgs {
  fs::path facs, vocab, out;
};

int run_facs_decode(const FacsDecodeArgs& a) {
  const auto vocab = load_vocab(a.vocab);
  std::ifstream in(a.facs);
  if (!in) throw std::runtime_error("cannot open FACS corpus " + a.facs.string());
  std::ostringstream body;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto t1 = line.find('\t');
    const auto t2 = t1 == std::string::npos ? t1 : line.find('\t', t1 + 1);
    if (t2 == std::string::npos) {
      throw std::invalid_argument("FACS corpus line " + std::to_string(n + 1) +
                                  ": expected utt_id<TAB>speaker<TAB>facs");
    }
    body << line.substr(0, t2);
    for (const auto& run : facs_decode(std::string_view(line).substr(t2 + 1), vocab)) {
      body << '\t' << run.glyph << ':' << run.frames;
    }
    body << '\n';
    ++n;
  }
  if (a.out.empty()) {
    std::cerr << body.str();
  } else {
    write_file_atomic(a.out, body.str());
  }
  summary({{"command", "facs decode"}, {"utterances", n}, {"out", a.out.string()}});
  return 0;
}

struct VocabBuildArgs {
  std::vector<fs::path> alignments;
  fs::path out;
};

int run_vocab_build(const VocabBuildArgs& a) {
  std::vector<AlignedUtterance> all;
  for (const auto& p : a.alignments) {
    auto part = load_alignments(p);
    all.insert(all.end(), std::make_move_iterator(part.begin()),
               std::make_move_iterator(part.end()));
  }
  const auto vocab = build_vocabulary(all);
  write_file_atomic(a.out, [&](std::ostream& out) { vocab.write(out); });
  char fp[17];
  std::snprintf(fp, sizeof fp, "%016llx", static_cast<unsigned long long>(vocab.fingerprint()));
  summary({{"command", "vocab build"},
           {"out", a.out.string()},
           {"size", vocab.size()},
           {"fingerprint", fp}});
  return 0;
}

// ---- synth ---------------------------------------------------------------

struct SynthArgs {
  fs::path out_dir;
  fs::path texts;
  std::size_t speakers = 10;
  std::size_t utts = 200;
  double separation = 1.0;
  double variability = 0.25;
  double informativeness = 0.9;
  std::size_t xvec_dim = 32;
  double test_fraction = 0.1;
  std::uint64_t seed = 0;
};

std::vector<std::string> read_texts(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open text list " + path.string());
  std::vector<std::string> texts;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") != std::string::npos) texts.push_back(line);
  }
  if (texts.empty()) throw std::runtime_error("text list " + path.string() + " is empty");
  return texts;
}

int run_synth_gen(const SynthArgs& a) {
  const auto texts = a.texts.empty() ? default_texts() : read_texts(a.texts);
  Rng profile_rng(derive_seed(a.seed, "profiles"));
  Rng corpus_rng(derive_seed(a.seed, "corpus"));
  Rng xvec_rng(derive_seed(a.seed, "xvectors"));
  const auto profiles = gen_profiles(a.speakers, default_alphabet(), a.separation, profile_rng);
  const auto corpus = gen_corpus(profiles, texts, a.utts, a.variability, corpus_rng);
  const auto xvectors = gen_xvectors(profiles, corpus, a.informativeness, a.xvec_dim, xvec_rng);
  const auto split = stratified_split(corpus, a.test_fraction);

  fs::create_directories(a.out_dir);
  write_file_atomic(a.out_dir / "train.jsonl",
                    [&](std::ostream& out) { write_alignment_file(out, split.train); });
  write_file_atomic(a.out_dir / "test.jsonl",
                    [&](std::ostream& out) { write_alignment_file(out, split.test); });
  write_file_atomic(a.out_dir / "xvectors.tsv",
                    [&](std::ostream& out) { write_xvectors(out, xvectors); });
  summary({{"command", "synth gen"},
           {"out_dir", a.out_dir.string()},
           {"speakers", a.speakers},
           {"train_utterances", split.train.size()},
           {"test_utterances", split.test.size()},
           {"seed", a.seed}});
  return 0;
}

// ---- train ---------------------------------------------------------------

struct TrainArgs {
  TrainMode mode = TrainMode::rhythm_only;
  fs::path facs, vocab, xvectors, out_dir, rhythm_checkpoint;
  bool from_scratch = false;
  int frame_ms = kDefaultFrameMs;
  TrainConfig train;
  RhythmEncoderConfig encoder;
  FusionConfig fusion;
  std::string activation = "gelu";
  std::string attention = "banded";
  std::string fusion_op = "concat";
};

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

int run_train(TrainArgs a) {
  a.train.mode = a.mode;
  try {
    a.train.validate();
  } catch (const std::invalid_argument& e) {
    throw CLI::ValidationError(e.what());
  }
  if (a.activation != "gelu" && a.activation != "relu") {
    throw CLI::ValidationError("--activation", "must be gelu or relu");
  }
  if (a.attention != "banded" && a.attention != "dense") {
    throw CLI::ValidationError("--attention", "must be banded or dense");
  }
  a.encoder.activation = a.activation == "relu" ? Activation::relu : Activation::gelu;
  a.encoder.attention = a.attention == "dense" ? AttentionImpl::dense : AttentionImpl::banded;
  a.fusion.op = a.fusion_op == "sum" ? FusionOp::sum : FusionOp::concat;
  if (a.mode == TrainMode::fusion && !a.from_scratch && a.rhythm_checkpoint.empty()) {
    throw CLI::RequiredError("--rhythm-checkpoint or --from-scratch");
  }

  const auto vocab = load_vocab(a.vocab);
  const auto corpus = load_facs(a.facs, vocab, a.frame_ms);

  std::optional<LoadedCheckpoint> pretrained;
  std::vector<std::string> speaker_table;
  if (a.mode == TrainMode::fusion && !a.from_scratch) {
    pretrained = load_checkpoint(a.rhythm_checkpoint);
    if (pretrained->kind != ModelKind::rhythm_only) {
      throw std::runtime_error("--rhythm-checkpoint must hold a rhythm_only model, found " +
                               to_string(pretrained->kind));
    }
    if (pretrained->meta.vocab_fingerprint != vocab.fingerprint()) {
      throw std::runtime_error("--rhythm-checkpoint was trained with a different vocabulary");
    }
    speaker_table = pretrained->meta.speakers;
    a.encoder = *pretrained->encoder;
  }
  if (a.train.max_tokens > a.encoder.max_len) {
    throw CLI::ValidationError("--max-tokens", "exceeds the encoder's --max-len");
  }

  Dataset data = make_dataset(corpus, a.train.max_tokens, speaker_table);
  if (data.skipped_empty > 0) {
    std::cerr << "warning: skipped " << data.skipped_empty << " empty sequence(s)\n";
  }
  XVectorTable table;
  if (a.mode != TrainMode::rhythm_only) {
    table = load_xvectors(a.xvectors);
    attach_xvectors(data, table);
  }

  Rng init_rng(derive_seed(a.train.seed, "init"));
  std::unique_ptr<SpeakerClassifier<float>> model;
  a.encoder.vocab_size = vocab.size();
  a.encoder.n_speakers = data.speakers.size();
  if (a.mode != TrainMode::xvector_baseline) {
    try {
      a.encoder.validate();
    } catch (const std::invalid_argument& e) {
      throw CLI::ValidationError(e.what());
    }
  }
  switch (a.mode) {
    case TrainMode::rhythm_only:
      model = std::make_unique<RhythmEncoderModel<float>>(a.encoder, init_rng);
      break;
    case TrainMode::fusion: {
      a.fusion.xvector_dim = table.dim;
      RhythmEncoderModel<float> rhythm = pretrained ? pretrained->rhythm()->clone()
                                                    : RhythmEncoderModel<float>(a.encoder, init_rng);
      model = std::make_unique<FusionAssembly<float>>(std::move(rhythm), a.fusion,
                                                      data.speakers.size(), init_rng);
      break;
    }
    case TrainMode::xvector_baseline:
      model = std::make_unique<XVectorBaseline<float>>(table.dim, data.speakers.size(), init_rng);
      break;
  }

  fs::create_directories(a.out_dir);
  ojson config;
  config["mode"] = to_string(a.mode);
  config["train"] = ojson::parse(a.train.to_json());
  if (a.mode != TrainMode::xvector_baseline) {
    config["encoder"] = ojson::parse(encoder_config_to_json(a.encoder));
  }
  if (a.mode == TrainMode::fusion) {
    config["fusion"] = {{"xvector_dim", a.fusion.xvector_dim},
                        {"projection_dim", a.fusion.projection_dim},
                        {"op", a.fusion_op},
                        {"rhythm_checkpoint", a.from_scratch ? "" : a.rhythm_checkpoint.string()}};
  }
  config["data"] = {{"facs", a.facs.string()},
                    {"vocab", a.vocab.string()},
                    {"vocab_fingerprint", hex64(vocab.fingerprint())},
                    {"xvectors", a.xvectors.string()},
                    {"frame_ms", a.frame_ms},
                    {"utterances", data.size()},
                    {"speakers", data.speakers.size()}};
  write_file_atomic(a.out_dir / "config.json", config.dump(2) + "\n");

  TrainObserver observer;
  if (verbosity > 0) {
    observer.on_eval = [](const EvalRecord& r, bool improved) {
      std::cerr << "epoch " << r.epoch << " val_balanced_accuracy " << format_4dp(r.balanced_accuracy)
                << (improved ? " *" : "") << "\n";
    };
  }
  const TrainRun run = train(a.train, data, *model, observer);

  write_file_atomic(a.out_dir / "loss.csv", loss_log_csv(run));
  write_file_atomic(a.out_dir / "val.csv", val_log_csv(run));
  save_checkpoint(a.out_dir / "best.ckpt", *model, CheckpointMeta{vocab.fingerprint(), data.speakers});

  summary({{"command", "train " + to_string(a.mode)},
           {"out_dir", a.out_dir.string()},
           {"best_balanced_accuracy", run.best_balanced_accuracy},
           {"best_epoch", run.best_epoch},
           {"epochs_run", run.evals.size()},
           {"steps", run.steps.size()},
           {"stop_reason", to_string(run.stop_reason)},
           {"train_size", run.train_size},
           {"val_size", run.val_size}});
  return 0;
}

// ---- eval ----------------------------------------------------------------

struct EvalArgs {
  fs::path checkpoint, facs, vocab, xvectors, out, confusion_csv;
  int frame_ms = kDefaultFrameMs;
  std::size_t batch_size = 64;
};

int run_eval(const EvalArgs& a) {
  const auto loaded = load_checkpoint(a.checkpoint);
  const auto vocab = load_vocab(a.vocab);
  if (loaded.meta.vocab_fingerprint != vocab.fingerprint()) {
    throw std::runtime_error("checkpoint was trained with a different vocabulary");
  }
  const auto corpus = load_facs(a.facs, vocab, a.frame_ms);
  const std::size_t max_tokens = loaded.encoder ? loaded.encoder->max_len : SIZE_MAX;
  Dataset data = make_dataset(corpus, max_tokens, loaded.meta.speakers);
  if (loaded.kind != ModelKind::rhythm_only) {
    if (a.xvectors.empty()) {
      throw CLI::ValidationError("--xvectors", "required for " + to_string(loaded.kind) + " checkpoints");
    }
    attach_xvectors(data, load_xvectors(a.xvectors));
  }
  const auto cm = evaluate(*loaded.model, data, a.batch_size);
  const auto report = make_report(cm);
  write_file_atomic(a.out, report.to_json() + "\n");
  if (!a.confusion_csv.empty()) {
    write_file_atomic(a.confusion_csv, [&](std::ostream& out) { cm.write_csv(out); });
  }
  auto j = ojson::parse(report.to_json());
  j["command"] = "eval";
  j["kind"] = to_string(loaded.kind);
  summary(j);
  return 0;
}

// ---- gradcheck -------------------------------------------------------------

int run_gradcheck(std::size_t n_seeds, std::uint64_t seed) {
  std::vector<std::uint64_t> seeds;
  for (std::size_t i = 0; i < n_seeds; ++i) seeds.push_back(seed + i);
  const auto errors = run_gradcheck_suite(seeds);
  double worst = 0.0;
  ojson per_op = ojson::object();
  for (const auto& [name, err] : errors) {
    std::fprintf(stderr, "%-26s %.3e%s\n", name.c_str(), err, err < kGradTolerance ? "" : "  FAIL");
    per_op[name] = err;
    worst = std::max(worst, err);
  }
  const bool ok = worst < kGradTolerance;
  summary({{"command", "gradcheck"},
           {"seeds", n_seeds},
           {"tolerance", kGradTolerance},
           {"max_relative_error", worst},
           {"passed", ok},
           {"per_op", per_op}});
  return ok ? 0 : 1;
}

// ---- flag wiring -----------------------------------------------------------

void add_train_flags(CLI::App* cmd, TrainArgs& a, TrainMode mode) {
  a.train = TrainConfig::defaults_for(mode);
  a.train.seed = default_seed();
  cmd->add_option("--facs", a.facs, "FACS corpus (utt_id, speaker, sequence)")->required();
  cmd->add_option("--vocab", a.vocab, "Vocabulary TSV")->required();
  cmd->add_option("--out-dir", a.out_dir, "Run directory")->required();
  cmd->add_option("--frame-ms", a.frame_ms, "Frame length the corpus was encoded with");
  if (mode != TrainMode::rhythm_only) {
    cmd->add_option("--xvectors", a.xvectors, "X-vector TSV")->required();
  }
  cmd->add_option("--epochs", a.train.epochs, "Maximum epochs");
  cmd->add_option("--batch-size", a.train.batch_size, "Utterances per batch");
  cmd->add_option("--lr", a.train.lr0, "Peak learning rate of the cosine schedule");
  cmd->add_option("--eta-min", a.train.eta_min, "Final learning rate");
  cmd->add_option("--val-fraction", a.train.val_fraction, "Held-out validation fraction");
  cmd->add_option("--patience", a.train.early_stop_patience,
                  "Non-improving epochs before early stopping");
  cmd->add_option("--max-tokens", a.train.max_tokens, "Truncate sequences to this many frames");
  cmd->add_option("--seed", a.train.seed, "Run seed (env RHYTHMID_SEED sets the default)");
  cmd->add_option("--clip-norm", a.train.clip_norm, "Global gradient-norm clip, 0 disables");
  cmd->add_option("--weight-decay", a.train.weight_decay, "L2 penalty added to the gradient, 0 disables");
  if (mode == TrainMode::xvector_baseline) return;

  cmd->add_option("--d-model", a.encoder.d_model, "Encoder width");
  cmd->add_option("--heads", a.encoder.n_heads, "Attention heads");
  cmd->add_option("--layers", a.encoder.n_layers, "Encoder layers");
  cmd->add_option("--ffn-dim", a.encoder.ffn_dim, "Feed-forward width");
  cmd->add_option("--attn-radius", a.encoder.attn_window_radius, "Attention window radius");
  cmd->add_option("--dropout", a.encoder.dropout_rate, "Dropout rate");
  cmd->add_option("--max-len", a.encoder.max_len, "Positional-encoding length");
  cmd->add_option("--activation", a.activation, "Feed-forward activation (gelu|relu)");
  cmd->add_option("--attention", a.attention, "Attention kernel (banded|dense)");
  if (mode == TrainMode::fusion) {
    auto* ckpt = cmd->add_option("--rhythm-checkpoint", a.rhythm_checkpoint,
                                 "Pretrained rhythm_only checkpoint to fine-tune");
    auto* scratch = cmd->add_flag("--from-scratch", a.from_scratch,
                                  "Initialise the rhythm encoder randomly instead");
    ckpt->excludes(scratch);
    cmd->add_option("--projection-dim", a.fusion.projection_dim, "Fusion projection width");
    cmd->add_option("--fusion-op", a.fusion_op, "How projections combine")
        ->check(CLI::IsMember({"concat", "sum"}));
  }
}

}  // namespace

int main(int argc, char** argv) {
#if defined(__GLIBC__)
  // Activation buffers are freed and reallocated every step; keep them on
  // the heap instead of round-tripping through mmap.
  mallopt(M_MMAP_THRESHOLD, 256 << 20);
  mallopt(M_TRIM_THRESHOLD, 512 << 20);
#endif
  CLI::App app{"Speaker identification from frame-aligned character rhythm"};
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1);
  app.add_flag("-v,--verbose", verbosity, "Progress messages on stderr (repeatable)");

  int status = 0;
  auto wrap = [&status](auto fn) { return [&status, fn] { status = fn(); }; };

  // facs
  auto* facs = app.add_subcommand("facs", "Encode or decode FACS corpora");
  facs->require_subcommand(1);
  FacsEncodeArgs enc;
  auto* facs_enc = facs->add_subcommand("encode", "Alignments to FACS corpus");
  facs_enc->add_option("--alignments", enc.alignments, "Alignment JSON-lines")->required();
  facs_enc->add_option("--vocab", enc.vocab, "Vocabulary TSV")->required();
  facs_enc->add_option("--out", enc.out, "Output FACS corpus")->required();
  facs_enc->add_option("--frame-ms", enc.frame_ms, "Frame length in ms")
      ->check(CLI::PositiveNumber);
  facs_enc->callback(wrap([&] { return run_facs_encode(enc); }));

  FacsDecodeArgs dec;
  auto* facs_dec = facs->add_subcommand("decode", "FACS corpus to per-symbol run lengths");
  facs_dec->add_option("--facs", dec.facs, "FACS corpus")->required();
  facs_dec->add_option("--vocab", dec.vocab, "Vocabulary TSV")->required();
  facs_dec->add_option("--out", dec.out, "Output file (stderr when omitted)");
  facs_dec->callback(wrap([&] { return run_facs_decode(dec); }));

  // vocab
  auto* vocab = app.add_subcommand("vocab", "Vocabulary tools");
  vocab->require_subcommand(1);
  VocabBuildArgs vb;
  auto* vocab_build = vocab->add_subcommand("build", "Collect symbols from alignment files");
  vocab_build->add_option("--alignments", vb.alignments, "Alignment JSON-lines (repeatable)")
      ->required()
      ->default_str("");
  vocab_build->add_option("--out", vb.out, "Output vocabulary TSV")->required();
  vocab_build->callback(wrap([&] { return run_vocab_build(vb); }));

  // synth
  auto* synth = app.add_subcommand("synth", "Synthetic corpora");
  synth->require_subcommand(1);
  SynthArgs sa;
  sa.seed = default_seed();
  auto* synth_gen = synth->add_subcommand("gen", "Generate alignments and x-vectors");
  synth_gen->add_option("--out-dir", sa.out_dir, "Output directory")->required();
  synth_gen->add_option("--texts", sa.texts, "One sentence per line (built-in list when omitted)");
  synth_gen->add_option("--speakers", sa.speakers, "Number of speakers");
  synth_gen->add_option("--utts", sa.utts, "Utterances per speaker");
  synth_gen->add_option("--separation", sa.separation, "Spread of speaker duration signatures");
  synth_gen->add_option("--variability", sa.variability, "Intra-speaker variability");
  synth_gen->add_option("--informativeness", sa.informativeness,
                        "X-vector signal weight in [0, 1]");
  synth_gen->add_option("--xvec-dim", sa.xvec_dim, "X-vector dimension");
  synth_gen->add_option("--test-fraction", sa.test_fraction, "Held-out share per speaker");
  synth_gen->add_option("--seed", sa.seed, "Generator seed (env RHYTHMID_SEED sets the default)");
  synth_gen->callback(wrap([&] { return run_synth_gen(sa); }));

  // train
  auto* train_cmd = app.add_subcommand("train", "Train a speaker classifier");
  train_cmd->require_subcommand(1);
  TrainArgs tr_rhythm, tr_fusion, tr_baseline;
  tr_rhythm.mode = TrainMode::rhythm_only;
  tr_fusion.mode = TrainMode::fusion;
  tr_baseline.mode = TrainMode::xvector_baseline;
  auto* t_rhythm = train_cmd->add_subcommand("rhythm", "Rhythm-only encoder");
  add_train_flags(t_rhythm, tr_rhythm, TrainMode::rhythm_only);
  t_rhythm->final_callback(wrap([&] { return run_train(tr_rhythm); }));
  auto* t_fusion = train_cmd->add_subcommand("fusion", "Rhythm encoder fused with x-vectors");
  add_train_flags(t_fusion, tr_fusion, TrainMode::fusion);
  t_fusion->final_callback(wrap([&] { return run_train(tr_fusion); }));
  auto* t_base = train_cmd->add_subcommand("xvec-baseline", "Linear x-vector classifier");
  add_train_flags(t_base, tr_baseline, TrainMode::xvector_baseline);
  t_base->final_callback(wrap([&] { return run_train(tr_baseline); }));

  // eval
  EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "Score a checkpoint on a FACS corpus");
  eval->add_option("--checkpoint", ea.checkpoint, "Checkpoint file")->required();
  eval->add_option("--facs", ea.facs, "FACS corpus")->required();
  eval->add_option("--vocab", ea.vocab, "Vocabulary TSV")->required();
  eval->add_option("--xvectors", ea.xvectors, "X-vector TSV (fusion and baseline)");
  eval->add_option("--out", ea.out, "Report JSON")->required();
  eval->add_option("--confusion-csv", ea.confusion_csv, "Optional confusion matrix CSV");
  eval->add_option("--frame-ms", ea.frame_ms, "Frame length the corpus was encoded with");
  eval->add_option("--batch-size", ea.batch_size, "Utterances per forward pass");
  eval->callback(wrap([&] { return run_eval(ea); }));

  // gradcheck
  std::size_t gc_seeds = 10;
  std::uint64_t gc_seed = default_seed();
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient suite (float64)");
  gc->add_option("--seeds", gc_seeds, "Number of seeds")->check(CLI::PositiveNumber);
  gc->add_option("--seed", gc_seed, "First seed");
  gc->callback(wrap([&] { return run_gradcheck(gc_seeds, gc_seed); }));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return status;
}
