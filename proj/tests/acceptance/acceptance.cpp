// SPDX-License-Identifier: Apache-2.0
// Acceptance suite. Prints one PASS/FAIL line per criterion on stdout;
// progress goes to stderr. Pass criterion names as arguments to run a subset.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <iterator>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "rhythmid/encoder.hpp"
#include "rhythmid/facs.hpp"
#include "rhythmid/fusion.hpp"
#include "rhythmid/gradcheck.hpp"
#include "rhythmid/metrics.hpp"
#include "rhythmid/rng.hpp"
#include "rhythmid/synthgen.hpp"
#include "rhythmid/training.hpp"

using namespace rhythmid;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// ---------------------------------------------------------------- data

struct SynthData {
  Vocabulary vocab;
  Dataset train;
  Dataset test;
};

struct SynthSpec {
  std::size_t speakers = 10;
  std::size_t utts = 200;
  double separation = 1.0;
  double variability = 0.25;
  std::size_t max_tokens = 160;
  std::uint64_t seed = 0;
  // Separate seed for the corpus draw so profiles can be held fixed.
  std::uint64_t corpus_seed = 0;
};

SynthData make_synth(const SynthSpec& s, XVectorTable* xvectors = nullptr,
                     double informativeness = 0.9) {
  Rng prof_rng(derive_seed(s.seed, "profiles"));
  auto profiles = gen_profiles(s.speakers, default_alphabet(), s.separation, prof_rng);
  Rng corpus_rng(derive_seed(s.corpus_seed, "corpus"));
  auto corpus = gen_corpus(profiles, default_texts(), s.utts, s.variability, corpus_rng);
  auto split = stratified_split(corpus, 0.1);

  SynthData d{build_vocabulary(split.train), {}, {}};
  auto encode_all = [&](const std::vector<AlignedUtterance>& utts) {
    std::vector<FacsSequence> out;
    for (const auto& u : utts) out.push_back(facs_encode(u, d.vocab));
    return out;
  };
  d.train = make_dataset(encode_all(split.train), s.max_tokens);
  d.test = make_dataset(encode_all(split.test), s.max_tokens, d.train.speakers);
  if (xvectors) {
    Rng xrng(derive_seed(s.corpus_seed, "xvectors"));
    *xvectors = gen_xvectors(profiles, corpus, informativeness, 32, xrng);
    attach_xvectors(d.train, *xvectors);
    attach_xvectors(d.test, *xvectors);
  }
  return d;
}

RhythmEncoderConfig encoder_for(const SynthData& d, std::size_t d_model, std::size_t layers) {
  RhythmEncoderConfig c;
  c.d_model = d_model;
  c.n_heads = 4;
  c.n_layers = layers;
  c.ffn_dim = 2 * d_model;
  c.attn_window_radius = 2;
  c.dropout_rate = 0.1;
  c.max_len = 1024;
  c.vocab_size = d.vocab.size();
  c.n_speakers = d.train.speakers.size();
  return c;
}

double test_accuracy(const SpeakerClassifier<float>& model, const Dataset& test) {
  return balanced_accuracy(evaluate(model, test)).value;
}

// ---------------------------------------------------------------- criteria

// Exact doubled-midpoint enumeration over integer-millisecond segments, and
// a direct real-valued scan for arbitrary times.
Outcome facs_oracle() {
  auto vocab = Vocabulary::from_symbols({"a", "b", "c", "d", "e"});
  Rng rng(20240601);
  std::size_t checked = 0;
  for (int trial = 0; trial < 1500; ++trial) {
    const bool integer_ms = trial % 2 == 0;
    const int frame_ms = trial % 5 == 0 ? static_cast<int>(5 + rng.below(40)) : 20;
    AlignedUtterance utt;
    utt.utt_id = "u" + std::to_string(trial);
    utt.speaker_id = "s";
    std::vector<std::pair<long, long>> spans_ms;
    // Whole milliseconds (so boundaries can land exactly on midpoints) or
    // arbitrary reals.
    auto draw = [&](std::uint64_t lo, std::uint64_t hi) {
      return integer_ms ? static_cast<double>(lo + rng.below(hi - lo))
                        : rng.uniform(static_cast<double>(lo), static_cast<double>(hi));
    };
    double t = draw(0, 60);
    const std::size_t n = rng.below(25);
    for (std::size_t i = 0; i < n; ++i) {
      const double len = draw(1, 91);
      // Includes symbols outside the vocabulary, which must encode as UNK.
      const std::string sym(1, static_cast<char>('a' + rng.below(7)));
      spans_ms.push_back({static_cast<long>(t), static_cast<long>(t + len)});
      utt.segments.push_back({sym, t / 1000.0, (t + len) / 1000.0});
      t += len;
      if (rng.bernoulli(0.4)) t += draw(0, 50);
    }
    const double dur_ms = t + draw(0, 60) + 1.0;
    utt.duration_s = dur_ms / 1000.0;

    std::vector<std::int32_t> expected;
    if (integer_ms) {
      for (long k = 0; (k + 1) * frame_ms <= static_cast<long>(dur_ms); ++k) {
        const long mid2 = 2 * k * frame_ms + frame_ms;
        std::int32_t id = kNullId;
        for (std::size_t i = 0; i < spans_ms.size(); ++i) {
          if (2 * spans_ms[i].first <= mid2 && mid2 < 2 * spans_ms[i].second) {
            id = vocab.id_of(utt.segments[i].symbol);
          }
        }
        expected.push_back(id);
      }
    } else {
      const auto frames = static_cast<std::size_t>(std::floor(dur_ms / frame_ms + 1e-9));
      for (std::size_t k = 0; k < frames; ++k) {
        const double mid = (k + 0.5) * frame_ms / 1000.0;
        std::int32_t id = kNullId;
        for (const auto& seg : utt.segments) {
          if (seg.start_s <= mid && mid < seg.end_s) id = vocab.id_of(seg.symbol);
        }
        expected.push_back(id);
      }
    }
    if (facs_encode(utt, vocab, frame_ms).token_ids != expected) {
      return {false, "mismatch on trial " + std::to_string(trial)};
    }
    ++checked;
  }

  // "hhee**" <-> [(h,2),(e,2),(NULL,2)]
  auto hv = Vocabulary::from_symbols({"e", "h"});
  AlignedUtterance hello{"t1", "s", 0.12, {{"h", 0.0, 0.04}, {"e", 0.04, 0.08}}};
  const auto encoded = facs_to_string(facs_encode(hello, hv), hv);
  const std::vector<SymbolRun> runs = {{"h", hv.id_of("h"), 2}, {"e", hv.id_of("e"), 2},
                                       {"*", kNullId, 2}};
  const bool prefix_ok = encoded == "hhee**" && facs_decode("hhee**", hv) == runs;
  return {prefix_ok, std::to_string(checked) + " utterances exact; hhee** round trip " +
                         (prefix_ok ? "ok" : "FAILED (got " + encoded + ")")};
}

Outcome gradient_suite() {
  std::vector<std::uint64_t> seeds(10);
  std::iota(seeds.begin(), seeds.end(), 1);
  auto errors = run_gradcheck_suite(seeds);
  auto worst = std::max_element(errors.begin(), errors.end(),
                                [](const auto& a, const auto& b) { return a.second < b.second; });
  bool pass = errors.count("encoder_banded") && errors.count("encoder_dense");
  for (const auto& [name, err] : errors) pass &= err < 1e-4;
  return {pass, std::to_string(errors.size()) + " checks x 10 seeds; worst " + worst->first +
                    " " + fmt("%.2e", worst->second)};
}

Outcome attention_locality() {
  double leak = 0.0;
  bool near_changes = true;
  std::size_t trials = 0;
  for (std::size_t layers = 1; layers <= 3; ++layers) {
    RhythmEncoderConfig c;
    c.d_model = 16;
    c.n_heads = 2;
    c.n_layers = layers;
    c.ffn_dim = 32;
    c.attn_window_radius = 2;
    c.max_len = 64;
    c.vocab_size = 12;
    c.n_speakers = 3;
    Rng rng(100 + layers);
    RhythmEncoderModel<double> model(c, rng);
    const std::size_t reach = layers * c.attn_window_radius;
    for (int trial = 0; trial < 10; ++trial, ++trials) {
      const std::size_t len = 20 + rng.below(20);
      std::vector<std::int32_t> toks(len);
      for (auto& t : toks) t = static_cast<std::int32_t>(1 + rng.below(11));
      const std::size_t j = rng.below(len);
      auto moved = toks;
      moved[j] = moved[j] == 3 ? 4 : 3;
      std::vector<std::vector<std::int32_t>> a = {toks}, b = {moved};
      auto ra = model.encode(make_batch(a, std::vector<std::int32_t>{0}), false, rng);
      auto rb = model.encode(make_batch(b, std::vector<std::int32_t>{0}), false, rng);
      for (std::size_t i = 0; i < len; ++i) {
        double diff = 0.0;
        for (std::size_t k = 0; k < c.d_model; ++k) {
          diff = std::max(diff, std::abs(ra[i * c.d_model + k] - rb[i * c.d_model + k]));
        }
        const std::size_t dist = i > j ? i - j : j - i;
        if (dist > reach) leak = std::max(leak, diff);
        if (dist == 0 && diff == 0.0) near_changes = false;
      }
    }
  }
  return {leak <= 1e-12 && near_changes,
          std::to_string(trials) + " perturbations over 1-3 layers; max change beyond reach " +
              fmt("%.1e", leak)};
}

Outcome metric_correctness() {
  ConfusionMatrix fixture(2);
  fixture.add(0, 0, 8);
  fixture.add(0, 1, 2);
  fixture.add(1, 1, 6);
  fixture.add(1, 0, 4);
  const double fx = balanced_accuracy(fixture).value;

  Rng rng(77);
  ConfusionMatrix mc(10);
  for (int i = 0; i < 100000; ++i) mc.add(rng.below(10), rng.below(10));
  const double random_ba = balanced_accuracy(mc).value;

  const auto c1166 = format_4dp(chance_level(1166));
  const auto c1251 = format_4dp(chance_level(1251));
  const bool pass = std::abs(fx - 0.7) < 1e-15 && std::abs(random_ba - 0.1) <= 0.01 &&
                    c1166 == "0.0009" && c1251 == "0.0008";
  return {pass, "fixture " + fmt("%.4f", fx) + ", random C=10 " + fmt("%.4f", random_ba) +
                    ", chance " + c1166 + "/" + c1251};
}

Outcome end_to_end() {
  SynthSpec spec;
  spec.separation = 1.5;
  spec.variability = 0.25;
  spec.seed = spec.corpus_seed = 1;
  auto data = make_synth(spec);
  Rng init(derive_seed(spec.seed, "init"));
  RhythmEncoderModel<float> model(encoder_for(data, 64, 2), init);
  TrainConfig tc;
  tc.epochs = 8;
  tc.lr0 = 1e-3;
  tc.early_stop_patience = 3;
  tc.max_tokens = spec.max_tokens;
  tc.seed = spec.seed;
  auto run = train(tc, data.train, model);
  const double ba = test_accuracy(model, data.test);
  return {ba >= 0.90, "held-out balanced accuracy " + fmt("%.4f", ba) + " (chance 0.1000), " +
                          std::to_string(run.evals.size()) + " epochs"};
}

SynthSpec small_spec(std::uint64_t seed) {
  SynthSpec s;
  s.utts = 60;
  s.separation = 1.0;
  s.max_tokens = 96;
  s.seed = s.corpus_seed = seed;
  return s;
}

TrainConfig small_train(std::uint64_t seed, double lr = 2e-3) {
  TrainConfig tc;
  tc.epochs = 10;
  tc.lr0 = lr;
  tc.early_stop_patience = 100;
  tc.max_tokens = 96;
  tc.seed = seed;
  return tc;
}

Outcome variability_sweep() {
  const double levels[] = {0.0, 1.0, 4.0};
  std::vector<double> mean(3, 0.0);
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    for (std::size_t l = 0; l < 3; ++l) {
      auto spec = small_spec(seed);
      spec.variability = levels[l];
      auto data = make_synth(spec);
      Rng init(derive_seed(seed, "init"));
      RhythmEncoderModel<float> model(encoder_for(data, 32, 1), init);
      train(small_train(seed), data.train, model);
      const double ba = test_accuracy(model, data.test);
      std::cerr << "  variability " << levels[l] << " seed " << seed << ": " << ba << '\n';
      mean[l] += ba / 5.0;
    }
  }
  return {mean[0] >= mean[1] && mean[1] >= mean[2],
          "mean test balanced accuracy v0 " + fmt("%.4f", mean[0]) + ", v1 " +
              fmt("%.4f", mean[1]) + ", v4 " + fmt("%.4f", mean[2])};
}

// First 1-based step whose smoothed loss is at or below `target`;
// steps + 1 if never reached.
std::size_t steps_to_reach(const TrainRun& run, double target) {
  std::vector<double> loss;
  for (const auto& s : run.steps) loss.push_back(s.loss);
  auto smooth = moving_average(loss, 10);
  for (std::size_t i = 0; i < smooth.size(); ++i) {
    if (smooth[i] <= target) return i + 1;
  }
  return smooth.size() + 1;
}

Outcome fusion_sanity() {
  double fused_ba = 0.0, base_ba = 0.0, fused_steps = 0.0, base_steps = 0.0;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    XVectorTable table;
    auto data = make_synth(small_spec(seed), &table, 0.9);

    Rng init(derive_seed(seed, "init"));
    RhythmEncoderModel<float> rhythm(encoder_for(data, 32, 1), init);
    train(small_train(seed), data.train, rhythm);

    FusionConfig fc;
    fc.xvector_dim = table.dim;
    FusionAssembly<float> fused(rhythm.clone(), fc, data.train.speakers.size(), init);
    auto fused_run = train(small_train(seed, 1e-3), data.train, fused);

    // The linear baseline is cheap, so it gets its full default budget.
    Rng binit(derive_seed(seed, "init"));
    XVectorBaseline<float> baseline(table.dim, data.train.speakers.size(), binit);
    auto bc = TrainConfig::defaults_for(TrainMode::xvector_baseline);
    bc.max_tokens = 96;
    bc.seed = seed;
    auto base_run = train(bc, data.train, baseline);

    // Baseline smoothed loss at the end of its fifth epoch.
    std::vector<double> bl;
    std::size_t epoch5_end = 0;
    for (const auto& s : base_run.steps) {
      bl.push_back(s.loss);
      if (s.epoch <= 5) epoch5_end = bl.size();
    }
    const double target = moving_average(bl, 10)[epoch5_end - 1];
    const std::size_t fs = steps_to_reach(fused_run, target);
    const std::size_t bs = steps_to_reach(base_run, target);
    const double fa = test_accuracy(fused, data.test);
    const double ba = test_accuracy(baseline, data.test);
    std::cerr << "  fusion seed " << seed << ": fused " << fa << " baseline " << ba
              << ", steps to " << target << ": fused " << fs << " baseline " << bs << '\n';
    fused_ba += fa / 3;
    base_ba += ba / 3;
    fused_steps += fs / 3.0;
    base_steps += bs / 3.0;
  }
  const bool pass = fused_ba >= base_ba - 0.02 && fused_steps <= base_steps;
  return {pass, "balanced accuracy fused " + fmt("%.4f", fused_ba) + " vs x-vector " +
                    fmt("%.4f", base_ba) + "; mean steps to baseline epoch-5 loss fused " +
                    fmt("%.1f", fused_steps) + " vs " + fmt("%.1f", base_steps)};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Outcome determinism() {
#ifndef RHYTHMID_CLI_PATH
  return {false, "command-line tool was not built"};
#else
  const fs::path work = fs::absolute("acceptance_determinism");
  fs::remove_all(work);
  fs::create_directories(work);
  const std::string cli = RHYTHMID_CLI_PATH;
  auto sh = [&](const std::string& args) {
    const std::string cmd = "\"" + cli + "\" " + args + " > /dev/null";
    return std::system(cmd.c_str()) == 0;
  };
  const std::string w = work.string();
  bool ok = sh("synth gen --out-dir " + w + "/data --speakers 4 --utts 30 --seed 5") &&
            sh("vocab build --alignments " + w + "/data/train.jsonl --out " + w + "/vocab.tsv") &&
            sh("facs encode --alignments " + w + "/data/train.jsonl --vocab " + w +
               "/vocab.tsv --out " + w + "/train.facs");
  if (!ok) return {false, "data preparation through the CLI failed"};
  const std::string train = "train rhythm --facs " + w + "/train.facs --vocab " + w +
                            "/vocab.tsv --epochs 3 --d-model 32 --heads 4 --layers 2 "
                            "--ffn-dim 64 --max-tokens 96 --lr 1e-3 --seed 11 --out-dir ";
  if (!sh(train + w + "/run_a") || !sh(train + w + "/run_b")) {
    return {false, "train rhythm failed"};
  }
  const bool loss_same = slurp(work / "run_a/loss.csv") == slurp(work / "run_b/loss.csv") &&
                         !slurp(work / "run_a/loss.csv").empty();
  const bool ckpt_same = slurp(work / "run_a/best.ckpt") == slurp(work / "run_b/best.ckpt") &&
                         !slurp(work / "run_a/best.ckpt").empty();
  return {loss_same && ckpt_same, std::string("loss.csv ") + (loss_same ? "identical" : "DIFFER") +
                                      ", best.ckpt " + (ckpt_same ? "identical" : "DIFFER")};
#endif
}

Outcome schedule_contract() {
  struct Case {
    double lr0, eta;
    std::size_t total;
  };
  const Case cases[] = {{1e-4, 0.0, 300}, {1e-3, 1e-5, 1000}, {0.5, 0.1, 2}, {3e-4, 3e-4, 40}};
  double worst = 0.0;
  for (const auto& c : cases) {
    worst = std::max(worst, std::abs(cosine_lr(0, c.total, c.lr0, c.eta) - c.lr0));
    worst = std::max(worst, std::abs(cosine_lr(c.total, c.total, c.lr0, c.eta) - c.eta));
    worst = std::max(worst,
                     std::abs(cosine_lr(c.total / 2, c.total, c.lr0, c.eta) - 0.5 * (c.lr0 + c.eta)));
  }
  return {worst <= 1e-12, "max deviation " + fmt("%.1e", worst) + " over endpoints and midpoints"};
}

struct Criterion {
  const char* name;
  double time_limit_s;  // 0: none
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 256 << 20);
  mallopt(M_TRIM_THRESHOLD, 512 << 20);
#endif
  const std::vector<Criterion> criteria = {
      {"facs_oracle", 10, facs_oracle},
      {"gradient_suite", 120, gradient_suite},
      {"attention_locality", 30, attention_locality},
      {"metric_correctness", 0, metric_correctness},
      {"end_to_end_synthetic", 600, end_to_end},
      {"variability_degradation", 0, variability_sweep},
      {"fusion_sanity", 0, fusion_sanity},
      {"determinism", 0, determinism},
      {"schedule_contract", 0, schedule_contract},
  };
  std::set<std::string> only(argv + 1, argv + argc);
  int failures = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && !only.count(c.name)) continue;
    std::cerr << "running " << c.name << '\n';
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (c.time_limit_s > 0 && secs >= c.time_limit_s) {
      o.pass = false;
      o.detail += "; exceeded " + fmt("%.0f", c.time_limit_s) + " s";
    }
    std::cout << (o.pass ? "PASS " : "FAIL ") << c.name << ": " << o.detail << " ["
              << fmt("%.1f", secs) << " s]" << std::endl;
    failures += !o.pass;
  }
  return failures == 0 ? 0 : 1;
}
