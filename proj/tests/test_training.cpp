#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "imagine/math.hpp"
#include "imagine/records.hpp"
#include "imagine/scoring.hpp"
#include "imagine/training.hpp"
#include "support/gradcheck.hpp"
#include "support/testutil.hpp"

using namespace imagine;
using namespace imagine::backend;
using namespace imagine::training;

namespace {

EncoderConfig small_config(Mode mode) {
  EncoderConfig cfg;
  cfg.mode = mode;
  cfg.layers = 2;
  cfg.hidden_dim = 32;
  cfg.heads = 4;
  cfg.vocab_size = 64;
  cfg.max_len = 16;
  cfg.visual_dim = 8;
  cfg.reduction = 16;
  cfg.seed = 0xfeedbeef;
  return cfg;
}

VQAInstance toy_instance(const EncoderConfig& cfg, uint64_t salt, int n = 2) {
  static const char* kWords[] = {"river", "stone", "cloud", "ember", "frost",
                                 "quill", "moss",  "drift", "spark", "vale"};
  Rng r(mix_seed(0x70f0, salt));
  VQAInstance inst;
  inst.qa.id = "toy-" + std::to_string(salt);
  inst.qa.question = "pick the word";
  for (int i = 0; i < n; ++i) {
    std::string w;
    do {
      w = kWords[r.below(10)];
    } while (std::find(inst.qa.candidates.begin(), inst.qa.candidates.end(), w) !=
             inst.qa.candidates.end());
    inst.qa.candidates.push_back(w);
  }
  inst.qa.gold_index = static_cast<int>(r.below(n));
  Mat patch(2, cfg.visual_dim);
  for (auto& v : patch.a) v = r.normal();
  inst.image = ImageRef{"img-" + std::to_string(salt), VisualFeatureSet{patch}, std::nullopt};
  return inst;
}

AdapterParams randomized_params(const EncoderConfig& cfg, uint64_t seed, double scale = 0.05) {
  AdapterParams p = AdapterParams::init(cfg);
  Rng rng(seed);
  visit_params(p, [&](Mat& m) {
    for (auto& v : m.a) v = rng.normal(0.0, scale);
  });
  return p;
}

}  // namespace

TEST_CASE("ranking_loss basics") {
  CHECK(ranking_loss(std::vector<double>{5.0, 1.0}, 0, 1.0) == 0.0);
  CHECK(ranking_loss(std::vector<double>{0.0, 0.0, 0.0}, 0, 1.0) ==
        doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK_THROWS_AS((void)ranking_loss(std::vector<double>{1.0}, 0, 1.0), DataError);
  CHECK_THROWS_AS((void)ranking_loss(std::vector<double>{1.0, 2.0}, 2, 1.0), DataError);
}

TEST_CASE("ranking_loss shift invariance") {
  // Exact on dyadic inputs with integer shifts.
  Rng rng(21);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 2 + static_cast<int>(rng.below(5));
    std::vector<double> s(n), shifted(n);
    const double c = static_cast<double>(static_cast<int64_t>(rng.below(64)) - 32);
    for (int i = 0; i < n; ++i) {
      s[i] = static_cast<double>(static_cast<int64_t>(rng.below(512)) - 256) / 16.0;
      shifted[i] = s[i] + c;
    }
    const int y = static_cast<int>(rng.below(n));
    CHECK(ranking_loss(s, y, 1.0) == ranking_loss(shifted, y, 1.0));
  }
  // And within float tolerance on arbitrary reals.
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 3;
    std::vector<double> s(n), shifted(n);
    const double c = rng.normal() * 10.0;
    for (int i = 0; i < n; ++i) {
      s[i] = rng.normal() * 3.0;
      shifted[i] = s[i] + c;
    }
    CHECK(ranking_loss(shifted, 1, 0.7) == doctest::Approx(ranking_loss(s, 1, 0.7)).epsilon(1e-12));
  }
}

TEST_CASE("ranking_loss is zero iff the margin is satisfied") {
  Rng rng(77);
  for (int trial = 0; trial < 300; ++trial) {
    const int n = 2 + static_cast<int>(rng.below(4));
    std::vector<double> s(n);
    for (auto& v : s) v = rng.normal() * 2.0;
    const int y = static_cast<int>(rng.below(n));
    const double eta = 0.25 + rng.uniform();
    const double loss = ranking_loss(s, y, eta);
    CHECK(loss >= 0.0);
    bool satisfied = true;
    for (int i = 0; i < n; ++i) {
      if (i != y && !(s[y] >= s[i] + eta)) satisfied = false;
    }
    CHECK((loss == 0.0) == satisfied);
  }
}

TEST_CASE("batch_loss contracts") {
  const EncoderConfig cfg = small_config(Mode::decoder);
  const Backbone bb(cfg);
  const AdapterParams params = AdapterParams::init(cfg);
  TrainConfig tc;
  tc.objectives = {true, false, false};

  const std::vector<VQAInstance> one{toy_instance(cfg, 1)};
  const LossReport single = batch_loss(one, bb, params, tc);
  {
    // Single instance, lm flag only: total equals the bare ranking loss.
    const auto s = scoring::score_instance(one[0], bb, params, {true, false});
    CHECK(single.total ==
          doctest::Approx(ranking_loss(s.s_lm, one[0].qa.gold_index, tc.margin)).epsilon(1e-15));
    CHECK(single.l_itm == 0.0);
    CHECK(single.l_joint == 0.0);
  }

  const std::vector<VQAInstance> two{toy_instance(cfg, 1), toy_instance(cfg, 2)};
  const LossReport pair = batch_loss(two, bb, params, tc);
  CHECK(pair.per_instance.size() == 2);
  CHECK(pair.total ==
        doctest::Approx(0.5 * (pair.per_instance[0] + pair.per_instance[1])).epsilon(1e-12));

  TrainConfig none = tc;
  none.objectives = {false, false, false};
  CHECK_THROWS_AS((void)batch_loss(two, bb, params, none), ConfigError);
}

TEST_CASE("itm-only loss leaves the lm adapter gradient at exactly zero") {
  const EncoderConfig cfg = small_config(Mode::decoder);
  const Backbone bb(cfg);
  const AdapterParams params = AdapterParams::init(cfg);  // zero-init adapters
  TrainConfig tc;
  tc.objectives = {false, true, false};
  const std::vector<VQAInstance> batch{toy_instance(cfg, 3)};
  AdapterParams grads = AdapterParams::zeros_like(params);
  (void)gradients(batch, bb, params, tc, grads);
  for (const auto& b : grads.lm) {
    for (double v : b.down.a) CHECK(v == 0.0);
    for (double v : b.up.a) CHECK(v == 0.0);
  }
  // The ITM side must carry signal somewhere (W_p at least).
  double itm_mag = 0.0;
  for (double v : grads.w_p.a) itm_mag += std::fabs(v);
  CHECK(itm_mag > 0.0);
}

TEST_CASE("margin-satisfied batches have zero gradient") {
  // Hinge subgradient at the kink is 0, so far-cleared margins are flat.
  const EncoderConfig cfg = small_config(Mode::decoder);
  const Backbone bb(cfg);
  const AdapterParams params = AdapterParams::init(cfg);
  TrainConfig tc;
  tc.objectives = {false, true, false};
  tc.margin = 1e-6;  // trivially satisfied by the planted scores below

  VQAInstance inst = toy_instance(cfg, 4);
  // Plant features aligned with the gold candidate so its itm score is ~1.
  const auto gold_tokens =
      bb.tokenizer().tokenize(scoring::candidate_text(inst, inst.qa.gold_index));
  const auto hs = bb.encode(gold_tokens, Adapter::itm, params);
  Mat patch(1, cfg.visual_dim);
  for (int i = 0; i < cfg.hidden_dim; ++i) {
    for (int j = 0; j < cfg.visual_dim; ++j) patch(0, j) += hs.context[i] * params.w_p(i, j);
  }
  inst.image->features = VisualFeatureSet{patch};

  const auto scores = scoring::score_instance(inst, bb, params, {false, true});
  const double gap = scores.s_itm[inst.qa.gold_index] -
                     scores.s_itm[1 - inst.qa.gold_index];
  REQUIRE(gap > tc.margin);  // construction sanity

  AdapterParams grads = AdapterParams::zeros_like(params);
  const LossReport rep = gradients({&inst, 1}, bb, params, tc, grads);
  CHECK(rep.total == 0.0);
  bool all_zero = true;
  visit_params(grads, [&](const Mat& m) {
    for (double v : m.a)
      if (v != 0.0) all_zero = false;
  });
  CHECK(all_zero);
}

TEST_CASE("analytic gradients match central finite differences") {
  for (Mode mode : {Mode::encoder, Mode::decoder}) {
    CAPTURE(static_cast<int>(mode));
    const EncoderConfig cfg = small_config(mode);
    const Backbone bb(cfg);
    TrainConfig tc;
    tc.objectives = {true, true, true};

    const std::vector<VQAInstance> batch{toy_instance(cfg, 5)};
    AdapterParams params = randomized_params(cfg, 0xabc123 + static_cast<int>(mode));

    AdapterParams analytic = AdapterParams::zeros_like(params);
    (void)gradients(batch, bb, params, tc, analytic);

    const auto loss = [&](const AdapterParams& p) { return batch_loss(batch, bb, p, tc).total; };
    const auto rep = testutil::fd_compare(params, analytic, loss, 1e-5, 1e-8);
    CAPTURE(rep.coords_checked);
    REQUIRE(rep.coords_checked > 100);  // the check must not be vacuous
    CHECK(rep.max_rel_err <= 1e-4);
  }
}

TEST_CASE("train: epochs=0 returns the initial params unchanged") {
  const EncoderConfig cfg = small_config(Mode::decoder);
  const Backbone bb(cfg);
  const AdapterParams initial = randomized_params(cfg, 42);
  TrainConfig tc;
  tc.epochs = 0;
  const std::vector<VQAInstance> data{toy_instance(cfg, 6), toy_instance(cfg, 7)};
  const TrainResult res = train(data, data, bb, initial, tc);
  CHECK(res.params.content_hash() == initial.content_hash());
  CHECK(res.metrics.empty());
  CHECK(res.best_epoch == 0);
}

TEST_CASE("train: same seed gives bitwise-identical params; frozen weights never move") {
  const EncoderConfig cfg = small_config(Mode::decoder);
  const Backbone bb(cfg);
  const AdapterParams initial = AdapterParams::init(cfg);
  TrainConfig tc;
  tc.epochs = 2;
  tc.batch_size = 2;
  tc.learning_rate = 0.1;
  tc.seed = 99;
  std::vector<VQAInstance> data;
  for (int i = 0; i < 5; ++i) data.push_back(toy_instance(cfg, 100 + i));

  const uint64_t frozen_before = bb.frozen_hash();
  const TrainResult a = train(data, data, bb, initial, tc);
  const TrainResult b = train(data, data, bb, initial, tc);
  CHECK(a.params.content_hash() == b.params.content_hash());
  CHECK(a.params.content_hash() != initial.content_hash());
  CHECK(bb.frozen_hash() == frozen_before);
  REQUIRE(a.metrics.size() == 2);
  CHECK(a.best_epoch >= 1);
}

TEST_CASE("train: empty dataset is an error") {
  const EncoderConfig cfg = small_config(Mode::decoder);
  const Backbone bb(cfg);
  TrainConfig tc;
  CHECK_THROWS_AS((void)train({}, {}, bb, AdapterParams::init(cfg), tc), DataError);
}

TEST_CASE("train: disabling the ITM objective leaves the itm adapter at initialization") {
  const EncoderConfig cfg = small_config(Mode::decoder);
  const Backbone bb(cfg);
  const AdapterParams initial = AdapterParams::init(cfg);
  TrainConfig tc;
  tc.objectives = {true, false, false};  // the LM-only ablation row
  tc.epochs = 1;
  tc.batch_size = 4;
  tc.learning_rate = 0.1;
  std::vector<VQAInstance> data;
  for (int i = 0; i < 4; ++i) data.push_back(toy_instance(cfg, 200 + i));

  const TrainResult res = train(data, data, bb, initial, tc);

  auto hash_itm = [](const AdapterParams& p) {
    uint64_t h = 0xcbf29ce484222325ull;
    for (const auto& b : p.itm) {
      h = fnv1a_bytes(b.down.a.data(), b.down.a.size() * sizeof(double), h);
      h = fnv1a_bytes(b.up.a.data(), b.up.a.size() * sizeof(double), h);
    }
    h = fnv1a_bytes(p.w_p.a.data(), p.w_p.a.size() * sizeof(double), h);
    return h;
  };
  auto hash_lm = [](const AdapterParams& p) {
    uint64_t h = 0xcbf29ce484222325ull;
    for (const auto& b : p.lm) {
      h = fnv1a_bytes(b.down.a.data(), b.down.a.size() * sizeof(double), h);
      h = fnv1a_bytes(b.up.a.data(), b.up.a.size() * sizeof(double), h);
    }
    return h;
  };
  CHECK(hash_itm(res.params) == hash_itm(initial));
  CHECK(hash_lm(res.params) != hash_lm(initial));
}

TEST_CASE("train: overfitting one batch drives the lm ranking loss to ~zero") {
  const EncoderConfig cfg = small_config(Mode::decoder);
  const Backbone bb(cfg);
  const AdapterParams initial = AdapterParams::init(cfg);
  TrainConfig tc;
  tc.objectives = {true, false, false};
  tc.epochs = 50;  // 1 batch per epoch -> 50 steps
  tc.batch_size = 4;
  tc.learning_rate = 2.0;
  tc.seed = 13;

  std::vector<VQAInstance> data{toy_instance(cfg, 301), toy_instance(cfg, 302)};

  // Track the loss trajectory step by step.
  std::vector<double> losses;
  AdapterParams params = initial;
  for (int step = 0; step < 50; ++step) {
    AdapterParams grads = AdapterParams::zeros_like(params);
    const LossReport rep = gradients(data, bb, params, tc, grads);
    losses.push_back(rep.total);
    params.axpy(-tc.learning_rate, grads);
  }
  for (int step = 1; step <= 10; ++step) {
    CHECK(losses[step] < losses[step - 1]);
  }
  AdapterParams final_grads = AdapterParams::zeros_like(params);
  const LossReport final_rep = gradients(data, bb, params, tc, final_grads);
  CHECK(final_rep.total < 0.01);
}

TEST_CASE("train: corrupted params raise NumericError with the step") {
  // A NaN parameter (e.g. from a damaged checkpoint) poisons the scores; the
  // trainer must abort instead of letting the hinge swallow the NaN.
  const EncoderConfig cfg = small_config(Mode::decoder);
  const Backbone bb(cfg);
  TrainConfig tc;
  tc.objectives = {true, false, false};
  tc.epochs = 3;
  AdapterParams poisoned = AdapterParams::init(cfg);
  poisoned.lm[0].up(0, 0) = std::nan("");
  const std::vector<VQAInstance> data{toy_instance(cfg, 400)};
  try {
    (void)train(data, data, bb, poisoned, tc);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("step 1") != std::string::npos);
  }
}

TEST_CASE("gradients are identical regardless of the worker count") {
  const EncoderConfig cfg = small_config(Mode::decoder);
  const Backbone bb(cfg);
  const AdapterParams params = randomized_params(cfg, 77);
  std::vector<VQAInstance> batch;
  for (int i = 0; i < 6; ++i) batch.push_back(toy_instance(cfg, 500 + i));

  TrainConfig serial;
  serial.jobs = 1;
  TrainConfig parallel = serial;
  parallel.jobs = 4;

  AdapterParams g1 = AdapterParams::zeros_like(params);
  AdapterParams g4 = AdapterParams::zeros_like(params);
  const LossReport r1 = gradients(batch, bb, params, serial, g1);
  const LossReport r4 = gradients(batch, bb, params, parallel, g4);
  CHECK(r1.total == r4.total);
  CHECK(g1.content_hash() == g4.content_hash());
}

TEST_CASE("checkpoint round-trip preserves params bitwise and validates shapes") {
  testutil::TempDir tmp;
  const EncoderConfig cfg = small_config(Mode::decoder);
  const AdapterParams params = randomized_params(cfg, 5);
  save_checkpoint(tmp.file("a.ckpt"), cfg, params);
  const AdapterParams back = load_checkpoint(tmp.file("a.ckpt"), cfg);
  CHECK(back.content_hash() == params.content_hash());

  EncoderConfig other = cfg;
  other.hidden_dim = 64;
  other.heads = 4;
  CHECK_THROWS_AS((void)load_checkpoint(tmp.file("a.ckpt"), other), DataError);
  CHECK_THROWS_AS((void)load_checkpoint(tmp.file("missing.ckpt"), cfg), DataError);
}

TEST_CASE("metrics file is line-delimited") {
  testutil::TempDir tmp;
  std::vector<EpochMetrics> metrics{{1, 0.5, 0.4, 0.45, 0.7}, {2, 0.3, 0.2, 0.25, 0.9}};
  write_metrics(tmp.file("m.jsonl"), metrics);
  const auto lines = read_lines(tmp.file("m.jsonl"));
  REQUIRE(lines.size() == 2);
  CHECK(lines[0].find("\"epoch\":1") != std::string::npos);
  CHECK(lines[1].find("\"dev_acc\":0.9") != std::string::npos);
}
