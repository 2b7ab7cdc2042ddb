#include <gtest/gtest.h>

#include <cmath>

#include "judgelab/defense.hpp"
#include "oracle/naive_forward.hpp"
#include "support.hpp"

using namespace judgelab;
using namespace testsupport;

namespace {

Vocab defense_vocab() {
  const DefenseConfig c;
  return build_vocab({c.ppl_prompt_template, c.ka_instruction, c.secret,
                      std::string("the tide depends on heat and water w0 w1 w2 w3")});
}

}  // namespace

TEST(Calibration, OneToHundred) {
  std::vector<double> s;
  for (int i = 100; i >= 1; --i) s.push_back(i);
  const auto c = calibrate_threshold(s, 0.01);
  EXPECT_DOUBLE_EQ(c.theta, 99.0);
  EXPECT_EQ(c.rank, 99u);
  EXPECT_DOUBLE_EQ(c.calibration_fpr(), 0.01);
}

TEST(Calibration, EqualScoresAndSingle) {
  const auto c = calibrate_threshold(std::vector<double>(40, 2.5), 0.05);
  EXPECT_DOUBLE_EQ(c.theta, 2.5);
  EXPECT_DOUBLE_EQ(c.calibration_fpr(), 0.0);
  EXPECT_DOUBLE_EQ(calibrate_threshold({7.0}, 0.01).theta, 7.0);
  EXPECT_THROW(calibrate_threshold({}, 0.01), ValidationError);
  EXPECT_THROW(calibrate_threshold({1.0}, 0.0), ValidationError);
  EXPECT_THROW(calibrate_threshold({1.0}, 1.0), ValidationError);
}

TEST(Calibration, SoundAndTightOnRandomScores) {
  Rng rng(8);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = 1 + rng.index(300);
    std::vector<double> s(n);
    for (auto& x : s) x = std::round(rng.normal() * 4) / 4;  // ties on purpose
    const double fpr = 0.005 + 0.3 * rng.uniform();
    const auto c = calibrate_threshold(s, fpr);
    EXPECT_LE(c.calibration_fpr(), fpr + 1e-12);
    // Smallest such threshold among the scores: any lower score breaks the bound.
    for (double cand : c.scores) {
      if (cand >= c.theta) continue;
      std::size_t above = 0;
      for (double x : s) above += x > cand;
      EXPECT_GT(static_cast<double>(above) / static_cast<double>(n), fpr);
    }
  }
}

TEST(Classify, Rules) {
  const std::vector<double> w{3.1, 5.2, 2.9};
  EXPECT_TRUE(classify(w, 5.0, Detector::ppl_w).flagged);
  EXPECT_FALSE(classify(w, 5.2, Detector::ppl_w).flagged);
  EXPECT_FALSE(classify(std::vector<double>{5.0}, 5.0, Detector::ppl).flagged);
  EXPECT_TRUE(classify(std::vector<double>{5.0 + 1e-12}, 5.0, Detector::ppl).flagged);
  EXPECT_EQ(*classify(w, 0.0, Detector::ppl).score, 3.1);
  EXPECT_THROW(classify(w, 0.0, Detector::known_answer), ValidationError);
  EXPECT_THROW(classify(std::vector<double>{}, 0.0, Detector::ppl), ValidationError);
  Rng rng(2);
  for (int i = 0; i < 200; ++i) {
    const double lo = rng.normal(), hi = lo + rng.uniform();
    const double s = rng.normal();
    const std::vector<double> v{s};
    EXPECT_LE(classify(v, hi, Detector::ppl).flagged, classify(v, lo, Detector::ppl).flagged);
  }
}

TEST(DefenseMetrics, Examples) {
  auto results = [](std::size_t n, std::size_t flagged) {
    std::vector<DetectionResult> r(n);
    for (std::size_t i = 0; i < flagged; ++i) r[i].flagged = true;
    return r;
  };
  const auto m = defense_metrics(results(10, 6), results(500, 2));
  EXPECT_DOUBLE_EQ(m.fnr, 0.4);
  EXPECT_DOUBLE_EQ(m.fpr, 0.004);
  const auto z = defense_metrics(results(7, 0), results(9, 0));
  EXPECT_DOUBLE_EQ(z.fnr, 1.0);
  EXPECT_DOUBLE_EQ(z.fpr, 0.0);
  EXPECT_THROW(defense_metrics({}, results(1, 0)), ValidationError);
  const auto j = defense_report_to_json({Detector::ppl, 1.5, m});
  EXPECT_EQ(j["detector"], "ppl");
  EXPECT_EQ(j["n_clean"], 500);
}

TEST(Perplexity, UniformModel) {
  ModelConfig c;
  c.n_layers = 1;
  c.d_model = 8;
  c.n_heads = 2;
  c.d_ff = 8;
  c.ctx_len = 128;
  c.vocab_size = 64;
  const TinyLM lm(zero_params(c));
  auto v = defense_vocab();
  std::vector<std::string> toks;
  for (TokenId i = 0; i < v.size(); ++i) toks.push_back(v.token(i));
  for (std::size_t i = 0; toks.size() < 64; ++i) toks.push_back("pad" + std::to_string(i));
  v = Vocab(toks, 0, 1, 2);
  const double lp = log_perplexity(lm, v, "the tide", "the tide depends on heat", {});
  EXPECT_NEAR(lp, std::log(64.0), 1e-12);
  EXPECT_NEAR(lp, 4.1589, 1e-4);
}

TEST(Perplexity, MatchesNaiveOracle) {
  const auto v = defense_vocab();
  const DefenseConfig cfg;
  for (std::uint64_t s = 0; s < 10; ++s) {
    const auto p = random_params(v.size(), 50 + s, 128);
    const TinyLM lm(p);
    const oracle::NaiveModel naive(p);
    const std::string resp = s % 2 ? "w0" : "the tide depends on heat and water w2";
    // Oracle: rebuild the sequence from the template text by hand.
    const std::string head = "Below is an instruction that describes a task. Write a response that "
                             "appropriately completes the request.\n\n### Instruction:\nthe tide\n\n### Response:\n";
    TokenSeq prefix{v.bos_id()};
    const auto h = encode(v, head);
    prefix.insert(prefix.end(), h.begin(), h.end());
    const auto body = encode(v, resp);
    const double expect = -naive.seq_logprob(prefix, body) / static_cast<double>(body.size());
    EXPECT_NEAR(log_perplexity(lm, v, "the tide", resp, cfg), expect, 1e-9);
    if (body.size() == 1) {
      EXPECT_NEAR(log_perplexity(lm, v, "the tide", resp, cfg), -naive.token_logprob(prefix, prefix.size() - 1, body[0]), 1e-9);
    }
  }
}

TEST(Perplexity, WindowPartitionIdentity) {
  const auto v = defense_vocab();
  const TinyLM lm(random_params(v.size(), 3, 128));
  DefenseConfig cfg;
  Rng rng(7);
  const std::vector<std::string> words{"the", "tide", "depends", "on", "heat", "and", "water", "w0", "w1"};
  std::string resp;
  for (int i = 0; i < 23; ++i) resp += words[rng.index(words.size())] + " ";
  const auto w = windowed_log_perplexity(lm, v, "w3", resp, cfg);
  EXPECT_EQ(w.sizes, (std::vector<std::size_t>{10, 10, 3}));
  double weighted = 0;
  for (std::size_t i = 0; i < w.scores.size(); ++i) weighted += w.scores[i] * static_cast<double>(w.sizes[i]);
  EXPECT_NEAR(weighted / 23.0, log_perplexity(lm, v, "w3", resp, cfg), 1e-9);
  cfg.window = 1;
  const auto per = windowed_log_perplexity(lm, v, "w3", resp, cfg);
  EXPECT_EQ(per.scores, response_token_nll(lm, v, "w3", resp, cfg));
  EXPECT_THROW(log_perplexity(lm, v, "w3", "", cfg), ValidationError);
}

TEST(KnownAnswer, ScriptedBackends) {
  const auto v = defense_vocab();
  const DefenseConfig cfg;
  const auto secret = encode(v, cfg.secret);
  // Echoes the secret after any prompt: the next token continues the longest
  // secret prefix already at the end of the context.
  const ScriptedBackend echo(v.size(), [&](std::span<const TokenId> ctx) {
    std::size_t emitted = 0;
    for (std::size_t k = std::min(secret.size(), ctx.size()); k > 0; --k) {
      if (std::equal(secret.begin(), secret.begin() + static_cast<std::ptrdiff_t>(k), ctx.end() - static_cast<std::ptrdiff_t>(k))) {
        emitted = k;
        break;
      }
    }
    return peaked(v.size(), emitted < secret.size() ? secret[emitted] : v.id("w0"));
  });
  const ScriptedBackend mute(v.size(), [&](std::span<const TokenId>) { return peaked(v.size(), v.id("w1")); });
  for (const char* r : {"the tide depends on heat", "w0 w1 w2", "water"}) {
    EXPECT_FALSE(known_answer_detect(echo, v, r, cfg).flagged) << r;
    EXPECT_TRUE(known_answer_detect(mute, v, r, cfg).flagged) << r;
  }
  const std::vector<ScreenedResponse> inj{{"q", "w0"}, {"q", "w1"}};
  const auto rep = run_detector(mute, v, Detector::known_answer, inj, inj, cfg);
  EXPECT_DOUBLE_EQ(rep.metrics.fnr, 0.0);
  EXPECT_DOUBLE_EQ(rep.metrics.fpr, 1.0);
  EXPECT_FALSE(rep.theta.has_value());
}

TEST(RunDetector, CalibratesOnClean) {
  const auto v = defense_vocab();
  const TinyLM lm(random_params(v.size(), 9, 128));
  DefenseConfig cfg;
  cfg.calibration_n = 20;
  cfg.target_fpr = 0.1;
  Rng rng(3);
  const std::vector<std::string> words{"the", "tide", "depends", "on", "heat", "and", "water"};
  std::vector<ScreenedResponse> clean, inj;
  for (int i = 0; i < 20; ++i) {
    std::string r;
    for (int k = 0; k < 12; ++k) r += words[rng.index(words.size())] + " ";
    clean.push_back({"the tide", r});
    inj.push_back({"the tide", r + "w0 w1 w2 w3 w0 w1 w2 w3"});
  }
  for (auto d : {Detector::ppl, Detector::ppl_w}) {
    const auto rep = run_detector(lm, v, d, inj, clean, cfg);
    ASSERT_TRUE(rep.theta.has_value());
    EXPECT_LE(rep.metrics.fpr, 0.1 + 1e-12);
    std::vector<double> calib;
    for (const auto& c : clean) {
      calib.push_back(d == Detector::ppl ? log_perplexity(lm, v, c.question, c.response, cfg)
                                         : windowed_log_perplexity(lm, v, c.question, c.response, cfg).max());
    }
    EXPECT_DOUBLE_EQ(*rep.theta, calibrate_threshold(calib, 0.1).theta);
  }
}

TEST(DefenseConfig, DefaultsAndJson) {
  const DefenseConfig c;
  EXPECT_EQ(c.secret, "Hello World!");
  EXPECT_EQ(c.window, 10u);
  EXPECT_DOUBLE_EQ(c.target_fpr, 0.01);
  EXPECT_EQ(c.calibration_n, 100u);
  const auto back = defense_config_from_json(defense_config_to_json(c));
  EXPECT_EQ(back.ka_instruction, c.ka_instruction);
  EXPECT_THROW(defense_config_from_json(json{{"target_fpr", 1.5}}), ValidationError);
  for (auto d : {Detector::known_answer, Detector::ppl, Detector::ppl_w}) {
    EXPECT_EQ(detector_from_string(to_string(d)), d);
  }
}
