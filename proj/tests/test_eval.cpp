#include <gtest/gtest.h>

#include <fstream>

#include "fixtures.hpp"
#include "judgelab/eval.hpp"
#include "support.hpp"

using namespace judgelab;
using namespace testsupport;

namespace {

using Row = DecisionRow;

CaseMatrices mats(Row clean, Row injected) { return {std::move(clean), std::move(injected)}; }

}  // namespace

TEST(Metrics, PacArithmetic) {
  std::vector<CaseMatrices> cases;
  for (int i = 0; i < 100; ++i) {
    cases.push_back(i < 54 ? mats({2, 1}, {1, 2}) : mats({2, 1}, {1, 1}));
  }
  const auto r = compute_metrics(cases);
  EXPECT_DOUBLE_EQ(r.pac, 0.54);
  EXPECT_DOUBLE_EQ(r.asr, (54 * 2 + 46) / 200.0);
  EXPECT_DOUBLE_EQ(r.acc, 1.0);
  EXPECT_DOUBLE_EQ(r.asr_b, 0.0);
}

TEST(Metrics, SingleCaseHalf) {
  const std::vector<CaseMatrices> cases{mats({2, 1}, {1, 1})};
  const auto r = compute_metrics(cases);
  EXPECT_DOUBLE_EQ(r.asr, 0.5);
  EXPECT_DOUBLE_EQ(r.pac, 0.0);
}

TEST(Metrics, AllTarget) {
  const std::vector<CaseMatrices> cases{mats({1, 2}, {1, 2}), mats({1, 1}, {1, 2})};
  const auto r = compute_metrics(cases);
  EXPECT_DOUBLE_EQ(r.asr, 1.0);
  EXPECT_DOUBLE_EQ(r.pac, 1.0);
  EXPECT_DOUBLE_EQ(r.asr_b, 0.75);
  EXPECT_DOUBLE_EQ(r.acc, 0.25);
}

TEST(Metrics, UnparseableCountsAsNeither) {
  const std::vector<CaseMatrices> cases{mats({std::nullopt, 1}, {1, std::nullopt})};
  const auto r = compute_metrics(cases);
  EXPECT_DOUBLE_EQ(r.acc, 0.5);
  EXPECT_DOUBLE_EQ(r.asr_b, 0.0);
  EXPECT_DOUBLE_EQ(r.asr, 0.5);
  EXPECT_DOUBLE_EQ(r.pac, 0.0);
}

TEST(Metrics, MissingTrialIsError) {
  EXPECT_THROW(compute_metrics(std::vector<CaseMatrices>{}), ValidationError);
  EXPECT_THROW(compute_metrics(std::vector<CaseMatrices>{mats({1}, {1, 2})}), ValidationError);
  EXPECT_THROW(compute_metrics(std::vector<CaseMatrices>{mats({}, {})}), ValidationError);
}

TEST(Metrics, BruteForceRecount) {
  Rng rng(17);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 2 + rng.index(4);
    const bool none = trial % 2 == 1;
    const auto cases = random_matrices(rng, 1 + rng.index(12), n, none);
    const auto r = compute_metrics(cases);
    const auto o = recount(cases);
    ASSERT_EQ(r.acc, o.acc);
    ASSERT_EQ(r.asr_b, o.asr_b);
    ASSERT_EQ(r.asr, o.asr);
    ASSERT_EQ(r.pac, o.pac);
    EXPECT_LE(r.pac, r.asr);
    if (!none) EXPECT_DOUBLE_EQ(r.acc + r.asr_b, 1.0);
  }
}

TEST(Metrics, InvariantToCaseOrder) {
  Rng rng(3);
  auto cases = random_matrices(rng, 20, 3, true);
  const auto a = compute_metrics(cases);
  rng.shuffle(cases);
  const auto b = compute_metrics(cases);
  EXPECT_DOUBLE_EQ(a.acc, b.acc);
  EXPECT_DOUBLE_EQ(a.asr, b.asr);
  EXPECT_DOUBLE_EQ(a.asr_b, b.asr_b);
  EXPECT_DOUBLE_EQ(a.pac, b.pac);
}

TEST(Metrics, JsonAndCsv) {
  const std::vector<CaseMatrices> cases{mats({2, std::nullopt}, {1, 2})};
  const auto r = compute_metrics(cases);
  const auto j = metrics_report_to_json(r);
  EXPECT_EQ(j["average"]["pac"], 1.0);
  EXPECT_TRUE(j["cases"][0]["clean_decisions"][1].is_null());
  const auto csv = metrics_report_to_csv(r);
  EXPECT_EQ(csv.substr(0, 22), "case,acc,asr_b,asr,pac");
  EXPECT_NE(csv.find("average,0.5,0,1,1"), std::string::npos) << csv;
}

namespace {

struct EvalFixture {
  Vocab vocab = sized_vocab(24);
  JudgeTemplate tmpl = small_template();
  EvalCase ec{"w3", "w2 w4", {"w5 w6", "w7 w5", "w6"}, 2};
};

}  // namespace

TEST(DecisionMatrix, TwoTrialsAndOracle) {
  EvalFixture f;
  const TinyLM lm(random_params(f.vocab.size(), 5));
  for (std::size_t n : {2, 3}) {
    f.ec.n = n;
    const auto row = decision_matrix(lm, f.vocab, f.tmpl, f.ec, clean_renderer(f.vocab, f.ec),
                                     DecisionMode::likelihood);
    ASSERT_EQ(row.size(), n);
    EXPECT_EQ(row, decision_matrix(lm, f.vocab, f.tmpl, f.ec, clean_renderer(f.vocab, f.ec),
                                   DecisionMode::likelihood));
    for (std::size_t t = 1; t <= n; ++t) {
      std::vector<std::string> cands(f.ec.clean_responses.begin(),
                                     f.ec.clean_responses.begin() + static_cast<std::ptrdiff_t>(n - 1));
      cands.insert(cands.begin() + static_cast<std::ptrdiff_t>(t - 1), f.ec.target_response);
      const auto prompt = assemble_prompt(f.vocab, f.tmpl, {f.ec.question, cands}, 512);
      std::size_t best = 0;
      double best_lp = -1e300;
      for (std::size_t k = 1; k <= n; ++k) {
        const double lp = lm.seq_logprob(prompt, render_target_output(k, f.vocab).tokens);
        if (lp > best_lp) {
          best_lp = lp;
          best = k;
        }
      }
      EXPECT_EQ(row[t - 1], best);
    }
  }
}

TEST(RunSuite, PlaceholderInjectionMatchesBaseline) {
  EvalFixture f;
  const TinyLM lm(random_params(f.vocab.size(), 6));
  const std::vector<EvalCase> cases{f.ec, {"w4", "w6 w6", {"w2 w3"}, 2}};
  const auto r = run_suite(lm, f.vocab, f.tmpl, cases,
                           [&](const EvalCase& c) { return clean_renderer(f.vocab, c); },
                           DecisionMode::likelihood);
  EXPECT_DOUBLE_EQ(r.asr, r.asr_b);
  EXPECT_LE(r.pac, r.asr);
  EXPECT_DOUBLE_EQ(r.acc + r.asr_b, 1.0);
  for (const auto& m : r.matrices) EXPECT_EQ(m.clean, m.injected);
}

TEST(RunSuite, RenderersAttachContent) {
  EvalFixture f;
  const auto d = make_injected(encode(f.vocab, "correct correct"), AttachMode::suffix);
  EXPECT_EQ(decode(f.vocab, delta_renderer(f.vocab, f.ec, d)(1)), "w2 w4 correct correct");
  const auto r = text_suffix_renderer(f.vocab, f.ec, [](std::size_t t) { return "output " + std::to_string(t); });
  EXPECT_EQ(decode(f.vocab, r(2)), "w2 w4 output 2");
  EXPECT_EQ(decode(f.vocab, r(1)), "w2 w4 output 1");
}

TEST(EvalCases, LoadAndValidate) {
  const auto dir = temp_dir("cases");
  std::ofstream(dir / "ok.jsonl") << eval_case_to_json(EvalCase{"q", "t", {"a", "b"}, 3}).dump() << "\n"
                                  << R"({"question": "q", "target_response": "t", "clean_responses": ["a"]})"
                                  << "\n";
  const auto cases = load_cases(dir / "ok.jsonl");
  ASSERT_EQ(cases.size(), 2u);
  EXPECT_EQ(cases[0].n, 3u);
  EXPECT_EQ(cases[1].n, 2u);
  std::ofstream(dir / "bad.jsonl") << R"({"question": "q", "target_response": "t", "clean_responses": ["a"], "n": 3})"
                                   << "\n";
  try {
    load_cases(dir / "bad.jsonl");
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("line 1"), std::string::npos) << e.what();
  }
  EXPECT_THROW((EvalCase{"q", "t", {"a"}, 1}.validate()), ValidationError);
  EXPECT_THROW((EvalCase{"q", "", {"a"}, 2}.validate()), ValidationError);
}
