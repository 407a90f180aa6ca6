// Copyright (c) 2026, The MaskApprox Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

#include "maskapprox/error.hpp"
#include "maskapprox/metrics.hpp"
#include "support/test_util.hpp"

using namespace maskapprox;

namespace {

TokenizedPair pair_of(const std::string& cand, const std::vector<std::string>& refs) {
  TokenizedPair p{tokenize(cand), {}};
  for (const auto& r : refs) p.references.push_back(tokenize(r));
  return p;
}

nlohmann::json golden() {
  std::ifstream in(maskapprox::testing::fixtures_dir() / "metrics_golden.json");
  return nlohmann::json::parse(in);
}

// Template-style corpus, the regime real evaluation runs in.
Corpus template_corpus(std::uint32_t seed) {
  const std::vector<std::string> kinds = {"building", "road", "vegetation"};
  const std::vector<std::string> quads = {"top left", "top right", "bottom left", "bottom right"};
  const std::vector<std::string> verbs = {"appears", "disappears", "is enlarged"};
  std::mt19937 rng(seed);
  auto pick = [&](const std::vector<std::string>& v) { return v[rng() % v.size()]; };
  Corpus c;
  for (int i = 0; i < 12; ++i) {
    const std::string k = pick(kinds), q = pick(quads), v = pick(verbs);
    std::vector<std::string> refs = {"a " + k + " " + v + " in the " + q,
                                     "in the " + q + " a " + k + " " + v,
                                     "the " + k + " at the " + q + " " + v};
    const std::string cand = rng() % 3 == 0 ? "a " + pick(kinds) + " " + v + " in the " + q
                                            : "a " + k + " " + pick(verbs) + " in the " + pick(quads);
    c.push_back(pair_of(cand, refs));
  }
  return c;
}

}  // namespace

TEST(Tokenize, LowercasesAndStripsPunctuation) {
  EXPECT_EQ(tokenize("  The Road, is  BUILT!\tnow. "),
            (Tokens{"the", "road", "is", "built", "now"}));
  EXPECT_EQ(tokenize("don't"), (Tokens{"dont"}));
  EXPECT_TRUE(tokenize(" ... ").empty());
}

TEST(Bleu, IdenticalCandidateScoresOneAtEveryOrder) {
  Corpus c = {pair_of("a building appears in the top left", {"a building appears in the top left"})};
  for (int n = 1; n <= 4; ++n) EXPECT_DOUBLE_EQ(bleu_n(c, n), 1.0);
}

TEST(Bleu, ClippedUnigramExample) {
  Corpus c = {pair_of("the the the the", {"the cat sat on the mat"})};
  const double expected = 0.5 * std::exp(1.0 - 6.0 / 4.0);
  EXPECT_NEAR(bleu_n(c, 1), expected, 1e-12);
  EXPECT_NEAR(bleu_n(c, 1), 0.3033, 5e-5);
}

TEST(Bleu, NoFourGramOverlapGivesZero) {
  Corpus c = {pair_of("a road in the top", {"a road appears at the top"})};
  EXPECT_GT(bleu_n(c, 1), 0.0);
  EXPECT_EQ(bleu_n(c, 4), 0.0);
}

TEST(Bleu, SmoothingRescuesZeroHigherOrders) {
  Corpus c = {pair_of("a road in the top", {"a road appears at the top"})};
  const double s = bleu_n(c, 4, true);
  EXPECT_GT(s, 0.0);
  EXPECT_LT(s, bleu_n(c, 1));
}

TEST(Bleu, ClosestReferenceLengthPrefersShorterOnTie) {
  // c = 4, refs of length 3 and 5: r = 3 so no brevity penalty applies.
  Corpus c = {pair_of("a b c d", {"a b c", "a b c d e"})};
  EXPECT_NEAR(bleu_n(c, 1), 1.0, 1e-12);
  Corpus d = {pair_of("a b", {"a b c d", "a b x y z w"})};
  EXPECT_NEAR(bleu_n(d, 1), std::exp(1.0 - 4.0 / 2.0), 1e-12);
}

TEST(Bleu, EmptyCorpusIsContractError) {
  EXPECT_THROW(bleu_n({}, 1), ContractError);
  EXPECT_THROW(rouge_l({}), ContractError);
  EXPECT_THROW(meteor_lite({}), ContractError);
  EXPECT_THROW(cider_d({}), ContractError);
}

TEST(Bleu, DuplicatePerfectPairNeverDecreasesScore) {
  for (std::uint32_t seed = 0; seed < 20; ++seed) {
    Corpus c = template_corpus(seed);
    const TokenizedPair dup = pair_of("a road appears in the bottom right",
                                      {"a road appears in the bottom right"});
    for (int n = 1; n <= 4; ++n) {
      const double before = bleu_n(c, n);
      Corpus more = c;
      more.push_back(dup);
      EXPECT_GE(bleu_n(more, n) + 1e-15, before) << "seed " << seed << " n " << n;
    }
  }
}

TEST(Bleu, OrderMonotoneOnTemplateCorpora) {
  for (std::uint32_t seed = 0; seed < 50; ++seed) {
    Corpus c = template_corpus(seed);
    double prev = 2.0;
    for (int n = 1; n <= 4; ++n) {
      const double b = bleu_n(c, n);
      EXPECT_LE(b, prev + 1e-12) << "seed " << seed << " n " << n;
      prev = b;
    }
  }
}

// Geometric averaging lets a high p2 lift B2 above B1 when p2 > p1. The
// ordering is a property of typical corpora, not a theorem.
TEST(Bleu, OrderMonotonicityCounterexample) {
  Corpus c = {pair_of("a b x", {"a b"})};  // p1 = 2/3, p2 = 1/2
  EXPECT_GT(bleu_n(c, 1), bleu_n(c, 2));
  Corpus d = {pair_of("x a b c d e", {"a b c d e"}), pair_of("y", {"q"})};
  // p1 = 5/7, p2 = 4/5, so B2 > B1.
  EXPECT_GT(bleu_n(d, 2), bleu_n(d, 1));
}

TEST(RougeL, LcsExample) {
  EXPECT_EQ(lcs_length(tokenize("a b c d"), tokenize("a c b d")), 3u);
  Corpus c = {pair_of("a b c d", {"a c b d"})};
  EXPECT_NEAR(rouge_l(c), 0.75, 1e-12);
}

TEST(RougeL, IdenticalAndDisjoint) {
  EXPECT_DOUBLE_EQ(rouge_l({pair_of("x y z", {"x y z"})}), 1.0);
  EXPECT_DOUBLE_EQ(rouge_l({pair_of("x y z", {"p q"})}), 0.0);
}

TEST(RougeL, SymmetricWhenBetaIsOne) {
  std::mt19937 rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    Tokens a, b;
    const std::size_t na = 1 + rng() % 8, nb = 1 + rng() % 8;
    for (std::size_t i = 0; i < na; ++i) a.push_back(std::string(1, 'a' + rng() % 5));
    for (std::size_t i = 0; i < nb; ++i) b.push_back(std::string(1, 'a' + rng() % 5));
    EXPECT_NEAR(rouge_l_pair(a, {b}, 1.0), rouge_l_pair(b, {a}, 1.0), 1e-15);
  }
}

TEST(RougeL, MaxOverReferences) {
  const Tokens cand = tokenize("a b c");
  EXPECT_DOUBLE_EQ(rouge_l_pair(cand, {tokenize("x y"), tokenize("a b c")}), 1.0);
}

TEST(Stem, SuffixRules) {
  EXPECT_EQ(stem("running"), "run");
  EXPECT_EQ(stem("run"), "run");
  EXPECT_EQ(stem("buildings"), "build");
  EXPECT_EQ(stem("roads"), "road");
  EXPECT_EQ(stem("cities"), "city");
  EXPECT_EQ(stem("classes"), "class");
  EXPECT_EQ(stem("glass"), "glass");
  EXPECT_EQ(stem("added"), "add");
  EXPECT_EQ(stem("stopped"), "stop");
  EXPECT_EQ(stem("filling"), "fill");
  EXPECT_EQ(stem("sing"), "sing");
  EXPECT_EQ(stem("is"), "is");
}

TEST(Meteor, IdenticalThreeTokens) {
  const Tokens t = tokenize("a red roof");
  const MeteorAlignment a = meteor_align(t, t);
  EXPECT_EQ(a.matches, 3u);
  EXPECT_EQ(a.chunks, 1u);
  EXPECT_NEAR(meteor_pair(t, {t}), 1.0 - 0.5 / 27.0, 1e-12);
  EXPECT_NEAR(meteor_pair(t, {t}), 0.9815, 5e-5);
}

TEST(Meteor, StemStageMatchesRunningToRun) {
  const MeteorAlignment a = meteor_align(tokenize("running"), tokenize("run"));
  EXPECT_EQ(a.matches, 1u);
  EXPECT_EQ(a.ref_index[0], 0);
}

TEST(Meteor, ZeroMatches) {
  EXPECT_DOUBLE_EQ(meteor_lite({pair_of("x y", {"p q r"})}), 0.0);
}

TEST(Meteor, ChunksCountContiguousRuns) {
  // Aligned as b->1, a->0, so two chunks.
  const MeteorAlignment a = meteor_align(tokenize("b a"), tokenize("a b"));
  EXPECT_EQ(a.matches, 2u);
  EXPECT_EQ(a.chunks, 2u);
  // Repeated token follows its predecessor rather than the first free slot.
  const MeteorAlignment r = meteor_align(tokenize("c the x the"), tokenize("the c the"));
  EXPECT_EQ(r.ref_index[0], 1);
  EXPECT_EQ(r.ref_index[1], 2);
  EXPECT_EQ(r.ref_index[3], 0);
}

TEST(CiderD, SelfMatchWithDisjointCorpusScoresTen) {
  Corpus c = {pair_of("a building appears in the north", {"a building appears in the north"}),
              pair_of("trees grow near some river", {"water floods every field today"}),
              pair_of("roads cross", {"bridges span valleys"})};
  const auto s = cider_d_scores(c);
  EXPECT_NEAR(s[0], 10.0, 1e-12);
}

TEST(CiderD, NoOverlapScoresZero) {
  Corpus c = {pair_of("x y z w", {"a b c d"}), pair_of("p q r s", {"e f g h"})};
  EXPECT_DOUBLE_EQ(cider_d(c), 0.0);
}

TEST(CiderD, SinglePairIsContractError) {
  EXPECT_THROW(cider_d({pair_of("a b", {"a b"})}), ContractError);
}

TEST(CiderD, RepeatingNgramsBeyondReferenceNeverHelps) {
  Corpus base = {pair_of("a road appears in the top left", {"a road appears in the top left"}),
                 pair_of("a building is enlarged", {"vegetation disappears in the bottom right"}),
                 pair_of("trees appear", {"some trees appear at the top"})};
  double prev = cider_d_scores(base)[0];
  Tokens cand = base[0].candidate;
  for (int extra = 1; extra <= 6; ++extra) {
    cand.push_back("road");
    Corpus c = base;
    c[0].candidate = cand;
    const double s = cider_d_scores(c)[0];
    EXPECT_LE(s, prev + 1e-12) << extra;
    prev = s;
  }
}

TEST(Metrics, IdenticalCorpusIsPerfect) {
  Corpus c = template_corpus(11);
  for (auto& p : c) p.candidate = p.references[0];
  const MetricReport r = score_corpus(c);
  for (double b : r.bleu) EXPECT_DOUBLE_EQ(b, 1.0);
  EXPECT_DOUBLE_EQ(r.rouge_l, 1.0);
}

TEST(Metrics, PermutationInvariant) {
  Corpus c = template_corpus(5);
  const auto base = metric_values(score_corpus(c));
  std::mt19937 rng(9);
  for (int t = 0; t < 5; ++t) {
    std::shuffle(c.begin(), c.end(), rng);
    const auto v = metric_values(score_corpus(c));
    for (std::size_t i = 0; i < v.size(); ++i) EXPECT_NEAR(v[i], base[i], 1e-12);
  }
}

TEST(Metrics, ScoresInDocumentedRanges) {
  for (std::uint32_t seed = 0; seed < 30; ++seed) {
    const MetricReport r = score_corpus(template_corpus(seed));
    for (double b : r.bleu) EXPECT_TRUE(b >= 0.0 && b <= 1.0);
    EXPECT_TRUE(r.meteor >= 0.0 && r.meteor <= 1.0);
    EXPECT_TRUE(r.rouge_l >= 0.0 && r.rouge_l <= 1.0);
    EXPECT_TRUE(r.cider_d >= 0.0 && r.cider_d <= 10.0);
  }
}

TEST(Metrics, GoldenFixtureMatchesOracle) {
  const nlohmann::json g = golden();
  const auto records = read_caption_jsonl(maskapprox::testing::fixtures_dir() / "metrics_corpus.jsonl");
  ASSERT_EQ(records.size(), 20u);
  const Corpus corpus = to_corpus(records);
  const MetricReport r = score_corpus(corpus);
  for (int n = 0; n < 4; ++n) EXPECT_NEAR(r.bleu[n], g["bleu"][n].get<double>(), 1e-6);
  EXPECT_NEAR(r.meteor, g["meteor"].get<double>(), 1e-6);
  EXPECT_NEAR(r.rouge_l, g["rouge_l"].get<double>(), 1e-6);
  EXPECT_NEAR(r.cider_d, g["cider_d"].get<double>(), 1e-6);

  const auto cider = cider_d_scores(corpus);
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const auto& pp = g["per_pair"][i];
    EXPECT_EQ(records[i].id, pp["id"].get<std::string>());
    EXPECT_NEAR(rouge_l_pair(corpus[i].candidate, corpus[i].references),
                pp["rouge_l"].get<double>(), 1e-9) << records[i].id;
    EXPECT_NEAR(meteor_pair(corpus[i].candidate, corpus[i].references),
                pp["meteor"].get<double>(), 1e-9) << records[i].id;
    EXPECT_NEAR(cider[i], pp["cider_d"].get<double>(), 1e-9) << records[i].id;
  }
}

TEST(EvaluateCorpus, SelfEvaluationIsPerfect) {
  const auto dir = maskapprox::testing::temp_dir("metrics_self");
  std::vector<CaptionRecord> recs;
  for (int i = 0; i < 5; ++i) {
    const std::string s = "a road appears in quadrant " + std::to_string(i);
    recs.push_back({"s" + std::to_string(i), s, {s}});
  }
  write_caption_jsonl(dir / "c.jsonl", recs);
  const MetricReport r = evaluate_corpus(dir / "c.jsonl", dir / "c.jsonl");
  for (double b : r.bleu) EXPECT_DOUBLE_EQ(b, 1.0);
  EXPECT_DOUBLE_EQ(r.rouge_l, 1.0);
  EXPECT_EQ(r.pairs, 5u);
}

TEST(EvaluateCorpus, MissingReferenceIdIsNamed) {
  const auto dir = maskapprox::testing::temp_dir("metrics_missing");
  write_caption_jsonl(dir / "c.jsonl", {{"a", "x y", {}}, {"zz-7", "x", {}}});
  write_caption_jsonl(dir / "r.jsonl", {{"a", "", {"x y"}}});
  try {
    evaluate_corpus(dir / "c.jsonl", dir / "r.jsonl");
    FAIL() << "expected InputError";
  } catch (const InputError& e) {
    EXPECT_NE(std::string(e.what()).find("zz-7"), std::string::npos);
  }
}

TEST(EvaluateCorpus, EmptyAndMalformedFilesAreInputErrors) {
  const auto dir = maskapprox::testing::temp_dir("metrics_bad");
  { std::ofstream(dir / "empty.jsonl"); }
  EXPECT_THROW(read_caption_jsonl(dir / "empty.jsonl"), InputError);
  { std::ofstream(dir / "bad.jsonl") << "{\"id\": \"a\", \"candidate\": \"x\"}\n{oops\n"; }
  try {
    read_caption_jsonl(dir / "bad.jsonl");
    FAIL() << "expected InputError";
  } catch (const InputError& e) {
    EXPECT_NE(std::string(e.what()).find(":2"), std::string::npos);
  }
  EXPECT_THROW(read_caption_jsonl(dir / "nope.jsonl"), InputError);
}

TEST(MetricReport, JsonRoundTripAndTable) {
  MetricReport r;
  r.bleu = {0.9, 0.8, 0.7, 0.6};
  r.meteor = 0.5;
  r.rouge_l = 0.4;
  r.cider_d = 3.25;
  r.pairs = 7;
  const MetricReport back = MetricReport::from_json(r.to_json());
  EXPECT_EQ(metric_values(back), metric_values(r));
  EXPECT_EQ(back.pairs, 7u);
  const std::string t = format_metric_table({{"with", r}, {"without", r}});
  EXPECT_EQ(std::count(t.begin(), t.end(), '\n'), 3);
  for (const char* name : kMetricNames) EXPECT_NE(t.find(name), std::string::npos);
}
