#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "oracles/brute_force.hpp"
#include "ragcap/eval_metrics.hpp"
#include "support/test_support.hpp"

using namespace ragcap;
using ragcap::test::fixture;

namespace {

using Tokens = std::vector<std::string>;

TokenizedCaption words(const std::string& s) { return tokenize(s); }

std::vector<TokenizedCaption> words(std::initializer_list<const char*> list) {
  std::vector<TokenizedCaption> out;
  for (const char* s : list) out.push_back(tokenize(s));
  return out;
}

}  // namespace

// Expected token sequences were produced with sacrebleu's 13a tokenizer
// (lowercased) and TokenizerZh.
TEST(Tokenize, MatchesFrozen13aOutputs) {
  const std::vector<std::pair<std::string, Tokens>> cases{
      {"A dog.", {"a", "dog", "."}},
      {"a man, riding a horse!", {"a", "man", ",", "riding", "a", "horse", "!"}},
      {"Un caballo marrón es grasa cerca de una casa roja.",
       {"un", "caballo", "marrón", "es", "grasa", "cerca", "de", "una", "casa", "roja", "."}},
      {"two dogs (one brown) on a bed?", {"two", "dogs", "(", "one", "brown", ")", "on", "a", "bed", "?"}},
      {"hello hello", {"hello", "hello"}},
      {"it costs 3.5 dollars, ok", {"it", "costs", "3.5", "dollars", ",", "ok"}},
      {"a cat: sitting; there", {"a", "cat", ":", "sitting", ";", "there"}},
      {"a sign [closed]", {"a", "sign", "[", "closed", "]"}},
      {"一只狗在草地上。", {"一", "只", "狗", "在", "草", "地", "上", "。"}},
      {"一只dog在草地上, ok", {"一", "只", "dog", "在", "草", "地", "上", ",", "ok"}},
  };
  for (const auto& [text, want] : cases) EXPECT_EQ(tokenize(text).tokens, want) << text;
}

TEST(Tokenize, LowercasesBeyondAscii) {
  EXPECT_EQ(tokenize("ÉCOLE Ωμέγα ПРИВЕТ").tokens, (Tokens{"école", "ωμέγα", "привет"}));
}

TEST(Tokenize, UnicodeWhitespace) {
  EXPECT_EQ(tokenize("a b　c\td\n").tokens, (Tokens{"a", "b", "c", "d"}));
  EXPECT_TRUE(tokenize("  \n ").tokens.empty());
}

TEST(Tokenize, Idempotent) {
  for (const char* s : {"A dog, (running) fast!", "3.5, 4,000 and 7.", "一只狗在草地上。", "Ünïcödé WORDS; here"}) {
    const auto once = tokenize(s);
    EXPECT_EQ(tokenize(join_tokens(once)), once) << s;
  }
}

TEST(Bleu, IdenticalIsOne) {
  const auto h = words({"the cat sat on the mat", "a dog runs in the park"});
  std::vector<std::vector<TokenizedCaption>> r{{h[0]}, {h[1]}};
  EXPECT_DOUBLE_EQ(bleu(h, r, 4), 1.0);
  EXPECT_DOUBLE_EQ(bleu(h, r, 1), 1.0);
}

TEST(Bleu, DisjointIsZero) {
  const auto h = words({"alpha beta gamma delta"});
  std::vector<std::vector<TokenizedCaption>> r{{words("one two three four")}};
  EXPECT_EQ(bleu(h, r, 4), 0.0);
  EXPECT_EQ(bleu(h, r, 1), 0.0);
}

// Two instances, counted by hand:
//   1: "the cat sat on the mat" vs {"the cat is on the mat", "there is a cat on the mat"}
//      clipped matches 5/6, 3/5, 1/4, 0/3; closest reference length 6
//   2: "a dog runs in the park" vs {"a dog runs in a park", "the dog is running in the park"}
//      clipped matches 6/6, 5/5, 3/4, 1/3; closest reference length 6
// Totals 11/12, 8/10, 4/8, 1/6 with c = r = 12, so BP = 1.
TEST(Bleu, HandComputedCorpus) {
  const auto h = words({"the cat sat on the mat", "a dog runs in the park"});
  const std::vector<std::vector<TokenizedCaption>> r{
      words({"the cat is on the mat", "there is a cat on the mat"}),
      words({"a dog runs in a park", "the dog is running in the park"})};
  EXPECT_NEAR(bleu(h, r, 1), 11.0 / 12.0, 1e-9);
  const double b4 = std::pow((11.0 / 12.0) * (8.0 / 10.0) * (4.0 / 8.0) * (1.0 / 6.0), 0.25);
  EXPECT_NEAR(bleu(h, r, 4), b4, 1e-9);
  EXPECT_NEAR(b4, 0.49719876934333, 1e-12);
}

// "a dog" vs "a dog runs fast": p1 = 1, c = 2, r = 4, BP = exp(1 - 4/2).
TEST(Bleu, BrevityPenalty) {
  const auto h = words({"a dog"});
  const std::vector<std::vector<TokenizedCaption>> r{words({"a dog runs fast"})};
  EXPECT_NEAR(bleu(h, r, 1), std::exp(-1.0), 1e-9);
}

TEST(Bleu, ClosestLengthTiePrefersShorter) {
  // hyp length 4; references of length 3 and 5 are equally close -> r = 3, no penalty.
  const auto h = words({"a b c d"});
  const std::vector<std::vector<TokenizedCaption>> r{words({"a b c", "a b c d e"})};
  EXPECT_NEAR(bleu(h, r, 1), 1.0, 1e-12);
}

TEST(RougeL, HandComputed) {
  // LCS("the cat sat", "the cat on the mat") = 2; P = 2/3, R = 2/5, beta = 1.2.
  const double p = 2.0 / 3.0, r = 2.0 / 5.0, b2 = 1.44;
  const double want = (1 + b2) * p * r / (r + b2 * p);
  const std::vector<TokenizedCaption> refs{words("the cat on the mat")};
  EXPECT_NEAR(rouge_l(words("the cat sat"), refs), want, 1e-12);
  EXPECT_NEAR(rouge_l(words("the cat sat"), refs), 0.4784, 1e-4);
}

TEST(RougeL, IdenticalAndDisjoint) {
  const std::vector<TokenizedCaption> refs{words("a b c")};
  EXPECT_NEAR(rouge_l(words("a b c"), refs), 1.0, 1e-12);
  EXPECT_EQ(rouge_l(words("x y"), refs), 0.0);
  EXPECT_EQ(rouge_l(TokenizedCaption{}, refs), 0.0);
}

TEST(CocoScorers, FrozenValues) {
  const auto j = nlohmann::json::parse(test::read_text(fixture("eval/coco_scorer_frozen.json")));
  std::vector<TokenizedCaption> hyps;
  std::vector<std::vector<TokenizedCaption>> refs;
  for (const auto& inst : j["instances"]) {
    hyps.push_back(tokenize(inst["hypothesis"].get<std::string>()));
    std::vector<TokenizedCaption> rs;
    for (const auto& r : inst["references"]) rs.push_back(tokenize(r.get<std::string>()));
    refs.push_back(std::move(rs));
  }
  const auto c = cider_d(hyps, refs);
  for (std::size_t i = 0; i < hyps.size(); ++i) {
    EXPECT_NEAR(c.per_instance[i], j["instances"][i]["ciderD"].get<double>(), 1e-9);
    EXPECT_NEAR(rouge_l(hyps[i], refs[i]), j["instances"][i]["rougeL"].get<double>(), 1e-9);
  }
  EXPECT_NEAR(c.mean, j["ciderD"].get<double>(), 1e-9);
  EXPECT_NEAR(rouge_l_corpus(hyps, refs), j["rougeL"].get<double>(), 1e-9);
}

TEST(CiderD, SingleDocumentCorpusIsZero) {
  const auto h = words({"a dog on the grass"});
  const std::vector<std::vector<TokenizedCaption>> r{words({"a dog on the grass", "a puppy on a lawn"})};
  EXPECT_EQ(cider_d(h, r).mean, 0.0);
}

TEST(CiderD, ZeroOverlapIsZero) {
  const auto h = words({"alpha beta", "x y z"});
  const std::vector<std::vector<TokenizedCaption>> r{words({"one two three"}), words({"four five"})};
  const auto c = cider_d(h, r);
  EXPECT_EQ(c.per_instance[0], 0.0);
  EXPECT_EQ(c.per_instance[1], 0.0);
}

TEST(CiderD, EmptyCorpusRejected) {
  EXPECT_THROW(cider_d({}, {}), InputError);
}

TEST(CiderD, OracleOnRandomCorpora) {
  std::mt19937_64 rng(51);
  std::uniform_int_distribution<int> vocab(0, 11), inst(1, 10), nref(1, 5), len(1, 15);
  for (int t = 0; t < 30; ++t) {
    std::vector<TokenizedCaption> hyps;
    std::vector<std::vector<TokenizedCaption>> refs;
    auto sentence = [&] {
      TokenizedCaption c;
      for (int i = 0, n = len(rng); i < n; ++i) c.tokens.push_back("w" + std::to_string(vocab(rng)));
      return c;
    };
    for (int i = 0, n = inst(rng); i < n; ++i) {
      hyps.push_back(sentence());
      std::vector<TokenizedCaption> rs;
      for (int k = 0, m = nref(rng); k < m; ++k) rs.push_back(sentence());
      refs.push_back(std::move(rs));
    }
    std::vector<std::vector<std::vector<std::string>>> corpus;
    for (const auto& rs : refs) {
      std::vector<std::vector<std::string>> doc;
      for (const auto& r : rs) doc.push_back(r.tokens);
      corpus.push_back(doc);
    }
    const auto got = cider_d(hyps, refs);
    for (std::size_t i = 0; i < hyps.size(); ++i)
      EXPECT_NEAR(got.per_instance[i], oracle::cider_d_instance(hyps[i].tokens, corpus[i], corpus), 1e-6);
  }
}

TEST(Metrics, InstancePermutationInvariant) {
  const auto h = words({"a dog on grass", "a red car", "two cats sleeping", "a man with a hat"});
  std::vector<std::vector<TokenizedCaption>> r{words({"a dog on the grass", "a puppy"}), words({"a red car parked"}),
                                               words({"two cats asleep", "cats on a bed"}),
                                               words({"a man wearing a hat", "a person"})};
  const std::vector<std::size_t> perm{2, 0, 3, 1};
  std::vector<TokenizedCaption> hp;
  std::vector<std::vector<TokenizedCaption>> rp;
  for (auto i : perm) {
    hp.push_back(h[i]);
    rp.push_back(r[i]);
  }
  EXPECT_NEAR(bleu(h, r, 4), bleu(hp, rp, 4), 1e-12);
  EXPECT_NEAR(rouge_l_corpus(h, r), rouge_l_corpus(hp, rp), 1e-12);
  const auto a = cider_d(h, r), b = cider_d(hp, rp);
  EXPECT_NEAR(a.mean, b.mean, 1e-12);
  for (std::size_t k = 0; k < perm.size(); ++k) EXPECT_NEAR(b.per_instance[k], a.per_instance[perm[k]], 1e-12);
}

TEST(Metrics, ReferenceDuplication) {
  const auto h = words({"a dog on grass", "a red car"});
  const std::vector<std::vector<TokenizedCaption>> r{words({"a dog on the grass", "a puppy outside"}),
                                                     words({"a red car parked", "a vehicle"})};
  auto dup = r;
  dup[0].push_back(r[0][0]);
  EXPECT_NEAR(bleu(h, r, 4), bleu(h, dup, 4), 1e-12);
  EXPECT_NEAR(rouge_l_corpus(h, r), rouge_l_corpus(h, dup), 1e-12);
  // CIDEr-D averages over references, so a duplicated reference gets double weight.
  EXPECT_GT(std::abs(cider_d(h, r).per_instance[0] - cider_d(h, dup).per_instance[0]), 1e-6);
}

TEST(Evaluate, SelfReferencesScoreOne) {
  test::TempDir dir;
  test::write_text(dir / "p.jsonl",
                   "{\"run_manifest\": {\"tool\": \"ragcap\"}}\n"
                   "{\"id\": \"a\", \"chosen\": \"a dog runs in the park\"}\n"
                   "{\"id\": \"b\", \"chosen\": \"two cats sleep on a warm bed\"}\n");
  test::write_text(dir / "r.json", R"({"a": ["a dog runs in the park"], "b": ["two cats sleep on a warm bed"]})");
  const auto rep = evaluate_run((dir / "p.jsonl").string(), (dir / "r.json").string(), "en");
  EXPECT_EQ(rep.instances, 2u);
  EXPECT_NEAR(rep.bleu1, 1.0, 1e-12);
  EXPECT_NEAR(rep.bleu4, 1.0, 1e-12);
  EXPECT_NEAR(rep.rouge_l, 1.0, 1e-12);
}

TEST(Evaluate, MissingReferenceNamesId) {
  test::TempDir dir;
  test::write_text(dir / "p.jsonl", "{\"id\": \"zzz\", \"chosen\": \"x\"}\n");
  test::write_text(dir / "r.json", R"({"a": ["x"]})");
  try {
    evaluate_run((dir / "p.jsonl").string(), (dir / "r.json").string(), "en");
    FAIL();
  } catch (const InputError& e) {
    EXPECT_NE(std::string(e.what()).find("'zzz'"), std::string::npos);
  }
}

TEST(Evaluate, EmptyPredictions) {
  test::TempDir dir;
  test::write_text(dir / "p.jsonl", "");
  test::write_text(dir / "r.json", R"({"a": ["x"]})");
  EXPECT_THROW(evaluate_run((dir / "p.jsonl").string(), (dir / "r.json").string(), "en"), InputError);
}

TEST(Evaluate, CocoAnnotationReferences) {
  const auto refs = load_references(fixture("coco/captions_val_sample.json").string());
  EXPECT_EQ(refs.size(), 3u);
  EXPECT_TRUE(refs.contains("139"));
}

// Golden values computed with sacrebleu (BLEU, 13a tokens, lowercased, no
// smoothing) and pycocoevalcap (ROUGE-L, CIDEr-D) on the same captions.
TEST(Evaluate, GoldenReport) {
  const auto rep = evaluate_run(fixture("golden/report_predictions.jsonl").string(),
                                fixture("golden/report_references.json").string(), "en");
  const auto want = nlohmann::json::parse(test::read_text(fixture("golden/report_expected.json")));
  EXPECT_EQ(rep.instances, want["instances"].get<std::size_t>());
  EXPECT_NEAR(rep.bleu1, want["bleu1"].get<double>(), 1e-9);
  EXPECT_NEAR(rep.bleu4, want["bleu4"].get<double>(), 1e-9);
  EXPECT_NEAR(rep.rouge_l, want["rougeL"].get<double>(), 1e-9);
  EXPECT_NEAR(rep.cider_d, want["ciderD"].get<double>(), 1e-9);
  ASSERT_EQ(rep.per_instance.size(), 5u);
  for (std::size_t i = 0; i < 5; ++i) {
    EXPECT_EQ(rep.per_instance[i].id, want["per_instance_ciderD"][i]["id"].get<std::string>());
    EXPECT_NEAR(rep.per_instance[i].cider_d, want["per_instance_ciderD"][i]["ciderD"].get<double>(), 1e-9);
  }
  const auto j = to_json(rep);
  std::vector<std::string> keys;
  for (const auto& [k, _] : j.items()) keys.push_back(k);
  EXPECT_EQ(keys, (std::vector<std::string>{"language", "instances", "bleu1", "bleu4", "rougeL", "ciderD",
                                            "per_instance_ciderD"}));
}
