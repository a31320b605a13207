#include <catch2/catch_amalgamated.hpp>

#include <set>
#include <string>
#include <vector>

#include "kbqa/eval.hpp"
#include "support/synth.hpp"

using namespace kbqa;

namespace {

fixtures::SynthCorpus corpus_with_pseudo_gold(int n, std::uint64_t seed) {
  fixtures::SynthCorpus corpus = fixtures::make_corpus(n, seed);
  for (std::size_t i = 0; i < corpus.examples.size(); ++i)
    corpus.examples[i].pseudo_gold = {sequence_from_text(corpus.templates[i])};
  return corpus;
}

std::vector<std::string> vocab_of(const std::vector<Example>& examples) {
  std::set<std::string> words;
  for (const Example& ex : examples) words.insert(ex.tokens.begin(), ex.tokens.end());
  return {words.begin(), words.end()};
}

}  // namespace

TEST_CASE("score_example grades by category") {
  SECTION("verification wants the exact boolean list") {
    const Answer gold = Answer::of_booleans({true, false});
    CHECK(score_example(Answer::of_booleans({true, false}), gold, "verification") == 1.0);
    CHECK(score_example(Answer::of_booleans({true, true}), gold, "verification") == 0.0);
    CHECK(score_example(Answer::of_booleans({true}), gold, "verification") == 0.0);
  }
  SECTION("count categories want the exact integer") {
    const Answer gold = Answer::of_number(8);
    CHECK(score_example(Answer::of_number(8), gold, "quantitative_count") == 1.0);
    CHECK(score_example(Answer::of_number(7), gold, "quantitative_count") == 0.0);
    CHECK(score_example(Answer::of_number(8), gold, "comparative_count") == 1.0);
  }
  SECTION("entity categories use set F1") {
    const Answer gold = Answer::of_entities({1, 2, 3, 4});
    CHECK(score_example(Answer::of_entities({1, 2}), gold, "simple") ==
          Catch::Approx(2.0 / 3.0));
    CHECK(score_example(Answer::of_entities({1, 2, 3, 4}), gold, "logical") == 1.0);
    CHECK(score_example(Answer::of_entities({9}), gold, "comparative") == 0.0);
  }
  SECTION("failures and type confusions score zero") {
    const Answer gold = Answer::of_entities({1, 2});
    CHECK(score_example(std::nullopt, gold, "simple") == 0.0);
    CHECK(score_example(Answer::of_number(2), gold, "simple") == 0.0);
    CHECK(score_example(Answer::of_entities({1, 2}), Answer::of_number(2),
                        "quantitative_count") == 0.0);
  }
}

TEST_CASE("oracle evaluation tops out on the synthetic corpus") {
  const auto corpus = corpus_with_pseudo_gold(21, 3);
  const EvalReport report = evaluate_oracle(corpus.examples, corpus.kb);
  CHECK(report.macro_f1 == 1.0);
  CHECK(report.micro_f1 == 1.0);
  CHECK(report.per_category.size() == 7);
  std::size_t total = 0;
  for (const auto& [category, score] : report.per_category) {
    CHECK(score.mean_f1 == 1.0);
    total += score.n;
  }
  CHECK(total == corpus.examples.size());
}

TEST_CASE("missing pseudo-gold scores zero in oracle mode") {
  auto corpus = corpus_with_pseudo_gold(7, 5);
  corpus.examples[0].pseudo_gold.clear();
  const EvalReport report = evaluate_oracle(corpus.examples, corpus.kb);
  CHECK(report.macro_f1 < 1.0);
  CHECK(report.per_category.at(corpus.examples[0].category).mean_f1 == 0.0);
}

TEST_CASE("macro and micro are recomputable from the category table") {
  const auto corpus = corpus_with_pseudo_gold(18, 7);
  // Break some programs so scores are mixed.
  auto examples = corpus.examples;
  for (std::size_t i = 0; i < examples.size(); i += 3) examples[i].pseudo_gold.clear();
  const EvalReport report = evaluate_oracle(examples, corpus.kb);

  double macro = 0.0, weighted = 0.0;
  std::size_t total = 0;
  for (const auto& [category, score] : report.per_category) {
    macro += score.mean_f1;
    weighted += score.mean_f1 * static_cast<double>(score.n);
    total += score.n;
  }
  macro /= static_cast<double>(report.per_category.size());
  CHECK(report.macro_f1 == Catch::Approx(macro).margin(1e-12));
  CHECK(report.micro_f1 == Catch::Approx(weighted / static_cast<double>(total)).margin(1e-12));
  CHECK(total == examples.size());
}

TEST_CASE("an untrained policy scores near the floor") {
  const auto corpus = corpus_with_pseudo_gold(14, 9);
  const Policy policy(vocab_of(corpus.examples), PolicyConfig{.d_e = 8, .d_q = 8}, 99);
  EvalConfig cfg;
  cfg.beam_width = 3;
  const EvalReport a = evaluate(policy, corpus.examples, corpus.kb, cfg);
  const EvalReport b = evaluate(policy, corpus.examples, corpus.kb, cfg);
  CHECK(a.macro_f1 < 0.3);
  // Deterministic given checkpoint, dataset and config.
  CHECK(a.macro_f1 == b.macro_f1);
  CHECK(a.micro_f1 == b.micro_f1);
  REQUIRE(a.per_category.size() == b.per_category.size());
}

TEST_CASE("empty dataset yields an empty report") {
  const auto corpus = corpus_with_pseudo_gold(1, 11);
  const EvalReport report = evaluate_oracle({}, corpus.kb);
  CHECK(report.per_category.empty());
  CHECK(report.macro_f1 == 0.0);
  CHECK(report.micro_f1 == 0.0);
}
