#pragma once
// Answer scoring and dataset-level evaluation reports.

#include <algorithm>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "kbqa/dataset.hpp"
#include "kbqa/executor.hpp"
#include "kbqa/policy.hpp"
#include "kbqa/reward.hpp"

namespace kbqa {

// Categories whose answers are graded all-or-nothing; the rest use set F1.
inline bool is_accuracy_category(const std::string& category) {
  return category == "verification" || category == "quantitative_count" ||
         category == "comparative_count";
}

inline double score_example(const std::optional<Answer>& predicted, const Answer& gold,
                            const std::string& category) {
  if (!predicted) return 0.0;
  if (is_accuracy_category(category)) return *predicted == gold ? 1.0 : 0.0;
  if (predicted->kind != Answer::Kind::Entities || gold.kind != Answer::Kind::Entities)
    return 0.0;
  return f1(gold.entities, predicted->entities);
}

struct CategoryScore {
  std::size_t n = 0;
  double mean_f1 = 0.0;
};

struct EvalReport {
  std::map<std::string, CategoryScore> per_category;
  double macro_f1 = 0.0;  // unweighted mean over categories
  double micro_f1 = 0.0;  // example-count-weighted mean
};

struct EvalConfig {
  int beam_width = 5;  // 1 reproduces greedy decoding
  int n_max = kDefaultMaxActions;
};

namespace detail {

inline EvalReport aggregate_scores(const std::vector<std::pair<std::string, double>>& scored) {
  struct Tally {
    std::size_t n = 0;
    double sum = 0.0;
  };
  std::map<std::string, Tally> tallies;
  for (const auto& [category, score] : scored) {
    Tally& t = tallies[category];
    ++t.n;
    t.sum += score;
  }
  EvalReport report;
  double weighted = 0.0;
  std::size_t total = 0;
  for (const auto& [category, t] : tallies) {
    const double mean = t.sum / static_cast<double>(t.n);
    report.per_category[category] = {t.n, mean};
    report.macro_f1 += mean;
    weighted += t.sum;
    total += t.n;
  }
  if (!tallies.empty()) report.macro_f1 /= static_cast<double>(tallies.size());
  if (total > 0) report.micro_f1 = weighted / static_cast<double>(total);
  return report;
}

}  // namespace detail

// Decode each question (top beam), execute, and grade against the gold answer.
inline EvalReport evaluate(const Policy& policy, const std::vector<Example>& examples,
                           const KnowledgeBase& kb, const EvalConfig& cfg = {}) {
  std::vector<std::pair<std::string, double>> scored;
  scored.reserve(examples.size());
  for (const Example& ex : examples) {
    const auto trials = policy.beam_sample(policy.encode(ex.tokens), 1, std::max(1, cfg.beam_width));
    std::optional<Answer> predicted;
    if (!trials.empty())
      predicted = run_program_tokens(trials.front().tokens, ex.table, kb, {}, cfg.n_max);
    scored.emplace_back(ex.category, score_example(predicted, ex.gold, ex.category));
  }
  return detail::aggregate_scores(scored);
}

// Grade the stored pseudo-gold programs instead of policy output; an example
// without one scores zero.
inline EvalReport evaluate_oracle(const std::vector<Example>& examples, const KnowledgeBase& kb,
                                  const EvalConfig& cfg = {}) {
  std::vector<std::pair<std::string, double>> scored;
  scored.reserve(examples.size());
  for (const Example& ex : examples) {
    std::optional<Answer> predicted;
    if (!ex.pseudo_gold.empty())
      predicted = run_program(ex.pseudo_gold.front(), ex.table, kb, {});
    scored.emplace_back(ex.category, score_example(predicted, ex.gold, ex.category));
  }
  return detail::aggregate_scores(scored);
}

}  // namespace kbqa
