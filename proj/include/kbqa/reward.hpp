#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "kbqa/executor.hpp"

namespace kbqa {

struct RewardConfig {
  double epsilon = 0.001;  // smoothing in the numeric similarity denominator
  double w1 = 0.2;         // reward granted for the right answer type alone
  double w2 = 0.8;         // weight of answer similarity
  double alpha = 0.1;      // bonus scale
  double beta = 1.0;       // novelty offset
  double eta = 0.08;       // per-epoch growth of the proximity weight
  double lambda0 = 0.1;    // initial proximity weight
};

struct Trial {
  std::vector<std::string> tokens;
  double adaptive_reward = 0.0;
  double log_prob = 0.0;  // filled by the policy

  bool operator==(const Trial&) const = default;
};

struct TypeMismatch : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// 1 - Levenshtein / max length; empty vs empty counts as identical.
template <typename Seq>
double edit_similarity(const Seq& g, const Seq& o) {
  const std::size_t n = g.size(), m = o.size();
  if (n == 0 && m == 0) return 1.0;
  std::vector<std::size_t> prev(m + 1), cur(m + 1);
  for (std::size_t j = 0; j <= m; ++j) prev[j] = j;
  for (std::size_t i = 1; i <= n; ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= m; ++j) {
      const std::size_t sub = prev[j - 1] + (g[i - 1] == o[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return 1.0 - static_cast<double>(prev[m]) / static_cast<double>(std::max(n, m));
}

inline double f1(const IdSet& g, const IdSet& o) {
  if (g.empty() && o.empty()) return 1.0;
  if (g.empty() || o.empty()) return 0.0;
  const double hit = static_cast<double>(idset_inter(g, o).size());
  if (hit == 0.0) return 0.0;
  const double precision = hit / static_cast<double>(o.size());
  const double recall = hit / static_cast<double>(g.size());
  return 2.0 * precision * recall / (precision + recall);
}

inline double sim(const Answer& out, const Answer& gold, const RewardConfig& cfg = {}) {
  if (out.kind != gold.kind) throw TypeMismatch("sim over different answer types");
  switch (gold.kind) {
    case Answer::Kind::Number: {
      const double g = static_cast<double>(gold.number);
      const double o = static_cast<double>(out.number);
      return 1.0 - std::abs(g - o) / std::abs(g + o + cfg.epsilon);
    }
    case Answer::Kind::Booleans:
      return edit_similarity(gold.booleans, out.booleans);
    case Answer::Kind::Entities:
      return f1(gold.entities, out.entities);
  }
  return 0.0;
}

// Zero on failed execution or wrong answer type, otherwise w1 + w2 * sim.
inline double arf(const std::optional<Answer>& out, const Answer& gold,
                  const RewardConfig& cfg = {}) {
  if (!out || out->kind != gold.kind) return 0.0;
  return cfg.w1 + cfg.w2 * sim(*out, gold, cfg);
}

inline double lambda_schedule(int gamma, const RewardConfig& cfg = {}) {
  return std::min(1.0, std::pow(1.0 + cfg.eta, gamma) * cfg.lambda0);
}

// Curriculum bonus: early epochs pay for novelty against the stored trials,
// late epochs for proximity to them.
inline double crb(const Trial& t, const std::vector<Trial>& memory, int gamma,
                  const RewardConfig& cfg = {}) {
  if (memory.empty()) return 0.0;
  double best = 0.0, total = 0.0;
  for (const Trial& stored : memory) {
    const double s = edit_similarity(t.tokens, stored.tokens);
    best = std::max(best, s);
    total += s;
  }
  const double mean = total / static_cast<double>(memory.size());
  const double lambda = lambda_schedule(gamma, cfg);
  return cfg.alpha * (lambda * best + (1.0 - lambda) * (cfg.beta - mean));
}

inline double cumulative_reward(const Trial& t, const std::optional<Answer>& out,
                                const Answer& gold, const std::vector<Trial>& memory, int gamma,
                                const RewardConfig& cfg = {}) {
  return arf(out, gold, cfg) + crb(t, memory, gamma, cfg);
}

struct ConfigParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// `key = value` lines, '#' comments. Unknown keys are rejected.
inline RewardConfig parse_reward_config(std::istream& in) {
  RewardConfig cfg;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const auto eq = line.find('=');
    auto trim = [](std::string s) {
      const auto a = s.find_first_not_of(" \t\r");
      if (a == std::string::npos) return std::string();
      const auto b = s.find_last_not_of(" \t\r");
      return s.substr(a, b - a + 1);
    };
    if (eq == std::string::npos) {
      if (!trim(line).empty())
        throw ConfigParseError("line " + std::to_string(lineno) + ": expected key = value");
      continue;
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    double parsed = 0.0;
    try {
      std::size_t used = 0;
      parsed = std::stod(value, &used);
      if (used != value.size()) throw std::invalid_argument(value);
    } catch (const std::exception&) {
      throw ConfigParseError("line " + std::to_string(lineno) + ": bad number '" + value + "'");
    }
    if (key == "epsilon") cfg.epsilon = parsed;
    else if (key == "w1") cfg.w1 = parsed;
    else if (key == "w2") cfg.w2 = parsed;
    else if (key == "alpha") cfg.alpha = parsed;
    else if (key == "beta") cfg.beta = parsed;
    else if (key == "eta") cfg.eta = parsed;
    else if (key == "lambda0") cfg.lambda0 = parsed;
    else throw ConfigParseError("line " + std::to_string(lineno) + ": unknown key '" + key + "'");
  }
  return cfg;
}

inline RewardConfig load_reward_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigParseError("cannot open " + path);
  return parse_reward_config(in);
}

}  // namespace kbqa
