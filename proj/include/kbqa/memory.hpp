#pragma once

#include <fstream>
#include <map>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "kbqa/reward.hpp"

namespace kbqa {

// Per-question store of high-reward trials. Bounded, deduplicated, with
// uniform random replacement once a question's slot list is full.
class MemoryBuffer {
 public:
  explicit MemoryBuffer(std::size_t capacity_per_question = 10, std::uint64_t seed = 0)
      : capacity_(capacity_per_question), rng_(seed) {
    if (capacity_ == 0) throw std::invalid_argument("capacity must be positive");
  }

  std::size_t capacity_per_question() const { return capacity_; }

  // Admits when the trial beats the greedy baseline strictly and is not a
  // duplicate. A full list loses one uniformly chosen trial.
  bool maybe_admit(const std::string& question_id, const Trial& t, double r_greedy) {
    if (!(t.adaptive_reward > r_greedy)) return false;
    auto& trials = store_[question_id];
    for (const Trial& stored : trials)
      if (stored.tokens == t.tokens) return false;
    if (trials.size() < capacity_) {
      trials.push_back(t);
    } else {
      std::uniform_int_distribution<std::size_t> pick(0, trials.size() - 1);
      trials[pick(rng_)] = t;
    }
    return true;
  }

  const std::vector<Trial>& trials_for(const std::string& question_id) const {
    static const std::vector<Trial> empty;
    auto it = store_.find(question_id);
    return it == store_.end() ? empty : it->second;
  }

  std::size_t question_count() const { return store_.size(); }

  void save(const std::string& path) const {
    nlohmann::json j;
    j["capacity"] = capacity_;
    nlohmann::json questions = nlohmann::json::object();
    for (const auto& [qid, trials] : store_) {
      nlohmann::json list = nlohmann::json::array();
      for (const Trial& t : trials)
        list.push_back({{"tokens", t.tokens},
                        {"adaptive_reward", t.adaptive_reward},
                        {"log_prob", t.log_prob}});
      questions[qid] = std::move(list);
    }
    j["questions"] = std::move(questions);
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << j.dump(2) << '\n';
  }

  void load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read " + path);
    nlohmann::json j = nlohmann::json::parse(in);
    capacity_ = j.at("capacity").get<std::size_t>();
    store_.clear();
    for (const auto& [qid, list] : j.at("questions").items()) {
      auto& trials = store_[qid];
      for (const auto& item : list) {
        Trial t;
        t.tokens = item.at("tokens").get<std::vector<std::string>>();
        t.adaptive_reward = item.at("adaptive_reward").get<double>();
        t.log_prob = item.at("log_prob").get<double>();
        trials.push_back(std::move(t));
      }
    }
  }

 private:
  std::size_t capacity_;
  std::map<std::string, std::vector<Trial>> store_;
  std::mt19937_64 rng_;
};

}  // namespace kbqa
