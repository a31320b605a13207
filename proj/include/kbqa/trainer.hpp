#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "kbqa/dataset.hpp"
#include "kbqa/executor.hpp"
#include "kbqa/memory.hpp"
#include "kbqa/policy.hpp"
#include "kbqa/reward.hpp"

namespace kbqa {

struct MissingPseudoGold : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  double pretrain_lr = 0.001;
  int pretrain_batch = 32;
  int pretrain_epochs = 30;
  double rl_lr = 1e-4;
  int rl_batch = 8;
  int rl_epochs = 30;
  int k_trials = 5;  // sampled trials per question, working range 5..20
  int n_max = 5;     // action budget when executing trials
  std::uint64_t seed = 1;
  bool use_adam = false;       // plain gradient ascent unless switched on
  bool use_crb_memory = true;  // false: pure policy gradient, no bonus, no memory
  double holdout_fraction = 0.2;
  std::size_t memory_capacity = 10;
  std::string checkpoint_dir;  // empty: no checkpoints written
  std::string log_path;        // empty: no CSV log

  void validate() const {
    if (pretrain_lr <= 0 || rl_lr <= 0) throw std::invalid_argument("learning rates must be positive");
    if (pretrain_batch <= 0 || rl_batch <= 0) throw std::invalid_argument("batch sizes must be positive");
    if (pretrain_epochs < 0 || rl_epochs < 0) throw std::invalid_argument("epoch counts must be non-negative");
    if (k_trials < 1 || k_trials > 20) throw std::invalid_argument("k_trials must be in [1,20]");
    if (n_max < 1) throw std::invalid_argument("n_max must be positive");
    if (holdout_fraction < 0.0 || holdout_fraction >= 1.0)
      throw std::invalid_argument("holdout_fraction must be in [0,1)");
  }
};

// Per-question advantage weights of the batch loss
// L = (1/K) sum_k (R_k - R_greedy) log p(t_k). Adding a constant to every
// cumulative reward (greedy included) cancels, so the baseline adds no bias.
inline std::vector<double> advantage_weights(const std::vector<double>& cumulative,
                                             double greedy_cumulative) {
  std::vector<double> w(cumulative.size());
  const double k = static_cast<double>(cumulative.size());
  for (std::size_t i = 0; i < cumulative.size(); ++i)
    w[i] = (cumulative[i] - greedy_cumulative) / k;
  return w;
}

// Stable across platforms and runs, unlike std::hash.
inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (const unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

inline bool is_holdout(const std::string& question_id, double fraction) {
  return static_cast<double>(fnv1a(question_id) % 1000) < fraction * 1000.0;
}

inline double trial_reward(const std::vector<std::string>& tokens, const Example& ex,
                           const KnowledgeBase& kb, const RewardConfig& rcfg, int n_max) {
  return arf(run_program_tokens(tokens, ex.table, kb, {}, n_max), ex.gold, rcfg);
}

// Mean adaptive reward of greedy decoding over a set of examples.
inline double mean_greedy_reward(const Policy& policy, const std::vector<Example>& examples,
                                 const KnowledgeBase& kb, const RewardConfig& rcfg, int n_max) {
  if (examples.empty()) return 0.0;
  double total = 0.0;
  for (const Example& ex : examples) {
    const Trial t = policy.greedy_decode(policy.encode(ex.tokens));
    total += trial_reward(t.tokens, ex, kb, rcfg, n_max);
  }
  return total / static_cast<double>(examples.size());
}

namespace detail {

// Gradient-ascent optimizer; the Adam variant keeps per-tensor moments in
// flattened views over two PolicyGrads shadows.
class Optimizer {
 public:
  Optimizer(bool adam, double lr) : adam_(adam), lr_(lr) {}

  void step(Policy& policy, const PolicyGrads& grads) {
    if (!adam_) {
      policy.apply_ascent(grads, lr_);
      return;
    }
    if (t_ == 0) {
      m_ = policy.zero_grads();
      v_ = policy.zero_grads();
    }
    ++t_;
    const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    const double corr1 = 1.0 - std::pow(b1, t_);
    const double corr2 = 1.0 - std::pow(b2, t_);
    auto flats = [](auto& s) {
      std::vector<Eigen::Map<Eigen::ArrayXd>> out;
      for_each_tensor(s, [&](auto& t) { out.emplace_back(t.data(), t.size()); });
      return out;
    };
    auto gm = flats(m_);
    auto gv = flats(v_);
    std::vector<Eigen::Map<const Eigen::ArrayXd>> gg;
    for_each_tensor(grads, [&](const auto& t) { gg.emplace_back(t.data(), t.size()); });
    std::vector<Eigen::Map<Eigen::ArrayXd>> gp;
    for_each_tensor(policy.mutable_params(), [&](auto& t) {
      gp.emplace_back(t.data(), t.size());
    });
    for (std::size_t i = 0; i < gg.size(); ++i) {
      gm[i] = b1 * gm[i] + (1.0 - b1) * gg[i];
      gv[i] = b2 * gv[i] + (1.0 - b2) * gg[i].square();
      gp[i] += lr_ * (gm[i] / corr1) / ((gv[i] / corr2).sqrt() + eps);
    }
  }

 private:
  bool adam_;
  double lr_;
  int t_ = 0;
  PolicyGrads m_, v_;
};

inline void checkpoint(const Policy& policy, const std::string& dir, const std::string& stage,
                       int epoch) {
  if (dir.empty()) return;
  std::filesystem::create_directories(dir);
  char name[64];
  std::snprintf(name, sizeof(name), "%s_epoch_%03d.json", stage.c_str(), epoch);
  policy.save((std::filesystem::path(dir) / name).string());
}

}  // namespace detail

struct PretrainResult {
  double initial_loss = 0.0;
  std::vector<double> epoch_loss;  // mean per-token cross-entropy after each epoch
};

// Teacher forcing on the first pseudo-gold program of every example.
inline PretrainResult pretrain(Policy& policy, const std::vector<Example>& data,
                               const TrainConfig& cfg) {
  cfg.validate();
  if (data.empty()) throw std::invalid_argument("pretrain needs at least one example");
  std::vector<std::vector<std::string>> targets;
  targets.reserve(data.size());
  for (const Example& ex : data) {
    if (ex.pseudo_gold.empty())
      throw MissingPseudoGold("no pseudo-gold program for " + ex.question_id);
    targets.push_back(tokenize(ex.pseudo_gold.front()));
  }

  auto full_loss = [&] {
    double ce = 0.0;
    std::size_t tokens = 0;
    for (std::size_t i = 0; i < data.size(); ++i) {
      ce -= policy.log_prob(policy.encode(data[i].tokens), targets[i]);
      tokens += targets[i].size();
    }
    return ce / static_cast<double>(tokens);
  };

  PretrainResult result;
  result.initial_loss = full_loss();
  detail::Optimizer opt(cfg.use_adam, cfg.pretrain_lr);
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (int epoch = 1; epoch <= cfg.pretrain_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(cfg.pretrain_batch)) {
      const std::size_t stop =
          std::min(order.size(), start + static_cast<std::size_t>(cfg.pretrain_batch));
      std::size_t batch_tokens = 0;
      for (std::size_t i = start; i < stop; ++i) batch_tokens += targets[order[i]].size();
      PolicyGrads grads = policy.zero_grads();
      // Ascent on mean log-likelihood is descent on mean cross-entropy.
      const double w = 1.0 / static_cast<double>(batch_tokens);
      for (std::size_t i = start; i < stop; ++i)
        policy.accumulate_gradients(data[order[i]].tokens, targets[order[i]], w, grads);
      opt.step(policy, grads);
    }
    result.epoch_loss.push_back(full_loss());
    detail::checkpoint(policy, cfg.checkpoint_dir, "pretrain", epoch);
  }
  return result;
}

struct RlEpochStats {
  int epoch = 0;             // the curriculum counter, starting at 0
  double lambda = 0.0;       // proximity weight used this epoch
  double heldout_reward = 0.0;  // mean greedy adaptive reward on the held-out split
  double mean_loss = 0.0;    // mean per-question advantage-weighted log likelihood
};

struct RlResult {
  std::vector<RlEpochStats> epochs;
  MemoryBuffer memory{10, 0};
  std::size_t train_count = 0;
  std::size_t heldout_count = 0;
};

// REINFORCE with a greedy self-critical baseline: per question, one greedy
// trial sets the baseline and the admission threshold, K trials sampled from
// the policy carry the gradient, admissions update the per-question memory
// afterwards. All rewards of one question read the memory as it stood when
// the question came up. With use_crb_memory off this degrades to plain
// policy gradient.
inline RlResult train_rl(Policy& policy, const std::vector<Example>& data,
                         const KnowledgeBase& kb, const RewardConfig& rcfg,
                         const TrainConfig& cfg) {
  cfg.validate();
  std::vector<const Example*> train, heldout;
  for (const Example& ex : data)
    (is_holdout(ex.question_id, cfg.holdout_fraction) ? heldout : train).push_back(&ex);
  if (train.empty()) throw std::invalid_argument("train_rl needs a non-empty training split");

  RlResult result;
  result.memory = MemoryBuffer(cfg.memory_capacity, cfg.seed);
  result.train_count = train.size();
  result.heldout_count = heldout.size();

  std::ofstream log;
  if (!cfg.log_path.empty()) {
    log.open(cfg.log_path);
    if (!log) throw std::runtime_error("cannot write " + cfg.log_path);
    log << "epoch,lambda,mean_reward,loss\n";
  }

  detail::Optimizer opt(cfg.use_adam, cfg.rl_lr);
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  std::vector<Example> heldout_copy;
  heldout_copy.reserve(heldout.size());
  for (const Example* ex : heldout) heldout_copy.push_back(*ex);

  for (int gamma = 0; gamma < cfg.rl_epochs; ++gamma) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(cfg.rl_batch)) {
      const std::size_t stop =
          std::min(order.size(), start + static_cast<std::size_t>(cfg.rl_batch));
      PolicyGrads grads = policy.zero_grads();
      for (std::size_t i = start; i < stop; ++i) {
        const Example& ex = *train[order[i]];
        const EncodedQuestion enc = policy.encode(ex.tokens);
        const std::vector<Trial> snapshot =
            cfg.use_crb_memory ? result.memory.trials_for(ex.question_id) : std::vector<Trial>{};

        Trial greedy = policy.greedy_decode(enc);
        greedy.adaptive_reward = trial_reward(greedy.tokens, ex, kb, rcfg, cfg.n_max);
        const double greedy_cumulative =
            greedy.adaptive_reward +
            (cfg.use_crb_memory ? crb(greedy, snapshot, gamma, rcfg) : 0.0);

        std::vector<Trial> trials;
        trials.reserve(static_cast<std::size_t>(cfg.k_trials));
        for (int k = 0; k < cfg.k_trials; ++k) trials.push_back(policy.sample(enc, rng));
        std::vector<double> cumulative(trials.size());
        for (std::size_t k = 0; k < trials.size(); ++k) {
          trials[k].adaptive_reward = trial_reward(trials[k].tokens, ex, kb, rcfg, cfg.n_max);
          cumulative[k] = trials[k].adaptive_reward +
                          (cfg.use_crb_memory ? crb(trials[k], snapshot, gamma, rcfg) : 0.0);
        }
        if (cfg.use_crb_memory)
          for (const Trial& t : trials)
            result.memory.maybe_admit(ex.question_id, t, greedy.adaptive_reward);

        const std::vector<double> w = advantage_weights(cumulative, greedy_cumulative);
        for (std::size_t k = 0; k < trials.size(); ++k) {
          loss_sum += w[k] * trials[k].log_prob;
          policy.accumulate_gradients(ex.tokens, trials[k].tokens, w[k], grads);
        }
      }
      opt.step(policy, grads);
    }

    RlEpochStats stats;
    stats.epoch = gamma;
    stats.lambda = lambda_schedule(gamma, rcfg);
    stats.heldout_reward = mean_greedy_reward(policy, heldout_copy, kb, rcfg, cfg.n_max);
    stats.mean_loss = loss_sum / static_cast<double>(train.size());
    result.epochs.push_back(stats);
    if (log)
      log << stats.epoch << ',' << stats.lambda << ',' << stats.heldout_reward << ','
          << stats.mean_loss << '\n';
    detail::checkpoint(policy, cfg.checkpoint_dir, "rl", gamma);
  }
  return result;
}

}  // namespace kbqa
