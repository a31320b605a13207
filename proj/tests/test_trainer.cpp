#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "kbqa/trainer.hpp"
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

PolicyConfig tiny_config() {
  PolicyConfig cfg;
  cfg.d_e = 8;
  cfg.d_q = 8;
  return cfg;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("advantage weights") {
  SECTION("trials matching the baseline contribute nothing") {
    const auto w = advantage_weights({0.7, 0.7, 0.7}, 0.7);
    for (const double x : w) CHECK(x == 0.0);
  }
  SECTION("a constant shift of all rewards changes nothing") {
    const std::vector<double> r = {0.1, 0.9, 0.4, 0.55};
    const auto base = advantage_weights(r, 0.3);
    std::vector<double> shifted = r;
    for (double& x : shifted) x += 17.25;
    const auto moved = advantage_weights(shifted, 0.3 + 17.25);
    REQUIRE(moved.size() == base.size());
    for (std::size_t i = 0; i < base.size(); ++i)
      CHECK(moved[i] == Catch::Approx(base[i]).margin(1e-12));
  }
  SECTION("weights are advantages over K") {
    const auto w = advantage_weights({1.0, 0.5}, 0.25);
    CHECK(w[0] == Catch::Approx(0.375));
    CHECK(w[1] == Catch::Approx(0.125));
  }
}

TEST_CASE("holdout split is deterministic and roughly sized") {
  int held = 0;
  for (int i = 0; i < 1000; ++i) {
    char qid[16];
    std::snprintf(qid, sizeof qid, "q%04d", i);
    if (is_holdout(qid, 0.2)) ++held;
    CHECK(is_holdout(qid, 0.2) == is_holdout(qid, 0.2));
  }
  CHECK(held > 120);
  CHECK(held < 280);
}

TEST_CASE("pretrain memorizes a single example") {
  const auto corpus = corpus_with_pseudo_gold(3, 11);
  const std::vector<Example> data = {corpus.examples[0]};
  Policy policy(vocab_of(data), tiny_config(), 5);

  TrainConfig cfg;
  cfg.pretrain_epochs = 500;
  cfg.pretrain_lr = 0.05;
  cfg.use_adam = true;
  cfg.seed = 5;
  const PretrainResult result = pretrain(policy, data, cfg);

  const Trial t = policy.greedy_decode(policy.encode(data[0].tokens));
  CHECK(t.tokens == tokenize(data[0].pseudo_gold.front()));
  CHECK(result.epoch_loss.back() < result.initial_loss);
}

TEST_CASE("pretrain loss drops after the first epoch") {
  const auto corpus = corpus_with_pseudo_gold(12, 13);
  Policy policy(vocab_of(corpus.examples), tiny_config(), 7);
  TrainConfig cfg;
  cfg.pretrain_epochs = 1;
  cfg.seed = 7;
  const PretrainResult result = pretrain(policy, corpus.examples, cfg);
  REQUIRE(result.epoch_loss.size() == 1);
  CHECK(result.epoch_loss[0] < result.initial_loss);
}

TEST_CASE("pretrain is deterministic under a fixed seed") {
  const auto corpus = corpus_with_pseudo_gold(10, 17);
  TrainConfig cfg;
  cfg.pretrain_epochs = 3;
  cfg.seed = 21;

  Policy a(vocab_of(corpus.examples), tiny_config(), 9);
  Policy b(vocab_of(corpus.examples), tiny_config(), 9);
  const PretrainResult ra = pretrain(a, corpus.examples, cfg);
  const PretrainResult rb = pretrain(b, corpus.examples, cfg);
  REQUIRE(ra.epoch_loss.size() == rb.epoch_loss.size());
  for (std::size_t i = 0; i < ra.epoch_loss.size(); ++i)
    CHECK(ra.epoch_loss[i] == rb.epoch_loss[i]);
}

TEST_CASE("pretrain requires pseudo-gold programs") {
  auto corpus = corpus_with_pseudo_gold(3, 19);
  corpus.examples[1].pseudo_gold.clear();
  Policy policy(vocab_of(corpus.examples), tiny_config(), 3);
  TrainConfig cfg;
  cfg.pretrain_epochs = 1;
  CHECK_THROWS_AS(pretrain(policy, corpus.examples, cfg), MissingPseudoGold);
}

TEST_CASE("train config validation") {
  TrainConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  SECTION("rates") {
    cfg.rl_lr = 0.0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  }
  SECTION("trials") {
    cfg.k_trials = 0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg.k_trials = 21;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  }
  SECTION("holdout") {
    cfg.holdout_fraction = 1.0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  }
}

TEST_CASE("train_rl runs the curriculum and logs per epoch") {
  const auto corpus = corpus_with_pseudo_gold(14, 23);
  Policy policy(vocab_of(corpus.examples), tiny_config(), 13);

  const auto log_path = std::filesystem::temp_directory_path() / "kbqa_rl_log.csv";
  TrainConfig cfg;
  cfg.rl_epochs = 3;
  cfg.rl_batch = 4;
  cfg.k_trials = 5;
  cfg.seed = 23;
  cfg.log_path = log_path.string();
  const RewardConfig rcfg;
  const RlResult result = train_rl(policy, corpus.examples, corpus.kb, rcfg, cfg);

  REQUIRE(result.epochs.size() == 3);
  CHECK(result.train_count + result.heldout_count == corpus.examples.size());
  for (int e = 0; e < 3; ++e) {
    CHECK(result.epochs[e].epoch == e);
    CHECK(result.epochs[e].lambda == lambda_schedule(e, rcfg));
    CHECK(std::isfinite(result.epochs[e].mean_loss));
    CHECK(result.epochs[e].heldout_reward >= 0.0);
    CHECK(result.epochs[e].heldout_reward <= 1.0);
  }

  const std::string log = slurp(log_path);
  std::filesystem::remove(log_path);
  CHECK(log.rfind("epoch,lambda,mean_reward,loss\n", 0) == 0);
  CHECK(std::count(log.begin(), log.end(), '\n') == 4);
}

TEST_CASE("memory fills only when the bonus machinery is on") {
  const auto corpus = corpus_with_pseudo_gold(10, 29);
  TrainConfig cfg;
  cfg.rl_epochs = 2;
  cfg.rl_batch = 4;
  cfg.seed = 31;
  const RewardConfig rcfg;

  Policy pg_policy(vocab_of(corpus.examples), tiny_config(), 15);
  TrainConfig pg_cfg = cfg;
  pg_cfg.use_crb_memory = false;
  const RlResult pg = train_rl(pg_policy, corpus.examples, corpus.kb, rcfg, pg_cfg);
  CHECK(pg.memory.question_count() == 0);
}

TEST_CASE("memory state depends only on seed and data order") {
  const auto corpus = corpus_with_pseudo_gold(10, 37);
  TrainConfig cfg;
  cfg.rl_epochs = 2;
  cfg.rl_batch = 4;
  cfg.seed = 41;
  const RewardConfig rcfg;

  const auto path_a = std::filesystem::temp_directory_path() / "kbqa_mem_a.json";
  const auto path_b = std::filesystem::temp_directory_path() / "kbqa_mem_b.json";
  Policy a(vocab_of(corpus.examples), tiny_config(), 17);
  Policy b(vocab_of(corpus.examples), tiny_config(), 17);
  train_rl(a, corpus.examples, corpus.kb, rcfg, cfg).memory.save(path_a.string());
  train_rl(b, corpus.examples, corpus.kb, rcfg, cfg).memory.save(path_b.string());
  const std::string ma = slurp(path_a), mb = slurp(path_b);
  std::filesystem::remove(path_a);
  std::filesystem::remove(path_b);
  CHECK(ma == mb);
}

TEST_CASE("checkpoints are written per epoch when asked") {
  const auto corpus = corpus_with_pseudo_gold(6, 43);
  Policy policy(vocab_of(corpus.examples), tiny_config(), 19);
  const auto dir = std::filesystem::temp_directory_path() / "kbqa_ckpt_dir";
  std::filesystem::remove_all(dir);

  TrainConfig cfg;
  cfg.pretrain_epochs = 2;
  cfg.rl_epochs = 2;
  cfg.rl_batch = 4;
  cfg.checkpoint_dir = dir.string();
  pretrain(policy, corpus.examples, cfg);
  train_rl(policy, corpus.examples, corpus.kb, RewardConfig{}, cfg);

  CHECK(std::filesystem::exists(dir / "pretrain_epoch_001.json"));
  CHECK(std::filesystem::exists(dir / "pretrain_epoch_002.json"));
  CHECK(std::filesystem::exists(dir / "rl_epoch_000.json"));
  CHECK(std::filesystem::exists(dir / "rl_epoch_001.json"));
  // A checkpoint is a loadable policy.
  const Policy reloaded = Policy::load((dir / "rl_epoch_001.json").string());
  CHECK(reloaded.input_vocab() == policy.input_vocab());
  std::filesystem::remove_all(dir);
}

TEST_CASE("adam optimizer stays deterministic and trains") {
  const auto corpus = corpus_with_pseudo_gold(8, 47);
  TrainConfig cfg;
  cfg.pretrain_epochs = 3;
  cfg.use_adam = true;
  cfg.pretrain_lr = 0.01;
  cfg.seed = 49;

  Policy a(vocab_of(corpus.examples), tiny_config(), 21);
  Policy b(vocab_of(corpus.examples), tiny_config(), 21);
  const PretrainResult ra = pretrain(a, corpus.examples, cfg);
  const PretrainResult rb = pretrain(b, corpus.examples, cfg);
  CHECK(ra.epoch_loss.back() == rb.epoch_loss.back());
  CHECK(ra.epoch_loss.back() < ra.initial_loss);
}
