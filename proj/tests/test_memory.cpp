#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <set>

#include "kbqa/memory.hpp"

using namespace kbqa;

namespace {

Trial trial(std::initializer_list<const char*> tokens, double reward) {
  Trial t;
  for (const char* tok : tokens) t.tokens.emplace_back(tok);
  t.adaptive_reward = reward;
  return t;
}

}  // namespace

TEST_CASE("admission threshold is strict") {
  MemoryBuffer buf(10, 1);
  CHECK(buf.maybe_admit("q1", trial({"Count", "EOQ"}, 0.9), 0.5));
  CHECK(buf.trials_for("q1").size() == 1);
  CHECK_FALSE(buf.maybe_admit("q1", trial({"GetKeys", "EOQ"}, 0.5), 0.5));
  CHECK_FALSE(buf.maybe_admit("q1", trial({"ArgMax", "EOQ"}, 0.2), 0.5));
  CHECK(buf.trials_for("q1").size() == 1);
  CHECK(buf.trials_for("unseen").empty());
}

TEST_CASE("duplicate token sequences are rejected") {
  MemoryBuffer buf(10, 1);
  CHECK(buf.maybe_admit("q1", trial({"Count", "EOQ"}, 0.9), 0.0));
  CHECK_FALSE(buf.maybe_admit("q1", trial({"Count", "EOQ"}, 0.95), 0.0));
  CHECK(buf.trials_for("q1").size() == 1);
  // Same tokens under another question are independent.
  CHECK(buf.maybe_admit("q2", trial({"Count", "EOQ"}, 0.9), 0.0));
}

TEST_CASE("capacity holds and replacement evicts exactly one") {
  const std::size_t capacity = 4;
  MemoryBuffer buf(capacity, 7);
  for (int i = 0; i < 10; ++i) {
    std::string tok = "t" + std::to_string(i);
    buf.maybe_admit("q", trial({tok.c_str(), "EOQ"}, 0.9), 0.0);
    CHECK(buf.trials_for("q").size() == std::min<std::size_t>(i + 1, capacity));
  }
  auto before = buf.trials_for("q");
  REQUIRE(buf.maybe_admit("q", trial({"fresh", "EOQ"}, 0.9), 0.0));
  auto after = buf.trials_for("q");
  CHECK(after.size() == capacity);
  int kept = 0;
  bool has_fresh = false;
  for (const Trial& t : after) {
    if (t.tokens[0] == "fresh") has_fresh = true;
    for (const Trial& b : before)
      if (b.tokens == t.tokens) ++kept;
  }
  CHECK(has_fresh);
  CHECK(kept == static_cast<int>(capacity) - 1);
}

TEST_CASE("replacement picks slots uniformly") {
  const std::size_t capacity = 5;
  const int admissions = 10000;
  std::vector<int> hits(capacity, 0);
  MemoryBuffer buf(capacity, 42);
  for (std::size_t i = 0; i < capacity; ++i) {
    std::string tok = "seed" + std::to_string(i);
    buf.maybe_admit("q", trial({tok.c_str()}, 0.9), 0.0);
  }
  std::vector<std::vector<std::string>> previous;
  for (const Trial& t : buf.trials_for("q")) previous.push_back(t.tokens);

  for (int i = 0; i < admissions; ++i) {
    std::string tok = "new" + std::to_string(i);
    REQUIRE(buf.maybe_admit("q", trial({tok.c_str()}, 0.9), 0.0));
    const auto& now = buf.trials_for("q");
    for (std::size_t slot = 0; slot < capacity; ++slot)
      if (now[slot].tokens != previous[slot]) {
        ++hits[slot];
        previous[slot] = now[slot].tokens;
      }
  }
  // Each slot should be hit ~1/c of the time; 3 sigma for a binomial.
  const double p = 1.0 / static_cast<double>(capacity);
  const double sigma = std::sqrt(admissions * p * (1.0 - p));
  for (std::size_t slot = 0; slot < capacity; ++slot) {
    INFO("slot " << slot << " hits " << hits[slot]);
    CHECK(std::abs(hits[slot] - admissions * p) <= 3.0 * sigma);
  }
}

TEST_CASE("admitted trials always come from the admitted set") {
  MemoryBuffer buf(3, 9);
  std::set<std::vector<std::string>> admitted;
  for (int i = 0; i < 50; ++i) {
    std::string tok = "p" + std::to_string(i);
    Trial t = trial({tok.c_str()}, 0.8);
    if (buf.maybe_admit("q", t, 0.1)) admitted.insert(t.tokens);
  }
  CHECK(buf.trials_for("q").size() == 3);
  for (const Trial& t : buf.trials_for("q")) CHECK(admitted.count(t.tokens) == 1);
}

TEST_CASE("snapshot round-trips") {
  MemoryBuffer buf(4, 3);
  Trial t1 = trial({"Select", "<E1>", "<P1>", "<T1>", "EOQ"}, 0.7);
  t1.log_prob = -1.25;
  buf.maybe_admit("q1", t1, 0.0);
  buf.maybe_admit("q2", trial({"Count", "EOQ"}, 0.9), 0.0);

  auto path = (std::filesystem::temp_directory_path() / "kbqa_memory.json").string();
  buf.save(path);
  MemoryBuffer restored(1, 0);
  restored.load(path);
  CHECK(restored.capacity_per_question() == 4);
  CHECK(restored.question_count() == 2);
  REQUIRE(restored.trials_for("q1").size() == 1);
  CHECK(restored.trials_for("q1")[0] == t1);
  CHECK(restored.trials_for("q2")[0].tokens == std::vector<std::string>{"Count", "EOQ"});
}

TEST_CASE("zero capacity is rejected") {
  CHECK_THROWS_AS(MemoryBuffer(0, 1), std::invalid_argument);
}
