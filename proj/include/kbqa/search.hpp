#pragma once

#include <deque>
#include <string>
#include <unordered_set>
#include <vector>

#include "kbqa/actions.hpp"
#include "kbqa/executor.hpp"
#include "kbqa/reward.hpp"

namespace kbqa {

struct SearchOptions {
  int n_max = 5;    // program length bound, EOQ included
  int limit = 20;   // maximum returned programs
  ExecutorConfig exec;
  RewardConfig reward;
};

// Every instantiation of A1..A16 over the question's own masks, in operator
// order with argument indexes ascending. This fixed order makes the search
// deterministic and is shared with the enumeration reference in the tests.
inline std::vector<Action> candidate_actions(const MaskTable& table) {
  std::vector<MaskToken> entities, predicates, types, numbers;
  for (const auto& [index, _] : table.entity_map)
    entities.push_back(MaskToken{MaskKind::Entity, index});
  for (const auto& [index, _] : table.predicate_map)
    predicates.push_back(MaskToken{MaskKind::Predicate, index});
  for (const auto& [index, _] : table.type_map) types.push_back(MaskToken{MaskKind::Type, index});
  for (const auto& [index, _] : table.number_map)
    numbers.push_back(MaskToken{MaskKind::Entity, index});

  auto pool = [&](SlotKind slot) -> const std::vector<MaskToken>& {
    switch (slot) {
      case SlotKind::Entity: return entities;
      case SlotKind::Predicate: return predicates;
      case SlotKind::Type: return types;
      case SlotKind::Number: return numbers;
    }
    return entities;
  };

  std::vector<Action> out;
  for (int i = 0; i < kNumOperators; ++i) {
    const auto op = static_cast<Operator>(i);
    if (op == Operator::EOQ) continue;
    const auto& slots = slots_of(op);
    std::vector<std::size_t> cursor(slots.size(), 0);
    bool viable = true;
    for (SlotKind slot : slots)
      if (pool(slot).empty()) viable = false;
    if (!viable) continue;
    while (true) {
      Action a{op, {}};
      for (std::size_t s = 0; s < slots.size(); ++s) a.args.push_back(pool(slots[s])[cursor[s]]);
      out.push_back(std::move(a));
      if (slots.empty()) break;
      std::size_t s = slots.size();
      while (s > 0) {
        --s;
        if (++cursor[s] < pool(slots[s]).size()) break;
        cursor[s] = 0;
        if (s == 0) goto done_op;
      }
      continue;
    done_op:
      break;
    }
  }
  return out;
}

inline bool skip_as_first(Operator op) {
  return op == Operator::Count || op == Operator::Bool || op == Operator::GetKeys;
}

// Breadth-first search for programs whose execution earns full adaptive
// reward against the gold answer. Shorter programs come first; pruning drops
// semantically idle actions and duplicate dictionary states.
inline std::vector<ActionSequence> bfs_search(const MaskTable& table, const KnowledgeBase& kb,
                                              const Answer& gold, const SearchOptions& opt = {}) {
  std::vector<ActionSequence> results;
  if (opt.n_max < 1 || opt.limit < 1) return results;

  std::vector<std::pair<Action, GroundedAction>> candidates;
  for (Action& a : candidate_actions(table)) {
    ActionSequence one{{a}};
    GroundedAction g = unmask(one, table)[0];
    candidates.emplace_back(std::move(a), g);
  }

  struct State {
    std::vector<Action> prefix;
    WorkingDict d;
  };

  std::deque<State> queue;
  queue.push_back(State{});
  std::unordered_set<std::string> seen;
  seen.insert(WorkingDict{}.canonical_key());

  const auto gold_hit = [&](const WorkingDict& d) {
    try {
      Answer ans = answer_of(d);
      return arf(ans, gold, opt.reward) >= 1.0;
    } catch (const SemanticError&) {
      return false;
    }
  };

  while (!queue.empty()) {
    State state = std::move(queue.front());
    queue.pop_front();

    if (!state.prefix.empty() && gold_hit(state.d)) {
      ActionSequence seq{state.prefix};
      seq.actions.push_back(Action{Operator::EOQ, {}});
      results.push_back(std::move(seq));
      if (static_cast<int>(results.size()) >= opt.limit) return results;
    }

    if (static_cast<int>(state.prefix.size()) + 1 >= opt.n_max) continue;

    const std::string parent_key = state.d.canonical_key();
    for (const auto& [action, grounded] : candidates) {
      if (state.prefix.empty() && skip_as_first(action.op)) continue;
      WorkingDict next = state.d;
      try {
        step(grounded, next, kb, opt.exec);
      } catch (const SemanticError&) {
        continue;
      }
      std::string key = next.canonical_key();
      if (key == parent_key) continue;  // idle action
      if (!seen.insert(std::move(key)).second) continue;
      State child;
      child.prefix = state.prefix;
      child.prefix.push_back(action);
      child.d = std::move(next);
      queue.push_back(std::move(child));
    }
  }
  return results;
}

}  // namespace kbqa
