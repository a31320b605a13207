#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace kbqa {

// Dense integer ids for KB symbols. Entities, predicates and types share one
// id space; the distinction is carried by the argument slot they occupy.
using SymbolId = std::int32_t;
using EntityId = SymbolId;
using PredicateId = SymbolId;
using TypeId = SymbolId;

inline constexpr SymbolId kInvalidSymbol = -1;

// Bijective label<->id map. Ids are dense and assigned in first-seen order,
// so two runs over the same input produce identical numbering.
class SymbolTable {
public:
  SymbolId intern(std::string_view label) {
    auto it = index_.find(std::string(label));
    if (it != index_.end()) return it->second;
    const SymbolId id = static_cast<SymbolId>(labels_.size());
    labels_.emplace_back(label);
    index_.emplace(labels_.back(), id);
    return id;
  }

  std::optional<SymbolId> lookup(std::string_view label) const {
    auto it = index_.find(std::string(label));
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  const std::string& label(SymbolId id) const { return labels_.at(static_cast<std::size_t>(id)); }

  std::size_t size() const { return labels_.size(); }

  bool operator==(const SymbolTable& other) const { return labels_ == other.labels_; }

private:
  std::vector<std::string> labels_;
  std::unordered_map<std::string, SymbolId> index_;
};

}  // namespace kbqa
