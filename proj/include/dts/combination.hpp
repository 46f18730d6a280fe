#pragma once

// Batch recipes over {S, <S,T>, <T,T>} and the pseudo-label routing between
// the two teacher-student groups.

#include <algorithm>
#include <string>
#include <string_view>
#include <vector>

#include "dts/error.hpp"
#include "dts/mixing.hpp"

namespace dts {

class DataCombination {
 public:
  static DataCombination group1() { return DataCombination({Domain::kSource, Domain::kSourceTarget}); }
  static DataCombination setting_a() { return DataCombination({Domain::kSource, Domain::kTargetTarget}); }
  static DataCombination setting_b() { return DataCombination({Domain::kSourceTarget, Domain::kTargetTarget}); }
  static DataCombination tt_only() { return DataCombination({Domain::kTargetTarget}); }
  static DataCombination st_only() { return DataCombination({Domain::kSourceTarget}); }
  static DataCombination source_only() { return DataCombination({Domain::kSource}); }

  static DataCombination pair(Domain a, Domain b) {
    if (a == b) throw ConfigError("a data combination pair needs two different domains");
    return DataCombination({a, b});
  }
  static DataCombination single(Domain a) { return DataCombination({a}); }

  /// Accepts the preset names used in config files and on the command line.
  static DataCombination parse(std::string_view name) {
    if (name == "group1" || name == "group1-only") return group1();
    if (name == "A" || name == "setting-a") return setting_a();
    if (name == "B" || name == "setting-b") return setting_b();
    if (name == "tt-only") return tt_only();
    if (name == "st-only") return st_only();
    if (name == "s-only") return source_only();
    // explicit form, e.g. "S+TT"
    std::vector<Domain> parts;
    for (std::size_t start = 0; start <= name.size();) {
      const std::size_t end = std::min(name.find('+', start), name.size());
      const std::string_view tok = name.substr(start, end - start);
      if (tok == "S") parts.push_back(Domain::kSource);
      else if (tok == "ST") parts.push_back(Domain::kSourceTarget);
      else if (tok == "TT") parts.push_back(Domain::kTargetTarget);
      else {
        parts.clear();
        break;
      }
      start = end + 1;
    }
    if (parts.size() == 1) return single(parts[0]);
    if (parts.size() == 2 && parts[0] != parts[1]) return pair(parts[0], parts[1]);
    throw ConfigError("unknown data combination '" + std::string(name) +
                      "' (expected group1, A, B, tt-only, st-only, s-only or a '+'-joined pair of S, ST, TT)");
  }

  const std::vector<Domain>& domains() const noexcept { return domains_; }
  bool contains(Domain d) const {
    for (Domain x : domains_)
      if (x == d) return true;
    return false;
  }

  std::string name() const {
    if (*this == group1()) return "group1";
    if (*this == setting_a()) return "A";
    if (*this == setting_b()) return "B";
    if (*this == tt_only()) return "tt-only";
    if (*this == st_only()) return "st-only";
    if (*this == source_only()) return "s-only";
    std::string s;
    for (Domain d : domains_) s += (s.empty() ? "" : "+") + std::string(domain_tag(d));
    return s;
  }

  /// Target images consumed per batch for batch size k.
  int target_images(int k) const {
    int n = 0;
    for (Domain d : domains_) n += d == Domain::kSourceTarget ? k : d == Domain::kTargetTarget ? 2 * k : 0;
    return n;
  }

  friend bool operator==(const DataCombination&, const DataCombination&) = default;

 private:
  explicit DataCombination(std::vector<Domain> d) : domains_(std::move(d)) {}
  std::vector<Domain> domains_;
};

enum class ModelRole : std::uint8_t { kStudent, kTeacher };

struct ModelRef {
  int group = 1;
  ModelRole role = ModelRole::kTeacher;
  friend bool operator==(const ModelRef&, const ModelRef&) = default;

  std::string name() const {
    return std::string(role == ModelRole::kTeacher ? "teacher" : "student") + std::to_string(group);
  }
};

/// Which model from the other group supplements each group's own teacher.
/// Group 1 only ever reads group 2's iteration-t models; group 2 reads group
/// 1's models after they have been updated in the same iteration.
struct RoutingPolicy {
  ModelRole g1_external = ModelRole::kTeacher;
  ModelRole g2_external = ModelRole::kStudent;
  bool g1_uses_own = true;
  bool g2_uses_own = true;
  bool bidirectional = true;
  std::string name = "default";

  /// Rows of the pseudo-label source ablation grid (1-5); row 5 is the default.
  static RoutingPolicy table5_row(int row) {
    RoutingPolicy p;
    p.name = "table5-row" + std::to_string(row);
    switch (row) {
      case 1:
        p.g1_external = ModelRole::kTeacher;
        p.g2_external = ModelRole::kTeacher;
        p.g1_uses_own = p.g2_uses_own = false;
        break;
      case 2:
        p.g1_external = ModelRole::kStudent;
        p.g2_external = ModelRole::kTeacher;
        break;
      case 3:
        p.g1_external = ModelRole::kTeacher;
        p.g2_external = ModelRole::kTeacher;
        break;
      case 4:
        p.g1_external = ModelRole::kStudent;
        p.g2_external = ModelRole::kStudent;
        break;
      case 5: break;
      default: throw ConfigError("routing rows are numbered 1-5");
    }
    return p;
  }

  static RoutingPolicy parse(std::string_view name) {
    if (name == "default") return RoutingPolicy{};
    constexpr std::string_view prefix = "table5-row";
    if (name.substr(0, prefix.size()) == prefix && name.size() == prefix.size() + 1) {
      const char d = name.back();
      if (d >= '1' && d <= '5') return table5_row(d - '0');
    }
    throw ConfigError("unknown routing '" + std::string(name) + "' (expected default or table5-row1..5)");
  }
};

/// Pseudo-label source for every target image a group consumes in one batch.
///
/// Target slots are numbered in combination order: an <S,T> block takes k
/// slots, a <T,T> block 2k (sample i pairs slots base+i and base+k+i). With a
/// single group every slot uses the group's own teacher. Otherwise the first
/// half of the slots (rounded up) go to the own teacher and the rest to the
/// external model, except that group 2 under Setting B labels its <S,T> slots
/// with its own teacher and all <T,T> slots with the external model.
inline std::vector<ModelRef> route_slots(const DataCombination& combo, int k, int group, bool dual,
                                         const RoutingPolicy& policy) {
  if (group != 1 && group != 2) throw ConfigError("group id must be 1 or 2");
  const int n = combo.target_images(k);
  const ModelRef own{group, ModelRole::kTeacher};
  std::vector<ModelRef> slots(static_cast<std::size_t>(n), own);
  if (!dual) return slots;

  const ModelRef external = group == 1 ? ModelRef{2, policy.g1_external} : ModelRef{1, policy.g2_external};
  const bool uses_own = group == 1 ? policy.g1_uses_own : policy.g2_uses_own;
  if (group == 1 && !policy.bidirectional) return slots;
  if (!uses_own) {
    std::fill(slots.begin(), slots.end(), external);
    return slots;
  }
  if (group == 2 && combo == DataCombination::setting_b()) {
    for (int s = k; s < n; ++s) slots[static_cast<std::size_t>(s)] = external;
    return slots;
  }
  for (int s = (n + 1) / 2; s < n; ++s) slots[static_cast<std::size_t>(s)] = external;
  return slots;
}

}  // namespace dts
