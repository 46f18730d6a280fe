#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <optional>
#include <vector>

#include "dts/combination.hpp"
#include "dts/error.hpp"

namespace dts {

enum class ProbMode : std::uint8_t { kWindowed, kCumulative };

/// Empirical chance that group 2's teacher is more confident than group 1's
/// student on a target image: mean of [gamma2_teacher > gamma1_student].
///
/// The full indicator history is retained as an audit log; the reported value
/// is either the mean over the last `window` indicators or over all of them.
class ProbEstimator {
 public:
  explicit ProbEstimator(ProbMode mode = ProbMode::kWindowed, std::size_t window = 4000)
      : mode_(mode), window_(window) {
    if (mode == ProbMode::kWindowed && window == 0) throw ConfigError("prob window must be positive");
  }

  void record(float gamma2_teacher, float gamma1_student) {
    const bool win = gamma2_teacher > gamma1_student;
    history_.push_back(win ? 1 : 0);
    ++count_;
    if (win) ++wins_;
    recent_.push_back(win);
    if (win) ++recent_wins_;
    if (mode_ == ProbMode::kWindowed && recent_.size() > window_) {
      if (recent_.front()) --recent_wins_;
      recent_.pop_front();
    }
  }

  std::size_t count() const noexcept { return count_; }
  std::size_t wins() const noexcept { return wins_; }
  ProbMode mode() const noexcept { return mode_; }
  std::size_t window() const noexcept { return window_; }
  const std::vector<std::uint8_t>& indicators() const noexcept { return history_; }

  /// Absent until at least one comparison has been recorded.
  std::optional<double> value() const {
    if (count_ == 0) return std::nullopt;
    if (mode_ == ProbMode::kCumulative) return static_cast<double>(wins_) / static_cast<double>(count_);
    return static_cast<double>(recent_wins_) / static_cast<double>(recent_.size());
  }

 private:
  ProbMode mode_;
  std::size_t window_;
  std::vector<std::uint8_t> history_;
  std::deque<bool> recent_;
  std::size_t count_ = 0;
  std::size_t wins_ = 0;
  std::size_t recent_wins_ = 0;
};

inline std::optional<double> prob_value(const ProbEstimator& est) { return est.value(); }

/// Setting B only when its Prob is strictly higher; ties keep Setting A.
inline DataCombination select_setting(double prob_a, double prob_b) {
  return prob_b > prob_a ? DataCombination::setting_b() : DataCombination::setting_a();
}

}  // namespace dts
