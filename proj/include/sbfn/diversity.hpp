#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "sbfn/errors.hpp"

namespace sbfn {

enum class TieBreak { lowest_index };

struct DiversityConfig {
  double epsilon = 0.0;
  TieBreak tie_break = TieBreak::lowest_index;

  void validate() const {
    if (!(epsilon >= 0.0 && epsilon < 1.0)) throw ConfigError("epsilon must lie in [0, 1)");
  }
};

struct DiversityWeights {
  std::vector<double> delta;
  std::size_t winner = 0;
};

// Relaxed winner-takes-all weights: the predictor with the smallest loss gets
// 1 - epsilon, every other predictor gets epsilon / (M - 1). A single
// predictor always gets weight 1.
inline DiversityWeights wta_weights(std::span<const double> losses, const DiversityConfig& config) {
  config.validate();
  const std::size_t m = losses.size();
  if (m == 0) throw ShapeError("wta_weights: empty loss vector");
  std::size_t winner = 0;
  for (std::size_t j = 0; j < m; ++j) {
    if (std::isnan(losses[j])) throw NumericError("wta_weights: loss of predictor " + std::to_string(j) + " is NaN");
    if (losses[j] < losses[winner]) winner = j;
  }
  DiversityWeights w;
  w.winner = winner;
  if (m == 1) {
    w.delta = {1.0};
    return w;
  }
  w.delta.assign(m, config.epsilon / static_cast<double>(m - 1));
  w.delta[winner] = 1.0 - config.epsilon;
  return w;
}

}  // namespace sbfn
