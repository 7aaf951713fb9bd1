#pragma once

#include <random>
#include <vector>

#include "corect/model.hpp"
#include "corect/workbench.hpp"

namespace corect::testing {

inline ModelConfig small_config(int L = 3) {
  ModelConfig c;
  c.L = L;
  c.d = 16;
  c.H = 2;
  c.d_ff = 24;
  c.vocab = 12;
  c.max_seq = 8;
  return c;
}

inline std::vector<TokenId> random_tokens(std::mt19937_64& rng, const ModelConfig& c, std::size_t n) {
  std::uniform_int_distribution<int> pick(0, c.vocab - 1);
  std::vector<TokenId> t(n);
  for (auto& x : t) x = pick(rng);
  return t;
}

inline Vec random_vec(std::mt19937_64& rng, std::size_t n, double sd = 1.0) {
  std::normal_distribution<double> normal(0.0, sd);
  Vec v(n);
  for (double& x : v) x = normal(rng);
  return v;
}

/// Default-sized implanted model shared by the slower tests.
inline const ConflictSet& conflict_set() {
  static const ConflictSet set = generate_conflict_set(ModelConfig{}, 48, 1, 1.0);
  return set;
}

inline const ConflictSet& agreeing_set() {
  static const ConflictSet set = generate_conflict_set(ModelConfig{}, 48, 1, 0.0);
  return set;
}

inline Vec row_of(const ModelWeights& w, TokenId t) {
  const auto r = w.unembed(t);
  return Vec(r.begin(), r.end());
}

}  // namespace corect::testing
