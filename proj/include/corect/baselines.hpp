#pragma once

// Output-distribution baselines sharing the context/null pass machinery:
// greedy, context-aware decoding, its adaptive variant and a cross-entropy band rule.

#include <string>
#include <vector>

#include "corect/corect.hpp"

namespace corect {

enum class BaselineMethod { greedy, cad, adacad, coiecd };

std::string to_string(BaselineMethod m);
BaselineMethod baseline_from_string(const std::string& s);

struct BaselineConfig {
  BaselineMethod method = BaselineMethod::greedy;
  double cad_alpha = 1.0;
  double coiecd_lambda = 0.25;
  void validate() const;
};

/// Floor applied to log P_null inside every contrastive formula.
inline constexpr double kLogProbFloor = -27.631021115928547;  // ln(1e-12)

/// normalize exp((1+alpha) log p - alpha log q)
ProbDist cad_step(const ProbDist& p_ctx, const ProbDist& p_null, double alpha);

struct AdaptiveStep {
  ProbDist dist;
  double alpha_t = 0.0;
};

/// cad_step with alpha_t = JSD(p_ctx, p_null) / ln 2, clamped to [0, 1].
AdaptiveStep adacad_step(const ProbDist& p_ctx, const ProbDist& p_null);

struct BandStep {
  ProbDist dist;
  bool conflict = false;
  double cross_entropy = 0.0;  // H(p_ctx, p_null)
  double self_entropy = 0.0;   // H(p_ctx)
};

/// Flags a conflict when H(p_ctx, p_null) > (1 + lambda) H(p_ctx) and then applies cad_step;
/// otherwise returns p_ctx.
BandStep coiecd_step(const ProbDist& p_ctx, const ProbDist& p_null, double lambda, double cad_alpha);

std::vector<TokenId> decode_greedy(const ModelWeights& w, std::span<const TokenId> prompt,
                                   const DecodeOptions& opts = {});

DecodeOutput decode_baseline(const ModelWeights& w, const ConflictPrompt& prompt, const BaselineConfig& cfg,
                             const DecodeOptions& opts = {});

}  // namespace corect
