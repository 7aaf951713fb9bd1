#pragma once

// Ground truth for layer localization: rank-one FFN editing with a covariance-weighted
// closed form, and causal tracing by corrupting subject embeddings and restoring clean
// residual states one layer at a time.

#include <cstdint>
#include <string>
#include <vector>

#include "corect/model.hpp"

namespace corect {

inline constexpr double kCovarianceRidge = 1e-4;

/// mean of k k^T over `keys`, plus ridge * I. Throws ValidationError when `keys` is empty.
Mat second_moment(const std::vector<Vec>& keys, double ridge = kCovarianceRidge);

/// E[m m^T] of post-activation keys at `layer`, over every position of every prompt,
/// plus ridge * I.
Mat key_covariance(const ModelWeights& w, const std::vector<std::vector<TokenId>>& prompts, int layer,
                   double ridge = kCovarianceRidge);

struct VStar {
  Vec v;
  double gamma = 0.0;
};

/// v* = W0 m* + gamma * w_t / |w_t| at the last position of `trace`, with gamma the smallest
/// value in [0, gamma_max] (to tolerance `tol`) that makes t_star the argmax once the FFN
/// output at `layer` is replaced by v*. Throws NumericError if gamma_max is not enough.
VStar compute_v_star(const ModelWeights& w, const ResidualTrace& trace, int layer, TokenId t_star,
                     double gamma_max = 100.0, double tol = 1e-3);

/// (v* - W0 m*) (C^-1 m*)^T / (m*^T C^-1 m*), via a linear solve.
Mat rome_update(const Mat& W0, std::span<const double> m_star, std::span<const double> v_star, const Mat& C);

struct RomeEdit {
  int layer = 0;
  Vec m_star;
  Vec v_star;
  double gamma = 0.0;
  Mat C;
  Mat delta_W;
};

/// Full edit making `tokens` produce t_star through the FFN at `layer`.
RomeEdit rome_edit(const ModelWeights& w, std::span<const TokenId> tokens, int layer, TokenId t_star,
                   const std::vector<std::vector<TokenId>>& covariance_prompts);

ModelWeights apply_edit(const ModelWeights& w, const RomeEdit& edit);

struct CausalTraceReport {
  std::vector<double> aie;  // index l-1 holds layer l
  double p_clean = 0.0;
  double p_corr = 0.0;
  double sigma = 0.0;
  int l_rome = 0;
  std::vector<int> l_star;
  std::vector<std::uint64_t> seeds;
};

/// 3 x the standard deviation of the embedding matrix entries.
double default_noise_sigma(const ModelWeights& w);

/// AIE_l restores, at every subject position, the clean residual state entering layer l.
/// l_rome is the argmax of AIE, ties within 1e-9 going to the later layer.
CausalTraceReport causal_trace(const ModelWeights& w, std::span<const TokenId> tokens, std::size_t span_begin,
                               std::size_t span_end, TokenId t_star, double sigma, int n_noise_samples = 5,
                               std::uint64_t seed = 0);

std::string to_json(const CausalTraceReport& r);

/// |L_supp & l_star| / |l_star|, or 1 when l_star is empty.
double localization_recall(const std::vector<int>& L_supp, const std::vector<int>& l_star);

/// Sum of intersections over sum of |l_star| across a batch; 1 when every l_star is empty.
double pooled_recall(const std::vector<std::vector<int>>& L_supp, const std::vector<std::vector<int>>& l_star);

}  // namespace corect
