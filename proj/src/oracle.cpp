#include "corect/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "json.hpp"

#include "corect/errors.hpp"

namespace corect {

Mat second_moment(const std::vector<Vec>& keys, double ridge) {
  if (keys.empty()) throw ValidationError("second_moment: no samples");
  const std::size_t n = keys.front().size();
  Mat C(n, n);
  for (const Vec& m : keys) {
    if (m.size() != n) throw ValidationError("second_moment: keys differ in width");
    for (std::size_t i = 0; i < n; ++i) {
      if (m[i] != 0.0) axpy(m[i], m, C.row(i));
    }
  }
  for (double& v : C.values()) v /= static_cast<double>(keys.size());
  for (std::size_t i = 0; i < n; ++i) C(i, i) += ridge;
  return C;
}

Mat key_covariance(const ModelWeights& w, const std::vector<std::vector<TokenId>>& prompts, int layer, double ridge) {
  if (layer < 1 || layer > w.cfg.L) throw ValidationError("key_covariance: invalid layer");
  std::vector<Vec> keys;
  for (const auto& p : prompts) {
    const ForwardResult r = forward_traced(w, p);
    for (const Vec& m : r.trace.m[static_cast<std::size_t>(layer)]) keys.push_back(m);
  }
  if (keys.empty()) throw ValidationError("key_covariance: no samples");
  return second_moment(keys, ridge);
}

VStar compute_v_star(const ModelWeights& w, const ResidualTrace& trace, int layer, TokenId t_star, double gamma_max,
                     double tol) {
  if (t_star < 0 || t_star >= w.cfg.vocab) throw ValidationError("compute_v_star: target out of range");
  if (layer < 1 || layer > w.cfg.L) throw ValidationError("compute_v_star: invalid layer");
  const Vec& u = trace.u_clean[static_cast<std::size_t>(layer)][trace.last()];
  const auto wt = w.unembed(t_star);
  const Vec dir = scaled(wt, 1.0 / norm(wt));
  auto wins = [&](double gamma) {
    HookSet hooks;
    hooks.ffn_patches[layer] = scaled(dir, gamma);
    return argmax(forward_traced(w, trace.tokens, hooks).logits) == t_star;
  };
  double gamma = 0.0;
  if (!wins(0.0)) {
    if (!wins(gamma_max)) {
      throw NumericError("compute_v_star: no gamma in (0, " + std::to_string(gamma_max) + "] makes token " +
                         std::to_string(t_star) + " the argmax");
    }
    double lo = 0.0;
    double hi = gamma_max;
    while (hi - lo > tol) {
      const double mid = 0.5 * (lo + hi);
      (wins(mid) ? hi : lo) = mid;
    }
    gamma = hi;
  }
  Vec v = u;
  axpy(gamma, dir, v);
  return {std::move(v), gamma};
}

Mat rome_update(const Mat& W0, std::span<const double> m_star, std::span<const double> v_star, const Mat& C) {
  if (W0.cols() != m_star.size() || W0.rows() != v_star.size() || C.rows() != m_star.size()) {
    throw ValidationError("rome_update: shape mismatch");
  }
  const Vec x = solve(C, m_star);
  const double denom = dot(m_star, x);
  if (!(denom > 0.0)) throw NumericError("rome_update: m*^T C^-1 m* is not positive");
  const Vec resid = sub(v_star, matvec(W0, m_star));
  return outer(scaled(resid, 1.0 / denom), x);
}

RomeEdit rome_edit(const ModelWeights& w, std::span<const TokenId> tokens, int layer, TokenId t_star,
                   const std::vector<std::vector<TokenId>>& covariance_prompts) {
  const ForwardResult base = forward_traced(w, tokens);
  RomeEdit e;
  e.layer = layer;
  e.m_star = base.trace.m[static_cast<std::size_t>(layer)][base.trace.last()];
  const VStar vs = compute_v_star(w, base.trace, layer, t_star);
  e.v_star = vs.v;
  e.gamma = vs.gamma;
  e.C = key_covariance(w, covariance_prompts, layer);
  e.delta_W = rome_update(w.layer(layer).W_down, e.m_star, e.v_star, e.C);
  return e;
}

ModelWeights apply_edit(const ModelWeights& w, const RomeEdit& edit) {
  ModelWeights out = w;
  Mat& W = out.layer(edit.layer).W_down;
  if (W.rows() != edit.delta_W.rows() || W.cols() != edit.delta_W.cols()) {
    throw ValidationError("apply_edit: delta_W shape mismatch");
  }
  for (std::size_t i = 0; i < W.values().size(); ++i) W.values()[i] += edit.delta_W.values()[i];
  return out;
}

double default_noise_sigma(const ModelWeights& w) {
  const auto& v = w.W_E.values();
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double var = 0.0;
  for (double x : v) var += (x - mean) * (x - mean);
  return 3.0 * std::sqrt(var / static_cast<double>(v.size()));
}

CausalTraceReport causal_trace(const ModelWeights& w, std::span<const TokenId> tokens, std::size_t span_begin,
                               std::size_t span_end, TokenId t_star, double sigma, int n_noise_samples,
                               std::uint64_t seed) {
  if (span_begin >= span_end || span_end > tokens.size()) throw ValidationError("causal_trace: empty or invalid span");
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw ValidationError("causal_trace: sigma must be >= 0");
  if (n_noise_samples < 1) throw ValidationError("causal_trace: need at least one noise sample");
  if (t_star < 0 || t_star >= w.cfg.vocab) throw ValidationError("causal_trace: target out of range");
  const int L = w.cfg.L;
  const auto d = static_cast<std::size_t>(w.cfg.d);
  const auto t = static_cast<std::size_t>(t_star);

  CausalTraceReport rep;
  rep.sigma = sigma;
  const ForwardResult clean = forward_traced(w, tokens);
  rep.p_clean = softmax(clean.logits)[t];

  std::vector<EmbedNoise> noises;
  for (int i = 0; i < n_noise_samples; ++i) {
    const std::uint64_t s = seed + static_cast<std::uint64_t>(i);
    rep.seeds.push_back(s);
    std::mt19937_64 rng(s);
    std::normal_distribution<double> normal(0.0, 1.0);
    EmbedNoise en;
    en.begin = span_begin;
    for (std::size_t j = span_begin; j < span_end; ++j) {
      Vec e(d);
      for (double& x : e) x = sigma * normal(rng);
      en.noise.push_back(std::move(e));
    }
    noises.push_back(std::move(en));
  }
  auto mean_prob = [&](int restore_layer) {
    double total = 0.0;
    for (const EmbedNoise& en : noises) {
      HookSet hooks;
      hooks.embed_noise = en;
      if (restore_layer >= 0) {
        for (std::size_t j = span_begin; j < span_end; ++j) {
          hooks.restore_overrides[{restore_layer, j}] = clean.trace.h[static_cast<std::size_t>(restore_layer)][j];
        }
      }
      total += softmax(forward_traced(w, tokens, hooks).logits)[t];
    }
    return total / static_cast<double>(noises.size());
  };
  rep.p_corr = mean_prob(-1);
  for (int l = 1; l <= L; ++l) rep.aie.push_back(mean_prob(l - 1) - rep.p_corr);

  const double best = *std::max_element(rep.aie.begin(), rep.aie.end());
  for (int l = L; l >= 1; --l) {
    if (rep.aie[static_cast<std::size_t>(l - 1)] >= best - 1e-9) {
      rep.l_rome = l;
      break;
    }
  }
  for (int l = 1; l <= L; ++l)
    if (rep.aie[static_cast<std::size_t>(l - 1)] < 0.0) rep.l_star.push_back(l);
  return rep;
}

std::string to_json(const CausalTraceReport& r) {
  nlohmann::ordered_json j;
  j["aie"] = r.aie;
  j["p_clean"] = r.p_clean;
  j["p_corr"] = r.p_corr;
  j["sigma"] = r.sigma;
  j["l_rome"] = r.l_rome;
  j["l_star"] = r.l_star;
  j["seeds"] = r.seeds;
  return j.dump();
}

double localization_recall(const std::vector<int>& L_supp, const std::vector<int>& l_star) {
  if (l_star.empty()) return 1.0;
  const std::set<int> supp(L_supp.begin(), L_supp.end());
  const std::set<int> star(l_star.begin(), l_star.end());
  std::size_t hit = 0;
  for (int l : star) hit += supp.count(l);
  return static_cast<double>(hit) / static_cast<double>(star.size());
}

double pooled_recall(const std::vector<std::vector<int>>& L_supp, const std::vector<std::vector<int>>& l_star) {
  if (L_supp.size() != l_star.size()) throw ValidationError("pooled_recall: batch sizes differ");
  std::size_t hit = 0;
  std::size_t total = 0;
  for (std::size_t i = 0; i < l_star.size(); ++i) {
    const std::set<int> supp(L_supp[i].begin(), L_supp[i].end());
    const std::set<int> star(l_star[i].begin(), l_star[i].end());
    for (int l : star) hit += supp.count(l);
    total += star.size();
  }
  return total == 0 ? 1.0 : static_cast<double>(hit) / static_cast<double>(total);
}

}  // namespace corect
