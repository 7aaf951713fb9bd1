#include "corect/baselines.hpp"

#include <algorithm>
#include <cmath>

#include "corect/errors.hpp"

namespace corect {

namespace {

Vec log_probs(const ProbDist& p) {
  Vec out(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    out[i] = p[i] > 0.0 ? std::log(p[i]) : -std::numeric_limits<double>::infinity();
  }
  return out;
}

ProbDist contrast(std::span<const double> lp, std::span<const double> lq, double alpha) {
  if (lp.size() != lq.size()) throw ValidationError("contrast: size mismatch");
  Vec weights(lp.size());
  for (std::size_t i = 0; i < lp.size(); ++i) {
    const double q = std::max(lq[i], kLogProbFloor);
    weights[i] = alpha == 0.0 ? lp[i] : (1.0 + alpha) * lp[i] - alpha * q;
  }
  return normalize_log_weights(weights);
}

double cross_entropy(const ProbDist& p, std::span<const double> lq) {
  double h = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i)
    if (p[i] > 0.0) h -= p[i] * std::max(lq[i], kLogProbFloor);
  return h;
}

}  // namespace

std::string to_string(BaselineMethod m) {
  switch (m) {
    case BaselineMethod::greedy: return "greedy";
    case BaselineMethod::cad: return "cad";
    case BaselineMethod::adacad: return "adacad";
    case BaselineMethod::coiecd: return "coiecd";
  }
  return "unknown";
}

BaselineMethod baseline_from_string(const std::string& s) {
  if (s == "greedy") return BaselineMethod::greedy;
  if (s == "cad") return BaselineMethod::cad;
  if (s == "adacad") return BaselineMethod::adacad;
  if (s == "coiecd") return BaselineMethod::coiecd;
  throw ValidationError("unknown baseline method '" + s + "'");
}

void BaselineConfig::validate() const {
  if (!(cad_alpha >= 0.0) || !std::isfinite(cad_alpha)) throw ValidationError("BaselineConfig: cad_alpha must be >= 0");
  if (!std::isfinite(coiecd_lambda)) throw ValidationError("BaselineConfig: coiecd_lambda must be finite");
}

ProbDist cad_step(const ProbDist& p_ctx, const ProbDist& p_null, double alpha) {
  if (!(alpha >= 0.0)) throw ValidationError("cad_step: alpha must be >= 0");
  if (p_ctx.size() != p_null.size()) throw ValidationError("cad_step: size mismatch");
  if (alpha == 0.0) return p_ctx;
  return contrast(log_probs(p_ctx), log_probs(p_null), alpha);
}

AdaptiveStep adacad_step(const ProbDist& p_ctx, const ProbDist& p_null) {
  const double a = std::clamp(jensen_shannon(p_ctx, p_null) / std::log(2.0), 0.0, 1.0);
  if (a == 0.0) return {p_ctx, 0.0};
  return {contrast(log_probs(p_ctx), log_probs(p_null), a), a};
}

BandStep coiecd_step(const ProbDist& p_ctx, const ProbDist& p_null, double lambda, double cad_alpha) {
  if (p_ctx.size() != p_null.size()) throw ValidationError("coiecd_step: size mismatch");
  BandStep out;
  const Vec lq = log_probs(p_null);
  out.cross_entropy = cross_entropy(p_ctx, lq);
  out.self_entropy = entropy(p_ctx);
  out.conflict = out.cross_entropy > (1.0 + lambda) * out.self_entropy;
  out.dist = out.conflict && cad_alpha != 0.0 ? contrast(log_probs(p_ctx), lq, cad_alpha) : p_ctx;
  return out;
}

std::vector<TokenId> decode_greedy(const ModelWeights& w, std::span<const TokenId> prompt, const DecodeOptions& opts) {
  if (opts.max_new < 1) throw ValidationError("decode_greedy: max_new must be at least 1");
  std::vector<TokenId> seq(prompt.begin(), prompt.end());
  std::vector<TokenId> out;
  ResidualTrace cache;
  bool have_cache = false;
  for (int step = 0; step < opts.max_new; ++step) {
    ForwardResult r = forward_traced(w, seq, {}, opts.kv_cache && have_cache ? &cache : nullptr);
    out.push_back(argmax(r.logits));
    if (opts.stop_at_eos && out.back() == kEos) break;
    if (seq.size() + 1 > static_cast<std::size_t>(w.cfg.max_seq)) break;
    cache = std::move(r.trace);
    have_cache = true;
    seq.push_back(out.back());
  }
  return out;
}

DecodeOutput decode_baseline(const ModelWeights& w, const ConflictPrompt& prompt, const BaselineConfig& cfg,
                             const DecodeOptions& opts) {
  if (opts.max_new < 1) throw ValidationError("decode_baseline: max_new must be at least 1");
  cfg.validate();
  prompt.validate();
  std::vector<TokenId> ctx = prompt.ctx_tokens;
  std::vector<TokenId> null = prompt.null_tokens;
  DecodeOutput out;
  for (int step = 0; step < opts.max_new; ++step) {
    StepDiagnostics diag;
    diag.step = step;
    diag.method = to_string(cfg.method);
    const Vec zc = forward_traced(w, ctx).logits;
    if (cfg.method == BaselineMethod::greedy) {
      diag.emitted_id = argmax(zc);
    } else {
      const Vec lp = log_softmax(zc);
      const Vec lq = log_softmax(forward_traced(w, null).logits);
      ProbDist dist;
      switch (cfg.method) {
        case BaselineMethod::cad:
          diag.alpha = cfg.cad_alpha;
          dist = contrast(lp, lq, cfg.cad_alpha);
          break;
        case BaselineMethod::adacad: {
          const ProbDist pc = softmax(zc);
          const ProbDist pn = normalize_log_weights(lq);
          diag.alpha = std::clamp(jensen_shannon(pc, pn) / std::log(2.0), 0.0, 1.0);
          dist = contrast(lp, lq, diag.alpha);
          break;
        }
        case BaselineMethod::coiecd: {
          const ProbDist pc = softmax(zc);
          const bool conflict = cross_entropy(pc, lq) > (1.0 + cfg.coiecd_lambda) * entropy(pc);
          diag.conflict = conflict;
          diag.alpha = conflict ? cfg.cad_alpha : 0.0;
          dist = contrast(lp, lq, diag.alpha);
          break;
        }
        case BaselineMethod::greedy:
          break;
      }
      diag.emitted_id = argmax(dist.probs());
    }
    diag.target_id = diag.emitted_id;
    out.tokens.push_back(diag.emitted_id);
    out.steps.push_back(std::move(diag));
    if (opts.stop_at_eos && out.tokens.back() == kEos) break;
    if (ctx.size() + 1 > static_cast<std::size_t>(w.cfg.max_seq)) break;
    ctx.push_back(out.tokens.back());
    null.push_back(out.tokens.back());
  }
  return out;
}

}  // namespace corect
