#include "corect/corect.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "json.hpp"

#include "corect/errors.hpp"

namespace corect {

void SelectionConfig::validate(int L) const {
  if (k < 1 || k > L) throw ValidationError("SelectionConfig: k=" + std::to_string(k) + " outside 1.." + std::to_string(L));
  if (M < 1) throw ValidationError("SelectionConfig: M must be at least 1");
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ValidationError("SelectionConfig: lambda must be >= 0");
  if (!(eps > 0.0)) throw ValidationError("SelectionConfig: eps must be > 0");
}

ConflictPrompt ConflictPrompt::from_context(std::vector<TokenId> ctx_tokens, std::size_t span_begin,
                                            std::size_t span_end, NullVariant variant) {
  ConflictPrompt p;
  p.span_begin = span_begin;
  p.span_end = span_end;
  p.variant = variant;
  if (span_begin >= span_end || span_end > ctx_tokens.size()) {
    throw ValidationError("ConflictPrompt: context span must be non-empty and inside the prompt");
  }
  p.null_tokens.assign(ctx_tokens.begin(), ctx_tokens.begin() + static_cast<std::ptrdiff_t>(span_begin));
  if (variant == NullVariant::keep_question) {
    p.null_tokens.insert(p.null_tokens.end(), ctx_tokens.begin() + static_cast<std::ptrdiff_t>(span_end),
                         ctx_tokens.end());
  }
  if (p.null_tokens.empty()) throw ValidationError("ConflictPrompt: null prompt would be empty");
  p.ctx_tokens = std::move(ctx_tokens);
  return p;
}

void ConflictPrompt::validate() const {
  if (span_begin >= span_end || span_end > ctx_tokens.size()) {
    throw ValidationError("ConflictPrompt: context span must be non-empty and inside the prompt");
  }
  const ConflictPrompt expect = from_context(ctx_tokens, span_begin, span_end, variant);
  if (expect.null_tokens != null_tokens) {
    throw ValidationError("ConflictPrompt: null tokens are not the context prompt minus its document");
  }
}

Vec s_info_layer(std::span<const double> z_ctx, std::span<const double> z_null) {
  if (z_ctx.size() != z_null.size()) throw ValidationError("s_info_layer: length mismatch");
  return sub(log_softmax(z_ctx), log_softmax(z_null));
}

Vec sign_max_normalize(std::span<const double> s, double eps) {
  double mx = 0.0;
  for (double v : s) mx = std::max(mx, std::abs(v));
  return scaled(s, 1.0 / (mx + eps));
}

Vec aggregate_and_normalize(const std::vector<Vec>& s_layers, int k, double eps) {
  if (k < 1) throw ValidationError("aggregate_and_normalize: k must be at least 1");
  if (static_cast<std::size_t>(k) > s_layers.size()) {
    throw ValidationError("aggregate_and_normalize: k exceeds the number of layers");
  }
  Vec mean(s_layers.front().size(), 0.0);
  for (std::size_t i = s_layers.size() - static_cast<std::size_t>(k); i < s_layers.size(); ++i) {
    if (s_layers[i].size() != mean.size()) throw ValidationError("aggregate_and_normalize: ragged input");
    axpy(1.0, s_layers[i], mean);
  }
  for (double& v : mean) v /= static_cast<double>(k);
  return sign_max_normalize(mean, eps);
}

Vec s_info_total(const ResidualTrace& ctx, const ResidualTrace& null, const ModelWeights& w,
                 const SelectionConfig& cfg) {
  const int L = ctx.layers();
  cfg.validate(L);
  std::vector<Vec> layers;
  for (int l = L - cfg.k + 1; l <= L; ++l) {
    layers.push_back(s_info_layer(project(ctx, l, w, cfg.lens), project(null, l, w, cfg.lens)));
  }
  return aggregate_and_normalize(layers, cfg.k, cfg.eps);
}

double attention_evidence(const ResidualTrace& trace, TokenId v, const ConflictPrompt& prompt) {
  const int L = trace.layers();
  const std::size_t cur = trace.last();
  const auto& heads = trace.attn[static_cast<std::size_t>(L)];
  const std::size_t end = std::min(prompt.span_end, trace.length());
  double total = 0.0;
  for (std::size_t j = prompt.span_begin; j < end; ++j) {
    if (trace.tokens[j] != v) continue;
    for (const Mat& A : heads) total += A(cur, j);
  }
  return total / static_cast<double>(heads.size());
}

TargetSelection select_target(std::span<const double> s_info, const ResidualTrace& trace,
                              const ConflictPrompt& prompt, const SelectionConfig& cfg) {
  cfg.validate(trace.layers());
  std::vector<TokenId> order(s_info.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t M = std::min(static_cast<std::size_t>(cfg.M), order.size());
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(M), order.end(),
                    [&](TokenId a, TokenId b) {
                      const double sa = s_info[static_cast<std::size_t>(a)];
                      const double sb = s_info[static_cast<std::size_t>(b)];
                      return sa != sb ? sa > sb : a < b;
                    });
  TargetSelection sel;
  sel.candidates.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(M));
  Vec raw_attn;
  for (TokenId v : sel.candidates) {
    sel.s_info.push_back(s_info[static_cast<std::size_t>(v)]);
    raw_attn.push_back(attention_evidence(trace, v, prompt));
  }
  sel.s_attn = sign_max_normalize(raw_attn, cfg.eps);
  bool first = true;
  for (std::size_t i = 0; i < M; ++i) {
    const double joint = sel.s_info[i] + cfg.lambda * sel.s_attn[i];
    const TokenId v = sel.candidates[i];
    if (first || joint > sel.joint_score || (joint == sel.joint_score && v < sel.target)) {
      sel.joint_score = joint;
      sel.target = v;
      first = false;
    }
  }
  return sel;
}

std::vector<int> suppressive_layers(const ResidualTrace& trace, std::span<const double> w_target) {
  std::vector<int> out;
  for (int l = 1; l <= trace.layers(); ++l) {
    if (dot(trace.u_clean[static_cast<std::size_t>(l)][trace.last()], w_target) < 0.0) out.push_back(l);
  }
  return out;
}

Vec make_patch(std::span<const double> u, std::span<const double> w_target, double alpha) {
  if (!(alpha >= 0.0)) throw ValidationError("make_patch: alpha must be >= 0");
  return projection_removal(u, w_target, alpha);
}

std::string to_string(RectMode mode) { return mode == RectMode::online ? "online" : "frozen"; }

RectMode rect_mode_from_string(const std::string& s) {
  if (s == "online") return RectMode::online;
  if (s == "frozen") return RectMode::frozen;
  throw ValidationError("unknown rectification mode '" + s + "'");
}

RectificationPlan plan_rectification(const ResidualTrace& trace, std::span<const double> w_target,
                                     const RectifyConfig& cfg) {
  RectificationPlan plan;
  plan.alpha = cfg.alpha;
  plan.mode = cfg.mode;
  plan.L_supp = suppressive_layers(trace, w_target);
  for (int l : plan.L_supp) {
    plan.patches[l] = make_patch(trace.u_clean[static_cast<std::size_t>(l)][trace.last()], w_target, cfg.alpha);
  }
  return plan;
}

double predicted_shift(const RectificationPlan& plan, const ResidualTrace& trace, std::span<const double> w_target) {
  double s = 0.0;
  for (int l : plan.L_supp) s += dot(w_target, trace.u_clean[static_cast<std::size_t>(l)][trace.last()]);
  return -plan.alpha * s;
}

std::string to_jsonl_line(const StepDiagnostics& s) {
  nlohmann::ordered_json j;
  j["method"] = s.method;
  j["step"] = s.step;
  j["target_id"] = s.target_id;
  j["candidates"] = s.candidates;
  j["s_info"] = s.s_info;
  j["s_attn"] = s.s_attn;
  j["L_supp"] = s.L_supp;
  j["alpha"] = s.alpha;
  j["predicted_shift"] = s.predicted_shift;
  j["realized_shift"] = s.realized_shift;
  j["emitted_id"] = s.emitted_id;
  if (s.conflict) j["conflict"] = *s.conflict;
  return j.dump();
}

DecodeOutput decode_corect(const ModelWeights& w, const ConflictPrompt& prompt, const SelectionConfig& sel,
                           const RectifyConfig& rect, const DecodeOptions& opts) {
  if (opts.max_new < 1) throw ValidationError("decode_corect: max_new must be at least 1");
  if (!(rect.alpha >= 0.0)) throw ValidationError("decode_corect: alpha must be >= 0");
  prompt.validate();
  sel.validate(w.cfg.L);

  std::vector<TokenId> ctx = prompt.ctx_tokens;
  std::vector<TokenId> null = prompt.null_tokens;
  const auto max_len = static_cast<std::size_t>(w.cfg.max_seq);
  DecodeOutput out;
  ResidualTrace cache;
  bool have_cache = false;
  for (int step = 0; step < opts.max_new; ++step) {
    ForwardResult base = forward_traced(w, ctx, {}, opts.kv_cache && have_cache ? &cache : nullptr);
    const ForwardResult nul = forward_traced(w, null);
    const Vec s_info = s_info_total(base.trace, nul.trace, w, sel);
    const TargetSelection ts = select_target(s_info, base.trace, prompt, sel);
    const auto wt = w.unembed(ts.target);

    StepDiagnostics diag;
    diag.step = step;
    diag.target_id = ts.target;
    diag.candidates = ts.candidates;
    diag.s_info = ts.s_info;
    diag.s_attn = ts.s_attn;
    diag.alpha = rect.alpha;

    Vec logits;
    if (rect.mode == RectMode::online) {
      HookSet hooks;
      hooks.online = OnlineRectifier{Vec(wt.begin(), wt.end()), rect.alpha};
      const ForwardResult fixed = forward_traced(w, ctx, hooks);
      RectificationPlan plan = plan_rectification(fixed.trace, wt, rect);
      diag.L_supp = plan.L_supp;
      diag.predicted_shift = predicted_shift(plan, fixed.trace, wt);
      logits = fixed.logits;
    } else {
      const RectificationPlan plan = plan_rectification(base.trace, wt, rect);
      HookSet hooks;
      hooks.ffn_patches = plan.patches;
      logits = forward_traced(w, ctx, hooks).logits;
      diag.L_supp = plan.L_supp;
      diag.predicted_shift = predicted_shift(plan, base.trace, wt);
    }
    const auto t = static_cast<std::size_t>(ts.target);
    diag.realized_shift = logits[t] - base.logits[t];
    diag.emitted_id = argmax(logits);
    out.tokens.push_back(diag.emitted_id);
    out.steps.push_back(std::move(diag));

    if (opts.stop_at_eos && out.tokens.back() == kEos) break;
    if (ctx.size() + 1 > max_len) break;
    cache = std::move(base.trace);
    have_cache = true;
    ctx.push_back(out.tokens.back());
    null.push_back(out.tokens.back());
  }
  return out;
}

}  // namespace corect
