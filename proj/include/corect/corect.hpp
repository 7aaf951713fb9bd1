#pragma once

// Context-reliance rectification: pick a trustworthy target token from the contrast
// between a context pass and a null pass, find the FFN layers that push against it,
// and cancel their projection onto the target's unembedding direction.

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "corect/lens.hpp"
#include "corect/model.hpp"

namespace corect {

struct SelectionConfig {
  int k = 10;             // lens layers averaged, counted from the top
  int M = 10;             // candidate set size
  double lambda = 1.0;    // weight of attention evidence
  double eps = 1e-8;      // normalization stabilizer
  LensMode lens = LensMode::final_ln;

  void validate(int L) const;
};

/// keep_question drops only the context document; instruction_only keeps just the tokens
/// before it.
enum class NullVariant { keep_question, instruction_only };

struct ConflictPrompt {
  std::vector<TokenId> ctx_tokens;
  std::vector<TokenId> null_tokens;
  std::size_t span_begin = 0;  // context document occupies [span_begin, span_end) of ctx_tokens
  std::size_t span_end = 0;
  NullVariant variant = NullVariant::keep_question;

  static ConflictPrompt from_context(std::vector<TokenId> ctx_tokens, std::size_t span_begin,
                                     std::size_t span_end,
                                     NullVariant variant = NullVariant::keep_question);
  void validate() const;
};

Vec s_info_layer(std::span<const double> z_ctx, std::span<const double> z_null);

/// S(v) / (max |S| + eps), sign kept.
Vec sign_max_normalize(std::span<const double> s, double eps);

/// Mean of the last k vectors, then sign-preserving max-normalization.
Vec aggregate_and_normalize(const std::vector<Vec>& s_layers, int k, double eps);

/// Normalized S_info over the vocabulary from a context trace and a null trace.
Vec s_info_total(const ResidualTrace& ctx, const ResidualTrace& null, const ModelWeights& w,
                 const SelectionConfig& cfg);

/// Head-averaged final-layer attention from the current position to context positions
/// holding token v. `trace` must come from a pass over the prompt's ctx tokens (plus any
/// generated suffix).
double attention_evidence(const ResidualTrace& trace, TokenId v, const ConflictPrompt& prompt);

struct TargetSelection {
  std::vector<TokenId> candidates;
  std::vector<double> s_info;  // normalized S_info per candidate
  std::vector<double> s_attn;  // normalized attention evidence per candidate
  TokenId target = 0;
  double joint_score = 0.0;
};

TargetSelection select_target(std::span<const double> s_info, const ResidualTrace& trace,
                              const ConflictPrompt& prompt, const SelectionConfig& cfg);

/// Layers whose clean FFN output at the last position has negative dot product with w.
std::vector<int> suppressive_layers(const ResidualTrace& trace, std::span<const double> w_target);

/// -alpha * (u.w / |w|^2) w
Vec make_patch(std::span<const double> u, std::span<const double> w_target, double alpha);

enum class RectMode { online, frozen };

std::string to_string(RectMode mode);
RectMode rect_mode_from_string(const std::string& s);

struct RectifyConfig {
  double alpha = 1.0;
  RectMode mode = RectMode::online;
};

struct RectificationPlan {
  std::vector<int> L_supp;
  std::map<int, Vec> patches;
  double alpha = 1.0;
  RectMode mode = RectMode::online;
};

/// Suppressive layers and their patches, computed from the clean u of `trace`.
RectificationPlan plan_rectification(const ResidualTrace& trace, std::span<const double> w_target,
                                     const RectifyConfig& cfg);

/// -alpha * sum over L_supp of w.u_l, using the clean u of `trace`.
double predicted_shift(const RectificationPlan& plan, const ResidualTrace& trace,
                       std::span<const double> w_target);

struct StepDiagnostics {
  int step = 0;
  TokenId target_id = 0;
  std::vector<TokenId> candidates;
  std::vector<double> s_info;
  std::vector<double> s_attn;
  std::vector<int> L_supp;
  double alpha = 0.0;
  double predicted_shift = 0.0;
  double realized_shift = 0.0;
  TokenId emitted_id = 0;
  std::string method = "corect";
  std::optional<bool> conflict;  // set by the cross-entropy band baseline
};

std::string to_jsonl_line(const StepDiagnostics& s);

struct DecodeOptions {
  int max_new = 1;
  bool kv_cache = false;  // reuse the previous step's clean context pass for earlier positions
  bool stop_at_eos = true;
};

struct DecodeOutput {
  std::vector<TokenId> tokens;
  std::vector<StepDiagnostics> steps;
};

DecodeOutput decode_corect(const ModelWeights& w, const ConflictPrompt& prompt, const SelectionConfig& sel,
                           const RectifyConfig& rect, const DecodeOptions& opts = {});

}  // namespace corect
