#pragma once

// Pre-LN decoder-only transformer with a fully recorded residual stream,
// hook injection, a deterministic fact implanter and a binary weights format.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <utility>
#include <vector>

#include "corect/numerics.hpp"

namespace corect {

enum class Activation : std::uint32_t { relu = 0, gelu = 1 };

struct ModelConfig {
  int L = 12;
  int d = 128;
  int H = 2;
  int d_ff = 128;
  int vocab = 80;
  int max_seq = 16;
  Activation activation = Activation::relu;

  int d_head() const { return d / H; }
  /// Throws ValidationError on non-positive counts, d % H != 0 or vocab < 4.
  void validate() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct LayerWeights {
  Mat W_Q, W_K, W_V, W_O;  // d x d; head h owns rows [h*dh, (h+1)*dh) of Q/K/V and those columns of O
  Mat W_up;                // d_ff x d
  Mat W_down;              // d x d_ff
  Vec ln1_gain, ln1_bias, ln2_gain, ln2_bias;
  friend bool operator==(const LayerWeights&, const LayerWeights&) = default;
};

struct ModelWeights {
  ModelConfig cfg;
  Mat W_E;  // d x vocab, column t embeds token t
  Mat W_U;  // vocab x d, row t is the unembedding vector w_t
  std::vector<LayerWeights> layers;  // layers[l-1] is layer l
  Vec lnf_gain, lnf_bias;
  Mat pos;  // max_seq x d

  const LayerWeights& layer(int l) const { return layers.at(static_cast<std::size_t>(l - 1)); }
  LayerWeights& layer(int l) { return layers.at(static_cast<std::size_t>(l - 1)); }
  std::span<const double> unembed(TokenId t) const { return W_U.row(static_cast<std::size_t>(t)); }

  /// Throws ValidationError if any shape disagrees with cfg or an entry is non-finite.
  void validate() const;
  friend bool operator==(const ModelWeights&, const ModelWeights&) = default;
};

/// Everything one forward pass computed. Layers are 1-based; index 0 of a/u/m/attn is unused.
struct ResidualTrace {
  std::vector<TokenId> tokens;
  std::vector<std::vector<Vec>> h;        // [0..L][pos]; h[0] is the embedding
  std::vector<std::vector<Vec>> a;        // attention output
  std::vector<std::vector<Vec>> u;        // FFN output carried by the stream (after patches)
  std::vector<std::vector<Vec>> u_clean;  // FFN output before patches
  std::vector<std::vector<Vec>> m;        // post-activation keys
  std::vector<std::vector<Mat>> attn;     // [l][head], query pos x key pos
  std::vector<Vec> z_final;               // logits per position
  std::map<int, Vec> applied_patch;       // layer -> patch added at the last position

  std::size_t length() const { return tokens.size(); }
  std::size_t last() const { return tokens.size() - 1; }
  int layers() const { return static_cast<int>(h.size()) - 1; }
};

struct EmbedNoise {
  std::size_t begin = 0;       // first noised position
  std::vector<Vec> noise;      // one vector per position starting at begin
};

/// Projection removal applied inside the pass: at the last position, every layer whose
/// clean FFN output has negative dot product with `direction` gets
/// u -= alpha * (u.w / |w|^2) w.
struct OnlineRectifier {
  Vec direction;
  double alpha = 1.0;
};

enum class Readout { layer_norm, identity };

struct HookSet {
  std::optional<EmbedNoise> embed_noise;
  std::map<std::pair<int, std::size_t>, Vec> restore_overrides;  // (layer 0..L, pos) -> h
  std::map<int, Vec> ffn_patches;                                // layer -> added to u at last pos
  std::optional<OnlineRectifier> online;
  /// When set, a_l and the clean u_l at the last position are taken from this trace
  /// instead of being recomputed. Together with Readout::identity this is the linear channel.
  const ResidualTrace* freeze_from = nullptr;
  Readout readout = Readout::layer_norm;

  bool empty() const {
    return !embed_noise && restore_overrides.empty() && ffn_patches.empty() && !online &&
           freeze_from == nullptr && readout == Readout::layer_norm;
  }
};

struct ForwardResult {
  Vec logits;  // at the last position
  ResidualTrace trace;
};

/// Runs the model. If `prefix` is given, positions it covers are copied from it and only
/// later positions are computed (key/value cache); the prefix must come from an unhooked
/// pass over a prefix of `tokens`, and hooks may then only touch the new positions.
ForwardResult forward_traced(const ModelWeights& w, std::span<const TokenId> tokens,
                             const HookSet& hooks = {}, const ResidualTrace* prefix = nullptr);

Vec activate(Activation act, std::span<const double> x);

/// Gaussian weights for property tests, f32-representable.
ModelWeights random_model(const ModelConfig& cfg, std::uint64_t seed);

// --- fact implantation -------------------------------------------------------

inline constexpr TokenId kInstr = 0;
inline constexpr TokenId kCtx = 1;
inline constexpr TokenId kQry = 2;
inline constexpr TokenId kEos = 3;

/// Token id ranges of the synthetic vocabulary: 4 specials, relations, subjects, objects.
struct TokenLayout {
  int n_relations = 4;
  int n_subjects = 24;
  int vocab = 80;

  TokenId first_relation() const { return 4; }
  TokenId first_subject() const { return 4 + n_relations; }
  TokenId first_object() const { return 4 + n_relations + n_subjects; }
  int n_objects() const { return vocab - first_object(); }

  bool is_relation(TokenId t) const { return t >= first_relation() && t < first_subject(); }
  bool is_subject(TokenId t) const { return t >= first_subject() && t < first_object(); }
  bool is_object(TokenId t) const { return t >= first_object() && t < vocab; }

  static TokenLayout for_config(const ModelConfig& cfg, int n_subjects = 24);
};

/// Question without context: INSTR QRY s r.
std::vector<TokenId> query_prompt(TokenId subject, TokenId relation);
/// Question with a one-token context document: INSTR CTX c QRY s r.
std::vector<TokenId> context_prompt(TokenId context_object, TokenId subject, TokenId relation);

struct FactSpec {
  TokenId subject = 0;
  TokenId relation = 0;
  TokenId parametric_answer = 0;
  int memory_layer = 2;
  double memory_strength = 3.0;
  int copy_layer = 1;
  double copy_strength = 1.0;
};

/// Shape constants of the implanted circuit. Defaults are the calibrated ones.
struct ImplantTuning {
  double signal_scale = 4.0;      // common gain on copy, suppression and memory writes
  double copy_gain = 2.0;         // extra gain of the copy head
  double suppression = 0.5;       // copy-suppression FFN strength
  double mover_gain = 6.0;        // subject mover head output gain
  double readout_gain = 4.0;      // final layer-norm gain
  double answer_feature = 0.5;    // shared object feature in W_U rows
  double inhibition = 1.0;        // memory write against the shared object feature
  double pattern_gain = 60.0;     // designed query-key pattern
  double sink_gain = 40.0;        // designed default attention to the instruction token
  double noise = 0.005;
  int n_subjects = 24;
};

ModelWeights implant_model(const ModelConfig& cfg, const std::vector<FactSpec>& facts,
                           std::uint64_t seed, const ImplantTuning& tuning = {});

// --- weights file --------------------------------------------------------------

void save_weights(const ModelWeights& w, const std::filesystem::path& path);
ModelWeights load_weights(const std::filesystem::path& path);

}  // namespace corect
