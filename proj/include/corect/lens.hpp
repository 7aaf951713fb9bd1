#pragma once

// Logit-lens projections of intermediate residual states, exact per-source
// decomposition, rank trajectories and the flip taxonomy.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "corect/model.hpp"

namespace corect {

/// final_ln applies the model's final layer norm to h_l. frozen_ln replaces the
/// normalization scale with the one measured on h_L at the same position, which makes the
/// readout affine in h_l and the decomposition exact.
enum class LensMode { final_ln, frozen_ln };

std::string to_string(LensMode mode);
LensMode lens_mode_from_string(const std::string& s);

/// Logits read from h_l (0 <= layer <= L) at `pos` (default: last position).
Vec project(const ResidualTrace& trace, int layer, const ModelWeights& w, LensMode mode,
            std::optional<std::size_t> pos = std::nullopt);

struct LensProjection {
  std::vector<Vec> z_per_layer;  // index l-1 holds layer l
  LensMode mode = LensMode::final_ln;
};

LensProjection lens_projection(const ResidualTrace& trace, const ModelWeights& w, LensMode mode);

/// Logit contribution of every stream writer at the last position under frozen_ln.
struct Decomposition {
  Vec embed;
  std::vector<Vec> attn;  // index l-1 holds a_l
  std::vector<Vec> ffn;   // index l-1 holds u_l
  Vec bias;               // W_U times the final layer-norm bias
  Vec total() const;
};

/// Throws ValidationError for final_ln, where no exact linear split exists.
Decomposition decompose(const ResidualTrace& trace, const ModelWeights& w,
                        LensMode mode = LensMode::frozen_ln);

struct RankTrajectory {
  std::vector<std::size_t> ranks;  // index l-1 holds layer l
  std::size_t final_rank = 0;
};

RankTrajectory rank_trajectory(const ResidualTrace& trace, TokenId token, const ModelWeights& w,
                               LensMode mode = LensMode::final_ln);

enum class FlipLabel { correct, no_flip, middle_flip, last_layer_flip };

std::string to_string(FlipLabel label);

struct FlipClassification {
  FlipLabel label = FlipLabel::no_flip;
  std::optional<int> first_rank1_layer;
};

FlipClassification classify_flip(const RankTrajectory& traj, TokenId final_pred, TokenId gold,
                                 double boundary_fraction = 0.9);

struct TrajectoryRecord {
  std::string example_id;
  std::vector<std::size_t> ranks;
  TokenId final_pred = 0;
  TokenId gold = 0;
  FlipLabel label = FlipLabel::no_flip;
  LensMode mode = LensMode::final_ln;
};

std::string to_jsonl_line(const TrajectoryRecord& r);
void write_trajectories_jsonl(const std::filesystem::path& path, const std::vector<TrajectoryRecord>& records);

}  // namespace corect
