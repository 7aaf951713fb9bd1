#include "corect/lens.hpp"

#include <cmath>
#include <fstream>

#include "json.hpp"

#include "corect/errors.hpp"

namespace corect {

namespace {

void check_layer(const ResidualTrace& trace, int layer) {
  if (layer < 0 || layer > trace.layers()) {
    throw ValidationError("lens: layer " + std::to_string(layer) + " outside 0.." +
                          std::to_string(trace.layers()));
  }
}

double frozen_scale(const Vec& hL) {
  double mean = 0.0;
  for (double v : hL) mean += v;
  mean /= static_cast<double>(hL.size());
  double var = 0.0;
  for (double v : hL) var += (v - mean) * (v - mean);
  var /= static_cast<double>(hL.size());
  return std::sqrt(var + kLayerNormEps);
}

/// W_U (g * (x - mean x) / s), without the bias term.
Vec frozen_readout(const ModelWeights& w, const Vec& x, double s) {
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(x.size());
  Vec y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = w.lnf_gain[i] * (x[i] - mean) / s;
  return matvec(w.W_U, y);
}

}  // namespace

std::string to_string(LensMode mode) { return mode == LensMode::final_ln ? "final_ln" : "frozen_ln"; }

LensMode lens_mode_from_string(const std::string& s) {
  if (s == "final_ln") return LensMode::final_ln;
  if (s == "frozen_ln") return LensMode::frozen_ln;
  throw ValidationError("unknown lens mode '" + s + "'");
}

Vec project(const ResidualTrace& trace, int layer, const ModelWeights& w, LensMode mode,
            std::optional<std::size_t> pos) {
  check_layer(trace, layer);
  const std::size_t t = pos.value_or(trace.last());
  if (t >= trace.length()) throw ValidationError("lens: position out of range");
  const Vec& h = trace.h[static_cast<std::size_t>(layer)][t];
  if (mode == LensMode::final_ln) return matvec(w.W_U, layer_norm(h, w.lnf_gain, w.lnf_bias));
  const double s = frozen_scale(trace.h[static_cast<std::size_t>(trace.layers())][t]);
  Vec z = frozen_readout(w, h, s);
  axpy(1.0, matvec(w.W_U, w.lnf_bias), z);
  return z;
}

LensProjection lens_projection(const ResidualTrace& trace, const ModelWeights& w, LensMode mode) {
  LensProjection out;
  out.mode = mode;
  for (int l = 1; l <= trace.layers(); ++l) out.z_per_layer.push_back(project(trace, l, w, mode));
  return out;
}

Vec Decomposition::total() const {
  Vec z = add(embed, bias);
  for (const Vec& c : attn) axpy(1.0, c, z);
  for (const Vec& c : ffn) axpy(1.0, c, z);
  return z;
}

Decomposition decompose(const ResidualTrace& trace, const ModelWeights& w, LensMode mode) {
  if (mode != LensMode::frozen_ln) {
    throw ValidationError("decompose: only frozen_ln is linear; final_ln has no exact split");
  }
  const std::size_t t = trace.last();
  const int L = trace.layers();
  const double s = frozen_scale(trace.h[static_cast<std::size_t>(L)][t]);
  Decomposition dec;
  dec.embed = frozen_readout(w, trace.h[0][t], s);
  dec.bias = matvec(w.W_U, w.lnf_bias);
  for (int l = 1; l <= L; ++l) {
    dec.attn.push_back(frozen_readout(w, trace.a[static_cast<std::size_t>(l)][t], s));
    dec.ffn.push_back(frozen_readout(w, trace.u[static_cast<std::size_t>(l)][t], s));
  }
  return dec;
}

RankTrajectory rank_trajectory(const ResidualTrace& trace, TokenId token, const ModelWeights& w, LensMode mode) {
  RankTrajectory traj;
  for (int l = 1; l <= trace.layers(); ++l) traj.ranks.push_back(rank_of(token, project(trace, l, w, mode)));
  traj.final_rank = rank_of(token, trace.z_final[trace.last()]);
  return traj;
}

std::string to_string(FlipLabel label) {
  switch (label) {
    case FlipLabel::correct: return "correct";
    case FlipLabel::no_flip: return "no_flip";
    case FlipLabel::middle_flip: return "middle_flip";
    case FlipLabel::last_layer_flip: return "last_layer_flip";
  }
  return "unknown";
}

FlipClassification classify_flip(const RankTrajectory& traj, TokenId final_pred, TokenId gold,
                                 double boundary_fraction) {
  if (!(boundary_fraction > 0.0 && boundary_fraction < 1.0)) {
    throw ValidationError("classify_flip: boundary_fraction must lie in (0,1)");
  }
  FlipClassification out;
  std::optional<int> last_rank1;
  for (std::size_t i = 0; i < traj.ranks.size(); ++i) {
    if (traj.ranks[i] != 1) continue;
    const int layer = static_cast<int>(i) + 1;
    if (!out.first_rank1_layer) out.first_rank1_layer = layer;
    last_rank1 = layer;
  }
  if (final_pred == gold) {
    out.label = FlipLabel::correct;
  } else if (!last_rank1) {
    out.label = FlipLabel::no_flip;
  } else {
    const auto L = static_cast<double>(traj.ranks.size());
    const int boundary = static_cast<int>(std::ceil(boundary_fraction * L));
    out.label = *last_rank1 >= boundary ? FlipLabel::last_layer_flip : FlipLabel::middle_flip;
  }
  return out;
}

std::string to_jsonl_line(const TrajectoryRecord& r) {
  nlohmann::ordered_json j;
  j["example_id"] = r.example_id;
  j["ranks"] = r.ranks;
  j["final_pred"] = r.final_pred;
  j["gold"] = r.gold;
  j["label"] = to_string(r.label);
  j["mode"] = to_string(r.mode);
  return j.dump();
}

void write_trajectories_jsonl(const std::filesystem::path& path, const std::vector<TrajectoryRecord>& records) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  for (const auto& r : records) out << to_jsonl_line(r) << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace corect
