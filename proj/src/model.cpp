#include "corect/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>
#include <string>

#include "corect/errors.hpp"

namespace corect {

namespace {

std::string str(long long v) { return std::to_string(v); }

void check_shape(const Mat& m, int rows, int cols, const char* name) {
  if (m.rows() != static_cast<std::size_t>(rows) || m.cols() != static_cast<std::size_t>(cols)) {
    throw ValidationError(std::string(name) + ": expected " + str(rows) + "x" + str(cols) + ", got " +
                          str(static_cast<long long>(m.rows())) + "x" +
                          str(static_cast<long long>(m.cols())));
  }
  if (!all_finite(m.values())) throw ValidationError(std::string(name) + ": non-finite entry");
}

void check_vec(const Vec& v, int n, const char* name) {
  if (v.size() != static_cast<std::size_t>(n)) {
    throw ValidationError(std::string(name) + ": expected length " + str(n));
  }
  if (!all_finite(v)) throw ValidationError(std::string(name) + ": non-finite entry");
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

}  // namespace

void ModelConfig::validate() const {
  if (L < 1 || d < 1 || H < 1 || d_ff < 1 || max_seq < 1) {
    throw ValidationError("ModelConfig: all counts must be at least 1");
  }
  if (d % H != 0) throw ValidationError("ModelConfig: d=" + str(d) + " not divisible by H=" + str(H));
  if (vocab < 4) throw ValidationError("ModelConfig: vocab must be at least 4");
  if (d < 2) throw ValidationError("ModelConfig: d must be at least 2 for layer norm");
  if (activation != Activation::relu && activation != Activation::gelu) {
    throw ValidationError("ModelConfig: unknown activation");
  }
}

void ModelWeights::validate() const {
  cfg.validate();
  check_shape(W_E, cfg.d, cfg.vocab, "W_E");
  check_shape(W_U, cfg.vocab, cfg.d, "W_U");
  check_shape(pos, cfg.max_seq, cfg.d, "pos");
  check_vec(lnf_gain, cfg.d, "lnf_gain");
  check_vec(lnf_bias, cfg.d, "lnf_bias");
  if (layers.size() != static_cast<std::size_t>(cfg.L)) {
    throw ValidationError("ModelWeights: " + str(static_cast<long long>(layers.size())) +
                          " layers for L=" + str(cfg.L));
  }
  for (const auto& lw : layers) {
    check_shape(lw.W_Q, cfg.d, cfg.d, "W_Q");
    check_shape(lw.W_K, cfg.d, cfg.d, "W_K");
    check_shape(lw.W_V, cfg.d, cfg.d, "W_V");
    check_shape(lw.W_O, cfg.d, cfg.d, "W_O");
    check_shape(lw.W_up, cfg.d_ff, cfg.d, "W_up");
    check_shape(lw.W_down, cfg.d, cfg.d_ff, "W_down");
    check_vec(lw.ln1_gain, cfg.d, "ln1_gain");
    check_vec(lw.ln1_bias, cfg.d, "ln1_bias");
    check_vec(lw.ln2_gain, cfg.d, "ln2_gain");
    check_vec(lw.ln2_bias, cfg.d, "ln2_bias");
  }
}

Vec activate(Activation act, std::span<const double> x) {
  Vec out(x.begin(), x.end());
  for (double& v : out) v = act == Activation::relu ? std::max(v, 0.0) : gelu(v);
  return out;
}

ForwardResult forward_traced(const ModelWeights& w, std::span<const TokenId> tokens,
                             const HookSet& hooks, const ResidualTrace* prefix) {
  const ModelConfig& cfg = w.cfg;
  const std::size_t n = tokens.size();
  if (n == 0) throw ValidationError("forward: empty sequence");
  if (n > static_cast<std::size_t>(cfg.max_seq)) {
    throw ValidationError("forward: sequence length " + str(static_cast<long long>(n)) +
                          " exceeds max_seq " + str(cfg.max_seq));
  }
  for (TokenId t : tokens) {
    if (t < 0 || t >= cfg.vocab) throw ValidationError("forward: token id " + str(t) + " out of range");
  }
  const int L = cfg.L;
  const auto d = static_cast<std::size_t>(cfg.d);
  const auto dh = static_cast<std::size_t>(cfg.d_head());
  const std::size_t last = n - 1;

  // Positions below p0 are reused from the prefix trace.
  std::size_t p0 = 0;
  if (prefix != nullptr) {
    if (prefix->layers() != L || prefix->length() == 0 || prefix->length() > n ||
        !std::equal(prefix->tokens.begin(), prefix->tokens.end(), tokens.begin())) {
      throw ValidationError("forward: cache prefix does not match the sequence");
    }
    p0 = std::min(prefix->length(), last);
    if (hooks.embed_noise && hooks.embed_noise->begin < p0) {
      throw ValidationError("forward: embedding noise touches cached positions");
    }
    for (const auto& [key, value] : hooks.restore_overrides) {
      if (key.second < p0) throw ValidationError("forward: restore override touches cached positions");
    }
  }
  if (hooks.freeze_from != nullptr &&
      (hooks.freeze_from->layers() != L || hooks.freeze_from->length() != n)) {
    throw ValidationError("forward: frozen trace has a different shape");
  }
  for (const auto& [key, value] : hooks.restore_overrides) {
    if (key.first < 0 || key.first > L || key.second >= n || value.size() != d) {
      throw ValidationError("forward: invalid restore override");
    }
  }
  for (const auto& [layer, patch] : hooks.ffn_patches) {
    if (layer < 1 || layer > L || patch.size() != d) throw ValidationError("forward: invalid FFN patch");
  }
  if (hooks.online && hooks.online->direction.size() != d) {
    throw ValidationError("forward: rectifier direction has wrong width");
  }

  ResidualTrace tr;
  tr.tokens.assign(tokens.begin(), tokens.end());
  const auto Lz = static_cast<std::size_t>(L) + 1;
  tr.h.assign(Lz, std::vector<Vec>(n));
  tr.a.assign(Lz, std::vector<Vec>(n));
  tr.u.assign(Lz, std::vector<Vec>(n));
  tr.u_clean.assign(Lz, std::vector<Vec>(n));
  tr.m.assign(Lz, std::vector<Vec>(n));
  tr.attn.assign(Lz, std::vector<Mat>(static_cast<std::size_t>(cfg.H), Mat(n, n)));
  tr.z_final.assign(n, Vec{});

  auto restore = [&](int layer, std::size_t t) {
    auto it = hooks.restore_overrides.find({layer, t});
    if (it != hooks.restore_overrides.end()) tr.h[static_cast<std::size_t>(layer)][t] = it->second;
  };

  for (std::size_t t = 0; t < n; ++t) {
    if (t < p0) {
      tr.h[0][t] = prefix->h[0][t];
      continue;
    }
    Vec e = w.W_E.column(static_cast<std::size_t>(tokens[t]));
    axpy(1.0, w.pos.row(t), e);
    if (hooks.embed_noise) {
      const auto& en = *hooks.embed_noise;
      if (t >= en.begin && t - en.begin < en.noise.size()) {
        const Vec& eps = en.noise[t - en.begin];
        if (eps.size() != d) throw ValidationError("forward: noise vector has wrong width");
        axpy(1.0, eps, e);
      }
    }
    tr.h[0][t] = std::move(e);
    restore(0, t);
  }

  const double score_scale = 1.0 / std::sqrt(static_cast<double>(dh));
  for (int l = 1; l <= L; ++l) {
    const auto li = static_cast<std::size_t>(l);
    const LayerWeights& lw = w.layer(l);
    const auto& hp = tr.h[li - 1];

    std::vector<Vec> normed(n), keys(n), values(n);
    for (std::size_t t = 0; t < n; ++t) {
      normed[t] = layer_norm(hp[t], lw.ln1_gain, lw.ln1_bias);
      keys[t] = matvec(lw.W_K, normed[t]);
      values[t] = matvec(lw.W_V, normed[t]);
    }

    for (std::size_t t = 0; t < n; ++t) {
      if (t < p0) {
        tr.a[li][t] = prefix->a[li][t];
        tr.u[li][t] = prefix->u[li][t];
        tr.u_clean[li][t] = prefix->u_clean[li][t];
        tr.m[li][t] = prefix->m[li][t];
        tr.h[li][t] = prefix->h[li][t];
        for (std::size_t hd = 0; hd < tr.attn[li].size(); ++hd)
          for (std::size_t j = 0; j <= t; ++j) tr.attn[li][hd](t, j) = prefix->attn[li][hd](t, j);
        continue;
      }
      const Vec q = matvec(lw.W_Q, normed[t]);
      Vec heads(d, 0.0);
      for (std::size_t hd = 0; hd < static_cast<std::size_t>(cfg.H); ++hd) {
        const std::size_t off = hd * dh;
        std::span<const double> qh(q.data() + off, dh);
        Vec scores(t + 1);
        for (std::size_t j = 0; j <= t; ++j) {
          scores[j] = dot(qh, std::span<const double>(keys[j].data() + off, dh)) * score_scale;
        }
        const ProbDist p = softmax(scores);
        Mat& A = tr.attn[li][hd];
        for (std::size_t j = 0; j <= t; ++j) {
          A(t, j) = p[j];
          axpy(p[j], std::span<const double>(values[j].data() + off, dh),
               std::span<double>(heads.data() + off, dh));
        }
      }
      Vec a = matvec(lw.W_O, heads);
      const bool frozen = hooks.freeze_from != nullptr && t == last;
      if (frozen) a = hooks.freeze_from->a[li][t];

      Vec mid = add(hp[t], a);
      Vec m = activate(cfg.activation, matvec(lw.W_up, layer_norm(mid, lw.ln2_gain, lw.ln2_bias)));
      Vec u = matvec(lw.W_down, m);
      if (frozen) {
        u = hooks.freeze_from->u_clean[li][t];
        m = hooks.freeze_from->m[li][t];
      }
      tr.u_clean[li][t] = u;

      if (t == last) {
        Vec patch(d, 0.0);
        bool patched = false;
        if (hooks.online && dot(u, hooks.online->direction) < 0.0) {
          axpy(1.0, projection_removal(u, hooks.online->direction, hooks.online->alpha), patch);
          patched = true;
        }
        if (auto it = hooks.ffn_patches.find(l); it != hooks.ffn_patches.end()) {
          axpy(1.0, it->second, patch);
          patched = true;
        }
        if (patched) {
          axpy(1.0, patch, u);
          tr.applied_patch[l] = std::move(patch);
        }
      }

      Vec hn = hp[t];
      axpy(1.0, a, hn);
      axpy(1.0, u, hn);
      tr.a[li][t] = std::move(a);
      tr.u[li][t] = std::move(u);
      tr.m[li][t] = std::move(m);
      tr.h[li][t] = std::move(hn);
      restore(l, t);
    }
  }

  const auto& hL = tr.h[static_cast<std::size_t>(L)];
  for (std::size_t t = 0; t < n; ++t) {
    if (t < p0) {
      tr.z_final[t] = prefix->z_final[t];
    } else if (hooks.readout == Readout::identity) {
      tr.z_final[t] = matvec(w.W_U, hL[t]);
    } else {
      tr.z_final[t] = matvec(w.W_U, layer_norm(hL[t], w.lnf_gain, w.lnf_bias));
    }
  }
  Vec logits = tr.z_final[last];
  return {std::move(logits), std::move(tr)};
}

ModelWeights random_model(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto fill = [&](std::size_t rows, std::size_t cols, double sd) {
    Mat m(rows, cols);
    for (double& v : m.values()) v = round_to_f32(sd * normal(rng));
    return m;
  };
  auto vec = [&](double mean, double sd) {
    Vec v(static_cast<std::size_t>(cfg.d));
    for (double& x : v) x = round_to_f32(mean + sd * normal(rng));
    return v;
  };
  const auto d = static_cast<std::size_t>(cfg.d);
  const auto ff = static_cast<std::size_t>(cfg.d_ff);
  const double sd = 1.0 / std::sqrt(static_cast<double>(cfg.d));
  ModelWeights w;
  w.cfg = cfg;
  w.W_E = fill(d, static_cast<std::size_t>(cfg.vocab), 1.0);
  w.W_U = fill(static_cast<std::size_t>(cfg.vocab), d, sd);
  w.pos = fill(static_cast<std::size_t>(cfg.max_seq), d, 0.1);
  for (int l = 0; l < cfg.L; ++l) {
    LayerWeights lw;
    lw.W_Q = fill(d, d, sd);
    lw.W_K = fill(d, d, sd);
    lw.W_V = fill(d, d, sd);
    lw.W_O = fill(d, d, sd);
    lw.W_up = fill(ff, d, sd);
    lw.W_down = fill(d, ff, 1.0 / std::sqrt(static_cast<double>(cfg.d_ff)));
    lw.ln1_gain = vec(1.0, 0.1);
    lw.ln1_bias = vec(0.0, 0.1);
    lw.ln2_gain = vec(1.0, 0.1);
    lw.ln2_bias = vec(0.0, 0.1);
    w.layers.push_back(std::move(lw));
  }
  w.lnf_gain = vec(1.0, 0.1);
  w.lnf_bias = vec(0.0, 0.1);
  return w;
}

TokenLayout TokenLayout::for_config(const ModelConfig& cfg, int n_subjects) {
  TokenLayout lay;
  lay.n_subjects = n_subjects;
  lay.vocab = cfg.vocab;
  if (n_subjects < 1 || lay.n_objects() < 2) {
    throw CapacityError("TokenLayout: vocab " + str(cfg.vocab) + " leaves fewer than 2 object tokens");
  }
  return lay;
}

std::vector<TokenId> query_prompt(TokenId subject, TokenId relation) {
  return {kInstr, kQry, subject, relation};
}

std::vector<TokenId> context_prompt(TokenId context_object, TokenId subject, TokenId relation) {
  return {kInstr, kCtx, context_object, kQry, subject, relation};
}

namespace {

/// Orthonormal columns spanning a random subspace orthogonal to the all-ones vector,
/// so every direction survives layer-norm mean removal untouched.
std::vector<Vec> centered_orthonormal(std::size_t d, std::size_t count, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<Vec> basis;
  basis.push_back(Vec(d, 1.0 / std::sqrt(static_cast<double>(d))));
  while (basis.size() < count + 1) {
    Vec v(d);
    for (double& x : v) x = normal(rng);
    for (int pass = 0; pass < 2; ++pass)
      for (const Vec& b : basis) axpy(-dot(v, b), b, v);
    const double nv = norm(v);
    if (nv < 1e-6) continue;
    for (double& x : v) x /= nv;
    basis.push_back(std::move(v));
  }
  basis.erase(basis.begin());
  return basis;
}

struct Budget {
  std::map<int, int> heads;
  std::map<int, int> rows;
  int take_head(int layer, int H) {
    int& next = heads[layer];
    if (next >= H) throw CapacityError("implant: layer " + str(layer) + " has no free attention head");
    return next++;
  }
  int take_rows(int layer, int count, int d_ff) {
    int& next = rows[layer];
    if (next + count > d_ff) throw CapacityError("implant: layer " + str(layer) + " FFN rows exhausted");
    const int first = next;
    next += count;
    return first;
  }
};

}  // namespace

ModelWeights implant_model(const ModelConfig& cfg, const std::vector<FactSpec>& facts,
                           std::uint64_t seed, const ImplantTuning& tn) {
  cfg.validate();
  const TokenLayout lay = TokenLayout::for_config(cfg, tn.n_subjects);
  const auto d = static_cast<std::size_t>(cfg.d);
  const auto V = static_cast<std::size_t>(cfg.vocab);
  const auto dh = static_cast<std::size_t>(cfg.d_head());
  const auto n_subj = static_cast<std::size_t>(lay.n_subjects);
  const auto n_obj = static_cast<std::size_t>(lay.n_objects());

  if (V + 6 + n_subj + 1 > d) {
    throw CapacityError("implant: width d=" + str(cfg.d) + " cannot hold " +
                        str(static_cast<long long>(V + 6 + n_subj)) + " orthogonal directions");
  }
  if (n_obj > dh || n_subj > dh) throw CapacityError("implant: head width smaller than token class");
  if (facts.size() > static_cast<std::size_t>(cfg.d_ff / 2)) {
    throw CapacityError("implant: " + str(static_cast<long long>(facts.size())) +
                        " facts exceed d_ff/2 = " + str(cfg.d_ff / 2));
  }
  std::set<TokenId> subjects;
  std::map<int, double> copy_strength;
  for (const FactSpec& f : facts) {
    if (!lay.is_subject(f.subject)) throw ValidationError("implant: subject " + str(f.subject) + " not a subject token");
    if (!lay.is_relation(f.relation)) throw ValidationError("implant: relation " + str(f.relation) + " not a relation token");
    if (!lay.is_object(f.parametric_answer)) {
      throw ValidationError("implant: answer " + str(f.parametric_answer) + " not an object token");
    }
    if (f.copy_layer < 1 || f.memory_layer > cfg.L || f.copy_layer >= f.memory_layer) {
      throw ValidationError("implant: need 1 <= copy_layer < memory_layer <= L");
    }
    if (!(f.memory_strength >= 0.0) || !(f.copy_strength >= 0.0) || !std::isfinite(f.memory_strength) ||
        !std::isfinite(f.copy_strength)) {
      throw ValidationError("implant: strengths must be finite and non-negative");
    }
    if (!subjects.insert(f.subject).second) {
      throw ValidationError("implant: duplicate subject key " + str(f.subject));
    }
    auto [it, inserted] = copy_strength.emplace(f.copy_layer, f.copy_strength);
    if (!inserted && it->second != f.copy_strength) {
      throw ValidationError("implant: facts sharing copy layer " + str(f.copy_layer) +
                            " must share copy_strength");
    }
  }

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const std::vector<Vec> basis = centered_orthonormal(d, V + 6 + n_subj, rng);
  auto dir = [&](TokenId t) -> const Vec& { return basis[static_cast<std::size_t>(t)]; };
  const Vec& f_sub = basis[V];
  const Vec& f_rel = basis[V + 1];
  const Vec& f_obj = basis[V + 2];
  const Vec& f_instr = basis[V + 3];
  const Vec& f_U = basis[V + 4];
  const Vec& f_spec = basis[V + 5];
  auto subject_key = [&](TokenId s) -> const Vec& {
    return basis[V + 6 + static_cast<std::size_t>(s - lay.first_subject())];
  };

  ModelWeights w;
  w.cfg = cfg;
  w.W_E = Mat(d, V);
  w.W_U = Mat(V, d);
  for (std::size_t t = 0; t < V; ++t) {
    const auto tok = static_cast<TokenId>(t);
    const Vec& type = lay.is_subject(tok)    ? f_sub
                      : lay.is_relation(tok) ? f_rel
                      : lay.is_object(tok)   ? f_obj
                      : tok == kInstr        ? f_instr
                                             : f_spec;
    w.W_E.set_column(t, add(dir(tok), type));
    Vec row = dir(tok);
    if (lay.is_object(tok)) axpy(tn.answer_feature, f_U, row);
    w.W_U.set_row(t, row);
  }
  const auto S = static_cast<std::size_t>(cfg.max_seq);
  w.pos = Mat(S, d);
  for (std::size_t t = 0; t < S; ++t) {
    auto r = w.pos.row(t);
    double mean = 0.0;
    for (double& v : r) mean += (v = tn.noise * normal(rng));
    mean /= static_cast<double>(d);
    for (double& v : r) v -= mean;
  }
  auto noise_mat = [&](std::size_t rows, std::size_t cols) {
    Mat m(rows, cols);
    for (double& v : m.values()) v = tn.noise * normal(rng);
    return m;
  };
  const auto ff = static_cast<std::size_t>(cfg.d_ff);
  for (int l = 1; l <= cfg.L; ++l) {
    LayerWeights lw;
    lw.W_Q = noise_mat(d, d);
    lw.W_K = noise_mat(d, d);
    lw.W_V = Mat(d, d);  // value paths exist only in designed heads
    lw.W_O = Mat(d, d);
    lw.W_up = noise_mat(ff, d);
    lw.W_down = noise_mat(d, ff);
    lw.ln1_gain = Vec(d, 1.0);
    lw.ln1_bias = Vec(d, 0.0);
    lw.ln2_gain = Vec(d, 1.0);
    lw.ln2_bias = Vec(d, 0.0);
    w.layers.push_back(std::move(lw));
  }
  w.lnf_gain = Vec(d, tn.readout_gain);
  w.lnf_bias = Vec(d, 0.0);

  const double sq = std::sqrt(static_cast<double>(d));
  Vec any_type = f_sub;
  for (const Vec* f : {&f_rel, &f_obj, &f_instr, &f_spec}) axpy(1.0, *f, any_type);
  Budget budget;

  // A head attending from relation queries to tokens with feature `kdir`, reading the
  // identity of tokens in [first, first+count) and writing `out(t)` scaled by `gain`.
  auto design_head = [&](int layer, const Vec& kdir, TokenId first, std::size_t count,
                         const auto& out, double gain) {
    LayerWeights& lw = w.layer(layer);
    const auto r = static_cast<std::size_t>(budget.take_head(layer, cfg.H)) * dh;
    for (std::size_t i = 0; i < dh; ++i) {
      std::fill(lw.W_Q.row(r + i).begin(), lw.W_Q.row(r + i).end(), 0.0);
      std::fill(lw.W_K.row(r + i).begin(), lw.W_K.row(r + i).end(), 0.0);
    }
    lw.W_Q.set_row(r, scaled(f_rel, tn.pattern_gain / sq));
    lw.W_K.set_row(r, scaled(kdir, tn.pattern_gain / sq));
    lw.W_Q.set_row(r + 1, scaled(any_type, tn.sink_gain / sq));
    lw.W_K.set_row(r + 1, scaled(f_instr, tn.sink_gain / sq));
    for (std::size_t i = 0; i < count; ++i) {
      const auto t = static_cast<TokenId>(first + static_cast<TokenId>(i));
      lw.W_V.set_row(r + i, scaled(dir(t), std::sqrt(2.0) / sq));
      lw.W_O.set_column(r + i, scaled(out(t), gain));
    }
  };

  const double sig = tn.signal_scale;
  for (const auto& [layer, beta_copy] : copy_strength) {
    design_head(layer, f_obj, lay.first_object(), n_obj, dir, sig * tn.copy_gain * beta_copy);
    LayerWeights& lw = w.layer(layer);
    const auto row0 = static_cast<std::size_t>(budget.take_rows(layer, static_cast<int>(n_obj), cfg.d_ff));
    for (std::size_t i = 0; i < n_obj; ++i) {
      const TokenId o = lay.first_object() + static_cast<TokenId>(i);
      lw.W_up.set_row(row0 + i, scaled(dir(o), 1.0 / sq));
      lw.W_down.set_column(row0 + i, scaled(dir(o), -sig * tn.suppression));
    }
  }
  std::set<int> memory_layers;
  for (const FactSpec& f : facts) memory_layers.insert(f.memory_layer);
  const double mu = tn.mover_gain;
  for (int layer : memory_layers) {
    design_head(layer, f_sub, lay.first_subject(), n_subj, subject_key, mu);
  }
  const double key_gain = std::sqrt(2.0 + mu * mu) / mu / sq;
  for (const FactSpec& f : facts) {
    LayerWeights& lw = w.layer(f.memory_layer);
    const auto row = static_cast<std::size_t>(budget.take_rows(f.memory_layer, 1, cfg.d_ff));
    lw.W_up.set_row(row, scaled(subject_key(f.subject), key_gain));
    Vec col = dir(f.parametric_answer);
    axpy(-tn.inhibition, f_U, col);
    lw.W_down.set_column(row, scaled(col, sig * f.memory_strength));
  }

  auto round_mat = [](Mat& m) {
    for (double& v : m.values()) v = round_to_f32(v);
  };
  auto round_vec = [](Vec& v) {
    for (double& x : v) x = round_to_f32(x);
  };
  round_mat(w.W_E);
  round_mat(w.W_U);
  round_mat(w.pos);
  for (auto& lw : w.layers) {
    for (Mat* m : {&lw.W_Q, &lw.W_K, &lw.W_V, &lw.W_O, &lw.W_up, &lw.W_down}) round_mat(*m);
  }
  round_vec(w.lnf_gain);

  for (const FactSpec& f : facts) {
    if (f.copy_strength <= 0.0 || f.memory_strength / f.copy_strength < 3.0) continue;
    const auto q = query_prompt(f.subject, f.relation);
    if (q.size() > S) break;
    const auto got = argmax(forward_traced(w, q).logits);
    if (got != f.parametric_answer) {
      throw NumericError("implant: subject " + str(f.subject) + " recalls " + str(got) +
                         " instead of " + str(f.parametric_answer));
    }
  }
  return w;
}

}  // namespace corect
