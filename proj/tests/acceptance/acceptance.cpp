// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "corect/baselines.hpp"
#include "corect/corect.hpp"
#include "corect/lens.hpp"
#include "corect/oracle.hpp"
#include "corect/workbench.hpp"
#include "support/fixtures.hpp"

namespace fs = std::filesystem;
using namespace corect;
using corect::testing::random_tokens;
using corect::testing::random_vec;
using corect::testing::row_of;
using corect::testing::small_config;

namespace {

struct Outcome {
  bool ok = false;
  std::string detail;
};

struct Criterion {
  int id;
  std::string name;
  double budget_s;
  std::function<Outcome()> run;
};

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

const fs::path& out_root() {
  static const fs::path p = [] {
    fs::path d = fs::current_path() / "acceptance_out";
    fs::create_directories(d);
    return d;
  }();
  return p;
}

const ConflictSet& conflicts200() {
  static const ConflictSet s = generate_conflict_set(ModelConfig{}, 200, 1, 1.0);
  return s;
}

const ConflictSet& agreeing200() {
  static const ConflictSet s = generate_conflict_set(ModelConfig{}, 200, 1, 0.0);
  return s;
}

double accuracy(const std::vector<ResultRecord>& recs, const std::string& method) {
  double hit = 0, n = 0;
  for (const auto& r : recs) {
    if (r.method != method) continue;
    hit += r.correct;
    n += 1;
  }
  return hit / n;
}

// --- 1 ---------------------------------------------------------------------------
Outcome residual_identity() {
  std::mt19937_64 rng(1);
  double worst = 0;
  for (int s = 0; s < 100; ++s) {
    ModelConfig c = small_config(1 + s % 6);
    c.activation = s % 2 ? Activation::gelu : Activation::relu;
    const ModelWeights w = random_model(c, static_cast<std::uint64_t>(s));
    const ForwardResult r = forward_traced(w, random_tokens(rng, c, 1 + static_cast<std::size_t>(s) % 8));
    const auto& tr = r.trace;
    for (int l = 1; l <= c.L; ++l) {
      const auto li = static_cast<std::size_t>(l);
      for (std::size_t t = 0; t < tr.length(); ++t)
        for (std::size_t i = 0; i < tr.h[li][t].size(); ++i)
          worst = std::max(worst, std::abs(tr.h[li][t][i] - (tr.h[li - 1][t][i] + tr.a[li][t][i] + tr.u[li][t][i])));
    }
  }
  return {worst <= 1e-6, "max |h_l - (h_{l-1}+a_l+u_l)| = " + fmt("%.3g", worst) + " over 100 models"};
}

// --- 2 ---------------------------------------------------------------------------
Outcome decomposition() {
  std::mt19937_64 rng(2);
  double worst = 0;
  for (int s = 0; s < 50; ++s) {
    ModelConfig c = small_config(1 + s % 6);
    c.activation = s % 3 ? Activation::relu : Activation::gelu;
    const ModelWeights w = random_model(c, 1000 + static_cast<std::uint64_t>(s));
    const ForwardResult r = forward_traced(w, random_tokens(rng, c, 1 + static_cast<std::size_t>(s) % 8));
    const Vec total = decompose(r.trace, w).total();
    double num = 0, den = 0;
    for (std::size_t v = 0; v < total.size(); ++v) {
      num = std::max(num, std::abs(total[v] - r.logits[v]));
      den = std::max(den, std::abs(r.logits[v]));
    }
    worst = std::max(worst, num / den);
  }
  return {worst <= 1e-5, "max relative reconstruction error = " + fmt("%.3g", worst) + " over 50 cases"};
}

// --- 3 ---------------------------------------------------------------------------
Outcome patch_geometry() {
  std::mt19937_64 rng(3);
  double worst = 0;
  int nonempty = 0, positive = 0;
  for (int t = 0; t < 1000; ++t) {
    const std::size_t d = 8 + static_cast<std::size_t>(t) % 57;
    const Vec u = random_vec(rng, d);
    const Vec w = random_vec(rng, d);
    const Vec phi = make_patch(u, w, 1.0);
    worst = std::max(worst, std::abs(dot(add(u, phi), w)) / std::max(1.0, norm(u) * norm(w)));

    // a trace whose layers carry independent FFN outputs, the first being u
    ResidualTrace tr;
    tr.tokens = {0};
    const std::size_t L = 1 + static_cast<std::size_t>(t) % 12;
    tr.h.assign(L + 1, std::vector<Vec>(1));
    tr.u_clean.assign(L + 1, std::vector<Vec>(1));
    tr.u_clean[1][0] = u;
    for (std::size_t l = 2; l <= L; ++l) tr.u_clean[l][0] = random_vec(rng, d);
    const double alpha = std::uniform_real_distribution<double>(0.05, 3.0)(rng);
    const RectificationPlan plan = plan_rectification(tr, w, {alpha, RectMode::frozen});
    if (!plan.L_supp.empty()) {
      ++nonempty;
      positive += predicted_shift(plan, tr, w) > 0.0;
    }
  }
  const bool ok = worst <= 1e-9 && positive == nonempty;
  return {ok, "max scaled |(u+phi).w| = " + fmt("%.3g", worst) + ", predicted shift > 0 in " + std::to_string(positive) +
                  "/" + std::to_string(nonempty) + " non-empty plans"};
}

// --- 4 ---------------------------------------------------------------------------
Outcome first_order() {
  std::mt19937_64 rng(4);
  double worst = 0;
  int cases = 0;
  auto check = [&](const ModelWeights& w, const std::vector<TokenId>& toks, TokenId target) {
    const ForwardResult base = forward_traced(w, toks);
    HookSet lin;
    lin.freeze_from = &base.trace;
    lin.readout = Readout::identity;
    const ForwardResult ref = forward_traced(w, toks, lin);
    const Vec wt = row_of(w, target);
    const RectificationPlan plan = plan_rectification(base.trace, wt, {1.0, RectMode::frozen});
    HookSet hooks = lin;
    hooks.ffn_patches = plan.patches;
    const ForwardResult p = forward_traced(w, toks, hooks);
    double sum = 0;
    for (const auto& [l, phi] : plan.patches) sum += dot(wt, phi);
    const auto t = static_cast<std::size_t>(target);
    worst = std::max(worst, std::abs((p.logits[t] - ref.logits[t]) - sum));
    ++cases;
  };
  for (int s = 0; s < 40; ++s) {
    const ModelConfig c = small_config(2 + s % 6);
    const ModelWeights w = random_model(c, 2000 + static_cast<std::uint64_t>(s));
    check(w, random_tokens(rng, c, 5), static_cast<TokenId>(s % c.vocab));
  }
  const ConflictSet& set = corect::testing::conflict_set();
  for (std::size_t i = 0; i < 20; ++i) check(set.weights, set.examples[i].prompt.ctx_tokens, set.examples[i].gold);

  // diagnostic only: the full nonlinear pass in frozen mode
  double gap = 0, rel = 0;
  for (std::size_t i = 0; i < 20; ++i) {
    const auto& e = set.examples[i];
    const DecodeOutput o = decode_corect(set.weights, e.prompt, {}, {1.0, RectMode::frozen});
    const auto& s = o.steps.front();
    gap += std::abs(s.realized_shift - s.predicted_shift);
    rel += std::abs(s.realized_shift - s.predicted_shift) / std::abs(s.predicted_shift);
  }
  return {worst <= 1e-4, "linearized max |realized - sum w.phi| = " + fmt("%.3g", worst) + " over " +
                             std::to_string(cases) + " cases; nonlinear mean |gap| = " + fmt("%.3f", gap / 20) +
                             " (mean relative " + fmt("%.3f", rel / 20) + ", diagnostic)"};
}

// --- 5 ---------------------------------------------------------------------------
Eigen::MatrixXd to_eigen(const Mat& m) {
  Eigen::MatrixXd e(m.rows(), m.cols());
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) e(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = m(i, j);
  return e;
}

Outcome rome_closed_form() {
  const ConflictSet& set = corect::testing::conflict_set();
  std::vector<std::vector<TokenId>> prompts;
  for (const auto& f : set.facts) prompts.push_back(query_prompt(f.subject, f.relation));
  for (const auto& e : set.examples) prompts.push_back(e.prompt.ctx_tokens);
  double exact = 0, ratio = 0;
  int worse = 0, trials = 0, emitted = 0;
  std::mt19937_64 rng(5);
  for (std::size_t i = 0; i < 10; ++i) {
    const auto& e = set.examples[i];
    const RomeEdit edit = rome_edit(set.weights, e.prompt.ctx_tokens, e.fact.memory_layer, e.gold, prompts);
    const ModelWeights edited = apply_edit(set.weights, edit);
    const Vec got = matvec(edited.layer(edit.layer).W_down, edit.m_star);
    for (std::size_t j = 0; j < got.size(); ++j) exact = std::max(exact, std::abs(got[j] - edit.v_star[j]));
    emitted += argmax(forward_traced(edited, e.prompt.ctx_tokens).logits) == e.gold;

    const Eigen::MatrixXd dW = to_eigen(edit.delta_W);
    const Eigen::JacobiSVD<Eigen::MatrixXd> svd(dW);
    ratio = std::max(ratio, svd.singularValues()(1) / svd.singularValues()(0));

    const Eigen::MatrixXd C = to_eigen(edit.C);
    const Eigen::VectorXd m = Eigen::Map<const Eigen::VectorXd>(edit.m_star.data(), static_cast<Eigen::Index>(edit.m_star.size()));
    const double best = (dW * C * dW.transpose()).trace();
    for (int k = 0; k < 100; ++k) {
      Eigen::MatrixXd Z(dW.rows(), dW.cols());
      std::normal_distribution<double> normal;
      for (Eigen::Index a = 0; a < Z.size(); ++a) Z.data()[a] = normal(rng);
      Z -= (Z * m) * m.transpose() / m.squaredNorm();  // keeps (W0 + dW') m* = v*
      Z *= (0.01 + 0.01 * k) * dW.norm() / Z.norm();
      const Eigen::MatrixXd other = dW + Z;
      worse += (other * C * other.transpose()).trace() < best;
      ++trials;
    }
  }
  const bool ok = exact <= 1e-6 && ratio <= 1e-8 && worse == 0;
  return {ok, "max |(W0+dW)m* - v*| = " + fmt("%.3g", exact) + ", max s2/s1 = " + fmt("%.3g", ratio) + ", " +
                  std::to_string(worse) + "/" + std::to_string(trials) + " feasible perturbations beat the closed form, " +
                  std::to_string(emitted) + "/10 edited models emit the target"};
}

// --- 6 ---------------------------------------------------------------------------
Outcome causal_localization() {
  int hits = 0, total = 0;
  for (std::uint64_t seed : {1, 2, 3}) {
    const ConflictSet set = generate_conflict_set(ModelConfig{}, 1, seed, 0.0);
    const double sigma = default_noise_sigma(set.weights);
    for (const auto& f : set.facts) {
      const auto q = query_prompt(f.subject, f.relation);
      const auto rep = causal_trace(set.weights, q, 2, 3, f.parametric_answer, sigma, 5, seed * 100 + static_cast<std::uint64_t>(total));
      hits += rep.l_rome == f.memory_layer;
      ++total;
    }
  }
  const double frac = static_cast<double>(hits) / total;
  return {total >= 50 && frac >= 0.9,
          "l_rome == memory_layer in " + std::to_string(hits) + "/" + std::to_string(total) + " prompts"};
}

// --- 7 ---------------------------------------------------------------------------
Outcome recall_vs_oracle() {
  ExperimentConfig cfg;
  cfg.methods = {"corect"};
  const auto recs = run_experiment(cfg, conflicts200());
  const SummaryRow row = summarize(recs).front();
  const double mean = row.mean_recall.value_or(0.0);
  return {mean >= 0.70, "mean recall = " + fmt("%.3f", mean) + ", pooled recall = " +
                            fmt("%.3f", row.pooled_recall.value_or(0.0)) + ", mean |L_supp| = " +
                            fmt("%.2f", row.mean_L_supp) + " on " + std::to_string(row.n) + " conflicts"};
}

// --- 8 ---------------------------------------------------------------------------
std::vector<ResultRecord> greedy_vs_corect(const ConflictSet& set) {
  ExperimentConfig cfg;
  cfg.methods = {"greedy", "corect"};
  cfg.compute_recall = false;
  return run_experiment(cfg, set);
}

Outcome end_to_end() {
  const auto conf = greedy_vs_corect(conflicts200());
  const auto agree = greedy_vs_corect(agreeing200());
  const double g = accuracy(conf, "greedy"), c = accuracy(conf, "corect");
  const double ga = accuracy(agree, "greedy"), ca = accuracy(agree, "corect");
  const bool ok = g <= 0.10 && c >= 0.80 && ca >= ga - 0.02;
  return {ok, "conflicts: greedy " + fmt("%.3f", g) + ", corect " + fmt("%.3f", c) + "; no-conflict: greedy " +
                  fmt("%.3f", ga) + ", corect " + fmt("%.3f", ca)};
}

// --- 9 ---------------------------------------------------------------------------
Outcome alpha_concavity() {
  ExperimentConfig cfg;
  const auto pts = run_sweep(cfg, conflicts200(), SweepAxis::alpha);
  const fs::path csv = out_root() / "sweep_alpha.csv";
  emit_sweep_csv(pts, csv);
  auto at = [&](double a) {
    for (const auto& p : pts)
      if (p.x == a) return p.mean;
    return -1.0;
  };
  const bool ok = at(1.0) >= at(0.0) && at(1.0) >= at(2.0) && fs::exists(csv);
  std::string desc;
  for (const auto& p : pts) desc += "acc(" + fmt("%g", p.x) + ")=" + fmt("%.3f", p.mean) + " ";
  return {ok, desc + "-> " + csv.string()};
}

// --- 10 --------------------------------------------------------------------------
Outcome flip_analog() {
  ExperimentConfig cfg;
  cfg.methods = {"greedy"};
  cfg.compute_recall = false;
  const auto recs = run_experiment(cfg, conflicts200());
  int fails = 0, reached = 0, middle = 0, last = 0;
  for (const auto& r : recs) {
    if (r.correct) continue;
    ++fails;
    reached += std::find(r.gold_ranks.begin(), r.gold_ranks.end(), 1u) != r.gold_ranks.end();
    middle += r.flip == FlipLabel::middle_flip;
    last += r.flip == FlipLabel::last_layer_flip;
  }
  const bool ok = fails > 0 && 2 * reached >= fails;
  return {ok, std::to_string(reached) + "/" + std::to_string(fails) + " greedy failures reach rank 1 (middle " +
                  std::to_string(middle) + ", last-layer " + std::to_string(last) + ")"};
}

// --- 11 --------------------------------------------------------------------------
Outcome baseline_identities() {
  const ConflictSet& set = conflicts200();
  int cad_same = 0, ada_same = 0, valid = 0, steps = 0;
  const DecodeOptions opts{3, false, false};
  auto is_valid = [](const ProbDist& p) {
    double s = 0;
    for (double x : p.probs()) {
      if (!(x >= 0.0 && x <= 1.0)) return false;
      s += x;
    }
    return std::abs(s - 1.0) <= 1e-6;
  };
  for (std::size_t i = 0; i < 50; ++i) {
    const auto& e = set.examples[i];
    const auto greedy = decode_greedy(set.weights, e.prompt.ctx_tokens, opts);
    cad_same += decode_baseline(set.weights, e.prompt, {BaselineMethod::cad, 0.0, 0.25}, opts).tokens == greedy;

    const ProbDist pc = softmax(forward_traced(set.weights, e.prompt.ctx_tokens).logits);
    const ProbDist pn = softmax(forward_traced(set.weights, e.prompt.null_tokens).logits);
    const AdaptiveStep same = adacad_step(pc, pc);
    ada_same += same.alpha_t == 0.0 && argmax(same.dist.probs()) == greedy.front();

    for (const ProbDist& d : {cad_step(pc, pn, 1.0), adacad_step(pc, pn).dist, coiecd_step(pc, pn, 0.25, 1.0).dist,
                              cad_step(pc, pn, 0.0), same.dist}) {
      valid += is_valid(d);
      ++steps;
    }
  }
  const bool ok = cad_same == 50 && ada_same == 50 && valid == steps;
  return {ok, "CAD(alpha=0) == greedy on " + std::to_string(cad_same) + "/50, AdaCAD(P_ctx==P_null) == greedy on " +
                  std::to_string(ada_same) + "/50, valid distributions " + std::to_string(valid) + "/" +
                  std::to_string(steps)};
}

// --- 12 --------------------------------------------------------------------------
std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Outcome determinism() {
  const fs::path root = out_root() / "determinism";
  fs::remove_all(root);
  fs::create_directories(root);
  const fs::path config = root / "config.json";
  {
    std::ofstream out(config);
    out << R"({"n_examples": 40, "conflict_fraction": 0.75, "seed": 7, "threads": 0})" << '\n';
  }
  int codes = 0;
  for (const char* run : {"a", "b"}) {
    const std::string cmd = std::string("\"") + CORECT_CLI_PATH + "\" --config \"" + config.string() + "\" --out \"" +
                            (root / run).string() + "\" compare > \"" + (root / run).string() + ".log\" 2>&1";
    codes += std::system(cmd.c_str()) != 0;
  }
  const std::string a = slurp(root / "a" / "detail.jsonl");
  const std::string b = slurp(root / "b" / "detail.jsonl");
  const bool ok = codes == 0 && !a.empty() && a == b;
  return {ok, "two compare runs: " + std::to_string(a.size()) + " and " + std::to_string(b.size()) + " bytes, " +
                  (a == b ? "identical" : "different") + (codes ? ", a run failed" : "")};
}

}  // namespace

int main() {
  const std::vector<Criterion> criteria{
      {1, "residual-stream identity", 10, residual_identity},
      {2, "logit-lens decomposition", 10, decomposition},
      {3, "patch geometry and sign guarantee", 5, patch_geometry},
      {4, "first-order validity", 30, first_order},
      {5, "rank-one edit closed form", 60, rome_closed_form},
      {6, "causal tracing localization", 300, causal_localization},
      {7, "recall vs oracle", 600, recall_vs_oracle},
      {8, "end-to-end rectification", 600, end_to_end},
      {9, "alpha concavity", 900, alpha_concavity},
      {10, "flip-phenomenon analog", 300, flip_analog},
      {11, "baseline identities", 30, baseline_identities},
      {12, "determinism", 1e9, determinism},
  };
  // shared sets are built once up front so no criterion is charged for them
  (void)corect::testing::conflict_set();
  (void)conflicts200();
  (void)agreeing200();

  int failed = 0;
  for (const auto& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_time = secs < c.budget_s;
    const bool pass = o.ok && in_time;
    failed += !pass;
    std::string budget = c.budget_s < 1e8 ? " < " + fmt("%g", c.budget_s) + "s" : "";
    std::printf("%s [%2d] %s: %s (%.1fs%s%s)\n", pass ? "PASS" : "FAIL", c.id, c.name.c_str(), o.detail.c_str(), secs,
                budget.c_str(), in_time ? "" : ", over budget");
    std::fflush(stdout);
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
