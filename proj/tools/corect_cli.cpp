// Command-line front end for the workbench. Exit codes: 0 ok, 1 validation, 2 IO.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "corect/errors.hpp"
#include "corect/oracle.hpp"
#include "corect/workbench.hpp"

namespace fs = std::filesystem;
using namespace corect;

namespace {

struct Globals {
  std::optional<std::uint64_t> seed;
  std::string config;
  std::string out;
  std::string from;  // directory written by `gen`
};

ExperimentConfig resolve(const Globals& g) {
  ExperimentConfig cfg = g.config.empty() ? ExperimentConfig{} : load_experiment_config(g.config);
  if (g.seed) cfg.seed = *g.seed;
  if (!g.out.empty()) cfg.out_dir = g.out;
  cfg.validate();
  return cfg;
}

ConflictSet load_set(const Globals& g, const ExperimentConfig& cfg) {
  if (g.from.empty()) {
    return generate_conflict_set(cfg.model, cfg.n_examples, cfg.seed, cfg.conflict_fraction, cfg.generator);
  }
  ConflictSet set;
  set.weights = load_weights(fs::path(g.from) / "weights.bin");
  set.examples = read_examples_jsonl(fs::path(g.from) / "examples.jsonl");
  for (const auto& e : set.examples) set.facts.push_back(e.fact);
  return set;
}

const ConflictExample& find_example(const ConflictSet& set, const std::string& id) {
  for (const auto& e : set.examples)
    if (e.id == id) return e;
  throw ValidationError("no example with id '" + id + "'");
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

std::ofstream open_out(const fs::path& p) {
  std::ofstream out(p, std::ios::trunc);
  if (!out) throw IoError("cannot write " + p.string());
  return out;
}

void cmd_gen(const Globals& g) {
  const ExperimentConfig cfg = resolve(g);
  const ConflictSet set = load_set(g, cfg);
  const fs::path dir = cfg.out_dir;
  ensure_dir(dir);
  save_weights(set.weights, dir / "weights.bin");
  write_examples_jsonl(dir / "examples.jsonl", set.examples);
  open_out(dir / "config.json") << to_json(cfg) << '\n';
  std::cout << "wrote " << set.examples.size() << " examples to " << dir.string() << '\n';
}

void cmd_trace(const Globals& g, const std::string& id) {
  const ExperimentConfig cfg = resolve(g);
  const ConflictSet set = load_set(g, cfg);
  std::vector<TrajectoryRecord> recs;
  for (const auto& e : set.examples) {
    if (!id.empty() && e.id != id) continue;
    const ForwardResult r = forward_traced(set.weights, e.prompt.ctx_tokens);
    TrajectoryRecord t;
    t.example_id = e.id;
    t.gold = e.gold;
    t.final_pred = argmax(r.logits);
    t.mode = cfg.selection.lens;
    const RankTrajectory traj = rank_trajectory(r.trace, e.gold, set.weights, t.mode);
    t.ranks = traj.ranks;
    t.label = classify_flip(traj, t.final_pred, e.gold, cfg.boundary_fraction).label;
    std::cout << to_jsonl_line(t) << '\n';
    recs.push_back(std::move(t));
  }
  if (recs.empty()) throw ValidationError("no example with id '" + id + "'");
  ensure_dir(cfg.out_dir);
  write_trajectories_jsonl(fs::path(cfg.out_dir) / "trajectories.jsonl", recs);
}

void cmd_decode(const Globals& g, const std::string& id, const std::string& method) {
  const ExperimentConfig cfg = resolve(g);
  const ConflictSet set = load_set(g, cfg);
  const ConflictExample& e = find_example(set, id.empty() ? set.examples.front().id : id);
  DecodeOptions opts;
  opts.max_new = cfg.max_new;
  DecodeOutput out;
  if (method == "corect") {
    out = decode_corect(set.weights, e.prompt, cfg.selection, cfg.rectify, opts);
  } else {
    BaselineConfig b = cfg.baseline;
    b.method = baseline_from_string(method);
    out = decode_baseline(set.weights, e.prompt, b, opts);
  }
  for (const auto& s : out.steps) std::cout << to_jsonl_line(s) << '\n';
}

void cmd_compare(const Globals& g) {
  const ExperimentConfig cfg = resolve(g);
  const ConflictSet set = load_set(g, cfg);
  const auto records = run_experiment(cfg, set);
  emit_report(records, cfg.out_dir);
  std::cout << summary_csv(summarize(records));
}

void cmd_sweep(const Globals& g, const std::string& axis_name) {
  const ExperimentConfig cfg = resolve(g);
  const SweepAxis axis = sweep_axis_from_string(axis_name);
  const ConflictSet set = load_set(g, cfg);
  const auto points = run_sweep(cfg, set, axis);
  ensure_dir(cfg.out_dir);
  emit_sweep_csv(points, fs::path(cfg.out_dir) / ("sweep_" + axis_name + ".csv"));
  for (const auto& p : points) std::printf("%s=%g accuracy=%.4f stderr=%.4f n=%zu\n", axis_name.c_str(), p.x, p.mean, p.stderr_, p.n);
}

void cmd_causal(const Globals& g, const std::string& id, const std::string& target) {
  const ExperimentConfig cfg = resolve(g);
  const ConflictSet set = load_set(g, cfg);
  const ConflictExample& e = find_example(set, id.empty() ? set.examples.front().id : id);
  TokenId t = e.gold;
  if (target == "parametric") t = e.parametric;
  else if (target != "gold") throw ValidationError("--target must be gold or parametric");
  const double sigma = cfg.sigma > 0.0 ? cfg.sigma : default_noise_sigma(set.weights);
  const auto rep = causal_trace(set.weights, e.prompt.ctx_tokens, e.subject_begin, e.subject_end, t, sigma,
                                cfg.noise_samples, cfg.seed);
  std::cout << to_json(rep) << '\n';
}

void cmd_recall(const Globals& g) {
  ExperimentConfig cfg = resolve(g);
  cfg.methods = {"corect"};
  cfg.compute_recall = true;
  const ConflictSet set = load_set(g, cfg);
  const auto records = run_experiment(cfg, set);
  ensure_dir(cfg.out_dir);
  auto out = open_out(fs::path(cfg.out_dir) / "recall.jsonl");
  for (const auto& r : records) out << to_jsonl_line(r) << '\n';
  const SummaryRow row = summarize(records).front();
  std::printf("n=%zu mean_recall=%.4f pooled_recall=%.4f mean_L_supp=%.3f\n", row.n, row.mean_recall.value_or(0.0),
              row.pooled_recall.value_or(0.0), row.mean_L_supp);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"knowledge-conflict rectification workbench"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--seed", g.seed, "experiment seed");
  app.add_option("--config", g.config, "JSON file with ExperimentConfig fields");
  app.add_option("--out", g.out, "output directory");
  app.add_option("--from", g.from, "directory produced by `gen` to read weights and examples from");

  std::string id, method = "corect", axis = "alpha", target = "gold";
  auto* gen = app.add_subcommand("gen", "write a conflict set and its implanted weights");
  auto* trace = app.add_subcommand("trace", "rank trajectories and flip labels");
  trace->add_option("--example", id, "example id (default: all)");
  auto* decode = app.add_subcommand("decode", "run one method on one example and print its steps");
  decode->add_option("--example", id, "example id (default: first)");
  decode->add_option("--method", method, "corect|greedy|cad|adacad|coiecd");
  auto* compare = app.add_subcommand("compare", "run every configured method and write reports");
  auto* sweep = app.add_subcommand("sweep", "accuracy over a hyperparameter grid");
  sweep->add_option("--axis", axis, "alpha|k|lambda");
  auto* causal = app.add_subcommand("causal", "causal-trace report for one example");
  causal->add_option("--example", id, "example id (default: first)");
  causal->add_option("--target", target, "gold|parametric");
  auto* recall = app.add_subcommand("recall", "suppressive layers against the causal-trace oracle");

  for (auto* sub : {gen, trace, decode, compare, sweep, causal, recall}) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*gen) cmd_gen(g);
    else if (*trace) cmd_trace(g, id);
    else if (*decode) cmd_decode(g, id, method);
    else if (*compare) cmd_compare(g);
    else if (*sweep) cmd_sweep(g, axis);
    else if (*causal) cmd_causal(g, id, target);
    else if (*recall) cmd_recall(g);
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << '\n';
    return 2;
  } catch (const ValidationError& e) {
    std::cerr << "invalid input: " << e.what() << '\n';
    return 1;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
