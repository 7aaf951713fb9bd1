#include "corect/workbench.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <random>
#include <sstream>
#include <thread>

#include "json.hpp"

#include "corect/errors.hpp"
#include "corect/oracle.hpp"

namespace corect {

using json = nlohmann::ordered_json;

namespace {

template <typename Fn>
void parallel_for(std::size_t n, int threads, Fn&& fn) {
  std::size_t workers = threads > 0 ? static_cast<std::size_t>(threads)
                                    : std::max<std::size_t>(1, std::thread::hardware_concurrency());
  workers = std::min(workers, n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < workers; ++t) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
          next = n;
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

TokenId random_object(const TokenLayout& lay, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> pick(0, lay.n_objects() - 1);
  return lay.first_object() + pick(rng);
}

/// Shared per-example facts independent of the decoding method.
struct ExampleContext {
  RankTrajectory gold_traj;
  std::vector<int> l_star;
  bool have_l_star = false;
};

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) h = (h ^ c) * 1099511628211ULL;
  return h;
}

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(10) << v;
  return os.str();
}

template <typename T>
void read_field(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

void reject_unknown(const json& j, std::initializer_list<const char*> known, const char* where) {
  for (const auto& [key, value] : j.items()) {
    if (std::find_if(known.begin(), known.end(), [&](const char* k) { return key == k; }) == known.end()) {
      throw ValidationError(std::string(where) + ": unknown field '" + key + "'");
    }
  }
}

}  // namespace

std::string to_string(ExampleKind k) { return k == ExampleKind::conflict ? "conflict" : "no_conflict"; }

ConflictSet generate_conflict_set(const ModelConfig& cfg, int n, std::uint64_t seed, double conflict_fraction,
                                  const GeneratorConfig& gen) {
  if (n < 1) throw ValidationError("generate_conflict_set: n must be at least 1");
  if (!(conflict_fraction >= 0.0 && conflict_fraction <= 1.0)) {
    throw ValidationError("generate_conflict_set: conflict_fraction must lie in [0,1]");
  }
  cfg.validate();
  const TokenLayout lay = TokenLayout::for_config(cfg, gen.tuning.n_subjects);
  if (gen.n_facts < 1 || gen.n_facts > lay.n_subjects) {
    throw CapacityError("generate_conflict_set: n_facts must lie in 1.." + std::to_string(lay.n_subjects));
  }
  if (cfg.max_seq < 6) throw CapacityError("generate_conflict_set: max_seq must be at least 6");

  ConflictSet set;
  std::mt19937_64 fact_rng(seed);
  for (int i = 0; i < gen.n_facts; ++i) {
    FactSpec f;
    f.subject = lay.first_subject() + i;
    f.relation = lay.first_relation() + i % lay.n_relations;
    f.parametric_answer = random_object(lay, fact_rng);
    f.memory_layer = gen.memory_layer;
    f.memory_strength = gen.memory_strength;
    f.copy_layer = gen.copy_layer;
    f.copy_strength = gen.copy_strength;
    set.facts.push_back(f);
  }
  set.weights = implant_model(cfg, set.facts, seed, gen.tuning);

  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  const auto n_conflict = static_cast<std::size_t>(std::llround(conflict_fraction * n));
  std::vector<bool> is_conflict(static_cast<std::size_t>(n), false);
  std::fill(is_conflict.begin(), is_conflict.begin() + static_cast<std::ptrdiff_t>(n_conflict), true);
  std::shuffle(is_conflict.begin(), is_conflict.end(), rng);
  for (int i = 0; i < n; ++i) {
    const FactSpec& f = set.facts[static_cast<std::size_t>(i % gen.n_facts)];
    // Drawn for every example so paired sets stay aligned whatever the fraction.
    TokenId c = f.parametric_answer;
    while (c == f.parametric_answer) c = random_object(lay, rng);
    ConflictExample e;
    e.id = "ex" + std::to_string(i);
    e.fact = f;
    e.kind = is_conflict[static_cast<std::size_t>(i)] ? ExampleKind::conflict : ExampleKind::no_conflict;
    e.parametric = f.parametric_answer;
    e.gold = e.kind == ExampleKind::conflict ? c : f.parametric_answer;
    e.prompt = ConflictPrompt::from_context(context_prompt(e.gold, f.subject, f.relation), 1, 3);
    e.subject_begin = 4;
    e.subject_end = 5;
    set.examples.push_back(std::move(e));
  }
  return set;
}

std::string to_jsonl_line(const ConflictExample& e) {
  json j;
  j["id"] = e.id;
  j["kind"] = to_string(e.kind);
  j["subject"] = e.fact.subject;
  j["relation"] = e.fact.relation;
  j["parametric"] = e.parametric;
  j["gold"] = e.gold;
  j["memory_layer"] = e.fact.memory_layer;
  j["memory_strength"] = e.fact.memory_strength;
  j["copy_layer"] = e.fact.copy_layer;
  j["copy_strength"] = e.fact.copy_strength;
  j["ctx_tokens"] = e.prompt.ctx_tokens;
  j["null_tokens"] = e.prompt.null_tokens;
  j["context_span"] = {e.prompt.span_begin, e.prompt.span_end};
  j["subject_span"] = {e.subject_begin, e.subject_end};
  return j.dump();
}

ConflictExample conflict_example_from_json(const std::string& line) {
  try {
    const json j = json::parse(line);
    ConflictExample e;
    e.id = j.at("id").get<std::string>();
    const auto kind = j.at("kind").get<std::string>();
    if (kind != "conflict" && kind != "no_conflict") throw ValidationError("example: bad kind '" + kind + "'");
    e.kind = kind == "conflict" ? ExampleKind::conflict : ExampleKind::no_conflict;
    e.fact.subject = j.at("subject").get<TokenId>();
    e.fact.relation = j.at("relation").get<TokenId>();
    e.fact.parametric_answer = j.at("parametric").get<TokenId>();
    e.fact.memory_layer = j.at("memory_layer").get<int>();
    e.fact.memory_strength = j.at("memory_strength").get<double>();
    e.fact.copy_layer = j.at("copy_layer").get<int>();
    e.fact.copy_strength = j.at("copy_strength").get<double>();
    e.parametric = e.fact.parametric_answer;
    e.gold = j.at("gold").get<TokenId>();
    const auto span = j.at("context_span").get<std::vector<std::size_t>>();
    const auto subj = j.at("subject_span").get<std::vector<std::size_t>>();
    if (span.size() != 2 || subj.size() != 2) throw ValidationError("example: spans need two entries");
    e.prompt.ctx_tokens = j.at("ctx_tokens").get<std::vector<TokenId>>();
    e.prompt.null_tokens = j.at("null_tokens").get<std::vector<TokenId>>();
    e.prompt.span_begin = span[0];
    e.prompt.span_end = span[1];
    e.prompt.validate();
    e.subject_begin = subj[0];
    e.subject_end = subj[1];
    if ((e.kind == ExampleKind::conflict) == (e.gold == e.parametric)) {
      throw ValidationError("example " + e.id + ": kind disagrees with gold/parametric tokens");
    }
    return e;
  } catch (const json::exception& ex) {
    throw ValidationError(std::string("example: malformed record: ") + ex.what());
  }
}

void write_examples_jsonl(const std::filesystem::path& path, const std::vector<ConflictExample>& examples) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  for (const auto& e : examples) out << to_jsonl_line(e) << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

std::vector<ConflictExample> read_examples_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<ConflictExample> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) out.push_back(conflict_example_from_json(line));
  }
  return out;
}

void ExperimentConfig::validate() const {
  model.validate();
  if (n_examples < 1) throw ValidationError("ExperimentConfig: n_examples must be at least 1");
  if (methods.empty()) throw ValidationError("ExperimentConfig: methods must be non-empty");
  for (const auto& m : methods) {
    if (m != "corect") baseline_from_string(m);
  }
  if (alpha_grid.empty() || k_grid.empty() || lambda_grid.empty()) {
    throw ValidationError("ExperimentConfig: sweep grids must be non-empty");
  }
  for (int k : k_grid)
    if (k < 1) throw ValidationError("ExperimentConfig: k grid values must be at least 1");
  for (double a : alpha_grid)
    if (!(a >= 0.0)) throw ValidationError("ExperimentConfig: alpha grid values must be >= 0");
  for (double l : lambda_grid)
    if (!(l >= 0.0)) throw ValidationError("ExperimentConfig: lambda grid values must be >= 0");
  selection.validate(model.L);
  baseline.validate();
  if (!(rectify.alpha >= 0.0)) throw ValidationError("ExperimentConfig: alpha must be >= 0");
  if (noise_samples < 1) throw ValidationError("ExperimentConfig: noise_samples must be at least 1");
  if (!(sigma >= 0.0)) throw ValidationError("ExperimentConfig: sigma must be >= 0");
  if (max_new < 1) throw ValidationError("ExperimentConfig: max_new must be at least 1");
  if (!(boundary_fraction > 0.0 && boundary_fraction < 1.0)) {
    throw ValidationError("ExperimentConfig: boundary_fraction must lie in (0,1)");
  }
}

ExperimentConfig experiment_config_from_json(const std::string& text) {
  ExperimentConfig c;
  try {
    const json j = json::parse(text);
    reject_unknown(j,
                   {"model", "generator", "seed", "n_examples", "conflict_fraction", "methods", "selection", "rectify",
                    "baseline", "alpha_grid", "k_grid", "lambda_grid", "compute_recall", "noise_samples", "sigma",
                    "boundary_fraction", "max_new", "threads", "out_dir"},
                   "config");
    if (j.contains("model")) {
      const json& m = j.at("model");
      reject_unknown(m, {"L", "d", "H", "d_ff", "vocab", "max_seq", "activation"}, "config.model");
      read_field(m, "L", c.model.L);
      read_field(m, "d", c.model.d);
      read_field(m, "H", c.model.H);
      read_field(m, "d_ff", c.model.d_ff);
      read_field(m, "vocab", c.model.vocab);
      read_field(m, "max_seq", c.model.max_seq);
      if (m.contains("activation")) {
        const auto a = m.at("activation").get<std::string>();
        if (a == "relu") c.model.activation = Activation::relu;
        else if (a == "gelu") c.model.activation = Activation::gelu;
        else throw ValidationError("config.model.activation: unknown '" + a + "'");
      }
    }
    if (j.contains("generator")) {
      const json& g = j.at("generator");
      reject_unknown(g, {"n_facts", "memory_strength", "copy_strength", "copy_layer", "memory_layer"},
                     "config.generator");
      read_field(g, "n_facts", c.generator.n_facts);
      read_field(g, "memory_strength", c.generator.memory_strength);
      read_field(g, "copy_strength", c.generator.copy_strength);
      read_field(g, "copy_layer", c.generator.copy_layer);
      read_field(g, "memory_layer", c.generator.memory_layer);
    }
    read_field(j, "seed", c.seed);
    read_field(j, "n_examples", c.n_examples);
    read_field(j, "conflict_fraction", c.conflict_fraction);
    read_field(j, "methods", c.methods);
    if (j.contains("selection")) {
      const json& s = j.at("selection");
      reject_unknown(s, {"k", "M", "lambda", "eps", "lens"}, "config.selection");
      read_field(s, "k", c.selection.k);
      read_field(s, "M", c.selection.M);
      read_field(s, "lambda", c.selection.lambda);
      read_field(s, "eps", c.selection.eps);
      if (s.contains("lens")) c.selection.lens = lens_mode_from_string(s.at("lens").get<std::string>());
    }
    if (j.contains("rectify")) {
      const json& r = j.at("rectify");
      reject_unknown(r, {"alpha", "mode"}, "config.rectify");
      read_field(r, "alpha", c.rectify.alpha);
      if (r.contains("mode")) c.rectify.mode = rect_mode_from_string(r.at("mode").get<std::string>());
    }
    if (j.contains("baseline")) {
      const json& b = j.at("baseline");
      reject_unknown(b, {"cad_alpha", "coiecd_lambda"}, "config.baseline");
      read_field(b, "cad_alpha", c.baseline.cad_alpha);
      read_field(b, "coiecd_lambda", c.baseline.coiecd_lambda);
    }
    read_field(j, "alpha_grid", c.alpha_grid);
    read_field(j, "k_grid", c.k_grid);
    read_field(j, "lambda_grid", c.lambda_grid);
    read_field(j, "compute_recall", c.compute_recall);
    read_field(j, "noise_samples", c.noise_samples);
    read_field(j, "sigma", c.sigma);
    read_field(j, "boundary_fraction", c.boundary_fraction);
    read_field(j, "max_new", c.max_new);
    read_field(j, "threads", c.threads);
    read_field(j, "out_dir", c.out_dir);
  } catch (const json::exception& ex) {
    throw ValidationError(std::string("config: ") + ex.what());
  }
  c.validate();
  return c;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return experiment_config_from_json(ss.str());
}

std::string to_json(const ExperimentConfig& c) {
  json j;
  j["model"] = {{"L", c.model.L},         {"d", c.model.d},         {"H", c.model.H},
                {"d_ff", c.model.d_ff},   {"vocab", c.model.vocab}, {"max_seq", c.model.max_seq},
                {"activation", c.model.activation == Activation::relu ? "relu" : "gelu"}};
  j["generator"] = {{"n_facts", c.generator.n_facts},
                    {"memory_strength", c.generator.memory_strength},
                    {"copy_strength", c.generator.copy_strength},
                    {"copy_layer", c.generator.copy_layer},
                    {"memory_layer", c.generator.memory_layer}};
  j["seed"] = c.seed;
  j["n_examples"] = c.n_examples;
  j["conflict_fraction"] = c.conflict_fraction;
  j["methods"] = c.methods;
  j["selection"] = {{"k", c.selection.k},
                    {"M", c.selection.M},
                    {"lambda", c.selection.lambda},
                    {"eps", c.selection.eps},
                    {"lens", to_string(c.selection.lens)}};
  j["rectify"] = {{"alpha", c.rectify.alpha}, {"mode", to_string(c.rectify.mode)}};
  j["baseline"] = {{"cad_alpha", c.baseline.cad_alpha}, {"coiecd_lambda", c.baseline.coiecd_lambda}};
  j["alpha_grid"] = c.alpha_grid;
  j["k_grid"] = c.k_grid;
  j["lambda_grid"] = c.lambda_grid;
  j["compute_recall"] = c.compute_recall;
  j["noise_samples"] = c.noise_samples;
  j["sigma"] = c.sigma;
  j["boundary_fraction"] = c.boundary_fraction;
  j["max_new"] = c.max_new;
  j["threads"] = c.threads;
  j["out_dir"] = c.out_dir;
  return j.dump(2);
}

std::string to_jsonl_line(const ResultRecord& r) {
  json j;
  j["example_id"] = r.example_id;
  j["method"] = r.method;
  j["kind"] = to_string(r.kind);
  j["gold"] = r.gold;
  j["parametric"] = r.parametric;
  j["emitted"] = r.emitted;
  j["correct"] = r.correct;
  j["flip"] = to_string(r.flip);
  j["gold_ranks"] = r.gold_ranks;
  j["L_supp"] = r.L_supp;
  j["recall"] = r.recall ? json(*r.recall) : json(nullptr);
  j["l_star"] = r.l_star;
  json steps = json::array();
  for (const auto& s : r.steps) steps.push_back(json::parse(to_jsonl_line(s)));
  j["steps"] = std::move(steps);
  return j.dump();
}

std::vector<SummaryRow> summarize(const std::vector<ResultRecord>& records) {
  std::vector<SummaryRow> rows;
  std::vector<std::vector<const ResultRecord*>> groups;
  for (const auto& r : records) {
    auto it = std::find_if(rows.begin(), rows.end(), [&](const SummaryRow& s) { return s.method == r.method; });
    if (it == rows.end()) {
      SummaryRow fresh;
      fresh.method = r.method;
      rows.push_back(std::move(fresh));
      groups.emplace_back();
      it = rows.end() - 1;
    }
    groups[static_cast<std::size_t>(it - rows.begin())].push_back(&r);
  }
  for (std::size_t g = 0; g < rows.size(); ++g) {
    SummaryRow& row = rows[g];
    const auto& recs = groups[g];
    row.n = recs.size();
    double correct = 0.0;
    double supp = 0.0;
    double recall = 0.0;
    std::size_t n_recall = 0;
    std::vector<std::vector<int>> supps, stars;
    for (const ResultRecord* r : recs) {
      correct += r->correct ? 1.0 : 0.0;
      supp += static_cast<double>(r->L_supp.size());
      if (r->recall) {
        recall += *r->recall;
        ++n_recall;
        supps.push_back(r->L_supp);
        stars.push_back(r->l_star);
      }
    }
    row.accuracy = correct / static_cast<double>(row.n);
    row.mean_L_supp = supp / static_cast<double>(row.n);
    if (n_recall > 0) {
      row.mean_recall = recall / static_cast<double>(n_recall);
      row.pooled_recall = corect::pooled_recall(supps, stars);
    }
  }
  return rows;
}

namespace {

ResultRecord evaluate(const std::string& method, const ConflictExample& e, const ModelWeights& w,
                      const ExperimentConfig& cfg, ExampleContext& ctx) {
  ResultRecord r;
  r.example_id = e.id;
  r.method = method;
  r.kind = e.kind;
  r.gold = e.gold;
  r.parametric = e.parametric;
  DecodeOptions opts;
  opts.max_new = cfg.max_new;
  DecodeOutput out;
  if (method == "corect") {
    out = decode_corect(w, e.prompt, cfg.selection, cfg.rectify, opts);
    r.L_supp = out.steps.front().L_supp;
    if (cfg.compute_recall) {
      if (!ctx.have_l_star) {
        const double sigma = cfg.sigma > 0.0 ? cfg.sigma : default_noise_sigma(w);
        const std::uint64_t seed = cfg.seed * 1000003ULL + fnv1a(e.id) % 1000003ULL;
        ctx.l_star = causal_trace(w, e.prompt.ctx_tokens, e.subject_begin, e.subject_end, e.gold, sigma,
                                  cfg.noise_samples, seed)
                         .l_star;
        ctx.have_l_star = true;
      }
      r.l_star = ctx.l_star;
      r.recall = localization_recall(r.L_supp, r.l_star);
    }
  } else {
    BaselineConfig b = cfg.baseline;
    b.method = baseline_from_string(method);
    out = decode_baseline(w, e.prompt, b, opts);
  }
  r.emitted = out.tokens;
  r.steps = std::move(out.steps);
  r.correct = !r.emitted.empty() && r.emitted.front() == e.gold;
  r.gold_ranks = ctx.gold_traj.ranks;
  r.flip = classify_flip(ctx.gold_traj, r.emitted.front(), e.gold, cfg.boundary_fraction).label;
  return r;
}

}  // namespace

std::vector<ResultRecord> run_experiment(const ExperimentConfig& cfg, const ConflictSet& set) {
  cfg.validate();
  if (set.examples.empty()) throw ValidationError("run_experiment: empty conflict set");
  const std::size_t n = set.examples.size();
  const std::size_t n_methods = cfg.methods.size();
  std::vector<ResultRecord> records(n * n_methods);
  parallel_for(n, cfg.threads, [&](std::size_t i) {
    const ConflictExample& e = set.examples[i];
    ExampleContext ctx;
    const ForwardResult base = forward_traced(set.weights, e.prompt.ctx_tokens);
    ctx.gold_traj = rank_trajectory(base.trace, e.gold, set.weights, LensMode::final_ln);
    for (std::size_t m = 0; m < n_methods; ++m) {
      records[m * n + i] = evaluate(cfg.methods[m], e, set.weights, cfg, ctx);
    }
  });
  return records;
}

std::vector<ResultRecord> run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  const ConflictSet set =
      generate_conflict_set(cfg.model, cfg.n_examples, cfg.seed, cfg.conflict_fraction, cfg.generator);
  return run_experiment(cfg, set);
}

std::string to_string(SweepAxis a) {
  switch (a) {
    case SweepAxis::alpha: return "alpha";
    case SweepAxis::k: return "k";
    case SweepAxis::lambda: return "lambda";
  }
  return "unknown";
}

SweepAxis sweep_axis_from_string(const std::string& s) {
  if (s == "alpha") return SweepAxis::alpha;
  if (s == "k") return SweepAxis::k;
  if (s == "lambda") return SweepAxis::lambda;
  throw ValidationError("unknown sweep axis '" + s + "'");
}

std::vector<SweepPoint> run_sweep(const ExperimentConfig& cfg, const ConflictSet& set, SweepAxis axis) {
  cfg.validate();
  if (set.examples.empty()) throw ValidationError("run_sweep: empty conflict set");
  std::vector<double> xs;
  switch (axis) {
    case SweepAxis::alpha: xs = cfg.alpha_grid; break;
    case SweepAxis::lambda: xs = cfg.lambda_grid; break;
    case SweepAxis::k:
      for (int k : cfg.k_grid) xs.push_back(k);
      break;
  }
  std::vector<SweepPoint> points;
  for (double x : xs) {
    SelectionConfig sel = cfg.selection;
    RectifyConfig rect = cfg.rectify;
    if (axis == SweepAxis::alpha) rect.alpha = x;
    if (axis == SweepAxis::lambda) sel.lambda = x;
    if (axis == SweepAxis::k) sel.k = std::min(static_cast<int>(x), set.weights.cfg.L);
    DecodeOptions opts;
    opts.max_new = cfg.max_new;
    std::vector<double> hits(set.examples.size(), 0.0);
    parallel_for(set.examples.size(), cfg.threads, [&](std::size_t i) {
      const ConflictExample& e = set.examples[i];
      const DecodeOutput out = decode_corect(set.weights, e.prompt, sel, rect, opts);
      hits[i] = out.tokens.front() == e.gold ? 1.0 : 0.0;
    });
    SweepPoint p;
    p.x = x;
    p.n = hits.size();
    for (double h : hits) p.mean += h;
    p.mean /= static_cast<double>(p.n);
    if (p.n > 1) {
      double var = 0.0;
      for (double h : hits) var += (h - p.mean) * (h - p.mean);
      var /= static_cast<double>(p.n - 1);
      p.stderr_ = std::sqrt(var / static_cast<double>(p.n));
    }
    points.push_back(p);
  }
  return points;
}

std::string summary_csv(const std::vector<SummaryRow>& rows) {
  std::ostringstream os;
  os << "method,n,accuracy,mean_recall,pooled_recall,mean_L_supp\n";
  for (const auto& r : rows) {
    os << r.method << ',' << r.n << ',' << fmt(r.accuracy) << ','
       << (r.mean_recall ? fmt(*r.mean_recall) : "") << ','
       << (r.pooled_recall ? fmt(*r.pooled_recall) : "") << ',' << fmt(r.mean_L_supp) << '\n';
  }
  return os.str();
}

void emit_report(const std::vector<ResultRecord>& records, const std::filesystem::path& out_dir) {
  if (records.empty()) throw ValidationError("emit_report: no records");
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());
  {
    std::ofstream out(out_dir / "summary.csv", std::ios::trunc);
    if (!out) throw IoError("cannot write " + (out_dir / "summary.csv").string());
    out << summary_csv(summarize(records));
    if (!out) throw IoError("write failed for summary.csv");
  }
  std::ofstream out(out_dir / "detail.jsonl", std::ios::trunc);
  if (!out) throw IoError("cannot write " + (out_dir / "detail.jsonl").string());
  for (const auto& r : records) out << to_jsonl_line(r) << '\n';
  if (!out) throw IoError("write failed for detail.jsonl");
}

void emit_sweep_csv(const std::vector<SweepPoint>& points, const std::filesystem::path& path) {
  if (points.empty()) throw ValidationError("emit_sweep_csv: no points");
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << "x,mean,stderr\n";
  for (const auto& p : points) out << fmt(p.x) << ',' << fmt(p.mean) << ',' << fmt(p.stderr_) << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace corect
