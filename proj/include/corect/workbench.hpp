#pragma once

// Synthetic conflict sets over one implanted model, experiment orchestration,
// hyperparameter sweeps and CSV/JSONL reports.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "corect/baselines.hpp"
#include "corect/corect.hpp"
#include "corect/lens.hpp"
#include "corect/model.hpp"

namespace corect {

enum class ExampleKind { conflict, no_conflict };

std::string to_string(ExampleKind k);

struct ConflictExample {
  std::string id;
  FactSpec fact;
  ConflictPrompt prompt;
  TokenId gold = 0;        // the token the context states
  TokenId parametric = 0;  // the token stored in the weights
  ExampleKind kind = ExampleKind::conflict;
  std::size_t subject_begin = 0;  // subject span inside prompt.ctx_tokens
  std::size_t subject_end = 0;
};

struct GeneratorConfig {
  int n_facts = 24;
  double memory_strength = 3.0;
  double copy_strength = 1.0;
  int copy_layer = 1;
  int memory_layer = 2;
  ImplantTuning tuning;
};

struct ConflictSet {
  ModelWeights weights;
  std::vector<FactSpec> facts;
  std::vector<ConflictExample> examples;
};

/// Facts depend only on (cfg, gen, seed), so sets that differ only in conflict_fraction
/// share one model and pair up example by example.
ConflictSet generate_conflict_set(const ModelConfig& cfg, int n, std::uint64_t seed, double conflict_fraction,
                                  const GeneratorConfig& gen = {});

std::string to_jsonl_line(const ConflictExample& e);
ConflictExample conflict_example_from_json(const std::string& line);
void write_examples_jsonl(const std::filesystem::path& path, const std::vector<ConflictExample>& examples);
std::vector<ConflictExample> read_examples_jsonl(const std::filesystem::path& path);

struct ExperimentConfig {
  ModelConfig model;
  GeneratorConfig generator;
  std::uint64_t seed = 1;
  int n_examples = 200;
  double conflict_fraction = 1.0;
  std::vector<std::string> methods{"greedy", "corect", "cad", "adacad", "coiecd"};
  SelectionConfig selection;
  RectifyConfig rectify;
  BaselineConfig baseline;
  std::vector<double> alpha_grid{0.0, 0.5, 1.0, 2.0};
  std::vector<int> k_grid{1, 5, 10, 15, 20, 25};
  std::vector<double> lambda_grid{0.0, 0.25, 0.5, 0.8, 1.0};
  bool compute_recall = true;
  int noise_samples = 5;
  double sigma = 0.0;  // 0 selects the default noise scale
  double boundary_fraction = 0.9;
  int max_new = 1;
  int threads = 0;     // 0 uses the hardware concurrency
  std::string out_dir = "out";

  void validate() const;
};

ExperimentConfig experiment_config_from_json(const std::string& text);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);
std::string to_json(const ExperimentConfig& cfg);

struct ResultRecord {
  std::string example_id;
  std::string method;
  ExampleKind kind = ExampleKind::conflict;
  TokenId gold = 0;
  TokenId parametric = 0;
  std::vector<TokenId> emitted;
  bool correct = false;
  FlipLabel flip = FlipLabel::no_flip;
  std::vector<std::size_t> gold_ranks;
  std::vector<int> L_supp;
  std::optional<double> recall;
  std::vector<int> l_star;
  std::vector<StepDiagnostics> steps;
};

std::string to_jsonl_line(const ResultRecord& r);

struct SummaryRow {
  std::string method;
  std::size_t n = 0;
  double accuracy = 0.0;
  std::optional<double> mean_recall;
  std::optional<double> pooled_recall;
  double mean_L_supp = 0.0;
};

std::vector<SummaryRow> summarize(const std::vector<ResultRecord>& records);

/// Runs every configured method on every example of `set`. Examples are evaluated in
/// parallel; the record order is (method, example) regardless of thread timing.
std::vector<ResultRecord> run_experiment(const ExperimentConfig& cfg, const ConflictSet& set);

/// Generates the set described by cfg, then runs it.
std::vector<ResultRecord> run_experiment(const ExperimentConfig& cfg);

enum class SweepAxis { alpha, k, lambda };

std::string to_string(SweepAxis a);
SweepAxis sweep_axis_from_string(const std::string& s);

struct SweepPoint {
  double x = 0.0;
  double mean = 0.0;
  double stderr_ = 0.0;
  std::size_t n = 0;
};

/// CoRect accuracy on `set` at each grid value of one axis, others fixed from cfg.
/// k values above L are clamped to L.
std::vector<SweepPoint> run_sweep(const ExperimentConfig& cfg, const ConflictSet& set, SweepAxis axis);

/// summary.csv and detail.jsonl in out_dir. Throws ValidationError on empty records
/// before creating anything.
void emit_report(const std::vector<ResultRecord>& records, const std::filesystem::path& out_dir);

void emit_sweep_csv(const std::vector<SweepPoint>& points, const std::filesystem::path& path);

std::string summary_csv(const std::vector<SummaryRow>& rows);

}  // namespace corect
