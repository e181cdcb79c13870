#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "graph.hpp"
#include "model.hpp"

namespace cocn {

// ---------------------------------------------------------------------------
// Training configuration

struct TrainConfig {
  double lr = 1e-3;
  double weight_decay = 0.0;
  int max_epochs = 200;
  int early_stop_patience = 0;  // 0 = task default (100 graph, 150 node)
  int batch_size = 1;
  std::uint64_t seed = 0;
  int folds = 10;

  // Patience with the task default applied.
  int patience_for(Task task) const;
  // Throws ConfigError; cv additionally requires folds >= 2.
  void validate(Task task, bool cv) const;
};

TrainConfig train_config_from_json(const nlohmann::json& j);
nlohmann::json train_config_to_json(const TrainConfig& cfg);

// ---------------------------------------------------------------------------
// Metrics

struct EpochStats {
  double train_loss = 0.0;
  double val_loss = 0.0;
  double seconds = 0.0;
};

struct FoldResult {
  int fold = 0;
  double accuracy = 0.0;
  double auc = 0.0;  // NaN unless the task is binary
  double test_loss = 0.0;
  int best_epoch = -1;
  int epochs_run = 0;
  bool diverged = false;
  std::vector<EpochStats> curve;
};

struct MetricsReport {
  std::vector<FoldResult> folds;
  double mean_accuracy = 0.0, std_accuracy = 0.0;
  double mean_auc = 0.0, std_auc = 0.0;  // NaN unless binary
};

double accuracy_score(const std::vector<int>& pred,
                      const std::vector<int>& truth);

// Rank-sum (Mann-Whitney) ROC AUC with average ranks on ties; scores are
// the positive-class scores, labels in {0,1}. NaN when one class is absent.
double roc_auc(const std::vector<double>& scores,
               const std::vector<int>& labels);

// ---------------------------------------------------------------------------
// Training

// Seeded shuffle split into `folds` near-equal disjoint index blocks
// covering [0, count).
std::vector<std::vector<int>> fold_partition(int count, int folds,
                                             std::uint64_t seed);

// Variant-dispatched forward pass (segment models build their batch here).
Forward run_forward(Tape& t, const Graph& g, const ModelConfig& cfg,
                    const StagedParams& sp, const ModelParams& params,
                    bool training, std::mt19937_64* rng);

struct EvalResult {
  double loss = 0.0;
  double accuracy = 0.0;
  double auc = 0.0;  // NaN unless binary
};

EvalResult evaluate_split(const Dataset& ds, const std::vector<int>& idx,
                          const ModelConfig& cfg, const ModelParams& params);

struct TrainOutcome {
  ModelParams params;  // best-validation-loss parameters
  FoldResult result;   // accuracy/auc filled only by cross_validate
};

// Adam training with early stopping on validation loss (strict improvement
// resets the patience streak). A non-finite loss aborts the run and keeps
// the best parameters seen so far.
TrainOutcome train_on_split(const Dataset& ds,
                            const std::vector<int>& train_idx,
                            const std::vector<int>& val_idx,
                            const ModelConfig& mcfg, const TrainConfig& tcfg,
                            std::uint64_t seed);

// k-fold cross-validation: per fold, ~10% of the training block is held out
// for early stopping and the rest trains; the fold block is the test set.
// Deterministic under tcfg.seed. best_params, when given, receives the
// parameters of the highest-test-accuracy fold (ties: lowest fold index).
MetricsReport cross_validate(const Dataset& ds, const ModelConfig& mcfg,
                             const TrainConfig& tcfg,
                             ModelParams* best_params = nullptr);

// ---------------------------------------------------------------------------
// Isomorphism testing

// Pooled pre-classifier embedding distance under randomly initialized
// seeded weights; a pair counts as undistinguished only when the max-norm
// embedding distance stays below epsilon under every seed. Graphs get
// degree one-hot features (shared width); cfg must use implicit positions.
// pair_distances, when given, receives each pair's widest separation over
// the seeds.
int isomorphism_test(const std::vector<std::pair<Graph, Graph>>& pairs,
                     ModelConfig cfg, double epsilon,
                     const std::vector<std::uint64_t>& seeds,
                     std::vector<double>* pair_distances = nullptr);

// All unordered pairs of the given graphs.
std::vector<std::pair<Graph, Graph>> all_graph_pairs(
    const std::vector<Graph>& graphs);

// ---------------------------------------------------------------------------
// Synthetic graphs

Graph make_ring_graph(int n);             // features: unit-circle coordinates
Graph make_grid_graph(int rows, int cols);  // features: scaled (row, col)
Graph make_er_graph(int n, double avg_degree, std::mt19937_64& rng);

// Minimum upper-triangle adjacency bitmask over all vertex orders; exact
// isomorphism invariant for n <= 8.
std::uint64_t canonical_code(const Graph& g);

// Random pairs of same-size graphs proven non-isomorphic by canonical code.
std::vector<std::pair<Graph, Graph>> random_nonisomorphic_pairs(
    int count, int n, std::mt19937_64& rng);

// ---------------------------------------------------------------------------
// Reconstruction autoencoder

struct ReconstructionResult {
  double mse = 0.0;    // best reconstruction error reached
  Matrix recovered;    // reconstructed coordinates at the best epoch
};

// Trains a position MLP so that composing the relaxed permutation with its
// transpose reproduces the input coordinates. hard=true swaps in the ranked
// permutation and its exact inverse (no training needed; zero error).
ReconstructionResult reconstruction_experiment(const Graph& g, double tau,
                                               const TrainConfig& tcfg,
                                               bool hard = false);

// ---------------------------------------------------------------------------
// Timing

struct BenchRow {
  std::string variant;
  int n = 0;
  double seconds = 0.0;
  std::string status;  // "ok", "oom", or "refused"
};

// One optimization epoch (forward, backward, Adam) per variant and size on
// a degree-`avg_degree` random graph with 8 random features per node.
// The expanded variant refuses n > 20000; allocation failures become
// "oom" rows instead of crashes.
std::vector<BenchRow> timing_benchmark(const std::vector<Variant>& variants,
                                       const std::vector<int>& sizes,
                                       double avg_degree, std::uint64_t seed);

ModelConfig bench_model_config(Variant variant);

// ---------------------------------------------------------------------------
// Output files

std::string format_double(double v);  // shortest round-trippable decimal

void write_csv(const std::string& path,
               const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows);
std::vector<std::vector<std::string>> read_csv(const std::string& path);

// 8-bit binary PGM (P5), values linearly rescaled to [0, 255].
void write_pgm(const std::string& path, const Matrix& m);

nlohmann::json metrics_to_json(const MetricsReport& report);
void write_metrics_json(const std::string& path, const MetricsReport& report,
                        const nlohmann::json& provenance);
void write_folds_csv(const std::string& path, const MetricsReport& report);
void write_timings_csv(const std::string& path,
                       const std::vector<BenchRow>& rows);

// Head-0 permutation heatmaps for the first graph: ahat.pgm holds the
// permuted adjacency, pxxp.pgm the permuted feature Gram matrix.
void permviz_render(const Graph& g, const ModelConfig& cfg,
                    const ModelParams& params, const std::string& out_dir);

}  // namespace cocn
