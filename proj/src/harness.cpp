#include "harness.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <future>
#include <limits>
#include <new>
#include <numeric>
#include <utility>

#include "adam.hpp"
#include "ops.hpp"
#include "permutation.hpp"

namespace cocn {

using namespace op;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
      .count();
}

// Mean and sample standard deviation; std is 0 with fewer than two values.
std::pair<double, double> mean_std(const std::vector<double>& v) {
  if (v.empty()) return {kNaN, kNaN};
  double m = std::accumulate(v.begin(), v.end(), 0.0) /
             static_cast<double>(v.size());
  if (v.size() < 2) return {m, 0.0};
  double s2 = 0.0;
  for (double x : v) s2 += (x - m) * (x - m);
  return {m, std::sqrt(s2 / static_cast<double>(v.size() - 1))};
}

const char* variant_label(Variant v) {
  switch (v) {
    case Variant::Vanilla: return "vanilla";
    case Variant::Expanded: return "expanded";
    case Variant::Sparse: return "sparse";
    case Variant::Segment: return "segment";
  }
  return "vanilla";
}

int graph_label(const Graph& g) {
  if (!g.label) throw DataError("graph-level task on a graph without a label");
  return *g.label;
}

const std::vector<int>& node_labels(const Graph& g) {
  if (static_cast<int>(g.node_labels.size()) != g.n)
    throw DataError("node-level task needs one label per node, got " +
                    std::to_string(g.node_labels.size()) + " for " +
                    std::to_string(g.n) + " nodes");
  return g.node_labels;
}

// Mean loss over a batch of graphs on one tape: graph tasks stack the
// per-graph logit rows, node tasks average the per-graph mean losses.
Var batch_loss(Tape& t, const Dataset& ds, const std::vector<int>& idx,
               size_t first, size_t count, const ModelConfig& cfg,
               const StagedParams& sp, const ModelParams& params,
               bool training, std::mt19937_64* rng) {
  if (cfg.task == Task::GraphClassification) {
    std::vector<Var> cols;
    std::vector<int> labels;
    cols.reserve(count);
    labels.reserve(count);
    for (size_t i = first; i < first + count; i++) {
      const Graph& g = ds.graphs[static_cast<size_t>(idx[i])];
      cols.push_back(
          transpose(run_forward(t, g, cfg, sp, params, training, rng).logits));
      labels.push_back(graph_label(g));
    }
    Var logits = transpose(cols.size() > 1 ? concat_cols(cols) : cols[0]);
    return classification_loss(t, logits, labels, cfg.num_classes);
  }
  Var total;
  for (size_t i = first; i < first + count; i++) {
    const Graph& g = ds.graphs[static_cast<size_t>(idx[i])];
    Forward f = run_forward(t, g, cfg, sp, params, training, rng);
    Var l = classification_loss(t, f.logits, node_labels(g), cfg.num_classes);
    total = total ? add(total, l) : l;
  }
  return scale(total, 1.0 / static_cast<double>(count));
}

}  // namespace

// ---------------------------------------------------------------------------
// Training configuration

int TrainConfig::patience_for(Task task) const {
  if (early_stop_patience > 0) return early_stop_patience;
  return task == Task::NodeClassification ? 150 : 100;
}

void TrainConfig::validate(Task task, bool cv) const {
  (void)task;
  if (!(lr >= 0.0)) throw ConfigError("lr must be >= 0");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
  if (max_epochs < 1) throw ConfigError("max_epochs must be >= 1");
  if (early_stop_patience < 0)
    throw ConfigError("early_stop_patience must be >= 0");
  if (early_stop_patience > max_epochs)
    throw ConfigError("early_stop_patience " +
                      std::to_string(early_stop_patience) +
                      " exceeds max_epochs " + std::to_string(max_epochs));
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (cv && folds < 2)
    throw ConfigError("cross-validation needs folds >= 2, got " +
                      std::to_string(folds));
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.lr = j.value("lr", c.lr);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.max_epochs = j.value("max_epochs", c.max_epochs);
  c.early_stop_patience = j.value("early_stop_patience", c.early_stop_patience);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.seed = j.value("seed", c.seed);
  c.folds = j.value("folds", c.folds);
  return c;
}

nlohmann::json train_config_to_json(const TrainConfig& cfg) {
  nlohmann::json j;
  j["lr"] = cfg.lr;
  j["weight_decay"] = cfg.weight_decay;
  j["max_epochs"] = cfg.max_epochs;
  j["early_stop_patience"] = cfg.early_stop_patience;
  j["batch_size"] = cfg.batch_size;
  j["seed"] = cfg.seed;
  j["folds"] = cfg.folds;
  return j;
}

// ---------------------------------------------------------------------------
// Metrics

double accuracy_score(const std::vector<int>& pred,
                      const std::vector<int>& truth) {
  if (pred.size() != truth.size())
    throw DimensionError(std::to_string(pred.size()) + " predictions vs " +
                         std::to_string(truth.size()) + " labels");
  if (truth.empty()) return kNaN;
  long hits = 0;
  for (size_t i = 0; i < truth.size(); i++) hits += pred[i] == truth[i];
  return static_cast<double>(hits) / static_cast<double>(truth.size());
}

double roc_auc(const std::vector<double>& scores,
               const std::vector<int>& labels) {
  if (scores.size() != labels.size())
    throw DimensionError(std::to_string(scores.size()) + " scores vs " +
                         std::to_string(labels.size()) + " labels");
  const size_t n = scores.size();
  long n_pos = 0;
  for (size_t i = 0; i < n; i++) {
    if (labels[i] != 0 && labels[i] != 1)
      throw DataError("AUC label outside {0,1}: " + std::to_string(labels[i]));
    n_pos += labels[i];
  }
  const long n_neg = static_cast<long>(n) - n_pos;
  if (n_pos == 0 || n_neg == 0) return kNaN;

  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](int a, int b) { return scores[a] < scores[b]; });
  // rank sum of the positive class, with tied scores sharing their average
  // 1-based rank
  double rank_pos = 0.0;
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) j++;
    double avg_rank = 0.5 * static_cast<double>(i + 1 + j);  // mean of i+1..j
    for (size_t k = i; k < j; k++)
      if (labels[order[k]] == 1) rank_pos += avg_rank;
    i = j;
  }
  double u = rank_pos - 0.5 * static_cast<double>(n_pos) *
                            static_cast<double>(n_pos + 1);
  return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

// ---------------------------------------------------------------------------
// Training

std::vector<std::vector<int>> fold_partition(int count, int folds,
                                             std::uint64_t seed) {
  if (folds < 1) throw ConfigError("folds must be >= 1");
  if (count < folds)
    throw ConfigError(std::to_string(folds) + " folds over only " +
                      std::to_string(count) + " items");
  std::vector<int> order(count);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<int>> out(folds);
  int base = count / folds, extra = count % folds, at = 0;
  for (int f = 0; f < folds; f++) {
    int len = base + (f < extra ? 1 : 0);
    out[f].assign(order.begin() + at, order.begin() + at + len);
    at += len;
  }
  return out;
}

Forward run_forward(Tape& t, const Graph& g, const ModelConfig& cfg,
                    const StagedParams& sp, const ModelParams& params,
                    bool training, std::mt19937_64* rng) {
  if (cfg.variant == Variant::Segment) {
    Vector r_global = segment_global_positions(g, cfg, params);
    std::vector<int> anchors;
    if (cfg.task == Task::GraphClassification && cfg.segment_batch_nb > 0) {
      int nb = std::min(cfg.segment_batch_nb, g.n);
      anchors.reserve(nb);
      for (int i = 0; i < nb; i++)
        anchors.push_back(static_cast<int>(
            static_cast<long>(i) * g.n / nb));
    } else {
      anchors.resize(g.n);
      std::iota(anchors.begin(), anchors.end(), 0);
    }
    int b = cfg.segment_b > 0 ? std::min(cfg.segment_b, g.n) : g.n;
    SegmentBatch batch = build_segment_batch(g, r_global, b, anchors);
    return segment_forward(t, g, batch, cfg, sp, training, rng);
  }
  return cfg.task == Task::NodeClassification
             ? forward_node(t, g, cfg, sp, training, rng)
             : forward_graph(t, g, cfg, sp, training, rng);
}

EvalResult evaluate_split(const Dataset& ds, const std::vector<int>& idx,
                          const ModelConfig& cfg, const ModelParams& params) {
  if (idx.empty()) throw ConfigError("empty evaluation split");
  double loss_sum = 0.0;
  std::vector<int> preds, truths;
  std::vector<double> scores;
  for (int gi : idx) {
    const Graph& g = ds.graphs[static_cast<size_t>(gi)];
    Tape t;
    StagedParams sp = stage_params(t, params, cfg, false);
    Forward f = run_forward(t, g, cfg, sp, params, false, nullptr);
    const std::vector<int> labels =
        cfg.task == Task::GraphClassification
            ? std::vector<int>{graph_label(g)}
            : node_labels(g);
    loss_sum +=
        classification_loss(t, f.logits, labels, cfg.num_classes).value()(0, 0);
    const Matrix& lv = f.logits.value();
    for (Eigen::Index r = 0; r < lv.rows(); r++) {
      Eigen::Index arg = 0;
      lv.row(r).maxCoeff(&arg);
      preds.push_back(static_cast<int>(arg));
      truths.push_back(labels[static_cast<size_t>(r)]);
      if (cfg.num_classes == 2) scores.push_back(lv(r, 1) - lv(r, 0));
    }
  }
  EvalResult out;
  out.loss = loss_sum / static_cast<double>(idx.size());
  out.accuracy = accuracy_score(preds, truths);
  out.auc = cfg.num_classes == 2 ? roc_auc(scores, truths) : kNaN;
  return out;
}

TrainOutcome train_on_split(const Dataset& ds,
                            const std::vector<int>& train_idx,
                            const std::vector<int>& val_idx,
                            const ModelConfig& mcfg, const TrainConfig& tcfg,
                            std::uint64_t seed) {
  mcfg.validate();
  tcfg.validate(mcfg.task, false);
  if (train_idx.empty()) throw ConfigError("empty training split");

  TrainOutcome out;
  out.params = init_params(mcfg, seed);
  ModelParams current = out.params;
  AdamConfig acfg;
  acfg.lr = tcfg.lr;
  acfg.weight_decay = tcfg.weight_decay;
  std::mt19937_64 rng(seed ^ 0x5deece66dULL);
  const int patience = tcfg.patience_for(mcfg.task);
  const size_t batch = static_cast<size_t>(tcfg.batch_size);
  double best_val = std::numeric_limits<double>::infinity();
  int streak = 0;
  FoldResult& fr = out.result;

  for (int epoch = 0; epoch < tcfg.max_epochs; epoch++) {
    auto t0 = std::chrono::steady_clock::now();
    std::vector<int> order = train_idx;
    std::shuffle(order.begin(), order.end(), rng);

    double loss_sum = 0.0;
    size_t seen = 0;
    bool blew_up = false;
    for (size_t at = 0; at < order.size(); at += batch) {
      size_t take = std::min(batch, order.size() - at);
      Tape t;
      StagedParams sp = stage_params(t, current, mcfg, true);
      Var loss =
          batch_loss(t, ds, order, at, take, mcfg, sp, current, true, &rng);
      double lv = loss.value()(0, 0);
      if (!std::isfinite(lv)) {
        blew_up = true;
        break;
      }
      loss_sum += lv * static_cast<double>(take);
      seen += take;
      t.backward(loss);
      for (size_t i = 0; i < sp.all.size(); i++)
        adam_step(current.tensors[i], sp.all[i].grad(), acfg);
    }

    EpochStats st;
    st.train_loss =
        seen > 0 ? loss_sum / static_cast<double>(seen) : kNaN;
    st.val_loss = blew_up ? kNaN
                          : (val_idx.empty()
                                 ? st.train_loss
                                 : evaluate_split(ds, val_idx, mcfg, current)
                                       .loss);
    st.seconds = seconds_since(t0);
    fr.curve.push_back(st);

    if (blew_up || !std::isfinite(st.val_loss)) {
      fr.diverged = true;
      break;
    }
    if (st.val_loss < best_val) {
      best_val = st.val_loss;
      out.params = current;
      fr.best_epoch = epoch;
      streak = 0;
    } else if (++streak >= patience) {
      break;
    }
  }
  fr.epochs_run = static_cast<int>(fr.curve.size());
  return out;
}

MetricsReport cross_validate(const Dataset& ds, const ModelConfig& mcfg,
                             const TrainConfig& tcfg,
                             ModelParams* best_params) {
  mcfg.validate();
  tcfg.validate(mcfg.task, true);
  const int count = static_cast<int>(ds.graphs.size());
  const auto blocks = fold_partition(count, tcfg.folds, tcfg.seed);

  struct FoldRun {
    FoldResult result;
    ModelParams params;
  };
  auto run_fold = [&](int f) -> FoldRun {
    std::vector<int> pool;
    pool.reserve(static_cast<size_t>(count));
    for (int g = 0; g < tcfg.folds; g++)
      if (g != f) pool.insert(pool.end(), blocks[g].begin(), blocks[g].end());

    // hold ~10% of the training block out for early stopping
    std::mt19937_64 vrng(tcfg.seed * 0x9e3779b97f4a7c15ULL +
                         static_cast<std::uint64_t>(f) + 1);
    std::shuffle(pool.begin(), pool.end(), vrng);
    int val_n = std::max(1, static_cast<int>(std::llround(
                                0.1 * static_cast<double>(pool.size()))));
    if (val_n >= static_cast<int>(pool.size()))
      val_n = static_cast<int>(pool.size()) - 1;
    std::vector<int> val(pool.begin(), pool.begin() + val_n);
    std::vector<int> train(pool.begin() + val_n, pool.end());

    TrainOutcome outcome = train_on_split(
        ds, train, val, mcfg, tcfg, tcfg.seed + static_cast<std::uint64_t>(f));
    EvalResult ev = evaluate_split(ds, blocks[f], mcfg, outcome.params);
    FoldResult fr = std::move(outcome.result);
    fr.fold = f;
    fr.accuracy = ev.accuracy;
    fr.auc = ev.auc;
    fr.test_loss = ev.loss;
    return {std::move(fr), std::move(outcome.params)};
  };

  // Folds are independent (each owns its tape, parameters, and RNG streams),
  // so they run concurrently; the report is assembled in fold order below.
  std::vector<std::future<FoldRun>> running;
  running.reserve(static_cast<size_t>(tcfg.folds));
  for (int f = 0; f < tcfg.folds; f++)
    running.push_back(std::async(std::launch::async, run_fold, f));

  MetricsReport rep;
  double best_accuracy = -1.0;
  for (auto& pending : running) {
    FoldRun run = pending.get();
    if (best_params && run.result.accuracy > best_accuracy) {
      best_accuracy = run.result.accuracy;
      *best_params = std::move(run.params);
    }
    rep.folds.push_back(std::move(run.result));
  }

  std::vector<double> accs, aucs;
  for (const FoldResult& fr : rep.folds) {
    accs.push_back(fr.accuracy);
    if (std::isfinite(fr.auc)) aucs.push_back(fr.auc);
  }
  std::tie(rep.mean_accuracy, rep.std_accuracy) = mean_std(accs);
  std::tie(rep.mean_auc, rep.std_auc) = mean_std(aucs);
  return rep;
}

// ---------------------------------------------------------------------------
// Isomorphism testing

int isomorphism_test(const std::vector<std::pair<Graph, Graph>>& pairs,
                     ModelConfig cfg, double epsilon,
                     const std::vector<std::uint64_t>& seeds,
                     std::vector<double>* pair_distances) {
  if (cfg.position_mode != PositionMode::Implicit)
    throw ConfigError("isomorphism testing requires implicit positions");
  if (cfg.task != Task::GraphClassification)
    throw ConfigError("isomorphism testing pools graph-level embeddings");
  if (seeds.empty()) throw ConfigError("isomorphism testing needs seeds");

  int max_degree = 0;
  for (const auto& [a, b] : pairs) {
    for (int d : a.degrees()) max_degree = std::max(max_degree, d);
    for (int d : b.degrees()) max_degree = std::max(max_degree, d);
  }
  cfg.in_features = max_degree + 1;
  cfg.validate();

  std::vector<std::pair<Graph, Graph>> featured = pairs;
  for (auto& [a, b] : featured) {
    a.features = degree_onehot_features(a, max_degree);
    b.features = degree_onehot_features(b, max_degree);
  }

  std::vector<double> widest(pairs.size(), 0.0);
  for (std::uint64_t seed : seeds) {
    ModelParams params = init_params(cfg, seed);
    auto embed = [&](const Graph& g) {
      Tape t;
      StagedParams sp = stage_params(t, params, cfg, false);
      return forward_graph(t, g, cfg, sp, false, nullptr).embedding.value();
    };
    for (size_t i = 0; i < featured.size(); i++) {
      double d = (embed(featured[i].first) - embed(featured[i].second))
                     .cwiseAbs()
                     .maxCoeff();
      widest[i] = std::max(widest[i], d);
    }
  }

  int undistinguished = 0;
  for (double d : widest) undistinguished += d < epsilon;
  if (pair_distances) *pair_distances = std::move(widest);
  return undistinguished;
}

std::vector<std::pair<Graph, Graph>> all_graph_pairs(
    const std::vector<Graph>& graphs) {
  std::vector<std::pair<Graph, Graph>> pairs;
  pairs.reserve(graphs.size() * (graphs.size() - 1) / 2);
  for (size_t i = 0; i < graphs.size(); i++)
    for (size_t j = i + 1; j < graphs.size(); j++)
      pairs.emplace_back(graphs[i], graphs[j]);
  return pairs;
}

// ---------------------------------------------------------------------------
// Synthetic graphs

Graph make_ring_graph(int n) {
  if (n < 3) throw ConfigError("a ring needs at least 3 nodes");
  Graph g;
  g.n = n;
  std::vector<std::pair<int, int>> edges;
  edges.reserve(static_cast<size_t>(n));
  for (int i = 0; i < n; i++) edges.emplace_back(i, (i + 1) % n);
  g.edges = normalize_edges(n, std::move(edges));
  g.features.resize(n, 2);
  const double two_pi = 8.0 * std::atan(1.0);
  for (int i = 0; i < n; i++) {
    double a = two_pi * i / n;
    g.features(i, 0) = std::cos(a);
    g.features(i, 1) = std::sin(a);
  }
  return g;
}

Graph make_grid_graph(int rows, int cols) {
  if (rows < 1 || cols < 1) throw ConfigError("grid sides must be >= 1");
  Graph g;
  g.n = rows * cols;
  std::vector<std::pair<int, int>> edges;
  for (int r = 0; r < rows; r++)
    for (int c = 0; c < cols; c++) {
      int v = r * cols + c;
      if (c + 1 < cols) edges.emplace_back(v, v + 1);
      if (r + 1 < rows) edges.emplace_back(v, v + cols);
    }
  g.edges = normalize_edges(g.n, std::move(edges));
  g.features.resize(g.n, 2);
  for (int r = 0; r < rows; r++)
    for (int c = 0; c < cols; c++) {
      int v = r * cols + c;
      g.features(v, 0) = rows > 1 ? static_cast<double>(r) / (rows - 1) : 0.0;
      g.features(v, 1) = cols > 1 ? static_cast<double>(c) / (cols - 1) : 0.0;
    }
  return g;
}

Graph make_er_graph(int n, double avg_degree, std::mt19937_64& rng) {
  if (n < 1) throw ConfigError("graph size must be >= 1");
  double p = n > 1 ? avg_degree / static_cast<double>(n - 1) : 0.0;
  p = std::clamp(p, 0.0, 1.0);
  std::bernoulli_distribution coin(p);
  Graph g;
  g.n = n;
  std::vector<std::pair<int, int>> edges;
  for (int i = 0; i < n; i++)
    for (int j = i + 1; j < n; j++)
      if (coin(rng)) edges.emplace_back(i, j);
  g.edges = normalize_edges(n, std::move(edges));
  return g;
}

std::uint64_t canonical_code(const Graph& g) {
  if (g.n > 8)
    throw ConfigError("canonical codes cover at most 8 nodes, got " +
                      std::to_string(g.n));
  const int n = g.n;
  std::array<std::uint8_t, 8> adj{};
  for (auto [i, j] : g.edges) {
    adj[static_cast<size_t>(i)] |= static_cast<std::uint8_t>(1u << j);
    adj[static_cast<size_t>(j)] |= static_cast<std::uint8_t>(1u << i);
  }
  std::array<int, 8> perm{};
  std::iota(perm.begin(), perm.begin() + n, 0);
  std::uint64_t best = ~0ULL;
  do {
    std::uint64_t code = 0;
    int bit = 0;
    for (int i = 0; i < n; i++)
      for (int j = i + 1; j < n; j++, bit++)
        if (adj[static_cast<size_t>(perm[i])] >> perm[j] & 1u)
          code |= 1ULL << bit;
    best = std::min(best, code);
  } while (std::next_permutation(perm.begin(), perm.begin() + n));
  return best;
}

std::vector<std::pair<Graph, Graph>> random_nonisomorphic_pairs(
    int count, int n, std::mt19937_64& rng) {
  if (n < 2 || n > 8)
    throw ConfigError("non-isomorphic pair size must be in [2, 8]");
  std::uniform_real_distribution<double> density(0.2, 0.6);
  std::vector<std::pair<Graph, Graph>> out;
  out.reserve(static_cast<size_t>(count));
  long attempts = 0, cap = 100L * count + 10000;
  while (static_cast<int>(out.size()) < count) {
    if (++attempts > cap)
      throw DataError("could not generate enough non-isomorphic pairs");
    Graph a = make_er_graph(n, density(rng) * (n - 1), rng);
    Graph b = make_er_graph(n, density(rng) * (n - 1), rng);
    if (canonical_code(a) != canonical_code(b))
      out.emplace_back(std::move(a), std::move(b));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reconstruction autoencoder

ReconstructionResult reconstruction_experiment(const Graph& g, double tau,
                                               const TrainConfig& tcfg,
                                               bool hard) {
  if (!g.has_features())
    throw ConfigError("reconstruction needs node features");
  tcfg.validate(Task::GraphClassification, false);
  const Matrix& x_val = g.features;
  const int d = static_cast<int>(x_val.cols());
  const int hidden = 16, smoothness = 2;
  auto a_norm = std::make_shared<const SpMat>(normalized_adjacency(g));

  std::mt19937_64 rng(tcfg.seed);
  std::vector<Parameter> ps;
  ps.emplace_back("w0", uniform_init(d, hidden, d, rng));
  ps.emplace_back("b0", Matrix::Zero(1, hidden));
  ps.emplace_back("w1", uniform_init(hidden, 1, hidden, rng));
  ps.emplace_back("b1", Matrix::Zero(1, 1));

  auto stage = [&](Tape& t, bool grad) {
    std::vector<Var> layers;
    layers.reserve(ps.size());
    for (Parameter& p : ps) layers.push_back(t.input(p.value, grad));
    return layers;
  };

  if (hard) {
    Tape t;
    std::vector<Var> layers = stage(t, false);
    Var x = t.constant(x_val);
    Var r_a = regress_position_explicit(t, x, a_norm, smoothness, layers);
    SparsePerm perm = sparse_permutation(t, r_a);
    Var sorted = sparse_permute_rows(t, perm, x);
    Var rec = gather_rows(sorted, perm.rank_of);
    ReconstructionResult res;
    res.recovered = rec.value();
    res.mse = mse(rec, x_val).value()(0, 0);
    return res;
  }

  AdamConfig acfg;
  acfg.lr = tcfg.lr;
  acfg.weight_decay = tcfg.weight_decay;
  ReconstructionResult res;
  res.mse = std::numeric_limits<double>::infinity();
  for (int epoch = 0; epoch < tcfg.max_epochs; epoch++) {
    Tape t;
    std::vector<Var> layers = stage(t, true);
    Var x = t.constant(x_val);
    Var r_a = regress_position_explicit(t, x, a_norm, smoothness, layers);
    Var r = absolute_position_dense(t, r_a);
    Var p_hat = relaxed_permutation(t, r, tau);
    Var rec = matmul(transpose(p_hat), matmul(p_hat, x));
    Var loss = mse(rec, x_val);
    double lv = loss.value()(0, 0);
    if (!std::isfinite(lv)) break;
    if (lv < res.mse) {
      res.mse = lv;
      res.recovered = rec.value();
    }
    t.backward(loss);
    for (size_t i = 0; i < ps.size(); i++)
      adam_step(ps[i], layers[i].grad(), acfg);
  }
  return res;
}

// ---------------------------------------------------------------------------
// Timing

ModelConfig bench_model_config(Variant variant) {
  ModelConfig cfg;
  cfg.variant = variant;
  cfg.task = Task::GraphClassification;
  cfg.in_features = 8;
  cfg.num_classes = 2;
  cfg.heads = 1;
  cfg.l1 = 0;
  cfg.l2 = 1;
  cfg.kernel_sizes = {4};
  cfg.trailing_conv = false;
  cfg.hidden = 32;
  cfg.pos_hidden = 32;
  cfg.tau = 10.0;
  cfg.position_mode = PositionMode::Explicit;
  if (variant == Variant::Segment) {
    cfg.segment_b = 64;
    cfg.segment_batch_nb = 32;
  }
  return cfg;
}

std::vector<BenchRow> timing_benchmark(const std::vector<Variant>& variants,
                                       const std::vector<int>& sizes,
                                       double avg_degree, std::uint64_t seed) {
  std::vector<BenchRow> rows;
  for (int n : sizes) {
    auto refused = [n](Variant v) {
      return v == Variant::Expanded && n > 20000;
    };
    Graph g;
    if (!std::all_of(variants.begin(), variants.end(), refused)) {
      std::mt19937_64 rng(seed ^ (0x9e3779b97f4a7c15ULL *
                                  static_cast<std::uint64_t>(n + 1)));
      g = make_er_graph(n, avg_degree, rng);
      g.features.resize(n, 8);
      std::uniform_real_distribution<double> unit(-1.0, 1.0);
      for (int i = 0; i < n; i++)
        for (int c = 0; c < 8; c++) g.features(i, c) = unit(rng);
      g.label = 0;
    }

    for (Variant v : variants) {
      BenchRow row;
      row.variant = variant_label(v);
      row.n = n;
      ModelConfig cfg = bench_model_config(v);
      if (refused(v)) {
        row.status = "refused";
        rows.push_back(std::move(row));
        continue;
      }
      try {
        ModelParams params = init_params(cfg, seed);
        AdamConfig acfg;
        auto t0 = std::chrono::steady_clock::now();
        Tape t;
        StagedParams sp = stage_params(t, params, cfg, true);
        Forward f = run_forward(t, g, cfg, sp, params, false, nullptr);
        Var loss = classification_loss(t, f.logits, {*g.label},
                                       cfg.num_classes);
        t.backward(loss);
        for (size_t i = 0; i < sp.all.size(); i++)
          adam_step(params.tensors[i], sp.all[i].grad(), acfg);
        row.seconds = seconds_since(t0);
        row.status = "ok";
      } catch (const std::bad_alloc&) {
        row.seconds = 0.0;
        row.status = "oom";
      }
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Output files

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  for (int prec = 1; prec <= 17; prec++) {
    std::snprintf(buf, sizeof buf, "%.*g", prec, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return buf;
}

void write_csv(const std::string& path,
               const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows) {
  std::ofstream f(path);
  if (!f) throw DataError("cannot write " + path);
  auto emit = [&](const std::vector<std::string>& fields) {
    for (size_t i = 0; i < fields.size(); i++) {
      if (fields[i].find_first_of(",\n") != std::string::npos)
        throw DataError("CSV field contains a delimiter: " + fields[i]);
      if (i) f << ',';
      f << fields[i];
    }
    f << '\n';
  };
  emit(header);
  for (const auto& row : rows) emit(row);
  if (!f) throw DataError("failed writing " + path);
}

std::vector<std::vector<std::string>> read_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot read " + path);
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::vector<std::string> fields;
    size_t at = 0;
    while (true) {
      size_t comma = line.find(',', at);
      fields.push_back(line.substr(at, comma - at));
      if (comma == std::string::npos) break;
      at = comma + 1;
    }
    rows.push_back(std::move(fields));
  }
  return rows;
}

void write_pgm(const std::string& path, const Matrix& m) {
  if (m.size() == 0) throw ConfigError("cannot render an empty image");
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write " + path);
  f << "P5\n" << m.cols() << " " << m.rows() << "\n255\n";
  const double lo = m.minCoeff(), hi = m.maxCoeff();
  std::vector<unsigned char> row(static_cast<size_t>(m.cols()));
  for (Eigen::Index r = 0; r < m.rows(); r++) {
    for (Eigen::Index c = 0; c < m.cols(); c++) {
      double v = hi > lo ? (m(r, c) - lo) / (hi - lo) * 255.0 : 0.0;
      row[static_cast<size_t>(c)] =
          static_cast<unsigned char>(std::llround(v));
    }
    f.write(reinterpret_cast<const char*>(row.data()),
            static_cast<std::streamsize>(row.size()));
  }
  if (!f) throw DataError("failed writing " + path);
}

nlohmann::json metrics_to_json(const MetricsReport& report) {
  nlohmann::json folds = nlohmann::json::array();
  for (const FoldResult& fr : report.folds) {
    nlohmann::json curve = nlohmann::json::array();
    for (const EpochStats& st : fr.curve)
      curve.push_back({{"train_loss", st.train_loss},
                       {"val_loss", st.val_loss},
                       {"seconds", st.seconds}});
    folds.push_back({{"fold", fr.fold},
                     {"accuracy", fr.accuracy},
                     {"auc", fr.auc},
                     {"test_loss", fr.test_loss},
                     {"best_epoch", fr.best_epoch},
                     {"epochs_run", fr.epochs_run},
                     {"diverged", fr.diverged},
                     {"curve", curve}});
  }
  return {{"folds", folds},
          {"mean_accuracy", report.mean_accuracy},
          {"std_accuracy", report.std_accuracy},
          {"mean_auc", report.mean_auc},
          {"std_auc", report.std_auc}};
}

void write_metrics_json(const std::string& path, const MetricsReport& report,
                        const nlohmann::json& provenance) {
  nlohmann::json j = metrics_to_json(report);
  if (!provenance.is_null()) j["config"] = provenance;
  std::ofstream f(path);
  if (!f) throw DataError("cannot write " + path);
  f << j.dump(2) << '\n';
  if (!f) throw DataError("failed writing " + path);
}

void write_folds_csv(const std::string& path, const MetricsReport& report) {
  std::vector<std::vector<std::string>> rows;
  for (const FoldResult& fr : report.folds)
    rows.push_back({std::to_string(fr.fold), format_double(fr.accuracy),
                    format_double(fr.auc), format_double(fr.test_loss),
                    std::to_string(fr.best_epoch),
                    std::to_string(fr.epochs_run),
                    fr.diverged ? "1" : "0"});
  write_csv(path,
            {"fold", "accuracy", "auc", "test_loss", "best_epoch",
             "epochs_run", "diverged"},
            rows);
}

void write_timings_csv(const std::string& path,
                       const std::vector<BenchRow>& rows) {
  std::vector<std::vector<std::string>> out;
  out.reserve(rows.size());
  for (const BenchRow& r : rows)
    out.push_back({r.variant, std::to_string(r.n), format_double(r.seconds),
                   r.status});
  write_csv(path, {"variant", "n", "seconds", "status"}, out);
}

void permviz_render(const Graph& g, const ModelConfig& cfg,
                    const ModelParams& params, const std::string& out_dir) {
  Graph gg = g;
  ModelConfig c = cfg;
  if (!gg.has_features()) {
    int max_degree = 0;
    for (int d : gg.degrees()) max_degree = std::max(max_degree, d);
    gg.features = degree_onehot_features(gg, max_degree);
    c.in_features = max_degree + 1;
  }

  Tape t;
  StagedParams sp = stage_params(t, params, c, false);
  Var x = t.constant(gg.features);
  Var r_heads = approximate_positions(t, gg, c, sp, x);
  Var r = absolute_position_dense(t, slice_cols(r_heads, 0, 1));
  Var p_hat = relaxed_permutation(t, r, c.tau);
  const Matrix& p = p_hat.value();

  std::filesystem::create_directories(out_dir);
  Matrix a_hat = p * gg.dense_adjacency() * p.transpose();
  Matrix gram = p * (gg.features * gg.features.transpose()) * p.transpose();
  write_pgm(out_dir + "/ahat.pgm", a_hat);
  write_pgm(out_dir + "/pxxp.pgm", gram);
}

}  // namespace cocn
