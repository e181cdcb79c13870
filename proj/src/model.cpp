#include "model.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <numeric>

namespace cocn {

using namespace op;

// ---------------------------------------------------------------------------
// Config

void ModelConfig::validate() const {
  if (in_features < 1) throw ConfigError("in_features must be >= 1");
  if (num_classes < 2) throw ConfigError("num_classes must be >= 2");
  if (heads < 1) throw ConfigError("heads must be >= 1");
  if (hidden < 1) throw ConfigError("hidden must be >= 1");
  if (pos_hidden < 0) throw ConfigError("pos_hidden must be >= 0");
  if (l1 < 0 || l2 < 0) throw ConfigError("layer counts must be >= 0");
  if (l1 + l2 == 0)
    throw ConfigError("at least one convolution layer is required (l1+l2>=1)");
  if (static_cast<int>(kernel_sizes.size()) != down_layer_count())
    throw ConfigError("kernel_sizes needs one entry per layer: expected " +
                      std::to_string(down_layer_count()) + ", got " +
                      std::to_string(kernel_sizes.size()));
  for (int k : kernel_sizes)
    if (k < 1) throw ConfigError("kernel sizes must be >= 1");
  if (tau <= 0) throw ConfigError("tau must be positive");
  if (smoothness_t < 0) throw ConfigError("smoothness_t must be >= 0");
  if (dropout < 0 || dropout >= 1)
    throw ConfigError("dropout must lie in [0, 1)");
  if (variant == Variant::Vanilla && (residual || inception))
    throw ConfigError("vanilla variant runs without residual or inception");
  if (inception) {
    if (inception_kernels.empty())
      throw ConfigError("inception needs branch kernel sizes");
    for (int k : inception_kernels)
      if (k < 1) throw ConfigError("inception kernel sizes must be >= 1");
  }
  if (variant == Variant::Segment) {
    int kmax = 0;
    for (int k : kernel_sizes) kmax = std::max(kmax, k);
    if (inception)
      for (int k : inception_kernels) kmax = std::max(kmax, k);
    if (segment_b < kmax)
      throw ConfigError("segment length " + std::to_string(segment_b) +
                        " must cover the largest kernel " +
                        std::to_string(kmax));
    if (segment_batch_nb < 0)
      throw ConfigError("segment_batch_nb must be >= 0");
  }
}

namespace {

const char* variant_name(Variant v) {
  switch (v) {
    case Variant::Vanilla: return "vanilla";
    case Variant::Expanded: return "expanded";
    case Variant::Sparse: return "sparse";
    case Variant::Segment: return "segment";
  }
  return "vanilla";
}

Variant variant_from(const std::string& s) {
  if (s == "vanilla") return Variant::Vanilla;
  if (s == "expanded") return Variant::Expanded;
  if (s == "sparse") return Variant::Sparse;
  if (s == "segment") return Variant::Segment;
  throw ConfigError("unknown variant: " + s);
}

}  // namespace

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.variant = variant_from(j.value("variant", std::string("vanilla")));
  std::string task = j.value("task", std::string("graph"));
  if (task == "graph") {
    c.task = Task::GraphClassification;
  } else if (task == "node") {
    c.task = Task::NodeClassification;
  } else {
    throw ConfigError("unknown task: " + task);
  }
  c.in_features = j.value("in_features", 0);
  c.num_classes = j.value("num_classes", 2);
  c.heads = j.value("heads", 4);
  c.l1 = j.value("l1", 1);
  c.l2 = j.value("l2", 1);
  c.trailing_conv =
      j.value("trailing_conv", c.task == Task::GraphClassification);
  c.hidden = j.value("hidden", 64);
  c.pos_hidden = j.value("pos_hidden", c.hidden);
  c.tau = j.value("tau", 10.0);
  c.smoothness_t = j.value("smoothness_t", 6);
  std::string mode = j.value("position_mode", std::string("explicit"));
  if (mode == "explicit") {
    c.position_mode = PositionMode::Explicit;
  } else if (mode == "implicit") {
    c.position_mode = PositionMode::Implicit;
  } else {
    throw ConfigError("unknown position_mode: " + mode);
  }
  c.segment_b = j.value("segment_b", 0);
  c.segment_batch_nb = j.value("segment_batch_nb", 0);
  c.residual = j.value("residual", false);
  c.inception = j.value("inception", false);
  if (j.contains("inception_kernels"))
    c.inception_kernels = j.at("inception_kernels").get<std::vector<int>>();
  c.dropout = j.value("dropout", 0.0);
  if (j.contains("kernel_sizes")) {
    const auto& ks = j.at("kernel_sizes");
    if (ks.is_number_integer()) {
      c.kernel_sizes.assign(c.down_layer_count(), ks.get<int>());
    } else {
      c.kernel_sizes = ks.get<std::vector<int>>();
      if (c.kernel_sizes.size() == 1)
        c.kernel_sizes.assign(c.down_layer_count(), c.kernel_sizes[0]);
    }
  } else {
    c.kernel_sizes.assign(c.down_layer_count(), 5);
  }
  return c;
}

nlohmann::json model_config_to_json(const ModelConfig& cfg) {
  nlohmann::json j;
  j["variant"] = variant_name(cfg.variant);
  j["task"] = cfg.task == Task::NodeClassification ? "node" : "graph";
  j["in_features"] = cfg.in_features;
  j["num_classes"] = cfg.num_classes;
  j["heads"] = cfg.heads;
  j["l1"] = cfg.l1;
  j["l2"] = cfg.l2;
  j["kernel_sizes"] = cfg.kernel_sizes;
  j["trailing_conv"] = cfg.trailing_conv;
  j["hidden"] = cfg.hidden;
  j["pos_hidden"] = cfg.pos_hidden;
  j["tau"] = cfg.tau;
  j["smoothness_t"] = cfg.smoothness_t;
  j["position_mode"] =
      cfg.position_mode == PositionMode::Implicit ? "implicit" : "explicit";
  j["segment_b"] = cfg.segment_b;
  j["segment_batch_nb"] = cfg.segment_batch_nb;
  j["residual"] = cfg.residual;
  j["inception"] = cfg.inception;
  j["inception_kernels"] = cfg.inception_kernels;
  j["dropout"] = cfg.dropout;
  return j;
}

std::vector<LayerPlan> down_plan(const ModelConfig& cfg) {
  std::vector<LayerPlan> plan;
  auto unit_step = [&](int k) {
    LayerPlan lp;
    lp.s = 1;
    lp.ks = cfg.inception ? cfg.inception_kernels : std::vector<int>{k};
    return lp;
  };
  for (int l = 0; l < cfg.l1; l++)
    plan.push_back(unit_step(cfg.kernel_sizes[l]));
  for (int l = 0; l < cfg.l2; l++) {
    int k = cfg.kernel_sizes[cfg.l1 + l];
    plan.push_back(LayerPlan{{k}, k});
  }
  if (cfg.trailing_conv)
    plan.push_back(unit_step(cfg.kernel_sizes[cfg.l1 + cfg.l2]));
  return plan;
}

// ---------------------------------------------------------------------------
// Parameter layout

namespace {

enum class InitKind { Uniform, Ones, Zeros };

struct TensorSpec {
  std::string name;
  int rows = 0, cols = 0;
  long fan_in = 1;
  InitKind kind = InitKind::Uniform;
};

std::vector<TensorSpec> tensor_layout(const ModelConfig& cfg) {
  std::vector<TensorSpec> out;
  auto linear = [&](const std::string& name, int in, int width) {
    out.push_back({name + "/w", in, width, in, InitKind::Uniform});
    out.push_back({name + "/b", 1, width, in, InitKind::Uniform});
  };
  linear("input", cfg.in_features, cfg.hidden);
  out.push_back({"input/ln_gain", 1, cfg.hidden, 1, InitKind::Ones});
  out.push_back({"input/ln_bias", 1, cfg.hidden, 1, InitKind::Zeros});
  if (cfg.position_mode == PositionMode::Explicit) {
    if (cfg.pos_hidden > 0) {
      linear("position/0", cfg.in_features, cfg.pos_hidden);
      linear("position/1", cfg.pos_hidden, cfg.heads);
    } else {
      linear("position/0", cfg.in_features, cfg.heads);
    }
  }
  const auto plan = down_plan(cfg);
  for (size_t l = 0; l < plan.size(); l++)
    for (int k : plan[l].ks) {
      std::string base = "down/" + std::to_string(l) + "/k" +
                         std::to_string(k);
      long fan = static_cast<long>(k) * k + static_cast<long>(k) * cfg.hidden;
      out.push_back({base + "/w", cfg.hidden, k * k, fan, InitKind::Uniform});
      out.push_back(
          {base + "/v", cfg.hidden, k * cfg.hidden, fan, InitKind::Uniform});
      out.push_back({base + "/b", 1, cfg.hidden, fan, InitKind::Uniform});
    }
  if (cfg.task == Task::NodeClassification &&
      cfg.variant != Variant::Segment) {
    for (size_t i = 0; i < plan.size(); i++) {
      int k = plan[plan.size() - 1 - i].widest();
      std::string base = "up/" + std::to_string(i);
      long fan = static_cast<long>(cfg.hidden) * k;
      out.push_back(
          {base + "/w", cfg.hidden, cfg.hidden * k, fan, InitKind::Uniform});
      out.push_back({base + "/b", 1, cfg.hidden, fan, InitKind::Uniform});
    }
  }
  linear("classifier", cfg.heads * cfg.hidden, cfg.num_classes);
  return out;
}

}  // namespace

ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  ModelParams params;
  for (const TensorSpec& ts : tensor_layout(cfg)) {
    Matrix m;
    switch (ts.kind) {
      case InitKind::Uniform:
        m = uniform_init(ts.rows, ts.cols, ts.fan_in, rng);
        break;
      case InitKind::Ones:
        m = Matrix::Ones(ts.rows, ts.cols);
        break;
      case InitKind::Zeros:
        m = Matrix::Zero(ts.rows, ts.cols);
        break;
    }
    params.tensors.emplace_back(ts.name, std::move(m));
  }
  return params;
}

long param_count(const ModelConfig& cfg) {
  long total = 0;
  for (const TensorSpec& ts : tensor_layout(cfg))
    total += static_cast<long>(ts.rows) * ts.cols;
  return total;
}

StagedParams stage_params(Tape& t, const ModelParams& params,
                          const ModelConfig& cfg, bool requires_grad) {
  cfg.validate();
  const auto layout = tensor_layout(cfg);
  if (params.tensors.size() != layout.size())
    throw ConfigError("parameter set has " +
                      std::to_string(params.tensors.size()) +
                      " tensors, the config declares " +
                      std::to_string(layout.size()));
  StagedParams sp;
  sp.all.reserve(layout.size());
  size_t i = 0;
  auto next = [&]() {
    const Parameter& p = params.tensors[i];
    const TensorSpec& ts = layout[i];
    if (p.value.rows() != ts.rows || p.value.cols() != ts.cols)
      throw ConfigError("tensor " + ts.name + " has shape " +
                        shape_str(p.value.rows(), p.value.cols()) +
                        ", the config declares " +
                        shape_str(ts.rows, ts.cols));
    i++;
    Var v = t.input(p.value, requires_grad);
    sp.all.push_back(v);
    return v;
  };
  sp.in_w = next();
  sp.in_b = next();
  sp.ln_g = next();
  sp.ln_b = next();
  if (cfg.position_mode == PositionMode::Explicit) {
    int pairs = cfg.pos_hidden > 0 ? 2 : 1;
    for (int l = 0; l < 2 * pairs; l++) sp.pos_mlp.push_back(next());
  }
  for (const LayerPlan& lp : down_plan(cfg)) {
    StagedParams::LayerRef lr;
    lr.s = lp.s;
    for (int k : lp.ks) {
      DiagKernel dk;
      dk.w = next();
      dk.v = next();
      dk.bias = next();
      dk.k = k;
      lr.branches.push_back(dk);
    }
    sp.down.push_back(std::move(lr));
  }
  if (cfg.task == Task::NodeClassification &&
      cfg.variant != Variant::Segment) {
    const auto plan = down_plan(cfg);
    for (size_t u = 0; u < plan.size(); u++) {
      TransKernel tk;
      tk.w = next();
      tk.bias = next();
      tk.k = plan[plan.size() - 1 - u].widest();
      sp.up.push_back(tk);
    }
  }
  sp.cls_w = next();
  sp.cls_b = next();
  return sp;
}

// ---------------------------------------------------------------------------
// Forward passes

namespace {

void check_features(const Graph& g, const ModelConfig& cfg) {
  if (!g.has_features() || g.features.rows() != g.n ||
      g.features.cols() != cfg.in_features)
    throw ConfigError(
        "graph features " + shape_str(g.features.rows(), g.features.cols()) +
        " do not match in_features=" + std::to_string(cfg.in_features) +
        " over " + std::to_string(g.n) + " nodes");
}

Var input_module(Tape& t, Var x_raw, const ModelConfig& cfg,
                 const StagedParams& p, bool training, std::mt19937_64* rng) {
  Var h = relu(layer_norm(add(matmul(x_raw, p.in_w), p.in_b), p.ln_g,
                          p.ln_b));
  if (training && cfg.dropout > 0) {
    if (!rng) throw ConfigError("training forward needs an RNG for dropout");
    h = dropout(h, cfg.dropout, *rng);
  }
  return h;
}

}  // namespace

Var approximate_positions(Tape& t, const Graph& g, const ModelConfig& cfg,
                          const StagedParams& p, Var x_raw) {
  if (cfg.position_mode == PositionMode::Explicit) {
    auto a_norm = std::make_shared<const SpMat>(normalized_adjacency(g));
    return regress_position_explicit(t, x_raw, a_norm, cfg.smoothness_t,
                                     p.pos_mlp);
  }
  DistanceMatrix dm = shortest_path_distances(g, 0.0);
  return t.constant(
      implicit_position_heads(regress_position_implicit(dm.d), cfg.heads));
}

namespace {

LevelState run_down_dense(Tape& t, LevelState st, const ModelConfig& cfg,
                          const StagedParams& p, std::vector<int>* lengths) {
  for (const auto& lr : p.down) {
    if (lengths) lengths->push_back(static_cast<int>(st.h.rows()));
    st = lr.branches.size() > 1
             ? inception_layer(t, st, lr.branches, lr.s, cfg.residual)
             : compressed_conv_layer(t, st, lr.branches[0], lr.s,
                                     cfg.residual);
  }
  return st;
}

SparseLevelState run_down_sparse(Tape& t, SparseLevelState st,
                                 const ModelConfig& cfg,
                                 const StagedParams& p,
                                 std::vector<int>* lengths) {
  for (const auto& lr : p.down) {
    if (lengths) lengths->push_back(static_cast<int>(st.h.rows()));
    st = lr.branches.size() > 1
             ? sparse_inception_layer(t, st, lr.branches, lr.s, cfg.residual)
             : sparse_compressed_layer(t, st, lr.branches[0], lr.s,
                                       cfg.residual);
  }
  return st;
}

Var run_up(Tape& t, Var h, const ModelConfig& cfg, const StagedParams& p,
           const std::vector<int>& lengths) {
  const auto plan = down_plan(cfg);
  for (size_t u = 0; u < p.up.size(); u++) {
    size_t dl = plan.size() - 1 - u;
    h = transposed_conv_layer(t, h, p.up[u], plan[dl].s, lengths[dl]);
  }
  return h;
}

SparseLevelState sparse_level0(Tape& t, const Graph& g,
                               const SparsePerm& perm, Var h0) {
  SparseLevelState st;
  st.h = sparse_permute_rows(t, perm, h0);
  PermutedSparseAdj adj = permute_sparse_adj(t, perm, g.edges);
  st.e.n = g.n;
  st.e.row = std::move(adj.row);
  st.e.col = std::move(adj.col);
  st.e.values = adj.values;
  return st;
}

Var stack_rows(Tape& t, const std::vector<Var>& rows) {
  if (rows.size() == 1) return rows[0];
  std::vector<Var> cols;
  cols.reserve(rows.size());
  for (Var r : rows) cols.push_back(transpose(r));
  return transpose(concat_cols(cols));
}

void check_not_segment(const ModelConfig& cfg) {
  if (cfg.variant == Variant::Segment)
    throw ConfigError("segment models predict through segment_forward");
}

}  // namespace

std::vector<Var> head_pooled(Tape& t, const Graph& g, const ModelConfig& cfg,
                             const StagedParams& p, bool training,
                             std::mt19937_64* rng) {
  check_not_segment(cfg);
  check_features(g, cfg);
  Var x = t.constant(g.features);
  Var h0 = input_module(t, x, cfg, p, training, rng);
  Var r_heads = approximate_positions(t, g, cfg, p, x);
  auto a_sp = std::make_shared<const SpMat>(g.sparse_adjacency());
  std::vector<Var> pooled;
  pooled.reserve(cfg.heads);
  for (int h = 0; h < cfg.heads; h++) {
    Var r_a = slice_cols(r_heads, h, 1);
    Var top;
    if (cfg.variant == Variant::Sparse) {
      SparsePerm perm = sparse_permutation(t, r_a);
      SparseLevelState st = sparse_level0(t, g, perm, h0);
      top = run_down_sparse(t, std::move(st), cfg, p, nullptr).h;
    } else {
      Var r = absolute_position_dense(t, r_a);
      Var p_hat = relaxed_permutation(t, r, cfg.tau);
      auto [xh, ah] = permute_dense(t, p_hat, h0, a_sp);
      top = run_down_dense(t, LevelState{xh, {ah}}, cfg, p, nullptr).h;
    }
    pooled.push_back(colmax(top));
  }
  return pooled;
}

Forward forward_graph(Tape& t, const Graph& g, const ModelConfig& cfg,
                      const StagedParams& p, bool training,
                      std::mt19937_64* rng) {
  if (cfg.task != Task::GraphClassification)
    throw ConfigError("forward_graph needs a graph-task model");
  std::vector<Var> pooled = head_pooled(t, g, cfg, p, training, rng);
  Var rep = pooled.size() > 1 ? concat_cols(pooled) : pooled[0];
  Forward out;
  out.embedding = rep;
  if (training && cfg.dropout > 0) rep = dropout(rep, cfg.dropout, *rng);
  out.logits = add(matmul(rep, p.cls_w), p.cls_b);
  return out;
}

Forward forward_node(Tape& t, const Graph& g, const ModelConfig& cfg,
                     const StagedParams& p, bool training,
                     std::mt19937_64* rng) {
  if (cfg.task != Task::NodeClassification)
    throw ConfigError("forward_node needs a node-task model");
  check_not_segment(cfg);
  check_features(g, cfg);
  Var x = t.constant(g.features);
  Var h0 = input_module(t, x, cfg, p, training, rng);
  Var r_heads = approximate_positions(t, g, cfg, p, x);
  auto a_sp = std::make_shared<const SpMat>(g.sparse_adjacency());
  std::vector<Var> outs;
  outs.reserve(cfg.heads);
  for (int h = 0; h < cfg.heads; h++) {
    Var r_a = slice_cols(r_heads, h, 1);
    std::vector<int> lengths;
    if (cfg.variant == Variant::Sparse) {
      SparsePerm perm = sparse_permutation(t, r_a);
      SparseLevelState st = sparse_level0(t, g, perm, h0);
      st = run_down_sparse(t, std::move(st), cfg, p, &lengths);
      Var hu = run_up(t, st.h, cfg, p, lengths);
      // P^T H: row j = weight_j * hu.row(rank_of[j])
      Var wmat = matmul(perm.weight,
                        t.constant(Matrix::Ones(1, hu.cols())));
      outs.push_back(mul(gather_rows(hu, perm.rank_of), wmat));
    } else {
      Var r = absolute_position_dense(t, r_a);
      Var p_hat = relaxed_permutation(t, r, cfg.tau);
      auto [xh, ah] = permute_dense(t, p_hat, h0, a_sp);
      LevelState st = run_down_dense(t, LevelState{xh, {ah}}, cfg, p,
                                     &lengths);
      Var hu = run_up(t, st.h, cfg, p, lengths);
      outs.push_back(matmul(transpose(p_hat), hu));
    }
  }
  Var rep = outs.size() > 1 ? concat_cols(outs) : outs[0];
  Forward out;
  out.embedding = rep;
  if (training && cfg.dropout > 0) rep = dropout(rep, cfg.dropout, *rng);
  out.logits = add(matmul(rep, p.cls_w), p.cls_b);
  return out;
}

// ---------------------------------------------------------------------------
// Segments

Vector segment_global_positions(const Graph& g, const ModelConfig& cfg,
                                const ModelParams& params) {
  if (cfg.position_mode == PositionMode::Implicit)
    return regress_position_implicit(shortest_path_distances(g, 0.0).d);
  check_features(g, cfg);
  Tape t;
  StagedParams sp = stage_params(t, params, cfg, false);
  Var x = t.constant(g.features);
  Var r = approximate_positions(t, g, cfg, sp, x);
  return r.value().col(0);
}

SegmentBatch build_segment_batch(const Graph& g, const Vector& r_a_global,
                                 int b, const std::vector<int>& anchors) {
  if (b < 1) throw ConfigError("segment length must be >= 1");
  if (b > g.n)
    throw ConfigError("segment length " + std::to_string(b) +
                      " exceeds the " + std::to_string(g.n) +
                      "-node graph; circular padding cannot wrap twice");
  if (r_a_global.size() != g.n)
    throw DimensionError("positions for " + std::to_string(r_a_global.size()) +
                         " nodes vs a " + std::to_string(g.n) +
                         "-node graph");
  std::vector<int> order(g.n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int c) {
    return r_a_global(a) < r_a_global(c);
  });
  std::vector<int> pos_of(g.n);
  for (int pos = 0; pos < g.n; pos++) pos_of[order[pos]] = pos;

  const auto neighbors = g.adjacency_list();
  std::vector<int> local(g.n, -1);

  SegmentBatch batch;
  batch.anchor_nodes = anchors;
  batch.r_a_b.resize(static_cast<Eigen::Index>(anchors.size()), b);
  for (int v : anchors) {
    if (v < 0 || v >= g.n)
      throw ConfigError("anchor node " + std::to_string(v) +
                        " outside [0," + std::to_string(g.n) + ")");
    std::vector<int> nodes(b);
    for (int i = 0; i < b; i++) nodes[i] = order[(pos_of[v] + i) % g.n];

    Matrix x_b(b, g.features.cols());
    for (int i = 0; i < b; i++) {
      if (g.has_features()) x_b.row(i) = g.features.row(nodes[i]);
      batch.r_a_b(static_cast<Eigen::Index>(batch.nodes.size()), i) =
          r_a_global(nodes[i]);
      local[nodes[i]] = i;
    }
    std::vector<Eigen::Triplet<double>> trips;
    for (int i = 0; i < b; i++)
      for (int w : neighbors[nodes[i]])
        if (local[w] >= 0) trips.emplace_back(i, local[w], 1.0);
    for (int i = 0; i < b; i++) local[nodes[i]] = -1;
    SpMat a(b, b);
    a.setFromTriplets(trips.begin(), trips.end());

    batch.nodes.push_back(std::move(nodes));
    batch.x_b.push_back(std::move(x_b));
    batch.a_b.push_back(std::move(a));
  }
  return batch;
}

Forward segment_forward(Tape& t, const Graph& g, const SegmentBatch& batch,
                        const ModelConfig& cfg, const StagedParams& p,
                        bool training, std::mt19937_64* rng) {
  if (cfg.variant != Variant::Segment)
    throw ConfigError("segment_forward needs the segment variant");
  if (batch.nodes.empty()) throw ConfigError("empty segment batch");
  check_features(g, cfg);
  Var x = t.constant(g.features);
  Var h0_full = input_module(t, x, cfg, p, training, rng);
  Var r_heads_full = approximate_positions(t, g, cfg, p, x);

  std::vector<Var> seg_reps;
  seg_reps.reserve(batch.nodes.size());
  for (size_t seg = 0; seg < batch.nodes.size(); seg++) {
    const std::vector<int>& ns = batch.nodes[seg];
    Var h0_seg = gather_rows(h0_full, ns);
    Var r_seg = gather_rows(r_heads_full, ns);
    auto a_sp = std::make_shared<const SpMat>(batch.a_b[seg]);
    std::vector<Var> pooled;
    pooled.reserve(cfg.heads);
    for (int h = 0; h < cfg.heads; h++) {
      Var r = absolute_position_dense(t, slice_cols(r_seg, h, 1));
      Var p_hat = relaxed_permutation(t, r, cfg.tau);
      auto [xh, ah] = permute_dense(t, p_hat, h0_seg, a_sp);
      LevelState st =
          run_down_dense(t, LevelState{xh, {ah}}, cfg, p, nullptr);
      pooled.push_back(colmax(st.h));
    }
    seg_reps.push_back(pooled.size() > 1 ? concat_cols(pooled) : pooled[0]);
  }
  Var stacked = stack_rows(t, seg_reps);
  Var rep = cfg.task == Task::GraphClassification ? colmax(stacked) : stacked;
  Forward out;
  out.embedding = rep;
  if (training && cfg.dropout > 0) rep = dropout(rep, cfg.dropout, *rng);
  out.logits = add(matmul(rep, p.cls_w), p.cls_b);
  return out;
}

// ---------------------------------------------------------------------------
// Loss

Var classification_loss(Tape& t, Var logits, const std::vector<int>& labels,
                        int num_classes) {
  if (logits.cols() != num_classes)
    throw DimensionError("logits " +
                         shape_str(logits.rows(), logits.cols()) +
                         " vs " + std::to_string(num_classes) + " classes");
  if (logits.rows() != static_cast<Eigen::Index>(labels.size()))
    throw DimensionError("logits " +
                         shape_str(logits.rows(), logits.cols()) + " vs " +
                         std::to_string(labels.size()) + " labels");
  if (num_classes == 2) {
    // sigmoid cross-entropy on the logit difference; identical in value and
    // gradient to two-class softmax cross-entropy
    Var z = sub(slice_cols(logits, 1, 1), slice_cols(logits, 0, 1));
    Vector y(labels.size());
    for (size_t i = 0; i < labels.size(); i++) {
      if (labels[i] != 0 && labels[i] != 1)
        throw DataError("binary label outside {0,1}: " +
                        std::to_string(labels[i]));
      y(static_cast<Eigen::Index>(i)) = labels[i];
    }
    return sigmoid_bce(z, y);
  }
  return softmax_cross_entropy(logits, labels);
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

void write_u64le(std::ostream& o, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; i++) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  o.write(b, 8);
}

std::uint64_t read_u64le(std::istream& in) {
  unsigned char b[8];
  in.read(reinterpret_cast<char*>(b), 8);
  if (!in) throw DataError("truncated checkpoint header");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; i++) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

void write_f64le(std::ostream& o, double d) {
  std::uint64_t v;
  std::memcpy(&v, &d, 8);
  write_u64le(o, v);
}

double read_f64le(std::istream& in) {
  std::uint64_t v = read_u64le(in);
  double d;
  std::memcpy(&d, &v, 8);
  return d;
}

}  // namespace

void save_checkpoint(const std::string& path, const ModelConfig& cfg,
                     const ModelParams& params) {
  cfg.validate();
  const auto layout = tensor_layout(cfg);
  if (params.tensors.size() != layout.size())
    throw ConfigError("parameter set has " +
                      std::to_string(params.tensors.size()) +
                      " tensors, the config declares " +
                      std::to_string(layout.size()));
  for (size_t i = 0; i < layout.size(); i++)
    if (params.tensors[i].value.rows() != layout[i].rows ||
        params.tensors[i].value.cols() != layout[i].cols)
      throw ConfigError("tensor " + layout[i].name + " has shape " +
                        shape_str(params.tensors[i].value.rows(),
                                  params.tensors[i].value.cols()) +
                        ", the config declares " +
                        shape_str(layout[i].rows, layout[i].cols));
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint: " + path);
  out.write("COCN1", 5);
  const std::string js = model_config_to_json(cfg).dump();
  write_u64le(out, js.size());
  out.write(js.data(), static_cast<std::streamsize>(js.size()));
  for (const Parameter& p : params.tensors)
    for (Eigen::Index r = 0; r < p.value.rows(); r++)
      for (Eigen::Index c = 0; c < p.value.cols(); c++)
        write_f64le(out, p.value(r, c));
  if (!out) throw DataError("failed writing checkpoint: " + path);
}

std::pair<ModelConfig, ModelParams> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read checkpoint: " + path);
  char magic[5];
  in.read(magic, 5);
  if (!in || std::string(magic, 5) != "COCN1")
    throw DataError("not a model checkpoint: " + path);
  const std::uint64_t len = read_u64le(in);
  std::string js(len, '\0');
  in.read(js.data(), static_cast<std::streamsize>(len));
  if (!in) throw DataError("truncated checkpoint config: " + path);
  ModelConfig cfg;
  try {
    cfg = model_config_from_json(nlohmann::json::parse(js));
  } catch (const nlohmann::json::exception& e) {
    throw DataError("invalid checkpoint config: " + std::string(e.what()));
  }
  cfg.validate();
  ModelParams params;
  for (const TensorSpec& ts : tensor_layout(cfg)) {
    Matrix m(ts.rows, ts.cols);
    for (Eigen::Index r = 0; r < m.rows(); r++)
      for (Eigen::Index c = 0; c < m.cols(); c++) m(r, c) = read_f64le(in);
    if (!in) throw DataError("truncated checkpoint tensors: " + path);
    params.tensors.emplace_back(ts.name, std::move(m));
  }
  return {std::move(cfg), std::move(params)};
}

}  // namespace cocn
