// Acceptance suite: every release gate runs as one criterion with a single
// PASS/FAIL/SKIP line. Run with no arguments for all criteria, or name the
// criteria to run (see `acceptance list`). Exit code 0 when everything
// selected passes, 1 on any failure, 77 when a data-dependent criterion was
// skipped because its dataset directory is absent.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <limits>
#include <memory>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "adam.hpp"
#include "convolution.hpp"
#include "gradcheck.hpp"
#include "graph.hpp"
#include "harness.hpp"
#include "model.hpp"
#include "ops.hpp"
#include "permutation.hpp"
#include "tape.hpp"
#include "test_util.hpp"

using namespace cocn;
using namespace cocn::op;

namespace {

enum class Outcome { Pass, Fail, Skip };

constexpr double kInf = std::numeric_limits<double>::infinity();

std::string fmt_g(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

Matrix rnd(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); i++) m.data()[i] = u(rng);
  return m;
}

double min_sorted_gap(const Matrix& col) {
  std::vector<double> s(col.data(), col.data() + col.size());
  std::sort(s.begin(), s.end());
  double gap = kInf;
  for (size_t i = 1; i < s.size(); i++) gap = std::min(gap, s[i] - s[i - 1]);
  return gap;
}

// Column vector with pairwise gaps wide enough that ranking is unambiguous.
Matrix tie_free_vector(int n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  Matrix v(n, 1);
  do {
    for (int i = 0; i < n; i++) v(i, 0) = u(rng);
  } while (min_sorted_gap(v) <= 1e-6);
  return v;
}

// Hard 0/1 permutation matrix from integer positions.
Matrix hard_permutation(const Matrix& r) {
  const Eigen::Index n = r.rows();
  Matrix p = Matrix::Zero(n, n);
  for (Eigen::Index j = 0; j < n; j++)
    p(static_cast<Eigen::Index>(r(j, 0)), j) = 1.0;
  return p;
}

std::vector<int> random_perm(int n, std::mt19937_64& rng) {
  std::vector<int> p(n);
  std::iota(p.begin(), p.end(), 0);
  std::shuffle(p.begin(), p.end(), rng);
  return p;
}

// Relabel node v to perm[v], carrying feature rows along.
Graph apply_relabel(const Graph& g, const std::vector<int>& perm) {
  Graph h;
  h.n = g.n;
  std::vector<std::pair<int, int>> e;
  for (auto [i, j] : g.edges) e.emplace_back(perm[i], perm[j]);
  h.edges = normalize_edges(h.n, std::move(e));
  if (g.has_features()) {
    h.features.resize(g.features.rows(), g.features.cols());
    for (int v = 0; v < g.n; v++) h.features.row(perm[v]) = g.features.row(v);
  }
  return h;
}

// Smallest gap between approximate positions over every head column.
double position_gap(const Graph& g, const ModelConfig& cfg,
                    const ModelParams& params) {
  Tape t;
  StagedParams sp = stage_params(t, params, cfg, false);
  Var r_a = approximate_positions(t, g, cfg, sp, t.constant(g.features));
  double gap = kInf;
  for (int h = 0; h < cfg.heads; h++)
    gap = std::min(gap, min_sorted_gap(r_a.value().col(h)));
  return gap;
}

// Graph + features redrawn until no two approximate positions nearly tie:
// equal positions fall back to index order, which relabeling changes by
// construction, so the invariance property preconditions tie-free inputs.
Graph tie_free_featured_graph(int n, const ModelConfig& cfg,
                              const ModelParams& params,
                              std::mt19937_64& rng) {
  for (int attempt = 0; attempt < 100; attempt++) {
    Graph g = testutil::random_connected_graph(n, 0.25, rng);
    g.features = rnd(n, cfg.in_features, rng);
    for (int i = 0; i < n; i++) g.features(i, 0) += 0.01 * i;
    if (position_gap(g, cfg, params) > 1e-6) return g;
  }
  throw DataError("no tie-free graph draw in 100 attempts");
}

// Brute-force reference for the diagonal convolution: direct evaluation of
//   S_j(o) = sum_{c,p,q} w(o,c,p,q) E_c(i+p, i+q)
//          + sum_{p,t} v(o,p,t) H(i+p, t) + bias(o),  i = s*j.
Matrix diag_conv_oracle(const std::vector<Matrix>& e, const Matrix& h,
                        const Matrix& w, const Matrix& v, const Matrix& bias,
                        int k, int s) {
  const int n = static_cast<int>(h.rows());
  const int c_n = static_cast<int>(h.cols());
  const int e_ch = static_cast<int>(e.size());
  const int out_ch = static_cast<int>(w.rows());
  const int n_out = (n - k) / s + 1;
  Matrix out(n_out, out_ch);
  for (int j = 0; j < n_out; j++) {
    int i = s * j;
    for (int o = 0; o < out_ch; o++) {
      double acc = bias(0, o);
      for (int c = 0; c < e_ch; c++)
        for (int p = 0; p < k; p++)
          for (int q = 0; q < k; q++)
            acc += w(o, (c * k + p) * k + q) * e[c](i + p, i + q);
      for (int p = 0; p < k; p++)
        for (int tt = 0; tt < c_n; tt++)
          acc += v(o, p * c_n + tt) * h(i + p, tt);
      out(j, o) = acc;
    }
  }
  return out;
}

// Independent reference for the approximate ranking backward: differentiate
// (1/4) * sum_i g_i * (rank_i * x_i - sum_{j: rank_j < rank_i} x_j) with the
// ranks frozen, written as plain nested loops.
Matrix rank_backward_oracle(const Matrix& x, const Matrix& g) {
  const int n = static_cast<int>(x.rows());
  std::vector<int> rank(n, 0);
  for (int i = 0; i < n; i++)
    for (int j = 0; j < n; j++)
      if (x(j, 0) < x(i, 0)) rank[i]++;
  Matrix gx = Matrix::Zero(n, 1);
  for (int i = 0; i < n; i++) {
    gx(i, 0) += 0.25 * g(i, 0) * rank[i];
    for (int j = 0; j < n; j++)
      if (rank[j] < rank[i]) gx(j, 0) -= 0.25 * g(i, 0);
  }
  return gx;
}

// Independent reference for the parameter-free positions: assemble the same
// stabilized square system entry by entry with scalar loops and solve it as
// a dense least-squares problem (rank-revealing QR), a different path from
// the production vectorized assembly + LDLT.
Vector implicit_lsq_oracle(const Matrix& d, double ridge = 1e-8) {
  const int n = static_cast<int>(d.rows());
  Matrix a = Matrix::Zero(n, n);
  Vector b = Vector::Zero(n);
  for (int i = 0; i < n; i++) {
    double sq_sum = 0;
    for (int j = 0; j < n; j++) {
      double m_ij = (2.0 / n) * d(i, j) - 1.0;
      sq_sum += m_ij * m_ij;
      a(i, j) += (4.0 / n) * d(i, j);
      b(i) += (2.0 / n) * d(i, j) * d(i, j);
    }
    a(i, i) += sq_sum - 1.0 + ridge;
  }
  return a.colPivHouseholderQr().solve(b);
}

// Locate a user-supplied dataset directory relative to wherever the binary
// runs from (repo root, build tree, or COCN_DATA_DIR).
std::string find_data(const std::string& name) {
  namespace fs = std::filesystem;
  std::vector<fs::path> candidates;
  if (const char* env = std::getenv("COCN_DATA_DIR"))
    candidates.emplace_back(fs::path(env) / name);
  for (const char* prefix : {"data", "../data", "../../data", "../../../data"})
    candidates.emplace_back(fs::path(prefix) / name);
  for (const fs::path& p : candidates)
    if (fs::exists(p)) return p.string();
  return {};
}

// ---------------------------------------------------------------------------
// Criterion 1: the relaxed permutation converges to the hard permutation as
// the relaxation sharpens, monotonically in off-target mass.

Outcome relaxation_convergence(std::string& detail) {
  std::mt19937_64 rng(7);
  const int n = 16;
  const std::vector<double> taus = {0.1, 1.0, 10.0, 50.0};
  double worst_hard = 0.0;
  for (int trial = 0; trial < 100; trial++) {
    Matrix ra = tie_free_vector(n, rng);
    Tape t;
    Var r = absolute_position_dense(t, t.input(ra, false));
    Matrix hard = hard_permutation(r.value());
    double prev_mass = kInf;
    for (double tau : taus) {
      Matrix p = relaxed_permutation(t, r, tau).value();
      double mass = (p - p.cwiseProduct(hard)).sum();
      if (!(mass < prev_mass)) {
        detail = "off-target mass failed to shrink at tau=" + fmt_g(tau) +
                 " (trial " + std::to_string(trial) + ")";
        return Outcome::Fail;
      }
      prev_mass = mass;
      if (tau == 50.0)
        worst_hard =
            std::max(worst_hard, (p - hard).cwiseAbs().maxCoeff());
    }
  }
  if (worst_hard >= 1e-9) {
    detail = "tau=50 matrix is " + fmt_g(worst_hard) +
             " from the hard permutation (tol 1e-9)";
    return Outcome::Fail;
  }
  detail = "100 vectors (n=16): max |P(tau=50) - hard| = " +
           fmt_g(worst_hard) +
           "; off-target mass strictly decreasing over tau {0.1,1,10,50}";
  return Outcome::Pass;
}

// ---------------------------------------------------------------------------
// Criterion 2: relabeling the input graph leaves the calibrated features,
// calibrated structure, and graph-level logits unchanged.

Outcome relabeling_invariance(std::string& detail) {
  std::mt19937_64 rng(11);
  ModelConfig cfg;
  cfg.variant = Variant::Vanilla;
  cfg.task = Task::GraphClassification;
  cfg.in_features = 3;
  cfg.num_classes = 2;
  cfg.heads = 2;
  cfg.hidden = 6;
  cfg.pos_hidden = 5;
  cfg.l1 = 1;
  cfg.l2 = 1;
  cfg.trailing_conv = true;
  cfg.kernel_sizes = {2, 3, 2};
  cfg.tau = 10.0;
  cfg.smoothness_t = 2;
  ModelParams params = init_params(cfg, 8);

  // Calibrated features and structure per head: X-hat = P X, A-hat = P A P^T.
  auto calibrated = [&](const Graph& g) {
    Tape t;
    StagedParams sp = stage_params(t, params, cfg, false);
    Var r_a = approximate_positions(t, g, cfg, sp, t.constant(g.features));
    auto a = std::make_shared<const SpMat>(g.sparse_adjacency());
    std::vector<Matrix> out;
    for (int head = 0; head < cfg.heads; head++) {
      Var r = absolute_position_dense(t, slice_cols(r_a, head, 1));
      auto [xh, ah] = permute_dense(t, relaxed_permutation(t, r, cfg.tau),
                                    t.constant(g.features), a);
      out.push_back(xh.value());
      out.push_back(ah.value());
    }
    return out;
  };

  double worst_feat = 0.0, worst_adj = 0.0, worst_logit = 0.0;
  for (int trial = 0; trial < 50; trial++) {
    const int n = 8 + static_cast<int>(rng() % 13);  // 8..20
    Graph g = tie_free_featured_graph(n, cfg, params, rng);
    Graph h = apply_relabel(g, random_perm(n, rng));

    std::vector<Matrix> cal_g = calibrated(g), cal_h = calibrated(h);
    for (size_t i = 0; i < cal_g.size(); i++) {
      double d = (cal_g[i] - cal_h[i]).cwiseAbs().maxCoeff();
      double& slot = (i % 2 == 0) ? worst_feat : worst_adj;
      slot = std::max(slot, d);
    }

    Tape t1, t2;
    Forward f1 = forward_graph(t1, g, cfg, stage_params(t1, params, cfg, false));
    Forward f2 = forward_graph(t2, h, cfg, stage_params(t2, params, cfg, false));
    worst_logit = std::max(
        worst_logit,
        (f1.logits.value() - f2.logits.value()).cwiseAbs().maxCoeff());
  }

  detail = "50 graphs (n 8..20): max deltas features " + fmt_g(worst_feat) +
           ", structure " + fmt_g(worst_adj) + ", logits " +
           fmt_g(worst_logit) + " (tol 1e-6)";
  return (worst_feat < 1e-6 && worst_adj < 1e-6 && worst_logit < 1e-6)
             ? Outcome::Pass
             : Outcome::Fail;
}

// ---------------------------------------------------------------------------
// Criterion 3: finite-difference agreement for every smooth primitive and a
// two-layer convolution stack, plus the approximate-ranking backward against
// its dense reference.

Outcome gradient_suite(std::string& detail) {
  double worst_prim = 0.0;
  std::string worst_prim_op = "-";
  for (const GradCheckResult& r : gradcheck_suite(0)) {
    if (r.max_rel_err > worst_prim) {
      worst_prim = r.max_rel_err;
      worst_prim_op = r.op;
    }
  }
  if (worst_prim >= 1e-4) {
    detail = "primitive " + worst_prim_op + " FD error " + fmt_g(worst_prim) +
             " (tol 1e-4)";
    return Outcome::Fail;
  }

  // Two compression levels, checking the gradient of every tensor involved.
  std::mt19937_64 rng(19);
  const int n = 8, c = 2;
  Matrix h0 = rnd(n, c, rng) * 0.5;
  Matrix e0 = rnd(n, n, rng) * 0.5;
  Matrix w1 = rnd(c, 4, rng), v1 = rnd(c, 2 * c, rng), b1 = rnd(1, c, rng);
  Matrix w2 = rnd(c, 4, rng), v2 = rnd(c, 2 * c, rng), b2 = rnd(1, c, rng);
  std::vector<Matrix*> slots = {&h0, &e0, &w1, &v1, &b1, &w2, &v2, &b2};
  double worst_stack = 0.0;
  for (Matrix* slot : slots) {
    auto f = [&](Tape& t, Var x) {
      auto pick = [&](Matrix& m) {
        return (&m == slot) ? x : t.constant(m);
      };
      DiagKernel k1{pick(w1), pick(v1), pick(b1), 2};
      DiagKernel k2{pick(w2), pick(v2), pick(b2), 2};
      LevelState state{pick(h0), {pick(e0)}};
      state = compressed_conv_layer(t, state, k1, 1, true);
      state = compressed_conv_layer(t, state, k2, 2, true);
      Var flat = sum(state.h);
      for (Var e : state.e) flat = add(flat, sum(e));
      return flat;
    };
    worst_stack =
        std::max(worst_stack, finite_difference_check(f, *slot, 1e-5));
  }
  if (worst_stack >= 1e-4) {
    detail = "2-layer stack FD error " + fmt_g(worst_stack) + " (tol 1e-4)";
    return Outcome::Fail;
  }

  // Approximate-ranking backward against the dense nested-loop reference.
  double worst_rank = 0.0;
  for (int nn : {4, 16, 33, 64}) {
    for (int trial = 0; trial < 3; trial++) {
      Matrix ra = tie_free_vector(nn, rng);
      Matrix g = rnd(nn, 1, rng);
      Tape t;
      Var rav = t.input(ra, true);
      Var r = absolute_position_sparse(t, rav);
      t.backward(sum(mul(r, t.constant(g))));
      double d =
          (rav.grad() - rank_backward_oracle(ra, g)).cwiseAbs().maxCoeff();
      worst_rank = std::max(worst_rank, d);
    }
  }
  if (worst_rank >= 1e-6) {
    detail = "ranking backward off by " + fmt_g(worst_rank) +
             " from the dense reference (tol 1e-6)";
    return Outcome::Fail;
  }

  detail = "primitives max " + fmt_g(worst_prim) + " (" + worst_prim_op +
           "); 2-layer stack max " + fmt_g(worst_stack) +
           "; ranking backward vs dense reference max " + fmt_g(worst_rank) +
           " (n<=64)";
  return Outcome::Pass;
}

// ---------------------------------------------------------------------------
// Criterion 4: production kernels against brute-force references.

Outcome oracle_agreement(std::string& detail) {
  std::mt19937_64 rng(17);

  // Diagonal convolution vs the triple-loop reference over random shapes.
  double worst_conv = 0.0;
  for (int trial = 0; trial < 40; trial++) {
    const int n = 2 + static_cast<int>(rng() % 15);  // 2..16
    const int k = 1 + static_cast<int>(rng() % std::min(n, 4));
    const int s = 1 + static_cast<int>(rng() % k);
    const int e_ch = 1 + static_cast<int>(rng() % 2);
    const int c_n = 1 + static_cast<int>(rng() % 3);
    const int out_ch = 1 + static_cast<int>(rng() % 3);
    std::vector<Matrix> e_mats;
    for (int c = 0; c < e_ch; c++) e_mats.push_back(rnd(n, n, rng));
    Matrix h = rnd(n, c_n, rng);
    Matrix w = rnd(out_ch, e_ch * k * k, rng);
    Matrix v = rnd(out_ch, k * c_n, rng);
    Matrix bias = rnd(1, out_ch, rng);

    Tape t;
    std::vector<Var> e_vars;
    for (const Matrix& m : e_mats) e_vars.push_back(t.constant(m));
    Matrix got = diagonal_conv(e_vars, t.constant(h), t.constant(w),
                               t.constant(v), t.constant(bias), k, s)
                     .value();
    Matrix want = diag_conv_oracle(e_mats, h, w, v, bias, k, s);
    worst_conv = std::max(worst_conv, (got - want).cwiseAbs().maxCoeff());
  }
  if (worst_conv >= 1e-12) {
    detail = "diagonal conv off by " + fmt_g(worst_conv) +
             " from the triple-loop reference (tol 1e-12)";
    return Outcome::Fail;
  }

  // Sparse permutation application vs the dense hard permutation, exactly.
  double worst_sparse = 0.0;
  for (int trial = 0; trial < 10; trial++) {
    const int n = 5 + static_cast<int>(rng() % 6);  // 5..10
    Graph g = testutil::random_connected_graph(n, 0.35, rng);
    Matrix x = rnd(n, 3, rng);
    Matrix ra = tie_free_vector(n, rng);

    Tape t;
    SparsePerm perm = sparse_permutation(t, t.input(ra, true));
    Matrix xh_sparse = sparse_permute_rows(t, perm, t.constant(x)).value();
    PermutedSparseAdj ah_sparse = permute_sparse_adj(t, perm, g.edges);

    Matrix ranks(n, 1);
    for (int j = 0; j < n; j++) ranks(j, 0) = perm.rank_of[j];
    Matrix p_hard = hard_permutation(ranks);
    Matrix ah_dense = p_hard * g.dense_adjacency() * p_hard.transpose();

    Matrix ah_rebuilt = Matrix::Zero(n, n);
    for (size_t e = 0; e < ah_sparse.row.size(); e++)
      ah_rebuilt(ah_sparse.row[e], ah_sparse.col[e]) +=
          ah_sparse.values.value()(static_cast<Eigen::Index>(e), 0);

    worst_sparse = std::max(
        worst_sparse, (xh_sparse - p_hard * x).cwiseAbs().maxCoeff());
    worst_sparse = std::max(
        worst_sparse, (ah_rebuilt - ah_dense).cwiseAbs().maxCoeff());
  }
  if (worst_sparse != 0.0) {
    detail = "sparse permutation application differs from the dense hard "
             "permutation by " + fmt_g(worst_sparse) + " (must be exact)";
    return Outcome::Fail;
  }

  // Parameter-free positions vs the scalar-assembly QR reference.
  double worst_imp = 0.0;
  for (int trial = 0; trial < 15; trial++) {
    const int n = 2 + static_cast<int>(rng() % 9);  // 2..10
    Graph g = testutil::random_connected_graph(n, 0.4, rng);
    Matrix d = shortest_path_distances(g, 0.0).d;
    Vector got = regress_position_implicit(d);
    Vector want = implicit_lsq_oracle(d);
    worst_imp = std::max(worst_imp, (got - want).cwiseAbs().maxCoeff());
  }
  if (worst_imp >= 1e-8) {
    detail = "implicit positions off by " + fmt_g(worst_imp) +
             " from the least-squares reference (tol 1e-8)";
    return Outcome::Fail;
  }

  detail = "diag conv vs triple loop max " + fmt_g(worst_conv) +
           " (40 shapes, tol 1e-12); sparse apply == hard dense exactly; "
           "implicit positions vs least-squares max " + fmt_g(worst_imp) +
           " (tol 1e-8)";
  return Outcome::Pass;
}

// ---------------------------------------------------------------------------
// Criterion 5: sharper relaxation reconstructs coordinates better on a ring
// and a grid.

Outcome reconstruction_ordering(std::string& detail) {
  TrainConfig tcfg;
  tcfg.lr = 0.02;
  tcfg.max_epochs = 150;
  tcfg.seed = 0;

  const Graph ring = make_ring_graph(32);
  const Graph grid = make_grid_graph(6, 6);
  const double ring_sharp = reconstruction_experiment(ring, 10.0, tcfg).mse;
  const double ring_soft = reconstruction_experiment(ring, 0.1, tcfg).mse;
  const double grid_sharp = reconstruction_experiment(grid, 10.0, tcfg).mse;
  const double grid_soft = reconstruction_experiment(grid, 0.1, tcfg).mse;

  detail = "ring-32 mse " + fmt_g(ring_sharp) + " (tau=10) vs " +
           fmt_g(ring_soft) + " (tau=0.1); grid-6x6 mse " +
           fmt_g(grid_sharp) + " (tau=10) vs " + fmt_g(grid_soft) +
           " (tau=0.1)";
  return (ring_sharp < ring_soft && grid_sharp < grid_soft) ? Outcome::Pass
                                                            : Outcome::Fail;
}

// ---------------------------------------------------------------------------
// Criterion 6: non-isomorphic pairs are separated by randomly initialized
// seeded embeddings, on generated 8-node pairs and on the strongly regular
// collection when present.

Outcome isomorphism_screen(std::string& detail) {
  ModelConfig cfg;
  cfg.variant = Variant::Vanilla;
  cfg.task = Task::GraphClassification;
  cfg.position_mode = PositionMode::Implicit;
  cfg.num_classes = 2;
  cfg.heads = 4;
  cfg.hidden = 32;
  cfg.l1 = 1;
  cfg.l2 = 1;
  cfg.trailing_conv = true;
  cfg.kernel_sizes = {3, 3, 3};
  cfg.tau = 10.0;
  const double epsilon = 1e-4;
  const std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4};

  auto sized_params = [&](const std::vector<std::pair<Graph, Graph>>& pairs) {
    int max_degree = 0;
    for (const auto& [a, b] : pairs) {
      for (int d : a.degrees()) max_degree = std::max(max_degree, d);
      for (int d : b.degrees()) max_degree = std::max(max_degree, d);
    }
    ModelConfig sized = cfg;
    sized.in_features = max_degree + 1;
    return param_count(sized);
  };

  std::mt19937_64 rng(2026);
  auto pairs8 = random_nonisomorphic_pairs(500, 8, rng);
  long params8 = sized_params(pairs8);
  if (params8 > 30000) {
    detail = "model too large: " + std::to_string(params8) +
             " params (budget 30000)";
    return Outcome::Fail;
  }
  int u8 = isomorphism_test(pairs8, cfg, epsilon, seeds);
  if (u8 != 0) {
    detail = "generated 8-node pairs: " + std::to_string(u8) +
             " of 500 undistinguished (want 0)";
    return Outcome::Fail;
  }

  std::string dir = find_data("sr25");
  if (dir.empty()) {
    detail = "generated 8-node pairs: 0 of 500 undistinguished (" +
             std::to_string(params8) +
             " params, 5 seeds, eps 1e-4); strongly regular collection not "
             "found at data/sr25/*.g6";
    return Outcome::Skip;
  }

  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir))
    if (entry.path().extension() == ".g6") files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  std::vector<Graph> graphs;
  for (const auto& f : files) {
    std::vector<Graph> part = load_graph6(f.string());
    graphs.insert(graphs.end(), part.begin(), part.end());
  }
  if (graphs.size() < 2) {
    detail = "found " + dir + " but parsed " +
             std::to_string(graphs.size()) + " graphs from its .g6 files";
    return Outcome::Fail;
  }
  auto pairs_sr = all_graph_pairs(graphs);
  long params_sr = sized_params(pairs_sr);
  if (params_sr > 30000) {
    detail = "model too large: " + std::to_string(params_sr) +
             " params (budget 30000)";
    return Outcome::Fail;
  }
  int u_sr = isomorphism_test(pairs_sr, cfg, epsilon, seeds);

  detail = "sr25: " + std::to_string(u_sr) + " of " +
           std::to_string(pairs_sr.size()) +
           " undistinguished; generated 8-node pairs: 0 of 500; " +
           std::to_string(std::max(params8, params_sr)) +
           " params (5 seeds, eps 1e-4)";
  return (u_sr == 0) ? Outcome::Pass : Outcome::Fail;
}

// ---------------------------------------------------------------------------
// Criterion 7: 10-fold cross-validation accuracy on MUTAG.

Outcome mutag_benchmark(std::string& detail) {
  std::string dir = find_data("MUTAG");
  if (dir.empty()) {
    detail = "expected TU-format dataset at data/MUTAG; not found";
    return Outcome::Skip;
  }
  Dataset ds = load_tu_dataset(dir);

  nlohmann::json mj = {
      {"variant", "vanilla"},      {"task", "graph"},
      {"in_features", ds.feature_dim}, {"num_classes", ds.num_classes},
      {"heads", 4},                {"hidden", 64},
      {"tau", 10.0},
  };
  ModelConfig mcfg = model_config_from_json(mj);

  TrainConfig tcfg;
  tcfg.lr = 1e-3;
  tcfg.weight_decay = 1e-4;
  tcfg.max_epochs = 60;
  tcfg.early_stop_patience = 15;
  tcfg.batch_size = 4;
  tcfg.seed = 0;
  tcfg.folds = 10;

  MetricsReport rep = cross_validate(ds, mcfg, tcfg);
  detail = std::to_string(ds.graphs.size()) +
           " graphs, 10-fold CV mean accuracy " + fmt_g(rep.mean_accuracy) +
           " +/- " + fmt_g(rep.std_accuracy) + " (need >= 0.80)";
  return (rep.mean_accuracy >= 0.80) ? Outcome::Pass : Outcome::Fail;
}

// ---------------------------------------------------------------------------
// Criterion 8: the segment variant's epoch time grows slower than the
// expanded variant's between n=1000 and n=5000, cheaper variants never cost
// more than expanded at equal n, and expanded refuses beyond its cap.

Outcome scaling_trend(std::string& detail) {
  const std::vector<int> sizes = {1000, 5000};
  auto rows = timing_benchmark(
      {Variant::Expanded, Variant::Sparse, Variant::Segment}, sizes, 8.0, 0);
  auto seconds_of = [&](const std::string& variant, int n) -> double {
    for (const BenchRow& row : rows)
      if (row.variant == variant && row.n == n) {
        if (row.status != "ok")
          throw DataError(variant + " at n=" + std::to_string(n) +
                          " reported status " + row.status);
        return row.seconds;
      }
    throw DataError("missing benchmark row " + variant);
  };
  const double e1 = seconds_of("expanded", 1000);
  const double e5 = seconds_of("expanded", 5000);
  const double p1 = seconds_of("sparse", 1000);
  const double p5 = seconds_of("sparse", 5000);
  const double s1 = seconds_of("segment", 1000);
  const double s5 = seconds_of("segment", 5000);

  if (p1 > e1 || p5 > e5 || s1 > e1 || s5 > e5) {
    detail = "a cheap variant cost more than expanded at equal n (sparse " +
             fmt_g(p1) + "/" + fmt_g(p5) + "s, segment " + fmt_g(s1) + "/" +
             fmt_g(s5) + "s, expanded " + fmt_g(e1) + "/" + fmt_g(e5) + "s)";
    return Outcome::Fail;
  }

  const double seg_growth = s5 / s1;
  const double exp_growth = e5 / e1;
  if (!(seg_growth < exp_growth)) {
    detail = "segment epoch time grew x" + fmt_g(seg_growth) +
             ", expanded x" + fmt_g(exp_growth) +
             " between n=1000 and n=5000 (need segment < expanded)";
    return Outcome::Fail;
  }

  auto capped = timing_benchmark({Variant::Expanded}, {20001}, 8.0, 0);
  if (capped.size() != 1 || capped[0].status != "refused") {
    detail = "expanded at n=20001 reported status '" +
             (capped.empty() ? std::string("<none>") : capped[0].status) +
             "' (want refused)";
    return Outcome::Fail;
  }

  detail = "segment growth x" + fmt_g(seg_growth) + " < expanded growth x" +
           fmt_g(exp_growth) + " (1000 -> 5000); sparse/segment <= expanded "
           "at both sizes; expanded refuses n=20001";
  return Outcome::Pass;
}

// ---------------------------------------------------------------------------

struct CriterionDef {
  const char* name;
  Outcome (*fn)(std::string&);
  double budget_seconds;  // 0 = no stated budget
};

const CriterionDef kCriteria[] = {
    {"relaxation_convergence", relaxation_convergence, 5.0},
    {"relabeling_invariance", relabeling_invariance, 30.0},
    {"gradient_suite", gradient_suite, 60.0},
    {"oracle_agreement", oracle_agreement, 0.0},
    {"reconstruction_ordering", reconstruction_ordering, 300.0},
    {"isomorphism_screen", isomorphism_screen, 600.0},
    {"mutag_benchmark", mutag_benchmark, 2700.0},
    {"scaling_trend", scaling_trend, 600.0},
};

void usage(std::FILE* out) {
  std::fprintf(out, "usage: acceptance [criterion ...]\ncriteria:\n");
  for (const CriterionDef& c : kCriteria)
    std::fprintf(out, "  %s\n", c.name);
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<const CriterionDef*> selected;
  if (argc <= 1) {
    for (const CriterionDef& c : kCriteria) selected.push_back(&c);
  } else {
    for (int i = 1; i < argc; i++) {
      if (std::strcmp(argv[i], "list") == 0) {
        usage(stdout);
        return 0;
      }
      const CriterionDef* match = nullptr;
      for (const CriterionDef& c : kCriteria)
        if (c.name == std::string(argv[i])) match = &c;
      if (!match) {
        std::fprintf(stderr, "unknown criterion: %s\n", argv[i]);
        usage(stderr);
        return 2;
      }
      selected.push_back(match);
    }
  }

  int failed = 0, skipped = 0;
  for (const CriterionDef* c : selected) {
    const auto t0 = std::chrono::steady_clock::now();
    std::string detail;
    Outcome outcome;
    try {
      outcome = c->fn(detail);
    } catch (const std::exception& e) {
      outcome = Outcome::Fail;
      detail = std::string("unexpected exception: ") + e.what();
    }
    const double elapsed =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();
    if (outcome == Outcome::Pass && c->budget_seconds > 0 &&
        elapsed > c->budget_seconds) {
      outcome = Outcome::Fail;
      detail += " [exceeded the " + fmt_g(c->budget_seconds) +
                "s time budget]";
    }
    const char* tag = outcome == Outcome::Pass   ? "PASS"
                      : outcome == Outcome::Fail ? "FAIL"
                                                 : "SKIP";
    std::printf("%s %-26s %8.1fs  %s\n", tag, c->name, elapsed,
                detail.c_str());
    std::fflush(stdout);
    failed += outcome == Outcome::Fail;
    skipped += outcome == Outcome::Skip;
  }
  if (failed) return 1;
  return skipped ? 77 : 0;
}
