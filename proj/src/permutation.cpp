#include "permutation.hpp"

#include <Eigen/QR>

#include <cmath>
#include <iostream>

namespace cocn {

using namespace op;

Var mlp_forward(Tape& t, Var x, const std::vector<Var>& layers) {
  if (layers.size() % 2 != 0)
    throw DimensionError("mlp_forward: expected (weight, bias) pairs, got " +
                         std::to_string(layers.size()) + " tensors");
  Var h = x;
  for (size_t l = 0; l + 1 < layers.size(); l += 2) {
    h = add(matmul(h, layers[l]), layers[l + 1]);
    if (l + 2 < layers.size()) h = relu(h);
  }
  return h;
}

Var regress_position_explicit(Tape& t, Var x,
                              std::shared_ptr<const SpMat> a_norm,
                              int smoothness_t,
                              const std::vector<Var>& mlp_layers) {
  if (a_norm->rows() != x.rows())
    throw DimensionError(
        "regress_position_explicit: adjacency " +
        shape_str(a_norm->rows(), a_norm->cols()) + " vs features " +
        shape_str(x.rows(), x.cols()));
  Var r = mlp_forward(t, x, mlp_layers);
  for (int p = 0; p < smoothness_t; p++) r = spmm(a_norm, r);
  return r;
}

Vector regress_position_implicit(const Matrix& dist, double ridge) {
  const Eigen::Index n = dist.rows();
  const double nn = static_cast<double>(n);
  // Closed-form positions from pairwise distances:
  //   [ diag(M^{circ 2} 1) + (4/n) d - I ] r = (2/n) d^{circ 2} 1,
  // with M = (2/n) d - 1*1^T. Note this is deliberately *not* the exact
  // least-squares solution of the pairwise system r_j + M_ij r_i = d_ij:
  // that system is solved exactly by the constant vector (n/2)*1 for every
  // distance matrix, which carries no ordering information. The bracket
  // above breaks that degeneracy and empirically orders nodes by how
  // central they are (eccentricity-like), which is what downstream
  // permutation generation needs.
  Matrix m = (2.0 / nn) * dist - Matrix::Ones(n, n);
  Matrix b = (4.0 / nn) * dist - Matrix::Identity(n, n);
  b.diagonal() += m.array().square().matrix().rowwise().sum();
  b.diagonal().array() += ridge;
  Vector rhs = (2.0 / nn) * dist.array().square().matrix().rowwise().sum();

  Eigen::LDLT<Matrix> ldlt(b);
  if (ldlt.info() == Eigen::Success) {
    Vector r = ldlt.solve(rhs);
    if (r.allFinite()) return r;
  }
  std::cerr << "warning: position system near-singular, "
               "falling back to a rank-revealing solve\n";
  return b.colPivHouseholderQr().solve(rhs);
}

Matrix implicit_position_heads(const Vector& r_base, int heads, double eps) {
  const Eigen::Index n = r_base.size();
  Matrix out(n, heads);
  for (int h = 0; h < heads; h++)
    for (Eigen::Index i = 0; i < n; i++)
      out(i, h) = r_base(i) + h * eps * static_cast<double>(i) /
                                  static_cast<double>(n);
  return out;
}

Var absolute_position_dense(Tape& t, Var r_a_col) {
  return rank_surrogate(r_a_col);
}

Var absolute_position_sparse(Tape& t, Var r_a_col) {
  return rank_approx(r_a_col);
}

Var relaxed_permutation(Tape& t, Var r, double tau) {
  const Eigen::Index n = r.rows();
  if (r.cols() != 1)
    throw DimensionError("relaxed_permutation: positions must be a column, "
                         "got " + shape_str(r.rows(), r.cols()));
  // P_ij = exp(-tau * ((i - r_j) mod n)), built as one node instead of the
  // sub/mod/scale/exp chain so only the n×n result lives on the tape.
  const double nd = static_cast<double>(n);
  const Matrix& rv = r.value();
  Matrix p(n, n);
  for (Eigen::Index j = 0; j < n; j++)
    for (Eigen::Index i = 0; i < n; i++) {
      double d = std::fmod(static_cast<double>(i) - rv(j, 0), nd);
      if (d < 0) d += nd;
      p(i, j) = std::exp(-tau * d);
    }
  int rid = r.id();
  return t.make(std::move(p), r.requires_grad(),
                [rid, tau](Tape& tp, int o) {
    if (!tp.requires_grad(rid)) return;
    // dP_ij/dr_j = tau * P_ij (the wrap is piecewise linear in r_j)
    const Matrix& g = tp.grad(o);
    const Matrix& pv = tp.value(o);
    tp.grad(rid).noalias() +=
        tau * g.cwiseProduct(pv).colwise().sum().transpose();
  });
}

SparsePerm sparse_permutation(Tape& t, Var r_a_col) {
  Var r = rank_approx(r_a_col);
  const Matrix ranks = r.value();  // detached discrete ranking result
  SparsePerm perm;
  perm.rank_of.resize(static_cast<size_t>(ranks.rows()));
  for (Eigen::Index j = 0; j < ranks.rows(); j++)
    perm.rank_of[j] = static_cast<int>(ranks(j, 0));
  perm.weight = op::exp(sub(t.constant(ranks), r));
  return perm;
}

Var permute_adjacency(Tape& t, Var p_hat,
                      std::shared_ptr<const SpMat> a) {
  if (p_hat.cols() != a->rows())
    throw DimensionError("permute: permutation " +
                         shape_str(p_hat.rows(), p_hat.cols()) +
                         " vs adjacency " + shape_str(a->rows(), a->cols()));
  // P A P^T in one node: the intermediates (P^T, A P^T) never hit the tape,
  // which matters once n is in the thousands.
  Matrix ahat = p_hat.value() * Matrix((*a) * p_hat.value().transpose());
  int pid = p_hat.id();
  return t.make(std::move(ahat), p_hat.requires_grad(),
                [pid, a](Tape& tp, int o) {
    if (!tp.requires_grad(pid)) return;
    const Matrix& g = tp.grad(o);
    const Matrix& pv = tp.value(pid);
    Matrix& gp = tp.grad(pid);
    gp.noalias() += (g * pv) * a->transpose();
    gp.noalias() += (g.transpose() * pv) * (*a);
  });
}

std::pair<Var, Var> permute_dense(Tape& t, Var p_hat, Var x,
                                  std::shared_ptr<const SpMat> a) {
  if (p_hat.cols() != x.rows() || p_hat.cols() != a->rows())
    throw DimensionError("permute: permutation " +
                         shape_str(p_hat.rows(), p_hat.cols()) +
                         " vs features " + shape_str(x.rows(), x.cols()) +
                         " vs adjacency " + shape_str(a->rows(), a->cols()));
  Var x_hat = matmul(p_hat, x);
  Var a_hat = permute_adjacency(t, p_hat, a);
  return {x_hat, a_hat};
}

Var sparse_permute_rows(Tape& t, const SparsePerm& perm, Var x) {
  const Eigen::Index n = x.rows();
  if (static_cast<Eigen::Index>(perm.rank_of.size()) != n)
    throw DimensionError("permute: " +
                         std::to_string(perm.rank_of.size()) +
                         " positions vs features " +
                         shape_str(x.rows(), x.cols()));
  const std::vector<int>& rank_of = perm.rank_of;
  Matrix out(n, x.cols());
  const Matrix& w = perm.weight.value();
  for (Eigen::Index j = 0; j < n; j++)
    out.row(rank_of[j]) = w(j, 0) * x.value().row(j);
  int xid = x.id(), wid = perm.weight.id();
  bool req = x.requires_grad() || perm.weight.requires_grad();
  return t.make(std::move(out), req, [xid, wid, rank_of](Tape& tp, int o) {
    const Matrix& g = tp.grad(o);
    const Matrix& xv = tp.value(xid);
    const Matrix& wv = tp.value(wid);
    if (tp.requires_grad(xid)) {
      Matrix& gx = tp.grad(xid);
      for (size_t j = 0; j < rank_of.size(); j++)
        gx.row(j) += wv(j, 0) * g.row(rank_of[j]);
    }
    if (tp.requires_grad(wid)) {
      Matrix& gw = tp.grad(wid);
      for (size_t j = 0; j < rank_of.size(); j++)
        gw(j, 0) += g.row(rank_of[j]).dot(xv.row(j));
    }
  });
}

PermutedSparseAdj permute_sparse_adj(
    Tape& t, const SparsePerm& perm,
    const std::vector<std::pair<int, int>>& edges) {
  PermutedSparseAdj out;
  out.row.reserve(2 * edges.size());
  out.col.reserve(2 * edges.size());
  out.src_i.reserve(2 * edges.size());
  out.src_j.reserve(2 * edges.size());
  for (auto [i, j] : edges) {
    out.row.push_back(perm.rank_of[i]);
    out.col.push_back(perm.rank_of[j]);
    out.src_i.push_back(i);
    out.src_j.push_back(j);
    out.row.push_back(perm.rank_of[j]);
    out.col.push_back(perm.rank_of[i]);
    out.src_i.push_back(j);
    out.src_j.push_back(i);
  }
  out.values = mul(gather_rows(perm.weight, out.src_i),
                   gather_rows(perm.weight, out.src_j));
  return out;
}

}  // namespace cocn
