#pragma once

#include <memory>
#include <utility>
#include <vector>

#include "graph.hpp"
#include "ops.hpp"
#include "tape.hpp"

namespace cocn {

// Row-wise multi-layer perceptron: layers alternate (weight in×out,
// bias 1×out); ReLU between layers, linear final projection. An empty layer
// list is the identity.
Var mlp_forward(Tape& t, Var x, const std::vector<Var>& layers);

// Learned positions r_A = A_norm^t · MLP(X); one column per head.
Var regress_position_explicit(Tape& t, Var x,
                              std::shared_ptr<const SpMat> a_norm,
                              int smoothness_t,
                              const std::vector<Var>& mlp_layers);

// Parameter-free positions from scaled shortest-path distances: stationary
// point of min_r sum_ij (r_i + ((2/n)d_ij - 1) r_j - d_ij)^2, solved with a
// small ridge so near-singular systems (disconnected graphs) stay stable.
Vector regress_position_implicit(const Matrix& dist, double ridge = 1e-8);

// Derives one position column per head: head h adds deterministic jitter
// h * eps * index / n so heads get distinct but near-identical orders.
Matrix implicit_position_heads(const Vector& r_base, int heads,
                               double eps = 1e-4);

// Integer positions (count of strictly smaller entries, ties by index).
// Dense variant: gradient via the pairwise sigmoid-of-relu sign surrogate.
Var absolute_position_dense(Tape& t, Var r_a_col);
// Sparse variant: gradient via the linearized ranking expansion.
Var absolute_position_sparse(Tape& t, Var r_a_col);

// Relaxed permutation: entry (i, j) = exp(-tau * ((i - r_j + n) mod n)).
// Column j is exactly 1 at row r_j when r holds integer positions.
Var relaxed_permutation(Tape& t, Var r, double tau);

// Hard permutation with a gradient-carrying weight per node: the nonzero of
// column j sits at row rank_of[j] with forward value exp{0} = 1.
struct SparsePerm {
  std::vector<int> rank_of;  // rank_of[j] = destination row of node j
  Var weight;                // n×1 forward all-ones, carries the gradient
};
SparsePerm sparse_permutation(Tape& t, Var r_a_col);

// A-hat = P A P^T as a single tape node (memory-lean for large n).
Var permute_adjacency(Tape& t, Var p_hat, std::shared_ptr<const SpMat> a);

// Dense application: X-hat = P X, A-hat = P A P^T.
std::pair<Var, Var> permute_dense(Tape& t, Var p_hat, Var x,
                                  std::shared_ptr<const SpMat> a);

// Sparse application to features: out.row(rank_of[j]) = weight_j * x.row(j).
Var sparse_permute_rows(Tape& t, const SparsePerm& perm, Var x);

// Permuted adjacency in coordinate form, both orientations of every edge.
// Entry e sits at (row[e], col[e]) with value weight_i * weight_j.
struct PermutedSparseAdj {
  std::vector<int> row, col;      // destination coordinates, size 2m
  std::vector<int> src_i, src_j;  // original endpoints, size 2m
  Var values;                     // 2m×1
};
PermutedSparseAdj permute_sparse_adj(
    Tape& t, const SparsePerm& perm,
    const std::vector<std::pair<int, int>>& edges);

}  // namespace cocn
