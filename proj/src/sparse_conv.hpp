#pragma once

#include <vector>

#include "convolution.hpp"
#include "tape.hpp"

namespace cocn {

// Structure features for one level of the sparse pipeline: an explicit
// coordinate list over an n×n matrix whose unlisted entries are zero.
// Values stay on the tape as an m×1 column so gradients flow back to the
// permutation weights; coordinates are plain data.
struct SparseEdges {
  int n = 0;
  std::vector<int> row, col;
  Var values;  // m×1
};

// One compression level in coordinate form: dense node-set features, sparse
// single-channel structure features.
struct SparseLevelState {
  Var h;
  SparseEdges e;
};

// Densify (tests and oracles only).
Matrix sparse_edges_dense(const SparseEdges& e);

// Circular padding up to k when the level is smaller than the kernel; the
// coordinate analog of the dense pad (wrapped copies appended past n).
SparseLevelState sparse_pad_for_kernel(Tape& t, const SparseLevelState& state,
                                       int k);

// Diagonal convolution reading only the listed structure entries that fall
// inside some k×k diagonal window. O(entries·k/s + windows·k·channels).
Var sparse_diagonal_conv(Tape& t, const SparseEdges& e, Var h,
                         const DiagKernel& kernel, int s);

// Band removal fused with the unit-step crop: keeps entries with
// |row-col| >= k and both coordinates < n_out.
SparseEdges sparse_edge_tri_crop(Tape& t, const SparseEdges& e, int k,
                                 int n_out);

// 2-D max pooling over the listed entries. Correct for nonnegative values
// (adjacency-derived), where an empty window's max is the implicit zero;
// ties resolve to the first entry in row-major coordinate order, matching
// the dense pooling rule.
SparseEdges sparse_edge_maxpool(Tape& t, const SparseEdges& e, int k, int s);

// Coordinate-form mirror of compressed_conv_layer.
SparseLevelState sparse_compressed_layer(Tape& t,
                                         const SparseLevelState& state,
                                         const DiagKernel& kernel, int s,
                                         bool residual);

// Coordinate-form mirror of inception_layer.
SparseLevelState sparse_inception_layer(Tape& t,
                                        const SparseLevelState& state,
                                        const std::vector<DiagKernel>& kernels,
                                        int s, bool residual);

}  // namespace cocn
