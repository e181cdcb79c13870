#pragma once

#include <vector>

#include "ops.hpp"
#include "tape.hpp"

namespace cocn {

// One compression level: node-set features plus per-channel structure
// features over the same node sets (H rows = E rows = E cols).
struct LevelState {
  Var h;               // n×c
  std::vector<Var> e;  // each n×n
};

// Kernel tensors for one diagonal convolution.
//   w: out×(e_channels·k·k), entry (o, (c·k+p)·k+q)
//   v: out×(k·node_channels), entry (o, p·c_n+t)
//   bias: 1×out
struct DiagKernel {
  Var w, v, bias;
  int k = 1;
};

// Kernel tensors for one 1-D transposed convolution.
//   w: out×(in·k), entry (o, ci·k+p); bias: 1×out
struct TransKernel {
  Var w, bias;
  int k = 1;
};

// Output length of a diagonal convolution with n >= k: last window that fits.
inline int conv_output_length(int n, int k, int s) {
  return (n - k) / s + 1;
}

// Circularly pads node and structure features up to k rows when the level is
// smaller than the kernel; otherwise returns the state unchanged.
LevelState pad_state_for_kernel(Tape& t, const LevelState& state, int k);

// Band removal: zeroes |i-j| < k per channel, shape preserved.
std::vector<Var> edge_update_tri(Tape& t, const std::vector<Var>& e, int k);

// 2-D max pooling per channel with the conv's own kernel and step.
std::vector<Var> edge_update_maxpool(Tape& t, const std::vector<Var>& e,
                                     int k, int s);

// One compression level: H' = ReLU(diagonal conv) (+ AvgPool shortcut when
// residual), E' banded (s = 1, cropped to the surviving window anchors) or
// max-pooled (s > 1).
LevelState compressed_conv_layer(Tape& t, const LevelState& state,
                                 const DiagKernel& kernel, int s,
                                 bool residual);

// Decompression level: ReLU(AvgPool(Dilate(H))) - TConv(H), both terms
// produced at target_len rows.
Var transposed_conv_layer(Tape& t, Var h_hat, const TransKernel& kernel,
                          int s, int target_len);

// Multi-kernel level: each branch convolves with its own kernel size, branch
// outputs are average-pooled to the shortest branch and summed; structure
// features follow the largest kernel. An optional AvgPool shortcut (largest
// kernel) is added once to the summed output.
LevelState inception_layer(Tape& t, const LevelState& state,
                           const std::vector<DiagKernel>& kernels, int s,
                           bool residual);

}  // namespace cocn
