#include "convolution.hpp"

#include <algorithm>
#include <limits>

namespace cocn {

using namespace op;

LevelState pad_state_for_kernel(Tape& t, const LevelState& state, int k) {
  const int n = static_cast<int>(state.h.rows());
  if (n >= k) return state;
  LevelState padded;
  padded.h = circular_pad_rows(state.h, k - n);
  for (Var e : state.e) padded.e.push_back(circular_pad2d(e, k - n));
  return padded;
}

std::vector<Var> edge_update_tri(Tape& t, const std::vector<Var>& e, int k) {
  std::vector<Var> out;
  out.reserve(e.size());
  for (Var ch : e) out.push_back(tri_band(ch, k));
  return out;
}

std::vector<Var> edge_update_maxpool(Tape& t, const std::vector<Var>& e,
                                     int k, int s) {
  std::vector<Var> out;
  out.reserve(e.size());
  for (Var ch : e) out.push_back(max_pool2d(ch, k, s));
  return out;
}

LevelState compressed_conv_layer(Tape& t, const LevelState& state,
                                 const DiagKernel& kernel, int s,
                                 bool residual) {
  LevelState in = pad_state_for_kernel(t, state, kernel.k);
  const int n = static_cast<int>(in.h.rows());
  const int k = kernel.k;

  Var act = relu(diagonal_conv(in.e, in.h, kernel.w, kernel.v, kernel.bias,
                               k, s));
  if (residual) {
    Var shortcut = avg_pool1d(in.h, k, s);
    if (shortcut.cols() != act.cols())
      throw DimensionError(
          "compressed_conv_layer: shortcut needs matching channel counts, "
          "got " + shape_str(shortcut.rows(), shortcut.cols()) + " vs " +
          shape_str(act.rows(), act.cols()));
    act = add(act, shortcut);
  }

  LevelState out;
  out.h = act;
  if (s == 1) {
    const int n_out = n - k + 1;
    for (Var banded : edge_update_tri(t, in.e, k)) {
      // surviving node sets are the window anchors 0..n-k, and anchor pairs
      // at |i-j| >= k are exactly the entries the band removal keeps
      Var cropped = banded;
      if (n_out < n)
        cropped = slice_cols(slice_rows(banded, 0, n_out), 0, n_out);
      out.e.push_back(cropped);
    }
  } else {
    out.e = edge_update_maxpool(t, in.e, k, s);
  }
  return out;
}

Var transposed_conv_layer(Tape& t, Var h_hat, const TransKernel& kernel,
                          int s, int target_len) {
  const int n = static_cast<int>(h_hat.rows());
  const int k = kernel.k;
  const int dilated_len = (n - 1) * s + 1;
  const int pad_total = target_len + k - 1 - dilated_len;
  if (pad_total < 0)
    throw DimensionError(
        "transposed_conv_layer: " + std::to_string(n) +
        " rows dilate to " + std::to_string(dilated_len) +
        ", longer than target " + std::to_string(target_len));
  const int pad_left = pad_total / 2;
  Var dilated = dilate_rows(h_hat, s);
  Var avg = avg_pool1d(
      replicate_pad_rows(dilated, pad_left, pad_total - pad_left), k, 1);
  Var tconv = conv_transpose1d(h_hat, kernel.w, kernel.bias, k, s,
                               target_len);
  if (avg.cols() != tconv.cols())
    throw DimensionError(
        "transposed_conv_layer: shortcut needs matching channel counts, "
        "got " + shape_str(avg.rows(), avg.cols()) + " vs " +
        shape_str(tconv.rows(), tconv.cols()));
  return sub(relu(avg), tconv);
}

LevelState inception_layer(Tape& t, const LevelState& state,
                           const std::vector<DiagKernel>& kernels, int s,
                           bool residual) {
  if (kernels.empty())
    throw ConfigError("inception_layer: needs at least one kernel size");

  size_t widest = 0;
  for (size_t b = 1; b < kernels.size(); b++)
    if (kernels[b].k > kernels[widest].k) widest = b;

  std::vector<LevelState> branches;
  branches.reserve(kernels.size());
  int n_star = std::numeric_limits<int>::max();
  for (const DiagKernel& kb : kernels) {
    branches.push_back(compressed_conv_layer(t, state, kb, s, false));
    n_star = std::min(n_star, static_cast<int>(branches.back().h.rows()));
  }

  Var h_sum;
  for (const LevelState& branch : branches) {
    Var hb = branch.h;
    const int len = static_cast<int>(hb.rows());
    if (len > n_star) hb = avg_pool1d(hb, len - n_star + 1, 1);
    h_sum = h_sum ? add(h_sum, hb) : hb;
  }
  if (residual) {
    LevelState in = pad_state_for_kernel(t, state, kernels[widest].k);
    h_sum = add(h_sum, avg_pool1d(in.h, kernels[widest].k, s));
  }

  LevelState out;
  out.h = h_sum;
  out.e = branches[widest].e;
  return out;
}

}  // namespace cocn
