#pragma once

#include "tape.hpp"

#include <memory>
#include <random>
#include <vector>

namespace cocn::op {

// Dense linear algebra.
Var matmul(Var a, Var b);
Var spmm(std::shared_ptr<const SpMat> s, Var x);  // constant sparse left factor
Var transpose(Var a);

// Elementwise. add/sub accept b of the same shape, a 1xC row (broadcast over
// rows of a), or 1x1 (broadcast everywhere); mul additionally accepts a 1x1 on
// either side.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double c);
Var add_const(Var a, double c);
Var relu(Var a);
Var sigmoid(Var a);
Var exp(Var a);

// Shape plumbing.
Var concat_cols(const std::vector<Var>& parts);
Var slice_cols(Var a, int c0, int len);
Var slice_rows(Var a, int r0, int len);
Var gather_rows(Var a, std::vector<int> idx);  // out.row(i) = a.row(idx[i])

// Reductions.
Var sum(Var a);
Var mean(Var a);
// Column-wise max over rows, 1xC output; ties route gradient to the first
// maximal row.
Var colmax(Var a);

// Pooling / resampling on rows (columns are channels).
Var max_pool2d(Var a, int k, int s);
Var avg_pool1d(Var a, int k, int s);
Var dilate_rows(Var a, int s);             // s-1 zero rows between rows
Var replicate_pad_rows(Var a, int top, int bottom);
Var circular_pad_rows(Var a, int pad);     // appends wrapped rows
Var circular_pad2d(Var a, int pad);        // wraps rows and columns

// 1-D transposed convolution with stride s and kernel length k over rows.
// x: n x c_in; w: c_out x (c_in*k) with w(o, ci*k + p); bias: 1 x c_out.
// Rows beyond the natural length (n-1)*s + k hold bias only; if out_len is
// shorter, trailing rows are dropped.
Var conv_transpose1d(Var x, Var w, Var bias, int k, int s, int out_len);

// Diagonal convolution: k x k edge kernel sliding along the main diagonal of
// each E channel plus a k-row node kernel over H, step s.
// E channels: n x n each; H: n x c_n; w: c_out x (e_ch*k*k) with
// w(o, (c*k + p)*k + q); v: c_out x (k*c_n) with v(o, p*c_n + t);
// bias: 1 x c_out. Output: ((n-k)/s + 1) x c_out. Requires n >= k.
Var diagonal_conv(const std::vector<Var>& e_channels, Var h, Var w, Var v,
                  Var bias, int k, int s);

// Zeroes the band |i-j| < k; shape preserved.
Var tri_band(Var e, int k);

// Row-wise layer normalization with per-column gain/bias (both 1 x C).
Var layer_norm(Var x, Var gain, Var bias);

// Forward step(x > 0); backward d/dx sigmoid(relu(x)) = sigmoid'(x)·[x > 0].
Var sign_surrogate(Var x);

// Entrywise x mod n into [0, n); gradient passes through unchanged.
Var mod_shift(Var x, double n);

// Forward: dense ascending ranks of a column vector (ties broken by index).
// Backward: first-order Taylor surrogate — grad_k = (g_k·r_k − Σ_{i: r_i >
// r_k} g_i) / 4.
Var rank_approx(Var x);

// Forward: dense ascending ranks (ties broken by index). Backward: the
// pairwise-comparison surrogate, i.e. the gradient of
// sum_i sum_j step(x_i − x_j) with step'(z) = sigmoid'(z)·[z > 0].
Var rank_surrogate(Var x);

// Losses (targets are constants).
Var softmax_cross_entropy(Var logits, const std::vector<int>& labels);
Var sigmoid_bce(Var logits, const Vector& targets);
Var mse(Var pred, const Matrix& target);

// Inverted dropout with a constant mask drawn from rng.
Var dropout(Var x, double rate, std::mt19937_64& rng);

// Helpers.
void check_same_tape(Var a, Var b);

}  // namespace cocn::op
