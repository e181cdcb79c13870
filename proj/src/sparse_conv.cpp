#include "sparse_conv.hpp"

#include <algorithm>
#include <limits>
#include <map>
#include <utility>

namespace cocn {

using namespace op;

Matrix sparse_edges_dense(const SparseEdges& e) {
  Matrix out = Matrix::Zero(e.n, e.n);
  const Matrix& v = e.values.value();
  for (size_t idx = 0; idx < e.row.size(); idx++)
    out(e.row[idx], e.col[idx]) += v(static_cast<Eigen::Index>(idx), 0);
  return out;
}

SparseLevelState sparse_pad_for_kernel(Tape& t, const SparseLevelState& state,
                                       int k) {
  const int n = static_cast<int>(state.h.rows());
  if (n >= k) return state;
  SparseLevelState padded;
  padded.h = circular_pad_rows(state.h, k - n);
  padded.e.n = k;
  std::vector<int> src;
  for (size_t idx = 0; idx < state.e.row.size(); idx++)
    for (int r = state.e.row[idx]; r < k; r += n)
      for (int c = state.e.col[idx]; c < k; c += n) {
        padded.e.row.push_back(r);
        padded.e.col.push_back(c);
        src.push_back(static_cast<int>(idx));
      }
  padded.e.values = gather_rows(state.e.values, src);
  return padded;
}

namespace {

// Range of window indices j with j*s <= min(r,c) and max(r,c) < j*s + k,
// clamped to [0, n_out).
inline std::pair<int, int> window_range(int r, int c, int k, int s,
                                        int n_out) {
  int hi_coord = std::max(r, c);
  int lo_coord = std::min(r, c);
  int jlo = hi_coord - k + 1;
  jlo = jlo <= 0 ? 0 : (jlo + s - 1) / s;
  int jhi = std::min(lo_coord / s, n_out - 1);
  return {jlo, jhi};
}

}  // namespace

Var sparse_diagonal_conv(Tape& t, const SparseEdges& e, Var h,
                         const DiagKernel& kernel, int s) {
  const int n = static_cast<int>(h.rows());
  const int c_n = static_cast<int>(h.cols());
  const int k = kernel.k;
  const int c_out = static_cast<int>(kernel.w.rows());
  if (n < k)
    throw DimensionError("diagonal_conv: window " + std::to_string(k) +
                         " larger than the " + std::to_string(n) +
                         " node sets; pad the input first");
  if (e.n != n)
    throw DimensionError("diagonal_conv: structure side " +
                         std::to_string(e.n) + " vs " + std::to_string(n) +
                         " node rows");
  if (kernel.w.cols() != static_cast<Eigen::Index>(k) * k ||
      kernel.v.cols() != static_cast<Eigen::Index>(k) * c_n ||
      kernel.bias.cols() != c_out)
    throw DimensionError("diagonal_conv: kernel tensors disagree with k=" +
                         std::to_string(k) + ", channels " +
                         std::to_string(c_n) + "->" + std::to_string(c_out));
  const int n_out = conv_output_length(n, k, s);

  const Matrix& wv = kernel.w.value();
  const Matrix& vv = kernel.v.value();
  const Matrix& hv = h.value();
  const Matrix& ev = e.values.value();

  Matrix out = kernel.bias.value().row(0).replicate(n_out, 1);
  for (size_t idx = 0; idx < e.row.size(); idx++) {
    auto [jlo, jhi] = window_range(e.row[idx], e.col[idx], k, s, n_out);
    for (int j = jlo; j <= jhi; j++) {
      int p = e.row[idx] - j * s, q = e.col[idx] - j * s;
      out.row(j).noalias() +=
          ev(static_cast<Eigen::Index>(idx), 0) * wv.col(p * k + q).transpose();
    }
  }
  for (int j = 0; j < n_out; j++)
    for (int p = 0; p < k; p++)
      out.row(j).noalias() +=
          hv.row(j * s + p) * vv.middleCols(p * c_n, c_n).transpose();

  int hid = h.id(), wid = kernel.w.id(), vid = kernel.v.id(),
      bid = kernel.bias.id(), eid = e.values.id();
  std::vector<int> erow = e.row, ecol = e.col;
  bool req = h.requires_grad() || kernel.w.requires_grad() ||
             kernel.v.requires_grad() || kernel.bias.requires_grad() ||
             e.values.requires_grad();
  return t.make(std::move(out), req,
                [hid, wid, vid, bid, eid, erow, ecol, k, s, c_n, c_out,
                 n_out](Tape& tp, int o) {
    const Matrix& g = tp.grad(o);
    const Matrix& wv = tp.value(wid);
    const Matrix& vv = tp.value(vid);
    const Matrix& hv = tp.value(hid);
    const Matrix& ev = tp.value(eid);
    if (tp.requires_grad(eid)) {
      Matrix& ge = tp.grad(eid);
      for (size_t idx = 0; idx < erow.size(); idx++) {
        auto [jlo, jhi] = window_range(erow[idx], ecol[idx], k, s, n_out);
        for (int j = jlo; j <= jhi; j++) {
          int p = erow[idx] - j * s, q = ecol[idx] - j * s;
          ge(static_cast<Eigen::Index>(idx), 0) +=
              g.row(j).dot(wv.col(p * k + q));
        }
      }
    }
    if (tp.requires_grad(wid)) {
      Matrix& gw = tp.grad(wid);
      for (size_t idx = 0; idx < erow.size(); idx++) {
        auto [jlo, jhi] = window_range(erow[idx], ecol[idx], k, s, n_out);
        for (int j = jlo; j <= jhi; j++) {
          int p = erow[idx] - j * s, q = ecol[idx] - j * s;
          gw.col(p * k + q).noalias() +=
              ev(static_cast<Eigen::Index>(idx), 0) * g.row(j).transpose();
        }
      }
    }
    if (tp.requires_grad(hid)) {
      Matrix& gh = tp.grad(hid);
      for (int j = 0; j < n_out; j++)
        for (int p = 0; p < k; p++)
          gh.row(j * s + p).noalias() +=
              g.row(j) * vv.middleCols(p * c_n, c_n);
    }
    if (tp.requires_grad(vid)) {
      Matrix& gv = tp.grad(vid);
      for (int j = 0; j < n_out; j++)
        for (int p = 0; p < k; p++)
          gv.middleCols(p * c_n, c_n).noalias() +=
              g.row(j).transpose() * hv.row(j * s + p);
    }
    if (tp.requires_grad(bid))
      tp.grad(bid).row(0).noalias() += g.colwise().sum();
  });
}

SparseEdges sparse_edge_tri_crop(Tape& t, const SparseEdges& e, int k,
                                 int n_out) {
  SparseEdges out;
  out.n = n_out;
  std::vector<int> keep;
  for (size_t idx = 0; idx < e.row.size(); idx++) {
    int r = e.row[idx], c = e.col[idx];
    if (std::abs(r - c) >= k && r < n_out && c < n_out) {
      out.row.push_back(r);
      out.col.push_back(c);
      keep.push_back(static_cast<int>(idx));
    }
  }
  out.values = gather_rows(e.values, keep);
  return out;
}

SparseEdges sparse_edge_maxpool(Tape& t, const SparseEdges& e, int k, int s) {
  const int n_out = conv_output_length(e.n, k, s);
  const Matrix& v = e.values.value();
  // per output cell: index of the max entry, ties to the first coordinate in
  // row-major order (the dense pooling rule); cells with no entry stay at
  // the implicit zero and emit nothing
  std::map<std::pair<int, int>, int> best;
  for (size_t idx = 0; idx < e.row.size(); idx++) {
    auto [rlo, rhi] = window_range(e.row[idx], e.row[idx], k, s, n_out);
    auto [clo, chi] = window_range(e.col[idx], e.col[idx], k, s, n_out);
    for (int jr = rlo; jr <= rhi; jr++)
      for (int jc = clo; jc <= chi; jc++) {
        auto key = std::make_pair(jr, jc);
        auto it = best.find(key);
        if (it == best.end()) {
          best[key] = static_cast<int>(idx);
          continue;
        }
        int cur = it->second;
        double dv = v(static_cast<Eigen::Index>(idx), 0) -
                    v(static_cast<Eigen::Index>(cur), 0);
        bool earlier = e.row[idx] < e.row[cur] ||
                       (e.row[idx] == e.row[cur] && e.col[idx] < e.col[cur]);
        if (dv > 0 || (dv == 0 && earlier)) it->second = static_cast<int>(idx);
      }
  }
  SparseEdges out;
  out.n = n_out;
  std::vector<int> picks;
  for (const auto& [cell, idx] : best) {
    out.row.push_back(cell.first);
    out.col.push_back(cell.second);
    picks.push_back(idx);
  }
  out.values = gather_rows(e.values, picks);
  return out;
}

SparseLevelState sparse_compressed_layer(Tape& t,
                                         const SparseLevelState& state,
                                         const DiagKernel& kernel, int s,
                                         bool residual) {
  SparseLevelState in = sparse_pad_for_kernel(t, state, kernel.k);
  const int n = static_cast<int>(in.h.rows());
  const int k = kernel.k;

  Var act = relu(sparse_diagonal_conv(t, in.e, in.h, kernel, s));
  if (residual) {
    Var shortcut = avg_pool1d(in.h, k, s);
    if (shortcut.cols() != act.cols())
      throw DimensionError(
          "compressed_conv_layer: shortcut needs matching channel counts, "
          "got " + shape_str(shortcut.rows(), shortcut.cols()) + " vs " +
          shape_str(act.rows(), act.cols()));
    act = add(act, shortcut);
  }

  SparseLevelState out;
  out.h = act;
  const int n_out = conv_output_length(n, k, s);
  out.e = s == 1 ? sparse_edge_tri_crop(t, in.e, k, n_out)
                 : sparse_edge_maxpool(t, in.e, k, s);
  return out;
}

SparseLevelState sparse_inception_layer(Tape& t,
                                        const SparseLevelState& state,
                                        const std::vector<DiagKernel>& kernels,
                                        int s, bool residual) {
  if (kernels.empty())
    throw ConfigError("inception_layer: needs at least one kernel size");

  size_t widest = 0;
  for (size_t b = 1; b < kernels.size(); b++)
    if (kernels[b].k > kernels[widest].k) widest = b;

  std::vector<SparseLevelState> branches;
  branches.reserve(kernels.size());
  int n_star = std::numeric_limits<int>::max();
  for (const DiagKernel& kb : kernels) {
    branches.push_back(sparse_compressed_layer(t, state, kb, s, false));
    n_star = std::min(n_star, static_cast<int>(branches.back().h.rows()));
  }

  Var h_sum;
  for (const SparseLevelState& branch : branches) {
    Var hb = branch.h;
    const int len = static_cast<int>(hb.rows());
    if (len > n_star) hb = avg_pool1d(hb, len - n_star + 1, 1);
    h_sum = h_sum ? add(h_sum, hb) : hb;
  }
  if (residual) {
    SparseLevelState in =
        sparse_pad_for_kernel(t, state, kernels[widest].k);
    h_sum = add(h_sum, avg_pool1d(in.h, kernels[widest].k, s));
  }

  SparseLevelState out;
  out.h = h_sum;
  out.e = branches[widest].e;
  return out;
}

}  // namespace cocn
