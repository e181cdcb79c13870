#include "ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace cocn::op {

namespace {

void require(bool cond, const std::string& msg) {
  if (!cond) throw DimensionError(msg);
}

std::string sh(const Matrix& m) { return shape_str(m.rows(), m.cols()); }

double sigmoid_d(double z) {
  double s = 1.0 / (1.0 + std::exp(-z));
  return s * (1.0 - s);
}

// Ascending ranks with ties broken by original index (stable).
std::vector<int> stable_ranks(const Matrix& x) {
  int n = static_cast<int>(x.rows());
  std::vector<int> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(),
                   [&](int a, int b) { return x(a, 0) < x(b, 0); });
  std::vector<int> rank(n);
  for (int t = 0; t < n; t++) rank[idx[t]] = t;
  return rank;
}

}  // namespace

void check_same_tape(Var a, Var b) {
  if (a.tape() != b.tape())
    throw DimensionError("operands live on different tapes");
}

Var matmul(Var a, Var b) {
  check_same_tape(a, b);
  require(a.value().cols() == b.value().rows(),
          "matmul: inner dimensions differ: " + sh(a.value()) + " * " +
              sh(b.value()));
  bool req = a.requires_grad() || b.requires_grad();
  int aid = a.id(), bid = b.id();
  return a.tape()->make(a.value() * b.value(), req, [aid, bid](Tape& t, int o) {
    const Matrix& g = t.grad(o);
    if (t.requires_grad(aid))
      t.grad(aid).noalias() += g * t.value(bid).transpose();
    if (t.requires_grad(bid))
      t.grad(bid).noalias() += t.value(aid).transpose() * g;
  });
}

Var spmm(std::shared_ptr<const SpMat> s, Var x) {
  require(s->cols() == x.value().rows(),
          "spmm: inner dimensions differ: " +
              shape_str(s->rows(), s->cols()) + " * " + sh(x.value()));
  int xid = x.id();
  return x.tape()->make(Matrix((*s) * x.value()), x.requires_grad(),
                        [s, xid](Tape& t, int o) {
                          t.grad(xid).noalias() +=
                              Matrix(s->transpose() * t.grad(o));
                        });
}

Var transpose(Var a) {
  int aid = a.id();
  return a.tape()->make(a.value().transpose(), a.requires_grad(),
                        [aid](Tape& t, int o) {
                          t.grad(aid) += t.grad(o).transpose();
                        });
}

namespace {

enum class BCast { Full, Row, Scalar };

BCast classify(const Matrix& a, const Matrix& b, const char* opname) {
  if (a.rows() == b.rows() && a.cols() == b.cols()) return BCast::Full;
  if (b.rows() == 1 && b.cols() == 1) return BCast::Scalar;
  if (b.rows() == 1 && b.cols() == a.cols()) return BCast::Row;
  throw DimensionError(std::string(opname) + ": incompatible shapes " + sh(a) +
                       " vs " + sh(b));
}

void accumulate_bcast(Tape& t, int bid, const Matrix& g, BCast kind,
                      double sign) {
  switch (kind) {
    case BCast::Full:
      t.grad(bid) += sign * g;
      break;
    case BCast::Row:
      t.grad(bid) += sign * g.colwise().sum();
      break;
    case BCast::Scalar:
      t.grad(bid)(0, 0) += sign * g.sum();
      break;
  }
}

}  // namespace

Var add(Var a, Var b) {
  check_same_tape(a, b);
  BCast kind = classify(a.value(), b.value(), "add");
  Matrix out = a.value();
  switch (kind) {
    case BCast::Full: out += b.value(); break;
    case BCast::Row: out.rowwise() += b.value().row(0); break;
    case BCast::Scalar: out.array() += b.value()(0, 0); break;
  }
  bool req = a.requires_grad() || b.requires_grad();
  int aid = a.id(), bid = b.id();
  return a.tape()->make(std::move(out), req, [aid, bid, kind](Tape& t, int o) {
    const Matrix& g = t.grad(o);
    if (t.requires_grad(aid)) t.grad(aid) += g;
    if (t.requires_grad(bid)) accumulate_bcast(t, bid, g, kind, 1.0);
  });
}

Var sub(Var a, Var b) {
  check_same_tape(a, b);
  BCast kind = classify(a.value(), b.value(), "sub");
  Matrix out = a.value();
  switch (kind) {
    case BCast::Full: out -= b.value(); break;
    case BCast::Row: out.rowwise() -= b.value().row(0); break;
    case BCast::Scalar: out.array() -= b.value()(0, 0); break;
  }
  bool req = a.requires_grad() || b.requires_grad();
  int aid = a.id(), bid = b.id();
  return a.tape()->make(std::move(out), req, [aid, bid, kind](Tape& t, int o) {
    const Matrix& g = t.grad(o);
    if (t.requires_grad(aid)) t.grad(aid) += g;
    if (t.requires_grad(bid)) accumulate_bcast(t, bid, g, kind, -1.0);
  });
}

Var mul(Var a, Var b) {
  check_same_tape(a, b);
  // Normalize: scalar goes second.
  if (a.value().size() == 1 && b.value().size() != 1) std::swap(a, b);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  bool scalar = bv.size() == 1 && av.size() != 1;
  require(scalar || (av.rows() == bv.rows() && av.cols() == bv.cols()),
          "mul: incompatible shapes " + sh(av) + " vs " + sh(bv));
  Matrix out =
      scalar ? Matrix(av * bv(0, 0)) : Matrix(av.cwiseProduct(bv));
  bool req = a.requires_grad() || b.requires_grad();
  int aid = a.id(), bid = b.id();
  return a.tape()->make(std::move(out), req,
                        [aid, bid, scalar](Tape& t, int o) {
    const Matrix& g = t.grad(o);
    if (scalar) {
      if (t.requires_grad(aid)) t.grad(aid) += g * t.value(bid)(0, 0);
      if (t.requires_grad(bid))
        t.grad(bid)(0, 0) += g.cwiseProduct(t.value(aid)).sum();
    } else {
      if (t.requires_grad(aid)) t.grad(aid) += g.cwiseProduct(t.value(bid));
      if (t.requires_grad(bid)) t.grad(bid) += g.cwiseProduct(t.value(aid));
    }
  });
}

Var scale(Var a, double c) {
  int aid = a.id();
  return a.tape()->make(Matrix(a.value() * c), a.requires_grad(),
                        [aid, c](Tape& t, int o) {
                          t.grad(aid) += t.grad(o) * c;
                        });
}

Var add_const(Var a, double c) {
  Matrix out = a.value();
  out.array() += c;
  int aid = a.id();
  return a.tape()->make(std::move(out), a.requires_grad(),
                        [aid](Tape& t, int o) { t.grad(aid) += t.grad(o); });
}

Var relu(Var a) {
  int aid = a.id();
  return a.tape()->make(a.value().cwiseMax(0.0), a.requires_grad(),
                        [aid](Tape& t, int o) {
    t.grad(aid) += t.grad(o).cwiseProduct(
        (t.value(aid).array() > 0.0).cast<double>().matrix());
  });
}

Var sigmoid(Var a) {
  Matrix out = (1.0 / (1.0 + (-a.value().array()).exp())).matrix();
  int aid = a.id();
  return a.tape()->make(std::move(out), a.requires_grad(),
                        [aid](Tape& t, int o) {
    const Matrix& y = t.value(o);
    t.grad(aid).array() +=
        t.grad(o).array() * y.array() * (1.0 - y.array());
  });
}

Var exp(Var a) {
  int aid = a.id();
  return a.tape()->make(a.value().array().exp().matrix(), a.requires_grad(),
                        [aid](Tape& t, int o) {
    t.grad(aid) += t.grad(o).cwiseProduct(t.value(o));
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  require(!parts.empty(), "concat_cols: no inputs");
  Eigen::Index rows = parts[0].rows(), cols = 0;
  bool req = false;
  for (const Var& p : parts) {
    check_same_tape(parts[0], p);
    require(p.rows() == rows, "concat_cols: row mismatch " +
                                  sh(parts[0].value()) + " vs " +
                                  sh(p.value()));
    cols += p.cols();
    req = req || p.requires_grad();
  }
  Matrix out(rows, cols);
  std::vector<int> ids;
  std::vector<Eigen::Index> widths;
  Eigen::Index at = 0;
  for (const Var& p : parts) {
    out.middleCols(at, p.cols()) = p.value();
    ids.push_back(p.id());
    widths.push_back(p.cols());
    at += p.cols();
  }
  return parts[0].tape()->make(std::move(out), req,
                               [ids, widths](Tape& t, int o) {
    const Matrix& g = t.grad(o);
    Eigen::Index at = 0;
    for (size_t i = 0; i < ids.size(); i++) {
      if (t.requires_grad(ids[i]))
        t.grad(ids[i]) += g.middleCols(at, widths[i]);
      at += widths[i];
    }
  });
}

Var slice_cols(Var a, int c0, int len) {
  require(c0 >= 0 && len >= 1 && c0 + len <= a.cols(),
          "slice_cols: [" + std::to_string(c0) + "," +
              std::to_string(c0 + len) + ") out of range for " +
              sh(a.value()));
  int aid = a.id();
  return a.tape()->make(a.value().middleCols(c0, len), a.requires_grad(),
                        [aid, c0, len](Tape& t, int o) {
    t.grad(aid).middleCols(c0, len) += t.grad(o);
  });
}

Var gather_rows(Var a, std::vector<int> idx) {
  for (int i : idx)
    require(i >= 0 && i < a.rows(),
            "gather_rows: row " + std::to_string(i) + " out of range for " +
                sh(a.value()));
  Matrix out(static_cast<Eigen::Index>(idx.size()), a.cols());
  for (size_t i = 0; i < idx.size(); i++) out.row(i) = a.value().row(idx[i]);
  int aid = a.id();
  return a.tape()->make(std::move(out), a.requires_grad(),
                        [aid, idx = std::move(idx)](Tape& t, int o) {
    const Matrix& g = t.grad(o);
    Matrix& ga = t.grad(aid);
    for (size_t i = 0; i < idx.size(); i++) ga.row(idx[i]) += g.row(i);
  });
}

Var slice_rows(Var a, int r0, int len) {
  require(r0 >= 0 && len >= 1 && r0 + len <= a.rows(),
          "slice_rows: [" + std::to_string(r0) + "," +
              std::to_string(r0 + len) + ") out of range for " +
              sh(a.value()));
  int aid = a.id();
  return a.tape()->make(a.value().middleRows(r0, len), a.requires_grad(),
                        [aid, r0, len](Tape& t, int o) {
    t.grad(aid).middleRows(r0, len) += t.grad(o);
  });
}

Var sum(Var a) {
  int aid = a.id();
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  return a.tape()->make(std::move(out), a.requires_grad(),
                        [aid](Tape& t, int o) {
    t.grad(aid).array() += t.grad(o)(0, 0);
  });
}

Var mean(Var a) {
  int aid = a.id();
  double inv = 1.0 / static_cast<double>(a.value().size());
  Matrix out(1, 1);
  out(0, 0) = a.value().sum() * inv;
  return a.tape()->make(std::move(out), a.requires_grad(),
                        [aid, inv](Tape& t, int o) {
    t.grad(aid).array() += t.grad(o)(0, 0) * inv;
  });
}

Var colmax(Var a) {
  const Matrix& av = a.value();
  require(av.rows() >= 1, "colmax: empty input");
  Matrix out(1, av.cols());
  std::vector<int> arg(av.cols());
  for (Eigen::Index c = 0; c < av.cols(); c++) {
    int best = 0;
    for (Eigen::Index r = 1; r < av.rows(); r++)
      if (av(r, c) > av(best, c)) best = static_cast<int>(r);
    arg[c] = best;
    out(0, c) = av(best, c);
  }
  int aid = a.id();
  return a.tape()->make(std::move(out), a.requires_grad(),
                        [aid, arg](Tape& t, int o) {
    const Matrix& g = t.grad(o);
    Matrix& ga = t.grad(aid);
    for (size_t c = 0; c < arg.size(); c++) ga(arg[c], c) += g(0, c);
  });
}

Var max_pool2d(Var a, int k, int s) {
  const Matrix& av = a.value();
  require(k >= 1 && s >= 1, "max_pool2d: k and s must be positive");
  require(av.rows() >= k && av.cols() >= k,
          "max_pool2d: input " + sh(av) + " smaller than kernel " +
              std::to_string(k));
  int oh = static_cast<int>((av.rows() - k) / s + 1);
  int ow = static_cast<int>((av.cols() - k) / s + 1);
  Matrix out(oh, ow);
  std::vector<std::pair<int, int>> arg(static_cast<size_t>(oh) * ow);
  for (int i = 0; i < oh; i++)
    for (int j = 0; j < ow; j++) {
      int r0 = i * s, c0 = j * s;
      int br = r0, bc = c0;
      double best = av(r0, c0);
      for (int p = 0; p < k; p++)
        for (int q = 0; q < k; q++)
          if (av(r0 + p, c0 + q) > best) {
            best = av(r0 + p, c0 + q);
            br = r0 + p;
            bc = c0 + q;
          }
      out(i, j) = best;
      arg[static_cast<size_t>(i) * ow + j] = {br, bc};
    }
  int aid = a.id();
  return a.tape()->make(std::move(out), a.requires_grad(),
                        [aid, arg, ow](Tape& t, int o) {
    const Matrix& g = t.grad(o);
    Matrix& ga = t.grad(aid);
    for (Eigen::Index i = 0; i < g.rows(); i++)
      for (Eigen::Index j = 0; j < g.cols(); j++) {
        auto [r, c] = arg[static_cast<size_t>(i) * ow + j];
        ga(r, c) += g(i, j);
      }
  });
}

Var avg_pool1d(Var a, int k, int s) {
  const Matrix& av = a.value();
  require(k >= 1 && s >= 1, "avg_pool1d: k and s must be positive");
  require(av.rows() >= k, "avg_pool1d: input " + sh(av) +
                              " shorter than kernel " + std::to_string(k));
  int on = static_cast<int>((av.rows() - k) / s + 1);
  Matrix out(on, av.cols());
  for (int j = 0; j < on; j++)
    out.row(j) = av.middleRows(j * s, k).colwise().mean();
  int aid = a.id();
  return a.tape()->make(std::move(out), a.requires_grad(),
                        [aid, k, s](Tape& t, int o) {
    const Matrix& g = t.grad(o);
    Matrix& ga = t.grad(aid);
    double inv = 1.0 / k;
    for (Eigen::Index j = 0; j < g.rows(); j++)
      ga.middleRows(j * s, k).rowwise() += inv * g.row(j);
  });
}

Var dilate_rows(Var a, int s) {
  const Matrix& av = a.value();
  require(s >= 1, "dilate_rows: s must be positive");
  Eigen::Index n = av.rows();
  Eigen::Index on = (n - 1) * s + 1;
  Matrix out = Matrix::Zero(on, av.cols());
  for (Eigen::Index j = 0; j < n; j++) out.row(j * s) = av.row(j);
  int aid = a.id();
  return a.tape()->make(std::move(out), a.requires_grad(),
                        [aid, s, n](Tape& t, int o) {
    const Matrix& g = t.grad(o);
    Matrix& ga = t.grad(aid);
    for (Eigen::Index j = 0; j < n; j++) ga.row(j) += g.row(j * s);
  });
}

Var replicate_pad_rows(Var a, int top, int bottom) {
  const Matrix& av = a.value();
  require(top >= 0 && bottom >= 0, "replicate_pad_rows: negative padding");
  Eigen::Index n = av.rows();
  Matrix out(n + top + bottom, av.cols());
  for (int i = 0; i < top; i++) out.row(i) = av.row(0);
  out.middleRows(top, n) = av;
  for (int i = 0; i < bottom; i++) out.row(top + n + i) = av.row(n - 1);
  int aid = a.id();
  return a.tape()->make(std::move(out), a.requires_grad(),
                        [aid, top, bottom, n](Tape& t, int o) {
    const Matrix& g = t.grad(o);
    Matrix& ga = t.grad(aid);
    for (int i = 0; i < top; i++) ga.row(0) += g.row(i);
    ga += g.middleRows(top, n);
    for (int i = 0; i < bottom; i++) ga.row(n - 1) += g.row(top + n + i);
  });
}

Var circular_pad_rows(Var a, int pad) {
  const Matrix& av = a.value();
  require(pad >= 0, "circular_pad_rows: negative padding");
  Eigen::Index n = av.rows();
  Matrix out(n + pad, av.cols());
  out.topRows(n) = av;
  for (int i = 0; i < pad; i++) out.row(n + i) = av.row(i % n);
  int aid = a.id();
  return a.tape()->make(std::move(out), a.requires_grad(),
                        [aid, pad, n](Tape& t, int o) {
    const Matrix& g = t.grad(o);
    Matrix& ga = t.grad(aid);
    ga += g.topRows(n);
    for (int i = 0; i < pad; i++) ga.row(i % n) += g.row(n + i);
  });
}

Var circular_pad2d(Var a, int pad) {
  const Matrix& av = a.value();
  require(pad >= 0, "circular_pad2d: negative padding");
  require(av.rows() == av.cols(),
          "circular_pad2d: expects a square matrix, got " + sh(av));
  Eigen::Index n = av.rows();
  Eigen::Index m = n + pad;
  Matrix out(m, m);
  for (Eigen::Index i = 0; i < m; i++)
    for (Eigen::Index j = 0; j < m; j++) out(i, j) = av(i % n, j % n);
  int aid = a.id();
  return a.tape()->make(std::move(out), a.requires_grad(),
                        [aid, n](Tape& t, int o) {
    const Matrix& g = t.grad(o);
    Matrix& ga = t.grad(aid);
    for (Eigen::Index i = 0; i < g.rows(); i++)
      for (Eigen::Index j = 0; j < g.cols(); j++)
        ga(i % n, j % n) += g(i, j);
  });
}

Var conv_transpose1d(Var x, Var w, Var bias, int k, int s, int out_len) {
  check_same_tape(x, w);
  check_same_tape(x, bias);
  const Matrix& xv = x.value();
  const Matrix& wv = w.value();
  const Matrix& bv = bias.value();
  Eigen::Index n = xv.rows(), c_in = xv.cols(), c_out = wv.rows();
  require(k >= 1 && s >= 1, "conv_transpose1d: k and s must be positive");
  require(wv.cols() == c_in * k,
          "conv_transpose1d: weight " + sh(wv) + " incompatible with " +
              std::to_string(c_in) + " input channels and k=" +
              std::to_string(k));
  require(bv.rows() == 1 && bv.cols() == c_out,
          "conv_transpose1d: bias " + sh(bv) + " vs " +
              std::to_string(c_out) + " output channels");
  require(out_len >= 1, "conv_transpose1d: out_len must be positive");
  Matrix out = bv.replicate(out_len, 1);
  for (Eigen::Index j = 0; j < n; j++)
    for (int p = 0; p < k; p++) {
      Eigen::Index r = j * s + p;
      if (r >= out_len) break;
      for (Eigen::Index o = 0; o < c_out; o++) {
        double acc = 0;
        for (Eigen::Index ci = 0; ci < c_in; ci++)
          acc += wv(o, ci * k + p) * xv(j, ci);
        out(r, o) += acc;
      }
    }
  bool req =
      x.requires_grad() || w.requires_grad() || bias.requires_grad();
  int xid = x.id(), wid = w.id(), bid = bias.id();
  return x.tape()->make(std::move(out), req,
                        [xid, wid, bid, k, s, out_len, n, c_in,
                         c_out](Tape& t, int o) {
    const Matrix& g = t.grad(o);
    const Matrix& xv = t.value(xid);
    const Matrix& wv = t.value(wid);
    if (t.requires_grad(bid)) t.grad(bid) += g.colwise().sum();
    bool gx = t.requires_grad(xid), gw = t.requires_grad(wid);
    if (!gx && !gw) return;
    for (Eigen::Index j = 0; j < n; j++)
      for (int p = 0; p < k; p++) {
        Eigen::Index r = j * s + p;
        if (r >= out_len) break;
        for (Eigen::Index oc = 0; oc < c_out; oc++) {
          double go = g(r, oc);
          if (go == 0.0) continue;
          for (Eigen::Index ci = 0; ci < c_in; ci++) {
            if (gx) t.grad(xid)(j, ci) += wv(oc, ci * k + p) * go;
            if (gw) t.grad(wid)(oc, ci * k + p) += xv(j, ci) * go;
          }
        }
      }
  });
}

Var diagonal_conv(const std::vector<Var>& e_channels, Var h, Var w, Var v,
                  Var bias, int k, int s) {
  require(!e_channels.empty(), "diagonal_conv: no structure channels");
  const Matrix& hv = h.value();
  Eigen::Index n = hv.rows(), c_n = hv.cols();
  Eigen::Index e_ch = static_cast<Eigen::Index>(e_channels.size());
  for (const Var& e : e_channels) {
    check_same_tape(h, e);
    require(e.rows() == n && e.cols() == n,
            "diagonal_conv: structure channel " + sh(e.value()) +
                " vs node features " + sh(hv));
  }
  check_same_tape(h, w);
  check_same_tape(h, v);
  check_same_tape(h, bias);
  const Matrix& wv = w.value();
  const Matrix& vv = v.value();
  const Matrix& bv = bias.value();
  Eigen::Index c_out = wv.rows();
  require(k >= 1 && s >= 1, "diagonal_conv: k and s must be positive");
  require(n >= k, "diagonal_conv: input length " + std::to_string(n) +
                      " < kernel " + std::to_string(k) +
                      "; pad the input first");
  require(wv.cols() == e_ch * k * k,
          "diagonal_conv: edge kernel " + sh(wv) + " incompatible with " +
              std::to_string(e_ch) + " channels, k=" + std::to_string(k));
  require(vv.rows() == c_out && vv.cols() == k * c_n,
          "diagonal_conv: node kernel " + sh(vv) + " incompatible with " +
              shape_str(c_out, k * c_n));
  require(bv.rows() == 1 && bv.cols() == c_out,
          "diagonal_conv: bias " + sh(bv) + " vs " + std::to_string(c_out) +
              " output channels");
  int n_out = static_cast<int>((n - k) / s + 1);

  Matrix out(n_out, c_out);
  Vector evec(e_ch * k * k), hvec(k * c_n);
  std::vector<int> eids(e_channels.size());
  for (size_t c = 0; c < e_channels.size(); c++) eids[c] = e_channels[c].id();
  for (int j = 0; j < n_out; j++) {
    Eigen::Index i = static_cast<Eigen::Index>(j) * s;
    for (Eigen::Index c = 0; c < e_ch; c++) {
      const Matrix& ev = e_channels[c].value();
      for (int p = 0; p < k; p++)
        for (int q = 0; q < k; q++)
          evec((c * k + p) * k + q) = ev(i + p, i + q);
    }
    for (int p = 0; p < k; p++)
      hvec.segment(static_cast<Eigen::Index>(p) * c_n, c_n) =
          hv.row(i + p).transpose();
    out.row(j) = (wv * evec + vv * hvec + bv.transpose()).transpose();
  }

  bool req = h.requires_grad() || w.requires_grad() || v.requires_grad() ||
             bias.requires_grad();
  for (const Var& e : e_channels) req = req || e.requires_grad();
  int hid = h.id(), wid = w.id(), vid = v.id(), bid = bias.id();
  return h.tape()->make(std::move(out), req,
                        [eids, hid, wid, vid, bid, k, s, n, c_n, e_ch,
                         c_out](Tape& t, int o) {
    const Matrix& g = t.grad(o);
    const Matrix& wv = t.value(wid);
    const Matrix& vv = t.value(vid);
    const Matrix& hv = t.value(hid);
    if (t.requires_grad(bid)) t.grad(bid) += g.colwise().sum();
    bool gh = t.requires_grad(hid), gw = t.requires_grad(wid),
         gv = t.requires_grad(vid);
    bool ge = false;
    for (int eid : eids) ge = ge || t.requires_grad(eid);
    Vector evec(e_ch * k * k), hvec(k * c_n);
    for (Eigen::Index j = 0; j < g.rows(); j++) {
      Eigen::Index i = j * s;
      Vector go = g.row(j).transpose();
      if (gw || gv) {
        for (Eigen::Index c = 0; c < e_ch; c++) {
          const Matrix& ev = t.value(eids[c]);
          for (int p = 0; p < k; p++)
            for (int q = 0; q < k; q++)
              evec((c * k + p) * k + q) = ev(i + p, i + q);
        }
        for (int p = 0; p < k; p++)
          hvec.segment(static_cast<Eigen::Index>(p) * c_n, c_n) =
              hv.row(i + p).transpose();
        if (gw) t.grad(wid).noalias() += go * evec.transpose();
        if (gv) t.grad(vid).noalias() += go * hvec.transpose();
      }
      if (gh) {
        Vector dh = vv.transpose() * go;  // length k*c_n
        for (int p = 0; p < k; p++)
          t.grad(hid).row(i + p) +=
              dh.segment(static_cast<Eigen::Index>(p) * c_n, c_n).transpose();
      }
      if (ge) {
        Vector de = wv.transpose() * go;  // length e_ch*k*k
        for (Eigen::Index c = 0; c < e_ch; c++) {
          if (!t.requires_grad(eids[c])) continue;
          Matrix& geM = t.grad(eids[c]);
          for (int p = 0; p < k; p++)
            for (int q = 0; q < k; q++)
              geM(i + p, i + q) += de((c * k + p) * k + q);
        }
      }
    }
  });
}

Var tri_band(Var e, int k) {
  const Matrix& ev = e.value();
  require(ev.rows() == ev.cols(),
          "tri_band: expects a square matrix, got " + sh(ev));
  require(k >= 0, "tri_band: negative band width");
  Matrix out = ev;
  Eigen::Index n = ev.rows();
  for (Eigen::Index i = 0; i < n; i++)
    for (Eigen::Index j = std::max<Eigen::Index>(0, i - k + 1);
         j < std::min(n, i + k); j++)
      out(i, j) = 0.0;
  int eid = e.id();
  return e.tape()->make(std::move(out), e.requires_grad(),
                        [eid, k, n](Tape& t, int o) {
    Matrix g = t.grad(o);
    for (Eigen::Index i = 0; i < n; i++)
      for (Eigen::Index j = std::max<Eigen::Index>(0, i - k + 1);
           j < std::min(n, i + k); j++)
        g(i, j) = 0.0;
    t.grad(eid) += g;
  });
}

Var layer_norm(Var x, Var gain, Var bias) {
  check_same_tape(x, gain);
  check_same_tape(x, bias);
  const Matrix& xv = x.value();
  Eigen::Index c = xv.cols();
  require(gain.rows() == 1 && gain.cols() == c,
          "layer_norm: gain " + sh(gain.value()) + " vs input " + sh(xv));
  require(bias.rows() == 1 && bias.cols() == c,
          "layer_norm: bias " + sh(bias.value()) + " vs input " + sh(xv));
  constexpr double kEps = 1e-5;
  Eigen::Index n = xv.rows();
  Matrix xhat(n, c);
  Vector inv_std(n);
  for (Eigen::Index r = 0; r < n; r++) {
    double mu = xv.row(r).mean();
    double var = (xv.row(r).array() - mu).square().mean();
    double istd = 1.0 / std::sqrt(var + kEps);
    inv_std(r) = istd;
    xhat.row(r) = ((xv.row(r).array() - mu) * istd).matrix();
  }
  Matrix out =
      (xhat.array().rowwise() * gain.value().row(0).array()).matrix();
  out.rowwise() += bias.value().row(0);
  bool req = x.requires_grad() || gain.requires_grad() || bias.requires_grad();
  int xid = x.id(), gid = gain.id(), bid = bias.id();
  return x.tape()->make(std::move(out), req,
                        [xid, gid, bid, xhat, inv_std](Tape& t, int o) {
    const Matrix& g = t.grad(o);
    const Matrix& gainv = t.value(gid);
    if (t.requires_grad(bid)) t.grad(bid) += g.colwise().sum();
    if (t.requires_grad(gid))
      t.grad(gid) += g.cwiseProduct(xhat).colwise().sum();
    if (t.requires_grad(xid)) {
      Matrix dxhat = (g.array().rowwise() * gainv.row(0).array()).matrix();
      Matrix& gx = t.grad(xid);
      for (Eigen::Index r = 0; r < g.rows(); r++) {
        double m1 = dxhat.row(r).mean();
        double m2 = dxhat.row(r).cwiseProduct(xhat.row(r)).mean();
        gx.row(r) += (inv_std(r) *
                      (dxhat.row(r).array() - m1 - xhat.row(r).array() * m2))
                         .matrix();
      }
    }
  });
}

Var sign_surrogate(Var x) {
  Matrix out = (x.value().array() > 0.0).cast<double>().matrix();
  int xid = x.id();
  return x.tape()->make(std::move(out), x.requires_grad(),
                        [xid](Tape& t, int o) {
    const Matrix& xv = t.value(xid);
    const Matrix& g = t.grad(o);
    Matrix& gx = t.grad(xid);
    for (Eigen::Index i = 0; i < xv.rows(); i++)
      for (Eigen::Index j = 0; j < xv.cols(); j++)
        if (xv(i, j) > 0.0) gx(i, j) += g(i, j) * sigmoid_d(xv(i, j));
  });
}

Var mod_shift(Var x, double n) {
  require(n > 0, "mod_shift: modulus must be positive");
  Matrix out = x.value();
  for (Eigen::Index i = 0; i < out.size(); i++) {
    double m = std::fmod(out.data()[i], n);
    if (m < 0) m += n;
    out.data()[i] = m;
  }
  int xid = x.id();
  return x.tape()->make(std::move(out), x.requires_grad(),
                        [xid](Tape& t, int o) { t.grad(xid) += t.grad(o); });
}

Var rank_approx(Var x) {
  const Matrix& xv = x.value();
  require(xv.cols() == 1, "rank_approx: expects a column vector, got " +
                              sh(xv));
  std::vector<int> rank = stable_ranks(xv);
  int n = static_cast<int>(xv.rows());
  Matrix out(n, 1);
  for (int i = 0; i < n; i++) out(i, 0) = rank[i];
  int xid = x.id();
  return x.tape()->make(std::move(out), x.requires_grad(),
                        [xid, rank, n](Tape& t, int o) {
    const Matrix& g = t.grad(o);
    // Order nodes by rank, then suffix sums give sum of upstream gradient
    // over strictly larger ranks.
    std::vector<int> by_rank(n);
    for (int i = 0; i < n; i++) by_rank[rank[i]] = i;
    double suffix = 0.0;
    Matrix& gx = t.grad(xid);
    for (int tpos = n - 1; tpos >= 0; tpos--) {
      int i = by_rank[tpos];
      gx(i, 0) += 0.25 * (g(i, 0) * tpos - suffix);
      suffix += g(i, 0);
    }
  });
}

Var rank_surrogate(Var x) {
  const Matrix& xv = x.value();
  require(xv.cols() == 1, "rank_surrogate: expects a column vector, got " +
                              sh(xv));
  std::vector<int> rank = stable_ranks(xv);
  int n = static_cast<int>(xv.rows());
  Matrix out(n, 1);
  for (int i = 0; i < n; i++) out(i, 0) = rank[i];
  int xid = x.id();
  return x.tape()->make(std::move(out), x.requires_grad(),
                        [xid, n](Tape& t, int o) {
    const Matrix& xv = t.value(xid);
    const Matrix& g = t.grad(o);
    Matrix& gx = t.grad(xid);
    // d rank_i / d x_k = delta_ik * sum_j D_ij - D_ik with
    // D_ij = step'(x_i - x_j).
    for (int i = 0; i < n; i++) {
      double row_sum = 0.0;
      for (int j = 0; j < n; j++) {
        double z = xv(i, 0) - xv(j, 0);
        if (z > 0.0) {
          double d = sigmoid_d(z);
          row_sum += d;
          gx(j, 0) -= g(i, 0) * d;
        }
      }
      gx(i, 0) += g(i, 0) * row_sum;
    }
  });
}

Var softmax_cross_entropy(Var logits, const std::vector<int>& labels) {
  const Matrix& z = logits.value();
  require(static_cast<Eigen::Index>(labels.size()) == z.rows(),
          "softmax_cross_entropy: " + std::to_string(labels.size()) +
              " labels vs " + std::to_string(z.rows()) + " rows");
  Eigen::Index n = z.rows(), c = z.cols();
  for (int y : labels)
    require(y >= 0 && y < c, "softmax_cross_entropy: label " +
                                 std::to_string(y) + " outside [0," +
                                 std::to_string(c) + ")");
  double loss = 0.0;
  Matrix p(n, c);
  for (Eigen::Index r = 0; r < n; r++) {
    double m = z.row(r).maxCoeff();
    Eigen::ArrayXd e = (z.row(r).array() - m).exp();
    double denom = e.sum();
    p.row(r) = (e / denom).matrix();
    loss += m + std::log(denom) - z(r, labels[r]);
  }
  loss /= static_cast<double>(n);
  Matrix out(1, 1);
  out(0, 0) = loss;
  int zid = logits.id();
  return logits.tape()->make(std::move(out), logits.requires_grad(),
                             [zid, p, labels](Tape& t, int o) {
    double g = t.grad(o)(0, 0) / static_cast<double>(p.rows());
    Matrix d = p;
    for (Eigen::Index r = 0; r < d.rows(); r++) d(r, labels[r]) -= 1.0;
    t.grad(zid) += g * d;
  });
}

Var sigmoid_bce(Var logits, const Vector& targets) {
  const Matrix& z = logits.value();
  require(z.cols() == 1, "sigmoid_bce: expects a column of logits, got " +
                             sh(z));
  require(targets.size() == z.rows(),
          "sigmoid_bce: " + std::to_string(targets.size()) + " targets vs " +
              std::to_string(z.rows()) + " logits");
  Eigen::Index n = z.rows();
  double loss = 0.0;
  for (Eigen::Index r = 0; r < n; r++) {
    double zr = z(r, 0);
    loss += std::max(zr, 0.0) - zr * targets(r) +
            std::log1p(std::exp(-std::abs(zr)));
  }
  loss /= static_cast<double>(n);
  Matrix out(1, 1);
  out(0, 0) = loss;
  int zid = logits.id();
  return logits.tape()->make(std::move(out), logits.requires_grad(),
                             [zid, targets](Tape& t, int o) {
    const Matrix& z = t.value(zid);
    double g = t.grad(o)(0, 0) / static_cast<double>(z.rows());
    Matrix& gz = t.grad(zid);
    for (Eigen::Index r = 0; r < z.rows(); r++) {
      double s = 1.0 / (1.0 + std::exp(-z(r, 0)));
      gz(r, 0) += g * (s - targets(r));
    }
  });
}

Var mse(Var pred, const Matrix& target) {
  const Matrix& pv = pred.value();
  require(pv.rows() == target.rows() && pv.cols() == target.cols(),
          "mse: prediction " + sh(pv) + " vs target " + sh(target));
  Matrix out(1, 1);
  out(0, 0) = (pv - target).squaredNorm() / static_cast<double>(pv.size());
  int pid = pred.id();
  return pred.tape()->make(std::move(out), pred.requires_grad(),
                           [pid, target](Tape& t, int o) {
    double g = t.grad(o)(0, 0) * 2.0 / static_cast<double>(target.size());
    t.grad(pid) += g * (t.value(pid) - target);
  });
}

Var dropout(Var x, double rate, std::mt19937_64& rng) {
  require(rate >= 0.0 && rate < 1.0, "dropout: rate must be in [0,1)");
  if (rate == 0.0) return x;
  const Matrix& xv = x.value();
  std::bernoulli_distribution keep(1.0 - rate);
  Matrix mask(xv.rows(), xv.cols());
  double inv = 1.0 / (1.0 - rate);
  for (Eigen::Index i = 0; i < mask.size(); i++)
    mask.data()[i] = keep(rng) ? inv : 0.0;
  int xid = x.id();
  return x.tape()->make(xv.cwiseProduct(mask), x.requires_grad(),
                        [xid, mask](Tape& t, int o) {
    t.grad(xid) += t.grad(o).cwiseProduct(mask);
  });
}

}  // namespace cocn::op
