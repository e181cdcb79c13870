#include "gradcheck.hpp"

#include <algorithm>
#include <numeric>
#include <random>

namespace cocn {

double finite_difference_check(const ScalarFn& f, const Matrix& x,
                               double eps) {
  Tape tape;
  Var xv = tape.input(x, true);
  Var loss = f(tape, xv);
  tape.backward(loss);
  Matrix gad = xv.grad();

  double max_err = 0.0;
  for (Eigen::Index i = 0; i < x.size(); i++) {
    Matrix xp = x, xm = x;
    xp.data()[i] += eps;
    xm.data()[i] -= eps;
    Tape tp, tm;
    double fp = f(tp, tp.input(xp, false)).value()(0, 0);
    double fm = f(tm, tm.input(xm, false)).value()(0, 0);
    double gfd = (fp - fm) / (2.0 * eps);
    double err = std::abs(gfd - gad.data()[i]) / (std::abs(gfd) + 1e-8);
    max_err = std::max(max_err, err);
  }
  return max_err;
}

namespace {

using namespace op;

Matrix rnd(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); i++) m.data()[i] = u(rng);
  return m;
}

// Entries with magnitude in [margin, 1]; keeps piecewise-linear ops away
// from their kinks and max-type ops away from ties.
Matrix rnd_away(Eigen::Index r, Eigen::Index c, double margin,
                std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(margin, 1.0);
  std::bernoulli_distribution signb(0.5);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); i++)
    m.data()[i] = (signb(rng) ? 1.0 : -1.0) * u(rng);
  return m;
}

// Distinct, well-separated entries for argmax-routing ops.
Matrix rnd_distinct(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng) {
  Matrix m = rnd(r, c, rng);
  std::vector<int> order(m.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  for (Eigen::Index i = 0; i < m.size(); i++)
    m.data()[order[i]] += 0.01 * static_cast<double>(i);
  return m;
}

}  // namespace

std::vector<GradCheckResult> gradcheck_suite(unsigned seed) {
  std::mt19937_64 rng(seed);
  std::vector<GradCheckResult> results;
  const double eps = 1e-5;
  auto run = [&](const std::string& name, const ScalarFn& f,
                 const Matrix& x) {
    results.push_back({name, finite_difference_check(f, x, eps)});
  };

  {
    Matrix b = rnd(4, 2, rng);
    run("matmul/left",
        [b](Tape& t, Var x) {
          return sum(sigmoid(matmul(x, t.constant(b))));
        },
        rnd(3, 4, rng));
    Matrix a = rnd(2, 3, rng);
    run("matmul/right",
        [a](Tape& t, Var x) {
          return sum(sigmoid(matmul(t.constant(a), x)));
        },
        rnd(3, 4, rng));
  }
  {
    auto s = std::make_shared<SpMat>(5, 5);
    std::vector<Eigen::Triplet<double>> trips;
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int i = 0; i < 5; i++)
      for (int j = 0; j < 5; j++)
        if ((i + 2 * j) % 3 == 0) trips.emplace_back(i, j, u(rng));
    s->setFromTriplets(trips.begin(), trips.end());
    run("spmm",
        [s](Tape& t, Var x) {
          return sum(sigmoid(spmm(s, x)));
        },
        rnd(5, 3, rng));
  }
  {
    Matrix b = rnd(3, 4, rng), row = rnd(1, 4, rng), sc = rnd(1, 1, rng);
    run("add/full",
        [b](Tape& t, Var x) { return sum(sigmoid(add(x, t.constant(b)))); },
        rnd(3, 4, rng));
    Matrix a = rnd(3, 4, rng);
    run("add/row-bias",
        [a](Tape& t, Var x) { return sum(sigmoid(add(t.constant(a), x))); },
        row);
    run("add/scalar",
        [a](Tape& t, Var x) { return sum(sigmoid(add(t.constant(a), x))); },
        sc);
    run("sub/full",
        [b](Tape& t, Var x) { return sum(sigmoid(sub(x, t.constant(b)))); },
        rnd(3, 4, rng));
    run("sub/row",
        [a](Tape& t, Var x) { return sum(sigmoid(sub(t.constant(a), x))); },
        row);
    run("mul/full",
        [b](Tape& t, Var x) { return sum(sigmoid(mul(x, t.constant(b)))); },
        rnd(3, 4, rng));
    run("mul/scalar",
        [a](Tape& t, Var x) { return sum(sigmoid(mul(t.constant(a), x))); },
        sc);
  }
  run("scale",
      [](Tape& t, Var x) { return sum(sigmoid(scale(x, 1.7))); },
      rnd(3, 3, rng));
  run("add_const",
      [](Tape& t, Var x) { return sum(sigmoid(add_const(x, 0.3))); },
      rnd(3, 3, rng));
  run("relu",
      [](Tape& t, Var x) { return sum(relu(x)); },
      rnd_away(4, 4, 0.1, rng));
  run("sigmoid", [](Tape& t, Var x) { return sum(sigmoid(x)); },
      rnd(4, 4, rng));
  run("exp", [](Tape& t, Var x) { return sum(op::exp(x)); }, rnd(4, 4, rng));
  run("transpose",
      [](Tape& t, Var x) { return sum(sigmoid(transpose(x))); },
      rnd(3, 5, rng));
  {
    Matrix c = rnd(3, 2, rng);
    run("concat_cols",
        [c](Tape& t, Var x) {
          return sum(sigmoid(concat_cols({x, t.constant(c)})));
        },
        rnd(3, 4, rng));
  }
  run("slice_cols",
      [](Tape& t, Var x) { return sum(sigmoid(slice_cols(x, 1, 2))); },
      rnd(3, 4, rng));
  run("slice_rows",
      [](Tape& t, Var x) { return sum(sigmoid(slice_rows(x, 1, 2))); },
      rnd(4, 3, rng));
  run("sum", [](Tape& t, Var x) { return sum(sigmoid(x)); }, rnd(3, 4, rng));
  run("mean", [](Tape& t, Var x) { return mean(sigmoid(x)); },
      rnd(3, 4, rng));
  run("colmax", [](Tape& t, Var x) { return sum(colmax(x)); },
      rnd_distinct(5, 3, rng));
  run("max_pool2d",
      [](Tape& t, Var x) { return sum(max_pool2d(x, 2, 2)); },
      rnd_distinct(6, 6, rng));
  run("max_pool2d/overlap",
      [](Tape& t, Var x) { return sum(max_pool2d(x, 3, 1)); },
      rnd_distinct(5, 5, rng));
  run("avg_pool1d",
      [](Tape& t, Var x) { return sum(sigmoid(avg_pool1d(x, 3, 2))); },
      rnd(7, 2, rng));
  run("dilate_rows",
      [](Tape& t, Var x) { return sum(sigmoid(dilate_rows(x, 3))); },
      rnd(4, 2, rng));
  run("replicate_pad_rows",
      [](Tape& t, Var x) {
        return sum(sigmoid(replicate_pad_rows(x, 2, 3)));
      },
      rnd(4, 2, rng));
  run("circular_pad_rows",
      [](Tape& t, Var x) { return sum(sigmoid(circular_pad_rows(x, 5))); },
      rnd(3, 2, rng));
  run("circular_pad2d",
      [](Tape& t, Var x) { return sum(sigmoid(circular_pad2d(x, 3))); },
      rnd(4, 4, rng));
  {
    int k = 3, s = 2;
    Matrix x0 = rnd(4, 2, rng), w0 = rnd(3, 2 * k, rng), b0 = rnd(1, 3, rng);
    for (int out_len : {(4 - 1) * s + k, (4 - 1) * s + k - 2,
                        (4 - 1) * s + k + 2}) {
      std::string tag = "conv_transpose1d/len" + std::to_string(out_len);
      run(tag + "/x",
          [w0, b0, k, s, out_len](Tape& t, Var x) {
            return sum(sigmoid(conv_transpose1d(
                x, t.constant(w0), t.constant(b0), k, s, out_len)));
          },
          x0);
      run(tag + "/w",
          [x0, b0, k, s, out_len](Tape& t, Var w) {
            return sum(sigmoid(conv_transpose1d(
                t.constant(x0), w, t.constant(b0), k, s, out_len)));
          },
          w0);
      run(tag + "/bias",
          [x0, w0, k, s, out_len](Tape& t, Var b) {
            return sum(sigmoid(conv_transpose1d(
                t.constant(x0), t.constant(w0), b, k, s, out_len)));
          },
          b0);
    }
  }
  {
    int k = 3, s = 2, n = 7, c_n = 2, e_ch = 2, c_out = 3;
    Matrix e0 = rnd(n, n, rng), e1 = rnd(n, n, rng), h0 = rnd(n, c_n, rng);
    Matrix w0 = rnd(c_out, e_ch * k * k, rng), v0 = rnd(c_out, k * c_n, rng);
    Matrix b0 = rnd(1, c_out, rng);
    auto dc = [k, s](Tape& t, Var e0v, Var e1v, Var hv, Var wv, Var vv,
                     Var bv) {
      return sum(sigmoid(diagonal_conv({e0v, e1v}, hv, wv, vv, bv, k, s)));
    };
    run("diagonal_conv/E",
        [=](Tape& t, Var x) {
          return dc(t, x, t.constant(e1), t.constant(h0), t.constant(w0),
                    t.constant(v0), t.constant(b0));
        },
        e0);
    run("diagonal_conv/H",
        [=](Tape& t, Var x) {
          return dc(t, t.constant(e0), t.constant(e1), x, t.constant(w0),
                    t.constant(v0), t.constant(b0));
        },
        h0);
    run("diagonal_conv/w",
        [=](Tape& t, Var x) {
          return dc(t, t.constant(e0), t.constant(e1), t.constant(h0), x,
                    t.constant(v0), t.constant(b0));
        },
        w0);
    run("diagonal_conv/v",
        [=](Tape& t, Var x) {
          return dc(t, t.constant(e0), t.constant(e1), t.constant(h0),
                    t.constant(w0), x, t.constant(b0));
        },
        v0);
    run("diagonal_conv/bias",
        [=](Tape& t, Var x) {
          return dc(t, t.constant(e0), t.constant(e1), t.constant(h0),
                    t.constant(w0), t.constant(v0), x);
        },
        b0);
  }
  run("tri_band",
      [](Tape& t, Var x) { return sum(sigmoid(tri_band(x, 2))); },
      rnd(5, 5, rng));
  {
    Matrix x0 = rnd(4, 5, rng), g0 = rnd(1, 5, rng), b0 = rnd(1, 5, rng);
    run("layer_norm/x",
        [g0, b0](Tape& t, Var x) {
          return sum(sigmoid(layer_norm(x, t.constant(g0), t.constant(b0))));
        },
        x0);
    run("layer_norm/gain",
        [x0, b0](Tape& t, Var g) {
          return sum(sigmoid(layer_norm(t.constant(x0), g, t.constant(b0))));
        },
        g0);
    run("layer_norm/bias",
        [x0, g0](Tape& t, Var b) {
          return sum(sigmoid(layer_norm(t.constant(x0), t.constant(g0), b)));
        },
        b0);
  }
  {
    std::vector<int> labels = {1, 0, 2, 1};
    run("softmax_cross_entropy",
        [labels](Tape& t, Var z) {
          return softmax_cross_entropy(z, labels);
        },
        rnd(4, 3, rng));
    Vector targets(4);
    targets << 1, 0, 0, 1;
    run("sigmoid_bce",
        [targets](Tape& t, Var z) { return sigmoid_bce(z, targets); },
        rnd(4, 1, rng));
    Matrix tgt = rnd(3, 3, rng);
    run("mse", [tgt](Tape& t, Var p) { return mse(p, tgt); },
        rnd(3, 3, rng));
  }
  run("dropout",
      [](Tape& t, Var x) {
        std::mt19937_64 mask_rng(42);  // same mask every evaluation
        return sum(sigmoid(dropout(x, 0.4, mask_rng)));
      },
      rnd(4, 4, rng));

  return results;
}

}  // namespace cocn
