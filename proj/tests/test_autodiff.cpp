#include <doctest.h>

#include "musicdiff/autodiff.hpp"
#include "musicdiff/rng.hpp"
#include "support/gradcheck.hpp"

using namespace musicdiff;
using ad::Mat;
using ad::Tape;
using ad::Var;
using testing::grad_check;

namespace {

Mat random_mat(Rng& rng, int r, int c, double scale = 1.0) {
  Mat m(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) m(i, j) = scale * rng.normal();
  return m;
}

}  // namespace

TEST_CASE("gradient of squared norm is 2x") {
  Tape tape;
  Mat x = Mat::Zero(3, 1);
  x << 1.0, -2.0, 0.5;
  const Var vx = tape.leaf(x);
  const Var loss = tape.sum(tape.square(vx));
  CHECK(tape.scalar(loss) == doctest::Approx(5.25));
  tape.backward(loss);
  CHECK((tape.grad(vx) - 2.0 * x).norm() == doctest::Approx(0.0));
}

TEST_CASE("backward without a recorded graph throws") {
  Tape tape;
  CHECK_THROWS_AS(tape.backward(Var{}), Error);
}

TEST_CASE("elementwise and linear ops pass finite differences") {
  Rng rng(101);
  for (int it = 0; it < 5; ++it) {
    auto res = grad_check(
        {random_mat(rng, 4, 6), random_mat(rng, 4, 6), random_mat(rng, 3, 4)},
        [](Tape& t, const std::vector<Var>& v) {
          const Var a = v[0], b = v[1], w = v[2];
          Var x = t.mul(t.add(a, b), t.sub(a, t.scale(b, 0.5)));
          x = t.matmul(w, x);
          x = t.add(t.tanh(x), t.sigmoid(t.scale(x, 0.3)));
          return t.mean(t.square(x));
        },
        rng);
    CHECK(res.ok(1e-6));
  }
}

TEST_CASE("nonlinearities pass finite differences") {
  Rng rng(102);
  auto res = grad_check(
      {random_mat(rng, 5, 7)},
      [](Tape& t, const std::vector<Var>& v) {
        Var x = v[0];
        Var y = t.add(t.gelu(x), t.exp(t.scale(x, 0.2)));
        y = t.add(y, t.log(t.clamp_min(t.square(x), 0.1)));
        y = t.add(y, t.sqrt(t.clamp_min(t.square(x), 0.05)));
        return t.mean(y);
      },
      rng, 40);
  CHECK(res.ok(1e-5));
}

TEST_CASE("broadcast, concat, slice, gather pass finite differences") {
  Rng rng(103);
  auto res = grad_check(
      {random_mat(rng, 4, 5), random_mat(rng, 4, 1), random_mat(rng, 2, 5)},
      [](Tape& t, const std::vector<Var>& v) {
        Var m = t.add_colvec(v[0], v[1]);
        m = t.mul_colvec(m, v[1]);
        Var joined = t.vcat(m, v[2]);
        joined = t.hcat({joined, joined});
        Var sl = t.slice_rows(t.slice_cols(joined, 2, 6), 1, 4);
        Var g = t.gather_cols(sl, {0, 0, 3, 5, 2});
        Var sh = t.shift_cols(g);
        return t.mse(sh, t.scale(g, 0.1));
      },
      rng, 40);
  CHECK(res.ok(1e-6));
}

TEST_CASE("softmax and cross entropy pass finite differences") {
  Rng rng(104);
  std::vector<int> targets = {2, 0, 4, 1, 3, 3};
  auto res = grad_check(
      {random_mat(rng, 5, 6)},
      [&targets](Tape& t, const std::vector<Var>& v) {
        const Var sm = t.softmax_cols(v[0]);
        const Var ce = t.cross_entropy_cols(v[0], targets);
        return t.add(ce, t.mean(t.square(sm)));
      },
      rng, 40);
  CHECK(res.ok(1e-6));
}

TEST_CASE("softmax columns sum to one") {
  Rng rng(105);
  Tape tape;
  const Var x = tape.leaf(random_mat(rng, 7, 9, 3.0));
  const Mat y = tape.val(tape.softmax_cols(x));
  for (int j = 0; j < 9; ++j) CHECK(y.col(j).sum() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("normalization, reductions, losses pass finite differences") {
  Rng rng(106);
  auto res = grad_check(
      {random_mat(rng, 4, 6), random_mat(rng, 4, 6), random_mat(rng, 1, 1)},
      [](Tape& t, const std::vector<Var>& v) {
        Var u = t.l2_normalize_cols(v[0]);
        Var w = t.l2_normalize_cols(v[1]);
        Var sim = t.matmul(t.transpose(u), w);
        Var scaled = t.scale_by_scalar(sim, t.exp(v[2]));
        Var l = t.smooth_l1(scaled, t.transpose(sim));
        l = t.add(l, t.mse(u, w));
        l = t.add(l, t.mean(t.square(t.mean_cols(u))));
        l = t.add(l, t.scale(t.dot(u, w), 0.25));
        return l;
      },
      rng, 40);
  CHECK(res.ok(1e-6));
}

TEST_CASE("wkv: length one returns the first value") {
  Tape tape;
  Rng rng(107);
  const Var w = tape.leaf(random_mat(rng, 4, 1));
  const Var k = tape.leaf(random_mat(rng, 4, 1));
  const Mat vv = random_mat(rng, 4, 1);
  const Var v = tape.leaf(vv);
  CHECK((tape.val(tape.wkv(w, k, v)) - vv).norm() == doctest::Approx(0.0));
}

TEST_CASE("wkv: zero decay and equal keys averages values") {
  Tape tape;
  const int D = 3, T = 6;
  const Var w = tape.leaf(Mat::Zero(D, 1));
  const Var k = tape.leaf(Mat::Constant(D, T, 0.7));
  Mat vv(D, T);
  vv << 1, 2, 3, 4, 5, 6, -1, 0, 1, 2, 3, 4, 10, 10, 10, 10, 10, 10;
  const Var v = tape.leaf(vv);
  const Mat out = tape.val(tape.wkv(w, k, v));
  for (int t = 0; t < T; ++t) {
    for (int d = 0; d < D; ++d) {
      CHECK(out(d, t) == doctest::Approx(vv.row(d).head(t + 1).mean()).epsilon(1e-12));
    }
  }
}

TEST_CASE("wkv matches the quadratic definition") {
  Rng rng(108);
  for (int it = 0; it < 100; ++it) {
    const int D = 1 + static_cast<int>(rng.uniform_int(6));
    const int T = 1 + static_cast<int>(rng.uniform_int(64));
    const Mat w = random_mat(rng, D, 1);
    const Mat k = random_mat(rng, D, T, 2.0);
    const Mat v = random_mat(rng, D, T, 2.0);
    const Mat fast = ad::wkv_forward(w.col(0), k, v);
    for (int d = 0; d < D; ++d) {
      for (int t = 0; t < T; ++t) {
        double num = 0, den = 0;
        for (int i = 0; i <= t; ++i) {
          const double e = std::exp(w(d, 0) * (t - i) + k(d, i));
          num += e * v(d, i);
          den += e;
        }
        CHECK(std::abs(fast(d, t) - num / den) <= 1e-12 * std::max(1.0, std::abs(num / den)));
      }
    }
  }
}

TEST_CASE("wkv is finite for large keys") {
  Rng rng(109);
  Mat k = random_mat(rng, 4, 32);
  k = k.array() * 25.0;  // |K| up to ~50
  k = k.cwiseMax(-50.0).cwiseMin(50.0);
  const Mat v = random_mat(rng, 4, 32, 3.0);
  Mat w = random_mat(rng, 4, 1, 2.0);
  const Mat out = ad::wkv_forward(w.col(0), k, v);
  CHECK(out.allFinite());
}

TEST_CASE("wkv is causal") {
  Rng rng(110);
  const int D = 4, T = 20;
  const Mat w = random_mat(rng, D, 1);
  const Mat k = random_mat(rng, D, T);
  const Mat v = random_mat(rng, D, T);
  const Mat base = ad::wkv_forward(w.col(0), k, v);
  for (int cut = 1; cut < T; cut += 4) {
    Mat k2 = k, v2 = v;
    for (int t = cut; t < T; ++t) {
      k2.col(t).setConstant(9.0);
      v2.col(t).setConstant(-7.0);
    }
    const Mat changed = ad::wkv_forward(w.col(0), k2, v2);
    CHECK((changed.leftCols(cut) - base.leftCols(cut)).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("wkv gradients pass finite differences") {
  Rng rng(111);
  int probes = 0;
  double max_err = 0;
  for (int it = 0; it < 6; ++it) {
    const int D = 2 + static_cast<int>(rng.uniform_int(3));
    const int T = 3 + static_cast<int>(rng.uniform_int(14));
    auto res = grad_check(
        {random_mat(rng, D, 1), random_mat(rng, D, T), random_mat(rng, D, T)},
        [](Tape& t, const std::vector<Var>& v) {
          const Var out = t.wkv(v[0], v[1], v[2]);
          // Mix positions unevenly so every column influences the loss.
          return t.mean(t.square(t.add(out, t.shift_cols(t.scale(out, 0.3)))));
        },
        rng, 25);
    probes += res.probes;
    max_err = std::max(max_err, res.max_rel_err);
  }
  CHECK(probes >= 100);
  CHECK(max_err <= 1e-6);
}

TEST_CASE("repeated backward with different roots") {
  Tape tape;
  const Mat x0 = Mat::Constant(2, 2, 1.5);
  const Var x = tape.leaf(x0);
  const Var a = tape.sum(tape.square(x));
  const Var b = tape.sum(tape.scale(x, 3.0));
  tape.backward(a);
  CHECK(tape.grad(x)(0, 0) == doctest::Approx(3.0));
  tape.backward(b);
  CHECK(tape.grad(x)(0, 0) == doctest::Approx(3.0));
  tape.backward(a);
  CHECK(tape.grad(x)(1, 1) == doctest::Approx(3.0));
}
