#include <doctest.h>

#include <functional>

#include "rpo/rng.hpp"
#include "rpo/tape.hpp"

using namespace rpo;

namespace {

Mat randn(RngStream& rng, int r, int c, double scale = 1.0) {
  Mat m(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) m(i, j) = rng.normal() * scale;
  return m;
}

/// Central-difference check of d(loss)/d(source) for one coordinate.
double finite_diff(Mat& source, int r, int c, const std::function<double()>& loss, double h = 1e-6) {
  const double keep = source(r, c);
  source(r, c) = keep + h;
  const double up = loss();
  source(r, c) = keep - h;
  const double down = loss();
  source(r, c) = keep;
  return (up - down) / (2.0 * h);
}

}  // namespace

TEST_CASE("constant loss has exactly zero parameter gradients") {
  Mat theta = Mat::Ones(3, 3);
  Tape tape;
  Var p = tape.param(theta);
  (void)p;
  Var loss = tape.scalar_input(5.0);
  tape.backward(loss);
  tape.for_each_param_grad([&](const Mat*, const Mat& g) { CHECK(g.isZero(0.0)); });
}

TEST_CASE("quadratic gradient equals theta elementwise") {
  RngStream rng(3);
  Mat theta = randn(rng, 4, 5);
  Tape tape;
  Var p = tape.param(theta);
  Var loss = tape.affine(tape.sum(tape.hadamard(p, p)), 0.5, 0.0);
  tape.backward(loss);
  tape.for_each_param_grad([&](const Mat*, const Mat& g) {
    CHECK((g - theta).cwiseAbs().maxCoeff() == doctest::Approx(0.0).epsilon(1e-12));
  });
}

TEST_CASE("backward rejects a loss from another tape") {
  Tape a, b;
  Var loss = a.scalar_input(1.0);
  (void)b;
  Tape c;
  CHECK_THROWS_AS(c.backward(loss), AuditError);
  Var bad;
  CHECK_THROWS_AS(a.backward(bad), AuditError);
}

TEST_CASE("composite ops agree with finite differences") {
  RngStream rng(17);
  Mat a = randn(rng, 3, 4);
  Mat b = randn(rng, 4, 3);
  Mat gain = Mat::Ones(1, 4) + 0.1 * randn(rng, 1, 4);
  Mat brow = randn(rng, 1, 3);

  // Exercises rms_norm, matmul(+_nt), broadcast add, gelu, the causal
  // softmax, token log-probs, and the scalar odds chain in one graph.
  auto build = [&](Tape& tape) {
    Var va = tape.param(a);
    Var vb = tape.param(b);
    Var vg = tape.param(gain);
    Var vrow = tape.param(brow);
    Var x = tape.rms_norm(va, vg);
    Var y = tape.add_row_broadcast(tape.matmul(x, vb), vrow);
    Var z = tape.gelu(y);
    Var s = tape.causal_row_softmax(tape.matmul_nt(z, z));
    Var lp = tape.token_logprobs(tape.matmul(s, z), {0, 2, 1});
    Var clamped = tape.clamp(tape.mean(lp), std::log(1e-12), std::log1p(-1e-12));
    return tape.affine(tape.log_sigmoid(tape.log_odds_from_logp(clamped)), -1.0, 0.0);
  };
  auto loss_value = [&]() {
    Tape tape;
    return tape.value(build(tape));
  };

  Tape tape;
  Var loss = build(tape);
  tape.backward(loss);
  std::vector<const Mat*> sources;
  std::vector<Mat> grads;
  tape.for_each_param_grad([&](const Mat* src, const Mat& g) {
    sources.push_back(src);
    grads.push_back(g);
  });
  REQUIRE(sources.size() == 4);

  RngStream pick(5);
  for (size_t which = 0; which < sources.size(); ++which) {
    Mat& m = const_cast<Mat&>(*sources[which]);
    for (int probe = 0; probe < 6; ++probe) {
      const int r = static_cast<int>(pick.uniform_int(0, m.rows() - 1));
      const int c = static_cast<int>(pick.uniform_int(0, m.cols() - 1));
      const double fd = finite_diff(m, r, c, loss_value);
      const double an = grads[which](r, c);
      const double scale = std::max({1e-8, std::abs(fd), std::abs(an)});
      CHECK(std::abs(fd - an) / scale < 1e-5);
    }
  }
}

TEST_CASE("embedding gather scatters gradients to the right rows") {
  RngStream rng(8);
  Mat table = randn(rng, 6, 3);
  Tape tape;
  Var e = tape.param(table);
  Var g = tape.embed_rows(e, {2, 2, 5});
  Var loss = tape.sum(g);
  tape.backward(loss);
  tape.for_each_param_grad([&](const Mat*, const Mat& grad) {
    CHECK(grad.row(2).sum() == doctest::Approx(6.0));
    CHECK(grad.row(5).sum() == doctest::Approx(3.0));
    CHECK(grad.row(0).sum() == doctest::Approx(0.0));
  });
}

TEST_CASE("vstack and slice_rows invert each other in gradient flow") {
  RngStream rng(10);
  Mat m = randn(rng, 4, 2);
  Tape tape;
  Var p = tape.param(m);
  Var top = tape.slice_rows(p, 0, 2);
  Var bottom = tape.slice_rows(p, 2, 4);
  Var joined = tape.vstack({top, bottom});
  Var loss = tape.sum(tape.hadamard(joined, joined));
  tape.backward(loss);
  tape.for_each_param_grad([&](const Mat*, const Mat& g) {
    CHECK((g - 2.0 * m).cwiseAbs().maxCoeff() < 1e-12);
  });
}
