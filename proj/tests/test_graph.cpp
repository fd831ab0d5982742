#include <doctest.h>

#include <functional>

#include "condisr/graph.hpp"
#include "oracle_utils.hpp"

using namespace condisr;

namespace {

using Build = std::function<Var<double>(Tape<double>&, std::vector<Var<double>>&)>;

/// Compares tape gradients of a scalar-valued graph against central
/// differences on a sample of coordinates of every leaf. Coordinates whose
/// gradient sits below the finite-difference noise floor are skipped.
void check_gradients(std::vector<Tensor<double>> leaves, const Build& build, double tol,
                     double eps = 1e-5) {
  auto value = [&]() {
    Tape<double> tape;
    std::vector<Var<double>> vars;
    for (auto& t : leaves) vars.push_back(tape.leaf(t, true));
    return tape.val(build(tape, vars))[0];
  };
  Tape<double> tape;
  std::vector<Var<double>> vars;
  for (auto& t : leaves) vars.push_back(tape.leaf(t, true));
  Var<double> loss = build(tape, vars);
  tape.backward(loss);
  Rng pick = Rng::derive(999, {static_cast<std::uint64_t>(leaves.size())});
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    Tensor<double> analytic = tape.grad_present(vars[li].id)
                                  ? tape.grad(vars[li])
                                  : Tensor<double>(leaves[li].dims());
    long n = leaves[li].numel();
    long checks = std::min<long>(n, 12);
    for (long k = 0; k < checks; ++k) {
      long idx = static_cast<long>(pick.bounded(static_cast<std::uint32_t>(n)));
      double fd = oracle::central_diff([&]() { return value(); }, leaves[li][idx], eps);
      if (std::max(std::abs(analytic[idx]), std::abs(fd)) < 1e-6) continue;
      double re = oracle::rel_error(analytic[idx], fd, 1e-6);
      CAPTURE(li);
      CAPTURE(idx);
      CAPTURE(fd);
      CAPTURE(analytic[idx]);
      CHECK(re < tol);
    }
  }
}

Tensor<double> rnd(std::vector<long> dims, std::uint64_t seed, double lo = -1, double hi = 1) {
  Rng rng = Rng::derive(seed, {77});
  return oracle::random_tensor(std::move(dims), rng, lo, hi);
}

}  // namespace

TEST_CASE("conv2d forward matches direct computation on a tiny case") {
  // 1x1x3x3 input, 1 output channel, k=3 s=1 p=1: center output = full dot
  Tensor<double> x({1, 1, 3, 3});
  for (long i = 0; i < 9; ++i) x[i] = i + 1;
  Tensor<double> w({1, 9});
  for (long i = 0; i < 9; ++i) w[i] = 0.1 * (i + 1);
  Tape<double> tape;
  Var<double> xv = tape.leaf(x), wv = tape.leaf(w);
  Var<double> y = conv2d(tape, xv, wv, Var<double>{}, 3, 1, 1);
  double expected = 0;
  for (long i = 0; i < 9; ++i) expected += (i + 1) * 0.1 * (i + 1);
  CHECK(tape.val(y).at(0, 0, 1, 1) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("conv2d gradients (stride 2, padding, bias)") {
  check_gradients({rnd({2, 3, 6, 6}, 1), rnd({4, 27}, 2, -0.5, 0.5), rnd({4}, 3)},
                  [](Tape<double>& t, std::vector<Var<double>>& v) {
                    Var<double> y = conv2d(t, v[0], v[1], v[2], 3, 2, 1);
                    return squared_error(t, y, Tensor<double>(t.val(y).dims()), true);
                  },
                  1e-5);
}

TEST_CASE("1x1 conv gradients") {
  check_gradients({rnd({2, 4, 3, 3}, 4), rnd({2, 4}, 5)},
                  [](Tape<double>& t, std::vector<Var<double>>& v) {
                    Var<double> y = conv2d(t, v[0], v[1], Var<double>{}, 1, 1, 0);
                    return squared_error(t, y, Tensor<double>(t.val(y).dims()), true);
                  },
                  1e-5);
}

TEST_CASE("batchnorm gradients in training mode, with and without fused relu") {
  for (bool fuse : {false, true}) {
    Tensor<double> rm({3}), rv = Tensor<double>::full({3}, 1.0);
    check_gradients(
        {rnd({3, 3, 4, 4}, 6), rnd({3}, 7, 0.5, 1.5), rnd({3}, 8, -0.3, 0.3)},
        [&](Tape<double>& t, std::vector<Var<double>>& v) {
          Var<double> y = batchnorm(t, v[0], v[1], v[2], rm, rv, true, fuse);
          Tensor<double> target = Tensor<double>::full(t.val(y).dims(), 0.25);
          return squared_error(t, y, target, true);
        },
        1e-4);
  }
}

TEST_CASE("batchnorm eval mode uses running stats and is linear in x") {
  Tensor<double> rm({2}), rv({2});
  rm[0] = 0.2;
  rm[1] = -0.1;
  rv[0] = 0.9;
  rv[1] = 1.4;
  check_gradients({rnd({2, 2, 3, 3}, 9), rnd({2}, 10, 0.5, 1.5), rnd({2}, 11)},
                  [&](Tape<double>& t, std::vector<Var<double>>& v) {
                    Var<double> y = batchnorm(t, v[0], v[1], v[2], rm, rv, false, false);
                    return squared_error(t, y, Tensor<double>(t.val(y).dims()), true);
                  },
                  1e-5);
  // eval twice -> bitwise identical
  Tensor<double> x = rnd({2, 2, 3, 3}, 12);
  Tensor<double> g = Tensor<double>::full({2}, 1.0), b({2});
  Tape<double> t1, t2;
  Var<double> y1 = batchnorm(t1, t1.leaf(x), t1.leaf(g), t1.leaf(b), rm, rv, false, false);
  Var<double> y2 = batchnorm(t2, t2.leaf(x), t2.leaf(g), t2.leaf(b), rm, rv, false, false);
  for (long i = 0; i < x.numel(); ++i) CHECK(t1.val(y1)[i] == t2.val(y2)[i]);
}

TEST_CASE("pooling, upsample and linear gradients") {
  check_gradients({rnd({2, 2, 4, 4}, 13)},
                  [](Tape<double>& t, std::vector<Var<double>>& v) {
                    Var<double> y = avgpool(t, v[0], 2);
                    return squared_error(t, y, Tensor<double>(t.val(y).dims()), true);
                  },
                  1e-5);
  check_gradients({rnd({2, 2, 5, 5}, 14)},
                  [](Tape<double>& t, std::vector<Var<double>>& v) {
                    Var<double> y = maxpool(t, v[0], 3, 2, 1);
                    return squared_error(t, y, Tensor<double>(t.val(y).dims()), true);
                  },
                  1e-4);
  check_gradients({rnd({2, 3, 3, 3}, 15)},
                  [](Tape<double>& t, std::vector<Var<double>>& v) {
                    Var<double> y = global_avgpool(t, v[0]);
                    return squared_error(t, y, Tensor<double>(t.val(y).dims()), true);
                  },
                  1e-5);
  check_gradients({rnd({1, 2, 3, 3}, 16)},
                  [](Tape<double>& t, std::vector<Var<double>>& v) {
                    Var<double> y = upsample_nearest2(t, v[0]);
                    return squared_error(t, y, Tensor<double>(t.val(y).dims()), true);
                  },
                  1e-5);
  check_gradients({rnd({3, 4}, 17), rnd({2, 4}, 18), rnd({2}, 19)},
                  [](Tape<double>& t, std::vector<Var<double>>& v) {
                    Var<double> y = linear(t, v[0], v[1], v[2]);
                    return squared_error(t, y, Tensor<double>(t.val(y).dims()), true);
                  },
                  1e-5);
}

TEST_CASE("softmax gate and channel scale gradients") {
  check_gradients({rnd({2, 3, 2, 2}, 20), rnd({2, 3}, 21)},
                  [](Tape<double>& t, std::vector<Var<double>>& v) {
                    Var<double> w = softmax_gate(t, v[1], 0.37);
                    Var<double> s0 = channel_scale(t, v[0], w, 0);
                    Var<double> s1 = channel_scale(t, v[0], w, 1);
                    Tensor<double> tgt = Tensor<double>::full(t.val(s0).dims(), 0.1);
                    Var<double> a = squared_error(t, s0, tgt, true);
                    Var<double> b = squared_error(t, s1, tgt, false);
                    return weighted_sum(t, {a, b}, {1.0, 0.5});
                  },
                  1e-5);
}

TEST_CASE("relu and residual add gradients") {
  check_gradients({rnd({2, 2, 3, 3}, 22), rnd({2, 2, 3, 3}, 23)},
                  [](Tape<double>& t, std::vector<Var<double>>& v) {
                    Var<double> y = relu(t, add(t, v[0], v[1]));
                    return squared_error(t, y, Tensor<double>(t.val(y).dims()), true);
                  },
                  1e-4);
}

TEST_CASE("bce with logits gradients and value") {
  Tensor<double> labels({4});
  labels[0] = 1;
  labels[1] = 0;
  labels[2] = 1;
  labels[3] = 0;
  check_gradients({rnd({4, 1}, 24, -2, 2)},
                  [&](Tape<double>& t, std::vector<Var<double>>& v) {
                    return bce_logits(t, v[0], labels);
                  },
                  1e-6);
  // logit 0 -> ln 2
  Tape<double> tape;
  Tensor<double> z({2, 1});
  Tensor<double> y({2});
  y[0] = 0;
  y[1] = 1;
  Var<double> loss = bce_logits(tape, tape.leaf(z), y);
  CHECK(tape.val(loss)[0] == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("pair_l1 value, clamp, hinge and gradients away from kinks") {
  Tensor<double> a({1, 2}), b({1, 2});
  a.at(0, 0) = 0;
  a.at(0, 1) = 0;
  b.at(0, 0) = 1;
  b.at(0, 1) = 1;
  Tape<double> tape;
  Var<double> d = pair_l1(tape, tape.leaf(a), tape.leaf(b), PairReduce::kSum);
  CHECK(tape.val(d)[0] == doctest::Approx(2.0));
  Var<double> dc = pair_l1(tape, tape.leaf(a), tape.leaf(b), PairReduce::kSum, 1.5);
  CHECK(tape.val(dc)[0] == doctest::Approx(1.5));
  Var<double> dh = pair_l1(tape, tape.leaf(a), tape.leaf(b), PairReduce::kSum, 0.0, 3.0);
  CHECK(tape.val(dh)[0] == doctest::Approx(1.0));

  // gradient check with coordinates separated by > 1e-3
  check_gradients({rnd({3, 4}, 30, 0.5, 1.0), rnd({3, 4}, 31, -1.0, -0.5)},
                  [](Tape<double>& t, std::vector<Var<double>>& v) {
                    return pair_l1(t, v[0], v[1], PairReduce::kSum);
                  },
                  1e-6);
  check_gradients({rnd({3, 4}, 32, 0.5, 1.0), rnd({3, 4}, 33, -1.0, -0.5)},
                  [](Tape<double>& t, std::vector<Var<double>>& v) {
                    return pair_l1(t, v[0], v[1], PairReduce::kCoordMean, 0.0, 10.0);
                  },
                  1e-6);
}

TEST_CASE("mixstyle op: forced identity cases and gradient") {
  Tensor<double> x = rnd({3, 2, 4, 4}, 40);
  std::vector<int> ident{0, 1, 2};
  std::vector<double> lam1{1.0, 1.0, 1.0};
  Tape<double> tape;
  Var<double> xv = tape.leaf(x, true);
  Var<double> y = mixstyle_op(tape, xv, ident, lam1);
  for (long i = 0; i < x.numel(); ++i)
    CHECK(tape.val(y)[i] == doctest::Approx(x[i]).epsilon(1e-9));

  // Statistics are treated as constants in backward (as in the reference
  // implementations), so dx must be exactly dy * (sigma_mix / sigma).
  std::vector<int> perm{1, 0, 2};
  std::vector<double> lam{0.3, 0.7, 0.5};
  Tape<double> t2;
  Var<double> xv2 = t2.leaf(x, true);
  Var<double> y2 = mixstyle_op(t2, xv2, perm, lam);
  Var<double> loss = squared_error(t2, y2, Tensor<double>(t2.val(y2).dims()), true);
  t2.backward(loss);
  long n = x.n(), c = x.c(), hw = x.h() * x.w();
  for (long i = 0; i < n; ++i)
    for (long ch = 0; ch < c; ++ch) {
      double m = 0, sq = 0;
      for (long j = 0; j < hw; ++j) {
        double v = x.data()[(i * c + ch) * hw + j];
        m += v / hw;
        sq += v * v / hw;
      }
      double sig = std::sqrt(std::max(0.0, sq - m * m) + 1e-6);
      double mp = 0, sqp = 0;
      for (long j = 0; j < hw; ++j) {
        double v = x.data()[(perm[i] * c + ch) * hw + j];
        mp += v / hw;
        sqp += v * v / hw;
      }
      double sigp = std::sqrt(std::max(0.0, sqp - mp * mp) + 1e-6);
      double sig_mix = lam[i] * sig + (1.0 - lam[i]) * sigp;
      for (long j = 0; j < hw; ++j) {
        long idx = (i * c + ch) * hw + j;
        double dy = 2.0 * t2.val(y2)[idx] / x.numel();
        CHECK(t2.grad(xv2)[idx] ==
              doctest::Approx(dy * sig_mix / sig).epsilon(1e-9));
      }
    }
}

TEST_CASE("dsu op: zero noise is identity") {
  Tensor<double> x = rnd({3, 2, 4, 4}, 41);
  Tensor<double> z1({3, 2}), z2({3, 2});
  Tape<double> tape;
  Var<double> y = dsu_op(tape, tape.leaf(x), z1, z2);
  for (long i = 0; i < x.numel(); ++i)
    CHECK(tape.val(y)[i] == doctest::Approx(x[i]).epsilon(1e-9));
}

TEST_CASE("shared parameters accumulate gradients across branches") {
  // One weight used by two branches; d(total)/dw must be the sum.
  Tensor<double> x1 = rnd({2, 3}, 50), x2 = rnd({2, 3}, 51), w = rnd({1, 3}, 52);
  Tape<double> tape;
  Var<double> wv = tape.leaf(w, true);
  Var<double> y1 = linear(tape, tape.leaf(x1), wv, Var<double>{});
  Var<double> y2 = linear(tape, tape.leaf(x2), wv, Var<double>{});
  Var<double> l1 = squared_error(tape, y1, Tensor<double>({2, 1}), false);
  Var<double> l2 = squared_error(tape, y2, Tensor<double>({2, 1}), false);
  Var<double> total = weighted_sum(tape, {l1, l2}, {1.0, 1.0});
  tape.backward(total);
  Tensor<double> got = tape.grad(wv);

  auto value = [&](Tensor<double>& wt) {
    Tape<double> t;
    Var<double> wvv = t.leaf(wt, true);
    Var<double> a = linear(t, t.leaf(x1), wvv, Var<double>{});
    Var<double> b = linear(t, t.leaf(x2), wvv, Var<double>{});
    Var<double> la = squared_error(t, a, Tensor<double>({2, 1}), false);
    Var<double> lb = squared_error(t, b, Tensor<double>({2, 1}), false);
    return t.val(weighted_sum(t, {la, lb}, {1.0, 1.0}))[0];
  };
  for (long i = 0; i < w.numel(); ++i) {
    double fd = oracle::central_diff([&]() { return value(w); }, w[i]);
    CHECK(oracle::rel_error(got[i], fd) < 1e-6);
  }
}
