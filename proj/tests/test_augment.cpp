#include <doctest.h>

#include "condisr/augment.hpp"
#include "oracle_utils.hpp"

using namespace condisr;

namespace {
Tensor<double> random_image(std::vector<long> dims, Rng& rng) {
  return oracle::random_tensor(std::move(dims), rng, 0.0, 1.0);
}
}  // namespace

TEST_CASE("bezier param sampling honors invert_prob and determinism") {
  Rng r1 = Rng::derive(3, {1});
  BezierParams p0 = sample_bezier_params(r1, 0.0);
  CHECK(!p0.invert);
  Rng r2 = Rng::derive(3, {1});
  BezierParams p1 = sample_bezier_params(r2, 1.0);
  CHECK(p1.invert);
  CHECK(p0.p1x == p1.p1x);  // same stream, same points
  CHECK(p0.p1x <= p0.p2x);
  Rng r3 = Rng::derive(3, {1});
  BezierParams p2 = sample_bezier_params(r3, 1.0);
  CHECK(p2.p2y == p1.p2y);
}

TEST_CASE("bezier with collinear control points is the identity") {
  BezierParams id;  // (1/3,1/3), (2/3,2/3)
  Rng rng = Rng::derive(4, {});
  Tensor<double> x = random_image({3, 8, 8}, rng);
  Tensor<double> y = bezier_transform(x, id);
  for (long i = 0; i < x.numel(); ++i) CHECK(std::abs(y[i] - x[i]) < 1e-6);
  BezierParams inv = id;
  inv.invert = true;
  Tensor<double> z = bezier_transform(x, inv);
  for (long i = 0; i < x.numel(); ++i) CHECK(std::abs(z[i] - (1.0 - x[i])) < 1e-6);
}

TEST_CASE("bezier fixes the endpoints and rejects out-of-range pixels") {
  Rng rng = Rng::derive(5, {});
  for (int trial = 0; trial < 50; ++trial) {
    BezierParams p = sample_bezier_params(rng, 0.0);
    Tensor<double> ends({1, 1, 2});
    ends[0] = 0.0;
    ends[1] = 1.0;
    Tensor<double> out = bezier_transform(ends, p);
    CHECK(std::abs(out[0] - 0.0) < 1e-9);
    CHECK(std::abs(out[1] - 1.0) < 1e-9);
  }
  Tensor<double> bad({1, 1, 1});
  bad[0] = 1.5;
  CHECK_THROWS_AS(bezier_transform(bad, BezierParams{}), std::invalid_argument);
}

TEST_CASE("bezier preserves [0,1] and monotonicity over many random params") {
  Rng rng = Rng::derive(6, {});
  Tensor<double> sorted({1, 1, 64});
  for (long i = 0; i < 64; ++i) sorted[i] = i / 63.0;
  for (int trial = 0; trial < 1000; ++trial) {
    BezierParams p = sample_bezier_params(rng, 0.0);
    Tensor<double> img({1, 4, 4});
    for (long i = 0; i < 16; ++i) img[i] = rng.uniform();
    Tensor<double> out = bezier_transform(img, p);
    for (long i = 0; i < out.numel(); ++i) {
      CHECK(out[i] >= 0.0);
      CHECK(out[i] <= 1.0);
    }
    Tensor<double> mapped = bezier_transform(sorted, p);
    for (long i = 1; i < 64; ++i) CHECK(mapped[i] >= mapped[i - 1] - 1e-9);
  }
}

TEST_CASE("fda identities: beta 0 and self-reference") {
  Rng rng = Rng::derive(7, {});
  Tensor<double> a = random_image({3, 8, 8}, rng);
  Tensor<double> b = random_image({3, 8, 8}, rng);
  Tensor<double> out0 = fda_low_freq_swap(a, b, FdaParams{0.0});
  for (long i = 0; i < a.numel(); ++i) CHECK(std::abs(out0[i] - a[i]) < 1e-5);
  for (double beta : {0.1, 0.3, 0.5}) {
    Tensor<double> self = fda_low_freq_swap(a, a, FdaParams{beta});
    for (long i = 0; i < a.numel(); ++i) CHECK(std::abs(self[i] - a[i]) < 1e-5);
  }
}

TEST_CASE("fda errors: shape mismatch and beta range") {
  Tensor<double> a({3, 8, 8}), b({3, 4, 4});
  CHECK_THROWS_AS(fda_low_freq_swap(a, b, FdaParams{0.1}), std::invalid_argument);
  Tensor<double> c({3, 8, 8});
  CHECK_THROWS_AS(fda_low_freq_swap(a, c, FdaParams{0.6}), std::invalid_argument);
  CHECK_THROWS_AS(fda_low_freq_swap(a, c, FdaParams{-0.1}), std::invalid_argument);
}

TEST_CASE("fda matches the brute-force DFT oracle on 4x4 and 8x8 images") {
  Rng rng = Rng::derive(8, {});
  for (int trial = 0; trial < 40; ++trial) {
    long side = trial % 2 == 0 ? 4 : 8;
    Tensor<double> src = random_image({1, side, side}, rng);
    Tensor<double> ref = random_image({1, side, side}, rng);
    double beta = rng.uniform(0.0, 0.5);
    Tensor<double> fast = fda_low_freq_swap(src, ref, FdaParams{beta});
    Tensor<double> slow = oracle::fda_oracle(src, ref, beta);
    for (long i = 0; i < fast.numel(); ++i) CHECK(std::abs(fast[i] - slow[i]) < 1e-6);
  }
}

TEST_CASE("fda DC-only window: output mean equals reference DC magnitude with source sign") {
  // 4x4 single channel, L = 1: only the DC amplitude is replaced, so the
  // output mean must equal |DC_ref|/16 (source DC of a nonnegative image is
  // positive, phase 0). Verified against the O(N^4) oracle too.
  Rng rng = Rng::derive(9, {});
  for (int trial = 0; trial < 20; ++trial) {
    Tensor<double> src = random_image({1, 4, 4}, rng);
    Tensor<double> ref = random_image({1, 4, 4}, rng);
    double beta = 0.3;  // floor(0.3*4) = 1
    auto ref_dft = oracle::brute_dft2d(ref.data(), 4, 4);
    double want_mean = std::abs(ref_dft[0]) / 16.0;
    Tensor<double> pre_clip = src;  // compute without clipping via oracle internals
    Tensor<double> out = fda_low_freq_swap(src, ref, FdaParams{beta});
    // The swap only changes the DC bin; clipping can bite only if values
    // leave [0,1]. Keep means comparable by checking the unclipped identity
    // through the oracle result as well.
    Tensor<double> slow = oracle::fda_oracle(src, ref, beta);
    double mean_fast = 0.0, mean_slow = 0.0;
    bool clipped = false;
    for (long i = 0; i < 16; ++i) {
      mean_fast += out[i] / 16.0;
      mean_slow += slow[i] / 16.0;
      if (out[i] <= 0.0 || out[i] >= 1.0) clipped = true;
    }
    CHECK(std::abs(mean_fast - mean_slow) < 1e-9);
    if (!clipped) CHECK(std::abs(mean_fast - want_mean) < 1e-6);
  }
}

TEST_CASE("fda is idempotent in amplitude") {
  // images away from the [0,1] clip boundary, so the swap is invertible
  Rng rng = Rng::derive(10, {});
  Tensor<double> src = oracle::random_tensor({2, 8, 8}, rng, 0.3, 0.7);
  Tensor<double> ref = oracle::random_tensor({2, 8, 8}, rng, 0.3, 0.7);
  FdaParams p{0.25};
  Tensor<double> once = fda_low_freq_swap(src, ref, p);
  Tensor<double> twice = fda_low_freq_swap(once, ref, p);
  for (long i = 0; i < src.numel(); ++i) CHECK(std::abs(once[i] - twice[i]) < 1e-5);
}

TEST_CASE("make_triplet: shapes, determinism, forced identities, fallback") {
  Rng rng = Rng::derive(11, {});
  Tensor<double> batch({4, 3, 16, 16});
  for (long i = 0; i < batch.numel(); ++i) batch[i] = rng.uniform();

  BezierConfig bez;
  FdaConfig fda;
  Rng a1 = Rng::derive(12, {});
  Triplet<double> t1 = make_triplet(batch, a1, bez, fda);
  CHECK(t1.source.dims() == batch.dims());
  CHECK(t1.bezier.dims() == batch.dims());
  CHECK(t1.fda.dims() == batch.dims());
  CHECK(!t1.fda_fallback);
  for (long i = 0; i < batch.numel(); ++i) CHECK(t1.source[i] == batch[i]);

  Rng a2 = Rng::derive(12, {});
  Triplet<double> t2 = make_triplet(batch, a2, bez, fda);
  for (long i = 0; i < batch.numel(); ++i) {
    CHECK(t1.bezier[i] == t2.bezier[i]);
    CHECK(t1.fda[i] == t2.fda[i]);
  }

  // beta forced to 0 makes x_b == x_s; identity bezier needs no sampling
  FdaConfig zero{0.0, 0.0};
  Rng a3 = Rng::derive(13, {});
  Triplet<double> t3 = make_triplet(batch, a3, bez, zero);
  for (long i = 0; i < batch.numel(); ++i) CHECK(std::abs(t3.fda[i] - batch[i]) < 1e-5);

  Tensor<double> one({1, 3, 16, 16});
  for (long i = 0; i < one.numel(); ++i) one[i] = rng.uniform();
  Rng a4 = Rng::derive(14, {});
  Triplet<double> t4 = make_triplet(one, a4, bez, fda);
  CHECK(t4.fda_fallback);
  for (long i = 0; i < one.numel(); ++i) CHECK(t4.fda[i] == one[i]);
}
