#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "test_util.hpp"
#include "tiser/errors.hpp"
#include "tiser/layers.hpp"

using namespace tiser;
using namespace tiser::testing;

namespace {

Tensor gcn_oracle(const Tensor& m, const Tensor& h, const Tensor& w) {
  const std::size_t n = m.dim(0), fi = h.dim(1), fo = w.dim(1);
  Tensor out({n, fo});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t o = 0; o < fo; ++o) {
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j)
        for (std::size_t f = 0; f < fi; ++f) acc += m.at(i, j) * h.at(j, f) * w.at(f, o);
      out.at(i, o) = acc;
    }
  return out;
}

Tensor permute_rows(const Tensor& t, const std::vector<std::size_t>& p) {
  Tensor out(t.shape());
  const std::size_t w = t.size() / t.dim(0);
  for (std::size_t i = 0; i < p.size(); ++i) std::copy_n(t.ptr() + p[i] * w, w, out.ptr() + i * w);
  return out;
}

Tensor permute_both(const Tensor& m, const std::vector<std::size_t>& p) {
  Tensor out(m.shape());
  for (std::size_t i = 0; i < p.size(); ++i)
    for (std::size_t j = 0; j < p.size(); ++j) out.at(i, j) = m.at(p[i], p[j]);
  return out;
}

}  // namespace

TEST(ConvLayer, SingleNodeReducesToConv1d) {
  Rng rng(1);
  Conv1DLayer l = Conv1DLayer::create(3, 1, 1, 1, Activation::kLinear, rng);
  l.kernels = Tensor({3, 1, 1}, {1, 0, -1});
  Tape t;
  EXPECT_EQ(conv_apply(l, t.constant(Tensor({1, 4, 1}, {1, 2, 3, 4}))).value(),
            Tensor({1, 2, 1}, {-2, -2}));
}

TEST(ConvLayer, IdenticalNodesGiveIdenticalRows) {
  Rng rng(2);
  std::mt19937_64 r2(2);
  const Conv1DLayer l = Conv1DLayer::create(5, 3, 4, 2, Activation::kRelu, rng);
  const Tensor one = random_tensor({1, 30, 3}, r2);
  Tensor x({3, 30, 3});
  for (std::size_t i = 0; i < 3; ++i) std::copy_n(one.ptr(), one.size(), x.ptr() + i * one.size());
  Tape t;
  const Tensor y = conv_apply(l, t.constant(x)).value();
  const std::size_t w = y.size() / 3;
  for (std::size_t i = 1; i < 3; ++i) {
    EXPECT_TRUE(std::equal(y.ptr(), y.ptr() + w, y.ptr() + i * w));
  }
}

TEST(ConvLayer, DefaultShapesFollowClosedForm) {
  Rng rng(3);
  const Conv1DLayer c1 = Conv1DLayer::create(125, 3, 32, 2, Activation::kRelu, rng);
  const Conv1DLayer c2 = Conv1DLayer::create(125, 32, 64, 2, Activation::kRelu, rng);
  std::mt19937_64 r2(3);
  Tape t(false);
  Var h = conv_apply(c2, conv_apply(c1, t.constant(random_tensor({5, 1000, 3}, r2))));
  const std::size_t t1 = (1000 - 125) / 2 + 1, t2 = (t1 - 125) / 2 + 1;
  EXPECT_EQ(h.shape(), (Shape{5, t2, 64}));
  EXPECT_EQ(node_feature_reshape(h).shape(), (Shape{5, t2 * 64}));
  EXPECT_EQ(c1.out_length(1000), t1);
  EXPECT_EQ(c2.out_length(t1), t2);
}

TEST(ConvLayer, ShortInputThrows) {
  Rng rng(4);
  const Conv1DLayer l = Conv1DLayer::create(10, 1, 1, 1, Activation::kRelu, rng);
  Tape t;
  EXPECT_THROW(conv_apply(l, t.constant(Tensor({2, 9, 1}))), ShapeError);
}

TEST(ConvLayer, NodePermutationPermutesOutputRows) {
  Rng rng(5);
  std::mt19937_64 r2(5);
  const Conv1DLayer l = Conv1DLayer::create(4, 2, 3, 2, Activation::kTanh, rng);
  const Tensor x = random_tensor({6, 20, 2}, r2);
  std::vector<std::size_t> p(6);
  std::iota(p.begin(), p.end(), 0);
  std::shuffle(p.begin(), p.end(), r2);
  Tape t;
  const Tensor y = conv_apply(l, t.constant(x)).value();
  const Tensor yp = conv_apply(l, t.constant(permute_rows(x, p))).value();
  EXPECT_EQ(yp, permute_rows(y, p));
}

TEST(ConvLayer, GradientsMatchFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    std::mt19937_64 r2(seed + 100);
    Conv1DLayer l = Conv1DLayer::create(5, 2, 3, 2, Activation::kTanh, rng);
    Tensor x = random_tensor({3, 17, 2}, r2);
    const Tensor r = random_tensor({3 * 7 * 3}, r2);
    const double err = gradient_error(
        [&](Tape&, const std::vector<Var>& v) { return probe(conv_apply(l, v[0]), r); }
        , {&x});
    const double err_w = gradient_error(
        [&](Tape& t, const std::vector<Var>&) { return probe(conv_apply(l, t.constant(x)), r); },
        {&l.kernels, &l.bias});
    EXPECT_LT(std::max(err, err_w), 1e-6) << "seed " << seed;
  }
}

TEST(NodeReshape, RowMajorPerNode) {
  Tape t;
  Tensor h({2, 2, 2}, {1, 2, 3, 4, 5, 6, 7, 8});
  Var r = node_feature_reshape(t.constant(h));
  EXPECT_EQ(r.value(), Tensor({2, 4}, {1, 2, 3, 4, 5, 6, 7, 8}));
  EXPECT_EQ(reshape(r, {2, 2, 2}).value(), h);
}

TEST(NodeReshape, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(6);
  Tensor h = random_tensor({3, 4, 2}, rng);
  const Tensor r = random_tensor({24}, rng);
  EXPECT_LT(gradient_error([&](Tape&, const std::vector<Var>& v) {
              return probe(node_feature_reshape(v[0]), r);
            }, {&h}),
            1e-8);
}

TEST(Metadata, AppendsStandardizedCoordinates) {
  Tape t;
  Var h = t.constant(Tensor({2, 3}, {1, 2, 3, 4, 5, 6}));
  const Tensor out = append_metadata(h, Tensor::matrix({{42, 13}, {43, 14}})).value();
  EXPECT_EQ(out.shape(), (Shape{2, 5}));
  EXPECT_EQ(out.at(0, 2), 3.0);
  EXPECT_DOUBLE_EQ(out.at(0, 3), -1.0);
  EXPECT_DOUBLE_EQ(out.at(1, 3), 1.0);
  EXPECT_DOUBLE_EQ(out.at(0, 4), -1.0);
  EXPECT_DOUBLE_EQ(out.at(1, 4), 1.0);
}

TEST(Metadata, ZeroVarianceColumnMapsToZero) {
  const Tensor s = standardize_metadata(Tensor::matrix({{42, 13}, {43, 13}, {44, 13}}));
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(s.at(i, 1), 0.0);
}

TEST(Metadata, DisabledFlagPassesThrough) {
  Tape t;
  Var h = t.constant(Tensor({2, 3}, 1.0));
  EXPECT_EQ(append_metadata(h, Tensor({2, 2}), false).id(), h.id());
  EXPECT_THROW(append_metadata(h, Tensor({3, 2})), ShapeError);
}

TEST(Gcn, IdentityPropagationAndWeightsReturnInput) {
  Rng rng(7);
  std::mt19937_64 r2(7);
  GCNLayer l = GCNLayer::create(3, 3, Activation::kLinear, rng);
  l.weight = Tensor::matrix({{1, 0, 0}, {0, 1, 0}, {0, 0, 1}});
  const Tensor h = random_tensor({4, 3}, r2);
  Tensor eye({4, 4});
  for (std::size_t i = 0; i < 4; ++i) eye.at(i, i) = 1.0;
  Tape t;
  EXPECT_EQ(gcn_apply(l, t.constant(eye), t.constant(h)).value(), h);
}

TEST(Gcn, TwoNodeHandExample) {
  Rng rng(8);
  GCNLayer l = GCNLayer::create(1, 1, Activation::kLinear, rng);
  l.weight = Tensor::matrix({{1}});
  Tape t;
  Var y = gcn_apply(l, t.constant(Tensor::matrix({{0.5, 0.5}, {0.5, 0.5}})),
                    t.constant(Tensor::matrix({{2}, {0}})));
  EXPECT_EQ(y.value(), Tensor::matrix({{1}, {1}}));
}

TEST(Gcn, MatchesOracleAndFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    std::mt19937_64 r2(seed + 50);
    GCNLayer l = GCNLayer::create(5, 4, Activation::kLinear, rng);
    const Tensor m = random_tensor({6, 6}, r2, 0, 1), h = random_tensor({6, 5}, r2);
    Tape t;
    const Tensor y = gcn_apply(l, t.constant(m), t.constant(h)).value();
    EXPECT_LT(max_abs_diff(y, gcn_oracle(m, h, l.weight)), 1e-12);
    l.activation = Activation::kTanh;
    const Tensor r = random_tensor({24}, r2);
    EXPECT_LT(gradient_error([&](Tape& tp, const std::vector<Var>&) {
                return probe(gcn_apply(l, tp.constant(m), tp.constant(h)), r);
              }, {&l.weight}),
              1e-6);
  }
}

TEST(Gcn, PermutationEquivariance) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    std::mt19937_64 r2(seed);
    const GCNLayer l = GCNLayer::create(7, 5, Activation::kTanh, rng);
    const std::size_t n = 8;
    Tensor m = random_tensor({n, n}, r2, 0, 1);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < i; ++j) m.at(i, j) = m.at(j, i);
    const Tensor h = random_tensor({n, 7}, r2);
    std::vector<std::size_t> p(n);
    std::iota(p.begin(), p.end(), 0);
    std::shuffle(p.begin(), p.end(), r2);
    Tape t;
    const Tensor y = gcn_apply(l, t.constant(m), t.constant(h)).value();
    const Tensor yp =
        gcn_apply(l, t.constant(permute_both(m, p)), t.constant(permute_rows(h, p))).value();
    EXPECT_LT(max_abs_diff(yp, permute_rows(y, p)), 1e-10);
  }
}

TEST(Gcn, MismatchedDimensionsThrow) {
  Rng rng(9);
  const GCNLayer l = GCNLayer::create(3, 2, Activation::kRelu, rng);
  Tape t;
  EXPECT_THROW(gcn_apply(l, t.constant(Tensor({4, 4})), t.constant(Tensor({3, 3}))), ShapeError);
  EXPECT_THROW(gcn_apply(l, t.constant(Tensor({3, 3})), t.constant(Tensor({3, 4}))), ShapeError);
}

TEST(Dense, VectorAndMatrixInput) {
  Rng rng(10);
  DenseLayer l = DenseLayer::create(2, 1, Activation::kLinear, rng);
  l.weight = Tensor::matrix({{2}, {3}});
  l.bias = Tensor::from({1});
  Tape t;
  EXPECT_EQ(dense_apply(l, t.constant(Tensor::from({1, 1}))).value(), Tensor::from({6}));
  EXPECT_EQ(dense_apply(l, t.constant(Tensor::matrix({{1, 0}, {0, 1}}))).value(),
            Tensor::matrix({{3}, {4}}));
}

TEST(Init, GlorotBoundsAndDeterminism) {
  Rng a(11), b(11);
  const Tensor t1 = glorot_uniform({30, 20}, 30, 20, a);
  const Tensor t2 = glorot_uniform({30, 20}, 30, 20, b);
  EXPECT_EQ(t1, t2);
  EXPECT_LE(max_abs(t1), std::sqrt(6.0 / 50.0));
}
