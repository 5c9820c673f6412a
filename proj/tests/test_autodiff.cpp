#include <gtest/gtest.h>

#include "gradcheck.hpp"
#include "hypernst/autodiff.hpp"
#include "hypernst/nn.hpp"
#include "hypernst/rng.hpp"

using namespace hypernst;
using namespace hypernst::ad;
using testutil::gradcheck;

namespace {

// Builds loss(leaf) as a fresh graph, runs backward, returns (value, grad).
std::pair<double, Tensor> eval_with_grad(const Var& leaf,
                                         const std::function<Var()>& build) {
  leaf->grad = Tensor();
  Var loss = build();
  backward(loss);
  return {loss->val.v[0], leaf->grad.empty() ? Tensor(leaf->val.shape)
                                             : leaf->grad};
}

void expect_gradcheck(const Var& leaf, const std::function<Var()>& build,
                      double tol = 1e-6, double floor = 1e-6) {
  auto [value, grad] = eval_with_grad(leaf, build);
  (void)value;
  auto r = gradcheck(leaf, [&] { return build()->val.v[0]; }, grad, 1e-5, floor);
  EXPECT_LT(r.max_rel_err, tol)
      << "worst index " << r.worst_index << " analytic " << r.analytic
      << " numeric " << r.numeric;
}

}  // namespace

TEST(Rng, DeterministicAndSerializable) {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.uniform(), b.uniform());
  std::string state = a.save_state();
  double next = a.normal();
  Rng c(0);
  c.load_state(state);
  EXPECT_EQ(c.normal(), next);
}

TEST(Rng, UniformIntBounds) {
  Rng rng(7);
  for (int i = 0; i < 1000; ++i) {
    auto v = rng.uniform_int(3, 9);
    EXPECT_GE(v, 3);
    EXPECT_LE(v, 9);
  }
}

TEST(Rng, NormalMoments) {
  Rng rng(11);
  const int n = 20000;
  double s = 0, s2 = 0;
  for (int i = 0; i < n; ++i) {
    double x = rng.normal();
    s += x;
    s2 += x * x;
  }
  EXPECT_NEAR(s / n, 0.0, 0.03);
  EXPECT_NEAR(s2 / n, 1.0, 0.05);
}

TEST(Tensor, ReshapeAndHash) {
  Rng rng(0);
  Tensor t = Tensor::randn({3, 4}, rng);
  Tensor r = t.reshaped({4, 3});
  EXPECT_EQ(r.numel(), 12);
  EXPECT_THROW(t.reshaped({5, 3}), ShapeError);
  EXPECT_NE(tensor_hash(t), tensor_hash(r));  // shape participates
  Tensor u = t;
  EXPECT_EQ(tensor_hash(t), tensor_hash(u));
}

TEST(Autodiff, AddMulChain) {
  Rng rng(1);
  Var x = param(Tensor::randn({4, 3}, rng));
  Var c = constant(Tensor::randn({4, 3}, rng));
  expect_gradcheck(x, [&] { return sum(mul(add(x, c), sub(x, c))); });
}

TEST(Autodiff, Activations) {
  Rng rng(2);
  Var x = param(Tensor::randn({20}, rng));
  expect_gradcheck(x, [&] { return sum(lrelu(x)); }, 1e-5);
  expect_gradcheck(x, [&] { return sum(vtanh(x)); });
  expect_gradcheck(x, [&] { return sum(softplus(x)); });
  expect_gradcheck(x, [&] { return sum(sigmoid(x)); });
  expect_gradcheck(x, [&] { return mean(mul(x, sigmoid(x))); });
}

TEST(Autodiff, SqrtRsqrt) {
  Rng rng(3);
  Tensor t = Tensor::randn({10}, rng);
  for (auto& v : t.v) v = std::abs(v) + 0.5;
  Var x = param(t);
  expect_gradcheck(x, [&] { return sum(vsqrt(x)); });
  expect_gradcheck(x, [&] { return sum(rsqrt(x, 1e-8)); });
}

TEST(Autodiff, MatmulAffine) {
  Rng rng(4);
  Var a = param(Tensor::randn({3, 5}, rng));
  Var b = param(Tensor::randn({5, 2}, rng));
  expect_gradcheck(a, [&] { return sum(matmul(a, b)); });
  expect_gradcheck(b, [&] { return mean(matmul(a, b)); });

  Var x = param(Tensor::randn({5}, rng));
  Var w = param(Tensor::randn({4, 5}, rng));
  Var bias = param(Tensor::randn({4}, rng));
  expect_gradcheck(x, [&] { return sum(vtanh(affine(x, w, bias))); });
  expect_gradcheck(w, [&] { return sum(vtanh(affine(x, w, bias))); });
  expect_gradcheck(bias, [&] { return sum(vtanh(affine(x, w, bias))); });
}

TEST(Autodiff, Conv2dMatchesDirectConvolution) {
  Rng rng(5);
  Var x = constant(Tensor::randn({2, 5, 5}, rng));
  Var w = constant(Tensor::randn({3, 2, 3, 3}, rng));
  Var y = conv2d(x, w, 1, 1);
  ASSERT_EQ(y->val.shape, (std::vector<int>{3, 5, 5}));
  // brute-force reference
  for (int o = 0; o < 3; ++o)
    for (int oy = 0; oy < 5; ++oy)
      for (int ox = 0; ox < 5; ++ox) {
        double acc = 0.0;
        for (int c = 0; c < 2; ++c)
          for (int ky = 0; ky < 3; ++ky)
            for (int kx = 0; kx < 3; ++kx) {
              int iy = oy + ky - 1, ix = ox + kx - 1;
              if (iy < 0 || iy >= 5 || ix < 0 || ix >= 5) continue;
              acc += x->val.at(c, iy, ix) * w->val.at(o, c, ky, kx);
            }
        EXPECT_NEAR(y->val.at(o, oy, ox), acc, 1e-12);
      }
}

TEST(Autodiff, Conv2dGradients) {
  Rng rng(6);
  Var x = param(Tensor::randn({2, 6, 6}, rng));
  Var w = param(Tensor::randn({3, 2, 3, 3}, rng));
  auto build_s1 = [&] { return sum(vtanh(conv2d(x, w, 1, 1))); };
  expect_gradcheck(x, build_s1, 1e-5);
  expect_gradcheck(w, build_s1, 1e-5);
  auto build_s2 = [&] { return sum(vtanh(conv2d(x, w, 2, 1))); };
  expect_gradcheck(x, build_s2, 1e-5);
  expect_gradcheck(w, build_s2, 1e-5);
}

TEST(Autodiff, ResamplingGradients) {
  Rng rng(7);
  Var x = param(Tensor::randn({2, 4, 4}, rng));
  expect_gradcheck(x, [&] { return sum(vtanh(upsample2(x))); });
  expect_gradcheck(x, [&] { return sum(vtanh(avgpool2(x))); });
}

TEST(Autodiff, ChannelOps) {
  Rng rng(8);
  Var w = param(Tensor::randn({3, 2, 3, 3}, rng));
  Var vo = param(Tensor::randn({3}, rng));
  Var vi = param(Tensor::randn({2}, rng));
  auto build = [&] {
    Var m = mul_dim1(mul_outer(w, vo), vi);
    Var d = rsqrt(sumsq_outer(m), 1e-8);
    return sum(vtanh(mul_outer(m, d)));
  };
  expect_gradcheck(w, build, 1e-5, 1e-4);
  expect_gradcheck(vo, build, 1e-5, 1e-4);
  expect_gradcheck(vi, build, 1e-5, 1e-4);
}

TEST(Autodiff, BiasConcatSliceCrop) {
  Rng rng(9);
  Var x = param(Tensor::randn({2, 4, 4}, rng));
  Var y = param(Tensor::randn({3, 4, 4}, rng));
  Var b = param(Tensor::randn({2}, rng));
  auto build = [&] {
    Var cat = concat_ch(add_bias_ch(x, b), y);
    Var s = slice_ch(cat, 1, 4);
    Var c = crop(s, 1, 0, 2, 3);
    return mean(mul(c, c));
  };
  expect_gradcheck(x, build);
  expect_gradcheck(y, build);
  expect_gradcheck(b, build);
}

TEST(Autodiff, SliceRowAndConcatScalars) {
  Rng rng(10);
  Var m = param(Tensor::randn({3, 4}, rng));
  auto build = [&] {
    std::vector<Var> parts;
    for (int i = 0; i < 3; ++i) parts.push_back(sum(vtanh(slice_row(m, i))));
    return logsumexp(concat_scalars(parts));
  };
  expect_gradcheck(m, build);
}

TEST(Autodiff, ChMeanAndNormalize) {
  Rng rng(11);
  Var x = param(Tensor::randn({3, 4, 4}, rng));
  expect_gradcheck(x, [&] { return sum(vtanh(ch_mean(x))); });
  expect_gradcheck(x, [&] {
    Var n = unit_normalize_ch(x);
    return mean(mul(n, n));
  }, 1e-6, 1e-4);
  Var y = param(Tensor::randn({3, 4, 4}, rng));
  expect_gradcheck(x, [&] {
    Var d = sub(unit_normalize_ch(x), unit_normalize_ch(constant(y->val)));
    return mean(mul(d, d));
  });
}

TEST(Autodiff, GradAccumulationAcrossBackwards) {
  Rng rng(12);
  Var x = param(Tensor::randn({5}, rng));
  Var l1 = sum(mul(x, x));
  Var l2 = sum(x);
  backward(l1);
  backward(l2);
  for (int i = 0; i < 5; ++i)
    EXPECT_NEAR(x->grad.v[i], 2.0 * x->val.v[i] + 1.0, 1e-12);
}

TEST(Autodiff, DetachBlocksGradient) {
  Rng rng(13);
  Var x = param(Tensor::randn({4}, rng));
  Var loss = sum(mul(detach(x), x));
  backward(loss);
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(x->grad.v[i], x->val.v[i], 1e-12);
}

TEST(Autodiff, NoGradGraphIsLeafless) {
  Rng rng(14);
  Var x = constant(Tensor::randn({4, 4}, rng));
  Var y = vtanh(matmul(x, x));
  EXPECT_FALSE(y->requires_grad);
  EXPECT_TRUE(y->parents.empty());
}

TEST(Autodiff, ShapeErrors) {
  Rng rng(15);
  Var a = param(Tensor::randn({3}, rng));
  Var b = param(Tensor::randn({4}, rng));
  EXPECT_THROW(add(a, b), ShapeError);
  EXPECT_THROW(matmul(reshape(a, {1, 3}), reshape(a, {1, 3})), ShapeError);
  EXPECT_THROW(backward(reshape(a, {3})), ShapeError);  // non-scalar root
}

TEST(Nn, ConvStackShapes) {
  Rng rng(16);
  auto s = nn::ConvStack::create(6, 64, 8, 32, rng);
  Var x = constant(Tensor::randn({6, 64, 64}, rng));
  Var y = s(x);
  EXPECT_EQ(y->val.shape, (std::vector<int>{32, 8, 8}));

  auto tiny = nn::ConvStack::create(3, 4, 4, 8, rng);
  Var t = tiny(constant(Tensor::randn({3, 4, 4}, rng)));
  EXPECT_EQ(t->val.shape, (std::vector<int>{8, 4, 4}));
}

TEST(Nn, ParamHashChangesWithValues) {
  Rng rng(17);
  auto lin = nn::Linear::create_he(4, 3, rng);
  auto p = lin.params("lin");
  auto h0 = nn::param_hash(p);
  lin.w->val.v[0] += 1.0;
  EXPECT_NE(h0, nn::param_hash(p));
}
