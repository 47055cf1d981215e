#include <gtest/gtest.h>

#include <random>

#include "factgen/autograd.hpp"
#include "factgen/parameters.hpp"
#include "support.hpp"

using namespace factgen;

namespace {

// Builds a scalar from x through one op chain and checks every entry of x by
// central differences.
void check_op(const std::function<Var(Graph&, Var)>& build, Eigen::Index rows, Eigen::Index cols,
              std::uint64_t seed = 1) {
  Parameter x{"x", ParamGroup::decoder, Matrix(rows, cols), Matrix()};
  NormalSampler init(seed);
  init.fill(x.value, 1.0);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  // Scalar head sum_ij w_ij * y_ij with fixed random w.
  auto forward = [&](Graph& g) {
    Var y = build(g, g.param(x));
    std::mt19937_64 rng(seed + 200);
    std::vector<Var> parts;
    std::vector<double> coef;
    for (Eigen::Index i = 0; i < y.rows(); ++i)
      for (Eigen::Index j = 0; j < y.cols(); ++j) {
        parts.push_back(ops::slice_cols(ops::slice_rows(y, i, 1), j, 1));
        coef.push_back(u(rng));
      }
    return ops::weighted_sum(parts, coef);
  };
  x.zero_grad();
  {
    Graph g;
    g.backward(forward(g));
  }
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) {
      double n = support::numeric_grad(x, r, c, [&] {
        Graph g;
        return forward(g).scalar();
      });
      EXPECT_LT(support::relative_error(x.grad(r, c), n), 1e-6) << "entry " << r << "," << c;
    }
}

}  // namespace

TEST(Autograd, SoftmaxRows) { check_op([](Graph&, Var x) { return ops::softmax_rows(x); }, 3, 4); }

TEST(Autograd, Gelu) { check_op([](Graph&, Var x) { return ops::gelu(x); }, 2, 5); }

TEST(Autograd, LayerNorm) {
  Matrix gamma = Matrix::Constant(1, 4, 1.3), beta = Matrix::Constant(1, 4, -0.2);
  check_op([&](Graph& g, Var x) { return ops::layer_norm(x, g.constant(gamma), g.constant(beta)); }, 3, 4);
}

TEST(Autograd, MatmulAndTranspose) {
  Matrix b(4, 3);
  b << 1, 2, 0, -1, 0.5, 3, 2, 2, -2, 0, 1, 1;
  check_op([&](Graph& g, Var x) { return ops::matmul(x, g.constant(b)); }, 2, 4);
  check_op([&](Graph& g, Var x) { return ops::matmul_nt(x, x); }, 3, 2);
}

TEST(Autograd, GatherWithDuplicates) {
  std::vector<int> ids{2, 0, 2, 1};
  check_op([&](Graph&, Var x) { return ops::gather_rows(x, ids); }, 3, 2);
}

TEST(Autograd, ConcatSliceMean) {
  check_op(
      [](Graph&, Var x) {
        std::vector<Var> parts{ops::slice_rows(x, 1, 2), x};
        return ops::mean_rows(ops::concat_rows(parts));
      },
      3, 3);
  check_op(
      [](Graph&, Var x) {
        std::vector<Var> parts{x, ops::slice_cols(x, 0, 1)};
        return ops::concat_cols(parts);
      },
      2, 3);
}

TEST(Autograd, CrossEntropySkipsNegativeTargets) {
  std::vector<int> t{1, -1, 0};
  check_op([&](Graph&, Var x) { return ops::cross_entropy_sum(x, t); }, 3, 3);
  Graph g;
  Matrix logits(2, 2);
  logits << 0.0, 0.0, 1.0, 1.0;
  std::vector<int> t2{0, -1};
  EXPECT_NEAR(ops::cross_entropy_sum(g.constant(logits), t2).scalar(), std::log(2.0), 1e-15);
}

TEST(Autograd, GradientsAccumulateAcrossGraphs) {
  Parameter p{"p", ParamGroup::decoder, Matrix::Constant(1, 1, 3.0), Matrix()};
  p.zero_grad();
  for (int i = 0; i < 2; ++i) {
    Graph g;
    Var v = g.param(p);
    g.backward(ops::matmul(v, v));
  }
  EXPECT_DOUBLE_EQ(p.grad(0, 0), 12.0);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  // With bias correction the first update is lr * g / (|g| + eps).
  Parameter p{"p", ParamGroup::decoder, Matrix::Constant(1, 2, 1.0), Matrix()};
  p.grad = Matrix(1, 2);
  p.grad << 0.5, -4.0;
  Adam adam;
  adam.add_group("decoder", 0.01, {&p});
  adam.step();
  EXPECT_NEAR(p.value(0, 0), 1.0 - 0.01, 1e-9);
  EXPECT_NEAR(p.value(0, 1), 1.0 + 0.01, 1e-9);
  EXPECT_EQ(adam.steps(), 1);
}

TEST(Adam, ClipRescalesGlobalNorm) {
  Parameter a{"a", ParamGroup::decoder, Matrix::Zero(1, 1), Matrix::Constant(1, 1, 3.0)};
  Parameter b{"b", ParamGroup::encoder, Matrix::Zero(1, 1), Matrix::Constant(1, 1, 4.0)};
  std::vector<Parameter*> ps{&a, &b};
  EXPECT_DOUBLE_EQ(clip_grad_norm(ps, 1.0), 5.0);
  EXPECT_NEAR(a.grad(0, 0), 0.6, 1e-15);
  EXPECT_NEAR(b.grad(0, 0), 0.8, 1e-15);
  EXPECT_DOUBLE_EQ(clip_grad_norm(ps, 1.0), 1.0);
  EXPECT_NEAR(a.grad(0, 0), 0.6, 1e-15);
}
