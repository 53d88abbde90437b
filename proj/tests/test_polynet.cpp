#include <gtest/gtest.h>

#include "support.hpp"

using namespace chainz;
using namespace testing_support;

namespace {

PolyNetwork identity_net(std::size_t d, std::size_t depth = 1) {
  PolyNetwork net;
  net.input_dim = d;
  for (std::size_t l = 0; l < depth; ++l)
    net.layers.push_back({Matrix::identity(d), Matrix(1, d), ActivationCoeffs(d)});
  net.head_weights = Matrix::identity(d);
  net.head_bias = Matrix(1, d);
  return net;
}

// Scalar loops written from the layer definition, independent of affine/matmul.
Matrix reference_forward(const PolyNetwork& net, const Matrix& x) {
  Matrix out(x.rows(), net.num_classes());
  for (std::size_t b = 0; b < x.rows(); ++b) {
    std::vector<double> h(x.row(b).begin(), x.row(b).end());
    for (const auto& layer : net.layers) {
      std::vector<double> next(layer.out_width());
      for (std::size_t j = 0; j < next.size(); ++j) {
        double z = layer.bias(0, j);
        for (std::size_t i = 0; i < h.size(); ++i) z += layer.weights(j, i) * h[i];
        const auto& c = layer.coeffs;
        next[j] = c.c0[j] + c.c1[j] * z + c.c2[j] * z * z + c.c3[j] * z * z * z;
      }
      h = next;
    }
    for (std::size_t k = 0; k < out.cols(); ++k) {
      double z = net.head_bias(0, k);
      for (std::size_t i = 0; i < h.size(); ++i) z += net.head_weights(k, i) * h[i];
      out(b, k) = z;
    }
  }
  return out;
}

}  // namespace

TEST(PolyEval, Examples) {
  EXPECT_DOUBLE_EQ(poly_eval(ActivationCoeffs::uniform(1, 0, 1, 0, 0), Matrix{{0.7}})(0, 0), 0.7);
  EXPECT_DOUBLE_EQ(poly_eval(ActivationCoeffs::uniform(1, 1, 2, 3, 4), Matrix{{2}})(0, 0), 49.0);
  EXPECT_DOUBLE_EQ(poly_eval(ActivationCoeffs::uniform(1, 0, 0, 0, 1), Matrix{{-3}})(0, 0), -27.0);
}

TEST(PolyEval, WidthMismatchRejected) {
  EXPECT_THROW(poly_eval(ActivationCoeffs(3), Matrix(2, 2)), ShapeError);
  EXPECT_THROW(poly_deriv(ActivationCoeffs(3), Matrix(2, 2), 1), ShapeError);
}

TEST(PolyDeriv, Examples) {
  EXPECT_DOUBLE_EQ(poly_deriv(ActivationCoeffs::uniform(1, 0, 1, 0, 1), Matrix{{2}}, 1)(0, 0), 13.0);
  EXPECT_DOUBLE_EQ(poly_deriv(ActivationCoeffs::uniform(1, 0, 0, 5, 0), Matrix{{1}}, 2)(0, 0), 10.0);
}

TEST(PolyDeriv, FirstOrderMatchesFiniteDifference) {
  Rng rng(31);
  ActivationCoeffs c(5);
  for (Matrix* m : {&c.c0, &c.c1, &c.c2, &c.c3})
    for (double& v : m->data()) v = rng.normal();
  Matrix z = random_matrix(rng, 4, 5, 2.0);
  const Matrix d = poly_deriv(c, z, 1);
  const double h = 1e-5;
  for (std::size_t i = 0; i < z.size(); ++i) {
    Matrix up = z, down = z;
    up[i] += h;
    down[i] -= h;
    const double fd = (poly_eval(c, up)[i] - poly_eval(c, down)[i]) / (2 * h);
    EXPECT_LE(rel_err(d[i], fd), 1e-7);
  }
}

TEST(ForwardValues, IdentityNetworkReturnsInput) {
  const PolyNetwork net = identity_net(3, 2);
  const Matrix x{{1, -2, 3}, {0.5, 0, -1}};
  EXPECT_EQ(forward_values(net, x).first, x);
}

TEST(ForwardValues, MatchesScalarReference) {
  Rng rng(32);
  const PolyNetwork net = random_poly_net(rng, 4, {6, 5}, 3);
  const Matrix x = random_matrix(rng, 7, 4);
  const Matrix got = forward_values(net, x).first;
  const Matrix want = reference_forward(net, x);
  for (std::size_t i = 0; i < got.size(); ++i) EXPECT_LE(rel_err(got[i], want[i], 1e-12), 1e-12);
}

TEST(ForwardValues, BatchRowsAreIndependent) {
  Rng rng(33);
  const PolyNetwork net = random_poly_net(rng, 3, {4}, 2);
  const Matrix x = random_matrix(rng, 2, 3);
  const Matrix both = forward_values(net, x).first;
  for (std::size_t b = 0; b < 2; ++b) {
    const std::vector<std::size_t> idx{b};
    const Matrix one = forward_values(net, gather_rows(x, idx)).first;
    for (std::size_t k = 0; k < 2; ++k) EXPECT_EQ(one(0, k), both(b, k));
  }
}

TEST(ForwardValues, WrongInputWidthRejected) {
  Rng rng(34);
  const PolyNetwork net = random_poly_net(rng, 3, {4}, 2);
  EXPECT_THROW(forward_values(net, Matrix(2, 4)), ShapeError);
}

TEST(ForwardValues, OverflowNamesLayer) {
  PolyNetwork net = identity_net(2);
  net.layers[0].coeffs = ActivationCoeffs::uniform(2, 0, 0, 0, 1);
  try {
    forward_values(net, Matrix{{1e120, 0}});
    FAIL();
  } catch (const NumericOverflowError& e) {
    EXPECT_NE(std::string(e.what()).find("layer 0"), std::string::npos) << e.what();
  }
}

TEST(ForwardDual, IdentityNetworkHasIdentityJacobians) {
  const PolyNetwork net = identity_net(3, 2);
  const auto [logits, dual] = forward_dual(net, Matrix{{1, 2, 3}});
  for (std::size_t l = 0; l < 2; ++l) EXPECT_EQ(dual.sample_jacobian(l, 0), Matrix::identity(3));
  EXPECT_EQ(dual.sample_head_jacobian(0), Matrix::identity(3));
}

TEST(ForwardDual, SingleCubicNeuronByHand) {
  PolyNetwork net;
  net.input_dim = 1;
  net.layers.push_back({Matrix{{2}}, Matrix(1, 1), ActivationCoeffs::uniform(1, 0, 0, 0, 1)});
  net.head_weights = Matrix{{1}};
  net.head_bias = Matrix(1, 1);
  for (double x : {-1.5, 0.0, 0.3, 2.0}) {
    const auto [logits, dual] = forward_dual(net, Matrix{{x}});
    // z = 2x, phi'(z) = 3z^2, S = 3(2x)^2 * 2
    EXPECT_DOUBLE_EQ(dual.jacobians[0](0, 0), 24 * x * x);
  }
}

TEST(ForwardDual, LogitsEqualValueStream) {
  Rng rng(35);
  const PolyNetwork net = random_poly_net(rng, 5, {7, 4, 6}, 3);
  const Matrix x = random_matrix(rng, 9, 5);
  EXPECT_EQ(forward_dual(net, x).first, forward_values(net, x).first);
}

TEST(ForwardDual, HeadJacobianMatchesFiniteDifferences) {
  Rng rng(36);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t d = 1 + rng.below(8);
    std::vector<std::size_t> widths(1 + rng.below(4));
    for (auto& w : widths) w = 1 + rng.below(16);
    const std::size_t classes = 2 + rng.below(3);
    const PolyNetwork net = random_poly_net(rng, d, widths, classes);
    Matrix x = random_matrix(rng, 3, d);
    const DualState dual = forward_dual(net, x).second;
    const double h = 1e-5;
    for (std::size_t b = 0; b < x.rows(); ++b)
      for (std::size_t k = 0; k < d; ++k) {
        Matrix up = x, down = x;
        up(b, k) += h;
        down(b, k) -= h;
        const Matrix lu = forward_values(net, up).first, ld = forward_values(net, down).first;
        for (std::size_t c = 0; c < classes; ++c) {
          const double fd = (lu(b, c) - ld(b, c)) / (2 * h);
          EXPECT_LE(rel_err(dual.head_jacobian(b * classes + c, k), fd, 1e-4), 1e-6);
        }
      }
  }
}

TEST(ForwardDual, PermutingBatchPermutesJacobians) {
  Rng rng(37);
  const PolyNetwork net = random_poly_net(rng, 3, {4, 4}, 2);
  const Matrix x = random_matrix(rng, 4, 3);
  const std::vector<std::size_t> perm{2, 0, 3, 1};
  const DualState a = forward_dual(net, x).second;
  const DualState b = forward_dual(net, gather_rows(x, perm)).second;
  for (std::size_t i = 0; i < perm.size(); ++i) {
    EXPECT_EQ(b.sample_head_jacobian(i), a.sample_head_jacobian(perm[i]));
    EXPECT_EQ(b.sample_jacobian(1, i), a.sample_jacobian(1, perm[i]));
  }
}

TEST(ForwardDual, MemoryBudgetEnforced) {
  Rng rng(38);
  const PolyNetwork net = random_poly_net(rng, 8, {16, 16}, 2);
  DualOptions opts;
  opts.memory_budget_bytes = 1024;
  EXPECT_THROW(forward_dual(net, Matrix(64, 8), opts), Error);
}

TEST(DregPenalty, IdentityNetwork) {
  const PolyNetwork net = identity_net(3);
  const DualState dual = forward_dual(net, Matrix{{0.1, 0.2, 0.3}}).second;
  EXPECT_DOUBLE_EQ(dreg_penalty(dual, hidden_layer_indices(1)), 3.0);
}

TEST(DregPenalty, ConstantLayerGivesZero) {
  PolyNetwork net = identity_net(3);
  net.layers[0].coeffs = ActivationCoeffs::uniform(3, 0.5, 0, 0, 0);
  const DualState dual = forward_dual(net, Matrix{{1, 2, 3}}).second;
  EXPECT_EQ(dreg_penalty(dual, {0}), 0.0);
}

TEST(DregPenalty, MatchesSumOfSquares) {
  Rng rng(39);
  const PolyNetwork net = random_poly_net(rng, 4, {5, 3}, 2);
  const Matrix x = random_matrix(rng, 6, 4);
  const DualState dual = forward_dual(net, x).second;
  double total = 0.0;
  for (std::size_t l = 0; l < 2; ++l)
    for (std::size_t b = 0; b < 6; ++b) {
      const Matrix s = dual.sample_jacobian(l, b);
      for (double v : s.data()) total += v * v;
    }
  EXPECT_NEAR(dreg_penalty(dual, {0, 1}), total / (6 * 2), 1e-12 * total);
  double head = 0.0;
  for (double v : dual.head_jacobian.data()) head += v * v;
  EXPECT_NEAR(dreg_penalty(dual, {2}), head / 6, 1e-12 * head);
}

TEST(DregPenalty, RejectsBadLayerSets) {
  const PolyNetwork net = identity_net(2);
  const DualState dual = forward_dual(net, Matrix{{1, 2}}).second;
  EXPECT_THROW(dreg_penalty(dual, {}), ArgumentError);
  EXPECT_THROW(dreg_penalty(dual, {5}), ArgumentError);
}

TEST(PolyDeriv, LipschitzOnBoundedRange) {
  // |phi'(z1) - phi'(z2)| <= max|phi''| * |z1 - z2| with |phi''| <= 2|c2| + 6|c3| R on [-R, R].
  const auto c = ActivationCoeffs::uniform(1, 0.1, 0.9, -0.4, 0.2);
  const double R = 3.0, K = 2 * 0.4 + 6 * 0.2 * R;
  Rng rng(40);
  for (int i = 0; i < 1000; ++i) {
    const double z1 = (2 * rng.uniform() - 1) * R, z2 = (2 * rng.uniform() - 1) * R;
    const double g = std::abs(c.d1(0, z1) - c.d1(0, z2));
    EXPECT_LE(g, K * std::abs(z1 - z2) + 1e-12);
  }
}
