#include <gtest/gtest.h>

#include "oracles.hpp"
#include "skillsight/error.hpp"
#include "skillsight/gaze_attention.hpp"

using namespace skillsight;
using ag::Matrix;
using ag::Var;

TEST(GazePatch, Examples) {
  EXPECT_EQ(gaze_patch(Vector2d(0, 0), 14, 16, 224), (GazePatchIndex{0, 0}));
  EXPECT_EQ(gaze_patch(Vector2d(0.999, 0.999), 14, 16, 224), (GazePatchIndex{13, 13}));
  EXPECT_EQ(gaze_patch(Vector2d(0.51, 0.26), 14, 16, 224), (GazePatchIndex{7, 3}));
  EXPECT_EQ(gaze_patch(Vector2d(1.3, -0.2), 8, 8, 64), (GazePatchIndex{7, 0}));
}

TEST(GaussianMap, HandComputedTwoByTwo) {
  const Matrix a = gaussian_map({0, 0}, 2, 1.0);
  const double w0 = 1.0, w1 = std::exp(-0.5), w2 = std::exp(-1.0);
  const double z = w0 + 2 * w1 + w2;
  EXPECT_NEAR(a(0, 0), w0 / z, 1e-12);
  EXPECT_NEAR(a(0, 1), w1 / z, 1e-12);
  EXPECT_NEAR(a(1, 0), w1 / z, 1e-12);
  EXPECT_NEAR(a(1, 1), w2 / z, 1e-12);
  EXPECT_NEAR(a(0, 0), 0.3875, 1e-4);
  EXPECT_NEAR(a(0, 1), 0.2350, 1e-4);
  EXPECT_NEAR(a(1, 1), 0.1425, 1e-4);
}

TEST(GaussianMap, NormalizedPositiveAndFlatLimit) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    const int p = 1 + static_cast<int>(rng() % 16);
    const GazePatchIndex c{static_cast<int>(rng() % p), static_cast<int>(rng() % p)};
    const double sigma = 0.2 + (rng() % 100) / 20.0;
    const Matrix a = gaussian_map(c, p, sigma);
    EXPECT_NEAR(a.sum(), 1.0, 1e-12);
    EXPECT_GT(a.minCoeff(), 0.0);
    const Matrix flat = gaussian_map(c, p, 1e6);
    EXPECT_LT((flat.array() - 1.0 / (p * p)).abs().maxCoeff(), 1e-6);
  }
}

TEST(GaussianMap, SymmetricAtCentre) {
  const Matrix a = gaussian_map({3, 3}, 7, 1.5);
  EXPECT_LT((a - a.rowwise().reverse()).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_LT((a - a.colwise().reverse()).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(GaussianMap, ShiftEquivariantAwayFromBorders) {
  const int p = 31;
  const double sigma = 1.0;
  const Matrix a = gaussian_map({10, 12}, p, sigma);
  const Matrix b = gaussian_map({13, 14}, p, sigma);
  // Both maps are effectively unaffected by the border at this width; compare
  // the translated interior after undoing the (tiny) normalization difference.
  const Matrix ia = a.block(4, 4, 16, 16) / a.block(4, 4, 16, 16).sum();
  const Matrix ib = b.block(6, 7, 16, 16) / b.block(6, 7, 16, 16).sum();
  EXPECT_LT((ia - ib).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(GaussianMap, RejectsBadSigma) {
  EXPECT_THROW(gaussian_map({0, 0}, 4, 0.0), ConfigError);
  EXPECT_THROW(gaussian_map({0, 0}, 4, -1.0), ConfigError);
}

TEST(ModifyAttention, ZeroLambdaIsPlainSoftmax) {
  std::mt19937_64 rng(2);
  const Matrix logits = oracle::random_matrix(5, 16, rng, 3.0);
  const Matrix map = gaussian_map({1, 2}, 4, 1.5);
  const Var out = modify_attention(ag::constant(logits), map, Var::scalar(0.0));
  const Var plain = ag::softmax_rows(ag::constant(logits));
  EXPECT_TRUE(out.value() == plain.value());
}

TEST(ModifyAttention, ZeroLogitsPeakAtGazePatch) {
  const GazePatchIndex c{5, 2};
  const Matrix map = gaussian_map(c, 8, 1.5);
  for (double lambda : {0.1, 1.0, 7.0}) {
    const Var out = modify_attention(ag::constant(Matrix::Zero(3, 64)), map, Var::scalar(lambda));
    for (int r = 0; r < 3; ++r) {
      Eigen::Index arg;
      out.value().row(r).maxCoeff(&arg);
      EXPECT_EQ(arg, c.row * 8 + c.col);
      EXPECT_NEAR(out.value().row(r).sum(), 1.0, 1e-12);
    }
  }
}

TEST(ModifyAttention, GazeMassMonotoneInLambda) {
  std::mt19937_64 rng(3);
  const Matrix logits = oracle::random_matrix(4, 36, rng, 2.0);
  const GazePatchIndex c{2, 4};
  const Matrix map = gaussian_map(c, 6, 1.0);
  Eigen::VectorXd prev = Eigen::VectorXd::Zero(4);
  for (int step = 0; step <= 50; ++step) {
    const Var out = modify_attention(ag::constant(logits), map, Var::scalar(0.1 * step));
    const Eigen::VectorXd mass = out.value().col(c.row * 6 + c.col);
    EXPECT_TRUE((mass.array() >= prev.array() - 1e-15).all());
    prev = mass;
  }
}

TEST(ModifyAttention, LambdaGradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(4);
  const Matrix logits = oracle::random_matrix(6, 25, rng);
  const Matrix map = gaussian_map({1, 3}, 5, 1.2);
  const Matrix w = oracle::random_matrix(6, 25, rng);
  Var lambda = Var::scalar(0.7, true);
  Var x(logits, true);
  auto loss = [&] { return ag::sum(ag::mul(modify_attention(x, map, lambda), ag::constant(w))); };
  EXPECT_LT(oracle::worst_grad_error({lambda, x}, loss), 1e-5);
}

TEST(ModifyAttention, ShapeMismatchNamesDimensions) {
  try {
    modify_attention(ag::constant(Matrix::Zero(2, 10)), gaussian_map({0, 0}, 3, 1.0),
                     Var::scalar(1.0));
    FAIL();
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("10"), std::string::npos);
    EXPECT_NE(msg.find("9"), std::string::npos);
  }
}
