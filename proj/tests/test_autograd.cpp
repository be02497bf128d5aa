#include <gtest/gtest.h>

#include "oracles.hpp"
#include "skillsight/autograd.hpp"
#include "skillsight/nn.hpp"
#include "skillsight/optim.hpp"

namespace ag = skillsight::ag;
using ag::Matrix;
using ag::Var;

namespace {

constexpr double kTol = 1e-6;

Var param(int r, int c, std::mt19937_64& rng, double scale = 1.0) {
  return Var(oracle::random_matrix(r, c, rng, scale), true);
}

// Weighted sum so every output entry affects the loss differently.
Var probe(const Var& out, const Matrix& w) { return ag::sum(ag::mul(out, ag::constant(w))); }

}  // namespace

TEST(Autograd, ElementwiseAndMatmul) {
  std::mt19937_64 rng(1);
  Var a = param(3, 4, rng), b = param(4, 5, rng), c = param(3, 5, rng), r = param(1, 5, rng);
  Var s = param(1, 1, rng);
  const Matrix w = oracle::random_matrix(3, 5, rng);
  auto loss = [&] {
    Var h = ag::add_row(ag::matmul(a, b), r);
    h = ag::sub(ag::mul(h, c), ag::scale(c, 0.3));
    return probe(ag::mul_scalar(h, s), w);
  };
  EXPECT_LT(oracle::worst_grad_error({a, b, c, r, s}, loss), kTol);
}

TEST(Autograd, Nonlinearities) {
  std::mt19937_64 rng(2);
  Var x = param(4, 6, rng);
  Var gamma = param(1, 6, rng), beta = param(1, 6, rng);
  const Matrix w = oracle::random_matrix(4, 6, rng);
  auto loss = [&] {
    Var h = ag::gelu(x);
    h = ag::layer_norm(h, gamma, beta);
    h = ag::softmax_rows(h);
    return ag::add(probe(h, w), ag::mean(ag::relu(ag::add(x, ag::constant(Matrix::Constant(4, 6, 0.05))))));
  };
  EXPECT_LT(oracle::worst_grad_error({x, gamma, beta}, loss), kTol);
}

TEST(Autograd, LossesAndShapes) {
  std::mt19937_64 rng(3);
  Var a = param(4, 3, rng), b = param(4, 2, rng), t = param(4, 5, rng);
  const std::vector<int> labels = {0, 4, 2, 1};
  const std::vector<ag::Index> picks = {3, 0, 3};
  auto loss = [&] {
    std::vector<Var> cols = {a, b};
    Var cat = ag::concat_cols(cols);
    std::vector<Var> rows = {ag::slice_rows(cat, 1, 2), ag::gather_rows(cat, picks)};
    Var stacked = ag::concat_rows(rows);
    Var ce = ag::cross_entropy(cat, labels);
    return ag::add(ag::add(ce, ag::l1_mean(cat, t)), ag::sum(ag::scale(stacked, 0.1)));
  };
  EXPECT_LT(oracle::worst_grad_error({a, b, t}, loss), kTol);
}

TEST(Autograd, CrossEntropyValue) {
  Matrix logits(2, 3);
  logits << 1.0, 2.0, 3.0, 0.0, 0.0, 0.0;
  const std::vector<int> labels = {2, 1};
  const double expect0 = -std::log(std::exp(3.0) / (std::exp(1.0) + std::exp(2.0) + std::exp(3.0)));
  const double expect1 = std::log(3.0);
  EXPECT_NEAR(ag::cross_entropy(ag::constant(logits), labels).item(), 0.5 * (expect0 + expect1),
              1e-12);
}

TEST(Autograd, GroupedAttentionWithBias) {
  std::mt19937_64 rng(4);
  Var q = param(7, 8, rng), k = param(7, 8, rng), v = param(7, 8, rng);
  Var bias = param(3, 4, rng);
  // Row 0 belongs to every group, row 6 to none.
  const std::vector<std::vector<ag::Index>> groups = {{0, 1, 2}, {0, 3, 4, 5}, {0, 2}};
  const Matrix w = oracle::random_matrix(7, 8, rng);
  auto loss = [&] { return probe(ag::grouped_attention(q, k, v, groups, 2, bias), w); };
  EXPECT_LT(oracle::worst_grad_error({q, k, v, bias}, loss), kTol);

  Var out = ag::grouped_attention(q, k, v, groups, 2, bias);
  EXPECT_EQ(out.value().row(6).norm(), 0.0);
}

TEST(Autograd, GroupedAttentionMatchesDenseSoftmax) {
  std::mt19937_64 rng(5);
  const Matrix q = oracle::random_matrix(5, 4, rng);
  const Matrix k = oracle::random_matrix(5, 4, rng);
  const Matrix v = oracle::random_matrix(5, 4, rng);
  Var out = ag::grouped_attention(ag::constant(q), ag::constant(k), ag::constant(v),
                                  {{0, 1, 2, 3, 4}}, 1);
  Matrix scores = q * k.transpose() / 2.0;
  for (int i = 0; i < 5; ++i) {
    scores.row(i) = (scores.row(i).array() - scores.row(i).maxCoeff()).exp();
    scores.row(i) /= scores.row(i).sum();
  }
  EXPECT_LT((out.value() - scores * v).norm(), 1e-12);
}

TEST(Autograd, Conv2d) {
  std::mt19937_64 rng(6);
  const ag::ConvGeometry g{2, 5, 5, 3, 2, 1};
  Var x = param(2, 2 * 25, rng), w = param(2 * 9, 3, rng), b = param(1, 3, rng);
  const Matrix probe_w = oracle::random_matrix(2, 3 * g.out_height() * g.out_width(), rng);
  auto loss = [&] { return probe(ag::conv2d(x, w, b, g), probe_w); };
  EXPECT_LT(oracle::worst_grad_error({x, w, b}, loss), kTol);
}

TEST(Autograd, Conv2dMatchesDirectLoop) {
  std::mt19937_64 rng(7);
  const ag::ConvGeometry g{2, 4, 5, 3, 1, 1};
  const Matrix x = oracle::random_matrix(1, 2 * 20, rng);
  const Matrix w = oracle::random_matrix(2 * 9, 3, rng);
  const Matrix b = oracle::random_matrix(1, 3, rng);
  const Matrix out =
      ag::conv2d(ag::constant(x), ag::constant(w), ag::constant(b), g).value();
  const int oh = g.out_height(), ow = g.out_width();
  for (int co = 0; co < 3; ++co) {
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        double acc = b(0, co);
        for (int ci = 0; ci < 2; ++ci) {
          for (int ky = 0; ky < 3; ++ky) {
            for (int kx = 0; kx < 3; ++kx) {
              const int iy = oy - 1 + ky, ix = ox - 1 + kx;
              if (iy < 0 || iy >= 4 || ix < 0 || ix >= 5) continue;
              acc += x(0, ci * 20 + iy * 5 + ix) * w(ci * 9 + ky * 3 + kx, co);
            }
          }
        }
        EXPECT_NEAR(out(0, co * oh * ow + oy * ow + ox), acc, 1e-12);
      }
    }
  }
}

TEST(Autograd, NoGradGuardRecordsNothing) {
  Var a(Matrix::Ones(2, 2), true);
  Var y;
  {
    ag::NoGradGuard guard;
    y = ag::sum(ag::scale(a, 2.0));
  }
  EXPECT_FALSE(y.requires_grad());
  EXPECT_EQ(y.item(), 8.0);
}

TEST(Autograd, SequenceEncoderGradient) {
  skillsight::nn::Rng rng(8);
  skillsight::nn::ParamStore store;
  skillsight::nn::SequenceEncoder enc(store, "enc", {2, 2, 8, 2}, 5, rng);
  std::mt19937_64 drng(9);
  Var x(oracle::random_matrix(5, 8, drng), true);
  const Matrix w = oracle::random_matrix(5, 8, drng);
  auto loss = [&] { return probe(enc(x), w); };
  std::vector<Var> params = store.vars();
  params.push_back(x);
  EXPECT_LT(oracle::worst_grad_error(params, loss), 1e-5);
}

TEST(Optim, AdamWFirstStep) {
  Var p(Matrix::Constant(1, 2, 1.0), true);
  skillsight::optim::AdamW opt({p}, 0.1, 0.01);
  ag::sum(ag::mul(p, ag::constant((Matrix(1, 2) << 2.0, -3.0).finished()))).backward();
  opt.step();
  // First Adam step moves each coordinate by lr * sign(grad), plus decay.
  EXPECT_NEAR(p.value()(0, 0), 1.0 - 0.1 * 0.01 - 0.1, 1e-6);
  EXPECT_NEAR(p.value()(0, 1), 1.0 - 0.1 * 0.01 + 0.1, 1e-6);
}

TEST(Optim, SgdMomentum) {
  Var p(Matrix::Constant(1, 1, 0.0), true);
  skillsight::optim::Sgd opt({p}, 0.5, 0.9);
  for (int i = 0; i < 2; ++i) {
    p.zero_grad();
    ag::sum(p).backward();  // gradient 1
    opt.step();
  }
  EXPECT_NEAR(p.value()(0, 0), -0.5 - 0.5 * 1.9, 1e-12);
}
