#pragma once

// Minimal reverse-mode automatic differentiation over dense row-major double
// matrices. Every tensor in the models is two dimensional (rows = tokens or
// batch items, cols = features), which keeps the op set small.

#include <Eigen/Dense>

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace skillsight::ag {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic, Eigen::RowMajor>;
using Index = Eigen::Index;

struct Node {
  Matrix value;
  Matrix grad;  // empty until the first gradient flows in
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  void accumulate(const Matrix& g);
  template <typename Expr>
  void accumulate_expr(const Expr& g) {
    if (grad.size() == 0) {
      grad = g;
    } else {
      grad += g;
    }
  }
};

class Var {
 public:
  Var() = default;
  explicit Var(Matrix value, bool requires_grad = false);
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Var scalar(double v, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Matrix& value() const { return node_->value; }
  Matrix& mutable_value() { return node_->value; }
  const Matrix& grad() const { return node_->grad; }
  bool has_grad() const { return node_->grad.size() != 0; }
  bool requires_grad() const { return node_->requires_grad; }
  Index rows() const { return node_->value.rows(); }
  Index cols() const { return node_->value.cols(); }
  double item() const;

  // Seeds d(this)/d(this) = 1 and propagates. Requires a 1x1 value.
  void backward() const;
  void zero_grad();

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

// While alive, newly created ops record no graph.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

Var constant(Matrix value);

// Arithmetic.
Var matmul(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);             // elementwise
Var scale(const Var& a, double s);
Var mul_scalar(const Var& a, const Var& s);       // s is 1x1
Var add_row(const Var& a, const Var& row);        // row is 1 x a.cols()

// Nonlinearities.
Var gelu(const Var& a);
Var relu(const Var& a);
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);
Var softmax_rows(const Var& a);

// Reductions and losses.
Var sum(const Var& a);
Var mean(const Var& a);
// Mean over rows of -log softmax(logits)[label].
Var cross_entropy(const Var& logits, std::span<const int> labels);
// mean(|a - b|) over all entries.
Var l1_mean(const Var& a, const Var& b);

// Shape plumbing.
Var concat_cols(std::span<const Var> parts);
Var concat_rows(std::span<const Var> parts);
Var slice_rows(const Var& a, Index start, Index count);
Var slice_cols(const Var& a, Index start, Index count);
Var gather_rows(const Var& a, std::span<const Index> rows);

// Multi-head scaled dot-product attention over row groups. Each group is a
// list of row indices into q/k/v that attend to each other. A row that belongs
// to several groups receives the mean of its outputs; rows in no group get
// zeros. `bias`, when defined, has one row per group and one column per group
// member and is added to the logits of every query row (and every head) of
// that group before the softmax.
Var grouped_attention(const Var& q, const Var& k, const Var& v,
                      const std::vector<std::vector<Index>>& groups, int heads,
                      const Var& bias = Var());

// 2-D convolution on a batch of images stored one per row in CHW order.
// weight: (in_channels*kernel*kernel) x out_channels, bias: 1 x out_channels.
struct ConvGeometry {
  int in_channels = 0;
  int height = 0;
  int width = 0;
  int kernel = 3;
  int stride = 1;
  int pad = 0;
  int out_height() const { return (height + 2 * pad - kernel) / stride + 1; }
  int out_width() const { return (width + 2 * pad - kernel) / stride + 1; }
};
Var conv2d(const Var& x, const Var& weight, const Var& bias, const ConvGeometry& g);

}  // namespace skillsight::ag
