#include "skillsight/autograd.hpp"

#include <cmath>
#include <sstream>
#include <unordered_set>
#include <utility>

#include "skillsight/error.hpp"

namespace skillsight::ag {
namespace {

thread_local bool g_grad_enabled = true;

std::string dims(const Matrix& m) {
  std::ostringstream os;
  os << m.rows() << "x" << m.cols();
  return os.str();
}

void require_same_shape(const char* op, const Var& a, const Var& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + dims(a.value()) + " vs " +
                     dims(b.value()));
  }
}

using Parents = std::vector<std::shared_ptr<Node>>;

Var make_op(Matrix value, Parents parents, std::function<void(Node&)> fn) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  if (g_grad_enabled) {
    bool any = false;
    for (const auto& p : parents) any = any || p->requires_grad;
    if (any) {
      node->requires_grad = true;
      node->parents = std::move(parents);
      node->backward_fn = std::move(fn);
    }
  }
  return Var(std::move(node));
}

}  // namespace

void Node::accumulate(const Matrix& g) { accumulate_expr(g); }

Var::Var(Matrix value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

Var Var::scalar(double v, bool requires_grad) {
  Matrix m(1, 1);
  m(0, 0) = v;
  return Var(std::move(m), requires_grad);
}

double Var::item() const {
  if (rows() != 1 || cols() != 1) throw ShapeError("item() on non-scalar " + dims(value()));
  return value()(0, 0);
}

void Var::zero_grad() { node_->grad.resize(0, 0); }

void Var::backward() const {
  if (rows() != 1 || cols() != 1) throw ShapeError("backward() needs a 1x1 value");
  if (!node_->requires_grad) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node* p = n->parents[next++].get();
      if (p->requires_grad && !visited.contains(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  node_->accumulate(Matrix::Ones(1, 1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn && n->grad.size() != 0) n->backward_fn(*n);
  }
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_enabled() { return g_grad_enabled; }

Var constant(Matrix value) { return Var(std::move(value), false); }

Var matmul(const Var& a, const Var& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: inner dimensions differ " + dims(a.value()) + " * " +
                     dims(b.value()));
  }
  Matrix out = a.value() * b.value();
  Node* pa = a.node().get();
  Node* pb = b.node().get();
  return make_op(std::move(out), {a.node(), b.node()}, [pa, pb](Node& self) {
    if (pa->requires_grad) pa->accumulate_expr(self.grad * pb->value.transpose());
    if (pb->requires_grad) pb->accumulate_expr(pa->value.transpose() * self.grad);
  });
}

Var add(const Var& a, const Var& b) {
  require_same_shape("add", a, b);
  Node* pa = a.node().get();
  Node* pb = b.node().get();
  return make_op(a.value() + b.value(), {a.node(), b.node()}, [pa, pb](Node& self) {
    if (pa->requires_grad) pa->accumulate(self.grad);
    if (pb->requires_grad) pb->accumulate(self.grad);
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape("sub", a, b);
  Node* pa = a.node().get();
  Node* pb = b.node().get();
  return make_op(a.value() - b.value(), {a.node(), b.node()}, [pa, pb](Node& self) {
    if (pa->requires_grad) pa->accumulate(self.grad);
    if (pb->requires_grad) pb->accumulate_expr(-self.grad);
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape("mul", a, b);
  Node* pa = a.node().get();
  Node* pb = b.node().get();
  return make_op(a.value().cwiseProduct(b.value()), {a.node(), b.node()}, [pa, pb](Node& self) {
    if (pa->requires_grad) pa->accumulate_expr(self.grad.cwiseProduct(pb->value));
    if (pb->requires_grad) pb->accumulate_expr(self.grad.cwiseProduct(pa->value));
  });
}

Var scale(const Var& a, double s) {
  Node* pa = a.node().get();
  return make_op(a.value() * s, {a.node()}, [pa, s](Node& self) {
    pa->accumulate_expr(self.grad * s);
  });
}

Var mul_scalar(const Var& a, const Var& s) {
  if (s.rows() != 1 || s.cols() != 1) throw ShapeError("mul_scalar: scalar must be 1x1");
  Node* pa = a.node().get();
  Node* ps = s.node().get();
  return make_op(a.value() * s.value()(0, 0), {a.node(), s.node()}, [pa, ps](Node& self) {
    if (pa->requires_grad) pa->accumulate_expr(self.grad * ps->value(0, 0));
    if (ps->requires_grad) {
      Matrix g(1, 1);
      g(0, 0) = self.grad.cwiseProduct(pa->value).sum();
      ps->accumulate(g);
    }
  });
}

Var add_row(const Var& a, const Var& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) {
    throw ShapeError("add_row: expected 1x" + std::to_string(a.cols()) + " row, got " +
                     dims(row.value()));
  }
  Matrix out = a.value();
  out.rowwise() += row.value().row(0);
  Node* pa = a.node().get();
  Node* pr = row.node().get();
  return make_op(std::move(out), {a.node(), row.node()}, [pa, pr](Node& self) {
    if (pa->requires_grad) pa->accumulate(self.grad);
    if (pr->requires_grad) pr->accumulate_expr(self.grad.colwise().sum());
  });
}

Var gelu(const Var& a) {
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  Matrix out = a.value().unaryExpr(
      [](double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); });
  Node* pa = a.node().get();
  return make_op(std::move(out), {a.node()}, [pa](Node& self) {
    constexpr double kInvSqrt2Pi = 0.39894228040143267794;
    Matrix d = pa->value.unaryExpr([](double x) {
      return 0.5 * (1.0 + std::erf(x * kInvSqrt2)) + x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
    });
    pa->accumulate_expr(self.grad.cwiseProduct(d));
  });
}

Var relu(const Var& a) {
  Node* pa = a.node().get();
  return make_op(a.value().cwiseMax(0.0), {a.node()}, [pa](Node& self) {
    Matrix mask = (pa->value.array() > 0.0).cast<double>().matrix();
    pa->accumulate_expr(self.grad.cwiseProduct(mask));
  });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
  const Index n = x.rows();
  const Index d = x.cols();
  if (gamma.rows() != 1 || gamma.cols() != d || beta.rows() != 1 || beta.cols() != d) {
    throw ShapeError("layer_norm: gamma/beta must be 1x" + std::to_string(d));
  }
  auto xhat = std::make_shared<Matrix>(n, d);
  auto inv_std = std::make_shared<Eigen::VectorXd>(n);
  for (Index i = 0; i < n; ++i) {
    const double mu = x.value().row(i).mean();
    const double var = (x.value().row(i).array() - mu).square().mean();
    (*inv_std)(i) = 1.0 / std::sqrt(var + eps);
    xhat->row(i) = (x.value().row(i).array() - mu) * (*inv_std)(i);
  }
  Matrix out = *xhat;
  for (Index i = 0; i < n; ++i) {
    out.row(i) = out.row(i).cwiseProduct(gamma.value().row(0)) + beta.value().row(0);
  }
  Node* px = x.node().get();
  Node* pg = gamma.node().get();
  Node* pb = beta.node().get();
  return make_op(std::move(out), {x.node(), gamma.node(), beta.node()},
                 [px, pg, pb, xhat, inv_std, d](Node& self) {
                   if (pg->requires_grad) {
                     pg->accumulate_expr(self.grad.cwiseProduct(*xhat).colwise().sum());
                   }
                   if (pb->requires_grad) pb->accumulate_expr(self.grad.colwise().sum());
                   if (px->requires_grad) {
                     Matrix dx(self.grad.rows(), d);
                     for (Index i = 0; i < self.grad.rows(); ++i) {
                       RowVector dxhat = self.grad.row(i).cwiseProduct(pg->value.row(0));
                       const double s1 = dxhat.sum();
                       const double s2 = dxhat.cwiseProduct(xhat->row(i)).sum();
                       dx.row(i) = ((*inv_std)(i) / static_cast<double>(d)) *
                                   (static_cast<double>(d) * dxhat.array() - s1 -
                                    xhat->row(i).array() * s2)
                                       .matrix();
                     }
                     px->accumulate(dx);
                   }
                 });
}

namespace {
void softmax_rows_inplace(Matrix& m) {
  for (Index i = 0; i < m.rows(); ++i) {
    const double mx = m.row(i).maxCoeff();
    m.row(i) = (m.row(i).array() - mx).exp();
    m.row(i) /= m.row(i).sum();
  }
}
}  // namespace

Var softmax_rows(const Var& a) {
  auto y = std::make_shared<Matrix>(a.value());
  softmax_rows_inplace(*y);
  Node* pa = a.node().get();
  Matrix out = *y;
  return make_op(std::move(out), {a.node()}, [pa, y](Node& self) {
    Matrix gy = self.grad.cwiseProduct(*y);
    Eigen::VectorXd s = gy.rowwise().sum();
    Matrix dx = gy;
    for (Index i = 0; i < dx.rows(); ++i) dx.row(i) -= s(i) * y->row(i);
    pa->accumulate(dx);
  });
}

Var sum(const Var& a) {
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  Node* pa = a.node().get();
  return make_op(std::move(out), {a.node()}, [pa](Node& self) {
    pa->accumulate(Matrix::Constant(pa->value.rows(), pa->value.cols(), self.grad(0, 0)));
  });
}

Var mean(const Var& a) {
  const double n = static_cast<double>(a.value().size());
  Matrix out(1, 1);
  out(0, 0) = a.value().sum() / n;
  Node* pa = a.node().get();
  return make_op(std::move(out), {a.node()}, [pa, n](Node& self) {
    pa->accumulate(Matrix::Constant(pa->value.rows(), pa->value.cols(), self.grad(0, 0) / n));
  });
}

Var cross_entropy(const Var& logits, std::span<const int> labels) {
  const Index b = logits.rows();
  const Index k = logits.cols();
  if (static_cast<Index>(labels.size()) != b) {
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(b) + " rows");
  }
  auto probs = std::make_shared<Matrix>(logits.value());
  softmax_rows_inplace(*probs);
  double loss = 0.0;
  std::vector<int> lab(labels.begin(), labels.end());
  for (Index i = 0; i < b; ++i) {
    if (lab[i] < 0 || lab[i] >= k) {
      throw ShapeError("cross_entropy: label " + std::to_string(lab[i]) + " outside [0," +
                       std::to_string(k) + ")");
    }
    const double mx = logits.value().row(i).maxCoeff();
    const double lse = mx + std::log((logits.value().row(i).array() - mx).exp().sum());
    loss += lse - logits.value()(i, lab[i]);
  }
  Matrix out(1, 1);
  out(0, 0) = loss / static_cast<double>(b);
  Node* pl = logits.node().get();
  return make_op(std::move(out), {logits.node()}, [pl, probs, lab, b](Node& self) {
    Matrix g = *probs;
    for (Index i = 0; i < b; ++i) g(i, lab[i]) -= 1.0;
    g *= self.grad(0, 0) / static_cast<double>(b);
    pl->accumulate(g);
  });
}

Var l1_mean(const Var& a, const Var& b) {
  require_same_shape("l1_mean", a, b);
  const double n = static_cast<double>(a.value().size());
  Matrix diff = a.value() - b.value();
  Matrix out(1, 1);
  out(0, 0) = diff.cwiseAbs().sum() / n;
  auto sign = std::make_shared<Matrix>(
      diff.unaryExpr([](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }));
  Node* pa = a.node().get();
  Node* pb = b.node().get();
  return make_op(std::move(out), {a.node(), b.node()}, [pa, pb, sign, n](Node& self) {
    const double s = self.grad(0, 0) / n;
    if (pa->requires_grad) pa->accumulate_expr(*sign * s);
    if (pb->requires_grad) pb->accumulate_expr(*sign * -s);
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const Index rows = parts[0].rows();
  Index total = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows) throw ShapeError("concat_cols: row count mismatch");
    total += p.cols();
  }
  Matrix out(rows, total);
  Parents parents;
  std::vector<std::pair<Node*, Index>> offsets;
  Index c = 0;
  for (const auto& p : parts) {
    out.middleCols(c, p.cols()) = p.value();
    parents.push_back(p.node());
    offsets.emplace_back(p.node().get(), c);
    c += p.cols();
  }
  return make_op(std::move(out), std::move(parents), [offsets](Node& self) {
    for (auto [n, off] : offsets) {
      if (n->requires_grad) n->accumulate_expr(self.grad.middleCols(off, n->value.cols()));
    }
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const Index cols = parts[0].cols();
  Index total = 0;
  for (const auto& p : parts) {
    if (p.cols() != cols) throw ShapeError("concat_rows: column count mismatch");
    total += p.rows();
  }
  Matrix out(total, cols);
  Parents parents;
  std::vector<std::pair<Node*, Index>> offsets;
  Index r = 0;
  for (const auto& p : parts) {
    out.middleRows(r, p.rows()) = p.value();
    parents.push_back(p.node());
    offsets.emplace_back(p.node().get(), r);
    r += p.rows();
  }
  return make_op(std::move(out), std::move(parents), [offsets](Node& self) {
    for (auto [n, off] : offsets) {
      if (n->requires_grad) n->accumulate_expr(self.grad.middleRows(off, n->value.rows()));
    }
  });
}

Var slice_rows(const Var& a, Index start, Index count) {
  if (start < 0 || count < 0 || start + count > a.rows()) {
    throw ShapeError("slice_rows: [" + std::to_string(start) + "," +
                     std::to_string(start + count) + ") outside " + dims(a.value()));
  }
  Node* pa = a.node().get();
  return make_op(a.value().middleRows(start, count), {a.node()}, [pa, start, count](Node& self) {
    Matrix g = Matrix::Zero(pa->value.rows(), pa->value.cols());
    g.middleRows(start, count) = self.grad;
    pa->accumulate(g);
  });
}

Var slice_cols(const Var& a, Index start, Index count) {
  if (start < 0 || count < 0 || start + count > a.cols()) {
    throw ShapeError("slice_cols: [" + std::to_string(start) + "," +
                     std::to_string(start + count) + ") outside " + dims(a.value()));
  }
  Node* pa = a.node().get();
  return make_op(a.value().middleCols(start, count), {a.node()}, [pa, start, count](Node& self) {
    Matrix g = Matrix::Zero(pa->value.rows(), pa->value.cols());
    g.middleCols(start, count) = self.grad;
    pa->accumulate(g);
  });
}

Var gather_rows(const Var& a, std::span<const Index> rows) {
  std::vector<Index> idx(rows.begin(), rows.end());
  Matrix out(static_cast<Index>(idx.size()), a.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= a.rows()) throw ShapeError("gather_rows: index out of range");
    out.row(static_cast<Index>(i)) = a.value().row(idx[i]);
  }
  Node* pa = a.node().get();
  return make_op(std::move(out), {a.node()}, [pa, idx](Node& self) {
    Matrix g = Matrix::Zero(pa->value.rows(), pa->value.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) g.row(idx[i]) += self.grad.row(static_cast<Index>(i));
    pa->accumulate(g);
  });
}

Var grouped_attention(const Var& q, const Var& k, const Var& v,
                      const std::vector<std::vector<Index>>& groups, int heads,
                      const Var& bias) {
  require_same_shape("grouped_attention(q,k)", q, k);
  require_same_shape("grouped_attention(q,v)", q, v);
  const Index n = q.rows();
  const Index d = q.cols();
  if (heads <= 0 || d % heads != 0) {
    throw ShapeError("grouped_attention: width " + std::to_string(d) +
                     " not divisible by heads " + std::to_string(heads));
  }
  const Index dh = d / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  const bool has_bias = bias.defined();
  if (has_bias && bias.rows() != static_cast<Index>(groups.size())) {
    throw ShapeError("grouped_attention: bias has " + std::to_string(bias.rows()) +
                     " rows for " + std::to_string(groups.size()) + " groups");
  }

  Eigen::VectorXd count = Eigen::VectorXd::Zero(n);
  for (const auto& g : groups) {
    if (has_bias && static_cast<Index>(g.size()) > bias.cols()) {
      throw ShapeError("grouped_attention: bias narrower than group (" +
                       std::to_string(bias.cols()) + " < " + std::to_string(g.size()) + ")");
    }
    for (Index r : g) {
      if (r < 0 || r >= n) throw ShapeError("grouped_attention: row index out of range");
      count(r) += 1.0;
    }
  }

  auto probs = std::make_shared<std::vector<Matrix>>();
  probs->reserve(groups.size() * heads);
  Matrix out = Matrix::Zero(n, d);
  for (std::size_t gi = 0; gi < groups.size(); ++gi) {
    const auto& g = groups[gi];
    const Index m = static_cast<Index>(g.size());
    Matrix qg(m, d), kg(m, d), vg(m, d);
    for (Index i = 0; i < m; ++i) {
      qg.row(i) = q.value().row(g[i]);
      kg.row(i) = k.value().row(g[i]);
      vg.row(i) = v.value().row(g[i]);
    }
    Matrix og(m, d);
    for (int h = 0; h < heads; ++h) {
      Matrix s = (qg.middleCols(h * dh, dh) * kg.middleCols(h * dh, dh).transpose()) * inv_sqrt;
      if (has_bias) s.rowwise() += bias.value().row(static_cast<Index>(gi)).head(m);
      softmax_rows_inplace(s);
      og.middleCols(h * dh, dh).noalias() = s * vg.middleCols(h * dh, dh);
      probs->push_back(std::move(s));
    }
    for (Index i = 0; i < m; ++i) out.row(g[i]) += og.row(i) / count(g[i]);
  }

  Parents parents{q.node(), k.node(), v.node()};
  if (has_bias) parents.push_back(bias.node());
  Node* pq = q.node().get();
  Node* pk = k.node().get();
  Node* pv = v.node().get();
  Node* pbias = has_bias ? bias.node().get() : nullptr;
  return make_op(std::move(out), std::move(parents),
                 [pq, pk, pv, pbias, groups, heads, dh, inv_sqrt, probs, count, d](Node& self) {
                   const Index nrows = pq->value.rows();
                   Matrix dq = Matrix::Zero(nrows, d);
                   Matrix dk = Matrix::Zero(nrows, d);
                   Matrix dv = Matrix::Zero(nrows, d);
                   Matrix dbias;
                   if (pbias) dbias = Matrix::Zero(pbias->value.rows(), pbias->value.cols());
                   std::size_t pi = 0;
                   for (std::size_t gi = 0; gi < groups.size(); ++gi) {
                     const auto& g = groups[gi];
                     const Index m = static_cast<Index>(g.size());
                     Matrix qg(m, d), kg(m, d), vg(m, d), dog(m, d);
                     for (Index i = 0; i < m; ++i) {
                       qg.row(i) = pq->value.row(g[i]);
                       kg.row(i) = pk->value.row(g[i]);
                       vg.row(i) = pv->value.row(g[i]);
                       dog.row(i) = self.grad.row(g[i]) / count(g[i]);
                     }
                     Matrix dqg(m, d), dkg(m, d), dvg(m, d);
                     for (int h = 0; h < heads; ++h) {
                       const Matrix& p = (*probs)[pi++];
                       auto doh = dog.middleCols(h * dh, dh);
                       dvg.middleCols(h * dh, dh).noalias() = p.transpose() * doh;
                       Matrix dp = doh * vg.middleCols(h * dh, dh).transpose();
                       Matrix ds = p.cwiseProduct(dp);
                       Eigen::VectorXd rs = ds.rowwise().sum();
                       for (Index i = 0; i < m; ++i) ds.row(i) -= rs(i) * p.row(i);
                       if (pbias) dbias.row(static_cast<Index>(gi)).head(m) += ds.colwise().sum();
                       dqg.middleCols(h * dh, dh).noalias() =
                           (ds * kg.middleCols(h * dh, dh)) * inv_sqrt;
                       dkg.middleCols(h * dh, dh).noalias() =
                           (ds.transpose() * qg.middleCols(h * dh, dh)) * inv_sqrt;
                     }
                     for (Index i = 0; i < m; ++i) {
                       dq.row(g[i]) += dqg.row(i);
                       dk.row(g[i]) += dkg.row(i);
                       dv.row(g[i]) += dvg.row(i);
                     }
                   }
                   if (pq->requires_grad) pq->accumulate(dq);
                   if (pk->requires_grad) pk->accumulate(dk);
                   if (pv->requires_grad) pv->accumulate(dv);
                   if (pbias && pbias->requires_grad) pbias->accumulate(dbias);
                 });
}

namespace {

// Unfolds one CHW image into (out_h*out_w) x (C*k*k) patches.
Matrix im2col(const double* img, const ConvGeometry& g) {
  const int oh = g.out_height();
  const int ow = g.out_width();
  Matrix cols = Matrix::Zero(oh * ow, g.in_channels * g.kernel * g.kernel);
  for (int oy = 0; oy < oh; ++oy) {
    for (int ox = 0; ox < ow; ++ox) {
      const Index r = oy * ow + ox;
      for (int c = 0; c < g.in_channels; ++c) {
        for (int ky = 0; ky < g.kernel; ++ky) {
          const int iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= g.height) continue;
          for (int kx = 0; kx < g.kernel; ++kx) {
            const int ix = ox * g.stride - g.pad + kx;
            if (ix < 0 || ix >= g.width) continue;
            cols(r, (c * g.kernel + ky) * g.kernel + kx) =
                img[(c * g.height + iy) * g.width + ix];
          }
        }
      }
    }
  }
  return cols;
}

void col2im_add(const Matrix& cols, const ConvGeometry& g, double* img) {
  const int oh = g.out_height();
  const int ow = g.out_width();
  for (int oy = 0; oy < oh; ++oy) {
    for (int ox = 0; ox < ow; ++ox) {
      const Index r = oy * ow + ox;
      for (int c = 0; c < g.in_channels; ++c) {
        for (int ky = 0; ky < g.kernel; ++ky) {
          const int iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= g.height) continue;
          for (int kx = 0; kx < g.kernel; ++kx) {
            const int ix = ox * g.stride - g.pad + kx;
            if (ix < 0 || ix >= g.width) continue;
            img[(c * g.height + iy) * g.width + ix] += cols(r, (c * g.kernel + ky) * g.kernel + kx);
          }
        }
      }
    }
  }
}

}  // namespace

Var conv2d(const Var& x, const Var& weight, const Var& bias, const ConvGeometry& g) {
  const Index in_size = static_cast<Index>(g.in_channels) * g.height * g.width;
  if (x.cols() != in_size) {
    throw ShapeError("conv2d: input has " + std::to_string(x.cols()) + " values per image, expected " +
                     std::to_string(in_size));
  }
  const Index patch = static_cast<Index>(g.in_channels) * g.kernel * g.kernel;
  if (weight.rows() != patch) {
    throw ShapeError("conv2d: weight rows " + std::to_string(weight.rows()) + " != " +
                     std::to_string(patch));
  }
  const Index cout = weight.cols();
  if (bias.rows() != 1 || bias.cols() != cout) throw ShapeError("conv2d: bias shape");
  const int oh = g.out_height();
  const int ow = g.out_width();
  const Index b = x.rows();
  auto cols_cache = std::make_shared<std::vector<Matrix>>();
  cols_cache->reserve(b);
  Matrix out(b, cout * oh * ow);
  for (Index i = 0; i < b; ++i) {
    Matrix cols = im2col(x.value().row(i).data(), g);
    Matrix y = cols * weight.value();
    y.rowwise() += bias.value().row(0);
    // (HW x C) -> CHW
    Matrix yt = y.transpose();
    out.row(i) = Eigen::Map<const RowVector>(yt.data(), yt.size());
    cols_cache->push_back(std::move(cols));
  }
  Node* px = x.node().get();
  Node* pw = weight.node().get();
  Node* pb = bias.node().get();
  return make_op(std::move(out), {x.node(), weight.node(), bias.node()},
                 [px, pw, pb, cols_cache, g, oh, ow, cout](Node& self) {
                   const Index bsz = self.grad.rows();
                   Matrix dw = Matrix::Zero(pw->value.rows(), pw->value.cols());
                   Matrix db = Matrix::Zero(1, cout);
                   Matrix dx;
                   if (px->requires_grad) dx = Matrix::Zero(px->value.rows(), px->value.cols());
                   for (Index i = 0; i < bsz; ++i) {
                     Eigen::Map<const Matrix> gy_chw(self.grad.row(i).data(), cout,
                                                     static_cast<Index>(oh) * ow);
                     Matrix gy = gy_chw.transpose();  // HW x C
                     dw.noalias() += (*cols_cache)[i].transpose() * gy;
                     db += gy.colwise().sum();
                     if (px->requires_grad) {
                       Matrix dcols = gy * pw->value.transpose();
                       col2im_add(dcols, g, dx.row(i).data());
                     }
                   }
                   if (pw->requires_grad) pw->accumulate(dw);
                   if (pb->requires_grad) pb->accumulate(db);
                   if (px->requires_grad) px->accumulate(dx);
                 });
}

}  // namespace skillsight::ag
