#include "factgen/autograd.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace factgen {

const char* to_string(ParamGroup group) {
  switch (group) {
    case ParamGroup::encoder: return "encoder";
    case ParamGroup::decoder: return "decoder";
    case ParamGroup::reconstructor: return "reconstructor";
    case ParamGroup::classifier: return "classifier";
  }
  return "unknown";
}

const Matrix& Var::value() const { return graph_->value(*this); }

Var Graph::push(Matrix value, bool needs_grad, std::function<void(Graph&)> backprop) {
  Node n;
  n.value = std::move(value);
  n.needs_grad = needs_grad;
  if (needs_grad) n.backprop = std::move(backprop);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Graph::constant(Matrix value) { return push(std::move(value), false, nullptr); }

Var Graph::param(Parameter& p) {
  Var v = push(p.value, true, nullptr);
  nodes_[v.id_].param = &p;
  return v;
}

Matrix& Graph::grad(const Var& v) {
  Node& n = nodes_[v.id_];
  if (n.grad.size() == 0 && n.value.size() != 0) n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
  if (n.grad.rows() != n.value.rows() || n.grad.cols() != n.value.cols())
    n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

void Graph::backward(Var loss) {
  if (loss.graph_ != this) throw std::invalid_argument("backward: variable belongs to another graph");
  if (loss.rows() != 1 || loss.cols() != 1) throw std::invalid_argument("backward: loss must be 1x1");
  if (!nodes_[loss.id_].needs_grad) return;
  grad(loss)(0, 0) = 1.0;
  for (std::size_t i = loss.id_ + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.needs_grad || n.grad.size() == 0) continue;
    if (n.param != nullptr) {
      Parameter& p = *n.param;
      if (p.grad.rows() != p.value.rows() || p.grad.cols() != p.value.cols()) p.zero_grad();
      p.grad += n.grad;
    } else if (n.backprop) {
      n.backprop(*this);
    }
  }
}

namespace ops {
namespace {

void same_graph(const Var& a, const Var& b) {
  if (a.graph() != b.graph()) throw std::invalid_argument("operands belong to different graphs");
}

void require_shape(bool ok, const char* what) {
  if (!ok) throw std::invalid_argument(std::string("shape mismatch in ") + what);
}

}  // namespace

Var matmul(Var a, Var b) {
  same_graph(a, b);
  require_shape(a.cols() == b.rows(), "matmul");
  Graph& g = *a.graph();
  Matrix out = a.value() * b.value();
  bool ng = g.needs_grad(a) || g.needs_grad(b);
  Var r = g.push(std::move(out), ng, nullptr);
  if (ng) {
    g.node(r).backprop = [a, b, r](Graph& g) {
      const Matrix& dr = g.node(r).grad;
      if (g.needs_grad(a)) g.grad(a).noalias() += dr * b.value().transpose();
      if (g.needs_grad(b)) g.grad(b).noalias() += a.value().transpose() * dr;
    };
  }
  return r;
}

Var matmul_nt(Var a, Var b) {
  same_graph(a, b);
  require_shape(a.cols() == b.cols(), "matmul_nt");
  Graph& g = *a.graph();
  Matrix out = a.value() * b.value().transpose();
  bool ng = g.needs_grad(a) || g.needs_grad(b);
  Var r = g.push(std::move(out), ng, nullptr);
  if (ng) {
    g.node(r).backprop = [a, b, r](Graph& g) {
      const Matrix& dr = g.node(r).grad;
      if (g.needs_grad(a)) g.grad(a).noalias() += dr * b.value();
      if (g.needs_grad(b)) g.grad(b).noalias() += dr.transpose() * a.value();
    };
  }
  return r;
}

Var add(Var a, Var b) {
  same_graph(a, b);
  require_shape(a.rows() == b.rows() && a.cols() == b.cols(), "add");
  Graph& g = *a.graph();
  bool ng = g.needs_grad(a) || g.needs_grad(b);
  Var r = g.push(a.value() + b.value(), ng, nullptr);
  if (ng) {
    g.node(r).backprop = [a, b, r](Graph& g) {
      const Matrix& dr = g.node(r).grad;
      if (g.needs_grad(a)) g.grad(a) += dr;
      if (g.needs_grad(b)) g.grad(b) += dr;
    };
  }
  return r;
}

Var add_row(Var a, Var row) {
  same_graph(a, row);
  require_shape(row.rows() == 1 && row.cols() == a.cols(), "add_row");
  Graph& g = *a.graph();
  Matrix out = a.value();
  out.rowwise() += row.value().row(0);
  bool ng = g.needs_grad(a) || g.needs_grad(row);
  Var r = g.push(std::move(out), ng, nullptr);
  if (ng) {
    g.node(r).backprop = [a, row, r](Graph& g) {
      const Matrix& dr = g.node(r).grad;
      if (g.needs_grad(a)) g.grad(a) += dr;
      if (g.needs_grad(row)) g.grad(row) += dr.colwise().sum();
    };
  }
  return r;
}

Var add_constant(Var a, const Matrix& c) {
  require_shape(a.rows() == c.rows() && a.cols() == c.cols(), "add_constant");
  Graph& g = *a.graph();
  bool ng = g.needs_grad(a);
  Var r = g.push(a.value() + c, ng, nullptr);
  if (ng) {
    g.node(r).backprop = [a, r](Graph& g) { g.grad(a) += g.node(r).grad; };
  }
  return r;
}

Var scale(Var a, double s) {
  Graph& g = *a.graph();
  bool ng = g.needs_grad(a);
  Var r = g.push(a.value() * s, ng, nullptr);
  if (ng) {
    g.node(r).backprop = [a, r, s](Graph& g) { g.grad(a) += g.node(r).grad * s; };
  }
  return r;
}

Var softmax_rows(Var a) {
  Graph& g = *a.graph();
  bool ng = g.needs_grad(a);
  Var r = g.push(factgen::softmax_rows(a.value()), ng, nullptr);
  if (ng) {
    g.node(r).backprop = [a, r](Graph& g) {
      const Matrix& p = g.node(r).value;
      const Matrix& dp = g.node(r).grad;
      Eigen::VectorXd dot = (dp.array() * p.array()).rowwise().sum();
      Matrix da = p.array() * (dp.colwise() - dot).array();
      g.grad(a) += da;
    };
  }
  return r;
}

Var layer_norm(Var x, Var gamma, Var beta, double eps) {
  same_graph(x, gamma);
  same_graph(x, beta);
  require_shape(gamma.rows() == 1 && gamma.cols() == x.cols() && beta.rows() == 1 &&
                    beta.cols() == x.cols(),
                "layer_norm");
  Graph& g = *x.graph();
  const Matrix& xv = x.value();
  const Eigen::Index n = xv.rows();
  const Eigen::Index d = xv.cols();
  Matrix xhat(n, d);
  Eigen::VectorXd inv_std(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    double mean = xv.row(i).mean();
    double var = (xv.row(i).array() - mean).square().mean();
    inv_std(i) = 1.0 / std::sqrt(var + eps);
    xhat.row(i) = (xv.row(i).array() - mean) * inv_std(i);
  }
  Matrix out = xhat;
  out.array().rowwise() *= gamma.value().row(0).array();
  out.rowwise() += beta.value().row(0);
  bool ng = g.needs_grad(x) || g.needs_grad(gamma) || g.needs_grad(beta);
  Var r = g.push(std::move(out), ng, nullptr);
  if (ng) {
    g.node(r).backprop = [x, gamma, beta, r, xhat = std::move(xhat),
                          inv_std = std::move(inv_std)](Graph& g) {
      const Matrix& dy = g.node(r).grad;
      if (g.needs_grad(gamma)) g.grad(gamma) += (dy.array() * xhat.array()).colwise().sum().matrix();
      if (g.needs_grad(beta)) g.grad(beta) += dy.colwise().sum();
      if (g.needs_grad(x)) {
        Matrix dxhat = dy;
        dxhat.array().rowwise() *= gamma.value().row(0).array();
        const double d = static_cast<double>(dxhat.cols());
        Eigen::VectorXd sum_dxhat = dxhat.rowwise().sum();
        Eigen::VectorXd sum_dxhat_xhat = (dxhat.array() * xhat.array()).rowwise().sum();
        Matrix dx(dxhat.rows(), dxhat.cols());
        for (Eigen::Index i = 0; i < dx.rows(); ++i) {
          dx.row(i) = (inv_std(i) / d) *
                      (d * dxhat.row(i).array() - sum_dxhat(i) - xhat.row(i).array() * sum_dxhat_xhat(i))
                          .matrix();
        }
        g.grad(x) += dx;
      }
    };
  }
  return r;
}

Var gelu(Var x) {
  Graph& g = *x.graph();
  constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double k = 0.044715;
  Matrix out = x.value().unaryExpr([](double v) {
    return 0.5 * v * (1.0 + std::tanh(c * (v + k * v * v * v)));
  });
  bool ng = g.needs_grad(x);
  Var r = g.push(std::move(out), ng, nullptr);
  if (ng) {
    g.node(r).backprop = [x, r](Graph& g) {
      Matrix deriv = x.value().unaryExpr([](double v) {
        double u = c * (v + k * v * v * v);
        double t = std::tanh(u);
        double du = c * (1.0 + 3.0 * k * v * v);
        return 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du;
      });
      g.grad(x) += (g.node(r).grad.array() * deriv.array()).matrix();
    };
  }
  return r;
}

Var gather_rows(Var table, std::span<const int> ids) {
  Graph& g = *table.graph();
  const Matrix& tv = table.value();
  Matrix out(static_cast<Eigen::Index>(ids.size()), tv.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= tv.rows()) throw std::out_of_range("gather_rows: id out of range");
    out.row(static_cast<Eigen::Index>(i)) = tv.row(ids[i]);
  }
  bool ng = g.needs_grad(table);
  Var r = g.push(std::move(out), ng, nullptr);
  if (ng) {
    g.node(r).backprop = [table, r, idx = std::vector<int>(ids.begin(), ids.end())](Graph& g) {
      const Matrix& dr = g.node(r).grad;
      Matrix& dt = g.grad(table);
      for (std::size_t i = 0; i < idx.size(); ++i) dt.row(idx[i]) += dr.row(static_cast<Eigen::Index>(i));
    };
  }
  return r;
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no parts");
  Graph& g = *parts.front().graph();
  const Eigen::Index cols = parts.front().cols();
  Eigen::Index rows = 0;
  bool ng = false;
  for (const Var& p : parts) {
    same_graph(parts.front(), p);
    require_shape(p.cols() == cols, "concat_rows");
    rows += p.rows();
    ng = ng || g.needs_grad(p);
  }
  Matrix out(rows, cols);
  Eigen::Index at = 0;
  for (const Var& p : parts) {
    if (p.rows() > 0) out.middleRows(at, p.rows()) = p.value();
    at += p.rows();
  }
  Var r = g.push(std::move(out), ng, nullptr);
  if (ng) {
    g.node(r).backprop = [r, ps = std::vector<Var>(parts.begin(), parts.end())](Graph& g) {
      const Matrix& dr = g.node(r).grad;
      Eigen::Index at = 0;
      for (const Var& p : ps) {
        if (g.needs_grad(p) && p.rows() > 0) g.grad(p) += dr.middleRows(at, p.rows());
        at += p.rows();
      }
    };
  }
  return r;
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no parts");
  Graph& g = *parts.front().graph();
  const Eigen::Index rows = parts.front().rows();
  Eigen::Index cols = 0;
  bool ng = false;
  for (const Var& p : parts) {
    same_graph(parts.front(), p);
    require_shape(p.rows() == rows, "concat_cols");
    cols += p.cols();
    ng = ng || g.needs_grad(p);
  }
  Matrix out(rows, cols);
  Eigen::Index at = 0;
  for (const Var& p : parts) {
    if (p.cols() > 0) out.middleCols(at, p.cols()) = p.value();
    at += p.cols();
  }
  Var r = g.push(std::move(out), ng, nullptr);
  if (ng) {
    g.node(r).backprop = [r, ps = std::vector<Var>(parts.begin(), parts.end())](Graph& g) {
      const Matrix& dr = g.node(r).grad;
      Eigen::Index at = 0;
      for (const Var& p : ps) {
        if (g.needs_grad(p) && p.cols() > 0 && p.rows() > 0) g.grad(p) += dr.middleCols(at, p.cols());
        at += p.cols();
      }
    };
  }
  return r;
}

Var slice_rows(Var a, Eigen::Index start, Eigen::Index count) {
  require_shape(start >= 0 && count >= 0 && start + count <= a.rows(), "slice_rows");
  Graph& g = *a.graph();
  bool ng = g.needs_grad(a);
  Var r = g.push(a.value().middleRows(start, count), ng, nullptr);
  if (ng) {
    g.node(r).backprop = [a, r, start, count](Graph& g) {
      if (count > 0) g.grad(a).middleRows(start, count) += g.node(r).grad;
    };
  }
  return r;
}

Var slice_cols(Var a, Eigen::Index start, Eigen::Index count) {
  require_shape(start >= 0 && count >= 0 && start + count <= a.cols(), "slice_cols");
  Graph& g = *a.graph();
  bool ng = g.needs_grad(a);
  Var r = g.push(a.value().middleCols(start, count), ng, nullptr);
  if (ng) {
    g.node(r).backprop = [a, r, start, count](Graph& g) {
      if (count > 0 && a.rows() > 0) g.grad(a).middleCols(start, count) += g.node(r).grad;
    };
  }
  return r;
}

Var mean_rows(Var a) {
  if (a.rows() == 0) throw std::invalid_argument("mean_rows: no rows");
  Graph& g = *a.graph();
  bool ng = g.needs_grad(a);
  Var r = g.push(a.value().colwise().mean(), ng, nullptr);
  if (ng) {
    g.node(r).backprop = [a, r](Graph& g) {
      const double inv = 1.0 / static_cast<double>(a.rows());
      g.grad(a).rowwise() += g.node(r).grad.row(0) * inv;
    };
  }
  return r;
}

Var cross_entropy_sum(Var logits, std::span<const int> targets) {
  require_shape(static_cast<Eigen::Index>(targets.size()) == logits.rows(), "cross_entropy_sum");
  Graph& g = *logits.graph();
  Matrix logp = log_softmax_rows(logits.value());
  double total = 0.0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (targets[i] < 0) continue;
    if (targets[i] >= logp.cols()) throw std::out_of_range("cross_entropy_sum: target out of range");
    total -= logp(static_cast<Eigen::Index>(i), targets[i]);
  }
  Matrix out(1, 1);
  out(0, 0) = total;
  bool ng = g.needs_grad(logits);
  Var r = g.push(std::move(out), ng, nullptr);
  if (ng) {
    g.node(r).backprop = [logits, r, logp = std::move(logp),
                          tgt = std::vector<int>(targets.begin(), targets.end())](Graph& g) {
      const double up = g.node(r).grad(0, 0);
      Matrix& dl = g.grad(logits);
      for (std::size_t i = 0; i < tgt.size(); ++i) {
        if (tgt[i] < 0) continue;
        auto row = static_cast<Eigen::Index>(i);
        dl.row(row) += up * logp.row(row).array().exp().matrix();
        dl(row, tgt[i]) -= up;
      }
    };
  }
  return r;
}

Var weighted_sum(std::span<const Var> scalars, std::span<const double> weights) {
  if (scalars.empty() || scalars.size() != weights.size())
    throw std::invalid_argument("weighted_sum: need one weight per term");
  Graph& g = *scalars.front().graph();
  double total = 0.0;
  bool ng = false;
  for (std::size_t i = 0; i < scalars.size(); ++i) {
    require_shape(scalars[i].rows() == 1 && scalars[i].cols() == 1, "weighted_sum");
    total += weights[i] * scalars[i].scalar();
    ng = ng || g.needs_grad(scalars[i]);
  }
  Matrix out(1, 1);
  out(0, 0) = total;
  Var r = g.push(std::move(out), ng, nullptr);
  if (ng) {
    g.node(r).backprop = [r, ss = std::vector<Var>(scalars.begin(), scalars.end()),
                          ws = std::vector<double>(weights.begin(), weights.end())](Graph& g) {
      const double up = g.node(r).grad(0, 0);
      for (std::size_t i = 0; i < ss.size(); ++i)
        if (g.needs_grad(ss[i])) g.grad(ss[i])(0, 0) += up * ws[i];
    };
  }
  return r;
}

}  // namespace ops

Matrix log_softmax_rows(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    double m = logits.row(i).maxCoeff();
    double lse = m + std::log((logits.row(i).array() - m).exp().sum());
    out.row(i) = logits.row(i).array() - lse;
  }
  return out;
}

Matrix softmax_rows(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    double m = logits.row(i).maxCoeff();
    out.row(i) = (logits.row(i).array() - m).exp();
    out.row(i) /= out.row(i).sum();
  }
  return out;
}

}  // namespace factgen
