#pragma once

// Minimal reverse-mode automatic differentiation over dense double matrices.
//
// A Graph records every operation applied to its Vars; Graph::backward walks
// the tape in reverse and accumulates gradients into the leaf Parameters that
// were bound with Graph::param. All arithmetic is double precision so that
// central finite differences can validate gradients at 1e-3 relative error.

#include <Eigen/Dense>

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace factgen {

using Matrix = Eigen::MatrixXd;
using RowVector = Eigen::RowVectorXd;

/// Which optimizer group owns a parameter.
enum class ParamGroup { encoder, decoder, reconstructor, classifier };

const char* to_string(ParamGroup group);

struct Parameter {
  std::string name;
  ParamGroup group = ParamGroup::decoder;
  Matrix value;
  Matrix grad;

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

class Graph;

/// Handle to a node on a Graph tape. Cheap to copy.
class Var {
 public:
  Var() = default;

  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double scalar() const { return value()(0, 0); }

  Graph* graph() const { return graph_; }
  std::size_t id() const { return id_; }
  bool valid() const { return graph_ != nullptr; }

 private:
  friend class Graph;
  Var(Graph* graph, std::size_t id) : graph_(graph), id_(id) {}

  Graph* graph_ = nullptr;
  std::size_t id_ = 0;
};

class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  /// Leaf without gradient.
  Var constant(Matrix value);
  /// Leaf bound to a trainable parameter; backward() accumulates into p.grad.
  Var param(Parameter& p);

  /// Reverse pass from a 1x1 node. Parameter grads are accumulated (+=).
  void backward(Var loss);

  const Matrix& value(const Var& v) const { return nodes_[v.id_].value; }
  std::size_t size() const { return nodes_.size(); }

  // Used by the op implementations.
  struct Node {
    Matrix value;
    Matrix grad;
    bool needs_grad = false;
    Parameter* param = nullptr;
    std::function<void(Graph&)> backprop;
  };

  Var push(Matrix value, bool needs_grad, std::function<void(Graph&)> backprop);
  Node& node(const Var& v) { return nodes_[v.id_]; }
  bool needs_grad(const Var& v) const { return nodes_[v.id_].needs_grad; }
  /// Gradient buffer of v, allocated (zeroed) on first use.
  Matrix& grad(const Var& v);

 private:
  std::deque<Node> nodes_;
};

namespace ops {

Var matmul(Var a, Var b);
/// a * b^T
Var matmul_nt(Var a, Var b);
Var add(Var a, Var b);
/// Adds a 1xC row to every row of a.
Var add_row(Var a, Var row);
/// Adds a constant matrix (no gradient flows into it).
Var add_constant(Var a, const Matrix& c);
Var scale(Var a, double s);
Var softmax_rows(Var a);
Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5);
/// tanh approximation of GELU.
Var gelu(Var x);
/// Rows of table selected by ids (embedding lookup). Duplicates accumulate.
Var gather_rows(Var table, std::span<const int> ids);
Var concat_rows(std::span<const Var> parts);
Var concat_cols(std::span<const Var> parts);
Var slice_rows(Var a, Eigen::Index start, Eigen::Index count);
Var slice_cols(Var a, Eigen::Index start, Eigen::Index count);
/// 1xC mean over all rows.
Var mean_rows(Var a);
/// Sum over rows i with targets[i] >= 0 of -log softmax(logits_i)[targets[i]].
Var cross_entropy_sum(Var logits, std::span<const int> targets);
/// Sum of 1x1 nodes weighted by coefficients.
Var weighted_sum(std::span<const Var> scalars, std::span<const double> weights);

}  // namespace ops

/// Row-wise log-softmax of a plain matrix (no tape).
Matrix log_softmax_rows(const Matrix& logits);
Matrix softmax_rows(const Matrix& logits);

}  // namespace factgen
