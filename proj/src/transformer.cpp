#include "factgen/transformer.hpp"

#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace factgen {

Var Linear::apply(Graph& g, Var x) const {
  return ops::add_row(ops::matmul(x, g.param(*weight)), g.param(*bias));
}

Var LayerNorm::apply(Graph& g, Var x) const { return ops::layer_norm(x, g.param(*gain), g.param(*bias)); }

Var FeedForward::apply(Graph& g, Var x) const { return down.apply(g, ops::gelu(up.apply(g, x))); }

Linear make_linear(ParameterSet& params, const std::string& name, ParamGroup group, Eigen::Index in,
                   Eigen::Index out, NormalSampler& init, double stddev) {
  Linear l;
  l.weight = &params.add(name + ".weight", group, in, out);
  l.bias = &params.add(name + ".bias", group, 1, out);
  init.fill(l.weight->value, stddev);
  return l;
}

LayerNorm make_layer_norm(ParameterSet& params, const std::string& name, ParamGroup group, Eigen::Index dim) {
  LayerNorm ln;
  ln.gain = &params.add(name + ".gain", group, 1, dim);
  ln.bias = &params.add(name + ".bias", group, 1, dim);
  ln.gain->value.setOnes();
  return ln;
}

FeedForward make_feed_forward(ParameterSet& params, const std::string& name, ParamGroup group,
                              Eigen::Index dim, Eigen::Index hidden, NormalSampler& init, double stddev) {
  return {make_linear(params, name + ".up", group, dim, hidden, init, stddev),
          make_linear(params, name + ".down", group, hidden, dim, init, stddev)};
}

Matrix causal_mask(Eigen::Index queries, Eigen::Index target_keys, Eigen::Index total_keys) {
  Matrix mask = Matrix::Zero(queries, total_keys);
  const double neg_inf = -std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < queries; ++i)
    for (Eigen::Index j = i + 1; j < target_keys; ++j) mask(i, j) = neg_inf;
  return mask;
}

namespace {

bool present(const Var& v) { return v.valid() && v.rows() > 0; }

}  // namespace

AttentionResult psa_attention(Var q_y, Var k_y, Var v_y, Var k_x, Var v_x, Var k_f, Var v_f, bool causal) {
  const Eigen::Index d = q_y.cols();
  auto check = [&](const Var& k, const Var& v, const char* which) {
    if (!present(k) && !present(v)) return;
    if (!present(k) || !present(v) || k.rows() != v.rows())
      throw std::invalid_argument(std::string("psa_attention: ") + which + " keys and values differ in length");
    if (k.cols() != d)
      throw std::invalid_argument(std::string("psa_attention: ") + which + " key dimension mismatch");
    if (v.cols() != v_y.cols())
      throw std::invalid_argument(std::string("psa_attention: ") + which + " value dimension mismatch");
  };
  if (k_y.cols() != d || k_y.rows() != v_y.rows())
    throw std::invalid_argument("psa_attention: target key/value shape mismatch");
  if (causal && k_y.rows() != q_y.rows())
    throw std::invalid_argument("psa_attention: causal attention needs one target key per query");
  check(k_x, v_x, "claim");
  check(k_f, v_f, "fact");

  std::vector<Var> keys{k_y};
  std::vector<Var> values{v_y};
  if (present(k_x)) {
    keys.push_back(k_x);
    values.push_back(v_x);
  }
  if (present(k_f)) {
    keys.push_back(k_f);
    values.push_back(v_f);
  }
  Var k = keys.size() == 1 ? k_y : ops::concat_rows(keys);
  Var v = values.size() == 1 ? v_y : ops::concat_rows(values);

  Var scores = ops::scale(ops::matmul_nt(q_y, k), 1.0 / std::sqrt(static_cast<double>(d)));
  if (causal) scores = ops::add_constant(scores, causal_mask(q_y.rows(), k_y.rows(), k.rows()));
  Var weights = ops::softmax_rows(scores);
  return {ops::matmul(weights, v), weights};
}

Var multi_head_psa(Var q, Var k, Var v, Var k_x, Var v_x, Var k_f, Var v_f, int n_heads, bool causal) {
  if (n_heads < 1 || q.cols() % n_heads != 0) throw std::invalid_argument("model width not divisible by heads");
  const Eigen::Index hd = q.cols() / n_heads;
  auto head = [&](const Var& m, int h) {
    return present(m) ? ops::slice_cols(m, h * hd, hd) : Var{};
  };
  if (n_heads == 1) return psa_attention(q, k, v, k_x, v_x, k_f, v_f, causal).output;
  std::vector<Var> outs;
  outs.reserve(static_cast<std::size_t>(n_heads));
  for (int h = 0; h < n_heads; ++h) {
    outs.push_back(psa_attention(head(q, h), head(k, h), head(v, h), head(k_x, h), head(v_x, h),
                                 head(k_f, h), head(v_f, h), causal)
                       .output);
  }
  return ops::concat_cols(outs);
}

std::vector<int> iota_positions(std::size_t n) {
  std::vector<int> p(n);
  std::iota(p.begin(), p.end(), 0);
  return p;
}

}  // namespace factgen
