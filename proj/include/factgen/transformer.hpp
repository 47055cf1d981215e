#pragma once

// Building blocks shared by the PSA language model and the claim reconstructor.

#include <string>

#include "factgen/autograd.hpp"
#include "factgen/parameters.hpp"

namespace factgen {

struct Linear {
  Parameter* weight = nullptr;  // in x out
  Parameter* bias = nullptr;    // 1 x out
  Var apply(Graph& g, Var x) const;
};

struct LayerNorm {
  Parameter* gain = nullptr;
  Parameter* bias = nullptr;
  Var apply(Graph& g, Var x) const;
};

struct FeedForward {
  Linear up;
  Linear down;
  Var apply(Graph& g, Var x) const;  // down(gelu(up(x)))
};

Linear make_linear(ParameterSet& params, const std::string& name, ParamGroup group, Eigen::Index in,
                   Eigen::Index out, NormalSampler& init, double stddev);
LayerNorm make_layer_norm(ParameterSet& params, const std::string& name, ParamGroup group, Eigen::Index dim);
FeedForward make_feed_forward(ParameterSet& params, const std::string& name, ParamGroup group,
                              Eigen::Index dim, Eigen::Index hidden, NormalSampler& init, double stddev);

struct AttentionResult {
  Var output;   // M x d_v
  Var weights;  // M x (M_y + N_x + N_f); rows sum to 1
};

/// softmax(Q_Y [K_Y; K_X; K_F]^T / sqrt(d)) [V_Y; V_X; V_F] for one head.
/// Source keys/values may be invalid Vars or have zero rows. With causal set,
/// query i sees target keys 0..i and every source key.
AttentionResult psa_attention(Var q_y, Var k_y, Var v_y, Var k_x, Var v_x, Var k_f, Var v_f, bool causal);

/// 0 where allowed, -inf above the diagonal of the leading target block.
Matrix causal_mask(Eigen::Index queries, Eigen::Index target_keys, Eigen::Index total_keys);

/// Splits projected q/k/v (and optional sources) into n_heads column slices,
/// runs psa_attention per head and concatenates the head outputs.
Var multi_head_psa(Var q, Var k, Var v, Var k_x, Var v_x, Var k_f, Var v_f, int n_heads, bool causal);

/// Positions 0..n-1.
std::vector<int> iota_positions(std::size_t n);

}  // namespace factgen
