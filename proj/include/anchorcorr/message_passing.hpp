#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "anchorcorr/common.hpp"
#include "anchorcorr/position_encoding.hpp"
#include "anchorcorr/rng.hpp"
#include "anchorcorr/tensor.hpp"

namespace anchorcorr {

using ParamVisitor = std::function<void(const std::string&, Tensor&)>;

inline Tensor xavier_uniform(int fan_in, int fan_out, std::vector<int> shape, Rng& rng) {
  const double bound = std::sqrt(6.0 / (fan_in + fan_out));
  Tensor t = Tensor::zeros(std::move(shape), true);
  for (auto& v : t.values()) v = rng.uniform(-bound, bound);
  return t;
}

// two-layer perceptron with ReLU between, biases zero-initialized
struct MlpParams {
  Tensor w1, b1, w2, b2;

  static MlpParams init(int in_dim, int hidden_dim, int out_dim, Rng& rng) {
    MlpParams p;
    p.w1 = xavier_uniform(in_dim, hidden_dim, {in_dim, hidden_dim}, rng);
    p.b1 = Tensor::zeros({hidden_dim}, true);
    p.w2 = xavier_uniform(hidden_dim, out_dim, {hidden_dim, out_dim}, rng);
    p.b2 = Tensor::zeros({out_dim}, true);
    return p;
  }

  void visit(const std::string& prefix, const ParamVisitor& fn) {
    fn(prefix + ".w1", w1);
    fn(prefix + ".b1", b1);
    fn(prefix + ".w2", w2);
    fn(prefix + ".b2", b2);
  }
};

inline Tensor mlp_apply(const MlpParams& p, const Tensor& x) {
  return linear(relu(linear(x, p.w1, p.b1)), p.w2, p.b2);
}

// node attributes plus the normalized positions they sit at; positions are
// pre-scaled by the augmentation when active
struct NodeBatch {
  Tensor attributes;          // [n, d]
  std::vector<Vec2> coords;   // size n

  void validate() const {
    if (attributes.rank() != 2 ||
        attributes.dim(0) != static_cast<int>(coords.size()))
      throw ShapeError("node batch: attribute rows must match coordinate count");
  }
};

// Multi-head attention layer shared by the intra-points and points-to-image
// passes. Position embeddings are concatenated to the inputs of the query
// and key projections only; values carry pure content.
struct AttentionParams {
  int model_dim = 0;
  int head_dim = 0;
  int heads = 0;
  std::vector<Tensor> wq, wk;  // per head [(d + pe), dk]
  std::vector<Tensor> wv;      // per head [d, dk]
  Tensor w_out;                // [heads * dk, d]
  MlpParams ffn;               // d -> hidden -> d
  // When set (default), the pre-feed-forward value is added to the
  // feed-forward output; when clear, the layer output is the literal
  // feed-forward of (z + projected aggregate) alone.
  bool double_residual = true;

  static AttentionParams init(int model_dim, int pe_dim, int head_dim, int heads, int ffn_hidden,
                              Rng& rng) {
    AttentionParams p;
    p.model_dim = model_dim;
    p.head_dim = head_dim;
    p.heads = heads;
    const int qk_in = model_dim + pe_dim;
    for (int h = 0; h < heads; ++h) {
      p.wq.push_back(xavier_uniform(qk_in, head_dim, {qk_in, head_dim}, rng));
      p.wk.push_back(xavier_uniform(qk_in, head_dim, {qk_in, head_dim}, rng));
      p.wv.push_back(xavier_uniform(model_dim, head_dim, {model_dim, head_dim}, rng));
    }
    p.w_out = xavier_uniform(heads * head_dim, model_dim, {heads * head_dim, model_dim}, rng);
    p.ffn = MlpParams::init(model_dim, ffn_hidden, model_dim, rng);
    return p;
  }

  void visit(const std::string& prefix, const ParamVisitor& fn) {
    for (int h = 0; h < heads; ++h) {
      const std::string hs = std::to_string(h);
      fn(prefix + ".wq" + hs, wq[h]);
      fn(prefix + ".wk" + hs, wk[h]);
      fn(prefix + ".wv" + hs, wv[h]);
    }
    fn(prefix + ".w_out", w_out);
    ffn.visit(prefix + ".ffn", fn);
  }
};

// paired-anchor update MLP acting on concat(source, target)
struct InterPointsParams {
  MlpParams corr;  // 2d -> hidden -> d

  static InterPointsParams init(int model_dim, int hidden, Rng& rng) {
    return {MlpParams::init(2 * model_dim, hidden, model_dim, rng)};
  }

  void visit(const std::string& prefix, const ParamVisitor& fn) {
    corr.visit(prefix + ".corr", fn);
  }
};

// Symmetric update of the two paired anchor lists: each side receives a
// residual computed by the correlation MLP on concat(other, self), source
// first. Pairs are independent of one another.
inline std::pair<Tensor, Tensor> inter_points_pass(const NodeBatch& z_x, const NodeBatch& z_y,
                                                   const InterPointsParams& params) {
  z_x.validate();
  z_y.validate();
  if (z_x.attributes.dim(0) != z_y.attributes.dim(0))
    throw PairingError("inter_points_pass: anchor lists differ in length");
  Tensor msg_to_x = mlp_apply(params.corr, concat({z_y.attributes, z_x.attributes}, 1));
  Tensor msg_to_y = mlp_apply(params.corr, concat({z_x.attributes, z_y.attributes}, 1));
  return {add(z_x.attributes, msg_to_x), add(z_y.attributes, msg_to_y)};
}

// per-head attention matrices, recorded when a probe is requested
struct AttentionTrace {
  std::vector<Tensor> per_head;  // each [targets, sources]
};

// Scaled dot-product attention from keys_values onto queries, heads
// concatenated, projected, residual, then the feed-forward refinement.
inline Tensor attention_pass(const NodeBatch& queries, const NodeBatch& keys_values,
                             const AttentionParams& params, const PosEncodingConfig& pe_config,
                             AttentionTrace* trace = nullptr) {
  queries.validate();
  keys_values.validate();
  if (queries.attributes.dim(1) != params.model_dim ||
      keys_values.attributes.dim(1) != params.model_dim)
    throw ShapeError("attention_pass: width does not match layer parameters");
  if (keys_values.attributes.dim(0) < 1)
    throw ShapeError("attention_pass: no source nodes");

  Tensor pe_q = sincos_2d(queries.coords, pe_config);
  Tensor pe_s = sincos_2d(keys_values.coords, pe_config);
  Tensor zq = concat({queries.attributes, pe_q}, 1);
  Tensor zs = concat({keys_values.attributes, pe_s}, 1);

  const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(params.head_dim));
  std::vector<Tensor> head_outputs;
  head_outputs.reserve(params.heads);
  for (int h = 0; h < params.heads; ++h) {
    Tensor q = matmul(zq, params.wq[h]);                       // [T, dk]
    Tensor k = matmul(zs, params.wk[h]);                       // [S, dk]
    Tensor v = matmul(keys_values.attributes, params.wv[h]);   // [S, dk]
    Tensor scores = mul_scalar(matmul(q, transpose2d(k)), inv_sqrt_dk);
    Tensor attn = softmax(scores, 1);                          // rows sum to 1 over sources
    if (trace) trace->per_head.push_back(attn);
    head_outputs.push_back(matmul(attn, v));                   // [T, dk]
  }

  Tensor aggregated = params.heads == 1 ? head_outputs[0] : concat(head_outputs, 1);
  Tensor inner = add(queries.attributes, matmul(aggregated, params.w_out));
  Tensor refined = mlp_apply(params.ffn, inner);
  return params.double_residual ? add(inner, refined) : refined;
}

// self-attention over the anchors of one image, self included
inline Tensor intra_points_pass(const NodeBatch& z, const AttentionParams& params,
                                const PosEncodingConfig& pe_config,
                                AttentionTrace* trace = nullptr) {
  return attention_pass(z, z, params, pe_config, trace);
}

// broadcast from anchors to the image grid; anchor attributes are unchanged
inline Tensor points_to_image_pass(const NodeBatch& anchors, const NodeBatch& image_nodes,
                                   const AttentionParams& params,
                                   const PosEncodingConfig& pe_config,
                                   AttentionTrace* trace = nullptr) {
  return attention_pass(image_nodes, anchors, params, pe_config, trace);
}

}  // namespace anchorcorr
