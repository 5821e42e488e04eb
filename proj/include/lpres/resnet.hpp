#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "lpres/tensor.hpp"

namespace lpres {

/// x -> x W + b
template <typename Scalar>
struct AffineParams {
  Tensor<Scalar> weight;
  RowVector<Scalar> bias;

  auto fields() { return std::tie(weight, bias); }
  auto fields() const { return std::tie(weight, bias); }

  Eigen::Index in_dim() const { return weight.rows(); }
  Eigen::Index out_dim() const { return weight.cols(); }

  static AffineParams zeros(Eigen::Index in, Eigen::Index out) {
    return {Tensor<Scalar>::Zero(in, out), RowVector<Scalar>::Zero(out)};
  }
};

/// Parameters of one residual body F(X) = relu(relu(X) W1 + b1) W2 + b2.
template <typename Scalar>
struct BlockParams {
  Tensor<Scalar> W1;
  RowVector<Scalar> b1;
  Tensor<Scalar> W2;
  RowVector<Scalar> b2;

  auto fields() { return std::tie(W1, b1, W2, b2); }
  auto fields() const { return std::tie(W1, b1, W2, b2); }

  Eigen::Index width() const { return W1.rows(); }
  Eigen::Index hidden() const { return W1.cols(); }

  static BlockParams zeros(Eigen::Index width, Eigen::Index hidden) {
    if (width < 1 || hidden < 1) throw InputError("BlockParams: width and hidden width must be >= 1");
    return {Tensor<Scalar>::Zero(width, hidden), RowVector<Scalar>::Zero(hidden),
            Tensor<Scalar>::Zero(hidden, width), RowVector<Scalar>::Zero(width)};
  }
};

/// Activations of one block needed by its backward map.
template <typename Scalar>
struct BlockCache {
  Tensor<Scalar> input;       // X
  Tensor<Scalar> pre_hidden;  // relu(X) W1 + b1
};

template <typename Scalar>
struct BlockForward {
  Tensor<Scalar> output;
  BlockCache<Scalar> cache;
};

template <typename Scalar>
struct BlockBackward {
  Tensor<Scalar> input_adjoint;
  BlockParams<Scalar> grads;
};

/// X_next = X + scale * F(X, W) with F in pre-activation order.
template <typename Scalar>
BlockForward<Scalar> block_forward(const Tensor<Scalar>& X, const BlockParams<Scalar>& W,
                                   Scalar residual_scale = Scalar(1)) {
  if (X.cols() != W.width()) {
    throw DimensionError("block_forward: input " + shape_of(X) + " vs block width " + std::to_string(W.width()));
  }
  BlockForward<Scalar> out;
  out.cache.input = X;
  out.cache.pre_hidden = affine<Scalar>(relu(X), W.W1, W.b1);
  out.output = X + residual_scale * affine<Scalar>(relu(out.cache.pre_hidden), W.W2, W.b2);
  return out;
}

/// Adjoint recursion P = P_next + P_next dF/dX and parameter gradient P_next dF/dW.
template <typename Scalar>
BlockBackward<Scalar> block_backward(const BlockCache<Scalar>& cache, const BlockParams<Scalar>& W,
                                     const Tensor<Scalar>& P_next, Scalar residual_scale = Scalar(1)) {
  if (cache.input.cols() != W.width() || cache.pre_hidden.cols() != W.hidden()) {
    throw UsageError("block_backward: cache " + shape_of(cache.input) + "/" + shape_of(cache.pre_hidden) +
                     " does not match block " + shape_of(W.W1));
  }
  if (P_next.rows() != cache.input.rows() || P_next.cols() != cache.input.cols()) {
    throw DimensionError("block_backward: adjoint " + shape_of(P_next) + " vs activation " +
                         shape_of(cache.input));
  }
  BlockBackward<Scalar> out;
  const Tensor<Scalar> dF = residual_scale * P_next;
  const Tensor<Scalar> hidden = relu(cache.pre_hidden);
  out.grads.W2 = hidden.transpose() * dF;
  out.grads.b2 = dF.colwise().sum();
  const Tensor<Scalar> d_pre = (dF * W.W2.transpose()).cwiseProduct(relu_mask(cache.pre_hidden));
  const Tensor<Scalar> activated = relu(cache.input);
  out.grads.W1 = activated.transpose() * d_pre;
  out.grads.b1 = d_pre.colwise().sum();
  out.input_adjoint = P_next + (d_pre * W.W1.transpose()).cwiseProduct(relu_mask(cache.input));
  return out;
}

// ---------------------------------------------------------------------------
// Input map S (affine + relu) and output map T (affine to logits).

template <typename Scalar>
struct EmbedCache {
  Tensor<Scalar> raw;
  Tensor<Scalar> pre;
};

template <typename Scalar>
struct EmbedForward {
  Tensor<Scalar> output;
  EmbedCache<Scalar> cache;
};

template <typename Scalar>
EmbedForward<Scalar> embed_forward(const Tensor<Scalar>& raw, const AffineParams<Scalar>& S) {
  EmbedForward<Scalar> out;
  out.cache.raw = raw;
  out.cache.pre = affine<Scalar>(raw, S.weight, S.bias);
  out.output = relu(out.cache.pre);
  return out;
}

template <typename Scalar>
AffineParams<Scalar> embed_backward(const EmbedCache<Scalar>& cache, const Tensor<Scalar>& P0) {
  const Tensor<Scalar> d_pre = P0.cwiseProduct(relu_mask(cache.pre));
  return {cache.raw.transpose() * d_pre, d_pre.colwise().sum()};
}

template <typename Scalar>
struct HeadBackward {
  Tensor<Scalar> input_adjoint;
  AffineParams<Scalar> grads;
};

template <typename Scalar>
HeadBackward<Scalar> head_backward(const Tensor<Scalar>& features, const AffineParams<Scalar>& T,
                                   const Tensor<Scalar>& d_logits) {
  return {d_logits * T.weight.transpose(), {features.transpose() * d_logits, d_logits.colwise().sum()}};
}

// ---------------------------------------------------------------------------
// Whole network.

struct ModelSpec {
  Eigen::Index raw_dim = 2;
  Eigen::Index width = 16;
  Eigen::Index hidden = 16;
  Eigen::Index classes = 3;
  int depth = 6;
  double residual_scale = 1.0;
};

template <typename Scalar>
struct ResidualModel {
  AffineParams<Scalar> input_map;
  std::vector<BlockParams<Scalar>> blocks;
  AffineParams<Scalar> output_map;
  Scalar residual_scale = Scalar(1);

  auto fields() { return std::tie(input_map, blocks, output_map); }
  auto fields() const { return std::tie(input_map, blocks, output_map); }

  int depth() const { return static_cast<int>(blocks.size()); }
  Eigen::Index width() const { return input_map.out_dim(); }
  Eigen::Index raw_dim() const { return input_map.in_dim(); }
  Eigen::Index classes() const { return output_map.out_dim(); }

  static ResidualModel zeros(const ModelSpec& spec) {
    if (spec.depth < 1) throw InputError("ResidualModel: depth must be >= 1");
    ResidualModel m;
    m.input_map = AffineParams<Scalar>::zeros(spec.raw_dim, spec.width);
    m.blocks.assign(static_cast<std::size_t>(spec.depth), BlockParams<Scalar>::zeros(spec.width, spec.hidden));
    m.output_map = AffineParams<Scalar>::zeros(spec.width, spec.classes);
    m.residual_scale = static_cast<Scalar>(spec.residual_scale);
    return m;
  }
};

/// He-normal weights N(0, 2/fan_in), zero biases.
template <typename Scalar>
void he_init(Tensor<Scalar>& weight, SeededRng& rng) {
  const Scalar stddev = std::sqrt(Scalar(2) / static_cast<Scalar>(weight.rows()));
  weight = randn<Scalar>(weight.rows(), weight.cols(), rng, stddev);
}

template <typename Scalar>
void he_init(BlockParams<Scalar>& block, SeededRng& rng) {
  he_init(block.W1, rng);
  he_init(block.W2, rng);
  block.b1.setZero();
  block.b2.setZero();
}

template <typename Scalar>
ResidualModel<Scalar> init_model(const ModelSpec& spec, SeededRng& rng) {
  auto m = ResidualModel<Scalar>::zeros(spec);
  he_init(m.input_map.weight, rng);
  for (auto& b : m.blocks) he_init(b, rng);
  he_init(m.output_map.weight, rng);
  return m;
}

template <typename Scalar>
struct NetTrace {
  Tensor<Scalar> logits;
  EmbedCache<Scalar> embed;
  std::vector<BlockCache<Scalar>> trajectory;
  Tensor<Scalar> features;  // X_L
};

template <typename Scalar>
NetTrace<Scalar> net_forward(const ResidualModel<Scalar>& model, const Tensor<Scalar>& raw) {
  if (raw.cols() != model.raw_dim()) {
    throw DimensionError("net_forward: batch " + shape_of(raw) + " vs raw_dim " + std::to_string(model.raw_dim()));
  }
  NetTrace<Scalar> trace;
  auto embedded = embed_forward(raw, model.input_map);
  trace.embed = std::move(embedded.cache);
  Tensor<Scalar> X = std::move(embedded.output);
  trace.trajectory.reserve(model.blocks.size());
  for (const auto& block : model.blocks) {
    auto step = block_forward(X, block, model.residual_scale);
    trace.trajectory.push_back(std::move(step.cache));
    X = std::move(step.output);
  }
  trace.logits = affine<Scalar>(X, model.output_map.weight, model.output_map.bias);
  trace.features = std::move(X);
  return trace;
}

/// Full backward sweep; the result has the model's shape and holds gradients.
template <typename Scalar>
ResidualModel<Scalar> net_backward(const ResidualModel<Scalar>& model, const NetTrace<Scalar>& trace,
                                   const Tensor<Scalar>& d_logits) {
  ResidualModel<Scalar> grads;
  grads.residual_scale = model.residual_scale;
  grads.blocks.resize(model.blocks.size());
  auto head = head_backward(trace.features, model.output_map, d_logits);
  grads.output_map = std::move(head.grads);
  Tensor<Scalar> P = std::move(head.input_adjoint);
  for (std::size_t l = model.blocks.size(); l-- > 0;) {
    auto back = block_backward(trace.trajectory[l], model.blocks[l], P, model.residual_scale);
    grads.blocks[l] = std::move(back.grads);
    P = std::move(back.input_adjoint);
  }
  grads.input_map = embed_backward(trace.embed, P);
  return grads;
}

/// Classification loss phi: mean softmax cross-entropy.
template <typename Scalar>
LossAndGrad<Scalar> loss_phi(const Tensor<Scalar>& logits, std::span<const int> labels) {
  return softmax_cross_entropy(logits, labels);
}

template <typename Scalar>
struct ModelLossGrad {
  Scalar loss;
  ResidualModel<Scalar> grads;
  NetTrace<Scalar> trace;
};

template <typename Scalar>
ModelLossGrad<Scalar> model_loss_and_grad(const ResidualModel<Scalar>& model, const Tensor<Scalar>& raw,
                                          std::span<const int> labels) {
  auto trace = net_forward(model, raw);
  auto phi = loss_phi(trace.logits, labels);
  auto grads = net_backward(model, trace, phi.grad);
  return {phi.loss, std::move(grads), std::move(trace)};
}

}  // namespace lpres
