#include "lpres/auxnet.hpp"

#include <string>

#include "lpres/optim.hpp"

namespace lpres {

AuxNetParams make_auxnet(Eigen::Index width, Eigen::Index hidden, int depth, SeededRng& rng) {
  if (depth < 1) throw ConfigError("auxnet: depth must be >= 1");
  AuxNetParams theta;
  for (int i = 0; i < depth; ++i) {
    auto block = BlockParams<double>::zeros(width, hidden);
    he_init(block.W1, rng);
    theta.blocks.push_back(std::move(block));
  }
  return theta;
}

std::size_t auxnet_parameter_count(Eigen::Index width, Eigen::Index hidden, int depth) {
  const auto d = static_cast<std::size_t>(width);
  const auto h = static_cast<std::size_t>(hidden);
  return static_cast<std::size_t>(depth) * (2 * d * h + h + d);
}

Eigen::Index resolve_aux_hidden(const AuxNetSpec& spec, Eigen::Index width, Eigen::Index trunk_hidden,
                                std::size_t smallest_stage_params) {
  const double cap = std::min(spec.max_capacity_ratio, 1.0) * static_cast<double>(smallest_stage_params);
  auto fits = [&](Eigen::Index h) {
    const auto n = static_cast<double>(auxnet_parameter_count(width, h, spec.depth));
    return n <= cap && n < static_cast<double>(smallest_stage_params);
  };
  if (spec.hidden > 0) {
    if (!fits(spec.hidden)) {
      throw ConfigError("auxnet: hidden width " + std::to_string(spec.hidden) + " gives " +
                        std::to_string(auxnet_parameter_count(width, spec.hidden, spec.depth)) +
                        " parameters, above the capacity cap for a stage of " +
                        std::to_string(smallest_stage_params));
    }
    return spec.hidden;
  }
  for (Eigen::Index h = std::max<Eigen::Index>(1, trunk_hidden / 2); h >= 1; --h) {
    if (fits(h)) return h;
  }
  throw ConfigError("auxnet: no hidden width fits the capacity cap of " + std::to_string(spec.max_capacity_ratio));
}

AuxNetTrace auxnet_trace(const Mat& lambda_prev, const AuxNetParams& theta) {
  AuxNetTrace trace;
  Mat X = lambda_prev;
  trace.caches.reserve(theta.blocks.size());
  for (const auto& block : theta.blocks) {
    auto step = block_forward(X, block, theta.residual_scale);
    trace.caches.push_back(std::move(step.cache));
    X = std::move(step.output);
  }
  trace.output = std::move(X);
  return trace;
}

Mat auxnet_forward(const Mat& lambda_prev, const AuxNetParams& theta) {
  return auxnet_trace(lambda_prev, theta).output;
}

AuxNetBackward auxnet_backward(const AuxNetParams& theta, const AuxNetTrace& trace, const Mat& output_adjoint) {
  AuxNetBackward out;
  out.grads.residual_scale = theta.residual_scale;
  out.grads.blocks.resize(theta.blocks.size());
  Mat P = output_adjoint;
  for (std::size_t m = theta.blocks.size(); m-- > 0;) {
    auto back = block_backward(trace.caches[m], theta.blocks[m], P, theta.residual_scale);
    out.grads.blocks[m] = std::move(back.grads);
    P = std::move(back.input_adjoint);
  }
  out.input_adjoint = std::move(P);
  return out;
}

double distill_loss(const AuxNetParams& theta, const Mat& lambda_in, const Mat& lambda_target) {
  const Mat pred = auxnet_forward(lambda_in, theta);
  if (pred.rows() != lambda_target.rows() || pred.cols() != lambda_target.cols()) {
    throw DimensionError("distill: prediction " + shape_of(pred) + " vs target " + shape_of(lambda_target));
  }
  return (lambda_target - pred).squaredNorm() / static_cast<double>(pred.rows());
}

DistillGrad distill_gradient(const AuxNetParams& theta, const Mat& lambda_in, const Mat& lambda_target) {
  const auto trace = auxnet_trace(lambda_in, theta);
  if (trace.output.rows() != lambda_target.rows() || trace.output.cols() != lambda_target.cols()) {
    throw DimensionError("distill: prediction " + shape_of(trace.output) + " vs target " + shape_of(lambda_target));
  }
  const double inv_batch = 1.0 / static_cast<double>(lambda_in.rows());
  const Mat residual = trace.output - lambda_target;
  DistillGrad out;
  out.loss = residual.squaredNorm() * inv_batch;
  out.grads = auxnet_backward(theta, trace, (2.0 * inv_batch) * residual).grads;
  return out;
}

DistillResult distill_step(AuxNetParams& theta, const Mat& lambda_in, const Mat& lambda_target, double eta,
                           int steps) {
  if (steps < 1) throw InputError("distill_step: steps must be >= 1");
  DistillResult result;
  for (int s = 0; s < steps; ++s) {
    auto g = distill_gradient(theta, lambda_in, lambda_target);
    if (s == 0) result.initial_loss = g.loss;
    result.final_loss = g.loss;
    sgd_update(theta, g.grads, eta);
  }
  return result;
}

std::vector<Mat> generate_lambdas(const Mat& X0, std::span<const AuxNetParams> thetas) {
  std::vector<Mat> lambdas;
  lambdas.reserve(thetas.size() + 1);
  lambdas.push_back(X0);
  for (const auto& theta : thetas) lambdas.push_back(auxnet_forward(lambdas.back(), theta));
  return lambdas;
}

ReAuxNet::ReAuxNet(int stages, Eigen::Index width, Eigen::Index hidden, int depth, bool shared_prefix,
                   SeededRng& rng)
    : shared_(shared_prefix) {
  if (stages < 2) throw ConfigError("reauxnet: needs at least two stages");
  for (int k = 1; k < stages; ++k) {
    std::vector<std::size_t> chain;
    if (shared_prefix) {
      if (k > 1) chain = chains_.back();
      chain.push_back(segments_.size());
      segments_.push_back(make_auxnet(width, hidden, depth, rng));
    } else {
      for (int j = 0; j < k; ++j) {
        chain.push_back(segments_.size());
        segments_.push_back(make_auxnet(width, hidden, depth, rng));
      }
    }
    chains_.push_back(std::move(chain));
  }
}

ReAuxNet::ReAuxNet(std::vector<AuxNetParams> segments, std::vector<std::vector<std::size_t>> chains)
    : segments_(std::move(segments)), chains_(std::move(chains)) {
  for (const auto& chain : chains_) {
    for (auto id : chain) {
      if (id >= segments_.size()) throw InputError("reauxnet: chain refers to a missing segment");
    }
  }
  shared_ = chains_.size() > 1;
  for (std::size_t k = 1; k < chains_.size() && shared_; ++k) {
    const auto& prev = chains_[k - 1];
    const auto& cur = chains_[k];
    shared_ = cur.size() == prev.size() + 1 && std::equal(prev.begin(), prev.end(), cur.begin());
  }
}

const std::vector<std::size_t>& ReAuxNet::chain(int k) const {
  if (k < 1 || k > interfaces()) {
    throw UsageError("reauxnet: interface " + std::to_string(k) + " outside 1.." + std::to_string(interfaces()));
  }
  return chains_[static_cast<std::size_t>(k - 1)];
}

std::size_t ReAuxNet::parameter_count() const {
  std::size_t n = 0;
  for (const auto& s : segments_) n += lpres::parameter_count(s);
  return n;
}

Mat ReAuxNet::forward(int k, const Mat& X0) const {
  Mat X = X0;
  for (auto id : chain(k)) X = auxnet_forward(X, segments_[id]);
  return X;
}

ReAuxNet::Gradient ReAuxNet::gradient(int k, const Mat& X0, const Mat& signal) const {
  const auto& ids = chain(k);
  std::vector<AuxNetTrace> traces;
  traces.reserve(ids.size());
  Mat X = X0;
  for (auto id : ids) {
    traces.push_back(auxnet_trace(X, segments_[id]));
    X = traces.back().output;
  }
  if (signal.rows() != X.rows() || signal.cols() != X.cols()) {
    throw DimensionError("reauxnet: signal " + shape_of(signal) + " vs output " + shape_of(X));
  }
  Gradient out;
  out.segment_ids = ids;
  out.grads.resize(ids.size());
  Mat P = signal / static_cast<double>(signal.rows());
  for (std::size_t j = ids.size(); j-- > 0;) {
    auto back = auxnet_backward(segments_[ids[j]], traces[j], P);
    out.grads[j] = std::move(back.grads);
    P = std::move(back.input_adjoint);
  }
  return out;
}

void ReAuxNet::update(int k, const Mat& X0, const Mat& signal, double eta) {
  const Gradient g = gradient(k, X0, signal);
  apply(std::span<const Gradient>(&g, 1), eta);
}

void ReAuxNet::apply(std::span<const Gradient> gradients, double eta) {
  std::vector<std::optional<AuxNetParams>> total(segments_.size());
  for (const auto& g : gradients) {
    for (std::size_t j = 0; j < g.segment_ids.size(); ++j) {
      auto& slot = total[g.segment_ids[j]];
      if (!slot) {
        slot = g.grads[j];
      } else {
        zip_fields([](auto& acc, const auto& add) { acc += add; }, *slot, g.grads[j]);
      }
    }
  }
  for (std::size_t id = 0; id < segments_.size(); ++id) {
    if (total[id]) sgd_update(segments_[id], *total[id], eta);
  }
}

}  // namespace lpres
