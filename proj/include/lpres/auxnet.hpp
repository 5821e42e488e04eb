#pragma once

#include <span>
#include <vector>

#include "lpres/resnet.hpp"

namespace lpres {

/// A small residual network mapping lambda_{k-1} to lambda_k.
struct AuxNetParams {
  std::vector<BlockParams<double>> blocks;
  double residual_scale = 1.0;

  auto fields() { return std::tie(blocks); }
  auto fields() const { return std::tie(blocks); }
};

struct AuxNetSpec {
  int depth = 1;
  int hidden = 0;  // 0: half the trunk's hidden width, shrunk to respect the capacity cap
  double max_capacity_ratio = 0.25;
};

/// W1 He-initialized, W2 and biases zero, so a fresh AuxNet is the identity map.
AuxNetParams make_auxnet(Eigen::Index width, Eigen::Index hidden, int depth, SeededRng& rng);

std::size_t auxnet_parameter_count(Eigen::Index width, Eigen::Index hidden, int depth);

/// Resolves the AuxNet hidden width for a trunk whose smallest fed stage has
/// `smallest_stage_params` parameters. Throws ConfigError if no width fits.
Eigen::Index resolve_aux_hidden(const AuxNetSpec& spec, Eigen::Index width, Eigen::Index trunk_hidden,
                                std::size_t smallest_stage_params);

struct AuxNetTrace {
  std::vector<BlockCache<double>> caches;
  Mat output;
};

Mat auxnet_forward(const Mat& lambda_prev, const AuxNetParams& theta);
AuxNetTrace auxnet_trace(const Mat& lambda_prev, const AuxNetParams& theta);

struct AuxNetBackward {
  AuxNetParams grads;
  Mat input_adjoint;
};

AuxNetBackward auxnet_backward(const AuxNetParams& theta, const AuxNetTrace& trace, const Mat& output_adjoint);

/// mean over the batch of ||target_i - AuxNet(in_i)||^2, and its gradient.
struct DistillGrad {
  double loss = 0.0;
  AuxNetParams grads;
};

double distill_loss(const AuxNetParams& theta, const Mat& lambda_in, const Mat& lambda_target);
DistillGrad distill_gradient(const AuxNetParams& theta, const Mat& lambda_in, const Mat& lambda_target);

struct DistillResult {
  double initial_loss = 0.0;  // before the first step
  double final_loss = 0.0;    // evaluated at the start of the last step
};

/// `steps` SGD steps on the distillation loss.
DistillResult distill_step(AuxNetParams& theta, const Mat& lambda_in, const Mat& lambda_target, double eta,
                           int steps);

/// lambda_0 = X0, lambda_{k+1} = AuxNet_k(lambda_k); returns thetas.size() + 1 tensors.
std::vector<Mat> generate_lambdas(const Mat& X0, std::span<const AuxNetParams> thetas);

/// Recursive AuxNets: lambda_k = segment_{k-1}( ... segment_0(X0)) with
/// per-interface segment chains. With a shared prefix, chain k reuses chain
/// k-1 and appends one segment, which makes the structure the AuxNet chain.
class ReAuxNet {
 public:
  ReAuxNet() = default;
  ReAuxNet(int stages, Eigen::Index width, Eigen::Index hidden, int depth, bool shared_prefix, SeededRng& rng);

  /// Builds from explicit segments and chains (chains[k-1] lists segment indices for lambda_k).
  ReAuxNet(std::vector<AuxNetParams> segments, std::vector<std::vector<std::size_t>> chains);

  int interfaces() const { return static_cast<int>(chains_.size()); }
  bool shared_prefix() const { return shared_; }
  const std::vector<std::size_t>& chain(int k) const;
  std::vector<AuxNetParams>& segments() { return segments_; }
  const std::vector<AuxNetParams>& segments() const { return segments_; }
  std::size_t parameter_count() const;

  /// lambda_k for k in 1..K-1.
  Mat forward(int k, const Mat& X0) const;

  /// Gradient of mean_i <signal_i, lambda_k(X0_i)> with respect to every segment in chain k.
  struct Gradient {
    std::vector<std::size_t> segment_ids;
    std::vector<AuxNetParams> grads;
  };
  Gradient gradient(int k, const Mat& X0, const Mat& signal) const;

  /// One SGD step on chain k's segments with the chained signal.
  void update(int k, const Mat& X0, const Mat& signal, double eta);

  /// Sums gradients that land on the same segment, then steps each segment once.
  void apply(std::span<const Gradient> gradients, double eta);

 private:
  std::vector<AuxNetParams> segments_;
  std::vector<std::vector<std::size_t>> chains_;
  bool shared_ = false;
};

}  // namespace lpres
