#pragma once

#include <optional>
#include <span>
#include <vector>

#include "lpres/resnet.hpp"

namespace lpres {

enum class PsiKind { l2_squared, l1 };
enum class Relaxation { penalty, augmented_lagrangian };

struct BlockRange {
  int begin = 0;  // inclusive
  int end = 0;    // exclusive
  int size() const { return end - begin; }
  bool operator==(const BlockRange&) const = default;
};

/// Contiguous near-uniform split of L blocks into K stages; earlier stages take the remainder.
struct StagePlan {
  int stages = 1;
  int blocks = 1;
  std::vector<BlockRange> ranges;
};

StagePlan partition(int blocks, int stages);

struct PsiResult {
  double value = 0.0;
  Mat d_lambda;
  Mat d_x;
};

/// l2_squared: sum (lambda - x)^2.  l1: sum |lambda - x| with subgradient sign(lambda - x), sign(0) = 0.
PsiResult psi_value_and_grads(const Mat& lambda, const Mat& x, PsiKind kind);

/// Parameters owned by one stage. Stage 0 also owns S, stage K-1 also owns T.
struct StageParams {
  std::optional<AffineParams<double>> input_map;
  std::vector<BlockParams<double>> blocks;
  std::optional<AffineParams<double>> output_map;

  auto fields() { return std::tie(input_map, blocks, output_map); }
  auto fields() const { return std::tie(input_map, blocks, output_map); }
};

struct Stage {
  int index = 0;
  int count = 1;
  BlockRange range;
  double residual_scale = 1.0;
  StageParams params;

  bool first() const { return index == 0; }
  bool last() const { return index == count - 1; }
};

std::vector<Stage> split_model(const ResidualModel<double>& model, const StagePlan& plan);
ResidualModel<double> assemble_model(std::span<const Stage> stages);

struct StageTrace {
  std::optional<EmbedCache<double>> embed;  // stage 0 only
  Mat input;                                // lambda_k (for stage 0, S(y))
  std::vector<BlockCache<double>> caches;
  Mat output;                               // X^k_{kn+n}
};

/// Runs the stage's blocks from its auxiliary input. Stage 0 receives the raw
/// batch and applies S first, so lambda_0 = S(y).
StageTrace stage_forward(const Stage& stage, const Mat& input);

/// Per-batch auxiliary variables. lambdas[0] is S(y); kappas[0] stays zero.
struct AuxState {
  std::vector<Mat> lambdas;
  std::vector<Mat> kappas;
  double beta = 1.0;
  PsiKind psi = PsiKind::l2_squared;
  Relaxation mode = Relaxation::penalty;

  int stages() const { return static_cast<int>(lambdas.size()); }
};

struct StageLoss {
  double value = 0.0;
  Mat terminal_adjoint;                           // d value / d X_out
  std::optional<AffineParams<double>> head_grads;  // last stage: gradient of T
  Mat logits;                                     // last stage only
};

/// Local objective of stage k, averaged over the batch like phi:
///   k < K-1:  (beta psi(lambda_{k+1}, X_out) + <kappa_{k+1}, X_out>) / batch
///   k = K-1:  phi(T(X_out), labels)
StageLoss stage_local_loss(const Stage& stage, const Mat& X_out, const AuxState* aux, const std::vector<int>* labels);

struct StageGradients {
  StageParams grads;
  Mat input_adjoint;  // P^k_{kn}, d(local loss)/d lambda_k
};

/// Reverse sweep over the stage's blocks (and S on stage 0). Output-map
/// gradients, if the stage owns T, are left zero; they come from the loss.
StageGradients stage_backward(const Stage& stage, const StageTrace& trace, const Mat& terminal_adjoint);

/// stage_backward with T's gradient filled in from the loss.
StageGradients stage_gradients(const Stage& stage, const StageTrace& trace, const StageLoss& loss);

/// lambda_k <- lambda_k - eta (beta dpsi(lambda_k, X_prev)/dlambda + p_k - kappa_k).
/// `sample_adjoint` is the per-sample input adjoint of stage k (batch times the
/// gradient of its batch-averaged local loss).
void update_lambda(AuxState& aux, int k, const Mat& sample_adjoint, const Mat& X_prev_out, double eta);

/// kappa_k <- kappa_k - eta / (2 beta) (lambda_k - X_prev). Augmented Lagrangian mode only.
void update_kappa(AuxState& aux, int k, const Mat& X_prev_out, double eta);

struct ViolationReport {
  std::vector<double> per_interface;  // ||lambda_k - X^{k-1}_out|| for k = 1..K-1
  double mean = 0.0;
};

/// boundary_outputs[j] is stage j's output X^j_out.
ViolationReport constraint_violation(const AuxState& aux, std::span<const Mat> boundary_outputs);

}  // namespace lpres
