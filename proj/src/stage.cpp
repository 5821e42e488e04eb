#include "lpres/stage.hpp"

#include <string>

namespace lpres {

StagePlan partition(int blocks, int stages) {
  if (stages < 1 || blocks < 1) throw InputError("partition: need L >= 1 and K >= 1");
  if (stages > blocks) {
    throw InputError("partition: K=" + std::to_string(stages) + " exceeds L=" + std::to_string(blocks));
  }
  StagePlan plan{stages, blocks, {}};
  const int base = blocks / stages;
  const int extra = blocks % stages;
  int begin = 0;
  for (int k = 0; k < stages; ++k) {
    const int size = base + (k < extra ? 1 : 0);
    plan.ranges.push_back({begin, begin + size});
    begin += size;
  }
  return plan;
}

PsiResult psi_value_and_grads(const Mat& lambda, const Mat& x, PsiKind kind) {
  if (lambda.rows() != x.rows() || lambda.cols() != x.cols()) {
    throw DimensionError("psi: lambda " + shape_of(lambda) + " vs x " + shape_of(x));
  }
  const Mat diff = lambda - x;
  PsiResult out;
  switch (kind) {
    case PsiKind::l2_squared:
      out.value = diff.squaredNorm();
      out.d_lambda = 2.0 * diff;
      break;
    case PsiKind::l1:
      out.value = diff.cwiseAbs().sum();
      out.d_lambda = diff.unaryExpr([](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
      break;
  }
  out.d_x = -out.d_lambda;
  return out;
}

std::vector<Stage> split_model(const ResidualModel<double>& model, const StagePlan& plan) {
  if (plan.blocks != model.depth()) {
    throw InputError("split_model: plan covers " + std::to_string(plan.blocks) + " blocks, model has " +
                     std::to_string(model.depth()));
  }
  std::vector<Stage> stages;
  for (int k = 0; k < plan.stages; ++k) {
    Stage s;
    s.index = k;
    s.count = plan.stages;
    s.range = plan.ranges[static_cast<std::size_t>(k)];
    s.residual_scale = model.residual_scale;
    if (k == 0) s.params.input_map = model.input_map;
    s.params.blocks.assign(model.blocks.begin() + s.range.begin, model.blocks.begin() + s.range.end);
    if (k == plan.stages - 1) s.params.output_map = model.output_map;
    stages.push_back(std::move(s));
  }
  return stages;
}

ResidualModel<double> assemble_model(std::span<const Stage> stages) {
  if (stages.empty() || !stages.front().params.input_map || !stages.back().params.output_map) {
    throw UsageError("assemble_model: stages must start with S and end with T");
  }
  ResidualModel<double> model;
  model.input_map = *stages.front().params.input_map;
  model.output_map = *stages.back().params.output_map;
  model.residual_scale = stages.front().residual_scale;
  for (const auto& s : stages) {
    model.blocks.insert(model.blocks.end(), s.params.blocks.begin(), s.params.blocks.end());
  }
  return model;
}

StageTrace stage_forward(const Stage& stage, const Mat& input) {
  StageTrace trace;
  Mat X;
  if (stage.params.input_map) {
    auto embedded = embed_forward(input, *stage.params.input_map);
    trace.embed = std::move(embedded.cache);
    X = std::move(embedded.output);
  } else {
    X = input;
  }
  const Eigen::Index width = stage.params.blocks.empty() ? X.cols() : stage.params.blocks.front().width();
  if (X.cols() != width) {
    throw DimensionError("stage_forward: stage " + std::to_string(stage.index) + " input " + shape_of(X) +
                         " vs width " + std::to_string(width));
  }
  trace.input = X;
  trace.caches.reserve(stage.params.blocks.size());
  for (const auto& block : stage.params.blocks) {
    auto step = block_forward(X, block, stage.residual_scale);
    trace.caches.push_back(std::move(step.cache));
    X = std::move(step.output);
  }
  trace.output = std::move(X);
  return trace;
}

StageLoss stage_local_loss(const Stage& stage, const Mat& X_out, const AuxState* aux, const std::vector<int>* labels) {
  StageLoss out;
  if (stage.last()) {
    if (labels == nullptr) throw UsageError("stage_local_loss: last stage needs labels");
    if (!stage.params.output_map) throw UsageError("stage_local_loss: last stage does not own T");
    const auto& T = *stage.params.output_map;
    out.logits = affine<double>(X_out, T.weight, T.bias);
    auto phi = loss_phi<double>(out.logits, *labels);
    auto head = head_backward(X_out, T, phi.grad);
    out.value = phi.loss;
    out.terminal_adjoint = std::move(head.input_adjoint);
    out.head_grads = std::move(head.grads);
    return out;
  }
  const auto next = static_cast<std::size_t>(stage.index + 1);
  if (aux == nullptr || aux->lambdas.size() <= next) {
    throw UsageError("stage_local_loss: stage " + std::to_string(stage.index) + " needs lambda_" + std::to_string(next));
  }
  const double inv_batch = 1.0 / static_cast<double>(X_out.rows());
  auto psi = psi_value_and_grads(aux->lambdas[next], X_out, aux->psi);
  out.value = aux->beta * psi.value;
  out.terminal_adjoint = aux->beta * psi.d_x;
  if (aux->mode == Relaxation::augmented_lagrangian) {
    if (aux->kappas.size() <= next) throw UsageError("stage_local_loss: missing kappa_" + std::to_string(next));
    const Mat& kappa = aux->kappas[next];
    out.value += kappa.cwiseProduct(X_out).sum();
    out.terminal_adjoint += kappa;
  }
  out.value *= inv_batch;
  out.terminal_adjoint *= inv_batch;
  return out;
}

StageGradients stage_backward(const Stage& stage, const StageTrace& trace, const Mat& terminal_adjoint) {
  if (trace.caches.size() != stage.params.blocks.size()) {
    throw UsageError("stage_backward: trace holds " + std::to_string(trace.caches.size()) + " caches for " +
                     std::to_string(stage.params.blocks.size()) + " blocks");
  }
  if (terminal_adjoint.rows() != trace.output.rows() || terminal_adjoint.cols() != trace.output.cols()) {
    throw DimensionError("stage_backward: adjoint " + shape_of(terminal_adjoint) + " vs output " +
                         shape_of(trace.output));
  }
  StageGradients out;
  out.grads.blocks.resize(stage.params.blocks.size());
  Mat P = terminal_adjoint;
  for (std::size_t m = stage.params.blocks.size(); m-- > 0;) {
    auto back = block_backward(trace.caches[m], stage.params.blocks[m], P, stage.residual_scale);
    out.grads.blocks[m] = std::move(back.grads);
    P = std::move(back.input_adjoint);
  }
  if (stage.params.input_map) {
    if (!trace.embed) throw UsageError("stage_backward: stage 0 trace lacks the S cache");
    out.grads.input_map = embed_backward(*trace.embed, P);
  }
  if (stage.params.output_map) out.grads.output_map = zeros_like(*stage.params.output_map);
  out.input_adjoint = std::move(P);
  return out;
}

StageGradients stage_gradients(const Stage& stage, const StageTrace& trace, const StageLoss& loss) {
  auto out = stage_backward(stage, trace, loss.terminal_adjoint);
  if (stage.params.output_map) {
    if (!loss.head_grads) throw UsageError("stage_gradients: last-stage loss carries no T gradient");
    out.grads.output_map = *loss.head_grads;
  }
  return out;
}

void update_lambda(AuxState& aux, int k, const Mat& sample_adjoint, const Mat& X_prev_out, double eta) {
  if (k < 1 || k >= aux.stages()) {
    throw UsageError("update_lambda: k=" + std::to_string(k) + " outside 1..K-1 (lambda_0 is pinned to S(y))");
  }
  Mat& lambda = aux.lambdas[static_cast<std::size_t>(k)];
  if (sample_adjoint.rows() != lambda.rows() || sample_adjoint.cols() != lambda.cols()) {
    throw DimensionError("update_lambda: adjoint " + shape_of(sample_adjoint) + " vs lambda " + shape_of(lambda));
  }
  auto psi = psi_value_and_grads(lambda, X_prev_out, aux.psi);
  Mat direction = aux.beta * psi.d_lambda + sample_adjoint;
  if (aux.mode == Relaxation::augmented_lagrangian) direction -= aux.kappas[static_cast<std::size_t>(k)];
  lambda -= eta * direction;
}

void update_kappa(AuxState& aux, int k, const Mat& X_prev_out, double eta) {
  if (aux.mode != Relaxation::augmented_lagrangian) {
    throw UsageError("update_kappa: multipliers are frozen at zero in penalty mode");
  }
  if (k < 1 || k >= aux.stages()) throw UsageError("update_kappa: k=" + std::to_string(k) + " outside 1..K-1");
  const Mat& lambda = aux.lambdas[static_cast<std::size_t>(k)];
  if (X_prev_out.rows() != lambda.rows() || X_prev_out.cols() != lambda.cols()) {
    throw DimensionError("update_kappa: X_prev " + shape_of(X_prev_out) + " vs lambda " + shape_of(lambda));
  }
  aux.kappas[static_cast<std::size_t>(k)] -= (eta / (2.0 * aux.beta)) * (lambda - X_prev_out);
}

ViolationReport constraint_violation(const AuxState& aux, std::span<const Mat> boundary_outputs) {
  ViolationReport out;
  for (int k = 1; k < aux.stages(); ++k) {
    const auto& lambda = aux.lambdas[static_cast<std::size_t>(k)];
    const auto& x = boundary_outputs[static_cast<std::size_t>(k - 1)];
    out.per_interface.push_back((lambda - x).norm());
  }
  if (!out.per_interface.empty()) {
    double sum = 0.0;
    for (double v : out.per_interface) sum += v;
    out.mean = sum / static_cast<double>(out.per_interface.size());
  }
  return out;
}

}  // namespace lpres
