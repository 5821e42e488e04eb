#include "lpres/gradcheck.hpp"

#include <algorithm>

#include "lpres/auxnet.hpp"
#include "lpres/stage.hpp"

namespace lpres {

namespace {

constexpr Eigen::Index kRawDim = 3;
constexpr Eigen::Index kClasses = 3;

template <typename Params>
void randomize(Params& params, SeededRng& rng, double scale) {
  zip_fields([&](auto& t) { t = randn<double>(t.rows(), t.cols(), rng, scale); }, params);
}

// Worst relative error between analytic `grads` and central differences of
// `loss` with respect to each tensor of `params`.
template <typename Params, typename Loss>
double check_params(Params& params, const Params& grads, Loss&& loss, double h) {
  double worst = 0.0;
  zip_fields([&](auto& w, const auto& g) { worst = std::max(worst, relative_error(finite_diff_grad_inplace(loss, w, h), g)); },
             params, grads);
  return worst;
}

std::vector<int> random_labels(Eigen::Index batch, SeededRng& rng) {
  std::vector<int> labels;
  for (Eigen::Index i = 0; i < batch; ++i) labels.push_back(static_cast<int>(rng.below(kClasses)));
  return labels;
}

ResidualModel<double> random_model(int depth, Eigen::Index width, SeededRng& rng) {
  ModelSpec spec{kRawDim, width, width, kClasses, depth, 1.0};
  auto model = ResidualModel<double>::zeros(spec);
  randomize(model, rng, 0.5);
  return model;
}

double check_serial(int depth, Eigen::Index width, Eigen::Index batch, SeededRng& rng, double h) {
  auto model = random_model(depth, width, rng);
  const Mat y = randn<double>(batch, kRawDim, rng);
  const auto labels = random_labels(batch, rng);
  const auto analytic = model_loss_and_grad<double>(model, y, labels).grads;
  auto loss = [&] { return loss_phi<double>(net_forward(model, y).logits, labels).loss; };
  return check_params(model, analytic, loss, h);
}

double check_stages(int depth, Eigen::Index width, Eigen::Index batch, Relaxation mode, SeededRng& rng, double h) {
  auto model = random_model(depth, width, rng);
  auto stages = split_model(model, partition(depth, 2));
  const Mat y = randn<double>(batch, kRawDim, rng);
  const auto labels = random_labels(batch, rng);
  AuxState aux;
  aux.beta = 3.0;
  aux.mode = mode;
  aux.lambdas = {Mat(), randn<double>(batch, width, rng)};
  aux.kappas = {Mat::Zero(batch, width), mode == Relaxation::augmented_lagrangian ? randn<double>(batch, width, rng)
                                                                                    : Mat(Mat::Zero(batch, width))};
  double worst = 0.0;
  for (auto& stage : stages) {
    Mat input = stage.first() ? y : aux.lambdas[1];
    auto local = [&] {
      return stage_local_loss(stage, stage_forward(stage, input).output, &aux, &labels).value;
    };
    const auto trace = stage_forward(stage, input);
    const auto grads = stage_gradients(stage, trace, stage_local_loss(stage, trace.output, &aux, &labels));
    worst = std::max(worst, check_params(stage.params, grads.grads, local, h));
    if (!stage.first()) worst = std::max(worst, relative_error(finite_diff_grad_inplace(local, input, h), grads.input_adjoint));
  }
  return worst;
}

double check_distill(Eigen::Index width, Eigen::Index batch, SeededRng& rng, double h) {
  auto theta = make_auxnet(width, std::max<Eigen::Index>(1, width / 2), 2, rng);
  randomize(theta, rng, 0.5);
  const Mat in = randn<double>(batch, width, rng);
  const Mat target = randn<double>(batch, width, rng);
  const auto analytic = distill_gradient(theta, in, target).grads;
  auto loss = [&] { return distill_loss(theta, in, target); };
  return check_params(theta, analytic, loss, h);
}

// Composite objective of interface k: (beta/B) psi(ReAux_k(X0), X_prev) plus
// the local loss of stage k fed with ReAux_k(X0).
double check_reauxnet(int depth, Eigen::Index width, Eigen::Index batch, SeededRng& rng, double h) {
  const int K = std::min(3, depth);
  auto model = random_model(depth, width, rng);
  const auto stages = split_model(model, partition(depth, K));
  ReAuxNet reaux(K, width, std::max<Eigen::Index>(1, width / 2), 1, false, rng);
  for (auto& s : reaux.segments()) randomize(s, rng, 0.5);
  const Mat X0 = randn<double>(batch, width, rng);
  const auto labels = random_labels(batch, rng);
  AuxState aux;
  aux.beta = 2.0;
  aux.lambdas.assign(static_cast<std::size_t>(K), Mat());
  for (int k = 1; k < K; ++k) aux.lambdas[static_cast<std::size_t>(k)] = randn<double>(batch, width, rng);
  const Mat x_prev = randn<double>(batch, width, rng);
  const double inv_batch = 1.0 / static_cast<double>(batch);

  double worst = 0.0;
  for (int k = 1; k < K; ++k) {
    const auto& stage = stages[static_cast<std::size_t>(k)];
    auto composite = [&] {
      const Mat lambda = reaux.forward(k, X0);
      const double penalty = aux.beta * psi_value_and_grads(lambda, x_prev, aux.psi).value * inv_batch;
      return penalty + stage_local_loss(stage, stage_forward(stage, lambda).output, &aux, &labels).value;
    };
    const Mat lambda = reaux.forward(k, X0);
    const auto trace = stage_forward(stage, lambda);
    const auto local = stage_gradients(stage, trace, stage_local_loss(stage, trace.output, &aux, &labels));
    const Mat signal = aux.beta * psi_value_and_grads(lambda, x_prev, aux.psi).d_lambda +
                       static_cast<double>(batch) * local.input_adjoint;
    const auto g = reaux.gradient(k, X0, signal);
    for (std::size_t j = 0; j < g.segment_ids.size(); ++j) {
      worst = std::max(worst, check_params(reaux.segments()[g.segment_ids[j]], g.grads[j], composite, h));
    }
  }
  return worst;
}

}  // namespace

bool GradCheckReport::passed() const {
  return std::all_of(cases.begin(), cases.end(), [](const GradCheckCase& c) { return c.passed; });
}

double GradCheckReport::worst() const {
  double w = 0.0;
  for (const auto& c : cases) w = std::max(w, c.rel_error);
  return w;
}

GradCheckReport run_gradcheck(const GradCheckOptions& opts) {
  GradCheckReport report;
  report.tolerance = opts.tolerance;
  auto record = [&](std::string name, double err) {
    report.cases.push_back({std::move(name), err, err <= opts.tolerance});
  };
  for (int L : opts.depths) {
    for (int d : opts.widths) {
      for (int B : opts.batches) {
        const std::string tag = " L=" + std::to_string(L) + " d=" + std::to_string(d) + " B=" + std::to_string(B);
        SeededRng rng(SeededRng::derive(opts.seed, {static_cast<std::uint64_t>(L), static_cast<std::uint64_t>(d),
                                                    static_cast<std::uint64_t>(B)}));
        record("serial" + tag, check_serial(L, d, B, rng, opts.h));
        record("stage-penalty" + tag, check_stages(L, d, B, Relaxation::penalty, rng, opts.h));
        record("stage-al" + tag, check_stages(L, d, B, Relaxation::augmented_lagrangian, rng, opts.h));
        record("auxnet-distill" + tag, check_distill(d, B, rng, opts.h));
        record("reauxnet" + tag, check_reauxnet(L, d, B, rng, opts.h));
      }
    }
  }
  return report;
}

}  // namespace lpres
