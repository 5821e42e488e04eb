#include "lpres/parallel_trainer.hpp"

#include <chrono>
#include <cmath>
#include <limits>
#include <string>

namespace lpres {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::size_t smallest_fed_stage(const std::vector<Stage>& stages) {
  std::size_t smallest = std::numeric_limits<std::size_t>::max();
  for (std::size_t k = 1; k < stages.size(); ++k) smallest = std::min(smallest, parameter_count(stages[k].params));
  return smallest;
}

}  // namespace

double RateRule::resolve_lambda(double eta, double beta) const {
  switch (kind) {
    case Kind::tied: return eta;
    case Kind::fixed: return value;
    case Kind::exact: return 1.0 / (2.0 * beta);
    case Kind::balanced: return 1.0 / (4.0 * beta);
  }
  return eta;
}

double RateRule::resolve_kappa(double eta, double beta) const {
  switch (kind) {
    case Kind::tied: return eta;
    case Kind::fixed: return value;
    case Kind::exact:
    case Kind::balanced: return 4.0 * beta * beta;
  }
  return eta;
}

void ParallelConfig::validate() const {
  if (stages < 1) throw ConfigError("parallel.stages must be >= 1");
  if (!(beta > 0.0)) throw ConfigError("penalty.beta must be > 0");
  if (!(beta_gamma > 0.0)) throw ConfigError("penalty.beta_gamma must be > 0");
  if (beta_every < 0) throw ConfigError("penalty.beta_every must be >= 0");
  if (!(noise >= 0.0)) throw ConfigError("lambda.noise must be >= 0");
  if (workers < 1) throw ConfigError("train.threads must be >= 1");
  if (distill_steps < 1) throw ConfigError("auxnet.distill_steps must be >= 1");
  if (lambda_rate.kind == RateRule::Kind::fixed && !(lambda_rate.value >= 0.0)) {
    throw ConfigError("optim.lambda_lr must be >= 0");
  }
  if (kappa_rate.kind == RateRule::Kind::fixed && !(kappa_rate.value >= 0.0)) {
    throw ConfigError("optim.kappa_lr must be >= 0");
  }
  if (aux_lr && !(*aux_lr >= 0.0)) throw ConfigError("auxnet.lr must be >= 0");
  if (relaxation == Relaxation::augmented_lagrangian && source != LambdaSource::persistent) {
    throw ConfigError("augmented Lagrangian mode keeps stored multipliers and needs persistent lambdas");
  }
  if (source != LambdaSource::persistent && stages < 2) {
    throw ConfigError("AuxNet modes need at least two stages");
  }
}

double ParallelConfig::beta_at(int epoch) const {
  if (beta_every <= 0) return beta;
  return beta * std::pow(beta_gamma, epoch / beta_every);
}

PersistentAuxStore::PersistentAuxStore(int interfaces, Eigen::Index width, bool with_kappa)
    : interfaces_(interfaces), width_(width), with_kappa_(with_kappa) {}

std::size_t PersistentAuxStore::bytes() const {
  const std::size_t per_tensor = static_cast<std::size_t>(interfaces_) * static_cast<std::size_t>(width_) * sizeof(double);
  return entries_.size() * per_tensor * (with_kappa_ ? 2 : 1);
}

void PersistentAuxStore::insert(std::span<const std::uint64_t> ids, std::span<const Mat> boundaries) {
  if (static_cast<int>(boundaries.size()) != interfaces_) {
    throw DimensionError("aux store: expected " + std::to_string(interfaces_) + " interfaces");
  }
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (contains(ids[i])) continue;
    Entry e;
    e.lambda.resize(interfaces_, width_);
    for (int k = 0; k < interfaces_; ++k) e.lambda.row(k) = boundaries[static_cast<std::size_t>(k)].row(static_cast<Eigen::Index>(i));
    if (with_kappa_) e.kappa = Mat::Zero(interfaces_, width_);
    entries_.emplace(ids[i], std::move(e));
  }
}

void PersistentAuxStore::gather(std::span<const std::uint64_t> ids, std::vector<Mat>& lambdas,
                                std::vector<Mat>& kappas) const {
  const auto batch = static_cast<Eigen::Index>(ids.size());
  for (int k = 1; k <= interfaces_; ++k) {
    lambdas[static_cast<std::size_t>(k)].resize(batch, width_);
    if (with_kappa_) kappas[static_cast<std::size_t>(k)].resize(batch, width_);
  }
  for (Eigen::Index i = 0; i < batch; ++i) {
    auto it = entries_.find(ids[static_cast<std::size_t>(i)]);
    if (it == entries_.end()) throw UsageError("aux store: sample id " + std::to_string(ids[static_cast<std::size_t>(i)]) + " has no lambda");
    for (int k = 1; k <= interfaces_; ++k) {
      lambdas[static_cast<std::size_t>(k)].row(i) = it->second.lambda.row(k - 1);
      if (with_kappa_) kappas[static_cast<std::size_t>(k)].row(i) = it->second.kappa.row(k - 1);
    }
  }
}

void PersistentAuxStore::scatter(std::span<const std::uint64_t> ids, const std::vector<Mat>& lambdas,
                                 const std::vector<Mat>& kappas) {
  for (std::size_t i = 0; i < ids.size(); ++i) {
    auto& e = entries_.at(ids[i]);
    const auto row = static_cast<Eigen::Index>(i);
    for (int k = 1; k <= interfaces_; ++k) {
      e.lambda.row(k - 1) = lambdas[static_cast<std::size_t>(k)].row(row);
      if (with_kappa_) e.kappa.row(k - 1) = kappas[static_cast<std::size_t>(k)].row(row);
    }
  }
}

ParallelTrainer::ParallelTrainer(const ResidualModel<double>& model, SgdConfig sgd, ParallelConfig cfg)
    : sgd_(std::move(sgd)), cfg_(std::move(cfg)) {
  sgd_.validate();
  cfg_.validate();
  stages_ = split_model(model, partition(model.depth(), cfg_.stages));
  for (const auto& s : stages_) velocity_.push_back(zeros_like(s.params));
  const int interfaces = cfg_.stages - 1;
  const Eigen::Index width = model.width();
  if (cfg_.source == LambdaSource::persistent) {
    store_ = PersistentAuxStore(interfaces, width, cfg_.relaxation == Relaxation::augmented_lagrangian);
  } else {
    const Eigen::Index trunk_hidden = model.blocks.front().hidden();
    const Eigen::Index hidden = resolve_aux_hidden(cfg_.aux, width, trunk_hidden, smallest_fed_stage(stages_));
    SeededRng rng(SeededRng::derive(cfg_.seed, {0xA0C5ULL}));
    if (cfg_.source == LambdaSource::auxnet) {
      for (int k = 0; k < interfaces; ++k) auxnets_.push_back(make_auxnet(width, hidden, cfg_.aux.depth, rng));
    } else {
      reaux_ = ReAuxNet(cfg_.stages, width, hidden, cfg_.aux.depth, cfg_.reaux_shared_prefix, rng);
    }
  }
  pool_ = std::make_unique<WorkerPool>(cfg_.workers);
}

std::size_t ParallelTrainer::persistent_aux_bytes() const {
  switch (cfg_.source) {
    case LambdaSource::persistent: return store_.bytes();
    case LambdaSource::auxnet: {
      std::size_t n = 0;
      for (const auto& a : auxnets_) n += parameter_count(a);
      return n * sizeof(double);
    }
    case LambdaSource::reauxnet: return reaux_.parameter_count() * sizeof(double);
  }
  return 0;
}

Mat ParallelTrainer::embed_batch(const Mat& raw) const {
  return embed_forward(raw, *stages_.front().params.input_map).output;
}

void ParallelTrainer::warm_start(const Batch& batch) {
  std::vector<std::uint64_t> missing;
  std::vector<Eigen::Index> rows;
  for (std::size_t i = 0; i < batch.ids.size(); ++i) {
    if (!store_.contains(batch.ids[i])) {
      missing.push_back(batch.ids[i]);
      rows.push_back(static_cast<Eigen::Index>(i));
    }
  }
  if (missing.empty()) return;
  Mat X = batch.features(rows, Eigen::all);
  std::vector<Mat> boundaries;
  for (int k = 0; k + 1 < cfg_.stages; ++k) {
    X = stage_forward(stages_[static_cast<std::size_t>(k)], X).output;
    boundaries.push_back(X);
  }
  store_.insert(missing, boundaries);
}

ParallelStep ParallelTrainer::train_step(const Batch& batch, int epoch, double eta) {
  const auto step_start = Clock::now();
  const int K = cfg_.stages;
  const auto B = batch.size();
  const double beta = cfg_.beta_at(epoch);
  const Eigen::Index width = stages_.front().params.input_map->out_dim();

  ParallelStep out;
  out.lr = eta;
  out.beta = beta;
  out.timing.stage_forward.assign(static_cast<std::size_t>(K), 0.0);
  out.timing.stage_backward.assign(static_cast<std::size_t>(K), 0.0);

  AuxState aux;
  aux.beta = beta;
  aux.psi = cfg_.psi;
  aux.mode = cfg_.relaxation;
  aux.lambdas.resize(static_cast<std::size_t>(K));
  aux.kappas.assign(static_cast<std::size_t>(K), Mat());
  if (cfg_.relaxation == Relaxation::augmented_lagrangian) {
    for (auto& kappa : aux.kappas) kappa = Mat::Zero(B, width);
  }

  // Auxiliary inputs for this batch.
  Mat X0;
  auto t0 = Clock::now();
  switch (cfg_.source) {
    case LambdaSource::persistent:
      if (K > 1) {
        warm_start(batch);
        store_.gather(batch.ids, aux.lambdas, aux.kappas);
      }
      break;
    case LambdaSource::auxnet: {
      X0 = embed_batch(batch.features);
      aux.lambdas = generate_lambdas(X0, auxnets_);
      break;
    }
    case LambdaSource::reauxnet: {
      X0 = embed_batch(batch.features);
      aux.lambdas[0] = X0;
      pool_->run(K - 1, [&](int j) { aux.lambdas[static_cast<std::size_t>(j + 1)] = reaux_.forward(j + 1, X0); });
      break;
    }
  }
  out.timing.aux_forward = seconds_since(t0);
  const std::vector<Mat> generated = cfg_.source == LambdaSource::auxnet ? aux.lambdas : std::vector<Mat>{};

  // Phase A: decoupled local forward, loss, backward and update.
  struct Slot {
    Mat output;
    Mat input_adjoint;
    StageLoss loss;
    double psi_time = 0.0;
  };
  std::vector<Slot> slots(static_cast<std::size_t>(K));
  pool_->run(K, [&](int k) {
    auto& stage = stages_[static_cast<std::size_t>(k)];
    auto& slot = slots[static_cast<std::size_t>(k)];
    auto start = Clock::now();
    const Mat& input = k == 0 ? batch.features : aux.lambdas[static_cast<std::size_t>(k)];
    auto trace = stage_forward(stage, input);
    const auto loss_start = Clock::now();
    slot.loss = stage_local_loss(stage, trace.output, &aux, &batch.labels);
    if (!stage.last()) slot.psi_time = seconds_since(loss_start);
    out.timing.stage_forward[static_cast<std::size_t>(k)] = seconds_since(start);

    start = Clock::now();
    auto grads = stage_gradients(stage, trace, slot.loss);
    sgd_update(stage.params, grads.grads, eta, sgd_.momentum, velocity_[static_cast<std::size_t>(k)]);
    slot.input_adjoint = std::move(grads.input_adjoint);
    slot.output = std::move(trace.output);
    out.timing.stage_backward[static_cast<std::size_t>(k)] = seconds_since(start);
  });

  for (int k = 0; k < K; ++k) {
    const auto& slot = slots[static_cast<std::size_t>(k)];
    if (!std::isfinite(slot.loss.value) || !all_finite(stages_[static_cast<std::size_t>(k)].params)) {
      throw NumericError("non-finite loss or parameters in stage " + std::to_string(k) + " at epoch " +
                             std::to_string(epoch),
                         epoch, k);
    }
    out.stage_losses.push_back(slot.loss.value);
  }
  {
    const auto predicted = argmax_rows(slots.back().loss.logits);
    for (std::size_t i = 0; i < batch.labels.size(); ++i) out.correct += predicted[i] == batch.labels[i];
  }

  // Phase B: communication and correction of the auxiliary variables.
  t0 = Clock::now();
  const double lambda_eta = cfg_.lambda_rate.resolve_lambda(eta, beta);
  const double kappa_eta = cfg_.kappa_rate.resolve_kappa(eta, beta);
  std::vector<Mat> signals;
  for (int k = 1; k < K; ++k) {
    const auto ku = static_cast<std::size_t>(k);
    const Mat& x_prev = slots[ku - 1].output;
    const double sq = (aux.lambdas[ku] - x_prev).squaredNorm();
    out.violation_sq.push_back(sq);
    out.violations.push_back(std::sqrt(sq));

    const Mat sample_adjoint = static_cast<double>(B) * slots[ku].input_adjoint;
    if (cfg_.source == LambdaSource::reauxnet) {
      auto psi = psi_value_and_grads(aux.lambdas[ku], x_prev, cfg_.psi);
      signals.push_back(beta * psi.d_lambda + sample_adjoint);
      out.distill_losses.push_back(lambda_eta * lambda_eta * signals.back().squaredNorm() / static_cast<double>(B));
      continue;
    }
    update_lambda(aux, k, sample_adjoint, x_prev, lambda_eta);
    if (cfg_.relaxation == Relaxation::augmented_lagrangian) update_kappa(aux, k, x_prev, kappa_eta);
    if (cfg_.noise > 0.0) {
      SeededRng rng(SeededRng::derive(cfg_.seed, {static_cast<std::uint64_t>(epoch),
                                                  static_cast<std::uint64_t>(step_), static_cast<std::uint64_t>(k)}));
      aux.lambdas[ku] += randn<double>(B, width, rng, cfg_.noise);
    }
    if (!aux.lambdas[ku].allFinite()) {
      throw NumericError("non-finite auxiliary variable at interface " + std::to_string(k), epoch, k);
    }
  }
  if (cfg_.source == LambdaSource::persistent && K > 1) store_.scatter(batch.ids, aux.lambdas, aux.kappas);
  double local_psi = 0.0;
  for (const auto& slot : slots) local_psi = std::max(local_psi, slot.psi_time);
  out.timing.psi = seconds_since(t0) + local_psi;

  // Distillation of the generators against the corrected lambdas.
  t0 = Clock::now();
  // lambda_eta * signal is the lambda correction, so a ReAuxNet step of 2 eta lambda_eta descends
  // ||lambda_k(X0) - corrected lambda_k||^2 at the trunk rate, as the AuxNet chain does.
  const double aux_eta =
      cfg_.aux_lr.value_or(cfg_.source == LambdaSource::reauxnet ? 2.0 * eta * lambda_eta : eta);
  if (cfg_.source == LambdaSource::auxnet) {
    out.distill_losses.assign(static_cast<std::size_t>(K - 1), 0.0);
    pool_->run(K - 1, [&](int j) {
      const auto ju = static_cast<std::size_t>(j);
      auto result = distill_step(auxnets_[ju], generated[ju], aux.lambdas[ju + 1], aux_eta, cfg_.distill_steps);
      out.distill_losses[ju] = result.initial_loss;
    });
  } else if (cfg_.source == LambdaSource::reauxnet) {
    std::vector<ReAuxNet::Gradient> grads(static_cast<std::size_t>(K - 1));
    pool_->run(K - 1, [&](int j) {
      grads[static_cast<std::size_t>(j)] = reaux_.gradient(j + 1, X0, signals[static_cast<std::size_t>(j)]);
    });
    reaux_.apply(grads, aux_eta);
  }
  out.timing.aux_backward = seconds_since(t0);

  ++step_;
  out.timing.wall = seconds_since(step_start);
  return out;
}

ParallelEpoch ParallelTrainer::train_epoch(const TrainingStream& stream, int epoch) {
  const auto epoch_start = Clock::now();
  const long total = static_cast<long>(sgd_.epochs) * static_cast<long>(stream.batches_per_epoch());
  const int interfaces = cfg_.stages - 1;
  ParallelEpoch out;
  std::vector<double> sq(static_cast<std::size_t>(interfaces), 0.0);
  double loss_sum = 0.0;
  double distill_sum = 0.0;
  long correct = 0;
  long seen = 0;
  for (const auto& rows : stream.epoch_order(epoch)) {
    const auto t0 = Clock::now();
    const Batch batch = stream.load(rows, epoch);
    const double load = seconds_since(t0);

    out.lr = learning_rate(sgd_, std::min(step_, total), total, epoch);
    auto step = train_step(batch, epoch, out.lr);
    step.timing.data_load = load;
    step.timing.wall += load;
    out.beta = step.beta;

    const auto n = static_cast<double>(batch.size());
    loss_sum += step.stage_losses.back() * n;
    correct += step.correct;
    seen += batch.size();
    for (int k = 0; k < interfaces; ++k) sq[static_cast<std::size_t>(k)] += step.violation_sq[static_cast<std::size_t>(k)];
    if (!step.distill_losses.empty()) {
      double s = 0.0;
      for (double v : step.distill_losses) s += v;
      distill_sum += n * s / static_cast<double>(step.distill_losses.size());
    }
    out.steps.push_back(std::move(step.timing));
  }
  out.mean_loss = loss_sum / static_cast<double>(seen);
  out.accuracy = static_cast<double>(correct) / static_cast<double>(seen);
  out.distill_loss = distill_sum / static_cast<double>(seen);
  for (double s : sq) {
    const double rms = std::sqrt(s / static_cast<double>(seen));
    out.violation_rms.push_back(rms);
    out.violation_mean += rms / static_cast<double>(interfaces);
    out.violation_max = std::max(out.violation_max, rms);
  }
  out.timings = measure_phases(out.steps);
  out.seconds = seconds_since(epoch_start);
  return out;
}

}  // namespace lpres
