#include "lpres/serial_trainer.hpp"

#include <chrono>

namespace lpres {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

int count_correct(const Mat& logits, const std::vector<int>& labels) {
  const auto predicted = argmax_rows(logits);
  int correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) correct += predicted[i] == labels[i];
  return correct;
}

}  // namespace

SerialStep train_step_serial(ResidualModel<double>& model, ResidualModel<double>& velocity, const Batch& batch,
                             double eta, double momentum) {
  SerialStep step;
  step.timing.stage_forward.assign(1, 0.0);
  step.timing.stage_backward.assign(1, 0.0);

  auto t0 = Clock::now();
  auto trace = net_forward(model, batch.features);
  auto phi = loss_phi<double>(trace.logits, batch.labels);
  step.timing.stage_forward[0] = seconds_since(t0);

  t0 = Clock::now();
  auto grads = net_backward(model, trace, phi.grad);
  sgd_update(model, grads, eta, momentum, velocity);
  step.timing.stage_backward[0] = seconds_since(t0);

  step.loss = phi.loss;
  step.correct = count_correct(trace.logits, batch.labels);
  return step;
}

SerialTrainer::SerialTrainer(ResidualModel<double> model, SgdConfig cfg)
    : model_(std::move(model)), velocity_(zeros_like(model_)), cfg_(std::move(cfg)) {
  cfg_.validate();
}

SerialEpoch SerialTrainer::train_epoch(const TrainingStream& stream, int epoch) {
  const auto epoch_start = Clock::now();
  const long total = static_cast<long>(cfg_.epochs) * static_cast<long>(stream.batches_per_epoch());
  SerialEpoch out;
  double loss_sum = 0.0;
  long correct = 0;
  long seen = 0;
  for (const auto& rows : stream.epoch_order(epoch)) {
    const auto t0 = Clock::now();
    const Batch batch = stream.load(rows, epoch);
    const double load = seconds_since(t0);

    last_lr_ = learning_rate(cfg_, std::min(step_, total), total, epoch);
    auto step = train_step_serial(model_, velocity_, batch, last_lr_, cfg_.momentum);
    ++step_;
    step.timing.data_load = load;
    step.timing.wall = seconds_since(t0);

    loss_sum += step.loss * static_cast<double>(batch.size());
    correct += step.correct;
    seen += batch.size();
    out.steps.push_back(std::move(step.timing));
  }
  out.mean_loss = loss_sum / static_cast<double>(seen);
  out.accuracy = static_cast<double>(correct) / static_cast<double>(seen);
  out.timings = measure_phases(out.steps);
  out.seconds = seconds_since(epoch_start);
  return out;
}

Evaluation evaluate(const ResidualModel<double>& model, const Dataset& data, int chunk) {
  Evaluation out;
  if (data.size() == 0) return out;
  double loss_sum = 0.0;
  long correct = 0;
  const auto n = static_cast<Eigen::Index>(data.size());
  for (Eigen::Index start = 0; start < n; start += chunk) {
    const Eigen::Index len = std::min<Eigen::Index>(chunk, n - start);
    const Mat x = data.features.middleRows(start, len);
    const std::vector<int> labels(data.labels.begin() + start, data.labels.begin() + start + len);
    const auto trace = net_forward(model, x);
    loss_sum += loss_phi<double>(trace.logits, labels).loss * static_cast<double>(len);
    correct += count_correct(trace.logits, labels);
  }
  out.loss = loss_sum / static_cast<double>(n);
  out.accuracy = static_cast<double>(correct) / static_cast<double>(n);
  return out;
}

}  // namespace lpres
