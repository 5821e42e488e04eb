#pragma once

#include <vector>

#include "lpres/data.hpp"
#include "lpres/optim.hpp"
#include "lpres/resnet.hpp"
#include "lpres/speedup.hpp"

namespace lpres {

struct SerialStep {
  double loss = 0.0;  // before the update
  int correct = 0;
  StepTiming timing;
};

/// One forward pass, full backward sweep, and SGD update of every parameter (S and T included).
SerialStep train_step_serial(ResidualModel<double>& model, ResidualModel<double>& velocity, const Batch& batch,
                             double eta, double momentum);

struct SerialEpoch {
  double mean_loss = 0.0;  // sample-weighted mean of pre-update batch losses
  double accuracy = 0.0;
  std::vector<StepTiming> steps;
  PhaseTimings timings;
  double seconds = 0.0;
};

/// Layer-serial baseline; single-threaded.
class SerialTrainer {
 public:
  SerialTrainer(ResidualModel<double> model, SgdConfig cfg);

  SerialEpoch train_epoch(const TrainingStream& stream, int epoch);

  const ResidualModel<double>& model() const { return model_; }
  ResidualModel<double>& model() { return model_; }
  long steps_taken() const { return step_; }
  double last_lr() const { return last_lr_; }

 private:
  ResidualModel<double> model_;
  ResidualModel<double> velocity_;
  SgdConfig cfg_;
  long step_ = 0;
  double last_lr_ = 0.0;
};

struct Evaluation {
  double loss = 0.0;
  double accuracy = 0.0;
};

/// Full layer-serial forward pass over a dataset, in chunks.
Evaluation evaluate(const ResidualModel<double>& model, const Dataset& data, int chunk = 256);

}  // namespace lpres
