#include "lpres/optim.hpp"

#include <cmath>
#include <numbers>
#include <string>

namespace lpres {

void SgdConfig::validate() const {
  if (!(eta0 >= 0.0)) throw ConfigError("sgd: initial learning rate must be >= 0");
  if (epochs < 1) throw ConfigError("sgd: epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("sgd: batch size must be >= 1");
  if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("sgd: momentum must lie in [0, 1)");
}

double cosine_lr(double eta0, long step, long total_steps) {
  if (total_steps < 1) throw InputError("cosine_lr: total_steps must be >= 1");
  if (step < 0 || step > total_steps) {
    throw InputError("cosine_lr: step " + std::to_string(step) + " outside [0, " + std::to_string(total_steps) + "]");
  }
  return eta0 * 0.5 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(step) / static_cast<double>(total_steps)));
}

double learning_rate(const SgdConfig& cfg, long step, long total_steps, int epoch) {
  switch (cfg.schedule) {
    case LrSchedule::cosine:
      return cosine_lr(cfg.eta0, step, total_steps);
    case LrSchedule::constant:
      return cfg.eta0;
    case LrSchedule::step: {
      double eta = cfg.eta0;
      for (int m : cfg.milestones) {
        if (epoch >= m) eta *= cfg.step_factor;
      }
      return eta;
    }
  }
  return cfg.eta0;
}

}  // namespace lpres
