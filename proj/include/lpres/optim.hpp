#pragma once

#include <vector>

#include "lpres/tensor.hpp"

namespace lpres {

enum class LrSchedule { cosine, constant, step };

struct SgdConfig {
  double eta0 = 0.05;
  int epochs = 1;
  int batch_size = 32;
  LrSchedule schedule = LrSchedule::cosine;
  std::vector<int> milestones;  // epochs at which a step schedule multiplies by step_factor
  double step_factor = 0.1;
  double momentum = 0.0;

  void validate() const;
};

/// eta0 * (1 + cos(pi * step / total_steps)) / 2
double cosine_lr(double eta0, long step, long total_steps);

/// Learning rate for global step `step` (0-based) within `epoch` (0-based).
double learning_rate(const SgdConfig& cfg, long step, long total_steps, int epoch);

/// v <- momentum * v + g;  W <- W - eta * v.  With momentum 0 this is W <- W - eta * g.
template <typename Params>
void sgd_update(Params& params, const Params& grads, double eta, double momentum, Params& velocity) {
  if (momentum == 0.0) {
    zip_fields([&](auto& w, const auto& g) {
      if (w.rows() != g.rows() || w.cols() != g.cols()) {
        throw DimensionError("sgd_update: parameter " + shape_of(w) + " vs gradient " + shape_of(g));
      }
      w -= eta * g;
    }, params, grads);
    return;
  }
  zip_fields([&](auto& w, const auto& g, auto& v) {
    if (w.rows() != g.rows() || w.cols() != g.cols() || v.rows() != w.rows() || v.cols() != w.cols()) {
      throw DimensionError("sgd_update: parameter " + shape_of(w) + " vs gradient " + shape_of(g));
    }
    v = momentum * v + g;
    w -= eta * v;
  }, params, grads, velocity);
}

/// Plain gradient step without state.
template <typename Params>
void sgd_update(Params& params, const Params& grads, double eta) {
  zip_fields([&](auto& w, const auto& g) {
    if (w.rows() != g.rows() || w.cols() != g.cols()) {
      throw DimensionError("sgd_update: parameter " + shape_of(w) + " vs gradient " + shape_of(g));
    }
    w -= eta * g;
  }, params, grads);
}

}  // namespace lpres
