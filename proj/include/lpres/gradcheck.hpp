#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace lpres {

struct GradCheckOptions {
  std::uint64_t seed = 1;
  double h = 1e-5;
  double tolerance = 1e-6;
  std::vector<int> depths{2, 4, 6};
  std::vector<int> widths{4, 8};
  std::vector<int> batches{1, 3};
};

struct GradCheckCase {
  std::string name;
  double rel_error = 0.0;  // worst tensor-wise relative error in the case
  bool passed = false;
};

struct GradCheckReport {
  std::vector<GradCheckCase> cases;
  double tolerance = 0.0;

  bool passed() const;
  double worst() const;
};

/// Central-difference check of every analytic gradient: serial backprop,
/// stage-local losses (penalty and augmented Lagrangian, parameters and input
/// adjoint), AuxNet distillation and the ReAuxNet composite objective, over
/// all combinations of depth, width and batch size in `opts`.
GradCheckReport run_gradcheck(const GradCheckOptions& opts = {});

}  // namespace lpres
