#pragma once

#include <span>
#include <vector>

namespace lpres {

/// Per-epoch phase durations in seconds.
struct PhaseTimings {
  double data_load = 0.0;     // T_d
  double forward = 0.0;       // T_f
  double backward = 0.0;      // T_b
  double psi = 0.0;           // t_psi: interface losses and auxiliary-variable correction
  double aux_forward = 0.0;   // t_f^(lambda)
  double aux_backward = 0.0;  // t_b^(lambda)

  void validate() const;
  double serial_total() const { return data_load + forward + backward; }
  double overhead() const { return data_load + psi + aux_forward + aux_backward; }
};

/// rho = 1 / ( (T_f+T_b) / (K (T_d+T_f+T_b)) + (T_d+t_psi+t_f+t_b) / (T_d+T_f+T_b) )
double predict_speedup(const PhaseTimings& t, int stages);

struct SpeedupBound {
  double value;    // +inf when unbounded
  bool unbounded;
};

/// (T_d+T_f+T_b) / (T_d+t_psi+t_f+t_b); unbounded when the overhead is zero.
SpeedupBound speedup_upper_bound(const PhaseTimings& t);

/// Wall-clock stamps of one training step. Stage vectors hold one entry per
/// stage (a single entry for serial training).
struct StepTiming {
  double data_load = 0.0;
  std::vector<double> stage_forward;
  std::vector<double> stage_backward;
  double psi = 0.0;
  double aux_forward = 0.0;
  double aux_backward = 0.0;
  double wall = 0.0;
};

/// Sums step stamps into epoch timings. Forward and backward totals are K
/// times the per-stage mean, i.e. the work the stages did, not the wall time.
PhaseTimings measure_phases(std::span<const StepTiming> records);

}  // namespace lpres
