#include "lpres/speedup.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "lpres/errors.hpp"

namespace lpres {

void PhaseTimings::validate() const {
  for (double v : {data_load, forward, backward, psi, aux_forward, aux_backward}) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw InputError("phase timings must be finite and non-negative");
  }
}

double predict_speedup(const PhaseTimings& t, int stages) {
  if (stages < 1) throw InputError("predict_speedup: stage count must be >= 1");
  t.validate();
  const double serial = t.serial_total();
  if (!(t.forward + t.backward > 0.0)) throw InputError("predict_speedup: T_f + T_b must be positive");
  const double parallel_share = (t.forward + t.backward) / (static_cast<double>(stages) * serial);
  const double overhead_share = t.overhead() / serial;
  return 1.0 / (parallel_share + overhead_share);
}

SpeedupBound speedup_upper_bound(const PhaseTimings& t) {
  t.validate();
  const double serial = t.serial_total();
  if (!(serial > 0.0)) throw InputError("speedup_upper_bound: T_d + T_f + T_b must be positive");
  const double overhead = t.overhead();
  if (overhead == 0.0) return {std::numeric_limits<double>::infinity(), true};
  return {serial / overhead, false};
}

PhaseTimings measure_phases(std::span<const StepTiming> records) {
  if (records.empty()) throw IncompleteMetricsError("measure_phases: no step records");
  const std::size_t stages = records.front().stage_forward.size();
  PhaseTimings out;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    if (r.stage_forward.empty() || r.stage_forward.size() != stages || r.stage_backward.size() != stages) {
      throw IncompleteMetricsError("measure_phases: step record " + std::to_string(i) +
                                   " lacks per-stage forward/backward stamps");
    }
    out.data_load += r.data_load;
    for (std::size_t k = 0; k < stages; ++k) {
      out.forward += r.stage_forward[k];
      out.backward += r.stage_backward[k];
    }
    out.psi += r.psi;
    out.aux_forward += r.aux_forward;
    out.aux_backward += r.aux_backward;
  }
  out.validate();
  return out;
}

}  // namespace lpres
