#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <unordered_map>
#include <vector>

#include "lpres/auxnet.hpp"
#include "lpres/data.hpp"
#include "lpres/optim.hpp"
#include "lpres/speedup.hpp"
#include "lpres/stage.hpp"
#include "lpres/worker_pool.hpp"

namespace lpres {

/// Where the stages' auxiliary inputs come from.
enum class LambdaSource {
  persistent,  // one stored lambda (and kappa) per presented sample view
  auxnet,      // regenerated per batch by the AuxNet chain
  reauxnet,    // regenerated per batch by recursive AuxNets from X0
};

/// Step size of the lambda or kappa correction.
///   tied:     the trunk's current learning rate
///   fixed:    `value`
///   exact:    lambda: 1/(2 beta), the stationary point of the l2 correction
///             with p held fixed; kappa: 4 beta^2, i.e. kappa -= 2 beta (lambda - x)
///   balanced: lambda: 1/(4 beta), the Newton step when lambda_k also feeds a
///             penalized stage whose Jacobian is near the identity; kappa as exact
///
/// An interior lambda_k sits in two penalty terms, so its Hessian is about
/// 2 beta (I + J^T J). The exact step then iterates with gain -J^T J and drifts
/// once the stage's singular values reach 1; the balanced step has gain
/// (I - J^T J) / 2.
struct RateRule {
  enum class Kind { tied, fixed, exact, balanced };
  Kind kind = Kind::tied;
  double value = 0.0;

  double resolve_lambda(double eta, double beta) const;
  double resolve_kappa(double eta, double beta) const;
};

struct ParallelConfig {
  int stages = 2;
  Relaxation relaxation = Relaxation::penalty;
  PsiKind psi = PsiKind::l2_squared;
  double beta = 100.0;
  double beta_gamma = 1.0;  // beta is multiplied by beta_gamma every beta_every epochs
  int beta_every = 0;       // 0: constant beta
  RateRule lambda_rate{RateRule::Kind::balanced, 0.0};
  RateRule kappa_rate{RateRule::Kind::exact, 0.0};
  double noise = 1e-3;  // stddev of the Gaussian perturbation added to corrected lambdas
  LambdaSource source = LambdaSource::persistent;
  AuxNetSpec aux;
  bool reaux_shared_prefix = false;
  std::optional<double> aux_lr;  // AuxNet: eta; ReAuxNet: 2 eta times the lambda rate
  int distill_steps = 1;
  int workers = 1;
  std::uint64_t seed = 1;

  void validate() const;
  double beta_at(int epoch) const;
};

/// Per-sample auxiliary variables for the persistent-lambda mode.
class PersistentAuxStore {
 public:
  PersistentAuxStore() = default;
  PersistentAuxStore(int interfaces, Eigen::Index width, bool with_kappa);

  bool contains(std::uint64_t id) const { return entries_.count(id) != 0; }
  std::size_t entries() const { return entries_.size(); }
  std::size_t bytes() const;

  /// Adds rows for ids not yet present; `boundaries[k-1]` holds lambda_k rows.
  void insert(std::span<const std::uint64_t> ids, std::span<const Mat> boundaries);

  /// Fills lambdas[1..K-1] (and kappas) as batch x width tensors.
  void gather(std::span<const std::uint64_t> ids, std::vector<Mat>& lambdas, std::vector<Mat>& kappas) const;
  void scatter(std::span<const std::uint64_t> ids, const std::vector<Mat>& lambdas, const std::vector<Mat>& kappas);

 private:
  struct Entry {
    Mat lambda;  // (K-1) x width
    Mat kappa;   // (K-1) x width, empty in penalty mode
  };
  int interfaces_ = 0;
  Eigen::Index width_ = 0;
  bool with_kappa_ = false;
  std::unordered_map<std::uint64_t, Entry> entries_;
};

struct ParallelStep {
  std::vector<double> stage_losses;
  std::vector<double> violation_sq;    // per interface: sum over rows of ||lambda_k - X^{k-1}_out||^2
  std::vector<double> violations;      // per interface: Frobenius norm over the batch
  std::vector<double> distill_losses;  // per interface, AuxNet and ReAuxNet modes
  int correct = 0;
  double lr = 0.0;
  double beta = 0.0;
  StepTiming timing;
};

struct ParallelEpoch {
  double mean_loss = 0.0;                // last stage's phi, sample-weighted
  double accuracy = 0.0;                 // last stage's predictions from its auxiliary input
  std::vector<double> violation_rms;     // per interface, sqrt(sum ||.||^2 / samples)
  double violation_mean = 0.0;
  double violation_max = 0.0;
  double distill_loss = 0.0;
  double lr = 0.0;
  double beta = 0.0;
  std::vector<StepTiming> steps;
  PhaseTimings timings;
  double seconds = 0.0;
};

/// K synchronous stage workers with a coordinator. Each step runs the
/// decoupled forward, local loss, backward and update of every stage in
/// parallel, then corrects the auxiliary variables at the barrier.
class ParallelTrainer {
 public:
  ParallelTrainer(const ResidualModel<double>& model, SgdConfig sgd, ParallelConfig cfg);

  ParallelStep train_step(const Batch& batch, int epoch, double eta);
  ParallelEpoch train_epoch(const TrainingStream& stream, int epoch);

  ResidualModel<double> assemble() const { return assemble_model(stages_); }
  const std::vector<Stage>& stages() const { return stages_; }
  const ParallelConfig& config() const { return cfg_; }
  const SgdConfig& sgd() const { return sgd_; }

  /// Bytes held across steps for auxiliary variables: the lambda/kappa store
  /// in persistent mode, the AuxNet parameters otherwise.
  std::size_t persistent_aux_bytes() const;

  const PersistentAuxStore& store() const { return store_; }
  std::vector<AuxNetParams>& auxnets() { return auxnets_; }
  const std::vector<AuxNetParams>& auxnets() const { return auxnets_; }
  ReAuxNet& reauxnet() { return reaux_; }
  const ReAuxNet& reauxnet() const { return reaux_; }

  long steps_taken() const { return step_; }

 private:
  Mat embed_batch(const Mat& raw) const;
  void warm_start(const Batch& batch);

  SgdConfig sgd_;
  ParallelConfig cfg_;
  std::vector<Stage> stages_;
  std::vector<StageParams> velocity_;
  PersistentAuxStore store_;
  std::vector<AuxNetParams> auxnets_;
  ReAuxNet reaux_;
  std::unique_ptr<WorkerPool> pool_;
  long step_ = 0;
};

}  // namespace lpres
