#include <atomic>
#include <cmath>

#include "doctest.h"
#include "lpres/parallel_trainer.hpp"
#include "lpres/serial_trainer.hpp"

using namespace lpres;

namespace {

template <typename A, typename B>
double max_rel_diff(const A& a, const B& b) {
  double worst = 0.0;
  zip_fields([&](const auto& x, const auto& y) { worst = std::max(worst, relative_error(x, y, 1e-300)); }, a, b);
  return worst;
}

struct Fixture {
  Dataset data = gen_dataset(DatasetKind::spirals, 96, 3, 0.05, 4);
  ResidualModel<double> model;
  SgdConfig sgd;

  explicit Fixture(int depth = 6) {
    SeededRng rng(3);
    model = init_model<double>({2, 6, 6, 3, depth, 1.0 / depth}, rng);
    sgd.eta0 = 0.05;
    sgd.epochs = 3;
    sgd.batch_size = 16;
  }
};

}  // namespace

TEST_CASE("worker pool runs every task and acts as a barrier") {
  for (int workers : {1, 2, 4}) {
    WorkerPool pool(workers);
    std::vector<int> hits(7, 0);
    pool.run(7, [&](int i) { hits[static_cast<std::size_t>(i)] += i; });
    for (int i = 0; i < 7; ++i) CHECK(hits[static_cast<std::size_t>(i)] == i);
    pool.run(0, [&](int) { FAIL("no tasks expected"); });
  }
}

TEST_CASE("worker pool reports the lowest failing stage") {
  WorkerPool pool(3);
  try {
    pool.run(3, [](int i) {
      if (i >= 1) throw std::runtime_error("boom " + std::to_string(i));
    });
    FAIL("expected StageError");
  } catch (const StageError& e) {
    CHECK(e.stage() == 1);
    CHECK(std::string(e.what()).find("stage 1") != std::string::npos);
  }
  std::atomic<int> count{0};
  pool.run(3, [&](int) { ++count; });
  CHECK(count == 3);
}

TEST_CASE("parallel config validation") {
  ParallelConfig cfg;
  cfg.relaxation = Relaxation::augmented_lagrangian;
  cfg.source = LambdaSource::auxnet;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = {};
  cfg.beta = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = {};
  cfg.source = LambdaSource::reauxnet;
  cfg.stages = 1;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("beta schedule and rate rules") {
  ParallelConfig cfg;
  cfg.beta = 2.0;
  cfg.beta_gamma = 10.0;
  cfg.beta_every = 3;
  CHECK(cfg.beta_at(0) == 2.0);
  CHECK(cfg.beta_at(2) == 2.0);
  CHECK(cfg.beta_at(3) == 20.0);
  CHECK(cfg.beta_at(7) == doctest::Approx(200.0));
  RateRule tied, exact{RateRule::Kind::exact, 0.0}, fixed{RateRule::Kind::fixed, 0.3};
  CHECK(tied.resolve_lambda(0.01, 50.0) == 0.01);
  CHECK(exact.resolve_lambda(0.01, 50.0) == 0.01);
  CHECK(exact.resolve_kappa(0.01, 50.0) == 10000.0);
  RateRule balanced{RateRule::Kind::balanced, 0.0};
  CHECK(balanced.resolve_lambda(0.01, 50.0) == 0.005);
  CHECK(balanced.resolve_kappa(0.01, 50.0) == 10000.0);
  CHECK(ParallelConfig{}.lambda_rate.kind == RateRule::Kind::balanced);
  CHECK(fixed.resolve_kappa(0.01, 50.0) == 0.3);
}

TEST_CASE("K = 1 parallel training reproduces serial training") {
  Fixture f;
  f.sgd.momentum = 0.9;
  ParallelConfig cfg;
  cfg.stages = 1;
  cfg.noise = 0.0;
  SerialTrainer serial(f.model, f.sgd);
  ParallelTrainer parallel(f.model, f.sgd, cfg);
  TrainingStream stream(f.data, {}, f.sgd.batch_size, 5);
  for (int e = 0; e < f.sgd.epochs; ++e) {
    const auto a = serial.train_epoch(stream, e);
    const auto b = parallel.train_epoch(stream, e);
    CHECK(a.mean_loss == b.mean_loss);
  }
  CHECK(max_rel_diff(serial.model(), parallel.assemble()) <= 1e-12);
}

TEST_CASE("one worker and K workers give identical trajectories") {
  for (auto source : {LambdaSource::persistent, LambdaSource::auxnet, LambdaSource::reauxnet}) {
    Fixture f;
    ParallelConfig cfg;
    cfg.stages = 3;
    cfg.source = source;
    cfg.beta = 10.0;
    ParallelTrainer one(f.model, f.sgd, cfg);
    cfg.workers = 3;
    ParallelTrainer many(f.model, f.sgd, cfg);
    TrainingStream stream(f.data, {}, f.sgd.batch_size, 5);
    for (int e = 0; e < 2; ++e) {
      const auto a = one.train_epoch(stream, e);
      const auto b = many.train_epoch(stream, e);
      CHECK(a.violation_rms == b.violation_rms);
      CHECK(a.distill_loss == b.distill_loss);
    }
    CHECK(max_rel_diff(one.assemble(), many.assemble()) == 0.0);
  }
}

TEST_CASE("last stage gradients with true boundary input equal serial backprop") {
  Fixture f;
  const Mat y = f.data.features.topRows(8);
  const std::vector<int> labels(f.data.labels.begin(), f.data.labels.begin() + 8);
  const auto serial = model_loss_and_grad<double>(f.model, y, labels);
  const auto stages = split_model(f.model, partition(6, 3));
  const auto& last = stages.back();
  const Mat& boundary = serial.trace.trajectory[static_cast<std::size_t>(last.range.begin)].input;
  const auto trace = stage_forward(last, boundary);
  const auto g = stage_gradients(last, trace, stage_local_loss(last, trace.output, nullptr, &labels));
  for (int m = 0; m < last.range.size(); ++m) {
    const auto& sg = serial.grads.blocks[static_cast<std::size_t>(last.range.begin + m)];
    CHECK(max_rel_diff(sg, g.grads.blocks[static_cast<std::size_t>(m)]) <= 1e-12);
  }
  CHECK(max_rel_diff(serial.grads.output_map, *g.grads.output_map) <= 1e-12);
}

TEST_CASE("warm-started lambdas start consistent") {
  Fixture f;
  ParallelConfig cfg;
  cfg.stages = 3;
  cfg.noise = 0.0;
  ParallelTrainer trainer(f.model, f.sgd, cfg);
  TrainingStream stream(f.data, {}, f.sgd.batch_size, 5);
  const auto order = stream.epoch_order(0);
  const auto step = trainer.train_step(stream.load(order[0], 0), 0, 0.05);
  CHECK(step.violations == std::vector<double>{0.0, 0.0});
  CHECK(step.stage_losses[0] == 0.0);
  CHECK(step.stage_losses[1] == 0.0);
}

TEST_CASE("penalty mode stores no multipliers; AL mode stores one per lambda") {
  Fixture f;
  TrainingStream stream(f.data, {}, f.sgd.batch_size, 5);
  ParallelConfig cfg;
  cfg.stages = 3;
  ParallelTrainer penalty(f.model, f.sgd, cfg);
  cfg.relaxation = Relaxation::augmented_lagrangian;
  ParallelTrainer al(f.model, f.sgd, cfg);
  penalty.train_epoch(stream, 0);
  al.train_epoch(stream, 0);
  const std::size_t lambda_bytes = f.data.size() * 2 * 6 * sizeof(double);
  CHECK(penalty.store().entries() == f.data.size());
  CHECK(penalty.persistent_aux_bytes() == lambda_bytes);
  CHECK(al.persistent_aux_bytes() == 2 * lambda_bytes);
}

TEST_CASE("divergence raises a numeric error naming the stage") {
  Fixture f;
  ParallelConfig cfg;
  cfg.stages = 2;
  ParallelTrainer trainer(f.model, f.sgd, cfg);
  TrainingStream stream(f.data, {}, f.sgd.batch_size, 5);
  const auto batch = stream.load(stream.epoch_order(0)[0], 0);
  try {
    for (int i = 0; i < 50; ++i) trainer.train_step(batch, 0, 1e150);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(e.stage() >= 0);
    CHECK(std::string(e.what()).find("stage") != std::string::npos);
  }
}

TEST_CASE("AuxNet mode stores only generator parameters") {
  Fixture f;
  ParallelConfig cfg;
  cfg.stages = 3;
  cfg.source = LambdaSource::auxnet;
  ParallelTrainer trainer(f.model, f.sgd, cfg);
  const auto bytes = trainer.persistent_aux_bytes();
  CHECK(bytes > 0);
  CHECK(trainer.auxnets().size() == 2);
  TrainingStream stream(f.data, {}, f.sgd.batch_size, 5);
  for (int e = 0; e < 2; ++e) {
    const auto ep = trainer.train_epoch(stream, e);
    CHECK(std::isfinite(ep.distill_loss));
    CHECK(trainer.persistent_aux_bytes() == bytes);
  }
  for (std::size_t k = 1; k < trainer.stages().size(); ++k) {
    CHECK(parameter_count(trainer.auxnets()[k - 1]) < parameter_count(trainer.stages()[k].params));
  }
}
