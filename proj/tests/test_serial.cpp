#include <cmath>

#include "doctest.h"
#include "lpres/serial_trainer.hpp"

using namespace lpres;

TEST_CASE("cosine schedule endpoints") {
  CHECK(cosine_lr(0.1, 0, 100) == 0.1);
  CHECK(std::abs(cosine_lr(0.1, 100, 100)) < 1e-18);
  CHECK(cosine_lr(0.1, 50, 100) == doctest::Approx(0.05).epsilon(1e-14));
  CHECK_THROWS_AS(cosine_lr(0.1, 101, 100), InputError);
  CHECK_THROWS_AS(cosine_lr(0.1, 0, 0), InputError);
}

TEST_CASE("step and constant schedules") {
  SgdConfig cfg;
  cfg.eta0 = 1.0;
  cfg.schedule = LrSchedule::step;
  cfg.milestones = {2, 4};
  cfg.step_factor = 0.5;
  CHECK(learning_rate(cfg, 0, 10, 0) == 1.0);
  CHECK(learning_rate(cfg, 0, 10, 2) == 0.5);
  CHECK(learning_rate(cfg, 0, 10, 5) == 0.25);
  cfg.schedule = LrSchedule::constant;
  CHECK(learning_rate(cfg, 7, 10, 5) == 1.0);
}

TEST_CASE("sgd config validation") {
  SgdConfig cfg;
  cfg.batch_size = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.batch_size = 4;
  cfg.momentum = 1.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.momentum = 0.9;
  CHECK_NOTHROW(cfg.validate());
}

TEST_CASE("sgd update: zero gradient and full step") {
  auto p = BlockParams<double>::zeros(2, 2);
  p.W1 << 1, 2, 3, 4;
  const auto before = p;
  auto v = zeros_like(p);
  sgd_update(p, zeros_like(p), 0.3, 0.0, v);
  CHECK(p.W1 == before.W1);
  sgd_update(p, before, 1.0, 0.0, v);
  CHECK(p.W1.isZero(0.0));
}

TEST_CASE("sgd update: momentum recurrence on scalars") {
  Mat w = Mat::Constant(1, 1, 1.0);
  Mat v = Mat::Zero(1, 1);
  struct P {
    Mat& x;
    auto fields() { return std::tie(x); }
    auto fields() const { return std::tie(x); }
  };
  Mat g1 = Mat::Constant(1, 1, 0.5), g2 = Mat::Constant(1, 1, -0.25);
  P pw{w}, pv{v}, pg1{g1}, pg2{g2};
  sgd_update(pw, pg1, 0.1, 0.9, pv);
  sgd_update(pw, pg2, 0.1, 0.9, pv);
  // v1 = 0.5, w1 = 0.95; v2 = 0.45 - 0.25 = 0.2, w2 = 0.93
  CHECK(v(0, 0) == doctest::Approx(0.2).epsilon(1e-15));
  CHECK(w(0, 0) == doctest::Approx(0.93).epsilon(1e-15));
}

TEST_CASE("sgd update: shape mismatch") {
  auto p = BlockParams<double>::zeros(2, 2);
  auto g = BlockParams<double>::zeros(2, 3);
  CHECK_THROWS_AS(sgd_update(p, g, 0.1), DimensionError);
}

TEST_CASE("one serial step moves every parameter by -eta times the finite-difference gradient") {
  SeededRng rng(2);
  auto model = init_model<double>({2, 4, 4, 3, 2, 1.0}, rng);
  // Nonzero biases keep every relu away from its kink.
  zip_fields([&](auto& t) { t += randn<double>(t.rows(), t.cols(), rng, 0.3); }, model);
  const auto data = gen_dataset(DatasetKind::spirals, 12, 3, 0.1, 3);
  Batch batch{data.features, data.labels, {}};
  auto probe = model;
  ResidualModel<double> fd = zeros_like(model);
  auto loss = [&] { return loss_phi<double>(net_forward(probe, batch.features).logits, batch.labels).loss; };
  zip_fields([&](auto& w, auto& out) { out = finite_diff_grad_inplace(loss, w, 1e-5); }, probe, fd);

  const auto before = model;
  auto velocity = zeros_like(model);
  train_step_serial(model, velocity, batch, 0.2, 0.0);
  zip_fields([&](const auto& after, const auto& b, const auto& g) {
    CHECK(relative_error(Mat((b - after) / 0.2), Mat(g)) <= 1e-6);
  }, model, before, fd);
}

TEST_CASE("serial epoch with learning rate 0 leaves parameters unchanged") {
  SeededRng rng(4);
  const auto model = init_model<double>({2, 6, 6, 3, 3, 1.0}, rng);
  const auto data = gen_dataset(DatasetKind::spirals, 90, 3, 0.1, 5);
  SgdConfig cfg;
  cfg.eta0 = 0.0;
  cfg.epochs = 3;
  cfg.batch_size = 16;
  SerialTrainer trainer(model, cfg);
  TrainingStream stream(data, {}, cfg.batch_size, 9);
  const double l0 = trainer.train_epoch(stream, 0).mean_loss;
  const double l1 = trainer.train_epoch(stream, 1).mean_loss;
  CHECK(std::abs(l0 - l1) < 1e-12);
  zip_fields([](const auto& a, const auto& b) { CHECK(a == b); }, trainer.model(), model);

  // The epoch's batch-mean loss equals one full-dataset pass.
  CHECK(std::abs(l0 - evaluate(model, data).loss) < 1e-10);
}

TEST_CASE("separable blobs with one block reach 100% training accuracy") {
  SeededRng rng(1);
  const auto data = gen_dataset(DatasetKind::blobs, 40, 2, 0.0, 2);
  const auto model = init_model<double>({2, 4, 4, 2, 1, 1.0}, rng);
  SgdConfig cfg;
  cfg.eta0 = 0.1;
  cfg.epochs = 200;
  cfg.batch_size = 40;
  cfg.schedule = LrSchedule::constant;
  SerialTrainer trainer(model, cfg);
  TrainingStream stream(data, {}, 40, 3);
  SerialEpoch last;
  for (int e = 0; e < cfg.epochs; ++e) last = trainer.train_epoch(stream, e);
  CHECK(evaluate(trainer.model(), data).accuracy == 1.0);
}

TEST_CASE("serial training is deterministic under a fixed seed") {
  SeededRng r1(6), r2(6);
  const auto data = gen_dataset(DatasetKind::rings, 60, 3, 0.05, 1);
  SgdConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 8;
  cfg.momentum = 0.9;
  SerialTrainer a(init_model<double>({2, 5, 5, 3, 2, 1.0}, r1), cfg);
  SerialTrainer b(init_model<double>({2, 5, 5, 3, 2, 1.0}, r2), cfg);
  TrainingStream stream(data, {}, cfg.batch_size, 11);
  for (int e = 0; e < 2; ++e) {
    a.train_epoch(stream, e);
    b.train_epoch(stream, e);
  }
  zip_fields([](const auto& x, const auto& y) { CHECK(x == y); }, a.model(), b.model());
}

TEST_CASE("serial epoch reports timings with zero interface overhead") {
  SeededRng rng(7);
  const auto data = gen_dataset(DatasetKind::blobs, 30, 3, 0.2, 1);
  SgdConfig cfg;
  cfg.batch_size = 10;
  SerialTrainer trainer(init_model<double>({2, 4, 4, 3, 2, 1.0}, rng), cfg);
  const auto ep = trainer.train_epoch(TrainingStream(data, {}, 10, 1), 0);
  CHECK(ep.steps.size() == 3);
  CHECK(ep.timings.psi == 0.0);
  CHECK(ep.timings.aux_forward == 0.0);
  CHECK(ep.timings.forward + ep.timings.backward > 0.0);
}
