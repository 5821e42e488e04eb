#include <cmath>
#include <numeric>

#include "doctest.h"
#include "lpres/auxnet.hpp"
#include "lpres/parallel_trainer.hpp"

using namespace lpres;

namespace {

template <typename Params>
void randomize(Params& p, SeededRng& rng, double scale = 0.5) {
  zip_fields([&](auto& t) { t = randn<double>(t.rows(), t.cols(), rng, scale); }, p);
}

}  // namespace

TEST_CASE("auxnet: zero parameters are the identity and a fresh net is too") {
  SeededRng rng(1);
  const Mat x = randn<double>(3, 4, rng);
  AuxNetParams zero{{BlockParams<double>::zeros(4, 2)}, 1.0};
  CHECK(auxnet_forward(x, zero) == x);
  CHECK(auxnet_forward(x, make_auxnet(4, 2, 1, rng)) == x);
  CHECK_THROWS_AS(auxnet_forward(Mat(Mat::Zero(2, 3)), zero), DimensionError);
}

TEST_CASE("auxnet: construction is deterministic under equal seeds") {
  SeededRng a(9), b(9);
  const auto x = make_auxnet(6, 3, 2, a);
  const auto y = make_auxnet(6, 3, 2, b);
  zip_fields([](const auto& p, const auto& q) { CHECK(p == q); }, x, y);
}

TEST_CASE("distill: matched target gives zero loss and leaves theta unchanged") {
  SeededRng rng(2);
  auto theta = make_auxnet(4, 2, 1, rng);
  randomize(theta, rng);
  const Mat in = randn<double>(5, 4, rng);
  const Mat target = auxnet_forward(in, theta);
  const auto before = theta;
  const auto r = distill_step(theta, in, target, 0.1, 3);
  CHECK(r.initial_loss == 0.0);
  CHECK(r.final_loss == 0.0);
  zip_fields([](const auto& p, const auto& q) { CHECK(p == q); }, theta, before);
  CHECK_THROWS_AS(distill_step(theta, in, target, 0.1, 0), InputError);
  CHECK_THROWS_AS(distill_step(theta, in, Mat(Mat::Zero(5, 3)), 0.1, 1), DimensionError);
}

TEST_CASE("distill: gradient vs finite differences") {
  SeededRng rng(3);
  auto theta = make_auxnet(4, 3, 2, rng);
  randomize(theta, rng);
  const Mat in = randn<double>(3, 4, rng);
  const Mat target = randn<double>(3, 4, rng);
  const auto g = distill_gradient(theta, in, target);
  auto f = [&] { return distill_loss(theta, in, target); };
  zip_fields([&](auto& w, const auto& gw) { CHECK(relative_error(finite_diff_grad_inplace(f, w, 1e-5), gw) <= 1e-6); },
             theta, g.grads);
}

TEST_CASE("distill: a small step does not increase the loss") {
  SeededRng rng(4);
  for (int trial = 0; trial < 5; ++trial) {
    auto theta = make_auxnet(5, 3, 1, rng);
    randomize(theta, rng);
    const Mat in = randn<double>(4, 5, rng);
    const Mat target = randn<double>(4, 5, rng);
    const double before = distill_loss(theta, in, target);
    distill_step(theta, in, target, 1e-4, 1);
    CHECK(distill_loss(theta, in, target) <= before);
  }
}

TEST_CASE("distill: overfitting one batch reaches the target") {
  SeededRng rng(5);
  auto theta = make_auxnet(4, 4, 1, rng);
  const Mat in = randn<double>(3, 4, rng);
  const Mat target = in + 0.3 * randn<double>(3, 4, rng);
  for (int i = 0; i < 20000; ++i) distill_step(theta, in, target, 0.05, 1);
  CHECK((auxnet_forward(in, theta) - target).norm() <= 1e-3);
}

TEST_CASE("generate lambdas") {
  SeededRng rng(6);
  const Mat X0 = randn<double>(2, 4, rng);
  std::vector<AuxNetParams> one{make_auxnet(4, 2, 1, rng)};
  randomize(one[0], rng);
  const auto two = generate_lambdas(X0, one);
  CHECK(two.size() == 2);
  CHECK(two[0] == X0);
  CHECK(two[1] == auxnet_forward(X0, one[0]));

  std::vector<AuxNetParams> zeros(3, AuxNetParams{{BlockParams<double>::zeros(4, 2)}, 1.0});
  for (const auto& l : generate_lambdas(X0, zeros)) CHECK(l == X0);
}

TEST_CASE("reauxnet: shared prefix degenerates to the AuxNet chain") {
  SeededRng rng(7);
  ReAuxNet shared(4, 4, 2, 1, true, rng);
  CHECK(shared.shared_prefix());
  for (auto& s : shared.segments()) randomize(s, rng);
  CHECK(shared.segments().size() == 3);
  CHECK(shared.chain(3) == std::vector<std::size_t>{0, 1, 2});
  const Mat X0 = randn<double>(3, 4, rng);
  const auto chain = generate_lambdas(X0, shared.segments());
  for (int k = 1; k < 4; ++k) CHECK(shared.forward(k, X0) == chain[static_cast<std::size_t>(k)]);
}

TEST_CASE("reauxnet: independent chains") {
  SeededRng rng(8);
  ReAuxNet net(3, 4, 2, 1, false, rng);
  CHECK_FALSE(net.shared_prefix());
  CHECK(net.segments().size() == 3);  // 1 + 2
  for (auto& s : net.segments()) randomize(s, rng);
  const Mat X0 = randn<double>(2, 4, rng);
  CHECK(net.forward(1, X0) == auxnet_forward(X0, net.segments()[net.chain(1)[0]]));
  Mat composed = X0;
  for (auto id : net.chain(2)) composed = auxnet_forward(composed, net.segments()[id]);
  CHECK(net.forward(2, X0) == composed);
  CHECK_THROWS_AS(net.forward(0, X0), UsageError);
  CHECK_THROWS_AS(net.forward(3, X0), UsageError);

  ReAuxNet zero(3, 4, 2, 1, false, rng);
  CHECK(zero.forward(2, X0) == X0);
}

TEST_CASE("reauxnet: zero signal leaves parameters unchanged") {
  SeededRng rng(9);
  ReAuxNet net(3, 4, 2, 1, false, rng);
  for (auto& s : net.segments()) randomize(s, rng);
  const auto before = net.segments();
  net.update(2, randn<double>(3, 4, rng), Mat::Zero(3, 4), 0.5);
  for (std::size_t i = 0; i < before.size(); ++i) {
    zip_fields([](const auto& a, const auto& b) { CHECK(a == b); }, net.segments()[i], before[i]);
  }
}

TEST_CASE("reauxnet: gradient of the linearised objective vs finite differences") {
  SeededRng rng(10);
  ReAuxNet net(3, 4, 3, 1, false, rng);
  for (auto& s : net.segments()) randomize(s, rng);
  const Mat X0 = randn<double>(3, 4, rng);
  const Mat signal = randn<double>(3, 4, rng);
  const auto g = net.gradient(2, X0, signal);
  auto f = [&] { return net.forward(2, X0).cwiseProduct(signal).sum() / 3.0; };
  for (std::size_t j = 0; j < g.segment_ids.size(); ++j) {
    zip_fields([&](auto& w, const auto& gw) { CHECK(relative_error(finite_diff_grad_inplace(f, w, 1e-5), gw) <= 1e-6); },
               net.segments()[g.segment_ids[j]], g.grads[j]);
  }
}

TEST_CASE("reauxnet: one update on scalars matches the hand-assembled chain rule") {
  SeededRng rng(11);
  ReAuxNet net(2, 1, 1, 1, false, rng);
  auto& b = net.segments()[0].blocks[0];
  b.W1(0, 0) = 0.8;
  b.b1(0) = 0.1;
  b.W2(0, 0) = -1.5;
  b.b2(0) = 0.2;
  const double x0 = 0.7, g = 0.4, eta = 0.3;
  const double pre = std::max(0.0, x0) * 0.8 + 0.1;  // 0.66 > 0
  const double dW2 = g * std::max(0.0, pre);
  const double db2 = g;
  const double dW1 = g * -1.5 * std::max(0.0, x0);
  const double db1 = g * -1.5;
  net.update(1, Mat::Constant(1, 1, x0), Mat::Constant(1, 1, g), eta);
  CHECK(b.W2(0, 0) == doctest::Approx(-1.5 - eta * dW2).epsilon(1e-15));
  CHECK(b.b2(0) == doctest::Approx(0.2 - eta * db2).epsilon(1e-15));
  CHECK(b.W1(0, 0) == doctest::Approx(0.8 - eta * dW1).epsilon(1e-15));
  CHECK(b.b1(0) == doctest::Approx(0.1 - eta * db1).epsilon(1e-15));
}

TEST_CASE("reauxnet: gradients on shared segments are summed") {
  SeededRng rng(12);
  ReAuxNet net(3, 3, 2, 1, true, rng);
  for (auto& s : net.segments()) randomize(s, rng);
  const Mat X0 = randn<double>(2, 3, rng);
  const Mat s1 = randn<double>(2, 3, rng), s2 = randn<double>(2, 3, rng);
  std::vector<ReAuxNet::Gradient> grads{net.gradient(1, X0, s1), net.gradient(2, X0, s2)};
  auto expected = net.segments()[0];
  auto total = grads[0].grads[0];
  zip_fields([](auto& a, const auto& b) { a += b; }, total, grads[1].grads[0]);
  sgd_update(expected, total, 0.1);
  net.apply(grads, 0.1);
  zip_fields([](const auto& a, const auto& b) { CHECK((a - b).norm() < 1e-15); }, net.segments()[0], expected);
}

TEST_CASE("capacity rule") {
  // Stage of two blocks at width 16, hidden 16: 2 * (2*256 + 32) = 1088 parameters.
  const std::size_t stage = 1088;
  AuxNetSpec spec;
  const auto h = resolve_aux_hidden(spec, 16, 16, stage);
  CHECK(h < 8);
  CHECK(auxnet_parameter_count(16, h, 1) <= stage / 4);
  CHECK(auxnet_parameter_count(16, h + 1, 1) > stage / 4);
  spec.hidden = 8;
  CHECK_THROWS_AS(resolve_aux_hidden(spec, 16, 16, stage), ConfigError);
  spec.hidden = 4;
  CHECK(resolve_aux_hidden(spec, 16, 16, stage) == 4);
  spec.hidden = 0;
  spec.max_capacity_ratio = 1e-4;
  CHECK_THROWS_AS(resolve_aux_hidden(spec, 16, 16, stage), ConfigError);
}

TEST_CASE("AuxNet distillation loss falls over training") {
  const auto data = gen_dataset(DatasetKind::spirals, 150, 3, 0.05, 2);
  SeededRng rng(3);
  const auto model = init_model<double>({2, 8, 8, 3, 6, 1.0 / 6}, rng);
  SgdConfig sgd;
  sgd.eta0 = 0.05;
  sgd.epochs = 30;
  sgd.batch_size = 16;
  ParallelConfig cfg;
  cfg.stages = 3;
  cfg.source = LambdaSource::auxnet;
  cfg.beta = 10.0;
  ParallelTrainer trainer(model, sgd, cfg);
  TrainingStream stream(data, {}, sgd.batch_size, 4);
  std::vector<double> losses;
  for (int e = 0; e < sgd.epochs; ++e) losses.push_back(trainer.train_epoch(stream, e).distill_loss);
  for (double l : losses) CHECK(std::isfinite(l));
  const double head = std::accumulate(losses.begin(), losses.begin() + 10, 0.0) / 10.0;
  const double tail = std::accumulate(losses.end() - 10, losses.end(), 0.0) / 10.0;
  CHECK(tail < head);
}
