#include <cmath>

#include "doctest.h"
#include "lpres/stage.hpp"

using namespace lpres;

namespace {

template <typename Params>
void randomize(Params& p, SeededRng& rng, double scale = 0.5) {
  zip_fields([&](auto& t) { t = randn<double>(t.rows(), t.cols(), rng, scale); }, p);
}

ResidualModel<double> random_model(int depth, SeededRng& rng, Eigen::Index width = 4) {
  auto m = ResidualModel<double>::zeros({3, width, width, 3, depth, 1.0});
  randomize(m, rng);
  return m;
}

AuxState make_aux(int K, Eigen::Index batch, Eigen::Index width, Relaxation mode, double beta, SeededRng& rng) {
  AuxState aux;
  aux.beta = beta;
  aux.mode = mode;
  for (int k = 0; k < K; ++k) {
    aux.lambdas.push_back(randn<double>(batch, width, rng));
    aux.kappas.push_back(k == 0 || mode == Relaxation::penalty ? Mat(Mat::Zero(batch, width))
                                                                : randn<double>(batch, width, rng));
  }
  return aux;
}

// Root of the elementwise-affine lambda update direction, found from two probes of update_lambda.
Mat stationary_lambda(const AuxState& aux, int k, const Mat& p, const Mat& x) {
  auto direction = [&](const Mat& lambda) {
    AuxState probe = aux;
    probe.lambdas[static_cast<std::size_t>(k)] = lambda;
    update_lambda(probe, k, p, x, 1.0);
    return Mat(lambda - probe.lambdas[static_cast<std::size_t>(k)]);
  };
  const Mat d0 = direction(Mat::Zero(x.rows(), x.cols()));
  const Mat d1 = direction(Mat::Ones(x.rows(), x.cols()));
  return -d0.cwiseQuotient(d1 - d0);
}

}  // namespace

TEST_CASE("partition examples") {
  const auto a = partition(6, 3);
  CHECK(a.ranges == std::vector<BlockRange>{{0, 2}, {2, 4}, {4, 6}});
  const auto b = partition(7, 3);
  CHECK(b.ranges[0].size() == 3);
  CHECK(b.ranges[1].size() == 2);
  CHECK(b.ranges[2].size() == 2);
  const auto c = partition(5, 1);
  CHECK(c.ranges == std::vector<BlockRange>{{0, 5}});
  CHECK_THROWS_AS(partition(3, 4), InputError);
  CHECK_THROWS_AS(partition(3, 0), InputError);
}

TEST_CASE("partition covers contiguously and near-uniformly") {
  for (int L = 1; L <= 12; ++L) {
    for (int K = 1; K <= L; ++K) {
      const auto plan = partition(L, K);
      int next = 0, lo = L, hi = 0;
      for (const auto& r : plan.ranges) {
        CHECK(r.begin == next);
        next = r.end;
        lo = std::min(lo, r.size());
        hi = std::max(hi, r.size());
      }
      CHECK(next == L);
      CHECK(hi - lo <= 1);
      if (L % K == 0) CHECK(hi == L / K);
    }
  }
}

TEST_CASE("psi examples") {
  Mat x(1, 2);
  x << 0.5, -1.0;
  auto zero = psi_value_and_grads(x, x, PsiKind::l2_squared);
  CHECK(zero.value == 0.0);
  CHECK(zero.d_lambda.isZero(0.0));
  CHECK(zero.d_x.isZero(0.0));

  Mat lambda = x;
  lambda(0, 0) += 1.0;
  auto one = psi_value_and_grads(lambda, x, PsiKind::l2_squared);
  CHECK(one.value == 1.0);
  CHECK(one.d_lambda(0, 0) == 2.0);
  CHECK(one.d_lambda(0, 1) == 0.0);

  auto l1 = psi_value_and_grads(lambda, x, PsiKind::l1);
  CHECK(l1.value == 1.0);
  CHECK(l1.d_lambda(0, 1) == 0.0);  // sign(0) = 0
  CHECK_THROWS_AS(psi_value_and_grads(Mat(Mat::Zero(1, 2)), Mat(Mat::Zero(2, 2)), PsiKind::l2_squared),
                  DimensionError);
}

TEST_CASE("psi gradients vs finite differences") {
  SeededRng rng(1);
  Mat lambda = randn<double>(3, 4, rng);
  Mat x = randn<double>(3, 4, rng);
  auto r = psi_value_and_grads(lambda, x, PsiKind::l2_squared);
  auto f = [&] { return psi_value_and_grads(lambda, x, PsiKind::l2_squared).value; };
  CHECK(relative_error(finite_diff_grad_inplace(f, lambda, 1e-5), r.d_lambda) <= 1e-6);
  CHECK(relative_error(finite_diff_grad_inplace(f, x, 1e-5), r.d_x) <= 1e-6);
}

TEST_CASE("stage forward from true boundary values matches the serial pass bit-exactly") {
  SeededRng rng(2);
  const auto m = random_model(6, rng);
  const Mat y = randn<double>(4, 3, rng);
  const auto serial = net_forward(m, y);
  const auto stages = split_model(m, partition(6, 3));
  // Stage k starts at block 2k; its input is the serial activation entering that block.
  for (int k = 1; k < 3; ++k) {
    const Mat& boundary = serial.trajectory[static_cast<std::size_t>(2 * k)].input;
    const Mat expected = k == 2 ? serial.features : serial.trajectory[static_cast<std::size_t>(2 * k + 2)].input;
    CHECK(stage_forward(stages[static_cast<std::size_t>(k)], boundary).output == expected);
  }
}

TEST_CASE("zero-parameter stage passes its input through") {
  auto m = ResidualModel<double>::zeros({2, 3, 3, 2, 4, 1.0});
  const auto stages = split_model(m, partition(4, 2));
  SeededRng rng(3);
  const Mat lambda = randn<double>(2, 3, rng);
  CHECK(stage_forward(stages[1], lambda).output == lambda);
}

TEST_CASE("K = 1 stage output is the serial body output") {
  SeededRng rng(4);
  const auto m = random_model(3, rng);
  const Mat y = randn<double>(2, 3, rng);
  const auto stages = split_model(m, partition(3, 1));
  CHECK(stage_forward(stages[0], y).output == net_forward(m, y).features);
}

TEST_CASE("split and assemble round trip") {
  SeededRng rng(5);
  const auto m = random_model(5, rng);
  const auto stages = split_model(m, partition(5, 2));
  CHECK(stages[0].params.input_map.has_value());
  CHECK_FALSE(stages[0].params.output_map.has_value());
  CHECK(stages[1].params.output_map.has_value());
  const auto back = assemble_model(stages);
  zip_fields([](const auto& a, const auto& b) { CHECK(a == b); }, m, back);
}

TEST_CASE("stage local loss: penalty with matched lambda is zero") {
  SeededRng rng(6);
  const auto m = random_model(4, rng);
  const auto stages = split_model(m, partition(4, 2));
  const Mat y = randn<double>(3, 3, rng);
  const Mat out = stage_forward(stages[0], y).output;
  AuxState aux;
  aux.beta = 10.0;
  aux.lambdas = {Mat(), out};
  aux.kappas = {Mat(), Mat()};
  const auto loss = stage_local_loss(stages[0], out, &aux, nullptr);
  CHECK(loss.value == 0.0);
  CHECK(loss.terminal_adjoint.isZero(0.0));
}

TEST_CASE("stage local loss: last stage equals phi") {
  SeededRng rng(7);
  const auto m = random_model(4, rng);
  const auto stages = split_model(m, partition(4, 2));
  const Mat X = randn<double>(3, 4, rng);
  const std::vector<int> labels{0, 1, 2};
  const auto& T = *stages[1].params.output_map;
  const double phi = loss_phi<double>(affine<double>(X, T.weight, T.bias), labels).loss;
  CHECK(stage_local_loss(stages[1], X, nullptr, &labels).value == phi);
}

TEST_CASE("stage local loss: missing inputs are usage errors") {
  SeededRng rng(8);
  const auto stages = split_model(random_model(4, rng), partition(4, 2));
  const Mat X = Mat::Zero(2, 4);
  CHECK_THROWS_AS(stage_local_loss(stages[0], X, nullptr, nullptr), UsageError);
  CHECK_THROWS_AS(stage_local_loss(stages[1], X, nullptr, nullptr), UsageError);
  AuxState al;
  al.mode = Relaxation::augmented_lagrangian;
  al.lambdas = {Mat(), X};
  CHECK_THROWS_AS(stage_local_loss(stages[0], X, &al, nullptr), UsageError);
}

TEST_CASE("stage local loss: AL terminal adjoint is (beta dpsi/dx + kappa) / batch") {
  SeededRng rng(9);
  const auto stages = split_model(random_model(4, rng), partition(4, 2));
  auto aux = make_aux(2, 3, 4, Relaxation::augmented_lagrangian, 2.5, rng);
  Mat X = randn<double>(3, 4, rng);
  const auto loss = stage_local_loss(stages[0], X, &aux, nullptr);
  const Mat expected = (aux.beta * psi_value_and_grads(aux.lambdas[1], X, PsiKind::l2_squared).d_x + aux.kappas[1]) / 3.0;
  CHECK((loss.terminal_adjoint - expected).norm() < 1e-14);
  auto f = [&] { return stage_local_loss(stages[0], X, &aux, nullptr).value; };
  CHECK(relative_error(finite_diff_grad_inplace(f, X, 1e-5), loss.terminal_adjoint) <= 1e-6);
}

TEST_CASE("stage backward: null terminal adjoint") {
  SeededRng rng(10);
  const auto stages = split_model(random_model(4, rng), partition(4, 2));
  const auto trace = stage_forward(stages[1], Mat(randn<double>(2, 4, rng)));
  const auto g = stage_backward(stages[1], trace, Mat(Mat::Zero(2, 4)));
  CHECK(g.input_adjoint.isZero(0.0));
  zip_fields([](const auto& t) { CHECK(t.isZero(0.0)); }, g.grads);
}

TEST_CASE("stage backward: gradients and input adjoint vs finite differences") {
  SeededRng rng(11);
  for (auto mode : {Relaxation::penalty, Relaxation::augmented_lagrangian}) {
    auto stages = split_model(random_model(6, rng), partition(6, 3));
    auto aux = make_aux(3, 3, 4, mode, 4.0, rng);
    const Mat y = randn<double>(3, 3, rng);
    const std::vector<int> labels{2, 0, 1};
    for (auto& stage : stages) {
      Mat input = stage.first() ? y : aux.lambdas[static_cast<std::size_t>(stage.index)];
      auto f = [&] { return stage_local_loss(stage, stage_forward(stage, input).output, &aux, &labels).value; };
      const auto trace = stage_forward(stage, input);
      const auto g = stage_gradients(stage, trace, stage_local_loss(stage, trace.output, &aux, &labels));
      zip_fields([&](auto& w, const auto& gw) { CHECK(relative_error(finite_diff_grad_inplace(f, w, 1e-5), gw) <= 1e-6); },
                 stage.params, g.grads);
      if (!stage.first()) CHECK(relative_error(finite_diff_grad_inplace(f, input, 1e-5), g.input_adjoint) <= 1e-6);
    }
  }
}

TEST_CASE("stage backward: cache mismatch") {
  SeededRng rng(12);
  const auto stages = split_model(random_model(3, rng), partition(3, 2));
  const auto trace = stage_forward(stages[0], Mat(randn<double>(2, 3, rng)));
  CHECK_THROWS_AS(stage_backward(stages[1], trace, Mat(Mat::Zero(2, 4))), UsageError);
}

TEST_CASE("update lambda: stationary point is a fixed point") {
  SeededRng rng(13);
  auto aux = make_aux(2, 2, 3, Relaxation::penalty, 5.0, rng);
  const Mat x = aux.lambdas[1];
  update_lambda(aux, 1, Mat::Zero(2, 3), x, 0.3);
  CHECK(aux.lambdas[1] == x);
  CHECK_THROWS_AS(update_lambda(aux, 0, Mat::Zero(2, 3), x, 0.3), UsageError);
  CHECK_THROWS_AS(update_lambda(aux, 2, Mat::Zero(2, 3), x, 0.3), UsageError);
}

TEST_CASE("stationarity closed forms") {
  SeededRng rng(14);
  for (int trial = 0; trial < 10; ++trial) {
    const double beta = std::pow(10.0, rng.uniform(-1.0, 4.0));
    for (auto mode : {Relaxation::penalty, Relaxation::augmented_lagrangian}) {
      auto aux = make_aux(3, 4, 5, mode, beta, rng);
      const Mat x = randn<double>(4, 5, rng);
      const Mat p = randn<double>(4, 5, rng);
      const Mat lambda = stationary_lambda(aux, 2, p, x);
      const Mat expected = mode == Relaxation::penalty ? Mat(-p / (2.0 * beta)) : Mat((aux.kappas[2] - p) / (2.0 * beta));
      CHECK((lambda - x - expected).cwiseAbs().maxCoeff() <= 1e-10);
    }
  }
}

TEST_CASE("update kappa examples") {
  SeededRng rng(15);
  auto aux = make_aux(2, 2, 3, Relaxation::augmented_lagrangian, 4.0, rng);
  const Mat kappa = aux.kappas[1];
  update_kappa(aux, 1, aux.lambdas[1], 0.5);
  CHECK(aux.kappas[1] == kappa);

  aux.kappas[1].setZero();
  const Mat v = randn<double>(2, 3, rng);
  const Mat x = aux.lambdas[1] - v;
  update_kappa(aux, 1, x, 0.5);
  CHECK((aux.kappas[1] + (0.5 / 8.0) * v).norm() < 1e-15);

  // Frozen lambda and x: kappa moves linearly with slope -eta/(2 beta) per step.
  aux.kappas[1].setZero();
  for (int s = 1; s <= 20; ++s) {
    update_kappa(aux, 1, x, 0.5);
    CHECK((aux.kappas[1] + s * (0.5 / 8.0) * v).cwiseAbs().maxCoeff() < 1e-13);
  }
  CHECK(aux.kappas[0].isZero(0.0));

  auto penalty = make_aux(2, 2, 3, Relaxation::penalty, 4.0, rng);
  CHECK_THROWS_AS(update_kappa(penalty, 1, x, 0.5), UsageError);
}

TEST_CASE("constraint violation") {
  SeededRng rng(16);
  auto aux = make_aux(3, 2, 3, Relaxation::penalty, 1.0, rng);
  std::vector<Mat> outs{aux.lambdas[1], aux.lambdas[2]};
  auto zero = constraint_violation(aux, outs);
  CHECK(zero.per_interface == std::vector<double>{0.0, 0.0});
  CHECK(zero.mean == 0.0);

  outs = {randn<double>(2, 3, rng), randn<double>(2, 3, rng)};
  auto r = constraint_violation(aux, outs);
  for (int k = 1; k < 3; ++k) {
    double s = 0.0;
    for (Eigen::Index i = 0; i < 6; ++i) {
      const double d = aux.lambdas[static_cast<std::size_t>(k)].data()[i] - outs[static_cast<std::size_t>(k - 1)].data()[i];
      s += d * d;
    }
    CHECK(r.per_interface[static_cast<std::size_t>(k - 1)] == doctest::Approx(std::sqrt(s)).epsilon(1e-14));
  }
  CHECK(r.mean == doctest::Approx((r.per_interface[0] + r.per_interface[1]) / 2));

  AuxState single;
  single.lambdas = {Mat()};
  CHECK(constraint_violation(single, {}).per_interface.empty());
}
