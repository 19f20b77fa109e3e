#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "resmtl/error.hpp"
#include "resmtl/losses.hpp"
#include "support/toy.hpp"

using namespace resmtl;
using namespace resmtl::testing;

namespace {

double plain_ce(const Matrix& logits, std::span<const std::size_t> targets) {
  double total = 0.0;
  for (std::size_t n = 0; n < logits.rows(); ++n) {
    double mx = logits(n, 0);
    for (double v : logits.row(n)) mx = std::max(mx, v);
    double s = 0.0;
    for (double v : logits.row(n)) s += std::exp(v - mx);
    total += -(logits(n, targets[n]) - mx - std::log(s));
  }
  return total / static_cast<double>(logits.rows());
}

// Direct sigmoid form. 1 - sigmoid(z) is evaluated as sigmoid(-z) so the
// reference itself does not cancel for large z.
double naive_bce(double z, double t) {
  const long double zl = z;
  const long double s = 1.0L / (1.0L + std::exp(-zl));
  const long double s_neg = 1.0L / (1.0L + std::exp(zl));
  return static_cast<double>(-(t * std::log(s) + (1.0L - t) * std::log(s_neg)));
}

}  // namespace

TEST(LabelSmoothing, AlphaZeroIsCrossEntropy) {
  Rng rng(1);
  for (std::size_t c : {2u, 3u, 7u}) {
    auto logits = random_matrix(9, c, rng, 2.0);
    std::vector<std::size_t> y(9);
    for (auto& v : y) v = rng.uniform_index(c);
    auto r = label_smoothing_ce(logits, y, {0.0, c});
    EXPECT_NEAR(r.loss, plain_ce(logits, y), 1e-12);
  }
}

TEST(LabelSmoothing, TwoClassWorkedExample) {
  // p = (0.7, 0.3) from logits (ln 0.7, ln 0.3)
  auto logits = Matrix::from_rows({{std::log(0.7), std::log(0.3)}});
  std::vector<std::size_t> y{0};
  auto r = label_smoothing_ce(logits, y, {0.1, 2});
  EXPECT_NEAR(r.loss, 0.95 * -std::log(0.7) + 0.05 * -std::log(0.3), 1e-12);
  EXPECT_NEAR(r.loss, 0.39904, 1e-5);
}

TEST(LabelSmoothing, UniformLogitsGiveLogC) {
  for (std::size_t c : {2u, 5u}) {
    for (double alpha : {0.0, 0.1, 0.5, 0.9}) {
      Matrix logits(3, c, 0.7);
      std::vector<std::size_t> y{0, c - 1, 1};
      EXPECT_NEAR(label_smoothing_ce(logits, y, {alpha, c}).loss, std::log(double(c)), 1e-12);
    }
  }
}

TEST(LabelSmoothing, GradientMatchesFiniteDifferences) {
  Rng rng(2);
  auto logits = random_matrix(5, 4, rng);
  std::vector<std::size_t> y{0, 3, 1, 2, 2};
  std::vector<std::uint8_t> mask{1, 1, 0, 1, 1};
  LabelSmoothingConfig cfg{0.2, 4};
  auto r = label_smoothing_ce(logits, y, cfg, mask);
  auto numeric = numeric_gradient(
      logits, [&] { return label_smoothing_ce(logits, y, cfg, mask).loss; }, 1e-6);
  EXPECT_LE(max_abs_diff(r.grad, numeric), 1e-8);
  for (std::size_t k = 0; k < 4; ++k) EXPECT_EQ(r.grad(2, k), 0.0);
  EXPECT_EQ(r.valid, 4u);
}

TEST(LabelSmoothing, GradientRowsSumToZero) {
  // softmax and the smoothed target both sum to one per row.
  Rng rng(3);
  auto logits = random_matrix(6, 5, rng);
  std::vector<std::size_t> y{0, 1, 2, 3, 4, 0};
  auto r = label_smoothing_ce(logits, y, {0.3, 5});
  for (std::size_t n = 0; n < 6; ++n) {
    double s = 0.0;
    for (double v : r.grad.row(n)) s += v;
    EXPECT_NEAR(s, 0.0, 1e-15);
  }
}

TEST(LabelSmoothing, LiteralFormDropsSmoothingGradient) {
  auto logits = Matrix::from_rows({{std::log(0.7), std::log(0.3)}});
  std::vector<std::size_t> y{0};
  LabelSmoothingConfig cfg{0.1, 2, true};
  auto r = label_smoothing_ce(logits, y, cfg);
  EXPECT_NEAR(r.loss, 0.9 * -std::log(0.7) - 0.1, 1e-12);
  EXPECT_NEAR(r.grad(0, 0), 0.9 * (0.7 - 1.0), 1e-12);
  EXPECT_NEAR(r.grad(0, 1), 0.9 * 0.3, 1e-12);
}

TEST(LabelSmoothing, ValidatesInputs) {
  Matrix logits(2, 3);
  std::vector<std::size_t> y{0, 3};
  EXPECT_THROW(label_smoothing_ce(logits, y, {0.1, 3}), ValidationError);
  std::vector<std::size_t> ok{0, 1};
  EXPECT_THROW(label_smoothing_ce(logits, ok, {1.0, 3}), ValidationError);
  EXPECT_THROW(label_smoothing_ce(logits, ok, {0.1, 1}), ValidationError);
  EXPECT_THROW(label_smoothing_ce(logits, ok, {0.1, 2}), ShapeError);
}

TEST(Mse, ExactPredictionIsZero) {
  auto a = Matrix::from_rows({{0.3}, {0.9}});
  auto r = mse(a, a);
  EXPECT_EQ(r.loss, 0.0);
}

TEST(Mse, WorkedExample) {
  auto r = mse(Matrix::from_rows({{1}, {2}}), Matrix::from_rows({{0}, {0}}));
  EXPECT_DOUBLE_EQ(r.loss, 2.5);
  EXPECT_DOUBLE_EQ(r.grad(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(r.grad(1, 0), 2.0);
}

TEST(Mse, FullyMaskedIsZero) {
  std::vector<std::uint8_t> mask{0, 0};
  auto r = mse(Matrix::from_rows({{1}, {2}}), Matrix::from_rows({{0}, {0}}), mask);
  EXPECT_EQ(r.loss, 0.0);
  EXPECT_EQ(r.valid, 0u);
  for (double v : r.grad.values()) EXPECT_EQ(v, 0.0);
}

TEST(Mse, MaskAveragesOverValidOnly) {
  std::vector<std::uint8_t> mask{1, 0, 1};
  auto r = mse(Matrix::from_rows({{1}, {100}, {3}}), Matrix::from_rows({{0}, {0}, {0}}), mask);
  EXPECT_DOUBLE_EQ(r.loss, 5.0);
}

TEST(Bce, ZeroLogit) {
  auto r = bce_with_logits(Matrix::from_rows({{0}}), Matrix::from_rows({{1}}));
  EXPECT_NEAR(r.loss, std::log(2.0), 1e-15);
}

TEST(Bce, LargeLogitIsStable) {
  auto r = bce_with_logits(Matrix::from_rows({{1000}, {-1000}}), Matrix::from_rows({{1}, {0}}));
  EXPECT_TRUE(std::isfinite(r.loss));
  EXPECT_NEAR(r.loss, 0.0, 1e-300);
}

TEST(Bce, MatchesNaiveFormula) {
  for (double z = -30.0; z <= 30.0; z += 0.25) {
    for (double t : {0.0, 1.0}) {
      auto r = bce_with_logits(Matrix::from_rows({{z}}), Matrix::from_rows({{t}}));
      EXPECT_NEAR(r.loss, naive_bce(z, t), 1e-10) << "z=" << z << " t=" << t;
    }
  }
}

TEST(Bce, LabelFlipSymmetry) {
  Rng rng(4);
  for (int i = 0; i < 100; ++i) {
    const double z = rng.normal(0.0, 5.0);
    auto a = bce_with_logits(Matrix::from_rows({{z}}), Matrix::from_rows({{1}}));
    auto b = bce_with_logits(Matrix::from_rows({{-z}}), Matrix::from_rows({{0}}));
    EXPECT_NEAR(a.loss, b.loss, 1e-14);
  }
}

TEST(Bce, GradientMatchesFiniteDifferences) {
  Rng rng(5);
  auto z = random_matrix(6, 1, rng, 3.0);
  auto t = Matrix::from_rows({{1}, {0}, {1}, {1}, {0}, {0}});
  auto r = bce_with_logits(z, t);
  auto numeric = numeric_gradient(z, [&] { return bce_with_logits(z, t).loss; }, 1e-6);
  EXPECT_LE(max_abs_diff(r.grad, numeric), 1e-9);
}

TEST(TotalLoss, UnitWeightsSumLosses) {
  TaskLossBundle b;
  for (Task t : kAllTasks) b.loss[t] = double(index_of(t) + 1);
  EXPECT_DOUBLE_EQ(total_loss(b, TaskWeights::uniform(1.0)), 28.0);
}

TEST(TotalLoss, DoublingOneWeightDoublesItsContribution) {
  Rng rng(6);
  auto p = make_toy_problem(5, 4, rng);
  auto net = make_toy_net(p, 6, rng);
  auto fwd = forward(net, p.inputs);
  auto bundle = compute_task_losses(fwd.outputs, p.targets, p.settings);
  for (Task k : kAllTasks) {
    auto w = TaskWeights::uniform(1.0);
    for (Task t : kAllTasks) w.lambda[t] = 0.3 + 0.1 * double(index_of(t));
    auto w2 = w;
    w2.lambda[k] *= 2.0;
    EXPECT_NEAR(total_loss(bundle, w2) - total_loss(bundle, w), w.lambda[k] * bundle.loss[k],
                1e-12);
    auto g1 = backward(net, fwd.cache, weighted_head_grads(bundle, w));
    auto g2 = backward(net, fwd.cache, weighted_head_grads(bundle, w2));
    TaskWeights only;
    for (Task t : kAllTasks) only.lambda[t] = 0.0;
    only.lambda[k] = w.lambda[k];
    auto gk = backward(net, fwd.cache, weighted_head_grads(bundle, only));
    for (std::size_t i = 0; i < g1.size(); ++i)
      EXPECT_LE(max_abs_diff(subtract(g2.values[i], g1.values[i]), gk.values[i]), 1e-12);
  }
}

TEST(TotalLoss, GradientIsSumOfPerTaskGradients) {
  Rng rng(7);
  auto p = make_toy_problem(6, 5, rng);
  auto net = make_toy_net(p, 7, rng);
  auto fwd = forward(net, p.inputs);
  auto bundle = compute_task_losses(fwd.outputs, p.targets, p.settings);
  TaskWeights w;
  for (Task t : kAllTasks) w.lambda[t] = 0.5 + rng.uniform01();
  auto full = backward(net, fwd.cache, weighted_head_grads(bundle, w));

  std::vector<Matrix> summed;
  for (const auto& g : full.values) summed.emplace_back(g.rows(), g.cols());
  for (Task k : kAllTasks) {
    // Only head k receives a gradient; unit weight, then scale by lambda_k.
    TaskArray<Matrix> heads{};
    heads[k] = bundle.grad[k];
    auto gk = backward(net, fwd.cache, heads);
    for (std::size_t i = 0; i < summed.size(); ++i) add_in_place(summed[i], scale(gk.values[i], w.lambda[k]));
  }
  for (std::size_t i = 0; i < summed.size(); ++i)
    EXPECT_LE(max_abs_diff(summed[i], full.values[i]), 1e-10);
}

TEST(TaskWeights, Validation) {
  auto w = TaskWeights::uniform(1.0);
  EXPECT_NO_THROW(w.validate());
  w.lambda[Task::y] = -0.1;
  EXPECT_THROW(w.validate(), ValidationError);
}

TEST(LossAssignment, Defaults) {
  TaskArray<std::size_t> n{};
  n[Task::subtlety] = 5;
  n[Task::state] = 2;
  n[Task::z] = 3;
  n[Task::diagnosis] = 2;
  auto a = default_loss_assignment(n);
  EXPECT_EQ(a[Task::subtlety], LossKind::label_smoothing);
  EXPECT_EQ(a[Task::state], LossKind::bce_with_logits);
  EXPECT_EQ(a[Task::z], LossKind::label_smoothing);
  EXPECT_EQ(a[Task::diagnosis], LossKind::label_smoothing);
  for (Task t : kRegressionTasks) EXPECT_EQ(a[t], LossKind::mse);
  n[Task::state] = 3;
  EXPECT_EQ(default_loss_assignment(n)[Task::state], LossKind::label_smoothing);
}

TEST(LossProperty, LossesFiniteAndNonNegative) {
  Rng rng(8);
  for (int trial = 0; trial < 30; ++trial) {
    auto p = make_toy_problem(1 + rng.uniform_index(8), 4, rng, 2 + rng.uniform_index(4));
    for (Task t : kAllTasks)
      for (auto& m : p.targets[t].mask) m = rng.uniform01() < 0.8;
    auto net = make_toy_net(p, 5, rng);
    for (auto& ref : net.parameters()) scale_in_place(*ref.value, 20.0);
    auto fwd = forward(net, p.inputs);
    auto bundle = compute_task_losses(fwd.outputs, p.targets, p.settings);
    for (Task t : kAllTasks) {
      EXPECT_TRUE(std::isfinite(bundle.loss[t]));
      EXPECT_GE(bundle.loss[t], 0.0);
    }
  }
}

TEST(ClassToUnit, EvenlySpaced) {
  EXPECT_DOUBLE_EQ(class_to_unit(0, 5), 0.0);
  EXPECT_DOUBLE_EQ(class_to_unit(2, 5), 0.5);
  EXPECT_DOUBLE_EQ(class_to_unit(4, 5), 1.0);
}
