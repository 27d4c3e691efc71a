#include <gtest/gtest.h>

#include "cfl/metrics.h"
#include "cfl/rng.h"
#include "metric_oracles.h"

namespace cfl {
namespace {

AccuracyMatrix FromRows(std::vector<std::vector<double>> rows) {
  AccuracyMatrix m(rows.size());
  for (std::size_t t = 0; t < rows.size(); ++t) m.SetRow(t, rows[t]);
  return m;
}

TEST(AvgAccuracy, Examples) {
  const auto m = FromRows({{70, 0}, {60, 90}});
  EXPECT_DOUBLE_EQ(AvgAccuracy(m, 2), 75.0);
  EXPECT_DOUBLE_EQ(AvgAccuracy(m, 1), 70.0);
  const auto c = FromRows({{80, 80, 80}, {80, 80, 80}, {80, 80, 80}});
  for (std::size_t t = 1; t <= 3; ++t) EXPECT_DOUBLE_EQ(AvgAccuracy(c, t), 80.0);
}

TEST(AvgAccuracy, UnfilledRowIsAnError) {
  AccuracyMatrix m(3);
  m.SetRow(0, {1, 2, 3});
  EXPECT_THROW(AvgAccuracy(m, 2), std::logic_error);
  EXPECT_THROW(AvgAccuracy(m, 0), std::out_of_range);
  EXPECT_THROW(m.SetRow(1, {1, 2}), std::invalid_argument);
  EXPECT_THROW(m.SetRow(1, {1, 2, 101}), std::invalid_argument);
}

TEST(AvgForgetting, Examples) {
  EXPECT_DOUBLE_EQ(AvgForgetting(FromRows({{80, 0}, {60, 0}}), 2), 20.0);
  const auto m = FromRows({{80, 10, 0}, {70, 90, 0}, {60, 85, 0}});
  EXPECT_DOUBLE_EQ(AvgForgetting(m, 3), 12.5);
  EXPECT_THROW(AvgForgetting(m, 1), std::invalid_argument);
}

TEST(AvgForgetting, AfterLearnedSkipsPreTrainingAccuracy) {
  // Task 2 scored 95 before it was learned; only the literal form sees it.
  const auto m = FromRows({{80, 95, 0}, {70, 90, 0}, {60, 85, 0}});
  EXPECT_DOUBLE_EQ(AvgForgetting(m, 3, ForgettingVariant::kLiteral), (20 + 10) / 2.0);
  EXPECT_DOUBLE_EQ(AvgForgetting(m, 3, ForgettingVariant::kAfterLearned), (20 + 5) / 2.0);
}

TEST(BackwardTransfer, Examples) {
  EXPECT_DOUBLE_EQ(BackwardTransfer(FromRows({{80, 0}, {60, 0}})), -20.0);
  EXPECT_DOUBLE_EQ(BackwardTransfer(FromRows({{50, 1, 2}, {3, 60, 4}, {50, 60, 9}})), 0.0);
  EXPECT_THROW(BackwardTransfer(FromRows({{50}})), std::invalid_argument);
}

TEST(ForwardTransfer, Examples) {
  auto m = FromRows({{0, 15}, {0, 0}});
  m.set_random_baseline({0, 10});
  EXPECT_DOUBLE_EQ(ForwardTransfer(m), 5.0);
  auto z = FromRows({{0, 12, 0}, {0, 0, 33}, {0, 0, 0}});
  z.set_random_baseline({7, 12, 33});
  EXPECT_DOUBLE_EQ(ForwardTransfer(z), 0.0);
  const auto no_baseline = FromRows({{0, 15}, {0, 0}});
  EXPECT_THROW(ForwardTransfer(no_baseline), std::logic_error);
}

TEST(Metrics, MatchBruteForceOnRandomMatrices) {
  Rng rng(2718);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 8;
    AccuracyMatrix m(n);
    oracle::Grid g(n + 1, std::vector<double>(n + 1, 0.0));
    std::vector<double> b(n + 1, 0.0), b0(n);
    for (int t = 1; t <= n; ++t) {
      std::vector<double> row(n);
      for (int i = 1; i <= n; ++i) row[i - 1] = g[t][i] = rng.Uniform(0, 100);
      m.SetRow(t - 1, row);
      b0[t - 1] = b[t] = rng.Uniform(0, 100);
    }
    m.set_random_baseline(b0);
    for (int t = 1; t <= n; ++t) {
      const double acc = AvgAccuracy(m, t);
      EXPECT_NEAR(acc, oracle::Acc(g, t), 1e-12);
      EXPECT_GE(acc, 0.0);
      EXPECT_LE(acc, 100.0);
      if (t >= 2) {
        const double f = AvgForgetting(m, t);
        EXPECT_NEAR(f, oracle::Fgt(g, t), 1e-12);
        EXPECT_NEAR(AvgForgetting(m, t, ForgettingVariant::kAfterLearned),
                    oracle::Fgt(g, t, true), 1e-12);
        EXPECT_GE(f, -100.0);
        EXPECT_LE(f, 100.0);
      }
    }
    EXPECT_NEAR(BackwardTransfer(m), oracle::Bwt(g, n), 1e-12);
    EXPECT_NEAR(ForwardTransfer(m), oracle::Fwt(g, b, n), 1e-12);
  }
}

Task OneHotTask(std::size_t id, std::vector<int> labels, std::vector<int> class_set) {
  Task t;
  t.id = id;
  t.class_set = std::move(class_set);
  t.test.height = 1;
  t.test.width = 2;
  t.test.num_classes = 4;
  t.test.images = Matrix(labels.size(), 2);
  for (std::size_t r = 0; r < labels.size(); ++r) t.test.images(r, r % 2) = 1.0;
  t.test.labels = std::move(labels);
  return t;
}

TEST(EvaluateRow, ConstantPredictorOnBalancedSet) {
  ModelSpec spec{{2, 2}, Activation::kRelu};
  ParameterVector w{{0, 0, 0, 0, 1, 0}};  // bias favours class 0
  TaskStream s;
  s.num_classes = 2;
  s.tasks.push_back(OneHotTask(0, {0, 1, 0, 1}, {0, 1}));
  s.tasks[0].test.num_classes = 2;
  EXPECT_EQ(EvaluateRow(spec, w, s, EvalMode::kClassIl), (std::vector<double>{50.0}));
  ParameterVector flat{std::vector<double>(6, 0.0)};
  EXPECT_EQ(EvaluateRow(spec, flat, s, EvalMode::kTaskIl), (std::vector<double>{50.0}));
}

TEST(EvaluateRow, TaskIlMaskingResolvesCrossTaskConfusion) {
  // Two tasks over one-hot inputs; class c responds to input c % 2, so within
  // a task the model is perfect but classes 0/2 and 1/3 are indistinguishable.
  ModelSpec spec{{2, 4}, Activation::kRelu};
  ParameterVector w{{1, 0, 0, 1, 1, 0, 0, 1, 0, 0, 0, 0}};
  TaskStream s;
  s.num_classes = 4;
  s.tasks.push_back(OneHotTask(0, {0, 1}, {0, 1}));
  s.tasks.push_back(OneHotTask(1, {2, 3}, {2, 3}));
  EXPECT_EQ(EvaluateRow(spec, w, s, EvalMode::kTaskIl), (std::vector<double>{100, 100}));
  const auto cil = EvaluateRow(spec, w, s, EvalMode::kClassIl);
  EXPECT_EQ(cil[0], 100.0);
  EXPECT_LT(cil[1], 100.0);
  EXPECT_EQ(EvaluateRow(spec, w, s, EvalMode::kTaskIl), EvaluateRow(spec, w, s, EvalMode::kTaskIl));
}

}  // namespace
}  // namespace cfl
