#include <gtest/gtest.h>

#include <cmath>

#include "cfl/geometry.h"
#include "cfl/rng.h"
#include "test_util.h"

namespace cfl {
namespace {

using testing::RandomGradient;

GradientVector G(std::vector<double> v) { return GradientVector{std::move(v)}; }

void ExpectNear(const GradientVector& a, const std::vector<double>& b, double tol = 1e-12) {
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < b.size(); ++i) EXPECT_NEAR(a.values[i], b[i], tol) << i;
}

TEST(ProjectConflict, ExamplesFromHand) {
  ExpectNear(ProjectConflict(G({1, 0}), G({-1, 1})), {0.5, 0.5});
  ExpectNear(ProjectConflict(G({1, 1}), G({1, 0})), {1, 1});
  // Orthogonal counts as a conflict; the projection leaves g unchanged.
  ExpectNear(ProjectConflict(G({0, 2}), G({3, 0})), {0, 2});
}

TEST(ProjectConflict, ConflictAndAntiParallelCases) {
  ExpectNear(ProjectConflict(G({1, 1}), G({-1, 0})), {0, 1});
  ExpectNear(ProjectConflict(G({-2, 0}), G({1, 0})), {0, 0});
}

TEST(Refine, ModesOnConflictingPair) {
  Rng rng(0);
  const auto g = G({1, 1}), r = G({-1, 0});
  auto run = [&](RefineMode m) {
    return Refine(g, r, RefineConfig{m, RefineCondition::kConflictOnly, 100}, rng);
  };
  ExpectNear(run(RefineMode::kProject), {0, 1});
  ExpectNear(run(RefineMode::kAverage), {0, 0.5});
  ExpectNear(run(RefineMode::kRotate), {0, std::sqrt(2.0)});
  ExpectNear(run(RefineMode::kProjectScale), {0, std::sqrt(2.0)});
}

TEST(ProjectConflict, ScaleInvariantInReference) {
  Rng rng(8);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t n = 1 + rng.UniformInt(6);
    const auto g = RandomGradient(rng, n);
    const auto r = RandomGradient(rng, n);
    auto cr = r;
    const double c = std::exp(rng.Uniform(-5, 5));
    for (double& v : cr.values) v *= c;
    EXPECT_EQ(vec::Dot(g.values, r.values) > 0, vec::Dot(g.values, cr.values) > 0);
    EXPECT_LT(testing::RelError(ProjectConflict(g, cr).values, ProjectConflict(g, r).values),
              1e-12);
  }
}

TEST(ProjectConflict, ZeroReferenceThrows) {
  EXPECT_THROW(ProjectConflict(G({1, 2}), G({0, 0})), DegenerateReferenceError);
}

TEST(ProjectConflict, LengthMismatchThrows) {
  EXPECT_THROW(ProjectConflict(G({1, 2}), G({1})), std::invalid_argument);
}

TEST(ProjectConflict, Properties) {
  Rng rng(31);
  for (int trial = 0; trial < 2000; ++trial) {
    const std::size_t n = 1 + rng.UniformInt(12);
    const auto g = RandomGradient(rng, n);
    const auto r = RandomGradient(rng, n);
    const auto p = ProjectConflict(g, r);
    const double dot = vec::Dot(g.values, r.values);
    const double scale = vec::Norm(g.values) * vec::Norm(r.values) + 1.0;
    EXPECT_GE(vec::Dot(p.values, r.values), -1e-12 * scale);
    EXPECT_LE(vec::Norm(p.values), vec::Norm(g.values) * (1 + 1e-12) + 1e-15);
    if (dot > 0) EXPECT_EQ(p, g);
    // idempotent
    const auto pp = ProjectConflict(p, r);
    EXPECT_LT(testing::RelError(pp.values, p.values), 1e-10);
  }
}

TEST(Refine, AverageAndRotateExamples) {
  Rng rng(0);
  RefineConfig avg{RefineMode::kAverage, RefineCondition::kConflictOnly, 100};
  ExpectNear(Refine(G({1, 0}), G({-1, 1}), avg, rng), {0, 0.5});
  RefineConfig rot{RefineMode::kRotate, RefineCondition::kConflictOnly, 100};
  ExpectNear(Refine(G({1, 0}), G({-1, 1}), rot, rng), {0, 1});
}

TEST(Refine, ProjectScaleKeepsNorm) {
  Rng rng(0);
  RefineConfig cfg{RefineMode::kProjectScale, RefineCondition::kConflictOnly, 100};
  const auto out = Refine(G({1, 0}), G({-1, 1}), cfg, rng);
  const double s = std::sqrt(0.5);
  ExpectNear(out, {s, s});
}

TEST(Refine, ConflictOnlyLeavesAlignedGradientAlone) {
  Rng rng(0);
  for (auto mode : {RefineMode::kProject, RefineMode::kAverage, RefineMode::kRotate,
                    RefineMode::kProjectScale}) {
    RefineConfig cfg{mode, RefineCondition::kConflictOnly, 100};
    EXPECT_EQ(Refine(G({1, 1}), G({1, 0}), cfg, rng), G({1, 1}));
  }
}

TEST(Refine, AlwaysConditionAppliesWithoutConflict) {
  Rng rng(0);
  RefineConfig cfg{RefineMode::kAverage, RefineCondition::kAlways, 100};
  ExpectNear(Refine(G({1, 1}), G({1, 0}), cfg, rng), {1, 0.5});
  RefineConfig proj{RefineMode::kProject, RefineCondition::kAlways, 100};
  ExpectNear(Refine(G({1, 1}), G({1, 0}), proj, rng), {0, 1});
}

TEST(Refine, RateZeroIsIdentityAndDrawsNothing) {
  Rng rng(5), untouched(5);
  RefineConfig cfg{RefineMode::kProject, RefineCondition::kAlways, 0};
  EXPECT_EQ(Refine(G({1, 0}), G({-1, 1}), cfg, rng), G({1, 0}));
  EXPECT_EQ(rng.NextU64(), untouched.NextU64());
}

TEST(Refine, RateHundredDrawsNothing) {
  Rng rng(5), untouched(5);
  RefineConfig cfg{RefineMode::kProject, RefineCondition::kConflictOnly, 100};
  Refine(G({1, 0}), G({-1, 1}), cfg, rng);
  EXPECT_EQ(rng.NextU64(), untouched.NextU64());
}

TEST(Refine, PartialRateFiresAtThatFrequency) {
  Rng rng(12);
  RefineConfig cfg{RefineMode::kProject, RefineCondition::kConflictOnly, 30};
  int fired = 0;
  const int n = 40000;
  for (int i = 0; i < n; ++i) {
    if (Refine(G({1, 0}), G({-1, 1}), cfg, rng) != G({1, 0})) ++fired;
  }
  EXPECT_NEAR(static_cast<double>(fired) / n, 0.30, 0.01);
}

TEST(Refine, ZeroReferenceReturnsInput) {
  Rng rng(0);
  for (auto mode : {RefineMode::kProject, RefineMode::kAverage, RefineMode::kRotate,
                    RefineMode::kProjectScale}) {
    RefineConfig cfg{mode, RefineCondition::kAlways, 100};
    EXPECT_EQ(Refine(G({1, 2}), G({0, 0}), cfg, rng), G({1, 2}));
  }
}

TEST(Refine, DegenerateRotationFallsBackToInput) {
  Rng rng(0);
  RefineConfig cfg{RefineMode::kRotate, RefineCondition::kConflictOnly, 100};
  EXPECT_EQ(Refine(G({1, -2}), G({-1, 2}), cfg, rng), G({1, -2}));
  EXPECT_THROW(RotateToward(G({1, -2}), G({-1, 2})), DegenerateRotationError);
}

TEST(RefineConfig, ValidateRejectsOutOfRangeRate) {
  EXPECT_THROW((RefineConfig{RefineMode::kProject, RefineCondition::kAlways, 150}).Validate(),
               std::invalid_argument);
  EXPECT_THROW((RefineConfig{RefineMode::kProject, RefineCondition::kAlways, -1}).Validate(),
               std::invalid_argument);
  EXPECT_NO_THROW((RefineConfig{}).Validate());
}

TEST(Refine, RotatePreservesNormProperty) {
  Rng rng(77), r2(0);
  RefineConfig cfg{RefineMode::kRotate, RefineCondition::kAlways, 100};
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t n = 1 + rng.UniformInt(8);
    const auto g = RandomGradient(rng, n);
    const auto r = RandomGradient(rng, n);
    const auto out = Refine(g, r, cfg, r2);
    EXPECT_NEAR(vec::Norm(out.values), vec::Norm(g.values), 1e-10);
  }
}

}  // namespace
}  // namespace cfl
