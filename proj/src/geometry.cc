#include "cfl/geometry.h"

#include <cmath>

namespace cfl {

void RefineConfig::Validate() const {
  if (!(rate_percent >= 0.0 && rate_percent <= 100.0)) {
    throw std::invalid_argument("rate_percent must lie in [0, 100]");
  }
}

namespace {

void CheckSameLength(const GradientVector& g, const GradientVector& g_ref) {
  if (g.size() != g_ref.size()) {
    throw std::invalid_argument("gradient and reference differ in length");
  }
}

GradientVector Rescaled(GradientVector v, double target_norm) {
  const double n = vec::Norm(v.values);
  if (n == 0.0) return v;
  const double s = target_norm / n;
  for (double& x : v.values) x *= s;
  return v;
}

}  // namespace

GradientVector ProjectOut(const GradientVector& g, const GradientVector& g_ref) {
  CheckSameLength(g, g_ref);
  const double rr = vec::Dot(g_ref.values, g_ref.values);
  if (rr == 0.0) throw DegenerateReferenceError();
  const double coef = vec::Dot(g.values, g_ref.values) / rr;
  GradientVector out = g;
  vec::Axpy(-coef, g_ref.values, out.values);
  return out;
}

GradientVector ProjectConflict(const GradientVector& g, const GradientVector& g_ref) {
  CheckSameLength(g, g_ref);
  if (vec::Dot(g_ref.values, g_ref.values) == 0.0) throw DegenerateReferenceError();
  if (vec::Dot(g.values, g_ref.values) > 0.0) return g;
  return ProjectOut(g, g_ref);
}

GradientVector RotateToward(const GradientVector& g, const GradientVector& g_ref) {
  CheckSameLength(g, g_ref);
  GradientVector sum = g;
  vec::Axpy(1.0, g_ref.values, sum.values);
  if (vec::Norm(sum.values) == 0.0) throw DegenerateRotationError();
  return Rescaled(std::move(sum), vec::Norm(g.values));
}

GradientVector Refine(const GradientVector& g, const GradientVector& g_ref,
                      const RefineConfig& cfg, Rng& rng) {
  CheckSameLength(g, g_ref);
  if (vec::Dot(g_ref.values, g_ref.values) == 0.0) return g;
  const bool eligible = cfg.condition == RefineCondition::kAlways ||
                        vec::Dot(g.values, g_ref.values) <= 0.0;
  if (!eligible || cfg.rate_percent <= 0.0) return g;
  if (cfg.rate_percent < 100.0 && !(rng.Uniform() < cfg.rate_percent / 100.0)) {
    return g;
  }
  switch (cfg.mode) {
    case RefineMode::kProject:
      return ProjectOut(g, g_ref);
    case RefineMode::kAverage: {
      GradientVector out = g;
      vec::Axpy(1.0, g_ref.values, out.values);
      for (double& x : out.values) x *= 0.5;
      return out;
    }
    case RefineMode::kRotate:
      try {
        return RotateToward(g, g_ref);
      } catch (const DegenerateRotationError&) {
        return g;
      }
    case RefineMode::kProjectScale:
      return Rescaled(ProjectOut(g, g_ref), vec::Norm(g.values));
  }
  return g;
}

}  // namespace cfl
