#ifndef CFL_GEOMETRY_H_
#define CFL_GEOMETRY_H_

#include <stdexcept>

#include "cfl/model.h"
#include "cfl/rng.h"

namespace cfl {

enum class RefineMode { kProject, kAverage, kRotate, kProjectScale };
enum class RefineCondition { kConflictOnly, kAlways };

// How a local gradient is adjusted against the reference gradient. The
// default is the conflict-only projection applied every time it is eligible.
struct RefineConfig {
  RefineMode mode = RefineMode::kProject;
  RefineCondition condition = RefineCondition::kConflictOnly;
  double rate_percent = 100.0;

  void Validate() const;
};

class DegenerateReferenceError : public std::domain_error {
 public:
  DegenerateReferenceError() : std::domain_error("reference gradient has zero norm") {}
};

class DegenerateRotationError : public std::domain_error {
 public:
  DegenerateRotationError() : std::domain_error("g + g_ref has zero norm") {}
};

// Returns g when g.g_ref > 0, otherwise g with its component along g_ref
// removed. Throws DegenerateReferenceError when g_ref is zero.
GradientVector ProjectConflict(const GradientVector& g, const GradientVector& g_ref);

// Unconditional removal of the g_ref component.
GradientVector ProjectOut(const GradientVector& g, const GradientVector& g_ref);

// (g + g_ref) rescaled to |g|. Throws DegenerateRotationError when g = -g_ref.
GradientVector RotateToward(const GradientVector& g, const GradientVector& g_ref);

// Applies `cfg` to g. Fires when the condition holds and a uniform draw from
// `rng` falls below rate/100 (no draw at rate 0 or 100). A zero reference and a
// degenerate rotation both leave g unchanged.
GradientVector Refine(const GradientVector& g, const GradientVector& g_ref,
                      const RefineConfig& cfg, Rng& rng);

}  // namespace cfl

#endif  // CFL_GEOMETRY_H_
