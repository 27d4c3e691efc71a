#ifndef CFL_METRICS_H_
#define CFL_METRICS_H_

#include <cstddef>
#include <optional>
#include <vector>

#include "cfl/model.h"
#include "cfl/tasks.h"

namespace cfl {

enum class EvalMode { kClassIl, kTaskIl, kDomainIl };

// a(t, i): accuracy in percent on task i after training through task t.
// Indices here are 0-based; the metric functions take the 1-based task count
// t used by the formulas.
class AccuracyMatrix {
 public:
  explicit AccuracyMatrix(std::size_t num_tasks);

  std::size_t num_tasks() const { return n_; }

  void SetRow(std::size_t t, std::vector<double> row);
  bool row_filled(std::size_t t) const { return filled_.at(t); }
  const std::vector<double>& row(std::size_t t) const;
  double at(std::size_t t, std::size_t i) const { return row(t).at(i); }

  void set_random_baseline(std::vector<double> b);
  const std::vector<double>& random_baseline() const { return baseline_; }

 private:
  std::size_t n_;
  std::vector<std::vector<double>> rows_;
  std::vector<bool> filled_;
  std::vector<double> baseline_;
};

// Per-task test accuracy (%) of `w`. Task-IL restricts the argmax to each
// task's class set; the other modes use the full argmax.
std::vector<double> EvaluateRow(const ModelSpec& spec, const ParameterVector& w,
                                const TaskStream& stream, EvalMode mode);

// Acc_t = (1/t) sum_{i<=t} a_{t,i}.
double AvgAccuracy(const AccuracyMatrix& m, std::size_t t);

enum class ForgettingVariant {
  kLiteral,       // max over j = 1..t-1
  kAfterLearned,  // max over j = i..t-1
};

// Fgt_t = (1/(t-1)) sum_{i<t} max_j (a_{j,i} - a_{t,i}); requires t >= 2.
double AvgForgetting(const AccuracyMatrix& m, std::size_t t,
                     ForgettingVariant variant = ForgettingVariant::kLiteral);

// BWT = (1/(T-1)) sum_{i<T} (a_{T,i} - a_{i,i}).
double BackwardTransfer(const AccuracyMatrix& m);

// FWT = (1/(T-1)) sum_{i=2..T} (a_{i-1,i} - b_i).
double ForwardTransfer(const AccuracyMatrix& m);

}  // namespace cfl

#endif  // CFL_METRICS_H_
