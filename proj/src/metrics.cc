#include "cfl/metrics.h"

#include <algorithm>
#include <stdexcept>
#include <string>

namespace cfl {

AccuracyMatrix::AccuracyMatrix(std::size_t num_tasks)
    : n_(num_tasks), rows_(num_tasks), filled_(num_tasks, false) {
  if (num_tasks == 0) throw std::invalid_argument("accuracy matrix needs >= 1 task");
}

void AccuracyMatrix::SetRow(std::size_t t, std::vector<double> row) {
  if (t >= n_) throw std::out_of_range("accuracy row index out of range");
  if (row.size() != n_) throw std::invalid_argument("accuracy row has wrong length");
  for (double v : row) {
    if (!(v >= 0.0 && v <= 100.0)) throw std::invalid_argument("accuracy outside [0,100]");
  }
  rows_[t] = std::move(row);
  filled_[t] = true;
}

const std::vector<double>& AccuracyMatrix::row(std::size_t t) const {
  if (t >= n_ || !filled_[t]) {
    throw std::logic_error("accuracy row " + std::to_string(t + 1) + " is not filled");
  }
  return rows_[t];
}

void AccuracyMatrix::set_random_baseline(std::vector<double> b) {
  if (b.size() != n_) throw std::invalid_argument("baseline has wrong length");
  baseline_ = std::move(b);
}

std::vector<double> EvaluateRow(const ModelSpec& spec, const ParameterVector& w,
                                const TaskStream& stream, EvalMode mode) {
  std::vector<double> out;
  out.reserve(stream.size());
  for (const Task& task : stream.tasks) {
    if (task.test.size() == 0) throw std::invalid_argument("task has no test set");
    const Matrix logits = Forward(spec, w, task.test.images);
    const std::vector<int> pred =
        mode == EvalMode::kTaskIl
            ? ArgmaxRows(logits, std::span<const int>(task.class_set))
            : ArgmaxRows(logits);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
      correct += pred[i] == task.test.labels[i];
    }
    out.push_back(100.0 * static_cast<double>(correct) /
                  static_cast<double>(pred.size()));
  }
  return out;
}

double AvgAccuracy(const AccuracyMatrix& m, std::size_t t) {
  if (t < 1 || t > m.num_tasks()) throw std::out_of_range("task count out of range");
  const auto& row = m.row(t - 1);
  double s = 0.0;
  for (std::size_t i = 0; i < t; ++i) s += row[i];
  return s / static_cast<double>(t);
}

double AvgForgetting(const AccuracyMatrix& m, std::size_t t, ForgettingVariant variant) {
  if (t < 2) throw std::invalid_argument("forgetting needs t >= 2");
  if (t > m.num_tasks()) throw std::out_of_range("task count out of range");
  const auto& cur = m.row(t - 1);
  double s = 0.0;
  for (std::size_t i = 0; i + 1 < t; ++i) {
    const std::size_t j0 = variant == ForgettingVariant::kLiteral ? 0 : i;
    double best = m.at(j0, i) - cur[i];
    for (std::size_t j = j0 + 1; j + 1 < t; ++j) best = std::max(best, m.at(j, i) - cur[i]);
    s += best;
  }
  return s / static_cast<double>(t - 1);
}

double BackwardTransfer(const AccuracyMatrix& m) {
  const std::size_t n = m.num_tasks();
  if (n < 2) throw std::invalid_argument("BWT needs T >= 2");
  const auto& last = m.row(n - 1);
  double s = 0.0;
  for (std::size_t i = 0; i + 1 < n; ++i) s += last[i] - m.at(i, i);
  return s / static_cast<double>(n - 1);
}

double ForwardTransfer(const AccuracyMatrix& m) {
  const std::size_t n = m.num_tasks();
  if (n < 2) throw std::invalid_argument("FWT needs T >= 2");
  const auto& b = m.random_baseline();
  if (b.size() != n) throw std::logic_error("FWT needs the random-init baseline");
  double s = 0.0;
  for (std::size_t i = 1; i < n; ++i) s += m.at(i - 1, i) - b[i];
  return s / static_cast<double>(n - 1);
}

}  // namespace cfl
