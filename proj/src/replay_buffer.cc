#include "cfl/replay_buffer.h"

#include <numeric>
#include <utility>

namespace cfl {

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw std::invalid_argument("buffer capacity must be >= 1");
  items_.reserve(capacity);
}

void ReplayBuffer::Insert(Example item, InsertPolicy policy, Rng& rng) {
  ++observed_;
  if (items_.size() < capacity_) {
    items_.push_back(std::move(item));
    return;
  }
  switch (policy) {
    case InsertPolicy::kReservoir: {
      const std::uint64_t j = rng.UniformInt(observed_);
      if (j < capacity_) items_[j] = std::move(item);
      break;
    }
    case InsertPolicy::kSlidingWindow:
      items_[oldest_] = std::move(item);
      oldest_ = (oldest_ + 1) % capacity_;
      break;
    case InsertPolicy::kRandomReplace:
      items_[rng.UniformInt(capacity_)] = std::move(item);
      break;
  }
}

void ReplayBuffer::InsertBatch(const Batch& batch, InsertPolicy policy, Rng& rng) {
  if (batch.inputs.rows != batch.labels.size()) {
    throw std::invalid_argument("batch inputs and labels disagree on row count");
  }
  for (std::size_t r = 0; r < batch.size(); ++r) {
    Example e;
    const auto x = batch.inputs.row(r);
    e.input.assign(x.begin(), x.end());
    e.label = batch.labels[r];
    if (batch.logits) {
      const auto z = batch.logits->row(r);
      e.logits.emplace(z.begin(), z.end());
    }
    Insert(std::move(e), policy, rng);
  }
}

std::vector<Example> ReplayBuffer::Sample(std::size_t m, Rng& rng) const {
  if (m == 0) throw std::invalid_argument("sample size must be >= 1");
  if (items_.empty()) throw EmptyBufferError();
  const std::size_t k = std::min(m, items_.size());
  std::vector<std::size_t> idx(items_.size());
  std::iota(idx.begin(), idx.end(), 0);
  // Partial Fisher-Yates.
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + rng.UniformInt(idx.size() - i);
    std::swap(idx[i], idx[j]);
  }
  std::vector<Example> out;
  out.reserve(k);
  for (std::size_t i = 0; i < k; ++i) out.push_back(items_[idx[i]]);
  return out;
}

Batch ToBatch(const std::vector<Example>& examples, bool require_logits) {
  Batch b;
  if (examples.empty()) return b;
  const std::size_t dim = examples.front().input.size();
  b.inputs = Matrix(examples.size(), dim);
  b.labels.reserve(examples.size());
  bool all_logits = true;
  for (std::size_t r = 0; r < examples.size(); ++r) {
    const Example& e = examples[r];
    if (e.input.size() != dim) throw std::invalid_argument("ragged example inputs");
    std::copy(e.input.begin(), e.input.end(), b.inputs.row(r).begin());
    b.labels.push_back(e.label);
    all_logits = all_logits && e.logits.has_value();
  }
  if (require_logits && !all_logits) {
    throw std::invalid_argument("malformed buffer: stored example lacks logits");
  }
  if (all_logits) {
    const std::size_t c = examples.front().logits->size();
    Matrix z(examples.size(), c);
    for (std::size_t r = 0; r < examples.size(); ++r) {
      const auto& zr = *examples[r].logits;
      if (zr.size() != c) throw std::invalid_argument("ragged stored logits");
      std::copy(zr.begin(), zr.end(), z.row(r).begin());
    }
    b.logits = std::move(z);
  }
  return b;
}

}  // namespace cfl
