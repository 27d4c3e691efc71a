#ifndef CFL_REPLAY_BUFFER_H_
#define CFL_REPLAY_BUFFER_H_

#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <vector>

#include "cfl/model.h"
#include "cfl/rng.h"

namespace cfl {

enum class InsertPolicy { kReservoir, kSlidingWindow, kRandomReplace };

struct Example {
  std::vector<double> input;
  int label = 0;
  std::optional<std::vector<double>> logits;

  bool operator==(const Example&) const = default;
};

class EmptyBufferError : public std::runtime_error {
 public:
  EmptyBufferError() : std::runtime_error("replay buffer is empty") {}
};

// Bounded per-client replay memory. `observed_count` is the number of stream
// items offered so far and is never reset across tasks.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity);

  std::size_t capacity() const { return capacity_; }
  std::size_t size() const { return items_.size(); }
  bool empty() const { return items_.empty(); }
  std::uint64_t observed_count() const { return observed_; }
  const std::vector<Example>& items() const { return items_; }

  // Offers every row of `batch` to the buffer in order. When `batch.logits` is
  // set the rows are stored together with their logits.
  void InsertBatch(const Batch& batch, InsertPolicy policy, Rng& rng);
  void Insert(Example item, InsertPolicy policy, Rng& rng);

  // Uniform sample of min(m, size()) stored items without replacement.
  // Throws EmptyBufferError on an empty buffer.
  std::vector<Example> Sample(std::size_t m, Rng& rng) const;

  bool operator==(const ReplayBuffer&) const = default;

 private:
  std::size_t capacity_;
  std::uint64_t observed_ = 0;
  std::size_t oldest_ = 0;  // next slot to overwrite under kSlidingWindow
  std::vector<Example> items_;
};

// Packs examples into a Batch. Logits are included only when every example
// carries them; `require_logits` turns a missing logit row into an error.
Batch ToBatch(const std::vector<Example>& examples, bool require_logits = false);

}  // namespace cfl

#endif  // CFL_REPLAY_BUFFER_H_
