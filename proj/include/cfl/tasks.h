#ifndef CFL_TASKS_H_
#define CFL_TASKS_H_

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "cfl/model.h"

namespace cfl {

// Labeled images, one flattened H*W row per sample, pixels in [0, 1].
struct Dataset {
  Matrix images;
  std::vector<int> labels;
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t num_classes = 0;

  std::size_t size() const { return labels.size(); }
  void Validate() const;

  // Rows `indices` as a training batch.
  Batch Gather(std::span<const std::size_t> indices) const;
  Dataset Subset(std::span<const std::size_t> indices) const;
};

struct DatasetSplit {
  Dataset train;
  Dataset test;
};

enum class TransformKind { kIdentity, kRotate, kPermute, kClassSplit };

struct TaskTransform {
  TransformKind kind = TransformKind::kIdentity;
  double angle_deg = 0.0;                  // kRotate
  std::vector<std::size_t> permutation;    // kPermute: out[i] = in[perm[i]]

  std::string Describe() const;
};

struct Task {
  std::size_t id = 0;
  Dataset train;
  Dataset test;
  std::vector<int> class_set;  // ascending global class indices
  TaskTransform transform;
};

struct TaskStream {
  std::vector<Task> tasks;
  std::size_t num_classes = 0;

  std::size_t size() const { return tasks.size(); }
};

// Per-client index lists into each task's train set.
struct ClientShard {
  std::size_t client_id = 0;
  std::vector<std::vector<std::size_t>> task_indices;

  std::size_t total() const;
};

class IdxFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// IDX parsing: big-endian magic 0x00000803 (images) and 0x00000801 (labels).
Dataset ParseIdx(std::span<const std::uint8_t> image_bytes,
                 std::span<const std::uint8_t> label_bytes);
Dataset LoadIdx(const std::filesystem::path& images_path,
                const std::filesystem::path& labels_path);

// Average-pools each image by `factor` in both axes (trailing pixels dropped).
Dataset Downsample(const Dataset& d, std::size_t factor);

// Gaussian clusters around random unit-norm class means, mapped to [0,1] by
// x -> 0.5 + sqrt(dim)/4 * x and clipped. Rows are shuffled with the seed.
// Images are square when input_dim is a perfect square, else 1 x input_dim.
Dataset SynthDataset(std::size_t n_per_class, std::size_t num_classes,
                     std::size_t input_dim, double spread, std::uint64_t seed);

// Train and test sets drawn around the same class means.
DatasetSplit SynthSplit(std::size_t train_per_class, std::size_t test_per_class,
                        std::size_t num_classes, std::size_t input_dim, double spread,
                        std::uint64_t seed);

// Rotation about the image center with bilinear interpolation; source
// coordinates falling outside the image contribute 0.
std::vector<double> RotateImage(std::span<const double> img, std::size_t height,
                                std::size_t width, double angle_deg);

Dataset ApplyTransform(const Dataset& d, const TaskTransform& t);

enum class DomainKind { kRotate, kPermute };

// T tasks sharing the full label set; task 0 is the identity, task t >= 1
// applies one random angle in [0, 360) or one random pixel permutation to
// both train and test.
TaskStream MakeDomainTasks(const DatasetSplit& base, std::size_t num_tasks,
                           DomainKind kind, std::uint64_t seed);

// Classes sorted ascending and chunked into T groups of C/T.
TaskStream MakeSplitTasks(const DatasetSplit& base, std::size_t num_tasks);

// Non-IID split of one task's train set. Each client draws a class mix
// q_k ~ Dir(alpha * prior) over the task's classes; class c's samples are
// then divided among clients in proportion to q_k[c] with largest-remainder
// rounding. Empty `prior` means uniform over the task's class set.
std::vector<std::vector<std::size_t>> DirichletPartition(const Task& task,
                                                         std::size_t num_clients,
                                                         double alpha,
                                                         std::span<const double> prior,
                                                         std::uint64_t seed);

std::vector<ClientShard> DirichletShards(const TaskStream& stream,
                                         std::size_t num_clients, double alpha,
                                         std::uint64_t seed);

// Each client owns the samples of exactly two labels in every task. Labels
// are paired by a seeded random matching; with more clients than pairs the
// pairs are reused cyclically and a shared pair's samples are dealt
// round-robin among its owners.
std::vector<ClientShard> AssignDigitPairs(const TaskStream& stream,
                                          std::size_t num_clients, std::uint64_t seed);

// The label pairs used by AssignDigitPairs for `seed`.
std::vector<std::pair<int, int>> DigitPairs(std::size_t num_classes, std::uint64_t seed);

// Shuffled round-robin split, for IID baselines.
std::vector<ClientShard> IidShards(const TaskStream& stream, std::size_t num_clients,
                                   std::uint64_t seed);

}  // namespace cfl

#endif  // CFL_TASKS_H_
