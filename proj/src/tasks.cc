#include "cfl/tasks.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>
#include <sstream>

#include "cfl/rng.h"

namespace cfl {

namespace {

constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

std::uint32_t ReadBigEndian32(std::span<const std::uint8_t> bytes, std::size_t at) {
  if (at + 4 > bytes.size()) throw IdxFormatError("truncated IDX header");
  return (std::uint32_t{bytes[at]} << 24) | (std::uint32_t{bytes[at + 1]} << 16) |
         (std::uint32_t{bytes[at + 2]} << 8) | std::uint32_t{bytes[at + 3]};
}

std::vector<std::uint8_t> ReadFile(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IdxFormatError("cannot open " + p.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::size_t IntSqrt(std::size_t n) {
  auto r = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(n))));
  return r * r == n ? r : 0;
}

std::vector<int> SortedLabelSet(const Dataset& d) {
  std::vector<int> s = d.labels;
  std::sort(s.begin(), s.end());
  s.erase(std::unique(s.begin(), s.end()), s.end());
  return s;
}

// Snap coordinates that are integers up to rounding noise so quarter turns map
// pixels exactly.
double Snap(double v) {
  const double r = std::round(v);
  return std::abs(v - r) < 1e-9 ? r : v;
}

}  // namespace

void Dataset::Validate() const {
  if (labels.empty()) throw std::invalid_argument("dataset is empty");
  if (images.rows != labels.size()) {
    throw std::invalid_argument("dataset image/label count mismatch");
  }
  if (images.cols != height * width) {
    throw std::invalid_argument("dataset row width does not match H*W");
  }
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= num_classes) {
      throw std::invalid_argument("dataset label out of range");
    }
  }
  for (double v : images.data) {
    if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument("pixel outside [0,1]");
  }
}

Batch Dataset::Gather(std::span<const std::size_t> indices) const {
  Batch b;
  b.inputs = Matrix(indices.size(), images.cols);
  b.labels.reserve(indices.size());
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const auto src = images.row(indices[r]);
    std::copy(src.begin(), src.end(), b.inputs.row(r).begin());
    b.labels.push_back(labels[indices[r]]);
  }
  return b;
}

Dataset Dataset::Subset(std::span<const std::size_t> indices) const {
  Batch b = Gather(indices);
  Dataset d;
  d.images = std::move(b.inputs);
  d.labels = std::move(b.labels);
  d.height = height;
  d.width = width;
  d.num_classes = num_classes;
  return d;
}

std::size_t ClientShard::total() const {
  std::size_t n = 0;
  for (const auto& t : task_indices) n += t.size();
  return n;
}

std::string TaskTransform::Describe() const {
  std::ostringstream os;
  switch (kind) {
    case TransformKind::kIdentity:
      return "identity";
    case TransformKind::kRotate:
      os << "rotate:" << angle_deg;
      return os.str();
    case TransformKind::kPermute:
      return "permute";
    case TransformKind::kClassSplit:
      return "class_split";
  }
  return "unknown";
}

Dataset ParseIdx(std::span<const std::uint8_t> image_bytes,
                 std::span<const std::uint8_t> label_bytes) {
  if (ReadBigEndian32(image_bytes, 0) != kIdxImagesMagic) {
    throw IdxFormatError("wrong magic in IDX image file");
  }
  if (ReadBigEndian32(label_bytes, 0) != kIdxLabelsMagic) {
    throw IdxFormatError("wrong magic in IDX label file");
  }
  const std::size_t n = ReadBigEndian32(image_bytes, 4);
  const std::size_t h = ReadBigEndian32(image_bytes, 8);
  const std::size_t w = ReadBigEndian32(image_bytes, 12);
  const std::size_t n_labels = ReadBigEndian32(label_bytes, 4);
  if (n != n_labels) {
    throw IdxFormatError("IDX image/label count mismatch: " + std::to_string(n) +
                         " vs " + std::to_string(n_labels));
  }
  if (image_bytes.size() < 16 + n * h * w) throw IdxFormatError("truncated IDX images");
  if (label_bytes.size() < 8 + n) throw IdxFormatError("truncated IDX labels");

  Dataset d;
  d.height = h;
  d.width = w;
  d.images = Matrix(n, h * w);
  for (std::size_t i = 0; i < n * h * w; ++i) {
    d.images.data[i] = static_cast<double>(image_bytes[16 + i]) / 255.0;
  }
  d.labels.resize(n);
  int max_label = 0;
  for (std::size_t i = 0; i < n; ++i) {
    d.labels[i] = label_bytes[8 + i];
    max_label = std::max(max_label, d.labels[i]);
  }
  d.num_classes = std::max<std::size_t>(10, static_cast<std::size_t>(max_label) + 1);
  return d;
}

Dataset LoadIdx(const std::filesystem::path& images_path,
                const std::filesystem::path& labels_path) {
  const auto images = ReadFile(images_path);
  const auto labels = ReadFile(labels_path);
  return ParseIdx(images, labels);
}

Dataset Downsample(const Dataset& d, std::size_t factor) {
  if (factor <= 1) return d;
  Dataset out;
  out.height = d.height / factor;
  out.width = d.width / factor;
  out.num_classes = d.num_classes;
  out.labels = d.labels;
  out.images = Matrix(d.size(), out.height * out.width);
  const double inv = 1.0 / static_cast<double>(factor * factor);
  for (std::size_t n = 0; n < d.size(); ++n) {
    const auto src = d.images.row(n);
    auto dst = out.images.row(n);
    for (std::size_t r = 0; r < out.height; ++r) {
      for (std::size_t c = 0; c < out.width; ++c) {
        double s = 0.0;
        for (std::size_t dr = 0; dr < factor; ++dr) {
          for (std::size_t dc = 0; dc < factor; ++dc) {
            s += src[(r * factor + dr) * d.width + c * factor + dc];
          }
        }
        dst[r * out.width + c] = s * inv;
      }
    }
  }
  return out;
}

DatasetSplit SynthSplit(std::size_t train_per_class, std::size_t test_per_class,
                        std::size_t num_classes, std::size_t input_dim, double spread,
                        std::uint64_t seed) {
  if (train_per_class == 0 || num_classes == 0 || input_dim == 0 || spread < 0.0) {
    throw std::invalid_argument("synthetic dataset parameters must be positive");
  }
  Rng mean_rng(DeriveSeed(seed, {1}));
  Matrix means(num_classes, input_dim);
  for (std::size_t c = 0; c < num_classes; ++c) {
    auto m = means.row(c);
    for (double& v : m) v = mean_rng.Normal();
    const double n = vec::Norm(m);
    for (double& v : m) v /= n;
  }
  const std::size_t side = IntSqrt(input_dim);
  const double scale = std::sqrt(static_cast<double>(input_dim)) / 4.0;

  auto draw = [&](std::size_t per_class, std::uint64_t tag) {
    Rng rng(DeriveSeed(seed, {tag}));
    Dataset d;
    d.num_classes = num_classes;
    d.height = side ? side : 1;
    d.width = side ? side : input_dim;
    const std::size_t n = per_class * num_classes;
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    rng.Shuffle(order.begin(), order.end());
    d.images = Matrix(n, input_dim);
    d.labels.resize(n);
    for (std::size_t k = 0; k < n; ++k) {
      const std::size_t c = k % num_classes;
      const std::size_t row = order[k];
      d.labels[row] = static_cast<int>(c);
      auto x = d.images.row(row);
      const auto m = means.row(c);
      for (std::size_t i = 0; i < input_dim; ++i) {
        const double raw = m[i] + (spread > 0.0 ? spread * rng.Normal() : 0.0);
        x[i] = std::clamp(0.5 + scale * raw, 0.0, 1.0);
      }
    }
    return d;
  };
  DatasetSplit split;
  split.train = draw(train_per_class, 2);
  if (test_per_class > 0) split.test = draw(test_per_class, 3);
  return split;
}

Dataset SynthDataset(std::size_t n_per_class, std::size_t num_classes,
                     std::size_t input_dim, double spread, std::uint64_t seed) {
  return SynthSplit(n_per_class, 0, num_classes, input_dim, spread, seed).train;
}

std::vector<double> RotateImage(std::span<const double> img, std::size_t height,
                                std::size_t width, double angle_deg) {
  if (img.size() != height * width) {
    throw std::invalid_argument("image size does not match H*W");
  }
  const double theta = angle_deg * std::acos(-1.0) / 180.0;
  const double cs = std::cos(theta);
  const double sn = std::sin(theta);
  const double cy = (static_cast<double>(height) - 1.0) / 2.0;
  const double cx = (static_cast<double>(width) - 1.0) / 2.0;
  const auto h = static_cast<long>(height);
  const auto w = static_cast<long>(width);
  auto at = [&](long r, long c) {
    return (r < 0 || r >= h || c < 0 || c >= w)
               ? 0.0
               : img[static_cast<std::size_t>(r * w + c)];
  };
  std::vector<double> out(img.size(), 0.0);
  for (long r = 0; r < h; ++r) {
    for (long c = 0; c < w; ++c) {
      const double dx = static_cast<double>(c) - cx;
      const double dy = static_cast<double>(r) - cy;
      // Output pixel samples the input at the point rotated by -theta.
      const double sx = Snap(cx + cs * dx + sn * dy);
      const double sy = Snap(cy - sn * dx + cs * dy);
      const double fx = std::floor(sx);
      const double fy = std::floor(sy);
      const double ax = sx - fx;
      const double ay = sy - fy;
      const long x0 = static_cast<long>(fx);
      const long y0 = static_cast<long>(fy);
      double v = (1 - ax) * (1 - ay) * at(y0, x0);
      if (ax > 0) v += ax * (1 - ay) * at(y0, x0 + 1);
      if (ay > 0) v += (1 - ax) * ay * at(y0 + 1, x0);
      if (ax > 0 && ay > 0) v += ax * ay * at(y0 + 1, x0 + 1);
      out[static_cast<std::size_t>(r * w + c)] = std::clamp(v, 0.0, 1.0);
    }
  }
  return out;
}

Dataset ApplyTransform(const Dataset& d, const TaskTransform& t) {
  if (t.kind == TransformKind::kIdentity || t.kind == TransformKind::kClassSplit) {
    return d;
  }
  Dataset out = d;
  for (std::size_t n = 0; n < d.size(); ++n) {
    const auto src = d.images.row(n);
    auto dst = out.images.row(n);
    if (t.kind == TransformKind::kRotate) {
      const auto rotated = RotateImage(src, d.height, d.width, t.angle_deg);
      std::copy(rotated.begin(), rotated.end(), dst.begin());
    } else {
      if (t.permutation.size() != src.size()) {
        throw std::invalid_argument("permutation length does not match image size");
      }
      for (std::size_t i = 0; i < src.size(); ++i) dst[i] = src[t.permutation[i]];
    }
  }
  return out;
}

TaskStream MakeDomainTasks(const DatasetSplit& base, std::size_t num_tasks,
                           DomainKind kind, std::uint64_t seed) {
  if (num_tasks < 1) throw std::invalid_argument("need at least one task");
  TaskStream stream;
  stream.num_classes = base.train.num_classes;
  std::vector<int> all(stream.num_classes);
  std::iota(all.begin(), all.end(), 0);
  Rng rng(DeriveSeed(seed, {0xD0}));
  for (std::size_t t = 0; t < num_tasks; ++t) {
    Task task;
    task.id = t;
    task.class_set = all;
    if (t > 0) {
      if (kind == DomainKind::kRotate) {
        task.transform.kind = TransformKind::kRotate;
        task.transform.angle_deg = rng.Uniform(0.0, 360.0);
      } else {
        task.transform.kind = TransformKind::kPermute;
        task.transform.permutation.resize(base.train.images.cols);
        std::iota(task.transform.permutation.begin(), task.transform.permutation.end(),
                  0);
        rng.Shuffle(task.transform.permutation.begin(),
                    task.transform.permutation.end());
      }
    }
    task.train = ApplyTransform(base.train, task.transform);
    task.test = ApplyTransform(base.test, task.transform);
    stream.tasks.push_back(std::move(task));
  }
  return stream;
}

TaskStream MakeSplitTasks(const DatasetSplit& base, std::size_t num_tasks) {
  const std::size_t c = base.train.num_classes;
  if (num_tasks < 1 || c % num_tasks != 0) {
    throw std::invalid_argument("class count " + std::to_string(c) +
                                " is not divisible by task count " +
                                std::to_string(num_tasks));
  }
  const std::size_t per = c / num_tasks;
  TaskStream stream;
  stream.num_classes = c;
  auto select = [](const Dataset& d, int lo, int hi) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < d.size(); ++i) {
      if (d.labels[i] >= lo && d.labels[i] < hi) idx.push_back(i);
    }
    return d.Subset(idx);
  };
  for (std::size_t t = 0; t < num_tasks; ++t) {
    Task task;
    task.id = t;
    const int lo = static_cast<int>(t * per);
    const int hi = static_cast<int>((t + 1) * per);
    for (int k = lo; k < hi; ++k) task.class_set.push_back(k);
    task.transform.kind = TransformKind::kClassSplit;
    task.train = select(base.train, lo, hi);
    task.test = select(base.test, lo, hi);
    stream.tasks.push_back(std::move(task));
  }
  return stream;
}

std::vector<std::vector<std::size_t>> DirichletPartition(const Task& task,
                                                         std::size_t num_clients,
                                                         double alpha,
                                                         std::span<const double> prior,
                                                         std::uint64_t seed) {
  if (num_clients < 1) throw std::invalid_argument("need at least one client");
  if (!(alpha > 0.0)) throw std::invalid_argument("Dirichlet alpha must be > 0");
  const std::vector<int> classes =
      task.class_set.empty() ? SortedLabelSet(task.train) : task.class_set;
  std::vector<double> p(prior.begin(), prior.end());
  if (p.empty()) p.assign(classes.size(), 1.0 / static_cast<double>(classes.size()));
  if (p.size() != classes.size()) {
    throw std::invalid_argument("Dirichlet prior length must match the class set");
  }

  Rng rng(seed);
  // q[k][j]: client k's share of class j.
  std::vector<std::vector<double>> q(num_clients, std::vector<double>(classes.size()));
  for (auto& qk : q) {
    double sum = 0.0;
    for (std::size_t j = 0; j < classes.size(); ++j) {
      qk[j] = p[j] > 0.0 ? rng.Gamma(alpha * p[j]) : 0.0;
      sum += qk[j];
    }
    if (sum > 0.0) {
      for (double& v : qk) v /= sum;
    }
  }

  std::vector<std::vector<std::size_t>> shards(num_clients);
  for (std::size_t j = 0; j < classes.size(); ++j) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < task.train.size(); ++i) {
      if (task.train.labels[i] == classes[j]) members.push_back(i);
    }
    if (members.empty()) continue;
    rng.Shuffle(members.begin(), members.end());

    std::vector<double> share(num_clients);
    double total = 0.0;
    for (std::size_t k = 0; k < num_clients; ++k) total += (share[k] = q[k][j]);
    if (!(total > 0.0)) {
      std::fill(share.begin(), share.end(), 1.0);
      total = static_cast<double>(num_clients);
    }
    // Largest-remainder apportionment of members.size() items.
    const double n = static_cast<double>(members.size());
    std::vector<std::size_t> count(num_clients);
    std::vector<std::pair<double, std::size_t>> remainder(num_clients);
    std::size_t assigned = 0;
    for (std::size_t k = 0; k < num_clients; ++k) {
      const double exact = n * share[k] / total;
      count[k] = static_cast<std::size_t>(std::floor(exact));
      remainder[k] = {exact - std::floor(exact), k};
      assigned += count[k];
    }
    std::stable_sort(remainder.begin(), remainder.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::size_t r = 0; assigned < members.size(); ++r, ++assigned) {
      ++count[remainder[r % num_clients].second];
    }
    std::size_t pos = 0;
    for (std::size_t k = 0; k < num_clients; ++k) {
      shards[k].insert(shards[k].end(), members.begin() + static_cast<long>(pos),
                       members.begin() + static_cast<long>(pos + count[k]));
      pos += count[k];
    }
  }
  for (auto& s : shards) std::sort(s.begin(), s.end());
  return shards;
}

std::vector<ClientShard> DirichletShards(const TaskStream& stream,
                                         std::size_t num_clients, double alpha,
                                         std::uint64_t seed) {
  std::vector<ClientShard> shards(num_clients);
  for (std::size_t k = 0; k < num_clients; ++k) shards[k].client_id = k;
  for (const Task& task : stream.tasks) {
    auto parts = DirichletPartition(task, num_clients, alpha, {},
                                    DeriveSeed(seed, {0xD1, task.id}));
    for (std::size_t k = 0; k < num_clients; ++k) {
      shards[k].task_indices.push_back(std::move(parts[k]));
    }
  }
  return shards;
}

std::vector<std::pair<int, int>> DigitPairs(std::size_t num_classes,
                                            std::uint64_t seed) {
  if (num_classes < 2 || num_classes % 2 != 0) {
    throw std::invalid_argument("digit pairing needs an even class count");
  }
  std::vector<int> labels(num_classes);
  std::iota(labels.begin(), labels.end(), 0);
  Rng rng(DeriveSeed(seed, {0xD2}));
  rng.Shuffle(labels.begin(), labels.end());
  std::vector<std::pair<int, int>> pairs;
  for (std::size_t i = 0; i < num_classes; i += 2) {
    pairs.emplace_back(std::min(labels[i], labels[i + 1]),
                       std::max(labels[i], labels[i + 1]));
  }
  return pairs;
}

std::vector<ClientShard> AssignDigitPairs(const TaskStream& stream,
                                          std::size_t num_clients, std::uint64_t seed) {
  const auto pairs = DigitPairs(stream.num_classes, seed);
  if (num_clients < pairs.size()) {
    throw std::invalid_argument("digit pairing needs at least C/2 clients");
  }
  std::vector<ClientShard> shards(num_clients);
  for (std::size_t k = 0; k < num_clients; ++k) {
    shards[k].client_id = k;
    shards[k].task_indices.resize(stream.size());
  }
  for (std::size_t t = 0; t < stream.size(); ++t) {
    const Dataset& train = stream.tasks[t].train;
    for (std::size_t p = 0; p < pairs.size(); ++p) {
      std::vector<std::size_t> owners;
      for (std::size_t k = p; k < num_clients; k += pairs.size()) owners.push_back(k);
      std::size_t next = 0;
      for (std::size_t i = 0; i < train.size(); ++i) {
        if (train.labels[i] == pairs[p].first || train.labels[i] == pairs[p].second) {
          shards[owners[next]].task_indices[t].push_back(i);
          next = (next + 1) % owners.size();
        }
      }
    }
  }
  return shards;
}

std::vector<ClientShard> IidShards(const TaskStream& stream, std::size_t num_clients,
                                   std::uint64_t seed) {
  if (num_clients < 1) throw std::invalid_argument("need at least one client");
  std::vector<ClientShard> shards(num_clients);
  for (std::size_t k = 0; k < num_clients; ++k) {
    shards[k].client_id = k;
    shards[k].task_indices.resize(stream.size());
  }
  for (std::size_t t = 0; t < stream.size(); ++t) {
    std::vector<std::size_t> idx(stream.tasks[t].train.size());
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng(DeriveSeed(seed, {0xD3, t}));
    rng.Shuffle(idx.begin(), idx.end());
    for (std::size_t i = 0; i < idx.size(); ++i) {
      shards[i % num_clients].task_indices[t].push_back(idx[i]);
    }
    for (auto& s : shards) std::sort(s.task_indices[t].begin(), s.task_indices[t].end());
  }
  return shards;
}

}  // namespace cfl
