#ifndef CFL_MODEL_H_
#define CFL_MODEL_H_

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

namespace cfl {

enum class Activation { kRelu, kTanh };

// Multilayer perceptron shape: input dim, hidden dims..., class count.
struct ModelSpec {
  std::vector<std::size_t> layer_sizes;
  Activation activation = Activation::kRelu;

  // Throws std::invalid_argument unless there are >= 2 layers, every size is
  // >= 1 and the class count is >= 2.
  void Validate() const;

  std::size_t input_dim() const { return layer_sizes.front(); }
  std::size_t num_classes() const { return layer_sizes.back(); }
  std::size_t num_layers() const { return layer_sizes.size() - 1; }

  // Flat layout size: sum over layers of out*in + out.
  std::size_t param_count() const;

  // Offset of layer l's weight block; its bias block follows at
  // weight_offset(l) + out*in.
  std::size_t weight_offset(std::size_t layer) const;
};

// Dense row-major matrix.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0)
      : rows(r), cols(c), data(r * c, fill) {}

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
  std::span<const double> row(std::size_t r) const {
    return {data.data() + r * cols, cols};
  }

  bool operator==(const Matrix&) const = default;
};

// Model weights, laid out per layer as row-major W (out x in) then b (out).
struct ParameterVector {
  std::vector<double> values;

  std::size_t size() const { return values.size(); }
  bool operator==(const ParameterVector&) const = default;
};

// Same layout as ParameterVector.
struct GradientVector {
  std::vector<double> values;

  std::size_t size() const { return values.size(); }
  bool operator==(const GradientVector&) const = default;
};

// Labeled examples. `logits` carries stored pre-softmax outputs for replay.
struct Batch {
  Matrix inputs;
  std::vector<int> labels;
  std::optional<Matrix> logits;

  std::size_t size() const { return labels.size(); }
  bool empty() const { return labels.empty(); }
};

struct LossAndGradient {
  double loss = 0.0;
  GradientVector grad;
};

// Glorot-uniform weights, zero biases. Deterministic in `seed`.
ParameterVector InitParams(const ModelSpec& spec, std::uint64_t seed);

// Pre-softmax logits, one row per input row.
Matrix Forward(const ModelSpec& spec, const ParameterVector& params,
               const Matrix& inputs);

// Mean softmax cross-entropy over the batch and its analytic gradient.
LossAndGradient LossAndGrad(const ModelSpec& spec, const ParameterVector& params,
                            const Batch& batch);

// Gradient of sum_{r,c} dlogits(r,c) * h(inputs; w)(r,c) with respect to w,
// i.e. a vector-Jacobian product through the network.
GradientVector OutputVjp(const ModelSpec& spec, const ParameterVector& params,
                         const Matrix& inputs, const Matrix& dlogits);

// Central differences of the mean cross-entropy loss.
GradientVector FiniteDiffGrad(const ModelSpec& spec, const ParameterVector& params,
                              const Batch& batch, double eps);

// Central differences of an arbitrary scalar objective.
GradientVector FiniteDiffGrad(
    const ParameterVector& params, double eps,
    const std::function<double(const ParameterVector&)>& objective);

ParameterVector SgdStep(const ParameterVector& params, const GradientVector& grad,
                        double lr);

// Argmax over logits, restricted to `class_mask` when given. Ties go to the
// lowest class index.
std::vector<int> Predict(const ModelSpec& spec, const ParameterVector& params,
                         const Matrix& inputs,
                         std::optional<std::span<const int>> class_mask = std::nullopt);

// Same rule applied to precomputed logits.
std::vector<int> ArgmaxRows(const Matrix& logits,
                            std::optional<std::span<const int>> class_mask = std::nullopt);

// Row-wise softmax with max subtraction.
Matrix Softmax(const Matrix& logits);

namespace vec {

double Dot(std::span<const double> a, std::span<const double> b);
double Norm(std::span<const double> a);
bool AllFinite(std::span<const double> a);
// y += alpha * x
void Axpy(double alpha, std::span<const double> x, std::span<double> y);

}  // namespace vec

}  // namespace cfl

#endif  // CFL_MODEL_H_
