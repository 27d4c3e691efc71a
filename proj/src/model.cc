#include "cfl/model.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "cfl/rng.h"

namespace cfl {

void ModelSpec::Validate() const {
  if (layer_sizes.size() < 2) {
    throw std::invalid_argument("ModelSpec needs at least 2 layers");
  }
  for (std::size_t s : layer_sizes) {
    if (s < 1) throw std::invalid_argument("ModelSpec layer sizes must be >= 1");
  }
  if (layer_sizes.back() < 2) {
    throw std::invalid_argument("ModelSpec needs at least 2 classes");
  }
}

std::size_t ModelSpec::param_count() const {
  std::size_t n = 0;
  for (std::size_t l = 0; l + 1 < layer_sizes.size(); ++l) {
    n += layer_sizes[l + 1] * layer_sizes[l] + layer_sizes[l + 1];
  }
  return n;
}

std::size_t ModelSpec::weight_offset(std::size_t layer) const {
  std::size_t n = 0;
  for (std::size_t l = 0; l < layer; ++l) {
    n += layer_sizes[l + 1] * layer_sizes[l] + layer_sizes[l + 1];
  }
  return n;
}

namespace {

void CheckLayout(const ModelSpec& spec, std::size_t n) {
  if (n != spec.param_count()) {
    throw std::invalid_argument("parameter vector has length " + std::to_string(n) +
                                ", model layout needs " +
                                std::to_string(spec.param_count()));
  }
}

void CheckInputs(const ModelSpec& spec, const Matrix& inputs) {
  if (inputs.cols != spec.input_dim()) {
    throw std::invalid_argument("input has " + std::to_string(inputs.cols) +
                                " columns, model expects " +
                                std::to_string(spec.input_dim()));
  }
}

double Activate(Activation a, double z) {
  return a == Activation::kRelu ? (z > 0.0 ? z : 0.0) : std::tanh(z);
}

// Derivative expressed through the pre-activation z and output y.
double ActivateDeriv(Activation a, double z, double y) {
  return a == Activation::kRelu ? (z > 0.0 ? 1.0 : 0.0) : 1.0 - y * y;
}

// Layer-by-layer pre-activations and outputs. outputs[0] is the input,
// outputs[L] the logits; hidden outputs are post-activation.
struct ForwardCache {
  std::vector<Matrix> pre;
  std::vector<Matrix> outputs;
};

ForwardCache RunForward(const ModelSpec& spec, const ParameterVector& params,
                        const Matrix& inputs) {
  const std::size_t layers = spec.num_layers();
  ForwardCache cache;
  cache.pre.reserve(layers);
  cache.outputs.reserve(layers + 1);
  cache.outputs.push_back(inputs);
  const double* w = params.values.data();
  for (std::size_t l = 0; l < layers; ++l) {
    const std::size_t in = spec.layer_sizes[l];
    const std::size_t out = spec.layer_sizes[l + 1];
    const double* weights = w;
    const double* bias = w + out * in;
    w += out * in + out;
    const Matrix& a = cache.outputs.back();
    Matrix z(a.rows, out);
    for (std::size_t r = 0; r < a.rows; ++r) {
      const double* x = a.data.data() + r * in;
      double* zr = z.data.data() + r * out;
      for (std::size_t o = 0; o < out; ++o) {
        const double* wo = weights + o * in;
        double acc = bias[o];
        for (std::size_t i = 0; i < in; ++i) acc += wo[i] * x[i];
        zr[o] = acc;
      }
    }
    Matrix y = z;
    if (l + 1 < layers) {
      for (double& v : y.data) v = Activate(spec.activation, v);
    }
    cache.pre.push_back(std::move(z));
    cache.outputs.push_back(std::move(y));
  }
  return cache;
}

GradientVector Backprop(const ModelSpec& spec, const ParameterVector& params,
                        const ForwardCache& cache, Matrix delta) {
  const std::size_t layers = spec.num_layers();
  GradientVector grad{std::vector<double>(params.size(), 0.0)};
  for (std::size_t l = layers; l-- > 0;) {
    const std::size_t in = spec.layer_sizes[l];
    const std::size_t out = spec.layer_sizes[l + 1];
    const std::size_t off = spec.weight_offset(l);
    double* gw = grad.values.data() + off;
    double* gb = gw + out * in;
    const double* weights = params.values.data() + off;
    const Matrix& a = cache.outputs[l];
    for (std::size_t r = 0; r < a.rows; ++r) {
      const double* x = a.data.data() + r * in;
      const double* d = delta.data.data() + r * out;
      for (std::size_t o = 0; o < out; ++o) {
        const double dv = d[o];
        if (dv == 0.0) continue;
        double* gwo = gw + o * in;
        for (std::size_t i = 0; i < in; ++i) gwo[i] += dv * x[i];
        gb[o] += dv;
      }
    }
    if (l == 0) break;
    Matrix prev(a.rows, in);
    const Matrix& zprev = cache.pre[l - 1];
    for (std::size_t r = 0; r < a.rows; ++r) {
      const double* d = delta.data.data() + r * out;
      double* p = prev.data.data() + r * in;
      for (std::size_t o = 0; o < out; ++o) {
        const double dv = d[o];
        if (dv == 0.0) continue;
        const double* wo = weights + o * in;
        for (std::size_t i = 0; i < in; ++i) p[i] += dv * wo[i];
      }
      for (std::size_t i = 0; i < in; ++i) {
        p[i] *= ActivateDeriv(spec.activation, zprev(r, i), a(r, i));
      }
    }
    delta = std::move(prev);
  }
  return grad;
}

double MeanCrossEntropy(const Matrix& logits, const std::vector<int>& labels,
                        Matrix* dlogits) {
  const std::size_t n = logits.rows;
  const std::size_t c = logits.cols;
  double total = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    const auto row = logits.row(r);
    const double mx = *std::max_element(row.begin(), row.end());
    double sum = 0.0;
    for (double v : row) sum += std::exp(v - mx);
    const double lse = mx + std::log(sum);
    total += lse - row[static_cast<std::size_t>(labels[r])];
    if (dlogits != nullptr) {
      for (std::size_t k = 0; k < c; ++k) {
        (*dlogits)(r, k) = std::exp(row[k] - lse) / static_cast<double>(n);
      }
      (*dlogits)(r, static_cast<std::size_t>(labels[r])) -= 1.0 / static_cast<double>(n);
    }
  }
  return total / static_cast<double>(n);
}

void CheckBatch(const ModelSpec& spec, const Batch& batch) {
  if (batch.empty()) throw std::invalid_argument("empty batch");
  if (batch.inputs.rows != batch.labels.size()) {
    throw std::invalid_argument("batch inputs and labels disagree on row count");
  }
  const int classes = static_cast<int>(spec.num_classes());
  for (int y : batch.labels) {
    if (y < 0 || y >= classes) throw std::invalid_argument("label out of range");
  }
}

}  // namespace

ParameterVector InitParams(const ModelSpec& spec, std::uint64_t seed) {
  spec.Validate();
  Rng rng(seed);
  ParameterVector p{std::vector<double>(spec.param_count(), 0.0)};
  for (std::size_t l = 0; l < spec.num_layers(); ++l) {
    const std::size_t in = spec.layer_sizes[l];
    const std::size_t out = spec.layer_sizes[l + 1];
    const double s = std::sqrt(6.0 / static_cast<double>(in + out));
    double* w = p.values.data() + spec.weight_offset(l);
    for (std::size_t i = 0; i < out * in; ++i) w[i] = rng.Uniform(-s, s);
  }
  return p;
}

Matrix Forward(const ModelSpec& spec, const ParameterVector& params,
               const Matrix& inputs) {
  CheckLayout(spec, params.size());
  CheckInputs(spec, inputs);
  return std::move(RunForward(spec, params, inputs).outputs.back());
}

LossAndGradient LossAndGrad(const ModelSpec& spec, const ParameterVector& params,
                            const Batch& batch) {
  CheckLayout(spec, params.size());
  CheckBatch(spec, batch);
  CheckInputs(spec, batch.inputs);
  ForwardCache cache = RunForward(spec, params, batch.inputs);
  const Matrix& logits = cache.outputs.back();
  Matrix dlogits(logits.rows, logits.cols);
  const double loss = MeanCrossEntropy(logits, batch.labels, &dlogits);
  return {loss, Backprop(spec, params, cache, std::move(dlogits))};
}

GradientVector OutputVjp(const ModelSpec& spec, const ParameterVector& params,
                         const Matrix& inputs, const Matrix& dlogits) {
  CheckLayout(spec, params.size());
  CheckInputs(spec, inputs);
  if (dlogits.rows != inputs.rows || dlogits.cols != spec.num_classes()) {
    throw std::invalid_argument("output cotangent shape mismatch");
  }
  ForwardCache cache = RunForward(spec, params, inputs);
  return Backprop(spec, params, cache, dlogits);
}

GradientVector FiniteDiffGrad(
    const ParameterVector& params, double eps,
    const std::function<double(const ParameterVector&)>& objective) {
  if (!(eps > 0.0)) throw std::invalid_argument("finite-difference eps must be > 0");
  GradientVector g{std::vector<double>(params.size(), 0.0)};
  ParameterVector probe = params;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double orig = probe.values[i];
    probe.values[i] = orig + eps;
    const double up = objective(probe);
    probe.values[i] = orig - eps;
    const double down = objective(probe);
    probe.values[i] = orig;
    g.values[i] = (up - down) / (2.0 * eps);
  }
  return g;
}

GradientVector FiniteDiffGrad(const ModelSpec& spec, const ParameterVector& params,
                              const Batch& batch, double eps) {
  CheckLayout(spec, params.size());
  CheckBatch(spec, batch);
  CheckInputs(spec, batch.inputs);
  return FiniteDiffGrad(params, eps, [&](const ParameterVector& w) {
    const Matrix logits = RunForward(spec, w, batch.inputs).outputs.back();
    return MeanCrossEntropy(logits, batch.labels, nullptr);
  });
}

ParameterVector SgdStep(const ParameterVector& params, const GradientVector& grad,
                        double lr) {
  if (params.size() != grad.size()) {
    throw std::invalid_argument("gradient layout does not match parameters");
  }
  if (!(lr > 0.0)) throw std::invalid_argument("learning rate must be > 0");
  ParameterVector out = params;
  vec::Axpy(-lr, grad.values, out.values);
  return out;
}

std::vector<int> ArgmaxRows(const Matrix& logits,
                            std::optional<std::span<const int>> class_mask) {
  std::vector<int> candidates;
  if (class_mask) {
    if (class_mask->empty()) throw std::invalid_argument("empty class mask");
    candidates.assign(class_mask->begin(), class_mask->end());
    std::sort(candidates.begin(), candidates.end());
    for (int c : candidates) {
      if (c < 0 || static_cast<std::size_t>(c) >= logits.cols) {
        throw std::invalid_argument("class mask index out of range");
      }
    }
  } else {
    candidates.resize(logits.cols);
    for (std::size_t c = 0; c < logits.cols; ++c) candidates[c] = static_cast<int>(c);
  }
  std::vector<int> out(logits.rows);
  for (std::size_t r = 0; r < logits.rows; ++r) {
    int best = candidates.front();
    double best_v = logits(r, static_cast<std::size_t>(best));
    for (int c : candidates) {
      const double v = logits(r, static_cast<std::size_t>(c));
      if (v > best_v) {
        best = c;
        best_v = v;
      }
    }
    out[r] = best;
  }
  return out;
}

std::vector<int> Predict(const ModelSpec& spec, const ParameterVector& params,
                         const Matrix& inputs,
                         std::optional<std::span<const int>> class_mask) {
  return ArgmaxRows(Forward(spec, params, inputs), class_mask);
}

Matrix Softmax(const Matrix& logits) {
  Matrix p(logits.rows, logits.cols);
  for (std::size_t r = 0; r < logits.rows; ++r) {
    const auto row = logits.row(r);
    const double mx = *std::max_element(row.begin(), row.end());
    double sum = 0.0;
    for (std::size_t c = 0; c < logits.cols; ++c) {
      p(r, c) = std::exp(row[c] - mx);
      sum += p(r, c);
    }
    for (std::size_t c = 0; c < logits.cols; ++c) p(r, c) /= sum;
  }
  return p;
}

namespace vec {

double Dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("vector length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double Norm(std::span<const double> a) { return std::sqrt(Dot(a, a)); }

bool AllFinite(std::span<const double> a) {
  return std::all_of(a.begin(), a.end(), [](double v) { return std::isfinite(v); });
}

void Axpy(double alpha, std::span<const double> x, std::span<double> y) {
  if (x.size() != y.size()) throw std::invalid_argument("vector length mismatch");
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

}  // namespace vec
}  // namespace cfl
