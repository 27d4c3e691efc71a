#include "cfl/strategies.h"

#include <numeric>
#include <stdexcept>

namespace cfl {

void StrategyConfig::Validate() const {
  refine.Validate();
  if (!(lr > 0.0)) throw std::invalid_argument("lr must be > 0");
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (local_epochs < 1) throw std::invalid_argument("local_epochs must be >= 1");
  if (fedprox_mu < 0.0) throw std::invalid_argument("fedprox_mu must be >= 0");
  if (der_lambda < 0.0) throw std::invalid_argument("der_lambda must be >= 0");
  if (der_lambda > 0.0 && base != BaseStrategy::kDer) {
    throw std::invalid_argument("der_lambda is only used with the der strategy");
  }
}

ClientRngs ClientRngs::FromSeed(std::uint64_t seed) {
  return {Rng(DeriveSeed(seed, {1})), Rng(DeriveSeed(seed, {2})),
          Rng(DeriveSeed(seed, {3})), Rng(DeriveSeed(seed, {4})),
          Rng(DeriveSeed(seed, {5}))};
}

GradientVector BaseGradientPlain(const ModelSpec& spec, const ParameterVector& w,
                                 const Batch& batch) {
  return LossAndGrad(spec, w, batch).grad;
}

GradientVector BaseGradientAgem(const ModelSpec& spec, const ParameterVector& w,
                                const Batch& batch, const ReplayBuffer& buffer,
                                std::size_t replay_size, Rng& rng,
                                UpdateTrace* trace) {
  GradientVector gc = LossAndGrad(spec, w, batch).grad;
  if (buffer.empty()) return gc;
  const Batch replay = ToBatch(buffer.Sample(replay_size, rng));
  const GradientVector gb = LossAndGrad(spec, w, replay).grad;
  const double bb = vec::Dot(gb.values, gb.values);
  if (bb == 0.0 || vec::Dot(gb.values, gc.values) > 0.0) return gc;
  if (trace != nullptr) trace->Add(TraceEvent::kLocalProjection);
  return ProjectOut(gc, gb);
}

DerGradient BaseGradientDer(const ModelSpec& spec, const ParameterVector& w,
                            const Batch& batch, const ReplayBuffer& buffer,
                            double lambda, std::size_t replay_size, Rng& rng) {
  DerGradient out;
  out.grad = LossAndGrad(spec, w, batch).grad;
  out.current_logits = Forward(spec, w, batch.inputs);
  if (lambda == 0.0 || buffer.empty()) return out;
  const Batch replay = ToBatch(buffer.Sample(replay_size, rng), true);
  const Matrix h = Forward(spec, w, replay.inputs);
  Matrix dlogits(h.rows, h.cols);
  for (std::size_t i = 0; i < h.data.size(); ++i) {
    dlogits.data[i] = -2.0 * lambda * (replay.logits->data[i] - h.data[i]);
  }
  const GradientVector reg = OutputVjp(spec, w, replay.inputs, dlogits);
  vec::Axpy(1.0, reg.values, out.grad.values);
  return out;
}

ParameterVector ClientUpdate(const StrategyConfig& cfg, const ModelSpec& spec,
                             const ParameterVector& w, const Batch& samples,
                             ReplayBuffer& buffer, const GradientVector* g_ref,
                             const ParameterVector& w_global, ClientRngs& rngs,
                             UpdateTrace* trace) {
  if (w.size() != spec.param_count() || w_global.size() != w.size()) {
    throw std::invalid_argument("client model layout mismatch");
  }
  if (g_ref != nullptr && g_ref->size() != w.size()) {
    throw std::invalid_argument("reference gradient layout mismatch");
  }
  ParameterVector cur = w;
  if (samples.empty()) return cur;

  const std::size_t n = samples.size();
  const std::size_t beta = cfg.batch_size;
  std::vector<std::size_t> order(n);
  for (std::size_t epoch = 0; epoch < cfg.local_epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    rngs.shuffle.Shuffle(order.begin(), order.end());
    for (std::size_t start = 0; start < n; start += beta) {
      const std::size_t end = std::min(n, start + beta);
      Batch batch;
      batch.inputs = Matrix(end - start, samples.inputs.cols);
      batch.labels.reserve(end - start);
      for (std::size_t r = start; r < end; ++r) {
        const auto src = samples.inputs.row(order[r]);
        std::copy(src.begin(), src.end(), batch.inputs.row(r - start).begin());
        batch.labels.push_back(samples.labels[order[r]]);
      }

      GradientVector g;
      if (trace != nullptr) trace->Add(TraceEvent::kBaseGradient);
      switch (cfg.base) {
        case BaseStrategy::kPlain:
          g = BaseGradientPlain(spec, cur, batch);
          break;
        case BaseStrategy::kAgemLocal:
          g = BaseGradientAgem(spec, cur, batch, buffer, beta, rngs.replay, trace);
          break;
        case BaseStrategy::kDer: {
          DerGradient d =
              BaseGradientDer(spec, cur, batch, buffer, cfg.der_lambda, beta, rngs.replay);
          g = std::move(d.grad);
          batch.logits = std::move(d.current_logits);
          break;
        }
      }

      if (cfg.fedprox_mu > 0.0) {
        if (trace != nullptr) trace->Add(TraceEvent::kProximal);
        for (std::size_t i = 0; i < g.size(); ++i) {
          g.values[i] += cfg.fedprox_mu * (cur.values[i] - w_global.values[i]);
        }
      }

      if (cfg.fed_a_gem && g_ref != nullptr) {
        if (trace != nullptr) {
          trace->Add(TraceEvent::kGlobalRefine);
          if (vec::Dot(g.values, g_ref->values) <= 0.0) ++trace->conflicts;
        }
        GradientVector refined = Refine(g, *g_ref, cfg.refine, rngs.refine);
        if (trace != nullptr && refined != g) ++trace->refinements;
        g = std::move(refined);
      }

      vec::Axpy(-cfg.lr, g.values, cur.values);
      if (trace != nullptr) {
        trace->Add(TraceEvent::kStep);
        ++trace->steps;
        trace->samples += batch.size();
      }

      if (cfg.owns_buffer() && (!cfg.insert_first_epoch_only || epoch == 0)) {
        buffer.InsertBatch(batch, cfg.buffer_policy, rngs.buffer);
        if (trace != nullptr) trace->Add(TraceEvent::kBufferInsert);
      }
    }
  }
  return cur;
}

}  // namespace cfl
