#ifndef CFL_STRATEGIES_H_
#define CFL_STRATEGIES_H_

#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "cfl/geometry.h"
#include "cfl/model.h"
#include "cfl/replay_buffer.h"
#include "cfl/rng.h"

namespace cfl {

enum class BaseStrategy { kPlain, kAgemLocal, kDer };

struct StrategyConfig {
  BaseStrategy base = BaseStrategy::kPlain;
  bool fed_a_gem = false;
  RefineConfig refine;
  double fedprox_mu = 0.0;
  double der_lambda = 0.0;
  double lr = 0.01;
  std::size_t batch_size = 10;
  std::size_t local_epochs = 1;
  InsertPolicy buffer_policy = InsertPolicy::kReservoir;
  // Insert into the buffer only during the first local epoch.
  bool insert_first_epoch_only = false;

  // Fed-A-GEM, local A-GEM and DER keep a replay buffer; plain SGD does not.
  bool owns_buffer() const { return fed_a_gem || base != BaseStrategy::kPlain; }
  void Validate() const;
};

// Independent random streams owned by one client. Each consumer draws from
// its own stream so enabling one mechanism never shifts another's draws.
struct ClientRngs {
  Rng shuffle;
  Rng buffer;
  Rng replay;
  Rng refine;
  Rng buffer_grad;

  static ClientRngs FromSeed(std::uint64_t seed);
};

enum class TraceEvent {
  kBaseGradient,
  kLocalProjection,
  kProximal,
  kGlobalRefine,
  kStep,
  kBufferInsert,
};

// Optional instrumentation for a ClientUpdate call.
struct UpdateTrace {
  bool record_events = false;
  std::vector<TraceEvent> events;
  std::size_t steps = 0;
  std::size_t samples = 0;
  std::size_t conflicts = 0;   // steps where g . g_ref <= 0
  std::size_t refinements = 0; // steps where the refined gradient differs from g

  void Add(TraceEvent e) {
    if (record_events) events.push_back(e);
  }
};

GradientVector BaseGradientPlain(const ModelSpec& spec, const ParameterVector& w,
                                 const Batch& batch);

// Local A-GEM: current-batch gradient projected against the gradient of
// `replay_size` buffer samples when the two conflict.
GradientVector BaseGradientAgem(const ModelSpec& spec, const ParameterVector& w,
                                const Batch& batch, const ReplayBuffer& buffer,
                                std::size_t replay_size, Rng& rng,
                                UpdateTrace* trace = nullptr);

struct DerGradient {
  GradientVector grad;
  Matrix current_logits;  // h(X; w) before the step, stored with the batch
};

// Cross-entropy on the batch plus lambda * ||Z' - h(X'; w)||^2 (squared
// Frobenius norm) over `replay_size` buffered (X', Z') pairs.
DerGradient BaseGradientDer(const ModelSpec& spec, const ParameterVector& w,
                            const Batch& batch, const ReplayBuffer& buffer,
                            double lambda, std::size_t replay_size, Rng& rng);

// One client's local training on `samples`: E epochs of reshuffled mini-batch
// SGD. Per batch: base gradient, optional proximal term mu*(w - w_global),
// optional refinement against g_ref, step, then buffer insertion.
ParameterVector ClientUpdate(const StrategyConfig& cfg, const ModelSpec& spec,
                             const ParameterVector& w, const Batch& samples,
                             ReplayBuffer& buffer, const GradientVector* g_ref,
                             const ParameterVector& w_global, ClientRngs& rngs,
                             UpdateTrace* trace = nullptr);

}  // namespace cfl

#endif  // CFL_STRATEGIES_H_
