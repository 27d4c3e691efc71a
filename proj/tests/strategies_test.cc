#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

#include "cfl/geometry.h"
#include "cfl/strategies.h"
#include "cfl/tasks.h"
#include "test_util.h"

namespace cfl {
namespace {

using testing::RelError;

struct Fixture {
  ModelSpec spec{{4, 6, 3}, Activation::kTanh};
  ParameterVector w;
  Batch samples;

  explicit Fixture(std::uint64_t seed = 1, std::size_t n = 23) {
    Rng rng(seed);
    w = InitParams(spec, seed);
    samples = testing::RandomBatch(rng, spec, n);
  }
};

// Plain mini-batch SGD with the same epoch shuffles, written independently.
ParameterVector OracleSgd(const ModelSpec& spec, ParameterVector w, const Batch& samples,
                          std::size_t beta, std::size_t epochs, double lr, Rng shuffle) {
  const std::size_t n = samples.size();
  for (std::size_t e = 0; e < epochs; ++e) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    shuffle.Shuffle(order.begin(), order.end());
    for (std::size_t s = 0; s < n; s += beta) {
      Batch b;
      const std::size_t m = std::min(beta, n - s);
      b.inputs = Matrix(m, samples.inputs.cols);
      for (std::size_t r = 0; r < m; ++r) {
        for (std::size_t c = 0; c < samples.inputs.cols; ++c) {
          b.inputs(r, c) = samples.inputs(order[s + r], c);
        }
        b.labels.push_back(samples.labels[order[s + r]]);
      }
      w = SgdStep(w, LossAndGrad(spec, w, b).grad, lr);
    }
  }
  return w;
}

TEST(ClientUpdate, SingleStepHandTrace) {
  // Zero 1->2 linear model, x = 1, y = 0: g = [-.5, .5, -.5, .5].
  // g_ref = e_0 gives g.g_ref = -0.5, so g~ = g + 0.5 e_0 = [0, .5, -.5, .5].
  ModelSpec spec{{1, 2}, Activation::kRelu};
  ParameterVector w{std::vector<double>(4, 0.0)};
  Batch s;
  s.inputs = Matrix(1, 1, 1.0);
  s.labels = {0};
  StrategyConfig cfg;
  cfg.fed_a_gem = true;
  cfg.lr = 0.1;
  cfg.batch_size = 1;
  GradientVector g_ref{{1, 0, 0, 0}};
  ReplayBuffer buf(5);
  auto rngs = ClientRngs::FromSeed(0);
  UpdateTrace trace;
  const auto out = ClientUpdate(cfg, spec, w, s, buf, &g_ref, w, rngs, &trace);
  const std::vector<double> want{0.0, -0.05, 0.05, -0.05};
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(out.values[i], want[i], 1e-15);
  EXPECT_EQ(trace.steps, 1u);
  EXPECT_EQ(trace.conflicts, 1u);
  EXPECT_EQ(trace.refinements, 1u);
  EXPECT_EQ(buf.size(), 1u);
}

TEST(ClientUpdate, PlainMatchesIndependentSgd) {
  Fixture f;
  StrategyConfig cfg;
  cfg.lr = 0.05;
  cfg.batch_size = 5;
  cfg.local_epochs = 3;
  ReplayBuffer buf(10);
  auto rngs = ClientRngs::FromSeed(9);
  const Rng shuffle = rngs.shuffle;
  const auto got = ClientUpdate(cfg, f.spec, f.w, f.samples, buf, nullptr, f.w, rngs);
  const auto want = OracleSgd(f.spec, f.w, f.samples, 5, 3, 0.05, shuffle);
  EXPECT_LT(RelError(got.values, want.values), 1e-14);
  EXPECT_TRUE(buf.empty());
}

ParameterVector RunWith(const StrategyConfig& cfg, const Fixture& f,
                        const GradientVector* g_ref, std::uint64_t seed = 3) {
  ReplayBuffer buf(50);
  auto rngs = ClientRngs::FromSeed(seed);
  return ClientUpdate(cfg, f.spec, f.w, f.samples, buf, g_ref, f.w, rngs);
}

TEST(ClientUpdate, ReductionsToPlainSgd) {
  Fixture f;
  StrategyConfig plain;
  plain.batch_size = 4;
  plain.local_epochs = 2;
  plain.lr = 0.1;
  const auto base = RunWith(plain, f, nullptr);
  Rng rng(4);
  const auto g_ref = testing::RandomGradient(rng, f.spec.param_count());

  StrategyConfig fag = plain;
  fag.fed_a_gem = true;
  EXPECT_EQ(RunWith(fag, f, nullptr), base) << "no reference yet";

  StrategyConfig rate0 = fag;
  rate0.refine.rate_percent = 0;
  EXPECT_EQ(RunWith(rate0, f, &g_ref), base) << "rate 0";

  StrategyConfig prox0 = plain;
  prox0.fedprox_mu = 0.0;
  EXPECT_EQ(RunWith(prox0, f, nullptr), base) << "mu 0";

  StrategyConfig der0 = plain;
  der0.base = BaseStrategy::kDer;
  EXPECT_EQ(RunWith(der0, f, nullptr), base) << "lambda 0";

  StrategyConfig ref_ignored = plain;
  EXPECT_EQ(RunWith(ref_ignored, f, &g_ref), base) << "g_ref without fed_a_gem";
}

TEST(ClientUpdate, NonConflictingReferenceLeavesPlainPath) {
  // With condition conflict_only, a reference parallel to every step's
  // gradient never fires; emulate with mode=project and a single batch whose
  // own gradient is the reference.
  Fixture f(2, 6);
  StrategyConfig cfg;
  cfg.batch_size = 6;
  cfg.fed_a_gem = true;
  const auto g = LossAndGrad(f.spec, f.w, f.samples).grad;
  StrategyConfig plain = cfg;
  plain.fed_a_gem = false;
  UpdateTrace trace;
  ReplayBuffer buf(10);
  auto rngs = ClientRngs::FromSeed(0);
  const auto got = ClientUpdate(cfg, f.spec, f.w, f.samples, buf, &g, f.w, rngs, &trace);
  EXPECT_EQ(got, RunWith(plain, f, nullptr, 0));
  EXPECT_EQ(trace.conflicts, 0u);
  EXPECT_EQ(trace.refinements, 0u);
}

TEST(ClientUpdate, FedProxHandTrace) {
  // Zero model, one sample, w_global = 1 everywhere: step is
  // -lr * (g + mu * (0 - 1)).
  ModelSpec spec{{1, 2}, Activation::kRelu};
  ParameterVector w{std::vector<double>(4, 0.0)};
  ParameterVector wg{std::vector<double>(4, 1.0)};
  Batch s;
  s.inputs = Matrix(1, 1, 1.0);
  s.labels = {1};
  StrategyConfig cfg;
  cfg.fedprox_mu = 0.5;
  cfg.lr = 0.1;
  cfg.batch_size = 1;
  ReplayBuffer buf(1);
  auto rngs = ClientRngs::FromSeed(0);
  const auto out = ClientUpdate(cfg, spec, w, s, buf, nullptr, wg, rngs);
  const std::vector<double> g{0.5, -0.5, 0.5, -0.5};
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(out.values[i], -0.1 * (g[i] - 0.5), 1e-15);
}

TEST(ClientUpdate, LocalProjectionPrecedesGlobalRefine) {
  Fixture f(5, 40);
  StrategyConfig cfg;
  cfg.base = BaseStrategy::kAgemLocal;
  cfg.fed_a_gem = true;
  cfg.fedprox_mu = 0.01;
  cfg.batch_size = 4;
  cfg.lr = 0.2;
  Rng rng(1);
  const auto g_ref = testing::RandomGradient(rng, f.spec.param_count());
  ReplayBuffer buf(30);
  auto rngs = ClientRngs::FromSeed(1);
  UpdateTrace trace;
  trace.record_events = true;
  ClientUpdate(cfg, f.spec, f.w, f.samples, buf, &g_ref, f.w, rngs, &trace);
  ASSERT_EQ(trace.steps, 10u);
  std::size_t local = 0;
  std::size_t i = 0;
  for (std::size_t step = 0; step < trace.steps; ++step) {
    ASSERT_EQ(trace.events[i++], TraceEvent::kBaseGradient);
    if (trace.events[i] == TraceEvent::kLocalProjection) {
      ++local;
      ++i;
    }
    EXPECT_EQ(trace.events[i++], TraceEvent::kProximal);
    EXPECT_EQ(trace.events[i++], TraceEvent::kGlobalRefine);
    EXPECT_EQ(trace.events[i++], TraceEvent::kStep);
    EXPECT_EQ(trace.events[i++], TraceEvent::kBufferInsert);
  }
  EXPECT_EQ(i, trace.events.size());
  EXPECT_GT(local, 0u);
}

TEST(BaseGradientAgem, ProjectsAgainstReplayGradient) {
  Fixture f(6, 12);
  ReplayBuffer buf(8);
  Rng fill(0);
  Rng data(77);
  const auto other = testing::RandomBatch(data, f.spec, 8);
  buf.InsertBatch(other, InsertPolicy::kReservoir, fill);
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const Batch b = testing::RandomBatch(data, f.spec, 3);
    Rng peek = rng;
    const auto replay = ToBatch(buf.Sample(4, peek));
    const auto gc = LossAndGrad(f.spec, f.w, b).grad;
    const auto gb = LossAndGrad(f.spec, f.w, replay).grad;
    const auto got = BaseGradientAgem(f.spec, f.w, b, buf, 4, rng);
    EXPECT_GE(vec::Dot(got.values, gb.values), -1e-12);
    const double d = vec::Dot(gc.values, gb.values);
    if (d > 0) {
      EXPECT_EQ(got, gc);
    } else {
      auto want = gc;
      vec::Axpy(-d / vec::Dot(gb.values, gb.values), gb.values, want.values);
      EXPECT_LT(RelError(got.values, want.values), 1e-12);
    }
  }
}

TEST(BaseGradientAgem, IdenticalReplayBatchDoesNotProject) {
  Fixture f(4, 6);
  ReplayBuffer buf(6);
  Rng rng(0);
  buf.InsertBatch(f.samples, InsertPolicy::kReservoir, rng);
  // m = |buffer| samples the whole buffer, so g_b = g_c.
  EXPECT_EQ(BaseGradientAgem(f.spec, f.w, f.samples, buf, 6, rng),
            LossAndGrad(f.spec, f.w, f.samples).grad);
}

TEST(BaseGradientAgem, HandTraceOnTinyLinearModel) {
  // Zero 1->2 model. Current x=1, y=0: g_c = [-.5, .5, -.5, .5].
  // Buffer x=-2, y=0: g_b = [1, -1, -.5, .5], g_c.g_b = -0.5, |g_b|^2 = 2.5,
  // so g = g_c + 0.2 g_b.
  ModelSpec spec{{1, 2}, Activation::kRelu};
  ParameterVector w{std::vector<double>(4, 0.0)};
  Batch cur;
  cur.inputs = Matrix(1, 1, 1.0);
  cur.labels = {0};
  ReplayBuffer buf(1);
  Rng rng(0);
  buf.Insert(Example{{-2.0}, 0, std::nullopt}, InsertPolicy::kReservoir, rng);
  UpdateTrace trace;
  trace.record_events = true;
  const auto g = BaseGradientAgem(spec, w, cur, buf, 1, rng, &trace);
  const std::vector<double> want{-0.3, 0.3, -0.6, 0.6};
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(g.values[i], want[i], 1e-15);
  EXPECT_EQ(trace.events, (std::vector<TraceEvent>{TraceEvent::kLocalProjection}));
}

TEST(BaseGradientDer, ExactStoredLogitsAddNothing) {
  Fixture f(8, 5);
  auto stored = f.samples;
  stored.logits = Forward(f.spec, f.w, stored.inputs);
  ReplayBuffer buf(5);
  Rng rng(0);
  buf.InsertBatch(stored, InsertPolicy::kReservoir, rng);
  const auto d = BaseGradientDer(f.spec, f.w, f.samples, buf, 2.0, 3, rng);
  EXPECT_LT(RelError(d.grad.values, LossAndGrad(f.spec, f.w, f.samples).grad.values), 1e-15);
}

TEST(ClientUpdate, ProximalTermVanishesAtAnchorOnFirstStep) {
  Fixture f(2, 5);
  StrategyConfig cfg;
  cfg.batch_size = 5;
  StrategyConfig prox = cfg;
  prox.fedprox_mu = 3.0;
  EXPECT_EQ(RunWith(prox, f, nullptr), RunWith(cfg, f, nullptr));
}

TEST(BaseGradientAgem, EmptyBufferGivesPlainGradient) {
  Fixture f;
  ReplayBuffer buf(3);
  Rng rng(0);
  EXPECT_EQ(BaseGradientAgem(f.spec, f.w, f.samples, buf, 5, rng),
            LossAndGrad(f.spec, f.w, f.samples).grad);
}

TEST(BaseGradientDer, MatchesFiniteDifferencesOfRegularizedLoss) {
  Rng data(10);
  for (int trial = 0; trial < 5; ++trial) {
    const auto spec = testing::RandomSpec(data, 120);
    const auto w = testing::RandomParams(data, spec.param_count(), 0.7);
    const auto b = testing::RandomBatch(data, spec, 3);
    auto stored = testing::RandomBatch(data, spec, 6);
    Matrix z(6, spec.num_classes());
    for (double& v : z.data) v = data.Normal();
    stored.logits = z;
    ReplayBuffer buf(6);
    Rng fill(0);
    buf.InsertBatch(stored, InsertPolicy::kReservoir, fill);
    const double lambda = 0.3;

    Rng rng(trial);
    Rng peek = rng;
    const auto replay = ToBatch(buf.Sample(4, peek), true);
    const auto got = BaseGradientDer(spec, w, b, buf, lambda, 4, rng);
    const auto want = FiniteDiffGrad(w, 1e-6, [&](const ParameterVector& q) {
      const auto h = Forward(spec, q, replay.inputs);
      double reg = 0.0;
      for (std::size_t i = 0; i < h.data.size(); ++i) {
        const double d = replay.logits->data[i] - h.data[i];
        reg += d * d;
      }
      return LossAndGrad(spec, q, b).loss + lambda * reg;
    });
    EXPECT_LT(RelError(got.grad.values, want.values), 1e-5) << trial;
    EXPECT_EQ(got.current_logits, Forward(spec, w, b.inputs));
  }
}

TEST(BaseGradientDer, MissingStoredLogitsIsAnError) {
  Fixture f;
  ReplayBuffer buf(3);
  Rng rng(0);
  buf.InsertBatch(f.samples, InsertPolicy::kReservoir, rng);
  EXPECT_THROW(BaseGradientDer(f.spec, f.w, f.samples, buf, 0.5, 2, rng),
               std::invalid_argument);
}

TEST(ClientUpdate, DerStoresLogitsWithSamples) {
  Fixture f(3, 8);
  StrategyConfig cfg;
  cfg.base = BaseStrategy::kDer;
  cfg.der_lambda = 0.1;
  cfg.batch_size = 4;
  ReplayBuffer buf(20);
  auto rngs = ClientRngs::FromSeed(2);
  ClientUpdate(cfg, f.spec, f.w, f.samples, buf, nullptr, f.w, rngs);
  ASSERT_EQ(buf.size(), 8u);
  for (const auto& e : buf.items()) {
    ASSERT_TRUE(e.logits.has_value());
    EXPECT_EQ(e.logits->size(), 3u);
  }
}

TEST(ClientUpdate, ObservedCountTracksInsertions) {
  Fixture f(1, 10);
  StrategyConfig cfg;
  cfg.fed_a_gem = true;
  cfg.batch_size = 3;
  cfg.local_epochs = 3;
  {
    ReplayBuffer buf(4);
    auto rngs = ClientRngs::FromSeed(0);
    ClientUpdate(cfg, f.spec, f.w, f.samples, buf, nullptr, f.w, rngs);
    EXPECT_EQ(buf.observed_count(), 30u);
  }
  cfg.insert_first_epoch_only = true;
  {
    ReplayBuffer buf(4);
    auto rngs = ClientRngs::FromSeed(0);
    ClientUpdate(cfg, f.spec, f.w, f.samples, buf, nullptr, f.w, rngs);
    EXPECT_EQ(buf.observed_count(), 10u);
  }
}

TEST(ClientUpdate, EmptySamplesAndLayoutErrors) {
  Fixture f;
  StrategyConfig cfg;
  ReplayBuffer buf(2);
  auto rngs = ClientRngs::FromSeed(0);
  Batch empty;
  empty.inputs = Matrix(0, 4);
  EXPECT_EQ(ClientUpdate(cfg, f.spec, f.w, empty, buf, nullptr, f.w, rngs), f.w);
  ParameterVector bad{std::vector<double>(3)};
  EXPECT_THROW(ClientUpdate(cfg, f.spec, bad, f.samples, buf, nullptr, bad, rngs),
               std::invalid_argument);
  GradientVector bad_ref{std::vector<double>(3)};
  cfg.fed_a_gem = true;
  EXPECT_THROW(ClientUpdate(cfg, f.spec, f.w, f.samples, buf, &bad_ref, f.w, rngs),
               std::invalid_argument);
}

TEST(ClientUpdate, DeterministicInSeed) {
  Fixture f;
  StrategyConfig cfg;
  cfg.base = BaseStrategy::kAgemLocal;
  cfg.fed_a_gem = true;
  cfg.refine.rate_percent = 50;
  Rng rng(0);
  const auto g_ref = testing::RandomGradient(rng, f.spec.param_count());
  EXPECT_EQ(RunWith(cfg, f, &g_ref, 5), RunWith(cfg, f, &g_ref, 5));
  EXPECT_NE(RunWith(cfg, f, &g_ref, 5), RunWith(cfg, f, &g_ref, 6));
}

TEST(StrategyConfig, Validate) {
  StrategyConfig cfg;
  EXPECT_NO_THROW(cfg.Validate());
  cfg.lr = 0;
  EXPECT_THROW(cfg.Validate(), std::invalid_argument);
  cfg = {};
  cfg.der_lambda = 0.5;
  EXPECT_THROW(cfg.Validate(), std::invalid_argument);
  cfg.base = BaseStrategy::kDer;
  EXPECT_NO_THROW(cfg.Validate());
  cfg.refine.rate_percent = 150;
  EXPECT_THROW(cfg.Validate(), std::invalid_argument);
  EXPECT_FALSE(StrategyConfig{}.owns_buffer());
}

}  // namespace
}  // namespace cfl
