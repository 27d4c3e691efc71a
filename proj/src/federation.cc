#include "cfl/federation.h"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <numeric>
#include <stdexcept>
#include <string>
#include <thread>

namespace cfl {

std::span<const double> SecureAggregator::Open(const SealedVector& v) {
  OnOpen(v);
  return v.values_;
}

std::vector<double> SecureAggregator::Aggregate(std::vector<SealedVector> contributions,
                                                bool weighted) {
  if (contributions.empty()) throw std::invalid_argument("nothing to aggregate");
  struct Depth {
    int& d;
    explicit Depth(int& x) : d(x) { ++d; }
    ~Depth() { --d; }
  } guard(depth_);

  std::stable_sort(contributions.begin(), contributions.end(),
                   [](const SealedVector& a, const SealedVector& b) {
                     return a.client_id() < b.client_id();
                   });
  const std::size_t len = contributions.front().size();
  double weight_sum = 0.0;
  for (const auto& c : contributions) {
    if (c.size() != len) throw std::invalid_argument("aggregate length mismatch");
    if (weighted) {
      if (c.weight() < 0.0) throw std::invalid_argument("negative aggregation weight");
      weight_sum += c.weight();
    }
  }
  if (weighted && !(weight_sum > 0.0)) {
    throw std::invalid_argument("aggregation weights are all zero");
  }
  std::vector<double> sum(len, 0.0);
  for (const auto& c : contributions) {
    const auto values = Open(c);
    const double s = weighted ? c.weight() : 1.0;
    for (std::size_t i = 0; i < len; ++i) sum[i] += s * values[i];
  }
  const double denom = weighted ? weight_sum : static_cast<double>(contributions.size());
  for (double& v : sum) v /= denom;
  return sum;
}

std::vector<double> SecureAggregate(std::span<const std::vector<double>> vectors,
                                     std::span<const double> weights) {
  if (!weights.empty() && weights.size() != vectors.size()) {
    throw std::invalid_argument("one weight per vector required");
  }
  std::vector<SealedVector> sealed;
  sealed.reserve(vectors.size());
  for (std::size_t i = 0; i < vectors.size(); ++i) {
    sealed.emplace_back(i, vectors[i], weights.empty() ? 1.0 : weights[i]);
  }
  SecureAggregator agg;
  return agg.Aggregate(std::move(sealed), !weights.empty());
}

void CommLedger::AddUplink(std::uint64_t floats) {
  if (rounds_.empty()) BeginRound();
  rounds_.back().uplink_floats += floats;
  uplink_total_ += floats;
}

void CommLedger::AddDownlink(std::uint64_t floats) {
  if (rounds_.empty()) BeginRound();
  rounds_.back().downlink_floats += floats;
  downlink_total_ += floats;
}

std::size_t Schedule::effective_rounds_per_task() const {
  const double r = std::round(static_cast<double>(rounds_per_task) * comm_period_multiplier);
  return std::max<std::size_t>(1, static_cast<std::size_t>(r));
}

void Schedule::Validate() const {
  if (rounds_per_task < 1) throw std::invalid_argument("rounds_per_task must be >= 1");
  if (!(comm_period_multiplier > 0.0)) {
    throw std::invalid_argument("comm_period_multiplier must be > 0");
  }
  if (kind == ScheduleKind::kAsync && samples_per_comm < 1) {
    throw std::invalid_argument("samples_per_comm must be >= 1");
  }
}

std::size_t Grant::total() const {
  std::size_t n = 0;
  for (const auto& s : segments) n += s.end - s.begin;
  return n;
}

std::vector<Grant> AdvanceSchedule(const Schedule& schedule, std::size_t comm_index,
                                   std::span<ClientState> clients) {
  std::vector<Grant> grants(clients.size());
  if (schedule.kind == ScheduleKind::kSync) {
    const std::size_t task = comm_index / schedule.effective_rounds_per_task();
    for (std::size_t k = 0; k < clients.size(); ++k) {
      ClientState& c = clients[k];
      if (task >= c.shard.task_indices.size()) continue;
      if (c.cursor.task != task) c.cursor = {task, 0};
      const std::size_t n = c.shard.task_indices[task].size();
      if (n > 0) grants[k].segments.push_back({task, 0, n});
    }
    return grants;
  }
  for (std::size_t k = 0; k < clients.size(); ++k) {
    ClientState& c = clients[k];
    std::size_t budget = schedule.samples_per_comm;
    while (budget > 0 && c.cursor.task < c.shard.task_indices.size()) {
      const std::size_t size = c.shard.task_indices[c.cursor.task].size();
      const std::size_t take = std::min(budget, size - c.cursor.offset);
      if (take > 0) {
        grants[k].segments.push_back(
            {c.cursor.task, c.cursor.offset, c.cursor.offset + take});
      }
      c.cursor.offset += take;
      budget -= take;
      if (c.cursor.offset == size) c.cursor = {c.cursor.task + 1, 0};
    }
  }
  return grants;
}

Batch GatherGrant(const TaskStream& stream, const ClientShard& shard, const Grant& grant) {
  Batch out;
  const std::size_t n = grant.total();
  if (n == 0) return out;
  const std::size_t dim = stream.tasks.front().train.images.cols;
  out.inputs = Matrix(n, dim);
  out.labels.reserve(n);
  std::size_t row = 0;
  for (const Segment& s : grant.segments) {
    const Dataset& train = stream.tasks.at(s.task).train;
    const auto& idx = shard.task_indices.at(s.task);
    for (std::size_t i = s.begin; i < s.end; ++i, ++row) {
      const auto src = train.images.row(idx[i]);
      std::copy(src.begin(), src.end(), out.inputs.row(row).begin());
      out.labels.push_back(train.labels[idx[i]]);
    }
  }
  return out;
}

std::optional<GradientVector> ComputeBufferGrad(const ModelSpec& spec,
                                                const ParameterVector& w,
                                                const ReplayBuffer& buffer,
                                                std::size_t m, Rng& rng) {
  if (m < 1) throw std::invalid_argument("buffer gradient sample count must be >= 1");
  if (buffer.empty()) return std::nullopt;
  const Batch replay = ToBatch(buffer.Sample(m, rng));
  return LossAndGrad(spec, w, replay).grad;
}

RoundStats RunRound(ServerState& server, std::span<ClientState> clients,
                    std::span<const Grant> grants, const StrategyConfig& cfg,
                    const ModelSpec& spec, const TaskStream& stream,
                    SecureAggregator& aggregator, const RoundOptions& options) {
  if (grants.size() != clients.size()) {
    throw std::invalid_argument("one grant per client required");
  }
  RoundStats stats;
  std::vector<std::size_t> active;
  for (std::size_t k = 0; k < clients.size(); ++k) {
    if (grants[k].total() > 0) active.push_back(k);
  }
  if (options.client_sampling_rate < 1.0 && !active.empty()) {
    // Seeded subset keyed by client id so list order does not matter.
    std::sort(active.begin(), active.end(), [&](std::size_t a, std::size_t b) {
      return clients[a].client_id < clients[b].client_id;
    });
    Rng rng(DeriveSeed(options.sampling_seed, {server.round_index}));
    std::vector<std::size_t> picked = active;
    rng.Shuffle(picked.begin(), picked.end());
    const auto keep = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::llround(options.client_sampling_rate *
                                                 static_cast<double>(active.size()))));
    picked.resize(std::min(keep, picked.size()));
    active = std::move(picked);
  }
  std::sort(active.begin(), active.end());
  if (active.empty()) return stats;

  const std::uint64_t p = server.w.size();
  server.ledger.BeginRound();

  // (1) Broadcast: the model to clients whose copy is stale, g_ref when the
  // client will use it.
  const bool send_ref = cfg.fed_a_gem && server.g_ref.has_value();
  for (std::size_t k : active) {
    ClientState& c = clients[k];
    if (!c.holds_global_model) {
      c.w = server.w;
      c.holds_global_model = true;
      server.ledger.AddDownlink(p);
    }
    if (send_ref) server.ledger.AddDownlink(p);
  }

  // (2) Local updates.
  std::vector<UpdateTrace> traces(active.size());
  const GradientVector* g_ref = send_ref ? &*server.g_ref : nullptr;
  ParallelFor(active.size(), options.max_threads, [&](std::size_t i) {
    ClientState& c = clients[active[i]];
    const Batch samples = GatherGrant(stream, c.shard, grants[active[i]]);
    c.w = ClientUpdate(cfg, spec, c.w, samples, c.buffer, g_ref, server.w, c.rngs,
                       &traces[i]);
  });
  for (const auto& t : traces) {
    stats.samples += t.samples;
    stats.steps += t.steps;
    stats.conflicts += t.conflicts;
    stats.refinements += t.refinements;
  }
  stats.participants = active.size();

  // (3) Model aggregation.
  std::vector<SealedVector> models;
  models.reserve(active.size());
  for (std::size_t k : active) {
    models.emplace_back(clients[k].client_id, clients[k].w.values,
                        static_cast<double>(grants[k].total()));
    server.ledger.AddUplink(p);
  }
  server.w.values = aggregator.Aggregate(std::move(models), options.weighted_aggregation);
  for (ClientState& c : clients) c.holds_global_model = false;

  // (4)-(5) Buffer gradients of the new global model.
  if (cfg.fed_a_gem) {
    std::vector<std::optional<GradientVector>> grads(active.size());
    for (std::size_t k : active) {
      clients[k].w = server.w;
      clients[k].holds_global_model = true;
      server.ledger.AddDownlink(p);
    }
    ParallelFor(active.size(), options.max_threads, [&](std::size_t i) {
      ClientState& c = clients[active[i]];
      grads[i] = ComputeBufferGrad(spec, server.w, c.buffer, options.buffer_grad_samples,
                                   c.rngs.buffer_grad);
    });
    std::vector<SealedVector> sealed;
    for (std::size_t i = 0; i < active.size(); ++i) {
      if (!grads[i]) continue;
      const ClientState& c = clients[active[i]];
      sealed.emplace_back(c.client_id, std::move(grads[i]->values),
                          static_cast<double>(c.buffer.size()));
      server.ledger.AddUplink(p);
    }
    stats.gradient_contributors = sealed.size();
    if (!sealed.empty()) {
      server.g_ref = GradientVector{
          aggregator.Aggregate(std::move(sealed), options.weighted_aggregation)};
    }
  }
  ++server.round_index;
  return stats;
}

CommPrediction CommCost(const StrategyConfig& cfg, const Schedule& schedule,
                        std::size_t param_count, std::size_t num_clients,
                        std::size_t num_tasks) {
  if (param_count < 1 || num_clients < 1) {
    throw std::invalid_argument("parameter and client counts must be >= 1");
  }
  CommPrediction out;
  const std::uint64_t kp = static_cast<std::uint64_t>(param_count) * num_clients;
  const std::uint64_t factor = cfg.fed_a_gem ? 2 : 1;
  out.uplink_per_round = factor * kp;
  out.downlink_per_round = factor * kp;
  out.rounds_per_task = schedule.effective_rounds_per_task();
  const std::uint64_t rounds = out.rounds_per_task * num_tasks;
  out.uplink_total = rounds * out.uplink_per_round;
  out.downlink_total = rounds * out.downlink_per_round;
  return out;
}

std::size_t DefaultThreadCount() {
  if (const char* env = std::getenv("CFL_FORGE_THREADS")) {
    try {
      const long v = std::stol(env);
      if (v >= 1) return static_cast<std::size_t>(v);
    } catch (const std::exception&) {
    }
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

void ParallelFor(std::size_t n, std::size_t max_threads,
                 const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::min(n, std::max<std::size_t>(1, max_threads));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::exception_ptr error;
  std::mutex mu;
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      for (std::size_t i = w; i < n; i += workers) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(mu);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace cfl
