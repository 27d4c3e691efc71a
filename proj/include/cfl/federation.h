#ifndef CFL_FEDERATION_H_
#define CFL_FEDERATION_H_

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "cfl/model.h"
#include "cfl/replay_buffer.h"
#include "cfl/strategies.h"
#include "cfl/tasks.h"

namespace cfl {

class SecureAggregator;

// A client's contribution to an aggregate. The payload is only readable by a
// SecureAggregator; the server can see who sent it and how long it is.
class SealedVector {
 public:
  SealedVector(std::size_t client_id, std::vector<double> values, double weight = 1.0)
      : client_id_(client_id), weight_(weight), values_(std::move(values)) {}

  std::size_t client_id() const { return client_id_; }
  std::size_t size() const { return values_.size(); }
  double weight() const { return weight_; }

 private:
  friend class SecureAggregator;

  std::size_t client_id_;
  double weight_;
  std::vector<double> values_;
};

// Simulated secure aggregation: the only way individual contributions are
// combined. Summation runs in ascending client_id order, so the result does
// not depend on submission order.
class SecureAggregator {
 public:
  virtual ~SecureAggregator() = default;

  // Arithmetic mean, or the weight-normalized mean when `weighted`. Throws on
  // empty input, length mismatch, negative weights or all-zero weights.
  std::vector<double> Aggregate(std::vector<SealedVector> contributions,
                                bool weighted = false);

 protected:
  // Every payload read goes through here.
  std::span<const double> Open(const SealedVector& v);
  bool inside_aggregate() const { return depth_ > 0; }

  virtual void OnOpen(const SealedVector&) {}

 private:
  int depth_ = 0;
};

// Plain-vector convenience wrapper around SecureAggregator (tests, tools).
std::vector<double> SecureAggregate(std::span<const std::vector<double>> vectors,
                                     std::span<const double> weights = {});

struct RoundComm {
  std::uint64_t uplink_floats = 0;
  std::uint64_t downlink_floats = 0;
};

class CommLedger {
 public:
  void BeginRound() { rounds_.emplace_back(); }
  void AddUplink(std::uint64_t floats);
  void AddDownlink(std::uint64_t floats);

  const std::vector<RoundComm>& rounds() const { return rounds_; }
  std::uint64_t uplink_total() const { return uplink_total_; }
  std::uint64_t downlink_total() const { return downlink_total_; }

 private:
  std::vector<RoundComm> rounds_;
  std::uint64_t uplink_total_ = 0;
  std::uint64_t downlink_total_ = 0;
};

enum class ScheduleKind { kSync, kAsync };

struct Schedule {
  ScheduleKind kind = ScheduleKind::kSync;
  std::size_t rounds_per_task = 20;
  std::size_t samples_per_comm = 25;      // async only
  double comm_period_multiplier = 1.0;    // scales rounds per task

  // max(1, round(R * multiplier)).
  std::size_t effective_rounds_per_task() const;
  void Validate() const;
};

// Position of a client in its own task stream.
struct ShardCursor {
  std::size_t task = 0;
  std::size_t offset = 0;
};

// A contiguous run [begin, end) of shard.task_indices[task].
struct Segment {
  std::size_t task = 0;
  std::size_t begin = 0;
  std::size_t end = 0;

  bool operator==(const Segment&) const = default;
};

struct Grant {
  std::vector<Segment> segments;
  std::size_t total() const;
};

struct ServerState {
  ParameterVector w;
  std::optional<GradientVector> g_ref;
  std::size_t round_index = 0;
  std::size_t task_index = 0;
  CommLedger ledger;
};

struct ClientState {
  std::size_t client_id = 0;
  ParameterVector w;
  ReplayBuffer buffer{1};
  ShardCursor cursor;
  ClientRngs rngs;
  ClientShard shard;
  bool holds_global_model = false;  // w equals the current global model
};

// Grants for communication `comm_index` (0-based, counted over the whole
// run). Sync: every client gets its full shard of task comm_index / R_eff.
// Async: every client gets the next samples_per_comm samples of its stream,
// crossing task boundaries as shards run out; cursors advance.
std::vector<Grant> AdvanceSchedule(const Schedule& schedule, std::size_t comm_index,
                                   std::span<ClientState> clients);

// Training samples a grant refers to.
Batch GatherGrant(const TaskStream& stream, const ClientShard& shard, const Grant& grant);

// Mean cross-entropy gradient of the global model over min(m, |buffer|)
// sampled examples, or nullopt for an empty buffer.
std::optional<GradientVector> ComputeBufferGrad(const ModelSpec& spec,
                                                const ParameterVector& w,
                                                const ReplayBuffer& buffer,
                                                std::size_t m, Rng& rng);

struct RoundOptions {
  std::size_t buffer_grad_samples = 200;
  bool weighted_aggregation = false;
  double client_sampling_rate = 1.0;
  std::uint64_t sampling_seed = 0;
  std::size_t max_threads = 1;
};

struct RoundStats {
  std::size_t participants = 0;
  std::size_t gradient_contributors = 0;
  std::size_t samples = 0;
  std::size_t steps = 0;
  std::size_t conflicts = 0;
  std::size_t refinements = 0;
};

// One communication: broadcast, local updates on the granted samples, model
// aggregation, and under Fed-A-GEM a second broadcast followed by buffer
// gradient aggregation into g_ref. `grants` is indexed like `clients`.
RoundStats RunRound(ServerState& server, std::span<ClientState> clients,
                    std::span<const Grant> grants, const StrategyConfig& cfg,
                    const ModelSpec& spec, const TaskStream& stream,
                    SecureAggregator& aggregator, const RoundOptions& options);

struct CommPrediction {
  std::uint64_t uplink_per_round = 0;
  std::uint64_t downlink_per_round = 0;
  std::size_t rounds_per_task = 0;
  std::uint64_t uplink_total = 0;
  std::uint64_t downlink_total = 0;
};

// Ledger prediction under full participation with nonempty buffers.
// FedAvg moves K*P floats each way per round; Fed-A-GEM moves 2*K*P each way
// (buffer gradients up, the post-aggregation model down).
CommPrediction CommCost(const StrategyConfig& cfg, const Schedule& schedule,
                        std::size_t param_count, std::size_t num_clients,
                        std::size_t num_tasks = 1);

// Worker count: CFL_FORGE_THREADS if set (>= 1), else hardware concurrency.
std::size_t DefaultThreadCount();

// Runs fn(i) for i in [0, n) on up to max_threads threads.
void ParallelFor(std::size_t n, std::size_t max_threads,
                 const std::function<void(std::size_t)>& fn);

}  // namespace cfl

#endif  // CFL_FEDERATION_H_
