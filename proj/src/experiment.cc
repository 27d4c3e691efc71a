#include "cfl/experiment.h"

#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "cfl/rng.h"

namespace cfl {

using nlohmann::json;

namespace {

// Seed-derivation tags. Changing any of these changes every output.
enum SeedTag : std::uint64_t {
  kDataTag = 0x10,
  kStreamTag = 0x11,
  kPartitionTag = 0x12,
  kInitTag = 0x13,
  kClientTag = 0x14,
  kSamplingTag = 0x15,
};

template <typename E>
struct EnumName {
  E value;
  const char* name;
};

constexpr EnumName<Scenario> kScenarios[] = {
    {Scenario::kDomainRotate, "domain_rotate"},
    {Scenario::kDomainPermute, "domain_permute"},
    {Scenario::kClassIl, "class_il"},
    {Scenario::kTaskIl, "task_il"}};
constexpr EnumName<PartitionKind> kPartitions[] = {
    {PartitionKind::kAuto, "auto"},
    {PartitionKind::kDigitPairs, "digit_pairs"},
    {PartitionKind::kDirichlet, "dirichlet"},
    {PartitionKind::kIid, "iid"}};
constexpr EnumName<DatasetKind> kDatasets[] = {{DatasetKind::kSynth, "synth"},
                                               {DatasetKind::kIdx, "idx"}};
constexpr EnumName<BaseStrategy> kStrategies[] = {{BaseStrategy::kPlain, "plain"},
                                                  {BaseStrategy::kAgemLocal, "agem_local"},
                                                  {BaseStrategy::kDer, "der"}};
constexpr EnumName<InsertPolicy> kPolicies[] = {
    {InsertPolicy::kReservoir, "reservoir"},
    {InsertPolicy::kSlidingWindow, "sliding_window"},
    {InsertPolicy::kRandomReplace, "random_replace"}};
constexpr EnumName<RefineMode> kModes[] = {{RefineMode::kProject, "project"},
                                           {RefineMode::kAverage, "average"},
                                           {RefineMode::kRotate, "rotate"},
                                           {RefineMode::kProjectScale, "project_scale"}};
constexpr EnumName<RefineCondition> kConditions[] = {
    {RefineCondition::kConflictOnly, "conflict_only"},
    {RefineCondition::kAlways, "always"}};
constexpr EnumName<ScheduleKind> kSchedules[] = {{ScheduleKind::kSync, "sync"},
                                                 {ScheduleKind::kAsync, "async"}};
constexpr EnumName<Activation> kActivations[] = {{Activation::kRelu, "relu"},
                                                 {Activation::kTanh, "tanh"}};
constexpr EnumName<ForgettingVariant> kForgetting[] = {
    {ForgettingVariant::kLiteral, "literal"},
    {ForgettingVariant::kAfterLearned, "after_learned"}};

template <typename E, std::size_t N>
const char* NameOf(const EnumName<E> (&table)[N], E v) {
  for (const auto& e : table) {
    if (e.value == v) return e.name;
  }
  return "?";
}

template <typename E, std::size_t N>
E ParseEnum(const EnumName<E> (&table)[N], const json& j, const std::string& key) {
  if (!j.is_string()) throw ConfigError("key '" + key + "': expected a string");
  const auto s = j.get<std::string>();
  std::string allowed;
  for (const auto& e : table) {
    if (s == e.name) return e.value;
    allowed += allowed.empty() ? e.name : std::string(", ") + e.name;
  }
  throw ConfigError("key '" + key + "': unknown value '" + s + "' (expected one of " +
                    allowed + ")");
}

std::size_t ParseCount(const json& j, const std::string& key, std::size_t min = 1) {
  if (!j.is_number_integer()) throw ConfigError("key '" + key + "': expected an integer");
  const auto v = j.get<long long>();
  if (v < static_cast<long long>(min)) {
    throw ConfigError("key '" + key + "': must be >= " + std::to_string(min));
  }
  return static_cast<std::size_t>(v);
}

double ParseReal(const json& j, const std::string& key) {
  if (!j.is_number()) throw ConfigError("key '" + key + "': expected a number");
  const double v = j.get<double>();
  if (!std::isfinite(v)) throw ConfigError("key '" + key + "': must be finite");
  return v;
}

bool ParseBool(const json& j, const std::string& key) {
  if (!j.is_boolean()) throw ConfigError("key '" + key + "': expected true or false");
  return j.get<bool>();
}

std::string ParseString(const json& j, const std::string& key) {
  if (!j.is_string()) throw ConfigError("key '" + key + "': expected a string");
  return j.get<std::string>();
}

void Require(bool ok, const std::string& key, const std::string& what) {
  if (!ok) throw ConfigError("key '" + key + "': " + what);
}

void WriteFile(const std::filesystem::path& p, const std::string& content) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  out << content;
}

}  // namespace

std::string ToString(Scenario s) { return NameOf(kScenarios, s); }
std::string ToString(BaseStrategy b) { return NameOf(kStrategies, b); }
std::string ToString(InsertPolicy p) { return NameOf(kPolicies, p); }
std::string ToString(RefineMode m) { return NameOf(kModes, m); }
std::string ToString(RefineCondition c) { return NameOf(kConditions, c); }

std::string FormatDouble(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

void ExperimentConfig::Validate() const {
  Require(tasks >= 1, "tasks", "must be >= 1");
  Require(clients >= 1, "clients", "must be >= 1");
  Require(buffer_size >= 1, "buffer_size", "must be >= 1");
  Require(dirichlet_alpha > 0.0, "dirichlet_alpha", "must be > 0");
  Require(client_sampling_rate > 0.0 && client_sampling_rate <= 1.0,
          "client_sampling_rate", "must lie in (0, 1]");
  Require(strategy.refine.rate_percent >= 0.0 && strategy.refine.rate_percent <= 100.0,
          "rate_percent", "must lie in [0, 100]");
  Require(strategy.lr > 0.0, "lr", "must be > 0");
  Require(strategy.fedprox_mu >= 0.0, "fedprox_mu", "must be >= 0");
  Require(strategy.der_lambda >= 0.0, "der_lambda", "must be >= 0");
  Require(strategy.der_lambda == 0.0 || strategy.base == BaseStrategy::kDer, "der_lambda",
          "only valid with strategy 'der'");
  Require(schedule.comm_period_multiplier > 0.0, "comm_period_multiplier", "must be > 0");
  Require(!seeds.empty(), "seeds", "must list at least one seed");
  if (dataset == DatasetKind::kSynth) {
    Require(synth_spread >= 0.0, "synth_spread", "must be >= 0");
    Require(synth_test_per_class >= 1, "synth_test_per_class", "must be >= 1");
    if (scenario == Scenario::kDomainRotate) {
      const auto side = static_cast<std::size_t>(
          std::llround(std::sqrt(static_cast<double>(synth_dim))));
      Require(side * side == synth_dim, "synth_dim",
              "must be a perfect square for rotated images");
    }
  } else {
    Require(!idx_train_images.empty(), "idx_train_images", "required for idx dataset");
    Require(!idx_train_labels.empty(), "idx_train_labels", "required for idx dataset");
    Require(!idx_test_images.empty(), "idx_test_images", "required for idx dataset");
    Require(!idx_test_labels.empty(), "idx_test_labels", "required for idx dataset");
  }
  if (scenario == Scenario::kClassIl || scenario == Scenario::kTaskIl) {
    const std::size_t c = dataset == DatasetKind::kSynth ? synth_classes : 10;
    Require(c % tasks == 0, "tasks", "class count must be divisible by the task count");
  }
}

std::string ExperimentConfig::ResolvedMethodName() const {
  if (!method_name.empty()) return method_name;
  std::string name = "FL";
  if (strategy.fedprox_mu > 0.0) name = "FedProx";
  if (strategy.base == BaseStrategy::kAgemLocal) name += "+A-GEM";
  if (strategy.base == BaseStrategy::kDer) name += "+DER";
  if (strategy.fed_a_gem) name += "+Fed-A-GEM";
  return name;
}

EvalMode ExperimentConfig::eval_mode() const {
  switch (scenario) {
    case Scenario::kClassIl:
      return EvalMode::kClassIl;
    case Scenario::kTaskIl:
      return EvalMode::kTaskIl;
    default:
      return EvalMode::kDomainIl;
  }
}

ExperimentConfig ParseConfigText(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!doc.is_object()) throw ConfigError("config must be a JSON object");

  ExperimentConfig cfg;
  StrategyConfig& s = cfg.strategy;
  using Setter = std::function<void(const json&, const std::string&)>;
  const std::map<std::string, Setter> setters = {
      {"method_name", [&](auto& j, auto& k) { cfg.method_name = ParseString(j, k); }},
      {"dataset", [&](auto& j, auto& k) { cfg.dataset = ParseEnum(kDatasets, j, k); }},
      {"synth_train_per_class",
       [&](auto& j, auto& k) { cfg.synth_train_per_class = ParseCount(j, k); }},
      {"synth_test_per_class",
       [&](auto& j, auto& k) { cfg.synth_test_per_class = ParseCount(j, k); }},
      {"synth_classes", [&](auto& j, auto& k) { cfg.synth_classes = ParseCount(j, k, 2); }},
      {"synth_dim", [&](auto& j, auto& k) { cfg.synth_dim = ParseCount(j, k); }},
      {"synth_spread", [&](auto& j, auto& k) { cfg.synth_spread = ParseReal(j, k); }},
      {"idx_train_images", [&](auto& j, auto& k) { cfg.idx_train_images = ParseString(j, k); }},
      {"idx_train_labels", [&](auto& j, auto& k) { cfg.idx_train_labels = ParseString(j, k); }},
      {"idx_test_images", [&](auto& j, auto& k) { cfg.idx_test_images = ParseString(j, k); }},
      {"idx_test_labels", [&](auto& j, auto& k) { cfg.idx_test_labels = ParseString(j, k); }},
      {"idx_downsample", [&](auto& j, auto& k) { cfg.idx_downsample = ParseCount(j, k); }},
      {"idx_max_train", [&](auto& j, auto& k) { cfg.idx_max_train = ParseCount(j, k, 0); }},
      {"idx_max_test", [&](auto& j, auto& k) { cfg.idx_max_test = ParseCount(j, k, 0); }},
      {"scenario", [&](auto& j, auto& k) { cfg.scenario = ParseEnum(kScenarios, j, k); }},
      {"partition", [&](auto& j, auto& k) { cfg.partition = ParseEnum(kPartitions, j, k); }},
      {"tasks", [&](auto& j, auto& k) { cfg.tasks = ParseCount(j, k); }},
      {"clients", [&](auto& j, auto& k) { cfg.clients = ParseCount(j, k); }},
      {"buffer_size", [&](auto& j, auto& k) { cfg.buffer_size = ParseCount(j, k); }},
      {"dirichlet_alpha", [&](auto& j, auto& k) { cfg.dirichlet_alpha = ParseReal(j, k); }},
      {"hidden",
       [&](auto& j, auto& k) {
         if (!j.is_array()) throw ConfigError("key '" + k + "': expected an array");
         cfg.hidden.clear();
         for (std::size_t i = 0; i < j.size(); ++i) {
           cfg.hidden.push_back(ParseCount(j[i], k + "[" + std::to_string(i) + "]"));
         }
       }},
      {"activation",
       [&](auto& j, auto& k) { cfg.activation = ParseEnum(kActivations, j, k); }},
      {"strategy", [&](auto& j, auto& k) { s.base = ParseEnum(kStrategies, j, k); }},
      {"fed_a_gem", [&](auto& j, auto& k) { s.fed_a_gem = ParseBool(j, k); }},
      {"refine_mode", [&](auto& j, auto& k) { s.refine.mode = ParseEnum(kModes, j, k); }},
      {"refine_condition",
       [&](auto& j, auto& k) { s.refine.condition = ParseEnum(kConditions, j, k); }},
      {"rate_percent", [&](auto& j, auto& k) { s.refine.rate_percent = ParseReal(j, k); }},
      {"fedprox_mu", [&](auto& j, auto& k) { s.fedprox_mu = ParseReal(j, k); }},
      {"der_lambda", [&](auto& j, auto& k) { s.der_lambda = ParseReal(j, k); }},
      {"lr", [&](auto& j, auto& k) { s.lr = ParseReal(j, k); }},
      {"batch_size", [&](auto& j, auto& k) { s.batch_size = ParseCount(j, k); }},
      {"local_epochs", [&](auto& j, auto& k) { s.local_epochs = ParseCount(j, k); }},
      {"buffer_policy", [&](auto& j, auto& k) { s.buffer_policy = ParseEnum(kPolicies, j, k); }},
      {"insert_first_epoch_only",
       [&](auto& j, auto& k) { s.insert_first_epoch_only = ParseBool(j, k); }},
      {"buffer_grad_samples",
       [&](auto& j, auto& k) { cfg.buffer_grad_samples = ParseCount(j, k, 0); }},
      {"schedule", [&](auto& j, auto& k) { cfg.schedule.kind = ParseEnum(kSchedules, j, k); }},
      {"rounds_per_task",
       [&](auto& j, auto& k) { cfg.schedule.rounds_per_task = ParseCount(j, k); }},
      {"samples_per_comm",
       [&](auto& j, auto& k) { cfg.schedule.samples_per_comm = ParseCount(j, k); }},
      {"comm_period_multiplier",
       [&](auto& j, auto& k) { cfg.schedule.comm_period_multiplier = ParseReal(j, k); }},
      {"client_sampling_rate",
       [&](auto& j, auto& k) { cfg.client_sampling_rate = ParseReal(j, k); }},
      {"weighted_aggregation",
       [&](auto& j, auto& k) { cfg.weighted_aggregation = ParseBool(j, k); }},
      {"forgetting_variant",
       [&](auto& j, auto& k) { cfg.forgetting = ParseEnum(kForgetting, j, k); }},
      {"seeds",
       [&](auto& j, auto& k) {
         if (!j.is_array()) throw ConfigError("key '" + k + "': expected an array");
         cfg.seeds.clear();
         for (std::size_t i = 0; i < j.size(); ++i) {
           cfg.seeds.push_back(ParseCount(j[i], k + "[" + std::to_string(i) + "]", 0));
         }
       }},
      {"output_dir", [&](auto& j, auto& k) { cfg.output_dir = ParseString(j, k); }},
      {"save_model", [&](auto& j, auto& k) { cfg.save_model = ParseBool(j, k); }},
      {"threads", [&](auto& j, auto& k) { cfg.threads = ParseCount(j, k, 0); }},
  };

  bool epochs_set = false;
  bool rounds_set = false;
  for (const auto& [key, value] : doc.items()) {
    const auto it = setters.find(key);
    if (it == setters.end()) throw ConfigError("unknown config key '" + key + "'");
    it->second(value, key);
    epochs_set = epochs_set || key == "local_epochs";
    rounds_set = rounds_set || key == "rounds_per_task";
  }
  const bool split = cfg.scenario == Scenario::kClassIl || cfg.scenario == Scenario::kTaskIl;
  if (!epochs_set) s.local_epochs = split ? 5 : 1;
  if (!rounds_set) cfg.schedule.rounds_per_task = 20;
  cfg.Validate();
  return cfg;
}

ExperimentConfig ParseConfig(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ParseConfigText(ss.str());
}

json ConfigToJson(const ExperimentConfig& c) {
  const StrategyConfig& s = c.strategy;
  json j = {
      {"method_name", c.ResolvedMethodName()},
      {"dataset", NameOf(kDatasets, c.dataset)},
      {"scenario", NameOf(kScenarios, c.scenario)},
      {"partition", NameOf(kPartitions, c.partition)},
      {"tasks", c.tasks},
      {"clients", c.clients},
      {"buffer_size", c.buffer_size},
      {"dirichlet_alpha", c.dirichlet_alpha},
      {"hidden", c.hidden},
      {"activation", NameOf(kActivations, c.activation)},
      {"strategy", NameOf(kStrategies, s.base)},
      {"fed_a_gem", s.fed_a_gem},
      {"refine_mode", NameOf(kModes, s.refine.mode)},
      {"refine_condition", NameOf(kConditions, s.refine.condition)},
      {"rate_percent", s.refine.rate_percent},
      {"fedprox_mu", s.fedprox_mu},
      {"der_lambda", s.der_lambda},
      {"lr", s.lr},
      {"batch_size", s.batch_size},
      {"local_epochs", s.local_epochs},
      {"buffer_policy", NameOf(kPolicies, s.buffer_policy)},
      {"insert_first_epoch_only", s.insert_first_epoch_only},
      {"buffer_grad_samples", c.buffer_grad_samples},
      {"schedule", NameOf(kSchedules, c.schedule.kind)},
      {"rounds_per_task", c.schedule.rounds_per_task},
      {"samples_per_comm", c.schedule.samples_per_comm},
      {"comm_period_multiplier", c.schedule.comm_period_multiplier},
      {"client_sampling_rate", c.client_sampling_rate},
      {"weighted_aggregation", c.weighted_aggregation},
      {"forgetting_variant", NameOf(kForgetting, c.forgetting)},
      {"seeds", c.seeds},
      {"output_dir", c.output_dir},
      {"save_model", c.save_model},
  };
  if (c.dataset == DatasetKind::kSynth) {
    j["synth_train_per_class"] = c.synth_train_per_class;
    j["synth_test_per_class"] = c.synth_test_per_class;
    j["synth_classes"] = c.synth_classes;
    j["synth_dim"] = c.synth_dim;
    j["synth_spread"] = c.synth_spread;
  } else {
    j["idx_train_images"] = c.idx_train_images;
    j["idx_train_labels"] = c.idx_train_labels;
    j["idx_test_images"] = c.idx_test_images;
    j["idx_test_labels"] = c.idx_test_labels;
    j["idx_downsample"] = c.idx_downsample;
    j["idx_max_train"] = c.idx_max_train;
    j["idx_max_test"] = c.idx_max_test;
  }
  return j;
}

void ComputeMetricSeries(SeedResult& r, ForgettingVariant variant) {
  const std::size_t n = r.matrix.num_tasks();
  r.acc.clear();
  r.fgt.clear();
  for (std::size_t t = 1; t <= n; ++t) {
    r.acc.push_back(AvgAccuracy(r.matrix, t));
    r.fgt.push_back(t >= 2 ? std::optional<double>(AvgForgetting(r.matrix, t, variant))
                           : std::nullopt);
  }
  r.bwt = n >= 2 ? std::optional<double>(BackwardTransfer(r.matrix)) : std::nullopt;
  r.fwt = n >= 2 ? std::optional<double>(ForwardTransfer(r.matrix)) : std::nullopt;
}

namespace {

DatasetSplit LoadBase(const ExperimentConfig& cfg, std::uint64_t seed) {
  if (cfg.dataset == DatasetKind::kSynth) {
    return SynthSplit(cfg.synth_train_per_class, cfg.synth_test_per_class,
                      cfg.synth_classes, cfg.synth_dim, cfg.synth_spread,
                      DeriveSeed(seed, {kDataTag}));
  }
  auto prepare = [&](const std::string& img, const std::string& lbl, std::size_t cap) {
    Dataset d = LoadIdx(img, lbl);
    if (cap > 0 && cap < d.size()) {
      std::vector<std::size_t> head(cap);
      for (std::size_t i = 0; i < cap; ++i) head[i] = i;
      d = d.Subset(head);
    }
    return Downsample(d, cfg.idx_downsample);
  };
  return {prepare(cfg.idx_train_images, cfg.idx_train_labels, cfg.idx_max_train),
          prepare(cfg.idx_test_images, cfg.idx_test_labels, cfg.idx_max_test)};
}

}  // namespace

SeedResult RunSeed(const ExperimentConfig& cfg, std::uint64_t seed, ModelSpec* spec_out) {
  const auto started = std::chrono::steady_clock::now();
  cfg.Validate();
  cfg.strategy.Validate();
  cfg.schedule.Validate();

  const DatasetSplit base = LoadBase(cfg, seed);
  const std::uint64_t stream_seed = DeriveSeed(seed, {kStreamTag});
  TaskStream stream;
  switch (cfg.scenario) {
    case Scenario::kDomainRotate:
      stream = MakeDomainTasks(base, cfg.tasks, DomainKind::kRotate, stream_seed);
      break;
    case Scenario::kDomainPermute:
      stream = MakeDomainTasks(base, cfg.tasks, DomainKind::kPermute, stream_seed);
      break;
    case Scenario::kClassIl:
    case Scenario::kTaskIl:
      stream = MakeSplitTasks(base, cfg.tasks);
      break;
  }

  PartitionKind partition = cfg.partition;
  if (partition == PartitionKind::kAuto) {
    const bool domain = cfg.scenario == Scenario::kDomainRotate ||
                        cfg.scenario == Scenario::kDomainPermute;
    partition = domain ? PartitionKind::kDigitPairs : PartitionKind::kDirichlet;
  }
  const std::uint64_t part_seed = DeriveSeed(seed, {kPartitionTag});
  std::vector<ClientShard> shards;
  switch (partition) {
    case PartitionKind::kDigitPairs:
      shards = AssignDigitPairs(stream, cfg.clients, part_seed);
      break;
    case PartitionKind::kDirichlet:
      shards = DirichletShards(stream, cfg.clients, cfg.dirichlet_alpha, part_seed);
      break;
    case PartitionKind::kIid:
    case PartitionKind::kAuto:
      shards = IidShards(stream, cfg.clients, part_seed);
      break;
  }

  ModelSpec spec;
  spec.layer_sizes.push_back(base.train.images.cols);
  spec.layer_sizes.insert(spec.layer_sizes.end(), cfg.hidden.begin(), cfg.hidden.end());
  spec.layer_sizes.push_back(stream.num_classes);
  spec.activation = cfg.activation;
  spec.Validate();
  if (spec_out != nullptr) *spec_out = spec;

  ServerState server;
  server.w = InitParams(spec, DeriveSeed(seed, {kInitTag}));
  std::vector<ClientState> clients(cfg.clients);
  for (std::size_t k = 0; k < cfg.clients; ++k) {
    ClientState& c = clients[k];
    c.client_id = k;
    c.w = server.w;
    c.buffer = ReplayBuffer(cfg.buffer_size);
    c.rngs = ClientRngs::FromSeed(DeriveSeed(seed, {kClientTag, k}));
    c.shard = std::move(shards[k]);
  }

  RoundOptions options;
  options.buffer_grad_samples =
      cfg.buffer_grad_samples > 0 ? cfg.buffer_grad_samples : cfg.buffer_size;
  options.weighted_aggregation = cfg.weighted_aggregation;
  options.client_sampling_rate = cfg.client_sampling_rate;
  options.sampling_seed = DeriveSeed(seed, {kSamplingTag});
  options.max_threads = cfg.threads > 0 ? cfg.threads : DefaultThreadCount();

  SeedResult result;
  result.seed = seed;
  result.matrix = AccuracyMatrix(cfg.tasks);
  result.matrix.set_random_baseline(EvaluateRow(spec, server.w, stream, cfg.eval_mode()));

  SecureAggregator aggregator;
  const std::size_t rounds = cfg.schedule.effective_rounds_per_task();
  std::size_t comm = 0;
  for (std::size_t t = 0; t < cfg.tasks; ++t) {
    server.task_index = t;
    for (std::size_t r = 0; r < rounds; ++r, ++comm) {
      const std::vector<Grant> grants = AdvanceSchedule(cfg.schedule, comm, clients);
      const RoundStats st = RunRound(server, clients, grants, cfg.strategy, spec, stream,
                                     aggregator, options);
      result.totals.participants += st.participants;
      result.totals.gradient_contributors += st.gradient_contributors;
      result.totals.samples += st.samples;
      result.totals.steps += st.steps;
      result.totals.conflicts += st.conflicts;
      result.totals.refinements += st.refinements;
    }
    result.matrix.SetRow(t, EvaluateRow(spec, server.w, stream, cfg.eval_mode()));
  }
  ComputeMetricSeries(result, cfg.forgetting);
  result.ledger = server.ledger;
  result.final_model = server.w;
  result.wall_clock_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return result;
}

RunReport RunExperiment(const ExperimentConfig& cfg, bool write_outputs) {
  RunReport report;
  report.config = cfg;
  for (std::uint64_t seed : cfg.seeds) {
    report.runs.push_back(RunSeed(cfg, seed, &report.spec));
  }
  if (write_outputs) {
    const std::filesystem::path dir = cfg.output_dir;
    std::filesystem::create_directories(dir);
    WriteFile(dir / "report.json", ReportToJson(report).dump(2) + "\n");
    WriteFile(dir / "accuracy.csv", AccuracyCsv(report));
    WriteFile(dir / "metrics.csv", MetricsCsv(report));
    if (cfg.save_model) {
      for (const SeedResult& r : report.runs) {
        json m = {{"layer_sizes", report.spec.layer_sizes},
                  {"activation", NameOf(kActivations, report.spec.activation)},
                  {"values", r.final_model.values}};
        WriteFile(dir / ("model_seed" + std::to_string(r.seed) + ".json"), m.dump() + "\n");
      }
    }
  }
  return report;
}

json ReportToJson(const RunReport& report) {
  json runs = json::array();
  for (const SeedResult& r : report.runs) {
    json matrix = json::array();
    for (std::size_t t = 0; t < r.matrix.num_tasks(); ++t) matrix.push_back(r.matrix.row(t));
    json fgt = json::array();
    for (const auto& f : r.fgt) fgt.push_back(f ? json(*f) : json(nullptr));
    json up = json::array();
    json down = json::array();
    for (const RoundComm& rc : r.ledger.rounds()) {
      up.push_back(rc.uplink_floats);
      down.push_back(rc.downlink_floats);
    }
    runs.push_back({
        {"seed", r.seed},
        {"accuracy_matrix", matrix},
        {"random_baseline", r.matrix.random_baseline()},
        {"acc", r.acc},
        {"fgt", fgt},
        {"bwt", r.bwt ? json(*r.bwt) : json(nullptr)},
        {"fwt", r.fwt ? json(*r.fwt) : json(nullptr)},
        {"comm",
         {{"rounds", r.ledger.rounds().size()},
          {"uplink_floats", r.ledger.uplink_total()},
          {"downlink_floats", r.ledger.downlink_total()},
          {"uplink_per_round", up},
          {"downlink_per_round", down}}},
        {"training",
         {{"samples", r.totals.samples},
          {"steps", r.totals.steps},
          {"conflicts", r.totals.conflicts},
          {"refinements", r.totals.refinements}}},
        {"wall_clock_seconds", r.wall_clock_seconds},
    });
  }
  return {{"schema", "cfl-forge/run-report/1"},
          {"method", report.config.ResolvedMethodName()},
          {"scenario", ToString(report.config.scenario)},
          {"model", {{"layer_sizes", report.spec.layer_sizes},
                     {"param_count", report.spec.param_count()}}},
          {"config", ConfigToJson(report.config)},
          {"runs", runs}};
}

std::string AccuracyCsv(const RunReport& report) {
  std::string out = "seed,t,i,accuracy\n";
  for (const SeedResult& r : report.runs) {
    for (std::size_t t = 0; t < r.matrix.num_tasks(); ++t) {
      for (std::size_t i = 0; i < r.matrix.num_tasks(); ++i) {
        out += std::to_string(r.seed) + "," + std::to_string(t + 1) + "," +
               std::to_string(i + 1) + "," + FormatDouble(r.matrix.at(t, i)) + "\n";
      }
    }
  }
  return out;
}

std::string MetricsCsv(const RunReport& report) {
  std::string out = "seed,t,acc,fgt\n";
  for (const SeedResult& r : report.runs) {
    for (std::size_t t = 0; t < r.acc.size(); ++t) {
      out += std::to_string(r.seed) + "," + std::to_string(t + 1) + "," +
             FormatDouble(r.acc[t]) + "," + (r.fgt[t] ? FormatDouble(*r.fgt[t]) : "") + "\n";
    }
  }
  return out;
}

}  // namespace cfl
