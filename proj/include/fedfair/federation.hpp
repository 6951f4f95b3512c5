#pragma once

#include <algorithm>
#include <atomic>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "fedfair/common.hpp"
#include "fedfair/data.hpp"
#include "fedfair/metrics.hpp"
#include "fedfair/model.hpp"

namespace fedfair {

// ============================================================================
// Configuration
// ============================================================================

enum class Algorithm { FedAvg, FedDrift, FairFedDrift, Oracle };

inline std::string algorithm_name(Algorithm a) {
  switch (a) {
    case Algorithm::FedAvg: return "fedavg";
    case Algorithm::FedDrift: return "feddrift";
    case Algorithm::FairFedDrift: return "fairfeddrift";
    case Algorithm::Oracle: return "oracle";
  }
  return "?";
}

inline Algorithm parse_algorithm(const std::string &name) {
  if (name == "fedavg") return Algorithm::FedAvg;
  if (name == "feddrift") return Algorithm::FedDrift;
  if (name == "fairfeddrift") return Algorithm::FairFedDrift;
  if (name == "oracle") return Algorithm::Oracle;
  throw ConfigError("unknown algorithm '" + name + "'");
}

// Window size: nullopt keeps the full history.
using Window = std::optional<int>;

struct FederationConfig {
  int clients = 10;
  int timesteps = 10;
  int rounds = 10;
  TrainConfig train;  // seed field is ignored; per-call seeds are derived
  Algorithm algorithm = Algorithm::FairFedDrift;
  double delta = 1.0;  // kInf disables drift detection entirely
  Window window;       // nullopt = full history
  MlpArchitecture arch;
  std::uint64_t master_seed = 1;
  bool overlapping_classes = true;  // metric mode for oeq/opp
  int workers = 1;  // threads for local training; output is identical for any count

  void validate() const {
    if (clients < 1 || timesteps < 1 || rounds < 1) {
      throw ConfigError("K, T, R must all be >= 1");
    }
    if (workers < 1) throw ConfigError("workers must be >= 1");
    if (train.epochs < 1 || train.batch_size < 1) {
      throw ConfigError("epochs and batch size must be >= 1");
    }
    if (train.learning_rate <= 0.0) {
      throw ConfigError("learning rate must be > 0");
    }
    if ((algorithm == Algorithm::FedDrift ||
         algorithm == Algorithm::FairFedDrift) &&
        !(delta > 0.0)) {
      throw ConfigError("delta must be > 0 for drift algorithms");
    }
    if (window && *window < 1) throw ConfigError("window must be >= 1");
  }
};

// Cumulative operation counts, mirroring the per-round cost model:
// the server ships every live model to every client, clients return one
// copy per model they trained.
struct CostCounters {
  long long models_sent_to_clients = 0;
  long long models_sent_to_server = 0;
  long long group_loss_evaluations = 0;  // assignment phase only
  long long merge_loss_evaluations = 0;  // merge-matrix construction
  long long training_passes = 0;         // local_train invocations
};

// ============================================================================
// Model pool
// ============================================================================

struct GlobalModel {
  int id = 0;
  ModelParams params;
  bool trained = false;  // false until its first training round
};

// The set GM plus per-client retained assignment history and the previous
// timestep's reference losses. Model ids are never reused; merges mint a
// fresh id.
class ModelPool {
 public:
  ModelPool() = default;
  explicit ModelPool(int clients)
      : history_(clients), ref_group_loss_(clients), ref_global_loss_(clients) {}

  const std::vector<GlobalModel> &models() const { return models_; }
  std::vector<GlobalModel> &models() { return models_; }

  GlobalModel &model(int id) {
    for (auto &m : models_)
      if (m.id == id) return m;
    throw ConfigError("model id " + std::to_string(id) + " not in pool");
  }
  const GlobalModel &model(int id) const {
    return const_cast<ModelPool *>(this)->model(id);
  }
  bool has_model(int id) const {
    for (const auto &m : models_)
      if (m.id == id) return true;
    return false;
  }

  int spawn(ModelParams params, bool trained = false) {
    int id = next_id_++;
    models_.push_back({id, std::move(params), trained});
    return id;
  }

  // Oracle path: one permanent model per concept, id = concept index.
  int spawn_with_id(int id, ModelParams params) {
    models_.push_back({id, std::move(params), false});
    std::sort(models_.begin(), models_.end(),
              [](const GlobalModel &a, const GlobalModel &b) {
                return a.id < b.id;
              });
    next_id_ = std::max(next_id_, id + 1);
    return id;
  }

  void remove(int id) {
    std::erase_if(models_, [id](const GlobalModel &m) { return m.id == id; });
  }

  // --- assignment history -------------------------------------------------

  void assign(int client, int t, int model_id) {
    history_[client].emplace_back(t, model_id);
  }

  // Retained (timestep, model id) pairs for one client.
  const std::vector<std::pair<int, int>> &history(int client) const {
    return history_[client];
  }

  std::optional<int> assignment_at(int client, int t) const {
    for (const auto &[tt, id] : history_[client])
      if (tt == t) return id;
    return std::nullopt;
  }

  // Rewrite every retained assignment of old_a/old_b to merged.
  void remap(int old_a, int old_b, int merged) {
    for (auto &h : history_) {
      for (auto &[t, id] : h) {
        if (id == old_a || id == old_b) id = merged;
      }
    }
  }

  // Drop history entries older than the window start.
  void trim(int min_timestep) {
    for (auto &h : history_) {
      std::erase_if(h, [min_timestep](const std::pair<int, int> &e) {
        return e.first < min_timestep;
      });
    }
  }

  // --- reference losses ---------------------------------------------------

  std::map<int, double> &ref_group_loss(int client) {
    return ref_group_loss_[client];
  }
  const std::map<int, double> &ref_group_loss(int client) const {
    return ref_group_loss_[client];
  }
  std::optional<double> &ref_global_loss(int client) {
    return ref_global_loss_[client];
  }
  std::optional<double> ref_global_loss(int client) const {
    return ref_global_loss_[client];
  }

  int clients() const { return static_cast<int>(history_.size()); }
  int next_id() const { return next_id_; }

 private:
  std::vector<GlobalModel> models_;
  int next_id_ = 0;
  std::vector<std::vector<std::pair<int, int>>> history_;
  std::vector<std::map<int, double>> ref_group_loss_;
  std::vector<std::optional<double>> ref_global_loss_;
};

// ============================================================================
// Assignment decisions
// ============================================================================

// Losses of each candidate model on one incoming batch.
struct LossTable {
  std::vector<int> model_ids;
  std::vector<std::map<int, double>> group_losses;  // per model, per group
  std::vector<double> global_losses;                // per model
};

struct AssignmentDecision {
  bool create_new = false;
  int model_id = -1;  // valid when !create_new
};

// A model is admissible iff every group present in the batch stays within
// ref + delta; groups with no reference impose no constraint. Among the
// admissible models the lowest summed group loss wins, ties to lowest id.
inline AssignmentDecision decide_fair(const LossTable &table,
                                      const std::map<int, double> &refs,
                                      double delta) {
  AssignmentDecision best;
  double best_sum = kInf;
  for (std::size_t m = 0; m < table.model_ids.size(); ++m) {
    bool admissible = true;
    double sum = 0.0;
    for (const auto &[group, value] : table.group_losses[m]) {
      auto ref = refs.find(group);
      if (ref != refs.end() && value > ref->second + delta) {
        admissible = false;
        break;
      }
      sum += value;
    }
    if (!admissible) continue;
    if (sum < best_sum) {
      best_sum = sum;
      best = {false, table.model_ids[m]};
    }
  }
  if (best.model_id < 0) return {true, -1};
  return best;
}

// FedDrift variant: overall loss only.
inline AssignmentDecision decide_global(const LossTable &table,
                                        std::optional<double> ref_global,
                                        double delta) {
  AssignmentDecision best;
  double best_loss = kInf;
  for (std::size_t m = 0; m < table.model_ids.size(); ++m) {
    double value = table.global_losses[m];
    if (ref_global && value > *ref_global + delta) continue;
    if (value < best_loss) {
      best_loss = value;
      best = {false, table.model_ids[m]};
    }
  }
  if (best.model_id < 0) return {true, -1};
  return best;
}

namespace detail {

inline std::vector<int> groups_present(const TimestepBatch &batch) {
  std::set<int> s;
  for (const auto &e : batch.examples) s.insert(e.group);
  return {s.begin(), s.end()};
}

// Evaluate every trained model on the incoming batch. Per-group losses are
// always computed; they also provide the global loss via the group-count
// weighted mean, so the fair and global paths see consistent numbers.
inline LossTable evaluate_candidates(const ModelPool &pool,
                                     const TimestepBatch &batch,
                                     bool per_group, CostCounters &counters) {
  LossTable table;
  auto groups = groups_present(batch);
  for (const auto &m : pool.models()) {
    if (!m.trained) continue;
    table.model_ids.push_back(m.id);
    std::map<int, double> gl;
    if (per_group) {
      for (int g : groups) {
        auto v = group_loss(m.params, batch.examples, g);
        if (v) gl[g] = *v;
        ++counters.group_loss_evaluations;
      }
      table.global_losses.push_back(loss(m.params, batch.examples));
    } else {
      table.global_losses.push_back(loss(m.params, batch.examples));
      ++counters.group_loss_evaluations;
    }
    table.group_losses.push_back(std::move(gl));
  }
  return table;
}

}  // namespace detail

// Fairness-aware assignment step for one client (t >= 1). Returns the
// decision together with the per-model per-group loss table it was based on.
inline std::pair<AssignmentDecision, LossTable> assign_fair(
    const ModelPool &pool, int client, const TimestepBatch &batch,
    double delta, CostCounters &counters) {
  if (batch.examples.empty()) throw EmptyInputError("assign_fair: empty batch");
  LossTable table =
      detail::evaluate_candidates(pool, batch, /*per_group=*/true, counters);
  return {decide_fair(table, pool.ref_group_loss(client), delta), table};
}

// Global-loss assignment step (FedDrift).
inline std::pair<AssignmentDecision, LossTable> assign_feddrift(
    const ModelPool &pool, int client, const TimestepBatch &batch, double delta,
    CostCounters &counters) {
  if (batch.examples.empty()) {
    throw EmptyInputError("assign_feddrift: empty batch");
  }
  LossTable table =
      detail::evaluate_candidates(pool, batch, /*per_group=*/false, counters);
  return {decide_global(table, pool.ref_global_loss(client), delta), table};
}

// Ground-truth assignment: model id = index of the true concept.
inline int assign_oracle(const DriftSchedule &schedule, int client, int t) {
  return static_cast<int>(schedule.grid[client][t]);
}

// Create a fresh model for a client whose drift check failed. The client's
// reference losses are reset to the per-group minimum over the pre-existing
// models in the loss table.
inline int spawn_model(ModelPool &pool, int client, int t,
                       const LossTable &table, const MlpArchitecture &arch,
                       std::uint64_t init_seed) {
  int id = pool.spawn(init_params(arch, init_seed), /*trained=*/false);
  pool.assign(client, t, id);
  auto &refs = pool.ref_group_loss(client);
  std::map<int, double> mins;
  for (const auto &gl : table.group_losses) {
    for (const auto &[group, value] : gl) {
      auto it = mins.find(group);
      if (it == mins.end() || value < it->second) mins[group] = value;
    }
  }
  for (const auto &[group, value] : mins) refs[group] = value;
  if (!table.global_losses.empty()) {
    pool.ref_global_loss(client) =
        *std::min_element(table.global_losses.begin(),
                          table.global_losses.end());
  }
  return id;
}

// ============================================================================
// Merging
// ============================================================================

struct MergeMatrix {
  std::vector<int> ids;                // live model ids, ascending
  std::vector<std::vector<double>> z;  // kInf marks unmergeable pairs
};

struct MergeEvent {
  int left_id = 0;
  int right_id = 0;
  int merged_id = 0;
  double distance = 0.0;
};

namespace detail {

// Union of one client's retained batches assigned to one model, strictly
// before timestep t and inside the window.
inline std::vector<Example> historical_union(const ModelPool &pool,
                                             const StreamGrid &streams,
                                             int client, int model_id, int t,
                                             Window window) {
  std::vector<Example> out;
  int min_t = window ? std::max(0, t - *window) : 0;
  for (const auto &[tt, id] : pool.history(client)) {
    if (id != model_id || tt >= t || tt < min_t) continue;
    const auto &ex = streams[client][tt].examples;
    out.insert(out.end(), ex.begin(), ex.end());
  }
  return out;
}

struct HistoricalLoss {
  std::map<int, double> per_group;
  double global = 0.0;
};

}  // namespace detail

// Pairwise model distances from cross-evaluated losses on retained data.
// Z_ij = max(L_ij - L_ii, L_ji - L_jj, 0), where L_ij - L_ii maximizes over
// clients historically assigned to j and i; any per-group difference above
// delta (global difference when !fairness_aware) forces infinity. Models
// with no retained pre-t history, including freshly spawned ones, have all
// pairs infinite.
inline MergeMatrix merge_matrix(const ModelPool &pool,
                                const StreamGrid &streams, int t,
                                Window window, double delta,
                                bool fairness_aware, CostCounters &counters) {
  MergeMatrix mm;
  for (const auto &m : pool.models()) mm.ids.push_back(m.id);
  std::sort(mm.ids.begin(), mm.ids.end());
  const int n = static_cast<int>(mm.ids.size());
  mm.z.assign(n, std::vector<double>(n, kInf));

  // clients_of[n] = clients with pre-t history on model n, with their data.
  std::map<int, std::vector<std::pair<int, std::vector<Example>>>> clients_of;
  for (const auto &m : pool.models()) {
    if (!m.trained) continue;
    for (int k = 0; k < pool.clients(); ++k) {
      auto data = detail::historical_union(pool, streams, k, m.id, t, window);
      if (!data.empty()) clients_of[m.id].emplace_back(k, std::move(data));
    }
  }

  // cross[{a, b}] = losses of model a on each history union of model b;
  // computed once per (model, data owner) pair.
  std::map<std::pair<int, int>, std::vector<detail::HistoricalLoss>> cross;
  auto eval_on = [&](const GlobalModel &model,
                     const std::vector<Example> &data) {
    detail::HistoricalLoss hl;
    if (fairness_aware) {
      std::set<int> groups;
      for (const auto &e : data) groups.insert(e.group);
      for (int g : groups) {
        auto v = group_loss(model.params, data, g);
        if (v) hl.per_group[g] = *v;
        ++counters.merge_loss_evaluations;
      }
    } else {
      hl.global = loss(model.params, data);
      ++counters.merge_loss_evaluations;
    }
    return hl;
  };
  auto losses_of_on = [&](int eval_id, int hist_id)
      -> const std::vector<detail::HistoricalLoss> & {
    auto key = std::make_pair(eval_id, hist_id);
    auto it = cross.find(key);
    if (it != cross.end()) return it->second;
    std::vector<detail::HistoricalLoss> out;
    for (const auto &[k, data] : clients_of.at(hist_id)) {
      out.push_back(eval_on(pool.model(eval_id), data));
    }
    return cross.emplace(key, std::move(out)).first->second;
  };

  // L_ij - L_ii for ordered pair (i, j): max over k in hist(j), l in hist(i).
  auto directed_distance = [&](int id_i, int id_j) -> double {
    if (!clients_of.count(id_j) || !clients_of.count(id_i)) return kInf;
    const auto &on_j = losses_of_on(id_i, id_j);
    const auto &on_i = losses_of_on(id_i, id_i);
    double worst = -kInf;
    for (const auto &lj : on_j) {
      for (const auto &li : on_i) {
        double term;
        if (fairness_aware) {
          term = 0.0;
          for (const auto &[group, vj] : lj.per_group) {
            auto it = li.per_group.find(group);
            if (it == li.per_group.end()) continue;
            double d = vj - it->second;
            if (d > delta) {
              term = kInf;
              break;
            }
            term += d;
          }
        } else {
          double d = lj.global - li.global;
          term = (d > delta) ? kInf : d;
        }
        worst = std::max(worst, term);
      }
    }
    return worst;
  };

  for (int a = 0; a < n; ++a) {
    for (int b = a + 1; b < n; ++b) {
      double d_ij = directed_distance(mm.ids[a], mm.ids[b]);
      double d_ji = directed_distance(mm.ids[b], mm.ids[a]);
      double z = std::max({d_ij, d_ji, 0.0});
      mm.z[a][b] = z;
      mm.z[b][a] = z;
    }
  }
  return mm;
}

// Greedy complete-linkage merge loop: repeatedly merge the closest finite
// pair, weighting by each model's retained data volume, until every
// remaining pair is infinite. Returns the merges performed.
inline std::vector<MergeEvent> merge_step(ModelPool &pool, MergeMatrix &mm,
                                          const StreamGrid &streams, int t,
                                          Window window) {
  std::vector<MergeEvent> events;
  auto retained_size = [&](int model_id) {
    long long total = 0;
    int min_t = window ? std::max(0, t - *window) : 0;
    for (int k = 0; k < pool.clients(); ++k) {
      for (const auto &[tt, id] : pool.history(k)) {
        if (id == model_id && tt < t && tt >= min_t) {
          total += static_cast<long long>(streams[k][tt].examples.size());
        }
      }
    }
    return total;
  };

  for (;;) {
    int best_a = -1, best_b = -1;
    double best = kInf;
    const int n = static_cast<int>(mm.ids.size());
    for (int a = 0; a < n; ++a) {
      for (int b = a + 1; b < n; ++b) {
        if (mm.z[a][b] < best) {
          best = mm.z[a][b];
          best_a = a;
          best_b = b;
        }
      }
    }
    if (best_a < 0 || best == kInf) break;

    int id_i = mm.ids[best_a];
    int id_j = mm.ids[best_b];
    double w_i = static_cast<double>(retained_size(id_i));
    double w_j = static_cast<double>(retained_size(id_j));
    std::vector<ModelParams> parts = {pool.model(id_i).params,
                                      pool.model(id_j).params};
    std::vector<double> weights = {w_i, w_j};
    ModelParams merged = weighted_average(parts, weights);
    int merged_id = pool.spawn(std::move(merged), /*trained=*/true);
    pool.remap(id_i, id_j, merged_id);
    pool.remove(id_i);
    pool.remove(id_j);
    events.push_back({id_i, id_j, merged_id, best});

    // Rebuild the matrix over surviving ids; the merged cluster's distance
    // to any other model is the max of its constituents' distances.
    MergeMatrix next;
    for (int a = 0; a < n; ++a) {
      if (a == best_a || a == best_b) continue;
      next.ids.push_back(mm.ids[a]);
    }
    next.ids.push_back(merged_id);
    const int m = static_cast<int>(next.ids.size());
    next.z.assign(m, std::vector<double>(m, kInf));
    auto old_index = [&](int id) {
      for (int a = 0; a < n; ++a)
        if (mm.ids[a] == id) return a;
      return -1;
    };
    for (int a = 0; a < m; ++a) {
      for (int b = a + 1; b < m; ++b) {
        double z;
        if (next.ids[b] == merged_id) {
          int oa = old_index(next.ids[a]);
          z = std::max({mm.z[oa][best_a], mm.z[oa][best_b], 0.0});
        } else {
          z = mm.z[old_index(next.ids[a])][old_index(next.ids[b])];
        }
        next.z[a][b] = z;
        next.z[b][a] = z;
      }
    }
    mm = std::move(next);
  }
  return events;
}

// ============================================================================
// Training
// ============================================================================

namespace detail {

// Union of a client's retained batches assigned to one model, up to and
// including t (training data for the current timestep).
inline std::vector<Example> training_union(const ModelPool &pool,
                                           const StreamGrid &streams,
                                           int client, int model_id, int t,
                                           Window window) {
  std::vector<Example> out;
  int min_t = window ? std::max(0, t - *window) : 0;
  for (const auto &[tt, id] : pool.history(client)) {
    if (id != model_id || tt > t || tt < min_t) continue;
    const auto &ex = streams[client][tt].examples;
    out.insert(out.end(), ex.begin(), ex.end());
  }
  return out;
}

}  // namespace detail

// One communication round: every client trains a local copy of each model
// it has retained history with, then each model is replaced by the
// data-size weighted average of its participants (fixed client order).
// Models without participants keep their parameters bit-for-bit.
//
// Local training for distinct (client, model) pairs runs on cfg.workers
// threads; seeds are derived per pair and aggregation consumes results in
// fixed order, so the output does not depend on the thread count.
inline void train_round(ModelPool &pool, const StreamGrid &streams, int t,
                        int round, const FederationConfig &cfg,
                        CostCounters &counters) {
  counters.models_sent_to_clients +=
      static_cast<long long>(pool.models().size()) * cfg.clients;

  struct Task {
    GlobalModel *model;
    int client;
    std::vector<Example> data;
    ModelParams result;
  };
  std::vector<Task> tasks;
  for (auto &m : pool.models()) {
    for (int k = 0; k < cfg.clients; ++k) {
      std::vector<Example> data =
          detail::training_union(pool, streams, k, m.id, t, cfg.window);
      if (data.empty()) continue;
      tasks.push_back({&m, k, std::move(data), {}});
    }
  }

  auto run_task = [&](Task &task) {
    TrainConfig tc = cfg.train;
    tc.seed = derive_seed(cfg.master_seed, SeedTag::LocalTrain,
                          {static_cast<std::uint64_t>(task.client),
                           static_cast<std::uint64_t>(task.model->id),
                           static_cast<std::uint64_t>(t),
                           static_cast<std::uint64_t>(round)});
    task.result = local_train(task.model->params, task.data, tc);
  };
  if (cfg.workers <= 1 || tasks.size() <= 1) {
    for (auto &task : tasks) run_task(task);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> threads;
    int n = std::min<int>(cfg.workers, static_cast<int>(tasks.size()));
    for (int w = 0; w < n; ++w) {
      threads.emplace_back([&]() {
        for (;;) {
          std::size_t i = next.fetch_add(1);
          if (i >= tasks.size()) return;
          run_task(tasks[i]);
        }
      });
    }
    for (auto &th : threads) th.join();
  }

  // serial aggregation in (model, client) task order
  for (auto &m : pool.models()) {
    std::vector<ModelParams> locals;
    std::vector<double> weights;
    for (auto &task : tasks) {
      if (task.model != &m) continue;
      locals.push_back(std::move(task.result));
      weights.push_back(static_cast<double>(task.data.size()));
      ++counters.training_passes;
      ++counters.models_sent_to_server;
    }
    if (!locals.empty()) {
      m.params = weighted_average(locals, weights);
      m.trained = true;
    }
  }
}

// ============================================================================
// The outer loop
// ============================================================================

struct RunResult {
  std::vector<MetricsRecord> records;
  CostCounters counters;
  ModelPool pool;
  // Full K x T assignment grid for reporting; merges are applied
  // retroactively so cells of unified models share one id.
  std::vector<std::vector<int>> assignment_grid;
  std::vector<MergeEvent> merges;
  int final_model_count = 0;
};

namespace detail {

inline MetricsRecord evaluate_client(const ModelParams &params, int model_id,
                                     const TimestepBatch &batch, int n_models,
                                     bool overlapping) {
  MetricsRecord rec;
  rec.client = batch.client;
  rec.timestep = batch.timestep;
  rec.model_id = model_id;
  rec.true_concept = batch.true_concept;
  rec.n_models = n_models;
  std::vector<EvalRecord> evals;
  evals.reserve(batch.examples.size());
  for (const auto &e : batch.examples) {
    evals.push_back({e.label, predict_class(params, e.features), e.group});
  }
  rec.accuracy = accuracy(evals);
  rec.aeq = aeq(evals);
  rec.oeq = oeq(evals, overlapping);
  rec.opp = opp(evals, overlapping);
  rec.loss = loss(params, batch.examples);
  for (int g : groups_present(batch)) {
    auto v = group_loss(params, batch.examples, g);
    if (v) rec.group_losses[g] = *v;
  }
  rec.disparity = disparity(rec.group_losses);
  return rec;
}

}  // namespace detail

// Full prequential run: at each timestep every client's incoming batch
// first evaluates its currently assigned model, then drives assignment,
// merging, R training rounds, reference-loss updates, and window trimming.
// Deterministic in cfg.master_seed.
inline RunResult run_federation(const FederationConfig &cfg,
                                const StreamGrid &streams,
                                const DriftSchedule &schedule) {
  cfg.validate();
  const int K = cfg.clients;
  const int T = cfg.timesteps;
  if (schedule.clients() != K || schedule.timesteps() != T ||
      static_cast<int>(streams.size()) != K ||
      static_cast<int>(streams[0].size()) != T) {
    throw ConfigError("run_federation: stream/schedule dims do not match");
  }
  const bool drift_algo = cfg.algorithm == Algorithm::FedDrift ||
                          cfg.algorithm == Algorithm::FairFedDrift;

  RunResult result{.records = {},
                   .counters = {},
                   .pool = ModelPool(K),
                   .assignment_grid = {},
                   .merges = {},
                   .final_model_count = 0};
  ModelPool &pool = result.pool;
  result.assignment_grid.assign(K, std::vector<int>(T, 0));

  pool.spawn(init_params(cfg.arch,
                         derive_seed(cfg.master_seed, SeedTag::ModelInit, {0})),
             /*trained=*/false);

  std::vector<int> current(K, 0);  // w_k^{t-1}; model 0 before t=0

  for (int t = 0; t < T; ++t) {
    // (1) test-then-train: evaluate before any adaptation.
    for (int k = 0; k < K; ++k) {
      result.records.push_back(detail::evaluate_client(
          pool.model(current[k]).params, current[k], streams[k][t],
          static_cast<int>(pool.models().size()), cfg.overlapping_classes));
    }

    // (2) assignment.
    for (int k = 0; k < K; ++k) {
      int chosen;
      switch (cfg.algorithm) {
        case Algorithm::FedAvg:
          chosen = 0;
          pool.assign(k, t, chosen);
          break;
        case Algorithm::Oracle: {
          chosen = assign_oracle(schedule, k, t);
          if (!pool.has_model(chosen)) {
            pool.spawn_with_id(
                chosen,
                init_params(cfg.arch,
                            derive_seed(cfg.master_seed, SeedTag::ModelInit,
                                        {static_cast<std::uint64_t>(chosen)})));
          }
          pool.assign(k, t, chosen);
          break;
        }
        case Algorithm::FedDrift:
        case Algorithm::FairFedDrift: {
          if (t == 0) {  // bootstrap: no reference losses exist yet
            chosen = 0;
            pool.assign(k, t, chosen);
            break;
          }
          auto [decision, table] =
              cfg.algorithm == Algorithm::FairFedDrift
                  ? assign_fair(pool, k, streams[k][t], cfg.delta,
                                result.counters)
                  : assign_feddrift(pool, k, streams[k][t], cfg.delta,
                                    result.counters);
          if (decision.create_new) {
            chosen = spawn_model(
                pool, k, t, table, cfg.arch,
                derive_seed(cfg.master_seed, SeedTag::ModelInit,
                            {static_cast<std::uint64_t>(pool.next_id())}));
          } else {
            chosen = decision.model_id;
            pool.assign(k, t, chosen);
          }
          break;
        }
      }
      result.assignment_grid[k][t] = chosen;
    }

    // (3) merge step for the drift algorithms.
    if (drift_algo && pool.models().size() >= 2) {
      MergeMatrix mm = merge_matrix(
          pool, streams, t, cfg.window, cfg.delta,
          cfg.algorithm == Algorithm::FairFedDrift, result.counters);
      auto events = merge_step(pool, mm, streams, t, cfg.window);
      for (const auto &ev : events) {
        for (auto &row : result.assignment_grid) {
          for (auto &id : row) {
            if (id == ev.left_id || id == ev.right_id) id = ev.merged_id;
          }
        }
        result.merges.push_back(ev);
      }
    }

    // (4) R communication rounds.
    for (int r = 0; r < cfg.rounds; ++r) {
      train_round(pool, streams, t, r, cfg, result.counters);
    }

    // (5) reference losses from D_k^t under the final, post-training
    // assignment; groups absent from the batch carry their old reference.
    for (int k = 0; k < K; ++k) {
      auto assigned = pool.assignment_at(k, t);
      current[k] = assigned ? *assigned : current[k];
      if (drift_algo) {
        const ModelParams &params = pool.model(current[k]).params;
        for (int g : detail::groups_present(streams[k][t])) {
          auto v = group_loss(params, streams[k][t].examples, g);
          if (v) pool.ref_group_loss(k)[g] = *v;
        }
        pool.ref_global_loss(k) = loss(params, streams[k][t].examples);
      }
    }

    // (6) window trimming.
    if (cfg.window) pool.trim(std::max(0, t - *cfg.window));
  }

  result.final_model_count = static_cast<int>(pool.models().size());
  return result;
}

// Snapshot of the cumulative counters.
inline CostCounters read_counters(const CostCounters &counters) {
  return counters;
}

}  // namespace fedfair
