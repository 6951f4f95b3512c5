#pragma once

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "fedfair/federation.hpp"

namespace fedfair {

// ============================================================================
// Run configuration
// ============================================================================

struct RunConfig {
  std::string dataset = "synthetic";  // synthetic | idx
  std::string scenario = "none";      // none | 4.1 .. 4.5
  std::string algorithm = "fairfeddrift";
  double alpha = 0.1;
  std::vector<double> deltas = {1.0};
  std::vector<Window> windows = {std::nullopt};
  int clients = 10;
  int timesteps = 10;
  int rounds = 10;
  int epochs = 5;
  int batch_size = 32;
  double eta = 0.1;
  int samples = 200;  // per client per timestep
  int classes = 5;    // synthetic mode
  int hidden = 16;
  int seeds = 1;  // master seeds 1..seeds
  int workers = 1;
  std::string out_dir = "out";
  std::string idx_images;
  std::string idx_labels;

  void validate() const {
    if (dataset != "synthetic" && dataset != "idx") {
      throw ConfigError("dataset must be 'synthetic' or 'idx', got '" +
                        dataset + "'");
    }
    if (alpha <= 0.0 || alpha > 1.0) {
      throw ConfigError("alpha must be in (0, 1]");
    }
    if (deltas.empty()) throw ConfigError("delta sweep list is empty");
    for (double d : deltas) {
      if (!(d > 0.0)) throw ConfigError("delta values must be > 0");
    }
    if (windows.empty()) throw ConfigError("window sweep list is empty");
    for (const auto &w : windows) {
      if (w && *w < 1) throw ConfigError("window must be 'full' or >= 1");
    }
    if (clients < 1 || timesteps < 1 || rounds < 1 || epochs < 1 ||
        batch_size < 1 || samples < 1 || seeds < 1 || hidden < 1 ||
        classes < 2 || workers < 1) {
      throw ConfigError("counts must be positive (classes >= 2)");
    }
    if (eta <= 0.0) throw ConfigError("eta must be > 0");
    (void)parse_algorithm(algorithm);
    if (dataset == "idx" && (idx_images.empty() || idx_labels.empty())) {
      throw ConfigError("idx dataset requires idx-images and idx-labels");
    }
  }
};

inline double parse_delta_value(const std::string &text) {
  if (text == "inf" || text == "infinity") return kInf;
  double v = 0.0;
  auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || p != text.data() + text.size()) {
    throw ConfigError("bad delta value '" + text + "'");
  }
  return v;
}

inline Window parse_window_value(const std::string &text) {
  if (text == "full") return std::nullopt;
  int v = 0;
  auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || p != text.data() + text.size()) {
    throw ConfigError("bad window value '" + text + "' (want 'full' or N)");
  }
  return v;
}

namespace detail {

inline std::vector<std::string> split(const std::string &text, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : text) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

inline std::string trim(const std::string &s) {
  std::size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

inline int parse_int(const std::string &key, const std::string &text) {
  int v = 0;
  auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || p != text.data() + text.size()) {
    throw ConfigError("bad integer for '" + key + "': '" + text + "'");
  }
  return v;
}

inline double parse_real(const std::string &key, const std::string &text) {
  double v = 0.0;
  auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || p != text.data() + text.size()) {
    throw ConfigError("bad real for '" + key + "': '" + text + "'");
  }
  return v;
}

}  // namespace detail

// Apply one key=value setting; shared by the config-file parser and the CLI.
inline void apply_config_key(RunConfig &cfg, const std::string &key,
                             const std::string &value) {
  if (key == "dataset") cfg.dataset = value;
  else if (key == "scenario") cfg.scenario = value;
  else if (key == "algorithm") cfg.algorithm = value;
  else if (key == "alpha") cfg.alpha = detail::parse_real(key, value);
  else if (key == "delta") {
    cfg.deltas.clear();
    for (const auto &v : detail::split(value, ',')) {
      cfg.deltas.push_back(parse_delta_value(detail::trim(v)));
    }
  } else if (key == "window") {
    cfg.windows.clear();
    for (const auto &v : detail::split(value, ',')) {
      cfg.windows.push_back(parse_window_value(detail::trim(v)));
    }
  } else if (key == "clients") cfg.clients = detail::parse_int(key, value);
  else if (key == "timesteps") cfg.timesteps = detail::parse_int(key, value);
  else if (key == "rounds") cfg.rounds = detail::parse_int(key, value);
  else if (key == "epochs") cfg.epochs = detail::parse_int(key, value);
  else if (key == "batch") cfg.batch_size = detail::parse_int(key, value);
  else if (key == "eta") cfg.eta = detail::parse_real(key, value);
  else if (key == "samples") cfg.samples = detail::parse_int(key, value);
  else if (key == "classes") cfg.classes = detail::parse_int(key, value);
  else if (key == "hidden") cfg.hidden = detail::parse_int(key, value);
  else if (key == "seeds") cfg.seeds = detail::parse_int(key, value);
  else if (key == "workers") cfg.workers = detail::parse_int(key, value);
  else if (key == "out") cfg.out_dir = value;
  else if (key == "idx-images") cfg.idx_images = value;
  else if (key == "idx-labels") cfg.idx_labels = value;
  else throw ConfigError("unknown config key '" + key + "'");
}

// Flat key=value file; '#' starts a comment line.
inline RunConfig parse_config_file(const std::string &path,
                                   RunConfig base = {}) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string t = detail::trim(line);
    if (t.empty() || t[0] == '#') continue;
    auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(lineno) +
                        " is not key=value: '" + t + "'");
    }
    apply_config_key(base, detail::trim(t.substr(0, eq)),
                     detail::trim(t.substr(eq + 1)));
  }
  return base;
}

// ============================================================================
// Output formatting
// ============================================================================

namespace detail {

// Shortest round-trip decimal representation; locale independent.
inline std::string fmt(double v) {
  if (v == kInf) return "inf";
  if (v == -kInf) return "-inf";
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, p);
}

inline std::string fmt(const std::optional<double> &v) {
  return v ? fmt(*v) : "";
}

inline std::string fmt(const Window &w) {
  return w ? std::to_string(*w) : "full";
}

inline double parse_double_exact(const std::string &text) {
  double v = 0.0;
  auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || p != text.data() + text.size()) {
    if (text == "inf") return kInf;
    throw ParseError("bad numeric field '" + text + "'");
  }
  return v;
}

}  // namespace detail

inline constexpr const char *kRecordsHeader =
    "seed,algorithm,delta,window,timestep,client,model_id,true_concept,"
    "n_models,acc,aeq,oeq,opp,loss,loss_g0,loss_g1,disparity";

struct RunKey {
  std::uint64_t seed = 0;
  std::string algorithm;
  double delta = 0.0;
  Window window;
};

inline void write_record_row(std::ostream &out, const RunKey &key,
                             const MetricsRecord &rec) {
  auto g0 = rec.group_losses.count(0)
                ? std::optional<double>(rec.group_losses.at(0))
                : std::nullopt;
  auto g1 = rec.group_losses.count(1)
                ? std::optional<double>(rec.group_losses.at(1))
                : std::nullopt;
  out << key.seed << ',' << key.algorithm << ',' << detail::fmt(key.delta)
      << ',' << detail::fmt(key.window) << ',' << rec.timestep << ','
      << rec.client << ',' << rec.model_id << ','
      << concept_symbol(rec.true_concept) << ',' << rec.n_models << ','
      << detail::fmt(rec.accuracy) << ',' << detail::fmt(rec.aeq) << ','
      << detail::fmt(rec.oeq) << ',' << detail::fmt(rec.opp) << ','
      << detail::fmt(rec.loss) << ',' << detail::fmt(g0) << ','
      << detail::fmt(g1) << ',' << detail::fmt(rec.disparity) << '\n';
}

// Reparse records.csv rows into (key, record) pairs.
inline std::vector<std::pair<RunKey, MetricsRecord>> parse_records_csv(
    const std::string &path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw ParseError("empty records file " + path);
  if (detail::trim(line) != kRecordsHeader) {
    throw ParseError("unexpected records.csv header: " + line);
  }
  std::vector<std::pair<RunKey, MetricsRecord>> out;
  while (std::getline(in, line)) {
    if (detail::trim(line).empty()) continue;
    auto f = detail::split(line, ',');
    if (f.size() != 17) {
      throw ParseError("records.csv row has " + std::to_string(f.size()) +
                       " fields, want 17");
    }
    RunKey key;
    std::uint64_t seed = 0;
    auto [p, ec] = std::from_chars(f[0].data(), f[0].data() + f[0].size(), seed);
    if (ec != std::errc() || p != f[0].data() + f[0].size()) {
      throw ParseError("bad seed field '" + f[0] + "'");
    }
    key.seed = seed;
    key.algorithm = f[1];
    key.delta = detail::parse_double_exact(f[2]);
    key.window = parse_window_value(f[3]);
    MetricsRecord rec;
    rec.timestep = detail::parse_int("timestep", f[4]);
    rec.client = detail::parse_int("client", f[5]);
    rec.model_id = detail::parse_int("model_id", f[6]);
    rec.true_concept = parse_concept(f[7][0]);
    rec.n_models = detail::parse_int("n_models", f[8]);
    rec.accuracy = detail::parse_double_exact(f[9]);
    if (!f[10].empty()) rec.aeq = detail::parse_double_exact(f[10]);
    if (!f[11].empty()) rec.oeq = detail::parse_double_exact(f[11]);
    if (!f[12].empty()) rec.opp = detail::parse_double_exact(f[12]);
    rec.loss = detail::parse_double_exact(f[13]);
    if (!f[14].empty()) rec.group_losses[0] = detail::parse_double_exact(f[14]);
    if (!f[15].empty()) rec.group_losses[1] = detail::parse_double_exact(f[15]);
    rec.disparity = detail::parse_double_exact(f[16]);
    out.emplace_back(std::move(key), std::move(rec));
  }
  return out;
}

// ============================================================================
// Summaries
// ============================================================================

struct SummaryRow {
  std::string algorithm;
  double alpha = 0.0;
  double delta = 0.0;
  Window window;
  std::uint64_t seed = 0;
  int cells = 0;
  double acc_mean = 0.0, acc_std = 0.0;
  std::optional<double> aeq_mean, aeq_std;
  int aeq_defined = 0;
  std::optional<double> oeq_mean, oeq_std;
  int oeq_defined = 0;
  std::optional<double> opp_mean, opp_std;
  int opp_defined = 0;
  int final_models = 0;
  double disparity_total = 0.0;
};

namespace detail {

struct MeanStd {
  double mean = 0.0, stddev = 0.0;
  int n = 0;
};

// Population standard deviation over the defined values.
inline MeanStd mean_std(const std::vector<double> &values) {
  MeanStd ms;
  ms.n = static_cast<int>(values.size());
  if (ms.n == 0) return ms;
  double sum = 0.0;
  for (double v : values) sum += v;
  ms.mean = sum / ms.n;
  double var = 0.0;
  for (double v : values) var += (v - ms.mean) * (v - ms.mean);
  ms.stddev = std::sqrt(var / ms.n);
  return ms;
}

}  // namespace detail

// Aggregate one run's records; UNDEFINED cells are skipped and counted.
inline SummaryRow summarize_run(const std::vector<MetricsRecord> &records,
                                const RunKey &key, double alpha,
                                int final_models) {
  SummaryRow row;
  row.algorithm = key.algorithm;
  row.alpha = alpha;
  row.delta = key.delta;
  row.window = key.window;
  row.seed = key.seed;
  row.cells = static_cast<int>(records.size());
  row.final_models = final_models;
  std::vector<double> acc, aeqv, oeqv, oppv;
  for (const auto &rec : records) {
    acc.push_back(rec.accuracy);
    if (rec.aeq) aeqv.push_back(*rec.aeq);
    if (rec.oeq) oeqv.push_back(*rec.oeq);
    if (rec.opp) oppv.push_back(*rec.opp);
    row.disparity_total += rec.disparity;
  }
  auto a = detail::mean_std(acc);
  row.acc_mean = a.mean;
  row.acc_std = a.stddev;
  auto set3 = [](const detail::MeanStd &ms, std::optional<double> &mean,
                 std::optional<double> &stddev, int &defined) {
    defined = ms.n;
    if (ms.n > 0) {
      mean = ms.mean;
      stddev = ms.stddev;
    }
  };
  set3(detail::mean_std(aeqv), row.aeq_mean, row.aeq_std, row.aeq_defined);
  set3(detail::mean_std(oeqv), row.oeq_mean, row.oeq_std, row.oeq_defined);
  set3(detail::mean_std(oppv), row.opp_mean, row.opp_std, row.opp_defined);
  return row;
}

inline constexpr const char *kSummaryHeader =
    "algorithm,alpha,delta,window,seed,cells,acc_mean,acc_std,aeq_mean,"
    "aeq_std,aeq_defined,oeq_mean,oeq_std,oeq_defined,opp_mean,opp_std,"
    "opp_defined,final_models,disparity_total";

inline void write_summary_row(std::ostream &out, const SummaryRow &r) {
  out << r.algorithm << ',' << detail::fmt(r.alpha) << ','
      << detail::fmt(r.delta) << ',' << detail::fmt(r.window) << ',' << r.seed
      << ',' << r.cells << ',' << detail::fmt(r.acc_mean) << ','
      << detail::fmt(r.acc_std) << ',' << detail::fmt(r.aeq_mean) << ','
      << detail::fmt(r.aeq_std) << ',' << r.aeq_defined << ','
      << detail::fmt(r.oeq_mean) << ',' << detail::fmt(r.oeq_std) << ','
      << r.oeq_defined << ',' << detail::fmt(r.opp_mean) << ','
      << detail::fmt(r.opp_std) << ',' << r.opp_defined << ','
      << r.final_models << ',' << detail::fmt(r.disparity_total) << '\n';
}

// Recompute summary rows from a records.csv, grouped per run. final_models
// is not recoverable from records, so it is reported as the last row's
// n_models (the pre-adaptation count) only when `final_models_hint` is -1.
inline std::vector<SummaryRow> summarize(const std::string &records_path,
                                         double alpha) {
  auto rows = parse_records_csv(records_path);
  std::vector<SummaryRow> out;
  std::vector<MetricsRecord> bucket;
  std::optional<RunKey> cur;
  auto same = [](const RunKey &a, const RunKey &b) {
    return a.seed == b.seed && a.algorithm == b.algorithm &&
           a.delta == b.delta && a.window == b.window;
  };
  auto flush = [&]() {
    if (!cur) return;
    out.push_back(summarize_run(bucket, *cur, alpha, -1));
    bucket.clear();
  };
  for (auto &[key, rec] : rows) {
    if (!cur || !same(*cur, key)) {
      flush();
      cur = key;
    }
    bucket.push_back(std::move(rec));
  }
  flush();
  return out;
}

// ============================================================================
// Experiment driver
// ============================================================================

struct ExperimentOutput {
  std::filesystem::path records_csv;
  std::filesystem::path assignments_csv;
  std::filesystem::path summary_csv;
  std::filesystem::path counters_json;
  std::vector<SummaryRow> summaries;
};

// Runs the sweep (delta x window x seed) for one algorithm and writes the
// full file set under cfg.out_dir.
inline ExperimentOutput run_experiment(const RunConfig &cfg) {
  cfg.validate();
  std::filesystem::create_directories(cfg.out_dir);
  ExperimentOutput out;
  out.records_csv = std::filesystem::path(cfg.out_dir) / "records.csv";
  out.assignments_csv = std::filesystem::path(cfg.out_dir) / "assignments.csv";
  out.summary_csv = std::filesystem::path(cfg.out_dir) / "summary.csv";
  out.counters_json = std::filesystem::path(cfg.out_dir) / "counters.json";

  std::ofstream records(out.records_csv);
  std::ofstream assignments(out.assignments_csv);
  std::ofstream summary(out.summary_csv);
  if (!records || !assignments || !summary) {
    throw ConfigError("cannot create output files under " + cfg.out_dir);
  }
  records << kRecordsHeader << '\n';
  assignments << "seed,algorithm,delta,window,client,timestep,model_id,"
                 "true_concept\n";
  summary << "# std columns use the population convention; means skip "
             "undefined cells\n";
  summary << kSummaryHeader << '\n';

  std::vector<std::pair<IdxImage, int>> idx_source;
  int input_dim = kSyntheticFeatureDim;
  int num_classes = cfg.classes;
  if (cfg.dataset == "idx") {
    idx_source = load_idx(cfg.idx_images, cfg.idx_labels);
    if (idx_source.empty()) throw CapacityError("idx source is empty");
    input_dim = idx_source[0].first.rows * idx_source[0].first.cols;
    int max_label = 0;
    for (const auto &[img, label] : idx_source) {
      max_label = std::max(max_label, label);
    }
    num_classes = max_label + 1;
  }

  auto schedule = build_schedule(cfg.scenario, cfg.clients, cfg.timesteps);
  nlohmann::json counters_all = nlohmann::json::array();
  const bool single_point =
      cfg.deltas.size() == 1 && cfg.windows.size() == 1 && cfg.seeds == 1;

  for (double delta : cfg.deltas) {
    for (const Window &window : cfg.windows) {
      for (int s = 1; s <= cfg.seeds; ++s) {
        const auto seed = static_cast<std::uint64_t>(s);
        StreamOptions opt{cfg.alpha, cfg.samples, seed, num_classes};
        StreamGrid streams =
            cfg.dataset == "idx"
                ? build_idx_stream(schedule, opt, idx_source)
                : build_synthetic_stream(schedule, opt);
        FederationConfig fc;
        fc.clients = cfg.clients;
        fc.timesteps = cfg.timesteps;
        fc.rounds = cfg.rounds;
        fc.train = {cfg.epochs, cfg.batch_size, cfg.eta, 0};
        fc.algorithm = parse_algorithm(cfg.algorithm);
        fc.delta = delta;
        fc.window = window;
        fc.arch = {input_dim, cfg.hidden, num_classes};
        fc.master_seed = seed;
        fc.workers = cfg.workers;
        RunResult result = run_federation(fc, streams, schedule);

        RunKey key{seed, cfg.algorithm, delta, window};
        for (const auto &rec : result.records) {
          write_record_row(records, key, rec);
        }
        for (int k = 0; k < cfg.clients; ++k) {
          for (int t = 0; t < cfg.timesteps; ++t) {
            assignments << seed << ',' << cfg.algorithm << ','
                        << detail::fmt(delta) << ',' << detail::fmt(window)
                        << ',' << k << ',' << t << ','
                        << result.assignment_grid[k][t] << ','
                        << concept_symbol(schedule.grid[k][t]) << '\n';
          }
        }
        SummaryRow row = summarize_run(result.records, key, cfg.alpha,
                                       result.final_model_count);
        write_summary_row(summary, row);
        out.summaries.push_back(row);

        nlohmann::json c = {
            {"models_sent_to_clients", result.counters.models_sent_to_clients},
            {"models_sent_to_server", result.counters.models_sent_to_server},
            {"group_loss_evaluations", result.counters.group_loss_evaluations},
            {"merge_loss_evaluations", result.counters.merge_loss_evaluations},
            {"training_passes", result.counters.training_passes}};
        if (single_point) {
          counters_all = c;
        } else {
          counters_all.push_back({{"seed", seed},
                                  {"delta", detail::fmt(delta)},
                                  {"window", detail::fmt(window)},
                                  {"counters", c}});
        }
      }
    }
  }

  std::ofstream counters(out.counters_json);
  counters << counters_all.dump(2) << '\n';
  return out;
}

}  // namespace fedfair
