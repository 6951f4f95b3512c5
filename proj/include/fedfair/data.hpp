#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "fedfair/common.hpp"
#include "fedfair/example.hpp"

namespace fedfair {

// ============================================================================
// Drift schedules
// ============================================================================

// K x T grid of concept ids with its drift bookkeeping.
struct DriftSchedule {
  std::string scenario;
  std::vector<std::vector<ConceptId>> grid;  // [client][timestep]
  int drift_events = 0;     // cells (k,t>=1) where concept changed vs t-1
  int drift_timesteps = 0;  // columns containing >=1 such change

  int clients() const { return static_cast<int>(grid.size()); }
  int timesteps() const {
    return grid.empty() ? 0 : static_cast<int>(grid[0].size());
  }

  std::set<ConceptId> distinct_concepts() const {
    std::set<ConceptId> out;
    for (const auto &row : grid)
      for (ConceptId c : row) out.insert(c);
    return out;
  }

  std::vector<int> drift_columns() const {
    std::vector<int> cols;
    for (int t = 1; t < timesteps(); ++t) {
      for (int k = 0; k < clients(); ++k) {
        if (grid[k][t] != grid[k][t - 1]) {
          cols.push_back(t);
          break;
        }
      }
    }
    return cols;
  }
};

inline int count_drift_events(const std::vector<std::vector<ConceptId>> &grid) {
  int events = 0;
  for (const auto &row : grid) {
    for (std::size_t t = 1; t < row.size(); ++t) {
      if (row[t] != row[t - 1]) ++events;
    }
  }
  return events;
}

inline int count_drift_timesteps(
    const std::vector<std::vector<ConceptId>> &grid) {
  if (grid.empty()) return 0;
  int cols = 0;
  for (std::size_t t = 1; t < grid[0].size(); ++t) {
    for (const auto &row : grid) {
      if (row[t] != row[t - 1]) {
        ++cols;
        break;
      }
    }
  }
  return cols;
}

namespace detail {

inline std::vector<std::vector<ConceptId>> grid_from_rows(
    const std::vector<std::string> &rows) {
  std::vector<std::vector<ConceptId>> grid;
  grid.reserve(rows.size());
  for (const auto &row : rows) {
    std::vector<ConceptId> r;
    r.reserve(row.size());
    for (char ch : row) r.push_back(parse_concept(ch));
    grid.push_back(std::move(r));
  }
  return grid;
}

// Canonical 10x10 scenario grids. Row i is client i, column t is the
// concept of its batch at timestep t.
inline std::vector<std::string> scenario_rows(const std::string &scenario) {
  if (scenario == "4.1") {
    // 3 concepts, 15 drift events across timesteps {2, 3, 5}
    return {"AABBBCCCCC", "AABBBCCCCC", "AABBBCCCCC", "AABBBCCCCC",
            "AABBBCCCCC", "AAACCCCCCC", "AAACCCCCCC", "AAACCCCCCC",
            "AAACCCCCCC", "AAACCCCCCC"};
  }
  if (scenario == "4.2") {
    // 3 concepts with recurrences, 18 events across {2, 3, 5}
    return {"AABBBAAAAA", "AABBBAAAAA", "AABBBAAAAA", "AABBBAAAAA",
            "AABBBAAAAA", "AABBBAAAAA", "AAACCAAAAA", "AAACCAAAAA",
            "AAACCAAAAA", "AAAAAAAAAA"};
  }
  if (scenario == "4.3") {
    // simultaneous appearance of B and C at t=2; 23 events across 4 columns
    return {"AABBDDDDAA", "AABBDDDDAA", "AABBDDDDAA", "AABBDDDDAA",
            "AABBDDDDDD", "AACCCCAAAA", "AACCCCAAAA", "AACCCCAAAA",
            "AACCCCAAAA", "AAAAAABBBB"};
  }
  if (scenario == "4.4") {
    // 5 concepts, 30 events across 6 columns
    return {"ABBDDDAABB", "ABBDDDAABB", "ABBDDDAABB", "AACCCEEEBB",
            "AACCCEEEBB", "AACCCEEEBB", "AAABBBEEAA", "AAABBBEEAA",
            "AAABBBEEEE", "AAAAACCCCC"};
  }
  if (scenario == "4.5") {
    // 5 concepts, erratic recurrences, 38 events across 7 columns
    return {"ABCCEEEAAB", "ABCCEEEAAB", "ACCAAADAAB", "ACCAAADAAB",
            "AADDBBBAAB", "AADDBBBAAB", "AADDBBBBBB", "AAAEEEAAAB",
            "AAAEEEAAAB", "AAAEEEAAAA"};
  }
  throw ConfigError("unknown scenario '" + scenario + "'");
}

}  // namespace detail

// Scenario "none" yields an all-A grid for any (K, T); the canonical
// scenarios 4.1-4.5 are fixed 10x10 grids.
inline DriftSchedule build_schedule(const std::string &scenario, int clients,
                                    int timesteps) {
  if (clients < 1 || timesteps < 1) {
    throw ConfigError("build_schedule: clients and timesteps must be >= 1");
  }
  DriftSchedule s;
  s.scenario = scenario;
  if (scenario == "none") {
    s.grid.assign(clients,
                  std::vector<ConceptId>(timesteps, ConceptId::A));
  } else {
    if (clients != 10 || timesteps != 10) {
      throw ConfigError("scenario " + scenario +
                        " is defined for K=10, T=10 (got K=" +
                        std::to_string(clients) +
                        ", T=" + std::to_string(timesteps) + ")");
    }
    s.grid = detail::grid_from_rows(detail::scenario_rows(scenario));
  }
  s.drift_events = count_drift_events(s.grid);
  s.drift_timesteps = count_drift_timesteps(s.grid);
  return s;
}

// ============================================================================
// Concept transformations
// ============================================================================

using SwapTable = std::map<ConceptId, std::pair<int, int>>;

// Concept -> swapped label pair, 0-indexed: B:(0,1) C:(1,2) D:(2,3) E:(3,4).
inline const SwapTable &default_swap_table() {
  static const SwapTable table = {
      {ConceptId::B, {0, 1}},
      {ConceptId::C, {1, 2}},
      {ConceptId::D, {2, 3}},
      {ConceptId::E, {3, 4}},
  };
  return table;
}

// Group-0 examples get the concept's label pair exchanged; group-1 examples
// and concept A pass through unchanged.
inline Example apply_concept(Example e, ConceptId c,
                             const SwapTable &table = default_swap_table()) {
  if (c == ConceptId::A || e.group != 0) return e;
  auto it = table.find(c);
  if (it == table.end()) return e;
  if (e.label == it->second.first) {
    e.label = it->second.second;
  } else if (e.label == it->second.second) {
    e.label = it->second.first;
  }
  return e;
}

// ============================================================================
// Synthetic task: per-(class, group) Gaussian blobs
// ============================================================================

inline constexpr int kSyntheticFeatureDim = 4;

// Blob centers sit on a radius-4 circle in dims 0-1, with the groups split
// by +-4 in dim 2; sigma is 1, so centers are >= 4 sigma apart.
inline std::vector<double> blob_center(int label, int group, int num_classes) {
  double angle = 2.0 * 3.14159265358979323846 * label / num_classes;
  return {4.0 * std::cos(angle), 4.0 * std::sin(angle),
          group == 1 ? 4.0 : -4.0, 0.0};
}

// n_priv group-1 examples plus round(alpha * n_priv) group-0 examples,
// labels balanced across classes within each group, concept applied last.
// Group-1 draws never depend on the concept.
inline std::vector<Example> generate_synthetic(ConceptId concept_id,
                                               int n_priv, double alpha,
                                               int num_classes,
                                               std::uint64_t seed) {
  if (alpha <= 0.0 || alpha > 1.0) {
    throw ConfigError("generate_synthetic: alpha must be in (0, 1], got " +
                      std::to_string(alpha));
  }
  if (num_classes < 2) {
    throw ConfigError("generate_synthetic: need >= 2 classes");
  }
  if (n_priv < num_classes) {
    throw ConfigError("generate_synthetic: n_priv must be >= num_classes");
  }
  const int n_unpriv = static_cast<int>(std::llround(alpha * n_priv));
  Rng rng(derive_seed(seed, SeedTag::Cell, {}));
  std::vector<Example> out;
  out.reserve(n_priv + n_unpriv);
  auto emit = [&](int i, int group) {
    Example e;
    e.label = i % num_classes;
    e.group = group;
    e.features = blob_center(e.label, group, num_classes);
    for (double &f : e.features) f += rng.normal();
    out.push_back(std::move(e));
  };
  for (int i = 0; i < n_priv; ++i) emit(i, 1);
  for (int i = 0; i < n_unpriv; ++i) emit(i, 0);
  for (Example &e : out) e = apply_concept(e, concept_id);
  return out;
}

// ============================================================================
// IDX ingestion
// ============================================================================

struct IdxImage {
  int rows = 0;
  int cols = 0;
  std::vector<double> pixels;  // row-major, [0, 1]
};

namespace detail {

inline std::uint32_t read_be32(std::istream &in, const char *field) {
  unsigned char b[4];
  in.read(reinterpret_cast<char *>(b), 4);
  if (!in) throw ParseError(std::string("idx: truncated ") + field);
  return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) |
         (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]);
}

}  // namespace detail

// Big-endian IDX pair: image magic 0x00000803, label magic 0x00000801.
// Pixel bytes are normalized to [0, 1].
inline std::vector<std::pair<IdxImage, int>> load_idx(
    const std::string &images_path, const std::string &labels_path) {
  std::ifstream img(images_path, std::ios::binary);
  if (!img) throw ParseError("idx: cannot open images file " + images_path);
  std::ifstream lab(labels_path, std::ios::binary);
  if (!lab) throw ParseError("idx: cannot open labels file " + labels_path);

  std::uint32_t img_magic = detail::read_be32(img, "images magic");
  if (img_magic != 0x00000803u) {
    throw ParseError("idx: bad images magic " + std::to_string(img_magic) +
                     " (expected 2051)");
  }
  std::uint32_t count = detail::read_be32(img, "images count");
  std::uint32_t rows = detail::read_be32(img, "images rows");
  std::uint32_t cols = detail::read_be32(img, "images cols");

  std::uint32_t lab_magic = detail::read_be32(lab, "labels magic");
  if (lab_magic != 0x00000801u) {
    throw ParseError("idx: bad labels magic " + std::to_string(lab_magic) +
                     " (expected 2049)");
  }
  std::uint32_t lab_count = detail::read_be32(lab, "labels count");
  if (lab_count != count) {
    throw ParseError("idx: count mismatch: images=" + std::to_string(count) +
                     " labels=" + std::to_string(lab_count));
  }

  const std::size_t pix = std::size_t(rows) * cols;
  std::vector<unsigned char> buf(pix);
  std::vector<std::pair<IdxImage, int>> out;
  out.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    img.read(reinterpret_cast<char *>(buf.data()), std::streamsize(pix));
    if (!img) {
      throw ParseError("idx: truncated pixel data at image " +
                       std::to_string(i));
    }
    IdxImage m;
    m.rows = static_cast<int>(rows);
    m.cols = static_cast<int>(cols);
    m.pixels.resize(pix);
    for (std::size_t j = 0; j < pix; ++j) m.pixels[j] = buf[j] / 255.0;
    int label = lab.get();
    if (label == std::char_traits<char>::eof()) {
      throw ParseError("idx: truncated label data at label " +
                       std::to_string(i));
    }
    out.emplace_back(std::move(m), label);
  }
  return out;
}

// 90-degree counter-clockwise rotation of a square matrix:
// out(i, j) = in(j, n-1-i).
inline IdxImage rotate_ccw(const IdxImage &img) {
  if (img.rows != img.cols) {
    throw ShapeError("rotate_ccw: image must be square, got " +
                     std::to_string(img.rows) + "x" + std::to_string(img.cols));
  }
  const int n = img.rows;
  IdxImage out;
  out.rows = out.cols = n;
  out.pixels.resize(img.pixels.size());
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      out.pixels[std::size_t(i) * n + j] =
          img.pixels[std::size_t(j) * n + (n - 1 - i)];
    }
  }
  return out;
}

// Group-0 appearance: invert pixel values, then rotate 90 degrees CCW.
inline IdxImage transform_group0_image(const IdxImage &img) {
  if (img.rows != img.cols) {
    throw ShapeError("transform_group0_image: image must be square, got " +
                     std::to_string(img.rows) + "x" + std::to_string(img.cols));
  }
  IdxImage inv = img;
  for (double &v : inv.pixels) v = 1.0 - v;
  return rotate_ccw(inv);
}

// ============================================================================
// Stream construction
// ============================================================================

// D_k^t: one client's labeled batch for one timestep, tagged with the
// ground-truth concept it was generated under.
struct TimestepBatch {
  int client = 0;
  int timestep = 0;
  std::vector<Example> examples;
  ConceptId true_concept = ConceptId::A;
};

using StreamGrid = std::vector<std::vector<TimestepBatch>>;  // [client][t]

// Smallest-error n_priv with n_priv + round(alpha * n_priv) ~= total;
// exact when such an n exists, ties broken toward smaller n.
inline int solve_privileged_count(int total, double alpha) {
  int base = static_cast<int>(std::floor(total / (1.0 + alpha)));
  int best = -1, best_err = total + 1;
  for (int n = std::max(1, base - 3); n <= base + 3; ++n) {
    int produced = n + static_cast<int>(std::llround(alpha * n));
    int err = std::abs(produced - total);
    if (err < best_err) {
      best = n;
      best_err = err;
    }
  }
  return best;
}

struct StreamOptions {
  double alpha = 0.1;
  int per_timestep_size = 200;
  std::uint64_t seed = 0;
  int num_classes = 5;  // synthetic mode only; idx mode infers from labels
};

inline StreamGrid build_synthetic_stream(const DriftSchedule &schedule,
                                         const StreamOptions &opt) {
  const int K = schedule.clients();
  const int T = schedule.timesteps();
  const int n_priv = solve_privileged_count(opt.per_timestep_size, opt.alpha);
  StreamGrid grid(K);
  for (int k = 0; k < K; ++k) {
    grid[k].reserve(T);
    for (int t = 0; t < T; ++t) {
      TimestepBatch b;
      b.client = k;
      b.timestep = t;
      b.true_concept = schedule.grid[k][t];
      b.examples = generate_synthetic(
          b.true_concept, n_priv, opt.alpha, opt.num_classes,
          derive_seed(opt.seed, SeedTag::Stream,
                      {static_cast<std::uint64_t>(k),
                       static_cast<std::uint64_t>(t)}));
      grid[k].push_back(std::move(b));
    }
  }
  return grid;
}

// IDX-backed stream: group-1 examples are source images as-is; group-0
// examples are transformed copies of further sampled images. Source images
// are consumed from one seeded permutation, so no cell reuses an image.
inline StreamGrid build_idx_stream(
    const DriftSchedule &schedule, const StreamOptions &opt,
    const std::vector<std::pair<IdxImage, int>> &source) {
  const int K = schedule.clients();
  const int T = schedule.timesteps();
  const int n_priv = solve_privileged_count(opt.per_timestep_size, opt.alpha);
  const int n_unpriv = static_cast<int>(std::llround(opt.alpha * n_priv));
  const std::size_t needed =
      std::size_t(K) * T * (std::size_t(n_priv) + n_unpriv);
  if (needed > source.size()) {
    throw CapacityError("idx stream needs " + std::to_string(needed) +
                        " source examples, only " +
                        std::to_string(source.size()) + " available");
  }
  std::vector<std::size_t> perm(source.size());
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
  Rng rng(derive_seed(opt.seed, SeedTag::Stream, {}));
  rng.shuffle(perm);
  std::size_t cursor = 0;

  auto flat = [](const IdxImage &m) { return m.pixels; };

  StreamGrid grid(K);
  for (int k = 0; k < K; ++k) {
    grid[k].reserve(T);
    for (int t = 0; t < T; ++t) {
      TimestepBatch b;
      b.client = k;
      b.timestep = t;
      b.true_concept = schedule.grid[k][t];
      b.examples.reserve(std::size_t(n_priv) + n_unpriv);
      for (int i = 0; i < n_priv; ++i) {
        const auto &[img, label] = source[perm[cursor++]];
        Example e;
        e.features = flat(img);
        e.label = label;
        e.group = 1;
        b.examples.push_back(std::move(e));
      }
      for (int i = 0; i < n_unpriv; ++i) {
        const auto &[img, label] = source[perm[cursor++]];
        Example e;
        e.features = flat(transform_group0_image(img));
        e.label = label;
        e.group = 0;
        b.examples.push_back(std::move(e));
      }
      for (Example &e : b.examples) e = apply_concept(e, b.true_concept);
      grid[k].push_back(std::move(b));
    }
  }
  return grid;
}

enum class DatasetKind { Synthetic, Idx };

inline StreamGrid build_stream(
    DatasetKind kind, const DriftSchedule &schedule, const StreamOptions &opt,
    const std::vector<std::pair<IdxImage, int>> *idx_source = nullptr) {
  if (kind == DatasetKind::Synthetic) {
    return build_synthetic_stream(schedule, opt);
  }
  if (idx_source == nullptr) {
    throw ConfigError("build_stream: idx mode requires loaded source data");
  }
  return build_idx_stream(schedule, opt, *idx_source);
}

}  // namespace fedfair
