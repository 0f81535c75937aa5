#pragma once

// End-to-end flow: setup (preprocess, encode, bucket, initial clustering,
// thresholds), snapshots on disk, the query run, and run reports.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "herp/binary_io.hpp"
#include "herp/cluster.hpp"
#include "herp/config.hpp"
#include "herp/encoder.hpp"
#include "herp/scheduler.hpp"
#include "herp/spectrum.hpp"

namespace herp {

namespace fs = std::filesystem;

struct SetupParams {
  EncoderConfig encoder;
  DeviceParams device;
  std::size_t link_threshold = 676;
  double percentile = 95.0;
  double slack = 1.0;

  static SetupParams from(const RunConfig& cfg) {
    return {cfg.encoder(), cfg.device(), cfg.link_threshold(), cfg.real("threshold_percentile"),
            cfg.real("threshold_slack")};
  }
};

struct RunParams {
  EngineConfig engine;
  SchedulerConfig scheduler;
  bool speedup = true;

  static RunParams from(const RunConfig& cfg) {
    RunParams p;
    p.engine.rewrite_period = static_cast<std::uint32_t>(cfg.integer("rewrite_period"));
    p.engine.model = cfg.current_model();
    p.engine.device = cfg.device();
    p.scheduler = cfg.scheduler();
    p.speedup = cfg.flag("speedup");
    return p;
  }
};

struct CatalogEntry {
  BucketId bucket = 0;
  std::size_t rows = 0;     // consensus rows
  std::size_t spectra = 0;  // setup spectra
  double mz_low = 0.0;      // precursor m/z range of its spectra
  double mz_high = 0.0;
  std::size_t threshold = 0;
};

struct PhaseOneMember {
  std::string spectrum_id;
  BucketId bucket = 0;
  ClusterId cluster = 0;
  std::optional<std::string> label;
};

struct SetupResult {
  SetupParams params;
  std::map<BucketId, std::vector<ClusterRecord>> clusters;
  ThresholdModel thresholds;
  std::vector<CatalogEntry> catalog;     // ascending bucket id
  std::vector<PhaseOneMember> members;   // grouped by bucket, arrival order within
  std::vector<Hypervector> member_hvs;   // parallel to members
  EnergyLatencyLedger ledger;
};

// Loading every bucket's rows once. Buckets fill their own arrays one after another.
inline void account_setup_writes(std::span<const std::size_t> bucket_rows, std::size_t dim, const DeviceParams& device,
                                 EnergyLatencyLedger& ledger) {
  for (const auto rows : bucket_rows) {
    for (std::size_t first = 0; first < rows; first += device.array_rows) {
      const auto n = std::min<std::size_t>(device.array_rows, rows - first);
      ledger.elapsed_ns += account_bulk_write(n, dim, device, ledger);
    }
  }
}

// Catalog-only setup: rows spread evenly over buckets, nothing materialized.
inline EnergyLatencyLedger dry_run_setup(std::uint64_t rows, std::uint64_t buckets, std::size_t dim,
                                         const DeviceParams& device) {
  if (buckets == 0) throw ConfigError("dry run needs at least one bucket");
  std::vector<std::size_t> sizes(buckets, rows / buckets);
  for (std::uint64_t b = 0; b < rows % buckets; ++b) ++sizes[b];
  EnergyLatencyLedger ledger;
  account_setup_writes(sizes, dim, device, ledger);
  return ledger;
}

// `spectra` must be preprocessed.
inline SetupResult run_setup(const std::vector<Spectrum>& spectra, const SetupParams& params) {
  if (spectra.empty()) throw InputError("setup: no spectra survived preprocessing");
  const Encoder encoder(params.encoder);
  std::map<BucketId, std::vector<std::size_t>> by_bucket;
  std::vector<Hypervector> hvs;
  hvs.reserve(spectra.size());
  for (std::size_t i = 0; i < spectra.size(); ++i) {
    hvs.push_back(encoder.encode(spectra[i]));
    by_bucket[bucket_of(spectra[i])].push_back(i);
  }

  SetupResult out;
  out.params = params;
  std::map<BucketId, BucketStats> stats;
  std::vector<std::size_t> bucket_rows;
  for (const auto& [b, idx] : by_bucket) {
    std::vector<Hypervector> group;
    for (auto i : idx) group.push_back(hvs[i]);
    auto r = initial_cluster(b, group, params.link_threshold, encoder.tie_breaker());
    stats[b] = bucket_stats(r);
    CatalogEntry e{b, r.clusters.size(), idx.size(), spectra[idx.front()].precursor_mz,
                   spectra[idx.front()].precursor_mz, 0};
    for (std::size_t k = 0; k < idx.size(); ++k) {
      const auto& s = spectra[idx[k]];
      e.mz_low = std::min(e.mz_low, s.precursor_mz);
      e.mz_high = std::max(e.mz_high, s.precursor_mz);
      out.members.push_back({s.id, b, r.member_cluster[k], s.label});
      out.member_hvs.push_back(hvs[idx[k]]);
    }
    out.catalog.push_back(e);
    bucket_rows.push_back(r.clusters.size());
    out.clusters[b] = std::move(r.clusters);
  }
  out.thresholds = fit_threshold(stats, params.percentile, params.slack, params.encoder.dim);
  for (auto& e : out.catalog) e.threshold = out.thresholds.threshold(e.bucket);
  account_setup_writes(bucket_rows, params.encoder.dim, params.device, out.ledger);
  return out;
}

// Fraction split of an arrival-ordered list: the first floor(f * n) go to
// setup, the remainder to queries. f = 1 uses everything for both.
inline std::pair<std::vector<Spectrum>, std::vector<Spectrum>> split_spectra(const std::vector<Spectrum>& all,
                                                                             double fraction) {
  if (fraction >= 1.0) return {all, all};
  const auto cut = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(all.size())));
  return {std::vector<Spectrum>(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(cut)),
          std::vector<Spectrum>(all.begin() + static_cast<std::ptrdiff_t>(cut), all.end())};
}

// ---------------------------------------------------------------------------
// Query run
// ---------------------------------------------------------------------------

struct RunResult {
  std::vector<Assignment> assignments;  // dispatch order
  std::vector<CycleReport> trace;       // cycle 0 is the preload
  EnergyLatencyLedger ledger;
  SchedulerStats stats;
  std::vector<Membership> memberships;  // setup members followed by queries
  QualityMetrics metrics;
  std::optional<SpeedupReport> speedup;
};

inline RunResult run_queries(const SetupResult& setup, const std::vector<Spectrum>& queries, const RunParams& params) {
  const auto& enc_cfg = setup.params.encoder;
  const Encoder encoder(enc_cfg);
  if (setup.thresholds.dim != enc_cfg.dim) throw ConfigError("run: threshold model dimension mismatch");

  ClusterEngine engine(enc_cfg.dim, encoder.tie_breaker(), setup.thresholds, params.engine);
  for (const auto& [b, recs] : setup.clusters) engine.add_bucket(b, recs);

  std::vector<QueryRecord> records;
  records.reserve(queries.size());
  std::map<BucketId, std::vector<Hypervector>> query_hvs;
  for (std::size_t i = 0; i < queries.size(); ++i) {
    const auto& s = queries[i];
    QueryRecord q{s.id, bucket_of(s), encoder.encode(s), i, s.label};
    if (!setup.clusters.contains(q.bucket) && !engine.clusters().contains(q.bucket)) engine.add_bucket(q.bucket, {});
    query_hvs[q.bucket].push_back(q.hv);
    records.push_back(std::move(q));
  }

  Scheduler scheduler(params.scheduler, params.engine.device, enc_cfg.dim);
  RunResult out;
  out.trace.push_back(scheduler.preload(engine, out.ledger));
  scheduler.admit(std::move(records));
  while (scheduler.pending() > 0) out.trace.push_back(scheduler.step(engine, out.ledger));
  out.stats = scheduler.stats();
  out.assignments = engine.log();

  for (const auto& m : setup.members) out.memberships.push_back({m.spectrum_id, {m.bucket, m.cluster}, m.label});
  for (const auto& a : out.assignments) out.memberships.push_back({a.spectrum_id, {a.bucket, a.cluster}, a.label});
  out.metrics = quality_metrics(out.memberships);

  if (params.speedup) {
    SpeedupWorkload w;
    w.link_threshold = setup.params.link_threshold;
    w.percentile = setup.thresholds.percentile;
    w.slack = setup.thresholds.slack;
    w.tie_breaker = encoder.tie_breaker();
    std::map<BucketId, SpeedupBucket> buckets;
    for (std::size_t i = 0; i < setup.members.size(); ++i) {
      buckets[setup.members[i].bucket].initial.push_back(setup.member_hvs[i]);
    }
    for (auto& [b, hvs] : query_hvs) buckets[b].queries = std::move(hvs);
    for (auto& [b, sb] : buckets) w.buckets.push_back(std::move(sb));
    out.speedup = compare_speedup(w, params.engine.device);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Files
// ---------------------------------------------------------------------------

inline std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw InputError("cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw InputError("cannot write " + p.string());
  out << text;
  if (!out) throw InputError("write failed: " + p.string());
}

inline nlohmann::json read_json(const fs::path& p) {
  try {
    return nlohmann::json::parse(read_text(p));
  } catch (const nlohmann::json::exception& e) {
    throw InputError(p.string() + ": " + e.what());
  }
}

// Parses a JSON-lines file; a bad line is reported by number.
template <typename F>
void for_each_json_line(const fs::path& p, F&& fn) {
  std::istringstream in(read_text(p));
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (detail::trim(line).empty()) continue;
    try {
      fn(nlohmann::json::parse(line));
    } catch (const nlohmann::json::exception& e) {
      throw InputError(p.string() + ":" + std::to_string(n) + ": " + e.what());
    } catch (const InputError& e) {
      throw InputError(p.string() + ":" + std::to_string(n) + ": " + e.what());
    }
  }
}

// Creates <root>/<prefix>-NNNN with the next unused number.
inline fs::path next_versioned_dir(const fs::path& root, const std::string& prefix) {
  fs::create_directories(root);
  int highest = 0;
  for (const auto& entry : fs::directory_iterator(root)) {
    const auto name = entry.path().filename().string();
    if (entry.is_directory() && name.rfind(prefix + "-", 0) == 0) {
      try {
        highest = std::max(highest, std::stoi(name.substr(prefix.size() + 1)));
      } catch (const std::exception&) {
      }
    }
  }
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d", highest + 1);
  const auto dir = root / (prefix + "-" + buf);
  fs::create_directory(dir);
  return dir;
}

inline nlohmann::json encoder_json(const EncoderConfig& e) {
  return {{"dim", e.dim},
          {"mz_bin_width", e.mz_bin_width},
          {"mz_low", e.mz_low},
          {"mz_high", e.mz_high},
          {"intensity_levels", e.intensity_levels},
          {"id_seed", e.id_seed},
          {"level_seed", e.level_seed},
          {"tie_seed", e.tie_seed}};
}

inline EncoderConfig encoder_from_json(const nlohmann::json& j) {
  EncoderConfig e;
  e.dim = j.at("dim");
  e.mz_bin_width = j.at("mz_bin_width");
  e.mz_low = j.at("mz_low");
  e.mz_high = j.at("mz_high");
  e.intensity_levels = j.at("intensity_levels");
  e.id_seed = j.at("id_seed");
  e.level_seed = j.at("level_seed");
  e.tie_seed = j.at("tie_seed");
  e.validate();
  return e;
}

inline constexpr std::string_view kAccumulatorMagic = "HRPACC01";

inline void write_accumulators(std::ostream& out, std::size_t dim, const std::vector<const ClusterRecord*>& recs) {
  io::write_magic(out, kAccumulatorMagic);
  io::write_le<std::uint32_t>(out, 1);
  io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(dim));
  io::write_le<std::uint64_t>(out, recs.size());
  for (const auto* r : recs) {
    io::write_le<std::int64_t>(out, r->bucket);
    io::write_le<std::int64_t>(out, r->id);
    io::write_le<std::uint32_t>(out, r->members);
    io::write_le<std::uint32_t>(out, r->pending_updates);
    io::write_le<std::uint32_t>(out, r->accumulator.total());
    for (auto c : r->accumulator.counts()) io::write_le<std::uint32_t>(out, c);
  }
}

struct StoredAccumulator {
  BucketId bucket = 0;
  ClusterId id = 0;
  std::uint32_t members = 0;
  std::uint32_t pending = 0;
  Accumulator acc;
};

inline std::vector<StoredAccumulator> read_accumulators(std::istream& in, std::size_t dim) {
  io::expect_magic(in, kAccumulatorMagic);
  if (io::read_le<std::uint32_t>(in) != 1) throw InputError("unsupported accumulator file version");
  if (io::read_le<std::uint32_t>(in) != dim) throw InputError("accumulator file dimension mismatch");
  const auto n = io::read_le<std::uint64_t>(in);
  std::vector<StoredAccumulator> out;
  for (std::uint64_t i = 0; i < n; ++i) {
    StoredAccumulator s;
    s.bucket = io::read_le<std::int64_t>(in);
    s.id = io::read_le<std::int64_t>(in);
    s.members = io::read_le<std::uint32_t>(in);
    s.pending = io::read_le<std::uint32_t>(in);
    const auto total = io::read_le<std::uint32_t>(in);
    std::vector<std::uint32_t> counts(dim);
    for (auto& c : counts) c = io::read_le<std::uint32_t>(in);
    s.acc = Accumulator(std::move(counts), total);
    out.push_back(std::move(s));
  }
  return out;
}

inline EnergyLatencyLedger ledger_from_file(const fs::path& p) {
  try {
    return EnergyLatencyLedger::from_json(read_json(p).at("ledger"));
  } catch (const nlohmann::json::exception& e) {
    throw InputError(p.string() + ": " + e.what());
  }
}

// Writes a new versioned snapshot below `root` and returns its directory.
inline fs::path write_snapshot(const fs::path& root, const SetupResult& s, const RunConfig& cfg) {
  const auto dir = next_versioned_dir(root, "snapshot");
  const auto dim = s.params.encoder.dim;
  const Encoder encoder(s.params.encoder);

  nlohmann::json buckets = nlohmann::json::array();
  for (const auto& e : s.catalog) {
    buckets.push_back({{"bucket", e.bucket},
                       {"rows", e.rows},
                       {"spectra", e.spectra},
                       {"mz_low", e.mz_low},
                       {"mz_high", e.mz_high},
                       {"threshold", e.threshold}});
  }
  nlohmann::json catalog{{"format", "herp-snapshot"},
                         {"version", 1},
                         {"encoder", encoder_json(s.params.encoder)},
                         {"link_threshold", s.params.link_threshold},
                         {"device", s.params.device.to_json()},
                         {"buckets", buckets},
                         {"config", cfg.to_json()}};
  write_text(dir / "catalog.json", catalog.dump(2) + "\n");
  write_text(dir / "thresholds.json", s.thresholds.to_json().dump(2) + "\n");
  write_text(dir / "setup_ledger.json", nlohmann::json{{"ledger", s.ledger.to_json()}}.dump(2) + "\n");

  std::vector<Hypervector> consensus;
  std::vector<const ClusterRecord*> recs;
  for (const auto& [b, list] : s.clusters) {
    for (const auto& r : list) {
      consensus.push_back(r.consensus);
      recs.push_back(&r);
    }
  }
  std::ofstream hv(dir / "consensus.hvs", std::ios::binary);
  write_hv_dump(hv, dim, consensus);
  std::ofstream acc(dir / "accumulators.bin", std::ios::binary);
  write_accumulators(acc, dim, recs);
  std::ofstream mh(dir / "members.hvs", std::ios::binary);
  write_hv_dump(mh, dim, s.member_hvs);
  std::ofstream id(dir / "id.codebook", std::ios::binary);
  write_codebook(id, encoder.id_codebook());
  std::ofstream lv(dir / "level.codebook", std::ios::binary);
  write_codebook(lv, encoder.level_codebook());

  std::string members;
  for (const auto& m : s.members) {
    nlohmann::json j{{"spectrum", m.spectrum_id}, {"bucket", m.bucket}, {"cluster", m.cluster}};
    if (m.label) j["label"] = *m.label;
    members += j.dump() + "\n";
  }
  write_text(dir / "members.jsonl", members);
  if (!hv || !acc || !mh || !id || !lv) throw InputError("failed writing snapshot " + dir.string());
  return dir;
}

// A snapshot directory, or a root holding snapshot-NNNN directories (latest wins).
inline fs::path resolve_snapshot(const fs::path& p) {
  if (fs::exists(p / "catalog.json")) return p;
  if (!fs::is_directory(p)) throw InputError("no snapshot at " + p.string());
  std::optional<fs::path> best;
  for (const auto& entry : fs::directory_iterator(p)) {
    const auto name = entry.path().filename().string();
    if (entry.is_directory() && name.rfind("snapshot-", 0) == 0 && fs::exists(entry.path() / "catalog.json")) {
      if (!best || name > best->filename().string()) best = entry.path();
    }
  }
  if (!best) throw InputError("no snapshot at " + p.string());
  return *best;
}

inline SetupResult read_snapshot(const fs::path& where) {
  const auto dir = resolve_snapshot(where);
  SetupResult s;
  try {
    const auto catalog = read_json(dir / "catalog.json");
    if (catalog.at("format") != "herp-snapshot" || catalog.at("version") != 1) {
      throw InputError("unsupported snapshot format in " + dir.string());
    }
    s.params.encoder = encoder_from_json(catalog.at("encoder"));
    s.params.link_threshold = catalog.at("link_threshold");
    const auto& dev = catalog.at("device");
    s.params.device.search_energy_per_bit_fJ = dev.at("search_energy_per_bit_fJ");
    s.params.device.search_latency_ns = dev.at("search_latency_ns");
    s.params.device.write_energy_per_bit_fJ = dev.at("write_energy_per_bit_fJ");
    s.params.device.write_latency_per_row_ns = dev.at("write_latency_per_row_ns");
    s.params.device.operating_voltage_V = dev.at("operating_voltage_V");
    s.params.device.array_rows = dev.at("array_rows");
    s.params.device.array_cols = dev.at("array_cols");
    s.params.device.lta_stage_latency_ns = dev.at("lta_stage_latency_ns");
    s.params.device.lta_stage_energy_fJ = dev.at("lta_stage_energy_fJ");
    s.params.device.decision_latency_ns = dev.at("decision_latency_ns");
    for (const auto& b : catalog.at("buckets")) {
      s.catalog.push_back({b.at("bucket"), b.at("rows"), b.at("spectra"), b.at("mz_low"), b.at("mz_high"),
                           b.at("threshold")});
    }
    s.thresholds = ThresholdModel::from_json(read_json(dir / "thresholds.json"));
    s.params.percentile = s.thresholds.percentile;
    s.params.slack = s.thresholds.slack;
  } catch (const nlohmann::json::exception& e) {
    throw InputError(dir.string() + ": malformed snapshot metadata: " + e.what());
  }
  s.ledger = ledger_from_file(dir / "setup_ledger.json");
  const auto dim = s.params.encoder.dim;

  // The codebooks must be exactly what the stored encoder settings generate.
  const Encoder encoder(s.params.encoder);
  {
    std::ifstream id(dir / "id.codebook", std::ios::binary);
    std::ifstream lv(dir / "level.codebook", std::ios::binary);
    if (!id || !lv) throw InputError("snapshot codebooks missing in " + dir.string());
    const auto id_cb = read_codebook(id);
    const auto lv_cb = read_codebook(lv);
    if (id_cb.entries != encoder.id_codebook().entries || lv_cb.entries != encoder.level_codebook().entries) {
      throw InputError("snapshot codebooks do not match its encoder settings");
    }
  }

  std::ifstream hv(dir / "consensus.hvs", std::ios::binary);
  std::ifstream acc(dir / "accumulators.bin", std::ios::binary);
  if (!hv || !acc) throw InputError("snapshot cluster files missing in " + dir.string());
  const auto consensus = read_hv_dump(hv);
  if (consensus.dim != dim) throw InputError("consensus dump dimension mismatch");
  auto accs = read_accumulators(acc, dim);
  if (accs.size() != consensus.rows.size()) throw InputError("consensus and accumulator counts differ");
  for (std::size_t i = 0; i < accs.size(); ++i) {
    auto& a = accs[i];
    ClusterRecord r{a.id, a.bucket, consensus.rows[i], std::move(a.acc), a.members, a.pending};
    s.clusters[a.bucket].push_back(std::move(r));
  }
  for (const auto& e : s.catalog) {
    if (s.clusters[e.bucket].size() != e.rows) {
      throw InputError("catalog row count mismatch for bucket " + std::to_string(e.bucket));
    }
  }

  for_each_json_line(dir / "members.jsonl", [&](const nlohmann::json& j) {
    PhaseOneMember m{j.at("spectrum"), j.at("bucket"), j.at("cluster"), std::nullopt};
    if (j.contains("label")) m.label = j.at("label").get<std::string>();
    s.members.push_back(std::move(m));
  });
  std::ifstream mh(dir / "members.hvs", std::ios::binary);
  if (!mh) throw InputError("snapshot member vectors missing in " + dir.string());
  auto member_hvs = read_hv_dump(mh);
  if (member_hvs.dim != dim || member_hvs.rows.size() != s.members.size()) {
    throw InputError("member vectors do not match members.jsonl");
  }
  s.member_hvs = std::move(member_hvs.rows);
  return s;
}

inline std::string assignments_jsonl(const std::vector<Assignment>& log) {
  std::string out;
  for (const auto& a : log) out += a.to_json().dump() + "\n";
  return out;
}

inline std::string trace_jsonl(const std::vector<CycleReport>& trace) {
  std::string out;
  for (const auto& c : trace) out += c.to_json().dump() + "\n";
  return out;
}

inline std::string ledger_json(const EnergyLatencyLedger& ledger) {
  return nlohmann::json{{"ledger", ledger.to_json()}}.dump(2) + "\n";
}

// Writes a versioned run directory below `root` and returns it.
inline fs::path write_run(const fs::path& root, const RunResult& r, const RunConfig& cfg, const fs::path& snapshot) {
  const auto dir = next_versioned_dir(root, "run");
  write_text(dir / "assignments.jsonl", assignments_jsonl(r.assignments));
  write_text(dir / "trace.jsonl", trace_jsonl(r.trace));
  write_text(dir / "ledger.json", ledger_json(r.ledger));
  std::string clusters;
  for (const auto& m : r.memberships) {
    nlohmann::json j{{"spectrum", m.spectrum_id}, {"bucket", m.cluster.bucket}, {"cluster", m.cluster.cluster}};
    if (m.label) j["label"] = *m.label;
    clusters += j.dump() + "\n";
  }
  write_text(dir / "clusters.jsonl", clusters);
  write_text(dir / "metrics.json", r.metrics.to_json().dump(2) + "\n");
  if (r.speedup) {
    nlohmann::json sp{{"expansion", r.speedup->expansion.to_json()},
                      {"full_recluster", r.speedup->full_recluster.to_json()},
                      {"ratio", r.speedup->ratio}};
    write_text(dir / "speedup.json", sp.dump(2) + "\n");
  }
  nlohmann::json meta{{"snapshot", snapshot.string()},
                      {"config", cfg.to_json()},
                      {"stats",
                       {{"cycles", r.stats.cycles},
                        {"dispatch_cycles", r.stats.dispatch_cycles},
                        {"dispatches", r.stats.dispatches},
                        {"dispatch_elapsed_ns", r.stats.dispatch_elapsed_ns},
                        {"mean_concurrency", r.stats.mean_concurrency()}}}};
  write_text(dir / "run.json", meta.dump(2) + "\n");
  return dir;
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

struct LatencySummary {
  std::uint64_t cycles = 0;
  std::uint64_t dispatch_cycles = 0;
  std::uint64_t dispatches = 0;
  double parallel_ns = 0.0;  // sum over cycles of the slowest dispatch
  double serial_ns = 0.0;    // sum of all dispatches

  double mean_concurrency() const {
    return dispatch_cycles == 0 ? 0.0 : static_cast<double>(dispatches) / static_cast<double>(dispatch_cycles);
  }
  double speedup() const { return parallel_ns > 0.0 ? serial_ns / parallel_ns : 0.0; }
};

struct RunReport {
  std::size_t assignments = 0;
  std::size_t matches = 0;
  std::size_t new_clusters = 0;
  QualityMetrics quality;
  std::optional<OverlapReport> overlap;
  EnergyLatencyLedger ledger;        // as recorded
  EnergyLatencyLedger trace_total;   // recomputed from per-cycle deltas
  bool ledger_consistent = true;
  LatencySummary latency;
  std::optional<nlohmann::json> speedup;
  std::string config_hash;

  nlohmann::json to_json() const {
    nlohmann::json j{{"assignments", assignments},
                     {"matches", matches},
                     {"new_clusters", new_clusters},
                     {"quality", quality.to_json()},
                     {"energy_nJ",
                      {{"write", ledger.write_fJ * 1e-6},
                       {"search", ledger.search_fJ * 1e-6},
                       {"lta", ledger.lta_fJ * 1e-6},
                       {"transfer", ledger.transfer_fJ * 1e-6},
                       {"total", ledger.total_fJ() * 1e-6}}},
                     {"ledger", ledger.to_json()},
                     {"ledger_matches_trace", ledger_consistent},
                     {"latency",
                      {{"cycles", latency.cycles},
                       {"dispatch_cycles", latency.dispatch_cycles},
                       {"dispatches", latency.dispatches},
                       {"parallel_ns", latency.parallel_ns},
                       {"serial_ns", latency.serial_ns},
                       {"mean_concurrency", latency.mean_concurrency()},
                       {"parallel_speedup", latency.speedup()}}},
                     {"config_hash", config_hash}};
    j["overlap"] = overlap ? overlap->to_json() : nlohmann::json(nullptr);
    j["expansion_speedup"] = speedup ? *speedup : nlohmann::json(nullptr);
    return j;
  }
};

inline bool near(double a, double b) { return std::abs(a - b) <= 1e-9 * std::max({1.0, std::abs(a), std::abs(b)}); }

inline bool ledgers_agree(const EnergyLatencyLedger& a, const EnergyLatencyLedger& b) {
  return near(a.write_fJ, b.write_fJ) && near(a.search_fJ, b.search_fJ) && near(a.lta_fJ, b.lta_fJ) &&
         near(a.transfer_fJ, b.transfer_fJ) && near(a.write_ns, b.write_ns) && near(a.search_ns, b.search_ns) &&
         near(a.lta_ns, b.lta_ns) && near(a.transfer_ns, b.transfer_ns) && near(a.elapsed_ns, b.elapsed_ns) &&
         a.rows_written == b.rows_written && a.searches == b.searches && a.rows_searched == b.rows_searched &&
         a.lta_stages == b.lta_stages && a.memory_loads == b.memory_loads && a.cache_loads == b.cache_loads &&
         a.evictions == b.evictions;
}

inline std::vector<Membership> read_memberships(const fs::path& p) {
  std::vector<Membership> out;
  for_each_json_line(p, [&](const nlohmann::json& j) {
    Membership m{j.at("spectrum"), {j.at("bucket"), j.at("cluster")}, std::nullopt};
    if (j.contains("label")) m.label = j.at("label").get<std::string>();
    out.push_back(std::move(m));
  });
  return out;
}

// Summarizes a run directory. Only assignments.jsonl is required.
inline RunReport build_report(const fs::path& run_dir, const std::optional<fs::path>& compare = std::nullopt) {
  RunReport r;
  for_each_json_line(run_dir / "assignments.jsonl", [&](const nlohmann::json& j) {
    const auto a = Assignment::from_json(j);
    ++r.assignments;
    (a.outcome == Outcome::kMatch ? r.matches : r.new_clusters) += 1;
  });
  if (fs::exists(run_dir / "clusters.jsonl")) r.quality = quality_metrics(read_memberships(run_dir / "clusters.jsonl"));
  if (fs::exists(run_dir / "ledger.json")) r.ledger = ledger_from_file(run_dir / "ledger.json");
  if (fs::exists(run_dir / "trace.jsonl")) {
    for_each_json_line(run_dir / "trace.jsonl", [&](const nlohmann::json& c) {
      ++r.latency.cycles;
      r.trace_total += EnergyLatencyLedger::from_json(c.at("ledger"));
      double slowest = 0.0;
      const auto& d = c.at("dispatches");
      for (const auto& x : d) {
        const double t = x.at("elapsed_ns");
        slowest = std::max(slowest, t);
        r.latency.serial_ns += t;
      }
      if (!d.empty()) {
        ++r.latency.dispatch_cycles;
        r.latency.dispatches += d.size();
      }
      r.latency.parallel_ns += slowest;
    });
    r.ledger_consistent = ledgers_agree(r.ledger, r.trace_total);
  }
  if (fs::exists(run_dir / "speedup.json")) r.speedup = read_json(run_dir / "speedup.json");
  if (fs::exists(run_dir / "run.json")) {
    const auto meta = read_json(run_dir / "run.json");
    if (meta.contains("config")) r.config_hash = meta["config"].value("hash", "");
  }
  if (compare) {
    const auto other = quality_metrics(read_memberships(*compare / "clusters.jsonl"));
    r.overlap = label_overlap(r.quality.majority_labels, other.majority_labels);
  }
  return r;
}

inline std::string report_text(const RunReport& r) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(4);
  os << "assignments        " << r.assignments << " (" << r.matches << " match, " << r.new_clusters << " new)\n";
  if (r.quality.available) {
    os << "clustered ratio    " << r.quality.clustered_ratio << "\n";
    os << "incorrect ratio    " << r.quality.incorrect_ratio << (r.quality.incorrect_defined ? "" : " (undefined)")
       << "\n";
  } else {
    os << "quality            unavailable (unlabelled spectra)\n";
  }
  if (r.overlap) {
    os << "overlap            " << r.overlap->overlap << " (" << r.overlap->a_only << " only here, "
       << r.overlap->b_only << " only there, " << r.overlap->both << " both)\n";
  }
  os << "energy nJ          write " << r.ledger.write_fJ * 1e-6 << "  search " << r.ledger.search_fJ * 1e-6
     << "  lta " << r.ledger.lta_fJ * 1e-6 << "  transfer " << r.ledger.transfer_fJ * 1e-6 << "\n";
  os << "elapsed us         " << r.ledger.elapsed_ns * 1e-3 << "\n";
  os << "dispatch latency   parallel " << r.latency.parallel_ns << " ns, serial " << r.latency.serial_ns
     << " ns, speedup " << r.latency.speedup() << ", mean concurrency " << r.latency.mean_concurrency() << "\n";
  if (r.speedup) os << "expansion speedup  " << r.speedup->value("ratio", 0.0) << "x over full re-clustering\n";
  os << "ledger vs trace    " << (r.ledger_consistent ? "consistent" : "MISMATCH") << "\n";
  return os.str();
}

inline std::string report_csv(const RunReport& r) {
  std::ostringstream os;
  os << "metric,value\n";
  os << "clustered_spectra_ratio," << r.quality.clustered_ratio << "\n";
  os << "incorrect_clustering_ratio," << r.quality.incorrect_ratio << "\n";
  os << "parallel_latency_ns," << r.latency.parallel_ns << "\n";
  os << "serial_latency_ns," << r.latency.serial_ns << "\n";
  os << "parallel_speedup," << r.latency.speedup() << "\n";
  os << "expansion_speedup," << (r.speedup ? r.speedup->value("ratio", 0.0) : 0.0) << "\n";
  os << "energy_total_nJ," << r.ledger.total_fJ() * 1e-6 << "\n";
  return os.str();
}

}  // namespace herp
