#pragma once

// Cluster state and the incremental clustering logic.
//
// Phase-I clusters each bucket with greedy leader clustering, which also
// serves as the full re-clustering oracle. Member-to-consensus distance
// statistics from that pass give each bucket a match threshold. At runtime a
// query matches the nearest consensus row if its distance is within the
// bucket's threshold; otherwise it founds a new cluster whose consensus row
// is appended to the bucket's CAM bank.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "herp/assignment.hpp"
#include "herp/cam.hpp"
#include "herp/error.hpp"
#include "herp/hypervector.hpp"
#include "herp/scheduler.hpp"

namespace herp {

struct ClusterRecord {
  ClusterId id = 0;
  BucketId bucket = 0;
  Hypervector consensus;
  Accumulator accumulator;
  std::uint32_t members = 0;
  std::uint32_t pending_updates = 0;

  static ClusterRecord singleton(BucketId bucket, ClusterId id, const Hypervector& hv) {
    ClusterRecord r{id, bucket, hv, Accumulator(hv.dim()), 1, 0};
    r.accumulator.add(hv);
    return r;
  }
};

// ---------------------------------------------------------------------------
// Phase-I leader clustering
// ---------------------------------------------------------------------------

struct LeaderResult {
  std::vector<ClusterRecord> clusters;
  std::vector<ClusterId> member_cluster;        // per input, in input order
  std::vector<std::size_t> member_distances;    // members of multi-member clusters to their final consensus
  // Cost of running the same pass on a CAM: one search of all current rows per
  // spectrum (when rows exist) and one row write per spectrum (found or refresh).
  std::uint64_t comparisons = 0;    // software comparisons (first hit stops the scan)
  std::uint64_t row_compares = 0;   // CAM row comparisons
  std::uint64_t searches = 0;
  std::uint64_t lta_stages = 0;
  std::uint64_t row_writes = 0;
};

// Each vector joins the first cluster whose consensus lies within
// link_threshold, otherwise founds a new cluster. The joined cluster's
// consensus is re-bundled immediately.
inline LeaderResult initial_cluster(BucketId bucket, std::span<const Hypervector> hvs, std::size_t link_threshold,
                                    const Hypervector& tie_breaker) {
  LeaderResult out;
  out.member_cluster.reserve(hvs.size());
  for (const auto& hv : hvs) {
    if (!out.clusters.empty()) {
      ++out.searches;
      out.row_compares += out.clusters.size();
      out.lta_stages += lta_stages(out.clusters.size());
    }
    std::optional<std::size_t> joined;
    for (std::size_t c = 0; c < out.clusters.size(); ++c) {
      ++out.comparisons;
      if (hamming(out.clusters[c].consensus, hv) <= link_threshold) {
        joined = c;
        break;
      }
    }
    if (joined) {
      auto& rec = out.clusters[*joined];
      rec.accumulator.add(hv);
      rec.consensus = bundle(rec.accumulator, tie_breaker);
      ++rec.members;
      out.member_cluster.push_back(rec.id);
    } else {
      const auto id = static_cast<ClusterId>(out.clusters.size());
      out.clusters.push_back(ClusterRecord::singleton(bucket, id, hv));
      out.member_cluster.push_back(id);
    }
    ++out.row_writes;
  }
  for (std::size_t i = 0; i < hvs.size(); ++i) {
    const auto& rec = out.clusters[static_cast<std::size_t>(out.member_cluster[i])];
    if (rec.members >= 2) out.member_distances.push_back(hamming(rec.consensus, hvs[i]));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Thresholds
// ---------------------------------------------------------------------------

struct BucketStats {
  std::size_t cluster_count = 0;
  std::vector<std::size_t> distances;  // member-to-consensus, multi-member clusters only
};

inline BucketStats bucket_stats(const LeaderResult& r) { return {r.clusters.size(), r.member_distances}; }

// Nearest-rank percentile: the ceil(p/100 * n)-th smallest value.
inline std::size_t nearest_rank_percentile(std::vector<std::size_t> values, double p) {
  if (values.empty()) throw ConfigError("percentile of an empty set");
  if (!(p > 0.0 && p <= 100.0)) throw ConfigError("percentile must lie in (0, 100]");
  std::sort(values.begin(), values.end());
  auto rank = static_cast<std::size_t>(std::ceil(p / 100.0 * static_cast<double>(values.size()) - 1e-9));
  rank = std::clamp<std::size_t>(rank, 1, values.size());
  return values[rank - 1];
}

struct ThresholdModel {
  std::size_t dim = kDefaultDim;
  double percentile = 95.0;
  double slack = 1.0;
  std::size_t global = 0;
  std::map<BucketId, std::size_t> per_bucket;

  std::size_t threshold(BucketId b) const {
    auto it = per_bucket.find(b);
    return it == per_bucket.end() ? global : it->second;
  }

  nlohmann::json to_json() const {
    nlohmann::json buckets = nlohmann::json::object();
    for (const auto& [b, t] : per_bucket) buckets[std::to_string(b)] = t;
    return {{"dim", dim}, {"percentile", percentile}, {"slack", slack}, {"global", global}, {"per_bucket", buckets}};
  }

  static ThresholdModel from_json(const nlohmann::json& j) {
    ThresholdModel m;
    m.dim = j.at("dim");
    m.percentile = j.at("percentile");
    m.slack = j.at("slack");
    m.global = j.at("global");
    for (const auto& [k, v] : j.at("per_bucket").items()) m.per_bucket[std::stoll(k)] = v.get<std::size_t>();
    return m;
  }
};

inline constexpr std::size_t kMinClustersForBucketThreshold = 3;

// tau_b = slack * p-th percentile of bucket b's member-to-consensus distances,
// clamped to [1, D-1]. Buckets with fewer than 3 clusters (or no multi-member
// cluster) use the pooled global threshold.
inline ThresholdModel fit_threshold(const std::map<BucketId, BucketStats>& stats, double p, double slack,
                                    std::size_t dim) {
  if (stats.empty()) throw ConfigError("fit_threshold: no Phase-I statistics");
  if (!(slack > 0.0)) throw ConfigError("fit_threshold: slack must be positive");
  if (dim < 2) throw ConfigError("fit_threshold: dimension too small");
  auto scaled = [&](std::size_t v) {
    const auto t = static_cast<long long>(std::llround(slack * static_cast<double>(v)));
    return static_cast<std::size_t>(std::clamp<long long>(t, 1, static_cast<long long>(dim) - 1));
  };
  ThresholdModel m;
  m.dim = dim;
  m.percentile = p;
  m.slack = slack;
  std::vector<std::size_t> pooled;
  for (const auto& [b, s] : stats) pooled.insert(pooled.end(), s.distances.begin(), s.distances.end());
  if (pooled.empty()) throw ConfigError("fit_threshold: Phase-I produced no multi-member clusters");
  m.global = scaled(nearest_rank_percentile(pooled, p));
  for (const auto& [b, s] : stats) {
    if (s.cluster_count >= kMinClustersForBucketThreshold && !s.distances.empty()) {
      m.per_bucket[b] = scaled(nearest_rank_percentile(s.distances, p));
    }
  }
  return m;
}

// ---------------------------------------------------------------------------
// Runtime decisions
// ---------------------------------------------------------------------------

inline constexpr std::uint32_t kNeverRewrite = 0;

// LTA over the search result and threshold comparison. A NEW_CLUSTER outcome
// carries the nearest distance; its cluster id is assigned by expand().
inline Assignment process_query(const QueryRecord& q, const CamBank& bank, const SearchResult* result,
                                const ThresholdModel& thresholds, const DeviceParams& device,
                                EnergyLatencyLedger& ledger, double* elapsed_ns = nullptr) {
  Assignment a{q.spectrum_id, q.bucket, -1, Outcome::kNewCluster, std::nullopt, q.label};
  if (bank.empty() || result == nullptr) return a;
  if (result->rows.size() != bank.row_count()) throw InvariantError("process_query: stale search result");
  const double lta_before = ledger.lta_ns;
  const auto winner = lta_select(*result, device, ledger);
  if (elapsed_ns) *elapsed_ns += ledger.lta_ns - lta_before;
  const auto& row = result->rows[winner.index];
  a.distance = row.distance;
  if (row.distance <= thresholds.threshold(q.bucket)) {
    a.outcome = Outcome::kMatch;
    a.cluster = bank.cluster_of_row(row.row);
  }
  return a;
}

// New cluster seeded by the query; its row is appended to the bank.
inline ClusterRecord expand(BucketId bucket, ClusterId id, const Hypervector& q, CamBank& bank,
                            const DeviceParams& device, EnergyLatencyLedger& ledger, double* elapsed_ns = nullptr) {
  auto rec = ClusterRecord::singleton(bucket, id, q);
  const std::vector<std::pair<ClusterId, Hypervector>> row{{id, q}};
  const double t = write_rows(bank, row, device, ledger);
  if (elapsed_ns) *elapsed_ns += t;
  return rec;
}

// Adds a matched query to its cluster. Every rewrite_period-th pending update
// re-bundles the consensus and rewrites its CAM row; kNeverRewrite freezes it.
inline void update_consensus(ClusterRecord& rec, const Hypervector& q, std::uint32_t rewrite_period,
                             const Hypervector& tie_breaker, CamBank& bank, const DeviceParams& device,
                             EnergyLatencyLedger& ledger, double* elapsed_ns = nullptr) {
  rec.accumulator.add(q);
  ++rec.members;
  ++rec.pending_updates;
  if (rewrite_period != kNeverRewrite && rec.pending_updates >= rewrite_period) {
    rec.consensus = bundle(rec.accumulator, tie_breaker);
    const auto row = bank.row_of_cluster(rec.id);
    if (!row) throw InvariantError("update_consensus: cluster " + std::to_string(rec.id) + " not stored in bank");
    const double t = rewrite_row(bank, *row, rec.consensus, device, ledger);
    if (elapsed_ns) *elapsed_ns += t;
    rec.pending_updates = 0;
  }
}

struct EngineConfig {
  std::uint32_t rewrite_period = 16;
  CurrentModel model;
  DeviceParams device;
};

class ClusterEngine : public DispatchTarget {
 public:
  ClusterEngine(std::size_t dim, Hypervector tie_breaker, ThresholdModel thresholds, EngineConfig cfg)
      : dim_(dim), tie_breaker_(std::move(tie_breaker)), thresholds_(std::move(thresholds)), cfg_(std::move(cfg)) {
    if (tie_breaker_.dim() != dim_) throw ConfigError("engine: tie-breaker dimension mismatch");
    if (thresholds_.dim != dim_) throw ConfigError("engine: threshold model dimension mismatch");
    if (cfg_.model.mode == CurrentMode::kParasitic && !cfg_.model.calibrated() && cfg_.model.alpha < 0.0) {
      throw ConfigError("engine: negative alpha");
    }
  }

  // Installs Phase-I clusters for a bucket; ids must be 0..n-1 in order.
  void add_bucket(BucketId b, std::vector<ClusterRecord> records) {
    for (std::size_t i = 0; i < records.size(); ++i) {
      if (records[i].id != static_cast<ClusterId>(i) || records[i].bucket != b) {
        throw InvariantError("engine: cluster ids of bucket " + std::to_string(b) + " are not dense");
      }
    }
    clusters_[b] = std::move(records);
  }

  const std::map<BucketId, std::vector<ClusterRecord>>& clusters() const noexcept { return clusters_; }
  const ThresholdModel& thresholds() const noexcept { return thresholds_; }
  const std::vector<Assignment>& log() const noexcept { return log_; }
  const EngineConfig& config() const noexcept { return cfg_; }

  std::vector<BucketId> buckets() const override {
    std::vector<BucketId> out;
    for (const auto& [b, recs] : clusters_) out.push_back(b);
    return out;
  }

  std::size_t row_count(BucketId b) const override {
    auto it = clusters_.find(b);
    return it == clusters_.end() ? 0 : it->second.size();
  }

  std::vector<std::pair<ClusterId, Hypervector>> rows(BucketId b) const override {
    std::vector<std::pair<ClusterId, Hypervector>> out;
    if (auto it = clusters_.find(b); it != clusters_.end()) {
      out.reserve(it->second.size());
      for (const auto& rec : it->second) out.emplace_back(rec.id, rec.consensus);
    }
    return out;
  }

  DispatchResult dispatch(const QueryRecord& q, CamBank& bank, EnergyLatencyLedger& ledger,
                          const std::function<void(CamBank&)>& make_room) override {
    if (q.hv.dim() != dim_) throw ConfigError("engine: query dimension mismatch");
    if (bank.bucket_id() != q.bucket) throw InvariantError("engine: query dispatched to the wrong bank");
    auto& records = clusters_[q.bucket];
    if (records.size() != bank.row_count()) throw InvariantError("engine: bank out of sync with cluster records");

    double elapsed = 0.0;
    std::optional<SearchResult> result;
    if (!bank.empty()) {
      result = search(bank, q.hv, cfg_.model, cfg_.device, ledger);
      elapsed += result->elapsed_ns;
    }
    Assignment a = process_query(q, bank, result ? &*result : nullptr, thresholds_, cfg_.device, ledger, &elapsed);

    double written = 0.0;
    if (a.outcome == Outcome::kMatch) {
      auto& rec = records.at(static_cast<std::size_t>(a.cluster));
      update_consensus(rec, q.hv, cfg_.rewrite_period, tie_breaker_, bank, cfg_.device, ledger, &written);
    } else {
      make_room(bank);
      const auto id = static_cast<ClusterId>(records.size());
      records.push_back(expand(q.bucket, id, q.hv, bank, cfg_.device, ledger, &written));
      a.cluster = id;
    }
    log_.push_back(a);
    return {std::move(a), elapsed, written};
  }

 private:
  std::size_t dim_;
  Hypervector tie_breaker_;
  ThresholdModel thresholds_;
  EngineConfig cfg_;
  std::map<BucketId, std::vector<ClusterRecord>> clusters_;
  std::vector<Assignment> log_;
};

// ---------------------------------------------------------------------------
// Quality metrics
// ---------------------------------------------------------------------------

struct ClusterKey {
  BucketId bucket = 0;
  ClusterId cluster = 0;
  friend auto operator<=>(const ClusterKey&, const ClusterKey&) = default;
};

struct Membership {
  std::string spectrum_id;
  ClusterKey cluster;
  std::optional<std::string> label;
};

struct QualityMetrics {
  bool available = false;            // every spectrum carries a label
  std::size_t total = 0;
  std::size_t clustered = 0;         // spectra in clusters of size >= 2
  std::size_t incorrect = 0;         // clustered spectra disagreeing with their cluster's majority label
  double clustered_ratio = 0.0;
  double incorrect_ratio = 0.0;
  bool incorrect_defined = false;    // false when nothing is clustered (ratio reported as 0)
  std::size_t clusters = 0;
  std::set<std::string> majority_labels;  // of clusters with size >= 2

  nlohmann::json to_json() const {
    return {{"available", available},
            {"total", total},
            {"clusters", clusters},
            {"clustered", clustered},
            {"incorrect", incorrect},
            {"clustered_spectra_ratio", clustered_ratio},
            {"incorrect_clustering_ratio", incorrect_ratio},
            {"incorrect_ratio_defined", incorrect_defined}};
  }
};

inline QualityMetrics quality_metrics(const std::vector<Membership>& members) {
  QualityMetrics m;
  m.total = members.size();
  m.available = !members.empty() &&
                std::all_of(members.begin(), members.end(), [](const Membership& x) { return x.label.has_value(); });

  std::map<ClusterKey, std::map<std::string, std::size_t>> by_cluster;
  std::map<ClusterKey, std::size_t> sizes;
  for (const auto& x : members) {
    ++sizes[x.cluster];
    if (x.label) ++by_cluster[x.cluster][*x.label];
  }
  m.clusters = sizes.size();
  for (const auto& [key, size] : sizes) {
    if (size < 2) continue;
    m.clustered += size;
    if (!m.available) continue;
    const auto& counts = by_cluster[key];
    // Most frequent label; ties go to the lexicographically smallest.
    auto best = counts.begin();
    for (auto it = counts.begin(); it != counts.end(); ++it) {
      if (it->second > best->second) best = it;
    }
    m.majority_labels.insert(best->first);
    m.incorrect += size - best->second;
  }
  if (m.total > 0) m.clustered_ratio = static_cast<double>(m.clustered) / static_cast<double>(m.total);
  if (m.available && m.clustered > 0) {
    m.incorrect_defined = true;
    m.incorrect_ratio = static_cast<double>(m.incorrect) / static_cast<double>(m.clustered);
  }
  if (!m.available) m.incorrect = 0;
  return m;
}

struct OverlapReport {
  std::size_t a_only = 0;
  std::size_t b_only = 0;
  std::size_t both = 0;
  double overlap = 0.0;  // |A & B| / |A | B|

  nlohmann::json to_json() const {
    return {{"a_only", a_only}, {"b_only", b_only}, {"both", both}, {"overlap", overlap}};
  }
};

inline OverlapReport label_overlap(const std::set<std::string>& a, const std::set<std::string>& b) {
  OverlapReport r;
  for (const auto& x : a) (b.contains(x) ? r.both : r.a_only) += 1;
  for (const auto& x : b) {
    if (!a.contains(x)) ++r.b_only;
  }
  const std::size_t uni = r.a_only + r.b_only + r.both;
  r.overlap = uni == 0 ? 1.0 : static_cast<double>(r.both) / static_cast<double>(uni);
  return r;
}

// Adjusted Rand index between two labelings of the same items.
template <typename A, typename B>
double adjusted_rand_index(std::span<const A> truth, std::span<const B> pred) {
  if (truth.size() != pred.size()) throw ConfigError("adjusted_rand_index: size mismatch");
  const std::size_t n = truth.size();
  if (n < 2) return 1.0;
  auto c2 = [](double x) { return x * (x - 1.0) / 2.0; };
  std::map<std::pair<A, B>, std::size_t> cells;
  std::map<A, std::size_t> rows;
  std::map<B, std::size_t> cols;
  for (std::size_t i = 0; i < n; ++i) {
    ++cells[{truth[i], pred[i]}];
    ++rows[truth[i]];
    ++cols[pred[i]];
  }
  double index = 0, sum_rows = 0, sum_cols = 0;
  for (const auto& [k, v] : cells) index += c2(static_cast<double>(v));
  for (const auto& [k, v] : rows) sum_rows += c2(static_cast<double>(v));
  for (const auto& [k, v] : cols) sum_cols += c2(static_cast<double>(v));
  const double expected = sum_rows * sum_cols / c2(static_cast<double>(n));
  const double max_index = 0.5 * (sum_rows + sum_cols);
  if (max_index == expected) return 1.0;
  return (index - expected) / (max_index - expected);
}

// ---------------------------------------------------------------------------
// Incremental expansion vs full re-clustering cost
// ---------------------------------------------------------------------------

enum class ClusteringMode { kExpansion, kFullRecluster };

struct SpeedupBucket {
  std::vector<Hypervector> initial;  // already clustered (Phase-I)
  std::vector<Hypervector> queries;  // arrival order
};

struct SpeedupWorkload {
  std::vector<SpeedupBucket> buckets;
  std::size_t link_threshold = 0;
  double percentile = 95.0;
  double slack = 1.0;
  Hypervector tie_breaker;
};

struct CostReport {
  std::uint64_t queries = 0;
  std::uint64_t outliers = 0;
  std::uint64_t searches = 0;
  std::uint64_t comparisons = 0;  // stored rows compared against a query
  std::uint64_t row_writes = 0;
  std::uint64_t lta_stages = 0;
  double latency_ns = 0.0;

  nlohmann::json to_json() const {
    return {{"queries", queries},       {"outliers", outliers},     {"searches", searches},
            {"comparisons", comparisons}, {"row_writes", row_writes}, {"lta_stages", lta_stages},
            {"latency_ns", latency_ns}};
  }
};

// Both modes search each query against the bucket's current consensus rows
// and make the same threshold decision. On an outlier EXPANSION writes one row;
// FULL_RECLUSTER re-runs leader clustering over every spectrum seen in the
// bucket, each step costing a CAM search of the rows built so far plus a row write.
inline CostReport modeled_cost(const SpeedupWorkload& w, ClusteringMode mode, const DeviceParams& device) {
  const std::size_t dim = w.tie_breaker.dim();
  std::map<BucketId, BucketStats> stats;
  std::vector<LeaderResult> phase1;
  for (std::size_t b = 0; b < w.buckets.size(); ++b) {
    phase1.push_back(initial_cluster(static_cast<BucketId>(b), w.buckets[b].initial, w.link_threshold, w.tie_breaker));
    stats[static_cast<BucketId>(b)] = bucket_stats(phase1.back());
  }
  const auto thresholds = fit_threshold(stats, w.percentile, w.slack, dim);

  CostReport cost;
  for (std::size_t b = 0; b < w.buckets.size(); ++b) {
    const auto bucket = static_cast<BucketId>(b);
    std::vector<Hypervector> rows;
    for (const auto& rec : phase1[b].clusters) rows.push_back(rec.consensus);
    std::vector<Hypervector> seen(w.buckets[b].initial.begin(), w.buckets[b].initial.end());
    const std::size_t tau = thresholds.threshold(bucket);

    for (const auto& q : w.buckets[b].queries) {
      ++cost.queries;
      std::size_t best = std::numeric_limits<std::size_t>::max();
      if (!rows.empty()) {
        ++cost.searches;
        cost.comparisons += rows.size();
        cost.lta_stages += lta_stages(rows.size());
        for (const auto& r : rows) best = std::min(best, hamming(r, q));
      }
      seen.push_back(q);
      if (!rows.empty() && best <= tau) continue;

      ++cost.outliers;
      if (mode == ClusteringMode::kExpansion) {
        rows.push_back(q);
        ++cost.row_writes;
      } else {
        auto redo = initial_cluster(bucket, seen, w.link_threshold, w.tie_breaker);
        cost.searches += redo.searches;
        cost.comparisons += redo.row_compares;
        cost.lta_stages += redo.lta_stages;
        cost.row_writes += redo.row_writes;
        rows.clear();
        for (const auto& rec : redo.clusters) rows.push_back(rec.consensus);
      }
    }
  }
  cost.latency_ns = static_cast<double>(cost.searches) * (device.search_latency_ns + device.decision_latency_ns) +
                    static_cast<double>(cost.lta_stages) * device.lta_stage_latency_ns +
                    static_cast<double>(cost.row_writes) * device.write_latency_per_row_ns;
  return cost;
}

struct SpeedupReport {
  CostReport expansion;
  CostReport full_recluster;
  double ratio = 1.0;  // full_recluster latency / expansion latency
};

inline SpeedupReport compare_speedup(const SpeedupWorkload& w, const DeviceParams& device) {
  SpeedupReport r;
  r.expansion = modeled_cost(w, ClusteringMode::kExpansion, device);
  r.full_recluster = modeled_cost(w, ClusteringMode::kFullRecluster, device);
  r.ratio = r.expansion.latency_ns > 0.0 ? r.full_recluster.latency_ns / r.expansion.latency_ns : 1.0;
  return r;
}

}  // namespace herp
