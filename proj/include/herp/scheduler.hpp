#pragma once

// Bucket-parallel query scheduling over a finite pool of CAM arrays.
//
// Queries wait in per-bucket FIFOs. Each cycle every resident bucket with a
// pending query dispatches exactly one; those searches are concurrent, so a
// parallel cycle costs the slowest dispatch while serial mode pays their sum.
// Buckets that are not resident are loaded from the bucket cache or from
// main memory; when the arrays are full the least frequently used buckets are
// evicted (fewer rows first on equal frequency). A bucket loaded in a cycle
// does not dispatch until the next one.

#include <algorithm>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "herp/assignment.hpp"
#include "herp/cam.hpp"
#include "herp/error.hpp"

namespace herp {

enum class DispatchMode { kParallel, kSerial };

inline const char* to_string(DispatchMode m) { return m == DispatchMode::kParallel ? "parallel" : "serial"; }

struct SchedulerConfig {
  std::uint64_t cam_capacity_bits = 512ull * 1024 * 1024 * 8;  // 512 MB of CAM
  std::uint64_t cache_capacity_rows = 1ull << 20;
  DispatchMode mode = DispatchMode::kParallel;
  double cache_ns_per_row = 0.5;
  double memory_bandwidth_GBps = 16.0;  // 1 GB/s == 1 byte/ns
  double memory_latency_ns = 100.0;
  double transfer_energy_fJ_per_byte = 0.0;

  void validate() const {
    if (cam_capacity_bits == 0) throw ConfigError("scheduler: CAM capacity must be positive");
    if (!(memory_bandwidth_GBps > 0) || memory_latency_ns < 0 || cache_ns_per_row < 0 ||
        transfer_energy_fJ_per_byte < 0) {
      throw ConfigError("scheduler: transfer costs must be non-negative with positive bandwidth");
    }
  }
};

struct DispatchResult {
  Assignment assignment;
  double elapsed_ns = 0.0;  // search, LTA and decision
  double write_ns = 0.0;    // row appends and consensus rewrites that follow
};

// Implemented by the cluster engine: the source of bucket rows and the
// per-query decision logic.
class DispatchTarget {
 public:
  virtual ~DispatchTarget() = default;
  virtual std::vector<BucketId> buckets() const = 0;
  virtual std::size_t row_count(BucketId bucket) const = 0;
  virtual std::vector<std::pair<ClusterId, Hypervector>> rows(BucketId bucket) const = 0;
  // make_room(bank) must be called before appending a row to a full bank.
  virtual DispatchResult dispatch(const QueryRecord& query, CamBank& bank, EnergyLatencyLedger& ledger,
                                  const std::function<void(CamBank&)>& make_room) = 0;
};

enum class LoadSource { kCache, kMemory };

inline const char* to_string(LoadSource s) { return s == LoadSource::kCache ? "cache" : "memory"; }

struct LoadEvent {
  BucketId bucket = 0;
  LoadSource source = LoadSource::kMemory;
  std::size_t rows = 0;
  double elapsed_ns = 0.0;
};

struct CycleReport {
  std::uint64_t cycle = 0;
  double elapsed_ns = 0.0;
  double dispatch_elapsed_ns = 0.0;  // search path only
  std::vector<Assignment> dispatches;
  std::vector<double> dispatch_ns;  // per dispatch search path, same order
  std::vector<double> write_ns;     // per dispatch row writes, same order
  std::vector<BucketId> evictions;
  std::vector<LoadEvent> loads;
  std::vector<BucketId> grown;
  EnergyLatencyLedger delta;

  nlohmann::json to_json() const {
    nlohmann::json d = nlohmann::json::array();
    for (std::size_t i = 0; i < dispatches.size(); ++i) {
      auto a = dispatches[i].to_json();
      a["elapsed_ns"] = dispatch_ns.at(i);
      a["write_ns"] = write_ns.at(i);
      d.push_back(std::move(a));
    }
    nlohmann::json l = nlohmann::json::array();
    for (const auto& e : loads) {
      l.push_back({{"bucket", e.bucket}, {"source", to_string(e.source)}, {"rows", e.rows}, {"elapsed_ns", e.elapsed_ns}});
    }
    return {{"cycle", cycle},         {"elapsed_ns", elapsed_ns}, {"dispatch_elapsed_ns", dispatch_elapsed_ns},
            {"dispatches", d},        {"evictions", evictions},   {"loads", l},
            {"grown", grown},         {"ledger", delta.to_json()}};
  }
};

inline EnergyLatencyLedger ledger_delta(const EnergyLatencyLedger& after, const EnergyLatencyLedger& before) {
  EnergyLatencyLedger d;
  d.write_fJ = after.write_fJ - before.write_fJ;
  d.search_fJ = after.search_fJ - before.search_fJ;
  d.lta_fJ = after.lta_fJ - before.lta_fJ;
  d.transfer_fJ = after.transfer_fJ - before.transfer_fJ;
  d.write_ns = after.write_ns - before.write_ns;
  d.search_ns = after.search_ns - before.search_ns;
  d.lta_ns = after.lta_ns - before.lta_ns;
  d.transfer_ns = after.transfer_ns - before.transfer_ns;
  d.elapsed_ns = after.elapsed_ns - before.elapsed_ns;
  d.rows_written = after.rows_written - before.rows_written;
  d.write_ops = after.write_ops - before.write_ops;
  d.searches = after.searches - before.searches;
  d.rows_searched = after.rows_searched - before.rows_searched;
  d.lta_ops = after.lta_ops - before.lta_ops;
  d.lta_stages = after.lta_stages - before.lta_stages;
  d.cache_loads = after.cache_loads - before.cache_loads;
  d.memory_loads = after.memory_loads - before.memory_loads;
  d.transfer_rows = after.transfer_rows - before.transfer_rows;
  d.transfer_bytes = after.transfer_bytes - before.transfer_bytes;
  d.evictions = after.evictions - before.evictions;
  return d;
}

struct SchedulerStats {
  std::uint64_t cycles = 0;
  std::uint64_t dispatch_cycles = 0;  // cycles that dispatched at least one query
  std::uint64_t dispatches = 0;
  double dispatch_elapsed_ns = 0.0;   // wall time spent in search/decision phases

  double mean_concurrency() const {
    return dispatch_cycles == 0 ? 0.0 : static_cast<double>(dispatches) / static_cast<double>(dispatch_cycles);
  }
};

class Scheduler {
 public:
  Scheduler(SchedulerConfig cfg, DeviceParams device, std::size_t dim)
      : cfg_(cfg), device_(device), dim_(dim) {
    cfg_.validate();
    device_.validate();
    if (dim_ == 0 || dim_ % device_.array_cols != 0) throw ConfigError("scheduler: D must be a multiple of the array width");
    capacity_arrays_ = cfg_.cam_capacity_bits / (device_.array_rows * device_.array_cols);
  }

  const SchedulerConfig& config() const noexcept { return cfg_; }
  const SchedulerStats& stats() const noexcept { return stats_; }
  std::uint64_t capacity_arrays() const noexcept { return capacity_arrays_; }
  std::uint64_t arrays_in_use() const noexcept { return arrays_used_; }
  std::uint64_t admitted() const noexcept { return admitted_; }
  std::uint64_t dispatched() const noexcept { return stats_.dispatches; }

  std::uint64_t pending() const {
    std::uint64_t n = 0;
    for (const auto& [b, q] : fifo_) n += q.size();
    return n;
  }

  bool is_resident(BucketId b) const { return resident_.contains(b); }
  bool is_cached(BucketId b) const { return cache_.contains(b); }
  const CamBank* bank(BucketId b) const {
    auto it = resident_.find(b);
    return it == resident_.end() ? nullptr : &it->second;
  }
  std::vector<BucketId> resident_buckets() const {
    std::vector<BucketId> out;
    for (const auto& [b, bank] : resident_) out.push_back(b);
    return out;
  }
  std::uint64_t frequency(BucketId b) const {
    auto it = freq_.find(b);
    return it == freq_.end() ? 0 : it->second;
  }
  const std::deque<QueryRecord>* fifo(BucketId b) const {
    auto it = fifo_.find(b);
    return it == fifo_.end() ? nullptr : &it->second;
  }

  // Appends each query to its bucket FIFO in arrival order.
  void admit(std::vector<QueryRecord> queries) {
    for (auto& q : queries) {
      ++admitted_;
      fifo_[q.bucket].push_back(std::move(q));
    }
  }

  // Initial residency: smallest buckets first, loaded from main memory while
  // they fit without eviction. Reported as cycle 0.
  CycleReport preload(DispatchTarget& target, EnergyLatencyLedger& ledger) {
    const auto before = ledger;
    CycleReport report;
    report.cycle = 0;
    auto order = target.buckets();
    std::stable_sort(order.begin(), order.end(), [&](BucketId a, BucketId b) {
      const auto ra = target.row_count(a);
      const auto rb = target.row_count(b);
      return ra != rb ? ra < rb : a < b;
    });
    double load_ns = 0.0;
    for (BucketId b : order) {
      if (resident_.contains(b)) continue;
      if (arrays_for_rows(target.row_count(b)) > free_arrays()) break;
      auto ev = load(b, target, ledger);
      load_ns += ev.elapsed_ns;
      report.loads.push_back(ev);
    }
    finish_cycle(report, 0.0, 0.0, load_ns, ledger, before);
    return report;
  }

  // Makes `bucket` resident, evicting LFU buckets outside `pinned` when needed.
  // Returns the load event, or nothing if the bucket was already resident or
  // could not be made to fit around the pinned set.
  std::optional<LoadEvent> ensure_resident(BucketId bucket, DispatchTarget& target, EnergyLatencyLedger& ledger,
                                           const std::set<BucketId>& pinned = {},
                                           std::vector<BucketId>* evicted = nullptr) {
    if (resident_.contains(bucket)) return std::nullopt;
    const auto needed = arrays_for_rows(target.row_count(bucket));
    if (needed > capacity_arrays_) {
      throw ConfigError("bucket " + std::to_string(bucket) + " needs " + std::to_string(needed) +
                        " arrays but the CAM holds only " + std::to_string(capacity_arrays_));
    }
    if (!make_free(needed, pinned, ledger, evicted)) return std::nullopt;
    return load(bucket, target, ledger);
  }

  // One scheduling cycle.
  CycleReport step(DispatchTarget& target, EnergyLatencyLedger& ledger) {
    const auto before = ledger;
    CycleReport report;
    report.cycle = ++cycle_;

    std::set<BucketId> dispatching;
    for (const auto& [b, q] : fifo_) {
      if (!q.empty() && resident_.contains(b)) dispatching.insert(b);
    }

    // Waiting buckets, most pending queries first.
    std::vector<BucketId> waiting;
    for (const auto& [b, q] : fifo_) {
      if (!q.empty() && !resident_.contains(b)) waiting.push_back(b);
    }
    std::stable_sort(waiting.begin(), waiting.end(),
                     [&](BucketId a, BucketId b) { return fifo_.at(a).size() > fifo_.at(b).size(); });

    std::set<BucketId> pinned = dispatching;
    double load_ns = 0.0;
    for (BucketId b : waiting) {
      if (arrays_for_rows(target.row_count(b)) > free_arrays()) continue;
      auto ev = load(b, target, ledger);
      load_ns += ev.elapsed_ns;
      report.loads.push_back(ev);
      pinned.insert(b);
    }
    if (dispatching.empty() && report.loads.empty() && !waiting.empty()) {
      auto ev = ensure_resident(waiting.front(), target, ledger, pinned, &report.evictions);
      if (!ev) throw InvariantError("scheduler: could not load bucket " + std::to_string(waiting.front()));
      load_ns += ev->elapsed_ns;
      report.loads.push_back(*ev);
      pinned.insert(waiting.front());
    }

    auto make_room = [&](CamBank& bank) {
      if (bank.row_count() < bank.capacity_rows()) return;
      const std::uint64_t extra = bank.col_slices();
      // Buckets already served this cycle are fair game; last resort pins only the grower.
      if (!make_free(extra, pinned, ledger, &report.evictions) &&
          !make_free(extra, {bank.bucket_id()}, ledger, &report.evictions)) {
        throw ConfigError("CAM capacity exhausted: bucket " + std::to_string(bank.bucket_id()) +
                          " cannot grow by " + std::to_string(extra) + " arrays");
      }
      bank.set_row_slices(bank.row_slices() + 1);
      arrays_used_ += extra;
      report.grown.push_back(bank.bucket_id());
    };

    double dispatch_max = 0.0, dispatch_sum = 0.0;
    double busy_max = 0.0, busy_sum = 0.0;
    for (BucketId b : dispatching) {
      auto& queue = fifo_.at(b);
      QueryRecord q = std::move(queue.front());
      queue.pop_front();
      ++freq_[b];
      auto result = target.dispatch(q, resident_.at(b), ledger, make_room);
      dispatch_max = std::max(dispatch_max, result.elapsed_ns);
      dispatch_sum += result.elapsed_ns;
      busy_max = std::max(busy_max, result.elapsed_ns + result.write_ns);
      busy_sum += result.elapsed_ns + result.write_ns;
      report.dispatch_ns.push_back(result.elapsed_ns);
      report.write_ns.push_back(result.write_ns);
      report.dispatches.push_back(std::move(result.assignment));
      pinned.erase(b);
    }
    stats_.dispatches += dispatching.size();
    if (!dispatching.empty()) ++stats_.dispatch_cycles;

    const bool parallel = cfg_.mode == DispatchMode::kParallel;
    const double dispatch_ns = parallel ? dispatch_max : dispatch_sum;
    const double busy_ns = parallel ? busy_max : busy_sum;
    finish_cycle(report, dispatch_ns, busy_ns, load_ns, ledger, before);
    return report;
  }

  // Steps until every FIFO is drained.
  std::vector<CycleReport> run(DispatchTarget& target, EnergyLatencyLedger& ledger) {
    std::vector<CycleReport> reports;
    while (pending() > 0) reports.push_back(step(target, ledger));
    return reports;
  }

  void check_invariants() const {
    std::uint64_t arrays = 0;
    for (const auto& [b, bank] : resident_) {
      if (bank.row_slices() != ceil_div(bank.row_count(), device_.array_rows)) {
        throw InvariantError("bucket " + std::to_string(b) + " holds more arrays than its rows need");
      }
      arrays += bank.arrays();
    }
    if (arrays != arrays_used_) throw InvariantError("array accounting drifted");
    if (arrays_used_ > capacity_arrays_) throw InvariantError("CAM capacity exceeded");
    if (arrays_used_ * device_.array_rows * device_.array_cols > cfg_.cam_capacity_bits) {
      throw InvariantError("CAM capacity in bits exceeded");
    }
    if (cache_rows_ > cfg_.cache_capacity_rows) throw InvariantError("bucket cache over capacity");
    if (stats_.dispatches + pending() != admitted_) throw InvariantError("queries lost or duplicated");
  }

 private:
  std::uint64_t free_arrays() const noexcept { return capacity_arrays_ - arrays_used_; }

  std::uint64_t arrays_for_rows(std::size_t rows) const {
    return ceil_div(rows, device_.array_rows) * (dim_ / device_.array_cols);
  }

  // Evicts LFU buckets outside `pinned` until `needed` arrays are free.
  bool make_free(std::uint64_t needed, const std::set<BucketId>& pinned, EnergyLatencyLedger& ledger,
                 std::vector<BucketId>* evicted) {
    if (needed <= free_arrays()) return true;
    std::vector<BucketId> candidates;
    std::uint64_t reclaimable = 0;
    for (const auto& [b, bank] : resident_) {
      if (pinned.contains(b)) continue;
      candidates.push_back(b);
      reclaimable += bank.arrays();
    }
    if (free_arrays() + reclaimable < needed) return false;
    std::sort(candidates.begin(), candidates.end(), [&](BucketId a, BucketId b) {
      const auto fa = frequency(a), fb = frequency(b);
      if (fa != fb) return fa < fb;
      const auto ra = resident_.at(a).row_count(), rb = resident_.at(b).row_count();
      return ra != rb ? ra < rb : a < b;
    });
    for (BucketId b : candidates) {
      if (needed <= free_arrays()) break;
      evict(b, ledger);
      if (evicted) evicted->push_back(b);
    }
    return true;
  }

  // Non-volatile arrays: nothing is written back, the image moves to the cache.
  void evict(BucketId b, EnergyLatencyLedger& ledger) {
    auto node = resident_.extract(b);
    arrays_used_ -= node.mapped().arrays();
    ledger.evictions += 1;
    cache_insert(b, node.mapped().row_count());
  }

  void cache_insert(BucketId b, std::size_t rows) {
    if (auto it = cache_.find(b); it != cache_.end()) {
      cache_rows_ -= it->second;
      cache_.erase(it);
    }
    if (rows > cfg_.cache_capacity_rows) return;
    if (cache_rows_ + rows > cfg_.cache_capacity_rows) {
      std::vector<BucketId> order;
      for (const auto& [c, r] : cache_) order.push_back(c);
      std::sort(order.begin(), order.end(), [&](BucketId x, BucketId y) {
        const auto fx = frequency(x), fy = frequency(y);
        if (fx != fy) return fx < fy;
        return cache_.at(x) != cache_.at(y) ? cache_.at(x) < cache_.at(y) : x < y;
      });
      for (BucketId c : order) {
        if (cache_rows_ + rows <= cfg_.cache_capacity_rows) break;
        cache_rows_ -= cache_.at(c);
        cache_.erase(c);
      }
    }
    cache_.emplace(b, rows);
    cache_rows_ += rows;
  }

  LoadEvent load(BucketId b, DispatchTarget& target, EnergyLatencyLedger& ledger) {
    auto rows = target.rows(b);
    const std::size_t slices = ceil_div(rows.size(), device_.array_rows);
    const std::uint64_t bytes = static_cast<std::uint64_t>(rows.size()) * dim_ / 8;

    LoadEvent ev{b, LoadSource::kMemory, rows.size(), 0.0};
    double transfer_ns = 0.0;
    if (cache_.contains(b)) {
      ev.source = LoadSource::kCache;
      transfer_ns = static_cast<double>(rows.size()) * cfg_.cache_ns_per_row;
      ledger.cache_loads += 1;
    } else {
      transfer_ns = rows.empty() ? 0.0 : cfg_.memory_latency_ns + static_cast<double>(bytes) / cfg_.memory_bandwidth_GBps;
      ledger.memory_loads += 1;
      ledger.transfer_fJ += static_cast<double>(bytes) * cfg_.transfer_energy_fJ_per_byte;
    }
    ledger.transfer_ns += transfer_ns;
    ledger.transfer_rows += rows.size();
    ledger.transfer_bytes += bytes;

    auto [it, inserted] = resident_.emplace(b, CamBank(b, dim_, device_, slices));
    if (!inserted) throw InvariantError("bucket loaded twice");
    arrays_used_ += it->second.arrays();
    const double write_ns = write_rows(it->second, rows, device_, ledger);
    ev.elapsed_ns = transfer_ns + write_ns;
    return ev;
  }

  // Cycle wall time covers dispatches with their writes and any loads.
  void finish_cycle(CycleReport& report, double dispatch_ns, double busy_ns, double load_ns,
                    EnergyLatencyLedger& ledger, const EnergyLatencyLedger& before) {
    report.dispatch_elapsed_ns = dispatch_ns;
    report.elapsed_ns = cfg_.mode == DispatchMode::kParallel ? std::max(busy_ns, load_ns) : busy_ns + load_ns;
    ledger.elapsed_ns += report.elapsed_ns;
    stats_.dispatch_elapsed_ns += dispatch_ns;
    ++stats_.cycles;
    report.delta = ledger_delta(ledger, before);
    check_invariants();
  }

  SchedulerConfig cfg_;
  DeviceParams device_;
  std::size_t dim_;
  std::uint64_t capacity_arrays_ = 0;
  std::uint64_t arrays_used_ = 0;
  std::map<BucketId, CamBank> resident_;
  std::map<BucketId, std::size_t> cache_;  // bucket -> cached rows
  std::uint64_t cache_rows_ = 0;
  std::map<BucketId, std::uint64_t> freq_;
  std::map<BucketId, std::deque<QueryRecord>> fifo_;
  std::uint64_t admitted_ = 0;
  std::uint64_t cycle_ = 0;
  SchedulerStats stats_;
};

}  // namespace herp
