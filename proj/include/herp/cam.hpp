#pragma once

// Parametric SOT-CAM model. A bucket's consensus rows occupy a grid of
// 128x128 arrays (row slices x column slices). A search drives every row's
// matchline; each array contributes a current that grows with the Hamming
// distance of its 128-bit slice, the slice currents of a row are accumulated,
// and a loser-takes-all tree picks the smallest. Energy and latency come from
// the per-bit device constants, never from the current model.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "herp/error.hpp"
#include "herp/hypervector.hpp"

namespace herp {

using ClusterId = std::int64_t;

struct DeviceParams {
  double search_energy_per_bit_fJ = 0.714;
  double search_latency_ns = 0.485;
  double write_energy_per_bit_fJ = 278.0;
  double write_latency_per_row_ns = 2.0;
  double operating_voltage_V = 0.8;  // recorded only
  std::size_t array_rows = 128;
  std::size_t array_cols = 128;
  // Not characterized by the device table; kept in their own ledger class.
  double lta_stage_latency_ns = 0.1;
  double lta_stage_energy_fJ = 0.0;
  double decision_latency_ns = 0.0;

  void validate() const {
    if (!(search_energy_per_bit_fJ > 0 && search_latency_ns > 0 && write_energy_per_bit_fJ > 0 &&
          write_latency_per_row_ns > 0 && operating_voltage_V > 0)) {
      throw ConfigError("device parameters must be positive");
    }
    if (array_rows == 0 || array_cols == 0 || array_cols % kWordBits != 0) {
      throw ConfigError("array geometry must be positive with columns a multiple of 64");
    }
    if (lta_stage_latency_ns < 0 || lta_stage_energy_fJ < 0 || decision_latency_ns < 0) {
      throw ConfigError("LTA/decision costs must be non-negative");
    }
  }

  nlohmann::json to_json() const {
    return {{"search_energy_per_bit_fJ", search_energy_per_bit_fJ},
            {"search_latency_ns", search_latency_ns},
            {"write_energy_per_bit_fJ", write_energy_per_bit_fJ},
            {"write_latency_per_row_ns", write_latency_per_row_ns},
            {"operating_voltage_V", operating_voltage_V},
            {"array_rows", array_rows},
            {"array_cols", array_cols},
            {"lta_stage_latency_ns", lta_stage_latency_ns},
            {"lta_stage_energy_fJ", lta_stage_energy_fJ},
            {"decision_latency_ns", decision_latency_ns}};
  }
};

// Cell technology comparison data (reference only, not simulated).
struct CellTechnology {
  const char* name;
  const char* cell;
  double cell_area_um2;
  double search_energy_per_bit_fJ;
  double search_latency_ns;
  double operating_voltage_V;
  double write_latency_ns;
  double write_energy_per_bit_fJ;
  int technology_nm;
  int write_verify_cycles;
  bool non_volatile;
};

inline constexpr CellTechnology kSotMram{"SOT-MRAM", "3T2MTJ", 0.0583, 0.714, 0.485, 0.8, 2, 278, 7, 0, true};
inline constexpr CellTechnology kCmosCam{"CMOS", "16T", 1.2, 1.0, 0.75, 1.0, 1, 4.8, 45, 0, false};
inline constexpr CellTechnology kPcmCam{"PCM", "2T2R", 0.41, 0.64, 1.9, 2.5, 10, 4500, 45, 4, true};

// ---------------------------------------------------------------------------
// Ledger
// ---------------------------------------------------------------------------

struct EnergyLatencyLedger {
  // femtojoules
  double write_fJ = 0, search_fJ = 0, lta_fJ = 0, transfer_fJ = 0;
  // nanoseconds of device activity (summed per operation, not wall time)
  double write_ns = 0, search_ns = 0, lta_ns = 0, transfer_ns = 0;
  // modeled wall time, advanced by the scheduler
  double elapsed_ns = 0;

  std::uint64_t rows_written = 0;
  std::uint64_t write_ops = 0;
  std::uint64_t searches = 0;
  std::uint64_t rows_searched = 0;
  std::uint64_t lta_ops = 0;
  std::uint64_t lta_stages = 0;
  std::uint64_t cache_loads = 0;
  std::uint64_t memory_loads = 0;
  std::uint64_t transfer_rows = 0;
  std::uint64_t transfer_bytes = 0;
  std::uint64_t evictions = 0;

  double total_fJ() const noexcept { return write_fJ + search_fJ + lta_fJ + transfer_fJ; }
  double total_ns() const noexcept { return write_ns + search_ns + lta_ns + transfer_ns; }

  EnergyLatencyLedger& operator+=(const EnergyLatencyLedger& o) {
    write_fJ += o.write_fJ;
    search_fJ += o.search_fJ;
    lta_fJ += o.lta_fJ;
    transfer_fJ += o.transfer_fJ;
    write_ns += o.write_ns;
    search_ns += o.search_ns;
    lta_ns += o.lta_ns;
    transfer_ns += o.transfer_ns;
    elapsed_ns += o.elapsed_ns;
    rows_written += o.rows_written;
    write_ops += o.write_ops;
    searches += o.searches;
    rows_searched += o.rows_searched;
    lta_ops += o.lta_ops;
    lta_stages += o.lta_stages;
    cache_loads += o.cache_loads;
    memory_loads += o.memory_loads;
    transfer_rows += o.transfer_rows;
    transfer_bytes += o.transfer_bytes;
    evictions += o.evictions;
    return *this;
  }

  friend bool operator==(const EnergyLatencyLedger&, const EnergyLatencyLedger&) = default;

  nlohmann::json to_json() const {
    return {{"energy_fJ", {{"write", write_fJ}, {"search", search_fJ}, {"lta", lta_fJ}, {"transfer", transfer_fJ}}},
            {"latency_ns", {{"write", write_ns}, {"search", search_ns}, {"lta", lta_ns}, {"transfer", transfer_ns}}},
            {"elapsed_ns", elapsed_ns},
            {"counters",
             {{"rows_written", rows_written},
              {"write_ops", write_ops},
              {"searches", searches},
              {"rows_searched", rows_searched},
              {"lta_ops", lta_ops},
              {"lta_stages", lta_stages},
              {"cache_loads", cache_loads},
              {"memory_loads", memory_loads},
              {"transfer_rows", transfer_rows},
              {"transfer_bytes", transfer_bytes},
              {"evictions", evictions}}},
            {"totals",
             {{"energy_nJ", total_fJ() * 1e-6},
              {"device_latency_us", total_ns() * 1e-3},
              {"elapsed_us", elapsed_ns * 1e-3}}}};
  }

  static EnergyLatencyLedger from_json(const nlohmann::json& j) {
    EnergyLatencyLedger l;
    const auto& e = j.at("energy_fJ");
    const auto& t = j.at("latency_ns");
    const auto& c = j.at("counters");
    l.write_fJ = e.at("write");
    l.search_fJ = e.at("search");
    l.lta_fJ = e.at("lta");
    l.transfer_fJ = e.at("transfer");
    l.write_ns = t.at("write");
    l.search_ns = t.at("search");
    l.lta_ns = t.at("lta");
    l.transfer_ns = t.at("transfer");
    l.elapsed_ns = j.at("elapsed_ns");
    l.rows_written = c.at("rows_written");
    l.write_ops = c.at("write_ops");
    l.searches = c.at("searches");
    l.rows_searched = c.at("rows_searched");
    l.lta_ops = c.at("lta_ops");
    l.lta_stages = c.at("lta_stages");
    l.cache_loads = c.at("cache_loads");
    l.memory_loads = c.at("memory_loads");
    l.transfer_rows = c.at("transfer_rows");
    l.transfer_bytes = c.at("transfer_bytes");
    l.evictions = c.at("evictions");
    return l;
  }
};

// ---------------------------------------------------------------------------
// Matchline current model
// ---------------------------------------------------------------------------

enum class CurrentMode { kIdeal, kParasitic };

struct CurrentModel {
  CurrentMode mode = CurrentMode::kIdeal;
  double unit_current = 1.0;  // uA per mismatching cell; arbitrary scale
  double alpha = 0.002;       // parasitic compression coefficient
  std::size_t slice_width = 128;
  // Ascending raw slice current for d = 0..slice_width, present after calibrate().
  std::optional<std::vector<double>> calibration;

  // Raw current of one array for a slice Hamming distance d.
  double slice_current(std::size_t d) const {
    const double x = static_cast<double>(d);
    if (mode == CurrentMode::kIdeal) return unit_current * x;
    return unit_current * x / (1.0 + alpha * x);
  }

  bool calibrated() const noexcept { return calibration.has_value(); }

  // Nearest table distance for a measured slice current.
  std::size_t correct(double current) const {
    if (!calibration) throw InvariantError("current model is not calibrated");
    const auto& table = *calibration;
    auto it = std::lower_bound(table.begin(), table.end(), current);
    if (it == table.end()) return table.size() - 1;
    const auto hi = static_cast<std::size_t>(it - table.begin());
    if (hi == 0) return 0;
    return (current - table[hi - 1] <= *it - current) ? hi - 1 : hi;
  }
};

// Builds the inverse lookup that linearizes the slice current.
inline CurrentModel calibrate(CurrentModel model) {
  if (model.mode != CurrentMode::kParasitic) throw ConfigError("calibrate: model is not in parasitic mode");
  if (model.alpha < 0.0) throw ConfigError("calibrate: negative alpha makes the current non-monotone");
  if (!(model.unit_current > 0.0)) throw ConfigError("calibrate: unit current must be positive");
  model.calibration.reset();
  std::vector<double> table(model.slice_width + 1);
  for (std::size_t d = 0; d <= model.slice_width; ++d) {
    table[d] = model.slice_current(d);
    if (d > 0 && !(table[d] > table[d - 1])) {
      throw ConfigError("calibrate: current is not strictly increasing at d=" + std::to_string(d));
    }
  }
  model.calibration = std::move(table);
  return model;
}

// ---------------------------------------------------------------------------
// Banks
// ---------------------------------------------------------------------------

inline std::size_t ceil_div(std::size_t a, std::size_t b) { return (a + b - 1) / b; }

class CamBank {
 public:
  CamBank(std::int64_t bucket_id, std::size_t dim, const DeviceParams& device, std::size_t row_slices = 0)
      : bucket_id_(bucket_id), dim_(dim), array_rows_(device.array_rows), array_cols_(device.array_cols),
        row_slices_(row_slices) {
    if (dim_ == 0 || dim_ % array_cols_ != 0) {
      throw ConfigError("CAM bank: D=" + std::to_string(dim_) + " is not a multiple of the array width");
    }
  }

  std::int64_t bucket_id() const noexcept { return bucket_id_; }
  std::size_t dim() const noexcept { return dim_; }
  std::size_t row_count() const noexcept { return rows_.size(); }
  bool empty() const noexcept { return rows_.empty(); }
  std::size_t row_slices() const noexcept { return row_slices_; }
  std::size_t col_slices() const noexcept { return dim_ / array_cols_; }
  std::size_t arrays() const noexcept { return row_slices_ * col_slices(); }
  std::size_t capacity_rows() const noexcept { return row_slices_ * array_rows_; }
  std::size_t array_rows() const noexcept { return array_rows_; }
  std::size_t array_cols() const noexcept { return array_cols_; }

  // Allocation is owned by the scheduler's capacity accounting.
  void set_row_slices(std::size_t n) {
    if (n * array_rows_ < rows_.size()) throw InvariantError("CAM bank: shrinking below occupied rows");
    row_slices_ = n;
  }

  const Hypervector& row(std::size_t i) const { return rows_.at(i); }
  ClusterId cluster_of_row(std::size_t i) const { return row_to_cluster_.at(i); }

  std::optional<std::size_t> row_of_cluster(ClusterId c) const {
    auto it = cluster_to_row_.find(c);
    if (it == cluster_to_row_.end()) return std::nullopt;
    return it->second;
  }

 private:
  friend double write_rows(CamBank&, std::span<const std::pair<ClusterId, Hypervector>>, const DeviceParams&,
                           EnergyLatencyLedger&);
  friend double rewrite_row(CamBank&, std::size_t, const Hypervector&, const DeviceParams&,
                            EnergyLatencyLedger&);

  std::int64_t bucket_id_;
  std::size_t dim_;
  std::size_t array_rows_;
  std::size_t array_cols_;
  std::size_t row_slices_;
  std::vector<Hypervector> rows_;
  std::vector<ClusterId> row_to_cluster_;
  std::unordered_map<ClusterId, std::size_t> cluster_to_row_;
};

// Appends rows. Rows landing in the same array are written one after another,
// different arrays in parallel. Returns the elapsed write time in ns.
inline double write_rows(CamBank& bank, std::span<const std::pair<ClusterId, Hypervector>> rows,
                         const DeviceParams& device, EnergyLatencyLedger& ledger) {
  if (rows.empty()) return 0.0;
  const std::size_t needed = bank.rows_.size() + rows.size();
  if (needed > bank.capacity_rows()) {
    throw ConfigError("CAM bank for bucket " + std::to_string(bank.bucket_id_) + " lacks capacity for " +
                      std::to_string(needed - bank.capacity_rows()) + " more row(s)");
  }
  std::unordered_map<std::size_t, std::size_t> per_array;
  std::size_t busiest = 0;
  for (const auto& [cluster, hv] : rows) {
    if (hv.dim() != bank.dim_) throw ConfigError("write_rows: dimension mismatch");
    if (bank.cluster_to_row_.contains(cluster)) {
      throw InvariantError("write_rows: cluster " + std::to_string(cluster) + " already stored");
    }
    const std::size_t r = bank.rows_.size();
    busiest = std::max(busiest, ++per_array[r / bank.array_rows_]);
    bank.cluster_to_row_.emplace(cluster, r);
    bank.rows_.push_back(hv);
    bank.row_to_cluster_.push_back(cluster);
  }
  const double elapsed = static_cast<double>(busiest) * device.write_latency_per_row_ns;
  ledger.write_fJ += static_cast<double>(rows.size() * bank.dim_) * device.write_energy_per_bit_fJ;
  ledger.write_ns += elapsed;
  ledger.rows_written += rows.size();
  ledger.write_ops += 1;
  return elapsed;
}

inline double write_rows(CamBank& bank, const std::vector<std::pair<ClusterId, Hypervector>>& rows,
                         const DeviceParams& device, EnergyLatencyLedger& ledger) {
  return write_rows(bank, std::span<const std::pair<ClusterId, Hypervector>>(rows), device, ledger);
}

// Overwrites one stored row in place (consensus refresh).
inline double rewrite_row(CamBank& bank, std::size_t row, const Hypervector& hv, const DeviceParams& device,
                          EnergyLatencyLedger& ledger) {
  if (row >= bank.rows_.size()) throw InvariantError("rewrite_row: row out of range");
  if (hv.dim() != bank.dim_) throw ConfigError("rewrite_row: dimension mismatch");
  bank.rows_[row] = hv;
  ledger.write_fJ += static_cast<double>(bank.dim_) * device.write_energy_per_bit_fJ;
  ledger.write_ns += device.write_latency_per_row_ns;
  ledger.rows_written += 1;
  ledger.write_ops += 1;
  return device.write_latency_per_row_ns;
}

// Ledger charge of one parallel search over `rows` stored rows. Shared by
// search() and catalog-only (dry-run) accounting. Returns the elapsed ns.
inline double account_search(std::uint64_t rows, std::size_t dim, const DeviceParams& device,
                             EnergyLatencyLedger& ledger) {
  ledger.search_fJ += static_cast<double>(rows) * static_cast<double>(dim) * device.search_energy_per_bit_fJ;
  ledger.search_ns += device.search_latency_ns;
  ledger.searches += 1;
  ledger.rows_searched += rows;
  return device.search_latency_ns;
}

// Ledger charge of writing `rows` rows spread over arrays of array_rows rows,
// filled in order; arrays write in parallel. Returns the elapsed ns.
inline double account_bulk_write(std::uint64_t rows, std::size_t dim, const DeviceParams& device,
                                 EnergyLatencyLedger& ledger) {
  if (rows == 0) return 0.0;
  const auto busiest = std::min<std::uint64_t>(rows, device.array_rows);
  const double elapsed = static_cast<double>(busiest) * device.write_latency_per_row_ns;
  ledger.write_fJ += static_cast<double>(rows) * static_cast<double>(dim) * device.write_energy_per_bit_fJ;
  ledger.write_ns += elapsed;
  ledger.rows_written += rows;
  ledger.write_ops += 1;
  return elapsed;
}

struct RowMatch {
  std::size_t row = 0;
  double current = 0.0;       // accumulated matchline current seen by the LTA tree
  std::size_t distance = 0;   // distance estimate read out from the current
};

struct SearchResult {
  std::vector<RowMatch> rows;
  double elapsed_ns = 0.0;
};

// One parallel search of every stored row. Slice currents are accumulated per
// row; with a calibrated model each slice current is first linearized.
inline SearchResult search(const CamBank& bank, const Hypervector& query, const CurrentModel& model,
                           const DeviceParams& device, EnergyLatencyLedger& ledger) {
  if (bank.empty()) throw ConfigError("search: bucket " + std::to_string(bank.bucket_id()) + " has no rows");
  if (query.dim() != bank.dim()) throw ConfigError("search: query dimension mismatch");
  if (model.slice_width != bank.array_cols()) throw ConfigError("search: current model slice width mismatch");
  if (model.mode == CurrentMode::kParasitic && model.calibrated() && model.calibration->size() != model.slice_width + 1) {
    throw InvariantError("search: calibration table size mismatch");
  }
  const std::size_t words_per_slice = bank.array_cols() / kWordBits;
  const auto qw = query.words();

  SearchResult out;
  out.rows.reserve(bank.row_count());
  for (std::size_t r = 0; r < bank.row_count(); ++r) {
    const auto rw = bank.row(r).words();
    double current = 0.0;
    std::size_t estimate = 0;
    for (std::size_t s = 0; s < bank.col_slices(); ++s) {
      const std::size_t d = hamming_words(qw, rw, s * words_per_slice, words_per_slice);
      const double raw = model.slice_current(d);
      if (model.mode == CurrentMode::kParasitic && model.calibrated()) {
        const std::size_t corrected = model.correct(raw);
        estimate += corrected;
        current += model.unit_current * static_cast<double>(corrected);
      } else {
        current += raw;
      }
    }
    if (!(model.mode == CurrentMode::kParasitic && model.calibrated())) {
      estimate = static_cast<std::size_t>(std::llround(current / model.unit_current));
    }
    out.rows.push_back({r, current, estimate});
  }
  out.elapsed_ns = account_search(bank.row_count(), bank.dim(), device, ledger);
  return out;
}

// ---------------------------------------------------------------------------
// Loser-takes-all
// ---------------------------------------------------------------------------

struct LtaWinner {
  std::size_t index = 0;
  double current = 0.0;
  std::size_t stages = 0;  // ceil(log2(n))
};

// Pairwise tournament: the right contender wins only if strictly smaller, so
// equal minima resolve to the smallest index.
inline LtaWinner lta_select(std::span<const double> currents) {
  if (currents.empty()) throw ConfigError("lta_select: no inputs");
  std::vector<std::size_t> round(currents.size());
  for (std::size_t i = 0; i < round.size(); ++i) round[i] = i;
  std::size_t stages = 0;
  while (round.size() > 1) {
    std::vector<std::size_t> next;
    next.reserve((round.size() + 1) / 2);
    for (std::size_t i = 0; i + 1 < round.size(); i += 2) {
      next.push_back(currents[round[i + 1]] < currents[round[i]] ? round[i + 1] : round[i]);
    }
    if (round.size() % 2 == 1) next.push_back(round.back());
    round = std::move(next);
    ++stages;
  }
  return {round.front(), currents[round.front()], stages};
}

inline LtaWinner lta_select(std::span<const double> currents, const DeviceParams& device,
                            EnergyLatencyLedger& ledger) {
  auto w = lta_select(currents);
  ledger.lta_ns += static_cast<double>(w.stages) * device.lta_stage_latency_ns + device.decision_latency_ns;
  ledger.lta_fJ += static_cast<double>(w.stages) * device.lta_stage_energy_fJ;
  ledger.lta_ops += 1;
  ledger.lta_stages += w.stages;
  return w;
}

inline LtaWinner lta_select(const SearchResult& result, const DeviceParams& device, EnergyLatencyLedger& ledger) {
  std::vector<double> currents;
  currents.reserve(result.rows.size());
  for (const auto& r : result.rows) currents.push_back(r.current);
  return lta_select(std::span<const double>(currents), device, ledger);
}

inline std::size_t lta_stages(std::size_t n) {
  std::size_t s = 0;
  while ((std::size_t{1} << s) < n) ++s;
  return s;
}

}  // namespace herp
