#include <gtest/gtest.h>

#include <algorithm>
#include <map>
#include <random>

#include "herp/scheduler.hpp"

using herp::BucketId;
using herp::DeviceParams;
using herp::DispatchMode;
using herp::EnergyLatencyLedger;
using herp::QueryRecord;
using herp::Scheduler;
using herp::SchedulerConfig;

namespace {

using Sizes = std::map<BucketId, std::size_t>;

constexpr std::size_t kDim = 128;
constexpr std::uint64_t kArrayBits = 128 * 128;

// Buckets of fixed size; every dispatch searches the bank and picks the LTA winner.
class FixedTarget : public herp::DispatchTarget {
 public:
  explicit FixedTarget(std::map<BucketId, std::size_t> sizes) : sizes_(std::move(sizes)) {}

  std::vector<BucketId> buckets() const override {
    std::vector<BucketId> out;
    for (const auto& [b, n] : sizes_) out.push_back(b);
    return out;
  }
  std::size_t row_count(BucketId b) const override { return sizes_.at(b); }
  std::vector<std::pair<herp::ClusterId, herp::Hypervector>> rows(BucketId b) const override {
    std::vector<std::pair<herp::ClusterId, herp::Hypervector>> out;
    for (std::size_t i = 0; i < sizes_.at(b); ++i) {
      out.emplace_back(static_cast<herp::ClusterId>(i), herp::random_hv(static_cast<std::uint64_t>(b), i, kDim));
    }
    return out;
  }
  herp::DispatchResult dispatch(const QueryRecord& q, herp::CamBank& bank, EnergyLatencyLedger& ledger,
                                const std::function<void(herp::CamBank&)>&) override {
    const DeviceParams dev;
    const auto found = herp::search(bank, q.hv, herp::CurrentModel{}, dev, ledger);
    const auto before = ledger.lta_ns;
    const auto w = herp::lta_select(found, dev, ledger);
    herp::Assignment a;
    a.spectrum_id = q.spectrum_id;
    a.bucket = q.bucket;
    a.cluster = bank.cluster_of_row(w.index);
    a.outcome = herp::Outcome::kMatch;
    a.distance = found.rows[w.index].distance;
    return {a, found.elapsed_ns + (ledger.lta_ns - before)};
  }

 private:
  std::map<BucketId, std::size_t> sizes_;
};

QueryRecord query(BucketId b, std::uint64_t seq) {
  return {"q" + std::to_string(seq), b, herp::random_hv(999, seq, kDim), seq, std::nullopt};
}

SchedulerConfig small_cam(std::uint64_t arrays) {
  SchedulerConfig cfg;
  cfg.cam_capacity_bits = arrays * kArrayBits;
  return cfg;
}

TEST(SchedulerAdmit, BucketFifosKeepArrivalOrder) {
  Scheduler s(SchedulerConfig{}, DeviceParams{}, kDim);
  s.admit({query(5, 0), query(5, 1), query(9, 2)});
  ASSERT_NE(s.fifo(5), nullptr);
  ASSERT_EQ(s.fifo(5)->size(), 2u);
  EXPECT_EQ(s.fifo(5)->at(0).seq, 0u);
  EXPECT_EQ(s.fifo(5)->at(1).seq, 1u);
  EXPECT_EQ(s.fifo(9)->size(), 1u);
  s.admit({});
  EXPECT_EQ(s.admitted(), 3u);
}

TEST(SchedulerAdmit, FifosAreSubsequencesOfArrival) {
  Scheduler s(SchedulerConfig{}, DeviceParams{}, kDim);
  std::mt19937_64 rng(8);
  std::uniform_int_distribution<BucketId> pick(0, 30);
  std::vector<QueryRecord> batch;
  for (std::uint64_t i = 0; i < 1000; ++i) batch.push_back(query(pick(rng), i));
  const auto arrival = batch;
  s.admit(batch);
  std::size_t total = 0;
  for (BucketId b = 0; b <= 30; ++b) {
    const auto* f = s.fifo(b);
    if (!f) continue;
    total += f->size();
    // Walk the arrival list once; every FIFO entry must appear in order.
    std::size_t pos = 0;
    for (const auto& q : *f) {
      while (pos < arrival.size() && arrival[pos].seq != q.seq) ++pos;
      ASSERT_LT(pos, arrival.size());
      EXPECT_EQ(arrival[pos].bucket, b);
      ++pos;
    }
  }
  EXPECT_EQ(total, 1000u);
}

TEST(SchedulerStep, ParallelCostsOneSearchSerialCostsTwo) {
  FixedTarget target(Sizes{{1, 10}, {2, 10}});
  double cycle_ns[2];
  for (auto mode : {DispatchMode::kParallel, DispatchMode::kSerial}) {
    auto cfg = small_cam(8);
    cfg.mode = mode;
    Scheduler s(cfg, DeviceParams{}, kDim);
    EnergyLatencyLedger ledger;
    s.preload(target, ledger);
    s.admit({query(1, 0), query(2, 1)});
    const auto r = s.step(target, ledger);
    EXPECT_EQ(r.dispatches.size(), 2u);
    EXPECT_EQ(r.loads.size(), 0u);
    cycle_ns[mode == DispatchMode::kParallel ? 0 : 1] = r.elapsed_ns;
  }
  EXPECT_DOUBLE_EQ(cycle_ns[0], 0.485 + 4 * 0.1);
  EXPECT_DOUBLE_EQ(cycle_ns[1], 2 * cycle_ns[0]);
}

TEST(SchedulerStep, IdleCycleIsAllowed) {
  FixedTarget target(Sizes{{1, 10}});
  Scheduler s(small_cam(8), DeviceParams{}, kDim);
  EnergyLatencyLedger ledger;
  const auto r = s.step(target, ledger);
  EXPECT_TRUE(r.dispatches.empty());
  EXPECT_DOUBLE_EQ(r.elapsed_ns, 0.0);
}

TEST(SchedulerStep, NoDispatchInTheLoadCycle) {
  FixedTarget target(Sizes{{1, 10}});
  Scheduler s(small_cam(8), DeviceParams{}, kDim);
  EnergyLatencyLedger ledger;
  s.admit({query(1, 0)});
  const auto first = s.step(target, ledger);
  EXPECT_EQ(first.loads.size(), 1u);
  EXPECT_TRUE(first.dispatches.empty());
  EXPECT_EQ(first.loads[0].source, herp::LoadSource::kMemory);
  EXPECT_DOUBLE_EQ(first.loads[0].elapsed_ns, 100.0 + 10 * 16 / 16.0 + 10 * 2.0);
  const auto second = s.step(target, ledger);
  EXPECT_EQ(second.dispatches.size(), 1u);
}

TEST(SchedulerStep, UniformWorkloadSpeedsUpAboutEightyfold) {
  std::map<BucketId, std::size_t> sizes;
  for (BucketId b = 0; b < 100; ++b) sizes[b] = 50;
  FixedTarget target(sizes);
  std::vector<QueryRecord> work;
  for (std::uint64_t i = 0; i < 1000; ++i) work.push_back(query(static_cast<BucketId>(i % 100), i));
  std::shuffle(work.begin(), work.end(), std::mt19937_64(4));

  double dispatch_ns[2];
  for (auto mode : {DispatchMode::kParallel, DispatchMode::kSerial}) {
    SchedulerConfig cfg;
    cfg.mode = mode;
    Scheduler s(cfg, DeviceParams{}, kDim);
    EnergyLatencyLedger ledger;
    s.preload(target, ledger);
    s.admit(work);
    s.run(target, ledger);
    EXPECT_EQ(s.dispatched(), 1000u);
    dispatch_ns[mode == DispatchMode::kParallel ? 0 : 1] = s.stats().dispatch_elapsed_ns;
  }
  EXPECT_GE(dispatch_ns[1] / dispatch_ns[0], 80.0);
}

TEST(SchedulerResidency, ResidentRequestIsFree) {
  FixedTarget target(Sizes{{1, 10}});
  Scheduler s(small_cam(4), DeviceParams{}, kDim);
  EnergyLatencyLedger ledger;
  ASSERT_TRUE(s.ensure_resident(1, target, ledger).has_value());
  const auto before = ledger;
  EXPECT_FALSE(s.ensure_resident(1, target, ledger).has_value());
  EXPECT_EQ(ledger, before);
}

// Dispatches `n` queries to bucket b, loading it first if needed.
void touch(Scheduler& s, FixedTarget& target, EnergyLatencyLedger& ledger, BucketId b, int n, std::uint64_t& seq) {
  for (int i = 0; i < n; ++i) {
    s.admit({query(b, seq++)});
    s.run(target, ledger);
  }
}

TEST(SchedulerResidency, EvictsLeastFrequentlyUsed) {
  FixedTarget target(Sizes{{1, 100}, {2, 100}, {3, 100}});
  Scheduler s(small_cam(2), DeviceParams{}, kDim);
  EnergyLatencyLedger ledger;
  std::uint64_t seq = 0;
  touch(s, target, ledger, 1, 3, seq);
  touch(s, target, ledger, 2, 7, seq);
  std::vector<BucketId> evicted;
  ASSERT_TRUE(s.ensure_resident(3, target, ledger, {}, &evicted).has_value());
  EXPECT_EQ(evicted, std::vector<BucketId>{1});
  EXPECT_TRUE(s.is_resident(2));
}

TEST(SchedulerResidency, EqualFrequencyEvictsSmallerBucket) {
  FixedTarget target(Sizes{{1, 100}, {2, 10}, {3, 50}});
  Scheduler s(small_cam(2), DeviceParams{}, kDim);
  EnergyLatencyLedger ledger;
  std::uint64_t seq = 0;
  touch(s, target, ledger, 1, 4, seq);
  touch(s, target, ledger, 2, 4, seq);
  std::vector<BucketId> evicted;
  s.ensure_resident(3, target, ledger, {}, &evicted);
  EXPECT_EQ(evicted, std::vector<BucketId>{2});
}

TEST(SchedulerResidency, ReloadAfterEvictionHitsTheCache) {
  FixedTarget target(Sizes{{1, 100}, {2, 100}});
  Scheduler s(small_cam(1), DeviceParams{}, kDim);
  EnergyLatencyLedger ledger;
  s.ensure_resident(1, target, ledger);
  s.ensure_resident(2, target, ledger);
  EXPECT_FALSE(s.is_resident(1));
  EXPECT_TRUE(s.is_cached(1));
  const auto memory_loads = ledger.memory_loads;
  const auto bytes = ledger.transfer_bytes;
  const auto transfer_fJ = ledger.transfer_fJ;
  const auto ev = s.ensure_resident(1, target, ledger);
  ASSERT_TRUE(ev.has_value());
  EXPECT_EQ(ev->source, herp::LoadSource::kCache);
  EXPECT_DOUBLE_EQ(ev->elapsed_ns, 100 * 0.5 + 100 * 2.0);
  EXPECT_EQ(ledger.memory_loads, memory_loads);
  EXPECT_EQ(ledger.transfer_fJ, transfer_fJ);
  EXPECT_EQ(ledger.cache_loads, 1u);
  EXPECT_EQ(ledger.transfer_bytes, bytes + 100 * kDim / 8);
}

TEST(SchedulerResidency, OversizedBucketIsAnError) {
  FixedTarget target(Sizes{{1, 300}});
  Scheduler s(small_cam(2), DeviceParams{}, kDim);
  EnergyLatencyLedger ledger;
  EXPECT_THROW(s.ensure_resident(1, target, ledger), herp::ConfigError);
}

TEST(SchedulerConfigTest, Validation) {
  SchedulerConfig cfg;
  cfg.memory_bandwidth_GBps = 0;
  EXPECT_THROW(Scheduler(cfg, DeviceParams{}, kDim), herp::ConfigError);
  EXPECT_THROW(Scheduler(SchedulerConfig{}, DeviceParams{}, 100), herp::ConfigError);
}

// Independent residency model: on-demand loads, LFU eviction with fewer rows
// then lower id as tie-breaks, frequency bumped per dispatch.
struct ReferenceResidency {
  std::uint64_t capacity;
  std::map<BucketId, std::size_t> sizes;
  std::map<BucketId, std::uint64_t> freq;
  std::set<BucketId> resident;
  std::vector<BucketId> evictions;

  std::uint64_t arrays(BucketId b) const { return (sizes.at(b) + 127) / 128; }
  std::uint64_t used() const {
    std::uint64_t u = 0;
    for (auto b : resident) u += arrays(b);
    return u;
  }
  void touch(BucketId b) {
    if (!resident.contains(b)) {
      while (used() + arrays(b) > capacity) {
        BucketId victim = *resident.begin();
        for (auto c : resident) {
          const auto key_c = std::tuple(freq[c], sizes.at(c), c);
          const auto key_v = std::tuple(freq[victim], sizes.at(victim), victim);
          if (key_c < key_v) victim = c;
        }
        resident.erase(victim);
        evictions.push_back(victim);
      }
      resident.insert(b);
    }
    ++freq[b];
  }
};

TEST(SchedulerProperty, EvictionSequenceMatchesReferenceModel) {
  std::mt19937_64 rng(21);
  std::map<BucketId, std::size_t> sizes;
  std::uniform_int_distribution<std::size_t> size(1, 300);
  for (BucketId b = 0; b < 20; ++b) sizes[b] = size(rng);
  FixedTarget target(sizes);
  Scheduler s(small_cam(8), DeviceParams{}, kDim);
  ReferenceResidency ref{8, sizes, {}, {}, {}};
  EnergyLatencyLedger ledger;
  std::vector<BucketId> observed;
  std::uniform_int_distribution<BucketId> pick(0, 19);
  for (std::uint64_t seq = 0; seq < 400; ++seq) {
    const BucketId b = pick(rng);
    s.admit({query(b, seq)});
    for (const auto& r : s.run(target, ledger)) {
      observed.insert(observed.end(), r.evictions.begin(), r.evictions.end());
    }
    ref.touch(b);
  }
  EXPECT_GT(ref.evictions.size(), 20u);
  EXPECT_EQ(observed, ref.evictions);
  EXPECT_EQ(ledger.evictions, observed.size());
}

TEST(SchedulerProperty, RandomWorkloadsHoldInvariantsAndReplayIdentically) {
  std::map<BucketId, std::size_t> sizes;
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<std::size_t> size(1, 400);
  for (BucketId b = 0; b < 40; ++b) sizes[b] = size(rng);
  FixedTarget target(sizes);
  std::vector<QueryRecord> work;
  std::uniform_int_distribution<BucketId> pick(0, 39);
  for (std::uint64_t i = 0; i < 600; ++i) work.push_back(query(pick(rng), i));

  auto replay = [&] {
    Scheduler s(small_cam(12), DeviceParams{}, kDim);
    EnergyLatencyLedger ledger;
    std::vector<std::string> trace{s.preload(target, ledger).to_json().dump()};
    s.admit(work);
    while (s.pending() > 0) {
      trace.push_back(s.step(target, ledger).to_json().dump());
      EXPECT_LE(s.arrays_in_use(), s.capacity_arrays());
      EXPECT_EQ(s.dispatched() + s.pending(), s.admitted());
    }
    return std::pair(trace, ledger);
  };
  const auto a = replay();
  const auto b = replay();
  EXPECT_EQ(a.first, b.first);
  EXPECT_EQ(a.second, b.second);
  EXPECT_GT(a.second.evictions, 0u);
}

}  // namespace
