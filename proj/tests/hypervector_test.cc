#include <gtest/gtest.h>

#include <cmath>
#include <sstream>
#include <vector>

#include "herp/hypervector.hpp"

using herp::Accumulator;
using herp::Hypervector;

namespace {

constexpr std::size_t kD = 2048;

// Independent bit-by-bit reference for Hamming distance.
std::size_t slow_hamming(const Hypervector& a, const Hypervector& b) {
  std::size_t d = 0;
  for (std::size_t i = 0; i < a.dim(); ++i) d += a.bit(i) != b.bit(i);
  return d;
}

double orthogonal_band(std::size_t dim) { return 4.0 * std::sqrt(static_cast<double>(dim) / 4.0); }

TEST(RandomHv, DeterministicPerSeedAndIndex) {
  EXPECT_EQ(herp::random_hv(1, 0, kD), herp::random_hv(1, 0, kD));
  EXPECT_NE(herp::random_hv(1, 0, kD), herp::random_hv(1, 1, kD));
}

TEST(RandomHv, DistinctIndicesAreNearOrthogonal) {
  const double band = orthogonal_band(kD);
  const auto base = herp::random_hv(1, 0, kD);
  for (std::uint64_t k = 1; k <= 1000; ++k) {
    const auto d = static_cast<double>(herp::hamming(base, herp::random_hv(1, k, kD)));
    EXPECT_LE(std::abs(d - kD / 2.0), band) << "index " << k;
  }
}

TEST(RandomHv, DistinctSeedsAreNearOrthogonal) {
  const double band = orthogonal_band(kD);
  for (std::uint64_t s = 2; s < 1002; ++s) {
    const auto d = static_cast<double>(herp::hamming(herp::random_hv(1, 0, kD), herp::random_hv(s, 0, kD)));
    EXPECT_LE(std::abs(d - kD / 2.0), band) << "seed " << s;
  }
}

TEST(RandomHv, BitsAreBalanced) {
  std::size_t ones = 0;
  for (std::uint64_t k = 0; k < 100; ++k) ones += herp::random_hv(7, k, kD).popcount();
  EXPECT_NEAR(static_cast<double>(ones) / (100.0 * kD), 0.5, 0.01);
}

TEST(Hypervector, RejectsBadDimensions) {
  EXPECT_THROW(Hypervector(0), herp::ConfigError);
  EXPECT_THROW(Hypervector(100), herp::ConfigError);
  EXPECT_NO_THROW(Hypervector(64));
}

TEST(Bind, SelfInverseAndIdentity) {
  const auto a = herp::random_hv(3, 0, kD);
  const auto b = herp::random_hv(3, 1, kD);
  EXPECT_EQ(herp::bind(a, a), Hypervector(kD));
  EXPECT_EQ(herp::bind(a, Hypervector(kD)), a);
  EXPECT_EQ(herp::bind(herp::bind(a, b), b), a);
}

TEST(Bind, AlgebraicProperties) {
  for (std::uint64_t t = 0; t < 100; ++t) {
    const auto a = herp::random_hv(11, 3 * t, kD);
    const auto b = herp::random_hv(11, 3 * t + 1, kD);
    const auto c = herp::random_hv(11, 3 * t + 2, kD);
    EXPECT_EQ(herp::bind(a, b), herp::bind(b, a));
    EXPECT_EQ(herp::bind(herp::bind(a, b), c), herp::bind(a, herp::bind(b, c)));
    // XOR with a common vector preserves distance.
    EXPECT_EQ(herp::hamming(herp::bind(a, c), herp::bind(b, c)), herp::hamming(a, b));
  }
}

TEST(Bind, DimensionMismatchThrows) {
  EXPECT_THROW(herp::bind(Hypervector(64), Hypervector(128)), herp::ConfigError);
  EXPECT_THROW(herp::hamming(Hypervector(64), Hypervector(128)), herp::ConfigError);
}

TEST(Hamming, Extremes) {
  const auto a = herp::random_hv(5, 0, kD);
  EXPECT_EQ(herp::hamming(a, a), 0u);
  EXPECT_EQ(herp::hamming(a, ~a), kD);
}

TEST(Hamming, MeanOfRandomPairs) {
  double sum = 0;
  for (std::uint64_t k = 0; k < 1000; ++k) {
    sum += static_cast<double>(herp::hamming(herp::random_hv(9, 2 * k, kD), herp::random_hv(9, 2 * k + 1, kD)));
  }
  EXPECT_NEAR(sum / 1000.0, 1024.0, 0.03 * 1024.0);
}

TEST(Hamming, MetricAxiomsAtD64) {
  constexpr std::size_t d = 64;
  for (std::uint64_t t = 0; t < 2000; ++t) {
    const auto a = herp::random_hv(21, 3 * t, d);
    const auto b = herp::random_hv(21, 3 * t + 1, d);
    const auto c = herp::random_hv(21, 3 * t + 2, d);
    const auto ab = herp::hamming(a, b);
    EXPECT_EQ(ab, slow_hamming(a, b));
    EXPECT_EQ(ab, herp::hamming(b, a));
    EXPECT_EQ(ab == 0, a == b);
    EXPECT_LE(herp::hamming(a, c), ab + herp::hamming(b, c));
  }
}

TEST(Bundle, UnanimousMajorityReturnsInput) {
  const auto a = herp::random_hv(4, 0, kD);
  Accumulator acc(kD);
  for (int i = 0; i < 3; ++i) acc.add(a);
  EXPECT_EQ(herp::bundle(acc, herp::random_hv(4, 99, kD)), a);
}

TEST(Bundle, TwoOfThreeMatchesBitwiseOracle) {
  constexpr std::size_t d = 64;
  for (std::uint64_t t = 0; t < 200; ++t) {
    const auto a = herp::random_hv(6, 2 * t, d);
    const auto b = herp::random_hv(6, 2 * t + 1, d);
    Accumulator acc(d);
    acc.add(a);
    acc.add(a);
    acc.add(b);
    const auto h = herp::bundle(acc, Hypervector(d));
    for (std::size_t i = 0; i < d; ++i) {
      const int votes = 2 * a.bit(i) + b.bit(i);
      EXPECT_EQ(h.bit(i), votes >= 2) << "bit " << i;
      EXPECT_EQ(h.bit(i), a.bit(i));
    }
  }
}

TEST(Bundle, AllTiesTakeTieBreaker) {
  const auto a = herp::random_hv(8, 0, kD);
  const auto t = herp::random_hv(8, 1, kD);
  Accumulator acc(kD);
  acc.add(a);
  acc.add(~a);
  EXPECT_EQ(herp::bundle(acc, t), t);
}

TEST(Bundle, EmptyAccumulatorThrows) {
  EXPECT_THROW(herp::bundle(Accumulator(kD), Hypervector(kD)), herp::ConfigError);
}

TEST(Bundle, CountsNeverExceedTotal) {
  Accumulator acc(kD);
  for (std::uint64_t k = 0; k < 17; ++k) acc.add(herp::random_hv(10, k, kD));
  for (auto c : acc.counts()) EXPECT_LE(c, acc.total());
  EXPECT_THROW(Accumulator(std::vector<std::uint32_t>(64, 3), 2), herp::InputError);
}

TEST(Bundle, MajorityIsCentral) {
  double to_bundle = 0, between = 0;
  for (std::uint64_t t = 0; t < 100; ++t) {
    std::vector<Hypervector> xs;
    Accumulator acc(kD);
    for (std::uint64_t i = 0; i < 3; ++i) {
      xs.push_back(herp::random_hv(12, 3 * t + i, kD));
      acc.add(xs.back());
    }
    const auto h = herp::bundle(acc, Hypervector(kD));
    for (std::size_t i = 0; i < 3; ++i) {
      to_bundle += static_cast<double>(herp::hamming(h, xs[i]));
      between += static_cast<double>(herp::hamming(xs[i], xs[(i + 1) % 3]));
    }
  }
  EXPECT_LT(to_bundle, between);
}

TEST(LevelCodebook, TwoLevelsAreHalfApart) {
  const auto cb = herp::make_level_codebook(2, 5, kD);
  EXPECT_EQ(herp::hamming(cb[0], cb[1]), kD / 2);
}

TEST(LevelCodebook, DistanceIsLinearInLevelGap) {
  const auto cb = herp::make_level_codebook(64, 5, kD);
  ASSERT_EQ(cb.size(), 64u);
  EXPECT_EQ(herp::hamming(cb[0], cb[63]), 1008u);
  for (std::size_t i = 0; i < 64; ++i) {
    for (std::size_t j = 0; j < 64; ++j) {
      const std::size_t gap = i > j ? i - j : j - i;
      ASSERT_EQ(herp::hamming(cb[i], cb[j]), gap * 16) << i << "," << j;
    }
  }
}

TEST(LevelCodebook, RejectsOutOfRangeLevels) {
  EXPECT_THROW(herp::make_level_codebook(1, 5, kD), herp::ConfigError);
  EXPECT_THROW(herp::make_level_codebook(kD / 2 + 2, 5, kD), herp::ConfigError);
  EXPECT_NO_THROW(herp::make_level_codebook(kD / 2 + 1, 5, kD));
}

TEST(IdCodebook, EntriesAreNearOrthogonal) {
  const auto cb = herp::make_id_codebook(60, 77, kD);
  const double band = orthogonal_band(kD);
  for (std::size_t i = 0; i < cb.size(); ++i) {
    for (std::size_t j = i + 1; j < cb.size(); ++j) {
      EXPECT_LE(std::abs(static_cast<double>(herp::hamming(cb[i], cb[j])) - kD / 2.0), band);
    }
  }
}

TEST(CodebookSnapshot, RoundTripsAndRejectsGarbage) {
  for (const auto& cb : {herp::make_level_codebook(16, 3, 256), herp::make_id_codebook(9, 4, 256)}) {
    std::stringstream buf;
    herp::write_codebook(buf, cb);
    const auto back = herp::read_codebook(buf);
    EXPECT_EQ(back.kind, cb.kind);
    EXPECT_EQ(back.seed, cb.seed);
    EXPECT_EQ(back.dim, cb.dim);
    EXPECT_EQ(back.entries, cb.entries);
  }
  std::stringstream bad("NOTACODEBOOK");
  EXPECT_THROW(herp::read_codebook(bad), herp::InputError);
}

TEST(CodebookSnapshot, HeaderIsLittleEndian) {
  std::stringstream buf;
  herp::write_codebook(buf, herp::make_level_codebook(2, 0x0102030405060708ull, 128));
  const std::string bytes = buf.str();
  ASSERT_EQ(bytes.size(), 8u + 4 * 4 + 8 + 2 * 16);
  EXPECT_EQ(bytes.substr(0, 8), "HRPCODE1");
  EXPECT_EQ(static_cast<unsigned char>(bytes[12]), 128u);  // D low byte
  EXPECT_EQ(static_cast<unsigned char>(bytes[16]), 1u);    // kind = level
  EXPECT_EQ(static_cast<unsigned char>(bytes[20]), 2u);    // entry count
  EXPECT_EQ(static_cast<unsigned char>(bytes[24]), 0x08u); // seed LSB first
}

}  // namespace
