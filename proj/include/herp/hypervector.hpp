#pragma once

// Bit-packed binary hypervectors and the algebra used by the encoder and the
// CAM model: XOR binding, majority bundling, Hamming distance and seeded
// codebooks (random ID vectors and correlated Level vectors).

#include <algorithm>
#include <bit>
#include <cstddef>
#include <cstdint>
#include <istream>
#include <numeric>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "herp/binary_io.hpp"
#include "herp/error.hpp"

namespace herp {

inline constexpr std::size_t kWordBits = 64;
inline constexpr std::size_t kDefaultDim = 2048;

class Hypervector {
 public:
  Hypervector() = default;

  // All-zero vector. dim must be a positive multiple of 64.
  explicit Hypervector(std::size_t dim) : dim_(dim), words_(checked_words(dim), 0) {}

  std::size_t dim() const noexcept { return dim_; }
  bool empty() const noexcept { return dim_ == 0; }

  std::span<const std::uint64_t> words() const noexcept { return words_; }
  std::span<std::uint64_t> words() noexcept { return words_; }

  bool bit(std::size_t i) const { return (words_[i / kWordBits] >> (i % kWordBits)) & 1u; }

  void set_bit(std::size_t i, bool value) {
    const std::uint64_t mask = std::uint64_t{1} << (i % kWordBits);
    if (value) {
      words_[i / kWordBits] |= mask;
    } else {
      words_[i / kWordBits] &= ~mask;
    }
  }

  void flip_bit(std::size_t i) { words_[i / kWordBits] ^= std::uint64_t{1} << (i % kWordBits); }

  std::size_t popcount() const noexcept {
    std::size_t n = 0;
    for (auto w : words_) n += static_cast<std::size_t>(std::popcount(w));
    return n;
  }

  Hypervector operator~() const {
    Hypervector out(*this);
    for (auto& w : out.words_) w = ~w;
    return out;
  }

  friend bool operator==(const Hypervector&, const Hypervector&) = default;

 private:
  static std::size_t checked_words(std::size_t dim) {
    if (dim == 0 || dim % kWordBits != 0) {
      throw ConfigError("hypervector dimension must be a positive multiple of 64, got " +
                        std::to_string(dim));
    }
    return dim / kWordBits;
  }

  std::size_t dim_ = 0;
  std::vector<std::uint64_t> words_;
};

namespace detail {

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

inline void require_same_dim(const Hypervector& a, const Hypervector& b, const char* op) {
  if (a.dim() != b.dim()) {
    throw ConfigError(std::string(op) + ": dimension mismatch (" + std::to_string(a.dim()) +
                      " vs " + std::to_string(b.dim()) + ")");
  }
}

}  // namespace detail

// Seeded generator for derived streams; (seed, stream) pairs never collide in practice.
inline std::mt19937_64 seeded_engine(std::uint64_t seed, std::uint64_t stream) {
  return std::mt19937_64(detail::splitmix64(seed ^ detail::splitmix64(stream)));
}

// Deterministic pseudo-random hypervector for (seed, index, dim).
inline Hypervector random_hv(std::uint64_t seed, std::uint64_t index, std::size_t dim = kDefaultDim) {
  Hypervector hv(dim);
  auto rng = seeded_engine(seed, index);
  for (auto& w : hv.words()) w = rng();
  return hv;
}

inline Hypervector bind(const Hypervector& a, const Hypervector& b) {
  detail::require_same_dim(a, b, "bind");
  Hypervector out(a.dim());
  auto aw = a.words();
  auto bw = b.words();
  auto ow = out.words();
  for (std::size_t i = 0; i < ow.size(); ++i) ow[i] = aw[i] ^ bw[i];
  return out;
}

inline std::size_t hamming(const Hypervector& a, const Hypervector& b) {
  detail::require_same_dim(a, b, "hamming");
  auto aw = a.words();
  auto bw = b.words();
  std::size_t d = 0;
  for (std::size_t i = 0; i < aw.size(); ++i) d += static_cast<std::size_t>(std::popcount(aw[i] ^ bw[i]));
  return d;
}

// Hamming distance restricted to words [first_word, first_word + word_count).
inline std::size_t hamming_words(std::span<const std::uint64_t> a, std::span<const std::uint64_t> b,
                                 std::size_t first_word, std::size_t word_count) {
  std::size_t d = 0;
  for (std::size_t i = first_word; i < first_word + word_count; ++i) {
    d += static_cast<std::size_t>(std::popcount(a[i] ^ b[i]));
  }
  return d;
}

// Per-position counts of set bits over a multiset of hypervectors.
class Accumulator {
 public:
  Accumulator() = default;
  explicit Accumulator(std::size_t dim) : counts_(dim, 0) {
    if (dim == 0 || dim % kWordBits != 0) {
      throw ConfigError("accumulator dimension must be a positive multiple of 64");
    }
  }
  Accumulator(std::vector<std::uint32_t> counts, std::uint32_t total)
      : counts_(std::move(counts)), total_(total) {
    if (counts_.empty() || counts_.size() % kWordBits != 0) {
      throw ConfigError("accumulator dimension must be a positive multiple of 64");
    }
    if (std::any_of(counts_.begin(), counts_.end(), [&](auto c) { return c > total_; })) {
      throw InputError("accumulator count exceeds total");
    }
  }

  std::size_t dim() const noexcept { return counts_.size(); }
  std::uint32_t total() const noexcept { return total_; }
  std::span<const std::uint32_t> counts() const noexcept { return counts_; }

  void add(const Hypervector& hv) {
    if (hv.dim() != counts_.size()) {
      throw ConfigError("accumulator: dimension mismatch");
    }
    auto words = hv.words();
    for (std::size_t w = 0; w < words.size(); ++w) {
      std::uint64_t bits = words[w];
      while (bits != 0) {
        const int b = std::countr_zero(bits);
        ++counts_[w * kWordBits + static_cast<std::size_t>(b)];
        bits &= bits - 1;
      }
    }
    ++total_;
  }

  friend bool operator==(const Accumulator&, const Accumulator&) = default;

 private:
  std::vector<std::uint32_t> counts_;
  std::uint32_t total_ = 0;
};

// Majority vote; exact ties (2*count == total) take the tie-breaker's bit.
inline Hypervector bundle(const Accumulator& acc, const Hypervector& tie_breaker) {
  if (acc.total() == 0) throw ConfigError("bundle: empty accumulator");
  if (tie_breaker.dim() != acc.dim()) throw ConfigError("bundle: tie-breaker dimension mismatch");
  Hypervector out(acc.dim());
  const auto counts = acc.counts();
  const std::uint64_t total = acc.total();
  for (std::size_t i = 0; i < counts.size(); ++i) {
    const std::uint64_t twice = 2 * std::uint64_t{counts[i]};
    if (twice > total || (twice == total && tie_breaker.bit(i))) out.set_bit(i, true);
  }
  return out;
}

enum class CodebookKind : std::uint32_t { kId = 0, kLevel = 1 };

struct Codebook {
  CodebookKind kind = CodebookKind::kId;
  std::uint64_t seed = 0;
  std::size_t dim = 0;
  std::vector<Hypervector> entries;

  std::size_t size() const noexcept { return entries.size(); }
  const Hypervector& operator[](std::size_t i) const { return entries.at(i); }
};

// count independent random vectors.
inline Codebook make_id_codebook(std::size_t count, std::uint64_t seed, std::size_t dim = kDefaultDim) {
  if (count == 0) throw ConfigError("ID codebook needs at least one entry");
  Codebook cb{CodebookKind::kId, seed, dim, {}};
  cb.entries.reserve(count);
  for (std::size_t i = 0; i < count; ++i) cb.entries.push_back(random_hv(seed, i, dim));
  return cb;
}

// Entry 0 is random; entry k flips a fresh block of floor(D/2/(levels-1))
// positions of entry k-1, so distance(i, j) = |i - j| * block.
inline Codebook make_level_codebook(std::size_t levels, std::uint64_t seed, std::size_t dim = kDefaultDim) {
  if (levels < 2 || levels > dim / 2 + 1) {
    throw ConfigError("level codebook: levels must lie in [2, D/2 + 1], got " + std::to_string(levels));
  }
  Codebook cb{CodebookKind::kLevel, seed, dim, {}};
  cb.entries.reserve(levels);
  cb.entries.push_back(random_hv(seed, 0, dim));

  std::vector<std::size_t> order(dim);
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto rng = seeded_engine(seed, 0xC0DEB00Cull);
  std::shuffle(order.begin(), order.end(), rng);

  const std::size_t block = dim / 2 / (levels - 1);
  for (std::size_t k = 1; k < levels; ++k) {
    Hypervector next = cb.entries.back();
    for (std::size_t j = (k - 1) * block; j < k * block; ++j) next.flip_bit(order[j]);
    cb.entries.push_back(std::move(next));
  }
  return cb;
}

// Codebook snapshot: "HRPCODE1", u32 version, u32 D, u32 kind, u32 count,
// u64 seed, then count * D/64 little-endian u64 words.
inline constexpr std::string_view kCodebookMagic = "HRPCODE1";
inline constexpr std::uint32_t kCodebookVersion = 1;

inline void write_codebook(std::ostream& out, const Codebook& cb) {
  io::write_magic(out, kCodebookMagic);
  io::write_le<std::uint32_t>(out, kCodebookVersion);
  io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(cb.dim));
  io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(cb.kind));
  io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(cb.entries.size()));
  io::write_le<std::uint64_t>(out, cb.seed);
  for (const auto& hv : cb.entries) {
    for (auto w : hv.words()) io::write_le<std::uint64_t>(out, w);
  }
}

inline Codebook read_codebook(std::istream& in) {
  io::expect_magic(in, kCodebookMagic);
  if (io::read_le<std::uint32_t>(in) != kCodebookVersion) throw InputError("unsupported codebook version");
  Codebook cb;
  cb.dim = io::read_le<std::uint32_t>(in);
  const auto kind = io::read_le<std::uint32_t>(in);
  if (kind > 1) throw InputError("unknown codebook kind");
  cb.kind = static_cast<CodebookKind>(kind);
  const auto count = io::read_le<std::uint32_t>(in);
  cb.seed = io::read_le<std::uint64_t>(in);
  cb.entries.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    Hypervector hv(cb.dim);
    for (auto& w : hv.words()) w = io::read_le<std::uint64_t>(in);
    cb.entries.push_back(std::move(hv));
  }
  return cb;
}

}  // namespace herp
