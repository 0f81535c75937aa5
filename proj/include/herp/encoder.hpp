#pragma once

// Spectrum -> hypervector (ID-Level encoding: each peak binds the ID vector of
// its m/z bin to the Level vector of its quantized intensity, and the bound
// pairs are majority-bundled) and spectrum -> precursor bucket id.

#include <cmath>
#include <cstdint>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "herp/binary_io.hpp"
#include "herp/error.hpp"
#include "herp/hypervector.hpp"
#include "herp/spectrum.hpp"

namespace herp {

using BucketId = std::int64_t;

struct BucketParams {
  double charge_mass = 1.00794;        // Da
  double cluster_spacing = 1.0005079;  // Da between adjacent buckets
};

// floor((precursor_mz - charge_mass) * charge / cluster_spacing)
inline BucketId bucket_of(double precursor_mz, int charge, const BucketParams& p = {}) {
  if (charge < 1) throw InputError("bucket_of: charge must be >= 1");
  if (!(precursor_mz >= p.charge_mass)) {
    throw InputError("bucket_of: precursor m/z " + std::to_string(precursor_mz) +
                     " below the charge mass");
  }
  return static_cast<BucketId>(std::floor((precursor_mz - p.charge_mass) * charge / p.cluster_spacing));
}

inline BucketId bucket_of(const Spectrum& s, const BucketParams& p = {}) {
  return bucket_of(s.precursor_mz, s.charge, p);
}

struct EncoderConfig {
  std::size_t dim = kDefaultDim;
  double mz_bin_width = 1.0005079;
  double mz_low = 200.0;
  double mz_high = 2000.0;
  std::size_t intensity_levels = 64;
  std::uint64_t id_seed = 0x1D;
  std::uint64_t level_seed = 0x1E;
  std::uint64_t tie_seed = 0x71E;

  std::size_t id_bins() const {
    return static_cast<std::size_t>(std::ceil((mz_high - mz_low) / mz_bin_width));
  }

  void validate() const {
    if (dim == 0 || dim % 128 != 0) throw ConfigError("encoder: D must be a positive multiple of 128");
    if (!(mz_bin_width > 0.0) || !(mz_low < mz_high)) throw ConfigError("encoder: bad m/z binning");
    if (id_bins() > 65536) throw ConfigError("encoder: more than 65536 m/z bins");
    if (intensity_levels < 2 || intensity_levels > dim / 2 + 1) {
      throw ConfigError("encoder: intensity_levels must lie in [2, D/2 + 1]");
    }
  }
};

inline std::size_t mz_bin(double mz, const EncoderConfig& cfg) {
  if (!(mz >= cfg.mz_low && mz < cfg.mz_high)) {
    throw InvariantError("encoder: peak m/z " + std::to_string(mz) + " outside the encoder range");
  }
  const auto bin = static_cast<std::size_t>(std::floor((mz - cfg.mz_low) / cfg.mz_bin_width));
  return std::min(bin, cfg.id_bins() - 1);
}

// Round to nearest level, halves up.
inline std::size_t intensity_level(double intensity, const EncoderConfig& cfg) {
  if (!(intensity >= 0.0 && intensity <= 1.0)) {
    throw InvariantError("encoder: intensity " + std::to_string(intensity) + " not unit-normalized");
  }
  const auto level = static_cast<std::size_t>(
      std::floor(intensity * static_cast<double>(cfg.intensity_levels - 1) + 0.5));
  return std::min(level, cfg.intensity_levels - 1);
}

inline Hypervector encode_spectrum(const Spectrum& s, const EncoderConfig& cfg, const Codebook& id_cb,
                                   const Codebook& level_cb, const Hypervector& tie_breaker) {
  if (!s.preprocessed) throw InvariantError("encoder: spectrum '" + s.id + "' was not preprocessed");
  if (s.peaks.empty()) throw InvariantError("encoder: spectrum '" + s.id + "' has no peaks");
  if (id_cb.dim != cfg.dim || level_cb.dim != cfg.dim || tie_breaker.dim() != cfg.dim) {
    throw ConfigError("encoder: codebook dimension does not match config");
  }
  if (id_cb.size() < cfg.id_bins() || level_cb.size() != cfg.intensity_levels) {
    throw ConfigError("encoder: codebook sizes do not match config");
  }
  Accumulator acc(cfg.dim);
  for (const auto& p : s.peaks) {
    acc.add(bind(id_cb[mz_bin(p.mz, cfg)], level_cb[intensity_level(p.intensity, cfg)]));
  }
  return bundle(acc, tie_breaker);
}

// Owns the codebooks derived from an EncoderConfig.
class Encoder {
 public:
  explicit Encoder(EncoderConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    id_cb_ = make_id_codebook(cfg_.id_bins(), cfg_.id_seed, cfg_.dim);
    level_cb_ = make_level_codebook(cfg_.intensity_levels, cfg_.level_seed, cfg_.dim);
    tie_breaker_ = random_hv(cfg_.tie_seed, 0, cfg_.dim);
  }

  const EncoderConfig& config() const noexcept { return cfg_; }
  const Codebook& id_codebook() const noexcept { return id_cb_; }
  const Codebook& level_codebook() const noexcept { return level_cb_; }
  const Hypervector& tie_breaker() const noexcept { return tie_breaker_; }

  Hypervector encode(const Spectrum& s) const {
    return encode_spectrum(s, cfg_, id_cb_, level_cb_, tie_breaker_);
  }

 private:
  EncoderConfig cfg_;
  Codebook id_cb_;
  Codebook level_cb_;
  Hypervector tie_breaker_;
};

// Hypervector dump: "HRPHVS01", u32 version, u32 D, u64 count, then
// count * D/64 little-endian u64 words.
inline constexpr std::string_view kHvDumpMagic = "HRPHVS01";
inline constexpr std::uint32_t kHvDumpVersion = 1;

inline void write_hv_dump(std::ostream& out, std::size_t dim, const std::vector<Hypervector>& rows) {
  io::write_magic(out, kHvDumpMagic);
  io::write_le<std::uint32_t>(out, kHvDumpVersion);
  io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(dim));
  io::write_le<std::uint64_t>(out, rows.size());
  for (const auto& hv : rows) {
    if (hv.dim() != dim) throw InvariantError("hv dump: row dimension mismatch");
    for (auto w : hv.words()) io::write_le<std::uint64_t>(out, w);
  }
}

struct HvDump {
  std::size_t dim = 0;
  std::vector<Hypervector> rows;
};

inline HvDump read_hv_dump(std::istream& in) {
  io::expect_magic(in, kHvDumpMagic);
  if (io::read_le<std::uint32_t>(in) != kHvDumpVersion) throw InputError("unsupported hv dump version");
  HvDump dump;
  dump.dim = io::read_le<std::uint32_t>(in);
  const auto count = io::read_le<std::uint64_t>(in);
  dump.rows.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    Hypervector hv(dump.dim);
    for (auto& w : hv.words()) w = io::read_le<std::uint64_t>(in);
    dump.rows.push_back(std::move(hv));
  }
  return dump;
}

}  // namespace herp
