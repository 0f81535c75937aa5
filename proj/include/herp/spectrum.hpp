#pragma once

// Mass spectra: MGF-subset reader/writer, peak preprocessing and a seeded
// generator of labelled synthetic spectra (peptide templates plus noisy replicas).
//
// Accepted MGF grammar, one item per line, surrounding whitespace ignored:
//   BEGIN IONS
//   TITLE=<text>            optional, becomes Spectrum::id
//   PEPMASS=<mz> [<inten>]  required
//   CHARGE=<n>[+]           required, 1..8
//   SEQ=<text>              optional ground-truth label
//   <KEY>=<value>           any other key is ignored
//   <mz> <intensity> [...]  one peak per line, extra columns ignored
//   END IONS
// Blank lines and lines starting with '#', ';' or '!' are skipped.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <istream>
#include <optional>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "herp/error.hpp"
#include "herp/hypervector.hpp"

namespace herp {

struct Peak {
  double mz = 0.0;
  double intensity = 0.0;
  friend bool operator==(const Peak&, const Peak&) = default;
};

struct Spectrum {
  std::string id;
  double precursor_mz = 0.0;
  int charge = 0;
  std::vector<Peak> peaks;
  std::optional<std::string> label;
  // Set by preprocess(); intensities are then sqrt-transformed and unit-max.
  bool preprocessed = false;

  friend bool operator==(const Spectrum&, const Spectrum&) = default;
};

inline constexpr int kMaxCharge = 8;

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

inline std::optional<double> parse_double(std::string_view s) {
  double v = 0.0;
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc{} || ptr != end || !std::isfinite(v)) return std::nullopt;
  return v;
}

inline std::string format_double(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

inline std::vector<std::string_view> split_ws(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && (s[i] == ' ' || s[i] == '\t')) ++i;
    const std::size_t start = i;
    while (i < s.size() && s[i] != ' ' && s[i] != '\t') ++i;
    if (i > start) out.push_back(s.substr(start, i - start));
  }
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// MGF
// ---------------------------------------------------------------------------

struct MgfDiagnostic {
  std::size_t line = 0;  // line of the BEGIN IONS that opened the block
  std::string title;
  std::string message;
};

struct MgfParseResult {
  std::vector<Spectrum> spectra;
  std::vector<MgfDiagnostic> rejected;
};

inline MgfParseResult parse_mgf(std::istream& in) {
  MgfParseResult result;
  std::string raw;
  std::size_t line_no = 0;

  bool in_block = false;
  std::size_t block_line = 0;
  std::size_t block_index = 0;
  Spectrum cur;
  bool have_pepmass = false;
  bool have_charge = false;
  std::optional<std::string> error;

  auto reset = [&] {
    cur = Spectrum{};
    have_pepmass = have_charge = false;
    error.reset();
  };
  auto reject = [&](std::string msg) {
    result.rejected.push_back({block_line, cur.id, std::move(msg)});
  };
  auto fail = [&](std::string msg) {
    if (!error) error = std::move(msg) + " (line " + std::to_string(line_no) + ")";
  };

  while (std::getline(in, raw)) {
    ++line_no;
    const auto line = detail::trim(raw);
    if (line.empty() || line.front() == '#' || line.front() == ';' || line.front() == '!') continue;

    if (line == "BEGIN IONS") {
      if (in_block) {
        reject("block not terminated by END IONS before line " + std::to_string(line_no));
      }
      reset();
      in_block = true;
      block_line = line_no;
      cur.id = "index=" + std::to_string(block_index++);
      continue;
    }
    if (!in_block) continue;  // text between blocks is ignored

    if (line == "END IONS") {
      in_block = false;
      if (error) {
        reject(*error);
      } else if (!have_pepmass) {
        reject("missing PEPMASS");
      } else if (!have_charge) {
        reject("missing CHARGE");
      } else {
        result.spectra.push_back(std::move(cur));
      }
      reset();
      continue;
    }

    if (const auto eq = line.find('='); eq != std::string_view::npos) {
      const auto key = line.substr(0, eq);
      const auto value = detail::trim(line.substr(eq + 1));
      if (key == "TITLE") {
        cur.id = std::string(value);
      } else if (key == "PEPMASS") {
        const auto tokens = detail::split_ws(value);
        const auto mz = tokens.empty() ? std::nullopt : detail::parse_double(tokens.front());
        if (!mz || *mz <= 0.0) {
          fail("bad PEPMASS '" + std::string(value) + "'");
        } else {
          cur.precursor_mz = *mz;
          have_pepmass = true;
        }
      } else if (key == "CHARGE") {
        std::string_view digits = value;
        if (!digits.empty() && digits.back() == '+') digits.remove_suffix(1);
        int z = 0;
        auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), z);
        if (ec != std::errc{} || ptr != digits.data() + digits.size() || z < 1 || z > kMaxCharge) {
          fail("bad CHARGE '" + std::string(value) + "'");
        } else {
          cur.charge = z;
          have_charge = true;
        }
      } else if (key == "SEQ") {
        cur.label = std::string(value);
      }
      continue;
    }

    const auto tokens = detail::split_ws(line);
    const auto mz = tokens.size() >= 2 ? detail::parse_double(tokens[0]) : std::nullopt;
    const auto inten = tokens.size() >= 2 ? detail::parse_double(tokens[1]) : std::nullopt;
    if (!mz || !inten) {
      fail("non-numeric peak line '" + std::string(line) + "'");
    } else if (*mz <= 0.0 || *inten < 0.0) {
      fail("peak out of range '" + std::string(line) + "'");
    } else {
      cur.peaks.push_back({*mz, *inten});
    }
  }
  if (in_block) reject("unterminated block at end of input");
  return result;
}

inline MgfParseResult parse_mgf(std::string_view text) {
  std::istringstream in{std::string(text)};
  return parse_mgf(in);
}

inline void write_mgf(std::ostream& out, const std::vector<Spectrum>& spectra) {
  for (const auto& s : spectra) {
    out << "BEGIN IONS\n";
    out << "TITLE=" << s.id << '\n';
    out << "PEPMASS=" << detail::format_double(s.precursor_mz) << '\n';
    out << "CHARGE=" << s.charge << "+\n";
    if (s.label) out << "SEQ=" << *s.label << '\n';
    for (const auto& p : s.peaks) {
      out << detail::format_double(p.mz) << ' ' << detail::format_double(p.intensity) << '\n';
    }
    out << "END IONS\n\n";
  }
}

inline nlohmann::json to_json(const Spectrum& s) {
  nlohmann::json peaks = nlohmann::json::array();
  for (const auto& p : s.peaks) peaks.push_back({p.mz, p.intensity});
  nlohmann::json j{{"id", s.id},
                   {"precursor_mz", s.precursor_mz},
                   {"charge", s.charge},
                   {"preprocessed", s.preprocessed},
                   {"peaks", std::move(peaks)}};
  j["label"] = s.label ? nlohmann::json(*s.label) : nlohmann::json(nullptr);
  return j;
}

// ---------------------------------------------------------------------------
// Preprocessing
// ---------------------------------------------------------------------------

struct PreprocessConfig {
  double mz_min = 200.0;
  double mz_max = 2000.0;
  std::size_t top_n = 50;
  std::size_t min_peaks = 5;
};

struct Preprocessed {
  std::optional<Spectrum> spectrum;
  std::string rejection;  // empty when accepted
};

// Window [mz_min, mz_max), collapse duplicate m/z (keep the most intense),
// keep the top_n most intense peaks, sqrt then unit-max intensities, sort by m/z.
// Intensities of an already preprocessed spectrum are left untouched, which
// makes the operation idempotent.
inline Preprocessed preprocess(const Spectrum& s, const PreprocessConfig& cfg = {}) {
  if (!(cfg.mz_min < cfg.mz_max) || cfg.top_n == 0) {
    throw ConfigError("preprocess: need mz_min < mz_max and top_n > 0");
  }
  std::vector<Peak> peaks;
  peaks.reserve(s.peaks.size());
  for (const auto& p : s.peaks) {
    if (p.mz >= cfg.mz_min && p.mz < cfg.mz_max) peaks.push_back(p);
  }
  std::sort(peaks.begin(), peaks.end(), [](const Peak& a, const Peak& b) {
    return a.mz != b.mz ? a.mz < b.mz : a.intensity > b.intensity;
  });
  peaks.erase(std::unique(peaks.begin(), peaks.end(),
                          [](const Peak& a, const Peak& b) { return a.mz == b.mz; }),
              peaks.end());

  if (peaks.size() > cfg.top_n) {
    std::stable_sort(peaks.begin(), peaks.end(),
                     [](const Peak& a, const Peak& b) { return a.intensity > b.intensity; });
    peaks.resize(cfg.top_n);
  }
  if (peaks.size() < cfg.min_peaks) {
    return {std::nullopt, s.id + ": " + std::to_string(peaks.size()) + " peaks survive, need " +
                              std::to_string(cfg.min_peaks)};
  }

  if (!s.preprocessed) {
    double max_value = 0.0;
    for (auto& p : peaks) {
      p.intensity = std::sqrt(p.intensity);
      max_value = std::max(max_value, p.intensity);
    }
    if (max_value <= 0.0) return {std::nullopt, s.id + ": no peak with positive intensity"};
    for (auto& p : peaks) p.intensity /= max_value;
  }
  std::sort(peaks.begin(), peaks.end(), [](const Peak& a, const Peak& b) { return a.mz < b.mz; });

  Spectrum out = s;
  out.peaks = std::move(peaks);
  out.preprocessed = true;
  return {std::move(out), {}};
}

struct PreprocessBatch {
  std::vector<Spectrum> accepted;
  std::vector<std::string> rejections;
};

inline PreprocessBatch preprocess_all(const std::vector<Spectrum>& spectra, const PreprocessConfig& cfg = {}) {
  PreprocessBatch batch;
  batch.accepted.reserve(spectra.size());
  for (const auto& s : spectra) {
    auto r = preprocess(s, cfg);
    if (r.spectrum) {
      batch.accepted.push_back(std::move(*r.spectrum));
    } else {
      batch.rejections.push_back(std::move(r.rejection));
    }
  }
  return batch;
}

// ---------------------------------------------------------------------------
// Synthetic ground truth
// ---------------------------------------------------------------------------

struct SyntheticConfig {
  std::size_t n_peptides = 500;
  std::size_t spectra_per_peptide = 10;
  std::size_t peaks_per_spectrum = 40;
  double dropout_prob = 0.1;
  double mz_jitter_sd = 0.01;         // Da
  double intensity_jitter_rel = 0.1;  // relative sd of multiplicative noise
  double mz_low = 200.0;
  double mz_high = 2000.0;
  double precursor_low = 400.0;
  double precursor_high = 1000.0;
  int charge_min = 2;
  int charge_max = 3;
  bool shuffle = true;  // interleave replicas in arrival order
  std::uint64_t seed = 42;

  void validate() const {
    auto bad = [](const std::string& what) { throw ConfigError("synthetic config: " + what); };
    if (n_peptides == 0 || spectra_per_peptide == 0 || peaks_per_spectrum == 0) bad("counts must be positive");
    if (!(dropout_prob >= 0.0 && dropout_prob <= 1.0)) bad("dropout_prob must lie in [0, 1]");
    if (!(mz_jitter_sd >= 0.0) || !(intensity_jitter_rel >= 0.0)) bad("jitter must be non-negative");
    if (!(mz_low > 0.0 && mz_low < mz_high)) bad("need 0 < mz_low < mz_high");
    if (!(precursor_low > 1.00794 && precursor_low < precursor_high)) bad("need 1.00794 < precursor_low < precursor_high");
    if (charge_min < 1 || charge_max > kMaxCharge || charge_min > charge_max) bad("charge range must lie in [1, 8]");
  }
};

// Templates are drawn first (one RNG stream per peptide), then each replica
// draws exactly three variates per template peak (dropout, m/z noise,
// intensity noise) from its own stream, so noise settings never shift the
// stream and a zero-noise replica equals its template.
inline std::vector<Spectrum> generate_synthetic(const SyntheticConfig& cfg) {
  cfg.validate();
  std::vector<Spectrum> out;
  out.reserve(cfg.n_peptides * cfg.spectra_per_peptide);

  for (std::size_t p = 0; p < cfg.n_peptides; ++p) {
    auto trng = seeded_engine(cfg.seed, 2 * p);
    std::uniform_real_distribution<double> prec(cfg.precursor_low, cfg.precursor_high);
    std::uniform_int_distribution<int> charge(cfg.charge_min, cfg.charge_max);
    std::uniform_real_distribution<double> mz(cfg.mz_low, cfg.mz_high);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    Spectrum tmpl;
    tmpl.precursor_mz = prec(trng);
    tmpl.charge = charge(trng);
    tmpl.peaks.resize(cfg.peaks_per_spectrum);
    for (auto& peak : tmpl.peaks) {
      peak.mz = mz(trng);
      const double u = unit(trng);
      peak.intensity = 1.0 + 999.0 * u * u;
    }

    auto rrng = seeded_engine(cfg.seed, 2 * p + 1);
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (std::size_t r = 0; r < cfg.spectra_per_peptide; ++r) {
      Spectrum s;
      s.id = "P" + std::to_string(p) + "_R" + std::to_string(r);
      s.precursor_mz = tmpl.precursor_mz;
      s.charge = tmpl.charge;
      s.label = std::to_string(p);
      s.peaks.reserve(tmpl.peaks.size());
      for (const auto& peak : tmpl.peaks) {
        const double drop = unit(rrng);
        const double dmz = gauss(rrng) * cfg.mz_jitter_sd;
        const double dint = gauss(rrng) * cfg.intensity_jitter_rel;
        if (drop < cfg.dropout_prob) continue;
        s.peaks.push_back({peak.mz + dmz, std::max(0.0, peak.intensity * (1.0 + dint))});
      }
      std::sort(s.peaks.begin(), s.peaks.end(), [](const Peak& a, const Peak& b) { return a.mz < b.mz; });
      out.push_back(std::move(s));
    }
  }

  if (cfg.shuffle) {
    auto srng = seeded_engine(cfg.seed, 0x5EED5u);
    std::shuffle(out.begin(), out.end(), srng);
  }
  return out;
}

}  // namespace herp
