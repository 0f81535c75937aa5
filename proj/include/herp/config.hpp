#pragma once

// Run configuration: a flat key=value schema. Values are layered as
// defaults < config file < HERP_<KEY> environment variables < command line.

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "herp/cam.hpp"
#include "herp/cluster.hpp"
#include "herp/encoder.hpp"
#include "herp/error.hpp"
#include "herp/scheduler.hpp"
#include "herp/spectrum.hpp"

namespace herp {

struct ConfigKey {
  std::string_view name;
  std::string_view fallback;
  std::string_view help;
};

inline constexpr std::array kConfigSchema = {
    // encoding
    ConfigKey{"dim", "2048", "hypervector dimension, multiple of 128"},
    ConfigKey{"mz_bin_width", "1.0005079", "peak m/z bin width"},
    ConfigKey{"mz_min", "200", "lower end of the peak m/z window"},
    ConfigKey{"mz_max", "2000", "upper end (exclusive) of the peak m/z window"},
    ConfigKey{"intensity_levels", "64", "number of quantized intensity levels"},
    ConfigKey{"id_seed", "29", "seed of the m/z ID codebook"},
    ConfigKey{"level_seed", "30", "seed of the intensity level codebook"},
    ConfigKey{"tie_seed", "1822", "seed of the majority tie-break vector"},
    ConfigKey{"top_n", "50", "peaks kept per spectrum"},
    ConfigKey{"min_peaks", "5", "spectra with fewer surviving peaks are rejected"},
    // device
    ConfigKey{"search_energy_fJ_per_bit", "0.714", "CAM search energy"},
    ConfigKey{"search_latency_ns", "0.485", "CAM search latency"},
    ConfigKey{"write_energy_fJ_per_bit", "278", "CAM write energy"},
    ConfigKey{"write_latency_ns", "2", "CAM write latency per row"},
    ConfigKey{"voltage_V", "0.8", "operating voltage (recorded only)"},
    ConfigKey{"array_rows", "128", "rows per CAM array"},
    ConfigKey{"array_cols", "128", "columns per CAM array"},
    ConfigKey{"lta_stage_latency_ns", "0.1", "latency of one loser-takes-all stage"},
    ConfigKey{"lta_stage_energy_fJ", "0", "energy of one loser-takes-all stage"},
    ConfigKey{"decision_latency_ns", "0", "threshold comparison latency"},
    ConfigKey{"current_model", "ideal", "matchline current model: ideal | parasitic"},
    ConfigKey{"alpha", "0.002", "parasitic compression coefficient"},
    ConfigKey{"calibrate", "true", "linearize parasitic slice currents"},
    // scheduling
    ConfigKey{"mode", "parallel", "dispatch mode: parallel | serial"},
    ConfigKey{"cam_capacity_bits", "4294967296", "total CAM capacity"},
    ConfigKey{"cache_capacity_rows", "1048576", "bucket cache capacity"},
    ConfigKey{"cache_ns_per_row", "0.5", "bucket cache transfer time per row"},
    ConfigKey{"memory_bandwidth_GBps", "16", "main memory bandwidth"},
    ConfigKey{"memory_latency_ns", "100", "main memory fixed latency"},
    ConfigKey{"transfer_energy_fJ_per_byte", "0", "main memory transfer energy"},
    // clustering
    ConfigKey{"link_threshold", "auto", "initial clustering link distance; auto = 0.33 * dim"},
    ConfigKey{"threshold_percentile", "95", "percentile of member distances behind each bucket threshold"},
    ConfigKey{"threshold_slack", "1.0", "multiplier applied to the percentile"},
    ConfigKey{"rewrite_period", "16", "consensus rewrite every k matches; 0 never rewrites"},
    ConfigKey{"split", "1.0", "fraction of the input used for setup; run takes the rest"},
    ConfigKey{"speedup", "true", "model expansion vs full re-clustering in run"},
    // synthetic data
    ConfigKey{"seed", "42", "synthetic data seed"},
    ConfigKey{"n_peptides", "500", "synthetic peptides"},
    ConfigKey{"spectra_per_peptide", "10", "replicas per peptide"},
    ConfigKey{"peaks_per_spectrum", "40", "template peaks"},
    ConfigKey{"dropout_prob", "0.1", "replica peak dropout probability"},
    ConfigKey{"mz_jitter_sd", "0.01", "replica peak m/z noise"},
    ConfigKey{"intensity_jitter_rel", "0.1", "replica relative intensity noise"},
    ConfigKey{"precursor_low", "400", "lowest synthetic precursor m/z"},
    ConfigKey{"precursor_high", "1000", "highest synthetic precursor m/z"},
    ConfigKey{"charge_min", "2", "lowest synthetic charge"},
    ConfigKey{"charge_max", "3", "highest synthetic charge"},
    ConfigKey{"shuffle", "true", "interleave replicas in arrival order"},
    // dry run
    ConfigKey{"dry_run_rows", "2000000", "catalog-only setup: rows"},
    ConfigKey{"dry_run_buckets", "509", "catalog-only setup: buckets"},
    ConfigKey{"bench_search_rows", "882,727924", "bench: per-query search sizes"},
    // paths
    ConfigKey{"input", "", "input MGF (gen output, setup input) or run directory (report)"},
    ConfigKey{"queries", "", "query MGF for run; defaults to input"},
    ConfigKey{"snapshot", "", "snapshot directory or snapshot root"},
    ConfigKey{"compare", "", "report: second run directory for overlap"},
    ConfigKey{"out", "out", "output directory"},
};

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

class RunConfig {
 public:
  RunConfig() {
    for (const auto& k : kConfigSchema) values_.emplace(k.name, k.fallback);
  }

  static bool known(std::string_view key) {
    return std::any_of(kConfigSchema.begin(), kConfigSchema.end(), [&](const ConfigKey& k) { return k.name == key; });
  }

  void set(std::string_view key, std::string_view value) {
    if (!known(key)) throw ConfigError("unknown config key '" + std::string(key) + "'");
    values_[std::string(key)] = std::string(detail::trim(value));
  }

  // "key=value"
  void set_assignment(std::string_view kv) {
    const auto eq = kv.find('=');
    if (eq == std::string_view::npos) throw ConfigError("expected key=value, got '" + std::string(kv) + "'");
    set(detail::trim(kv.substr(0, eq)), kv.substr(eq + 1));
  }

  void load_stream(std::istream& in, const std::string& origin) {
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
      ++n;
      const auto t = detail::trim(line);
      if (t.empty() || t.front() == '#') continue;
      try {
        set_assignment(t);
      } catch (const ConfigError& e) {
        throw ConfigError(origin + ":" + std::to_string(n) + ": " + e.what());
      }
    }
  }

  void load_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot read config file " + path);
    load_stream(in, path);
  }

  void load_env(const std::function<const char*(const char*)>& lookup = [](const char* n) { return std::getenv(n); }) {
    for (const auto& k : kConfigSchema) {
      std::string name = "HERP_";
      for (char c : k.name) name += static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
      if (const char* v = lookup(name.c_str())) set(k.name, v);
    }
  }

  const std::string& get(std::string_view key) const {
    auto it = values_.find(std::string(key));
    if (it == values_.end()) throw ConfigError("unknown config key '" + std::string(key) + "'");
    return it->second;
  }

  double real(std::string_view key) const {
    const auto v = detail::parse_double(get(key));
    if (!v || !std::isfinite(*v)) throw ConfigError(std::string(key) + ": expected a number, got '" + get(key) + "'");
    return *v;
  }

  std::uint64_t integer(std::string_view key) const {
    const auto v = parse_uint(get(key));
    if (!v) throw ConfigError(std::string(key) + ": expected a non-negative integer, got '" + get(key) + "'");
    return *v;
  }

  std::size_t size(std::string_view key) const { return static_cast<std::size_t>(integer(key)); }

  int small_int(std::string_view key) const {
    const auto v = integer(key);
    if (v > 1000000) throw ConfigError(std::string(key) + ": value too large");
    return static_cast<int>(v);
  }

  bool flag(std::string_view key) const {
    const auto& s = get(key);
    if (s == "true" || s == "1" || s == "yes") return true;
    if (s == "false" || s == "0" || s == "no") return false;
    throw ConfigError(std::string(key) + ": expected true or false, got '" + s + "'");
  }

  std::vector<std::uint64_t> integer_list(std::string_view key) const {
    std::vector<std::uint64_t> out;
    std::stringstream ss(get(key));
    std::string item;
    while (std::getline(ss, item, ',')) {
      const auto v = parse_uint(detail::trim(item));
      if (!v) throw ConfigError(std::string(key) + ": bad list entry '" + item + "'");
      out.push_back(*v);
    }
    return out;
  }

  // Sorted key=value lines.
  std::string echo() const {
    std::string out;
    for (const auto& [k, v] : values_) out += k + "=" + v + "\n";
    return out;
  }

  std::string hash() const {
    std::ostringstream os;
    os << std::hex;
    os.width(16);
    os.fill('0');
    os << fnv1a64(echo());
    return os.str();
  }

  nlohmann::json to_json() const {
    nlohmann::json values = nlohmann::json::object();
    for (const auto& [k, v] : values_) values[k] = v;
    return {{"values", values}, {"hash", hash()}};
  }

  // Typed views -----------------------------------------------------------

  EncoderConfig encoder() const {
    EncoderConfig e;
    e.dim = size("dim");
    e.mz_bin_width = real("mz_bin_width");
    e.mz_low = real("mz_min");
    e.mz_high = real("mz_max");
    e.intensity_levels = size("intensity_levels");
    e.id_seed = integer("id_seed");
    e.level_seed = integer("level_seed");
    e.tie_seed = integer("tie_seed");
    e.validate();
    return e;
  }

  PreprocessConfig preprocess() const {
    return {real("mz_min"), real("mz_max"), size("top_n"), size("min_peaks")};
  }

  SyntheticConfig synthetic() const {
    SyntheticConfig s;
    s.n_peptides = size("n_peptides");
    s.spectra_per_peptide = size("spectra_per_peptide");
    s.peaks_per_spectrum = size("peaks_per_spectrum");
    s.dropout_prob = real("dropout_prob");
    s.mz_jitter_sd = real("mz_jitter_sd");
    s.intensity_jitter_rel = real("intensity_jitter_rel");
    s.mz_low = real("mz_min");
    s.mz_high = real("mz_max");
    s.precursor_low = real("precursor_low");
    s.precursor_high = real("precursor_high");
    s.charge_min = small_int("charge_min");
    s.charge_max = small_int("charge_max");
    s.shuffle = flag("shuffle");
    s.seed = integer("seed");
    s.validate();
    return s;
  }

  DeviceParams device() const {
    DeviceParams d;
    d.search_energy_per_bit_fJ = real("search_energy_fJ_per_bit");
    d.search_latency_ns = real("search_latency_ns");
    d.write_energy_per_bit_fJ = real("write_energy_fJ_per_bit");
    d.write_latency_per_row_ns = real("write_latency_ns");
    d.operating_voltage_V = real("voltage_V");
    d.array_rows = size("array_rows");
    d.array_cols = size("array_cols");
    d.lta_stage_latency_ns = real("lta_stage_latency_ns");
    d.lta_stage_energy_fJ = real("lta_stage_energy_fJ");
    d.decision_latency_ns = real("decision_latency_ns");
    d.validate();
    return d;
  }

  CurrentModel current_model() const {
    CurrentModel m;
    const auto& name = get("current_model");
    if (name == "ideal") {
      m.mode = CurrentMode::kIdeal;
    } else if (name == "parasitic") {
      m.mode = CurrentMode::kParasitic;
    } else {
      throw ConfigError("current_model: expected ideal or parasitic, got '" + name + "'");
    }
    m.alpha = real("alpha");
    m.slice_width = size("array_cols");
    if (m.mode == CurrentMode::kParasitic && flag("calibrate")) m = calibrate(m);
    return m;
  }

  SchedulerConfig scheduler() const {
    SchedulerConfig s;
    const auto& mode = get("mode");
    if (mode == "parallel") {
      s.mode = DispatchMode::kParallel;
    } else if (mode == "serial") {
      s.mode = DispatchMode::kSerial;
    } else {
      throw ConfigError("mode: expected parallel or serial, got '" + mode + "'");
    }
    s.cam_capacity_bits = integer("cam_capacity_bits");
    s.cache_capacity_rows = integer("cache_capacity_rows");
    s.cache_ns_per_row = real("cache_ns_per_row");
    s.memory_bandwidth_GBps = real("memory_bandwidth_GBps");
    s.memory_latency_ns = real("memory_latency_ns");
    s.transfer_energy_fJ_per_byte = real("transfer_energy_fJ_per_byte");
    s.validate();
    return s;
  }

  std::size_t link_threshold() const {
    if (get("link_threshold") == "auto") {
      return static_cast<std::size_t>(std::llround(0.33 * static_cast<double>(size("dim"))));
    }
    const auto t = size("link_threshold");
    if (t >= size("dim")) throw ConfigError("link_threshold must be below dim");
    return t;
  }

  double split() const {
    const double f = real("split");
    if (!(f > 0.0 && f <= 1.0)) throw ConfigError("split must lie in (0, 1]");
    return f;
  }

 private:
  static std::optional<std::uint64_t> parse_uint(std::string_view s) {
    std::uint64_t v = 0;
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (s.empty() || ec != std::errc{} || p != s.data() + s.size()) return std::nullopt;
    return v;
  }

  std::map<std::string, std::string> values_;
};

}  // namespace herp
