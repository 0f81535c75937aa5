// herp: command-line driver for the simulator.
//
//   herp gen    [--out DIR]                     synthetic MGF + labels
//   herp setup  INPUT.mgf [--dry-run]           initial clustering snapshot
//   herp run    [QUERIES.mgf] --snapshot DIR    query run against a snapshot
//   herp report RUN_DIR [--compare RUN_DIR]     summary tables
//   herp bench                                  full-scale dry-run figures
//
// Exit codes: 0 ok, 1 input error, 2 config error, 3 internal invariant.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "herp/config.hpp"
#include "herp/pipeline.hpp"

namespace fs = std::filesystem;

namespace {

struct Options {
  std::string config_path;
  std::vector<std::string> sets;
  std::string seed, mode, current_model, out, split, input, queries, snapshot, compare;
  bool dry_run = false;
};

herp::RunConfig build_config(const Options& o) {
  herp::RunConfig cfg;
  if (!o.config_path.empty()) cfg.load_file(o.config_path);
  cfg.load_env();
  for (const auto& kv : o.sets) cfg.set_assignment(kv);
  auto flag = [&](const char* key, const std::string& v) {
    if (!v.empty()) cfg.set(key, v);
  };
  flag("seed", o.seed);
  flag("mode", o.mode);
  flag("current_model", o.current_model);
  flag("out", o.out);
  flag("split", o.split);
  flag("input", o.input);
  flag("queries", o.queries);
  flag("snapshot", o.snapshot);
  flag("compare", o.compare);
  return cfg;
}

std::vector<herp::Spectrum> load_spectra(const std::string& path, const herp::RunConfig& cfg) {
  if (path.empty()) throw herp::ConfigError("no input MGF given");
  std::ifstream in(path);
  if (!in) throw herp::InputError("cannot read " + path);
  auto parsed = herp::parse_mgf(in);
  for (const auto& d : parsed.rejected) {
    std::cerr << path << ":" << d.line << ": skipped";
    if (!d.title.empty()) std::cerr << " '" << d.title << "'";
    std::cerr << ": " << d.message << "\n";
  }
  auto batch = herp::preprocess_all(parsed.spectra, cfg.preprocess());
  if (!batch.rejections.empty()) {
    std::cerr << batch.rejections.size() << " spectra rejected by preprocessing\n";
  }
  return std::move(batch.accepted);
}

int cmd_gen(const herp::RunConfig& cfg) {
  const auto spectra = herp::generate_synthetic(cfg.synthetic());
  const fs::path out(cfg.get("out"));
  fs::create_directories(out);
  std::ostringstream mgf, labels;
  herp::write_mgf(mgf, spectra);
  for (const auto& s : spectra) labels << s.id << '\t' << s.label.value_or("") << '\n';
  herp::write_text(out / "spectra.mgf", mgf.str());
  herp::write_text(out / "labels.tsv", labels.str());
  std::cout << "wrote " << spectra.size() << " spectra to " << (out / "spectra.mgf").string() << "\n";
  return 0;
}

int cmd_setup(const herp::RunConfig& cfg, bool dry_run) {
  if (dry_run) {
    const auto start = std::chrono::steady_clock::now();
    const auto ledger =
        herp::dry_run_setup(cfg.integer("dry_run_rows"), cfg.integer("dry_run_buckets"), cfg.size("dim"), cfg.device());
    const std::chrono::duration<double> took = std::chrono::steady_clock::now() - start;
    nlohmann::json j{{"rows", cfg.integer("dry_run_rows")},
                     {"buckets", cfg.integer("dry_run_buckets")},
                     {"dim", cfg.size("dim")},
                     {"write_energy_mJ", ledger.write_fJ * 1e-12},
                     {"ledger", ledger.to_json()},
                     {"runtime_s", took.count()},
                     {"config_hash", cfg.hash()}};
    std::cout << j.dump(2) << "\n";
    return 0;
  }
  const auto all = load_spectra(cfg.get("input"), cfg);
  const auto setup_set = herp::split_spectra(all, cfg.split()).first;
  const auto result = herp::run_setup(setup_set, herp::SetupParams::from(cfg));
  const auto dir = herp::write_snapshot(cfg.get("out"), result, cfg);
  std::size_t rows = 0;
  for (const auto& e : result.catalog) rows += e.rows;
  std::cout << "snapshot " << dir.string() << ": " << setup_set.size() << " spectra, " << result.catalog.size()
            << " buckets, " << rows << " clusters, setup write energy " << result.ledger.write_fJ * 1e-6
            << " nJ\n";
  return 0;
}

int cmd_run(const herp::RunConfig& cfg) {
  const fs::path snapshot_arg(cfg.get("snapshot").empty() ? cfg.get("out") : cfg.get("snapshot"));
  const auto snapshot_dir = herp::resolve_snapshot(snapshot_arg);
  const auto setup = herp::read_snapshot(snapshot_dir);
  if (setup.params.encoder.dim != cfg.size("dim")) {
    throw herp::ConfigError("snapshot was built with dim=" + std::to_string(setup.params.encoder.dim) +
                            " but the configuration asks for dim=" + cfg.get("dim"));
  }
  const auto& query_path = cfg.get("queries").empty() ? cfg.get("input") : cfg.get("queries");
  const auto queries = herp::split_spectra(load_spectra(query_path, cfg), cfg.split()).second;
  const auto result = herp::run_queries(setup, queries, herp::RunParams::from(cfg));
  const auto dir = herp::write_run(cfg.get("out"), result, cfg, snapshot_dir);
  std::cout << "run " << dir.string() << ": " << result.assignments.size() << " queries, "
            << result.stats.cycles << " cycles, energy " << result.ledger.total_fJ() * 1e-6 << " nJ";
  if (result.metrics.available) {
    std::cout << ", clustered " << result.metrics.clustered_ratio << ", incorrect " << result.metrics.incorrect_ratio;
  }
  std::cout << "\n";
  return 0;
}

int cmd_report(const herp::RunConfig& cfg) {
  if (cfg.get("input").empty()) throw herp::ConfigError("report needs a run directory");
  std::optional<fs::path> compare;
  if (!cfg.get("compare").empty()) compare = cfg.get("compare");
  const auto report = herp::build_report(cfg.get("input"), compare);
  const auto dir = herp::next_versioned_dir(cfg.get("out"), "report");
  herp::write_text(dir / "report.json", report.to_json().dump(2) + "\n");
  herp::write_text(dir / "report.txt", herp::report_text(report));
  herp::write_text(dir / "report.csv", herp::report_csv(report));
  std::cout << herp::report_text(report);
  return report.ledger_consistent ? 0 : 3;
}

int cmd_bench(const herp::RunConfig& cfg) {
  const auto device = cfg.device();
  const auto dim = cfg.size("dim");
  const auto start = std::chrono::steady_clock::now();
  const auto setup = herp::dry_run_setup(cfg.integer("dry_run_rows"), cfg.integer("dry_run_buckets"), dim, device);
  nlohmann::json searches = nlohmann::json::array();
  for (const auto rows : cfg.integer_list("bench_search_rows")) {
    herp::EnergyLatencyLedger l;
    herp::account_search(rows, dim, device, l);
    searches.push_back({{"rows", rows}, {"energy_nJ", l.search_fJ * 1e-6}, {"latency_ns", l.search_ns}});
  }
  const std::chrono::duration<double> took = std::chrono::steady_clock::now() - start;
  nlohmann::json j{{"setup", {{"rows", cfg.integer("dry_run_rows")}, {"write_energy_mJ", setup.write_fJ * 1e-12}}},
                   {"search", searches},
                   {"runtime_s", took.count()},
                   {"config_hash", cfg.hash()}};
  std::cout << j.dump(2) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"HDC mass-spectrum clustering on a simulated CAM"};
  app.require_subcommand(1);
  app.fallthrough();
  Options o;
  app.add_option("--config", o.config_path, "key=value config file")->check(CLI::ExistingFile);
  app.add_option("--set", o.sets, "override a config key (key=value), repeatable");
  app.add_option("--seed", o.seed, "synthetic data seed");
  app.add_option("--mode", o.mode, "dispatch mode")->check(CLI::IsMember({"serial", "parallel"}));
  app.add_option("--current-model", o.current_model, "matchline current model")
      ->check(CLI::IsMember({"ideal", "parasitic"}));
  app.add_option("--out", o.out, "output directory");
  app.add_option("--split", o.split, "setup fraction of the input");
  app.add_option("--snapshot", o.snapshot, "snapshot directory");
  app.add_option("--queries", o.queries, "query MGF");
  app.add_option("--compare", o.compare, "second run directory for overlap");
  app.add_flag("--dry-run", o.dry_run, "catalog-only setup");

  auto* gen = app.add_subcommand("gen", "write a synthetic labelled data set");
  auto* setup = app.add_subcommand("setup", "cluster the input and write a snapshot");
  setup->add_option("input", o.input, "input MGF");
  auto* run = app.add_subcommand("run", "cluster queries against a snapshot");
  run->add_option("queries", o.queries, "query MGF");
  auto* report = app.add_subcommand("report", "summarize a run directory");
  report->add_option("run_dir", o.input, "run directory")->required();
  auto* bench = app.add_subcommand("bench", "dry-run energy figures");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    const auto cfg = build_config(o);
    if (*gen) return cmd_gen(cfg);
    if (*setup) return cmd_setup(cfg, o.dry_run);
    if (*run) return cmd_run(cfg);
    if (*report) return cmd_report(cfg);
    if (*bench) return cmd_bench(cfg);
  } catch (const herp::Error& e) {
    std::cerr << "herp: " << e.what() << "\n";
    return e.exit_code();
  } catch (const fs::filesystem_error& e) {
    std::cerr << "herp: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "herp: internal error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
