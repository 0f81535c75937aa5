#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "herp/pipeline.hpp"

namespace fs = std::filesystem;
using herp::RunConfig;

namespace {

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("herp_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

int cli(const std::string& args) {
  const std::string cmd = std::string(HERP_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::vector<herp::Spectrum> synthetic(std::size_t peptides, std::size_t per, bool noise = true) {
  herp::SyntheticConfig cfg;
  cfg.n_peptides = peptides;
  cfg.spectra_per_peptide = per;
  if (!noise) {
    cfg.dropout_prob = 0;
    cfg.mz_jitter_sd = 0;
    cfg.intensity_jitter_rel = 0;
  }
  return herp::preprocess_all(herp::generate_synthetic(cfg)).accepted;
}

TEST(RunConfigTest, LayeredPrecedence) {
  RunConfig cfg;
  EXPECT_EQ(cfg.get("mode"), "parallel");
  std::istringstream file("# comment\nmode = serial\nseed=7\nalpha=0.01\n");
  cfg.load_stream(file, "test.conf");
  EXPECT_EQ(cfg.get("mode"), "serial");
  cfg.load_env([](const char* name) -> const char* {
    if (std::string(name) == "HERP_SEED") return "9";
    if (std::string(name) == "HERP_ALPHA") return "0.02";
    return nullptr;
  });
  EXPECT_EQ(cfg.integer("seed"), 9u);
  cfg.set_assignment("alpha=0.03");
  EXPECT_DOUBLE_EQ(cfg.real("alpha"), 0.03);
  EXPECT_EQ(cfg.get("mode"), "serial");
}

TEST(RunConfigTest, Errors) {
  RunConfig cfg;
  EXPECT_THROW(cfg.set("no_such_key", "1"), herp::ConfigError);
  std::istringstream bad("dim=2048\nthis line is wrong\n");
  try {
    cfg.load_stream(bad, "x.conf");
    FAIL();
  } catch (const herp::ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("x.conf:2"), std::string::npos);
  }
  cfg.set("dim", "abc");
  EXPECT_THROW(cfg.integer("dim"), herp::ConfigError);
  cfg.set("dim", "2048");
  cfg.set("mode", "sideways");
  EXPECT_THROW(cfg.scheduler(), herp::ConfigError);
  cfg.set("mode", "parallel");
  cfg.set("split", "0");
  EXPECT_THROW(cfg.split(), herp::ConfigError);
}

TEST(RunConfigTest, EchoAndHash) {
  RunConfig a, b;
  EXPECT_EQ(a.hash(), b.hash());
  b.set("seed", "43");
  EXPECT_NE(a.hash(), b.hash());
  EXPECT_NE(a.echo().find("seed=42\n"), std::string::npos);
  EXPECT_EQ(a.link_threshold(), 676u);
  EXPECT_EQ(herp::fnv1a64(""), 0xcbf29ce484222325ull);
  EXPECT_EQ(herp::fnv1a64("a"), 0xaf63dc4c8601ec8cull);
}

TEST(RunConfigTest, ParasiticModelIsCalibrated) {
  RunConfig cfg;
  cfg.set("current_model", "parasitic");
  EXPECT_TRUE(cfg.current_model().calibrated());
  cfg.set("calibrate", "false");
  EXPECT_FALSE(cfg.current_model().calibrated());
}

TEST(Setup, BucketsMatchRecomputedPrecursorKeys) {
  const auto spectra = synthetic(500, 10);
  const auto s = herp::run_setup(spectra, herp::SetupParams::from(RunConfig{}));
  std::set<herp::BucketId> expected;
  for (const auto& x : spectra) {
    expected.insert(static_cast<herp::BucketId>(std::floor((x.precursor_mz - 1.00794) * x.charge / 1.0005079)));
  }
  std::set<herp::BucketId> got;
  std::size_t spectra_total = 0, rows = 0;
  for (const auto& e : s.catalog) {
    got.insert(e.bucket);
    spectra_total += e.spectra;
    rows += e.rows;
    EXPECT_LE(e.mz_low, e.mz_high);
    EXPECT_GT(e.threshold, 0u);
    EXPECT_LT(e.threshold, 2048u);
  }
  EXPECT_EQ(got, expected);
  EXPECT_EQ(spectra_total, spectra.size());
  EXPECT_EQ(s.members.size(), spectra.size());
  EXPECT_EQ(s.ledger.rows_written, rows);
  EXPECT_NEAR(s.ledger.write_fJ, static_cast<double>(rows) * 2048 * 278.0, 1e-3);
}

TEST(Setup, EmptyInputIsAnError) {
  EXPECT_THROW(herp::run_setup({}, herp::SetupParams::from(RunConfig{})), herp::InputError);
}

TEST(Setup, DryRunMatchesClosedForm) {
  const auto l = herp::dry_run_setup(2000000, 509, 2048, herp::DeviceParams{});
  EXPECT_NEAR(l.write_fJ * 1e-12, 1.138688, 1e-9);
  EXPECT_EQ(l.rows_written, 2000000u);
}

TEST(Snapshot, RoundTripsAndVersions) {
  const auto dir = scratch("snapshot");
  RunConfig cfg;
  const auto s = herp::run_setup(synthetic(40, 5), herp::SetupParams::from(cfg));
  const auto first = herp::write_snapshot(dir, s, cfg);
  const auto second = herp::write_snapshot(dir, s, cfg);
  EXPECT_EQ(first.filename(), "snapshot-0001");
  EXPECT_EQ(second.filename(), "snapshot-0002");
  EXPECT_EQ(herp::resolve_snapshot(dir), second);

  const auto back = herp::read_snapshot(first);
  EXPECT_EQ(back.thresholds.per_bucket, s.thresholds.per_bucket);
  EXPECT_EQ(back.thresholds.global, s.thresholds.global);
  EXPECT_EQ(back.member_hvs, s.member_hvs);
  ASSERT_EQ(back.clusters.size(), s.clusters.size());
  for (const auto& [b, recs] : s.clusters) {
    const auto& other = back.clusters.at(b);
    ASSERT_EQ(other.size(), recs.size());
    for (std::size_t i = 0; i < recs.size(); ++i) {
      EXPECT_EQ(other[i].consensus, recs[i].consensus);
      EXPECT_EQ(other[i].members, recs[i].members);
      EXPECT_TRUE(std::equal(other[i].accumulator.counts().begin(), other[i].accumulator.counts().end(),
                             recs[i].accumulator.counts().begin()));
    }
  }
  EXPECT_EQ(back.ledger, s.ledger);

  const auto queries = synthetic(40, 5);
  const auto p = herp::RunParams::from(cfg);
  EXPECT_EQ(herp::run_queries(back, queries, p).assignments, herp::run_queries(s, queries, p).assignments);
}

TEST(Snapshot, TamperedCodebookIsRejected) {
  const auto dir = scratch("tamper");
  RunConfig cfg;
  const auto s = herp::run_setup(synthetic(10, 3), herp::SetupParams::from(cfg));
  const auto snap = herp::write_snapshot(dir, s, cfg);
  auto text = herp::read_text(snap / "id.codebook");
  text[40] = static_cast<char>(text[40] ^ 1);
  herp::write_text(snap / "id.codebook", text);
  EXPECT_THROW(herp::read_snapshot(snap), herp::InputError);
}

TEST(Run, ZeroNoiseSelfQueriesMatchTheirOwnClusters) {
  RunConfig cfg;
  cfg.set("rewrite_period", "0");
  const auto spectra = synthetic(60, 4, false);
  const auto setup = herp::run_setup(spectra, herp::SetupParams::from(cfg));
  const auto r = herp::run_queries(setup, spectra, herp::RunParams::from(cfg));
  std::map<std::string, herp::ClusterKey> own;
  for (const auto& m : setup.members) own[m.spectrum_id] = {m.bucket, m.cluster};
  ASSERT_EQ(r.assignments.size(), spectra.size());
  for (const auto& a : r.assignments) {
    EXPECT_EQ(a.outcome, herp::Outcome::kMatch) << a.spectrum_id;
    EXPECT_EQ(a.distance, 0u);
    EXPECT_EQ((herp::ClusterKey{a.bucket, a.cluster}), own.at(a.spectrum_id));
  }
  EXPECT_EQ(r.ledger.write_fJ - r.trace.front().delta.write_fJ, 0.0);
}

TEST(Run, SearchEnergyEqualsClosedForm) {
  RunConfig cfg;
  const auto spectra = synthetic(100, 10);
  const auto [first, rest] = herp::split_spectra(spectra, 0.6);
  ASSERT_GE(rest.size(), 390u);
  const auto setup = herp::run_setup(first, herp::SetupParams::from(cfg));
  const auto r = herp::run_queries(setup, rest, herp::RunParams::from(cfg));
  const double closed_form = static_cast<double>(r.ledger.rows_searched) * 2048 * 0.714;
  EXPECT_NEAR(r.ledger.search_fJ, closed_form, 1e-12 * closed_form);
  std::uint64_t rows = 0;
  for (const auto& c : r.trace) rows += c.delta.rows_searched;
  EXPECT_EQ(rows, r.ledger.rows_searched);
  EXPECT_EQ(r.assignments.size(), rest.size());
  for (const auto& a : r.assignments) {
    if (a.outcome == herp::Outcome::kMatch) {
      EXPECT_LE(*a.distance, setup.thresholds.threshold(a.bucket));
    } else if (a.distance) {
      EXPECT_GT(*a.distance, setup.thresholds.threshold(a.bucket));
    }
  }
}

TEST(Run, ReplayIsByteIdentical) {
  RunConfig cfg;
  const auto spectra = synthetic(80, 6);
  const auto [first, rest] = herp::split_spectra(spectra, 0.5);
  const auto setup = herp::run_setup(first, herp::SetupParams::from(cfg));
  const auto a = herp::run_queries(setup, rest, herp::RunParams::from(cfg));
  const auto b = herp::run_queries(setup, rest, herp::RunParams::from(cfg));
  EXPECT_EQ(herp::assignments_jsonl(a.assignments), herp::assignments_jsonl(b.assignments));
  EXPECT_EQ(herp::trace_jsonl(a.trace), herp::trace_jsonl(b.trace));
  EXPECT_EQ(herp::ledger_json(a.ledger), herp::ledger_json(b.ledger));
}

TEST(Report, EmptyLogGivesZeroedReport) {
  const auto dir = scratch("empty_report");
  herp::write_text(dir / "assignments.jsonl", "");
  const auto r = herp::build_report(dir);
  EXPECT_EQ(r.assignments, 0u);
  EXPECT_EQ(r.ledger.total_fJ(), 0.0);
  EXPECT_EQ(r.latency.speedup(), 0.0);
  EXPECT_FALSE(herp::report_text(r).empty());
}

TEST(Report, CorruptLineIsNamed) {
  const auto dir = scratch("corrupt_report");
  herp::write_text(dir / "assignments.jsonl",
                   "{\"spectrum\":\"a\",\"bucket\":1,\"cluster\":0,\"outcome\":\"MATCH\",\"distance\":3}\n{oops\n");
  try {
    herp::build_report(dir);
    FAIL();
  } catch (const herp::InputError& e) {
    EXPECT_NE(std::string(e.what()).find("assignments.jsonl:2"), std::string::npos);
  }
}

TEST(Report, TotalsAgreeWithRawLogs) {
  const auto dir = scratch("report_totals");
  RunConfig cfg;
  const auto spectra = synthetic(60, 6);
  const auto [first, rest] = herp::split_spectra(spectra, 0.6);
  const auto setup = herp::run_setup(first, herp::SetupParams::from(cfg));
  const auto r = herp::run_queries(setup, rest, herp::RunParams::from(cfg));
  const auto run_dir = herp::write_run(dir, r, cfg, dir);
  const auto report = herp::build_report(run_dir, run_dir);
  EXPECT_TRUE(report.ledger_consistent);
  EXPECT_EQ(report.assignments, rest.size());
  ASSERT_TRUE(report.overlap.has_value());
  EXPECT_DOUBLE_EQ(report.overlap->overlap, 1.0);

  // Independent aggregation straight from the trace text.
  std::ifstream trace(run_dir / "trace.jsonl");
  std::string line;
  double search_fJ = 0.0;
  std::size_t dispatched = 0;
  while (std::getline(trace, line)) {
    const auto j = nlohmann::json::parse(line);
    search_fJ += j["ledger"]["energy_fJ"]["search"].get<double>();
    dispatched += j["dispatches"].size();
  }
  EXPECT_NEAR(search_fJ, report.ledger.search_fJ, 1e-6 * report.ledger.search_fJ);
  EXPECT_EQ(dispatched, report.assignments);
  EXPECT_DOUBLE_EQ(report.quality.clustered_ratio, r.metrics.clustered_ratio);
}

TEST(Cli, GenIsDeterministicAndParsesBack) {
  const auto dir = scratch("cli_gen");
  const std::string args = "--set n_peptides=10 --set spectra_per_peptide=5 --seed 3 --out ";
  ASSERT_EQ(cli("gen " + args + (dir / "a").string()), 0);
  ASSERT_EQ(cli("gen " + args + (dir / "b").string()), 0);
  const auto a = herp::read_text(dir / "a" / "spectra.mgf");
  EXPECT_EQ(a, herp::read_text(dir / "b" / "spectra.mgf"));
  EXPECT_EQ(herp::read_text(dir / "a" / "labels.tsv"), herp::read_text(dir / "b" / "labels.tsv"));
  std::size_t blocks = 0;
  for (std::size_t pos = 0; (pos = a.find("BEGIN IONS", pos)) != std::string::npos; ++pos) ++blocks;
  EXPECT_EQ(blocks, 50u);
  const auto parsed = herp::parse_mgf(std::string_view(a));
  ASSERT_EQ(parsed.spectra.size(), 50u);
  std::set<std::string> labels;
  for (const auto& s : parsed.spectra) labels.insert(s.label.value_or("?"));
  EXPECT_EQ(labels.size(), 10u);
  EXPECT_FALSE(labels.contains("?"));
}

TEST(Cli, EndToEndAndExitCodes) {
  const auto dir = scratch("cli_run");
  const auto d = dir.string();
  ASSERT_EQ(cli("gen --set n_peptides=30 --set spectra_per_peptide=4 --out " + d + "/data"), 0);
  ASSERT_EQ(cli("setup " + d + "/data/spectra.mgf --split 0.5 --out " + d + "/snap"), 0);
  ASSERT_EQ(cli("run " + d + "/data/spectra.mgf --split 0.5 --snapshot " + d + "/snap --out " + d + "/runs"), 0);
  ASSERT_EQ(cli("run " + d + "/data/spectra.mgf --split 0.5 --snapshot " + d + "/snap --out " + d + "/runs"), 0);
  EXPECT_EQ(herp::read_text(dir / "runs/run-0001/assignments.jsonl"),
            herp::read_text(dir / "runs/run-0002/assignments.jsonl"));
  EXPECT_EQ(herp::read_text(dir / "runs/run-0001/ledger.json"), herp::read_text(dir / "runs/run-0002/ledger.json"));
  EXPECT_EQ(cli("report " + d + "/runs/run-0001 --compare " + d + "/runs/run-0002 --out " + d + "/reports"), 0);
  EXPECT_TRUE(fs::exists(dir / "reports/report-0001/report.csv"));

  EXPECT_EQ(cli("run " + d + "/data/spectra.mgf --snapshot " + d + "/snap --set dim=4096 --out " + d + "/x"), 2);
  EXPECT_EQ(cli("setup " + d + "/missing.mgf --out " + d + "/x"), 1);
  EXPECT_EQ(cli("setup " + d + "/data/spectra.mgf --set bogus=1"), 2);
  EXPECT_EQ(cli("setup --dry-run"), 0);
  EXPECT_EQ(cli("frobnicate"), 2);
}

}  // namespace
