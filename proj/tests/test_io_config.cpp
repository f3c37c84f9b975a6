#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>

#include "abreu/abreu.hpp"

using namespace abreu;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("abreu_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(ABREU_CLI) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

fs::path write_text(const fs::path& p, const std::string& text) {
  std::ofstream(p) << text;
  return p;
}

} // namespace

TEST(Format, DoublesRoundTripExactly) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> U(-1, 1);
  for (int i = 0; i < 1000; ++i) {
    const double x = U(rng) * std::pow(10.0, static_cast<int>(U(rng) * 30));
    EXPECT_EQ(std::strtod(fmt(x).c_str(), nullptr), x);
  }
  EXPECT_EQ(fmt(std::nan("")), "nan");
  EXPECT_EQ(fmt(-INFINITY), "-inf");
}

TEST(Hash, KnownValues) {
  // FNV-1a 64 reference values
  EXPECT_EQ(fnv1a_hex(""), "cbf29ce484222325");
  EXPECT_EQ(fnv1a_hex("a"), "af63dc4c8601ec8c");
}

TEST(Csv, WriteReadRoundTrip) {
  const fs::path dir = scratch_dir("csv");
  {
    CsvWriter w(dir / "t.csv", "0123456789abcdef", {"a", "b", "note"});
    w.row({fmt(0.1), fmt(-3e-300), "x"});
    w.row({fmt(2.0), "nan", ""});
    EXPECT_THROW(w.row({"1"}), OutputError);
  }
  const CsvTable t = read_csv(dir / "t.csv");
  EXPECT_EQ(t.hash, "0123456789abcdef");
  ASSERT_EQ(t.rows.size(), 2u);
  EXPECT_EQ(t.numbers("a")[0], 0.1);
  EXPECT_EQ(t.numbers("b")[0], -3e-300);
  EXPECT_TRUE(std::isnan(t.numbers("b")[1]));
  EXPECT_EQ(t.rows[1][2], "");
  EXPECT_THROW(t.column_index("missing"), OutputError);
}

TEST(FieldDump, BinaryRoundTripWithExteriorNaN) {
  const fs::path dir = scratch_dir("bin");
  const auto g = build_grid(NestedDomains::concentric_disks(1.0, 0.5), 17);
  const ScalarField f = sample(g, [](const Vec2& x) { return std::sin(x.x()) + x.y(); });
  write_field_binary(dir / "f.bin", f, "fedcba9876543210");
  const FieldDump d = read_field_binary(dir / "f.bin");
  EXPECT_EQ(d.hash, "fedcba9876543210");
  EXPECT_EQ(d.nx, g->nx());
  EXPECT_EQ(d.ny, g->ny());
  EXPECT_EQ(d.spacing, g->spacing());
  EXPECT_EQ(d.origin, g->origin());
  for (Index k = 0; k < g->size(); ++k) {
    if (g->active(k)) EXPECT_EQ(d.values[k], f[k]);
    else EXPECT_TRUE(std::isnan(d.values[k]));
  }
  write_field_csv(dir / "f.csv", f, "fedcba9876543210");
  const CsvTable t = read_csv(dir / "f.csv");
  const auto idx = t.numbers("index"), val = t.numbers("value");
  for (std::size_t i = 0; i < idx.size(); ++i) EXPECT_EQ(val[i], f[static_cast<Index>(idx[i])]);

  std::ofstream(dir / "bad.bin") << "XXXX";
  EXPECT_THROW(read_field_binary(dir / "bad.bin"), OutputError);
}

TEST(Hash, MismatchIsDetected) {
  const fs::path dir = scratch_dir("mismatch");
  { CsvWriter(dir / "a.csv", "1111111111111111", {"x"}); }
  PlotSpec spec;
  spec.title = "t";
  spec.series.push_back({"s", {1, 2}, {1, 4}, true, true});
  write_svg(dir / "p.svg", spec, "1111111111111111");
  EXPECT_EQ(verify_output_hashes(dir), "1111111111111111");
  { CsvWriter(dir / "b.csv", "2222222222222222", {"x"}); }
  EXPECT_THROW(verify_output_hashes(dir), OutputError);
}

TEST(Config, DefaultsAndFrozenHash) {
  const RunConfig c = config_from_string("{}");
  EXPECT_EQ(c.resolution, 65);
  EXPECT_EQ(c.schedule, (std::vector<double>{0.1, 0.05, 0.02, 0.01}));
  EXPECT_EQ(c.q_cost, 2.0);
  EXPECT_EQ(c.hash(), "c029d5b697305e58");
}

TEST(Config, CanonicalRoundTripAndOutputExcludedFromHash) {
  RunConfig c = config_from_string(R"({"resolution": 33, "epsilon": {"schedule": [0.2, 0.1]},
                                       "boundary": {"psi": "1 + 0.1*x^2"}})");
  const RunConfig back = config_from_json(c.canonical());
  EXPECT_EQ(back.hash(), c.hash());
  EXPECT_EQ(back.canonical().dump(), c.canonical().dump());
  const std::string h = c.hash();
  c.output = "somewhere/else";
  EXPECT_EQ(c.hash(), h);
  c.resolution = 35;
  EXPECT_NE(c.hash(), h);
}

TEST(Config, CommentsAllowed) {
  const RunConfig c = config_from_string("{\n  // coarse\n  \"resolution\": 17\n}");
  EXPECT_EQ(c.resolution, 17);
}

TEST(Config, Errors) {
  EXPECT_THROW(config_from_string("{"), ConfigError);
  EXPECT_THROW(config_from_string(R"({"resolutoin": 33})"), ConfigError);
  EXPECT_THROW(config_from_string(R"({"ma": {"iters": 3}})"), ConfigError);
  EXPECT_THROW(config_from_string(R"({"resolution": "high"})"), ConfigError);
  EXPECT_THROW(config_from_string(R"({"resolution": 4})"), ConfigError);
  EXPECT_THROW(config_from_string(R"({"epsilon": {"schedule": [0.1, 0.2]}})"), ConfigError);
  EXPECT_THROW(config_from_string(R"({"epsilon": {"schedule": []}})"), ConfigError);
  EXPECT_THROW(config_from_string(R"({"lagrangian": {"q_cost": 1}})"), ConfigError);
  EXPECT_THROW(config_from_string(R"({"lagrangian": {"type": "other"}})"), ConfigError);
  EXPECT_THROW(config_from_string(R"({"lma": {"fallback": "rotated"}})"), ConfigError);
  EXPECT_THROW(config_from_string(R"({"mode": "fast"})"), ConfigError);
  EXPECT_THROW(config_from_string(R"({"boundary": {"phi": "x^^2"}})"), Error);
  EXPECT_THROW(config_from_string(R"({"domain": {"outer": {"type": "square"}}})"), ConfigError);
  EXPECT_THROW(load_config("/nonexistent/config.json"), ConfigError);
}

TEST(Config, ShippedExamplesLoad) {
  for (const auto& e : fs::directory_iterator(fs::path(ABREU_SOURCE_DIR) / "examples" / "configs")) {
    if (e.path().extension() != ".json") continue;
    EXPECT_NO_THROW(load_config(e.path()).validate()) << e.path();
  }
}

TEST(Experiment, SmallRunIsHashConsistentAndReplottable) {
  const fs::path dir = scratch_dir("run");
  RunConfig c = config_from_string(R"({"resolution": 33, "epsilon": {"schedule": [0.1]},
                                       "measurements": {"heights": [0.05, 0.1], "harnack_heights": [0.1]}})");
  const ExperimentResult r = run_experiment(c, dir, Stages::full);
  EXPECT_EQ(verify_output_hashes(dir), c.hash());
  for (const char* f : {"convergence.csv", "measurements.csv", "oracle.csv", "u_star.bin", "u_eps0.bin", "w_eps0.bin",
                        "run.json", "error_vs_eps.svg", "section_volume.svg"})
    EXPECT_TRUE(fs::exists(dir / f)) << f;
  const CsvTable conv = read_csv(dir / "convergence.csv");
  ASSERT_EQ(conv.rows.size(), 1u);
  EXPECT_EQ(conv.numbers("eps")[0], 0.1);
  EXPECT_EQ(conv.numbers("err_inner")[0], r.report.rows[0].err_inner);
  fs::remove(dir / "error_vs_eps.svg");
  emit_plots(dir);
  EXPECT_TRUE(fs::exists(dir / "error_vs_eps.svg"));
}

TEST(Experiment, MeasureModeWritesOnlyMeasurements) {
  const fs::path dir = scratch_dir("measure");
  RunConfig c = config_from_string(R"({"resolution": 33, "epsilon": {"schedule": [0.1]}, "mode": "measure",
                                       "measurements": {"heights": [0.1], "harnack_heights": [0.1]}})");
  run_experiment(c, dir, Stages::full);
  std::vector<std::string> files;
  for (const auto& e : fs::directory_iterator(dir)) files.push_back(e.path().filename().string());
  EXPECT_EQ(files, std::vector<std::string>{"measurements.csv"});
}

TEST(Cli, ExitCodes) {
  const fs::path dir = scratch_dir("cli");
  EXPECT_EQ(run_cli("--help"), 0);
  EXPECT_EQ(run_cli(""), 3);
  EXPECT_EQ(run_cli("frobnicate"), 3);
  EXPECT_EQ(run_cli("oracle --resolution 17 --out " + (dir / "o").string()), 0);
  EXPECT_TRUE(fs::exists(dir / "o" / "oracle.csv"));
  EXPECT_EQ(run_cli("abreu --epsilon 0.1,0.2 --out " + (dir / "a").string()), 3);
  EXPECT_EQ(run_cli("abreu --epsilon 0.1,x --out " + (dir / "a").string()), 3);
  EXPECT_EQ(run_cli("abreu --resolution 4"), 3);
  const fs::path typo = write_text(dir / "typo.json", R"({"resolutoin": 17})");
  EXPECT_EQ(run_cli("run --config " + typo.string()), 3);
  const fs::path starve = write_text(dir / "starve.json", R"({"resolution": 17, "ma": {"max_iter": 1, "tol": 1e-14},
                                                               "boundary": {"psi": "1 + 0.5*x^2"},
                                                               "epsilon": {"schedule": [0.1]}})");
  EXPECT_EQ(run_cli("abreu --config " + starve.string() + " --out " + (dir / "s").string()), 2);
}
