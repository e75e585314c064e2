#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "difftune/cli.hpp"
#include "difftune/config.hpp"
#include "difftune/io.hpp"
#include "difftune/rng.hpp"

using namespace difftune;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("difftune_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

int run_cli(const std::vector<std::string>& args) {
  std::vector<const char*> argv = {"difftune"};
  for (const std::string& a : args) argv.push_back(a.c_str());
  return cli_dispatch(static_cast<int>(argv.size()), argv.data());
}

Checkpoint sample_checkpoint() {
  Checkpoint ck;
  ck.spec.sample_dim = 4;
  ck.spec.context_dim = 6;
  ck.spec.hidden = {8, 8};
  Rng rng(3);
  for (int i = 0; i < 20; ++i) ck.theta.push_back(rng.gaussian());
  ck.theta_old = ck.theta;
  ck.opt = AdamWState(20);
  ck.opt.m[3] = 0.5;
  ck.opt.v[3] = 0.25;
  ck.opt.t = 17;
  ck.iteration = 42;
  ck.rng_states = {Rng(1).serialize(), Rng(2).serialize(), Rng(3).serialize()};
  ck.config_hash = 0xdeadbeefcafeull;
  return ck;
}

}  // namespace

TEST_CASE("checkpoint round-trip is byte-identical") {
  const fs::path dir = fresh_dir("ckpt");
  const Checkpoint ck = sample_checkpoint();
  save_checkpoint((dir / "a.ckpt").string(), ck);
  const Checkpoint loaded = load_checkpoint((dir / "a.ckpt").string());
  CHECK(loaded.spec == ck.spec);
  CHECK(loaded.theta == ck.theta);
  CHECK(loaded.theta_old == ck.theta_old);
  CHECK(loaded.opt.m == ck.opt.m);
  CHECK(loaded.opt.v == ck.opt.v);
  CHECK(loaded.opt.t == ck.opt.t);
  CHECK(loaded.iteration == ck.iteration);
  CHECK(loaded.rng_states == ck.rng_states);
  CHECK(loaded.config_hash == ck.config_hash);

  save_checkpoint((dir / "b.ckpt").string(), loaded);
  CHECK(slurp(dir / "a.ckpt") == slurp(dir / "b.ckpt"));
  CHECK_FALSE(fs::exists(dir / "a.ckpt.tmp"));
}

TEST_CASE("truncated checkpoint reports the byte offset") {
  const fs::path dir = fresh_dir("trunc");
  save_checkpoint((dir / "a.ckpt").string(), sample_checkpoint());
  const std::string full = slurp(dir / "a.ckpt");
  {
    std::ofstream out(dir / "cut.ckpt", std::ios::binary);
    out.write(full.data(), static_cast<std::streamsize>(full.size() / 2));
  }
  try {
    load_checkpoint((dir / "cut.ckpt").string());
    FAIL("expected IoError");
  } catch (const IoError& e) {
    CHECK(std::string(e.what()).find("offset") != std::string::npos);
    CHECK(std::string(e.what()).find("truncated") != std::string::npos);
  }

  {
    std::ofstream out(dir / "magic.ckpt", std::ios::binary);
    out << "NOPE" << full.substr(4);
  }
  CHECK_THROWS_AS(load_checkpoint((dir / "magic.ckpt").string()), IoError);
}

TEST_CASE("dataset round-trip preserves contexts and samples") {
  const fs::path dir = fresh_dir("dset");
  const TaskUniverse u = TaskUniverse::make_default(4, 3, 3);
  PretrainSpec spec;
  spec.n_composition = 10;
  spec.n_portrait = 10;
  spec.n_preference = 10;
  Rng rng(8);
  const auto data = gen_pretrain_dataset(u, spec, rng);
  save_dataset((dir / "d.bin").string(), data, "test corpus\n");
  CHECK(fs::exists(dir / "d.bin.meta.txt"));

  const auto loaded = load_dataset((dir / "d.bin").string());
  REQUIRE(loaded.size() == data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    CHECK(loaded[i].ctx.kind == data[i].ctx.kind);
    CHECK(loaded[i].ctx.object_a == data[i].ctx.object_a);
    CHECK(loaded[i].ctx.object_b == data[i].ctx.object_b);
    CHECK(loaded[i].ctx.relation == data[i].ctx.relation);
    CHECK(loaded[i].ctx.style == data[i].ctx.style);
    CHECK(loaded[i].ctx.prompt == data[i].ctx.prompt);
    CHECK(loaded[i].attr_bin == data[i].attr_bin);
    CHECK(loaded[i].x0.data == data[i].x0.data);
  }
}

TEST_CASE("metrics CSV: exact header and atomic rewrites") {
  const fs::path dir = fresh_dir("csv");
  MetricsWriter w((dir / "m.csv").string());
  w.append(0, "preference", 0.5, 0.01, 2.0, 0.25, 0.1, 0.2, 0.0);
  const std::string text = slurp(dir / "m.csv");
  std::istringstream ss(text);
  std::string header, row;
  std::getline(ss, header);
  CHECK(header ==
        "iteration,task,mean_reward,loss_ppo,loss_pretrain,"
        "statistical_parity,detection_seen,detection_unseen,wall_seconds");
  std::getline(ss, row);
  CHECK(row == "0,preference,0.5,0.01,2,0.25,0.1,0.2,0");
  CHECK_FALSE(fs::exists(dir / "m.csv.tmp"));

  w.append(1, "preference", 0.6, 0.02, 1.9, 0.2, 0.1, 0.2, 0.0);
  std::istringstream ss2(slurp(dir / "m.csv"));
  int lines = 0;
  std::string l;
  while (std::getline(ss2, l)) ++lines;
  CHECK(lines == 3);
}

TEST_CASE("format_double round-trips shortest representations") {
  CHECK(format_double(0.1) == "0.1");
  CHECK(format_double(2.0) == "2");
  CHECK(format_double(1e-4) == "1e-04");
  const std::string nan_str = format_double(std::nan(""));
  CHECK(nan_str.find("nan") != std::string::npos);
}

TEST_CASE("config: defaults, parsing, and unknown-key rejection") {
  const RunConfig def;
  CHECK(def.get_int("schedule.T") == 100);
  CHECK(def.get_double("rl.clip_epsilon") == doctest::Approx(1e-4));
  CHECK(def.get("rl.normalization") == "per_batch");
  CHECK(def.get_size_list("model.hidden") ==
        std::vector<std::size_t>{64, 64});
  CHECK_FALSE(def.get_bool("metrics.record_walltime"));

  const RunConfig cfg = RunConfig::from_text(
      "# comment line\n"
      "rl.iterations = 7   # trailing comment\n"
      "\n"
      "sampler.eta = 0.5\n");
  CHECK(cfg.get_int("rl.iterations") == 7);
  CHECK(cfg.get_double("sampler.eta") == doctest::Approx(0.5));
  CHECK(cfg.get_int("schedule.T") == 100);  // untouched default

  try {
    RunConfig::from_text("rl.iteratons = 7\n");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("rl.iteratons") != std::string::npos);
  }
  CHECK_THROWS_AS(RunConfig::from_text("just a line without equals\n"),
                  ConfigError);
  CHECK_THROWS_AS(def.get_int("rewards.tau"), ConfigError);
  CHECK_THROWS_AS(def.get_double("finetune.method"), ConfigError);
}

TEST_CASE("config hash excludes run identity but covers everything else") {
  RunConfig a, b;
  b.set("seed", "999");
  b.set("out", "elsewhere");
  CHECK(a.hash() == b.hash());
  b.set("rl.iterations", "5");
  CHECK(a.hash() != b.hash());
}

TEST_CASE("resolved config lists every key in table order") {
  const RunConfig def;
  const std::string text = def.resolved_text();
  std::istringstream ss(text);
  std::string line;
  std::size_t count = 0;
  while (std::getline(ss, line)) {
    CHECK(line.find(" = ") != std::string::npos);
    ++count;
  }
  CHECK(count == RunConfig::key_table().size());
  CHECK(text.rfind("seed = ", 0) == 0);
}

TEST_CASE("cli: argument errors and a tiny gen-data run") {
  CHECK(run_cli({"no-such-command"}) != 0);
  CHECK(run_cli({"evaluate"}) != 0);  // missing required --checkpoint

  const fs::path dir = fresh_dir("cli");
  const fs::path cfg = dir / "run.cfg";
  {
    std::ofstream out(cfg);
    out << "data.composition = 5\n"
        << "data.portrait = 5\n"
        << "data.preference = 5\n"
        << "out = " << (dir / "run").string() << "\n";
  }
  CHECK(run_cli({"gen-data", "--config", cfg.string()}) == 0);
  CHECK(fs::exists(dir / "run" / "dataset.bin"));
  CHECK(fs::exists(dir / "run" / "resolved.cfg"));
  const auto data = load_dataset((dir / "run" / "dataset.bin").string());
  CHECK(data.size() == 15);

  // Seed override flows into the resolved config echo.
  CHECK(run_cli({"gen-data", "--config", cfg.string(), "--seed", "321",
                 "--out", (dir / "run2").string()}) == 0);
  const std::string resolved = slurp(dir / "run2" / "resolved.cfg");
  CHECK(resolved.find("seed = 321") != std::string::npos);

  // Unknown config key surfaces as a failure exit, not a crash.
  const fs::path bad = dir / "bad.cfg";
  {
    std::ofstream out(bad);
    out << "not.a.key = 1\n";
  }
  CHECK(run_cli({"gen-data", "--config", bad.string()}) != 0);

  // Evaluating a missing checkpoint fails cleanly.
  CHECK(run_cli({"evaluate", "--config", cfg.string(), "--checkpoint",
                 (dir / "nope.ckpt").string()}) != 0);
}
