#include <doctest.h>

#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "sra/errors.hpp"
#include "sra/model_format.hpp"
#include "sra/workbench.hpp"

using namespace sra;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / "sra_workbench_test" / name;
  fs::remove_all(p);
  return p;
}

RunConfig base(const std::string& task, const fs::path& out) {
  RunConfig c = RunConfig::parse("arch = toy_cnn\ntrain_limit = 2000\neval_limit = 300\nepochs = 2\n");
  c.set("task", task);
  c.set("out", out.string());
  c.set("data", SRA_DATA_DIR);
  return c;
}

nlohmann::json manifest(const fs::path& out) {
  std::ifstream f(out / "manifest.json");
  return nlohmann::json::parse(f);
}

std::string metric(const RunResult& r, const std::string& k) { return r.summary.at(k); }

}  // namespace

TEST_CASE("config text parsing") {
  const RunConfig c = RunConfig::parse("# header\ntask = trials   # trailing\n\n  seed=7\nvictims = a.sram, b.sram ,\n");
  CHECK(c.get("task") == "trials");
  CHECK(c.get_int("seed") == 7);
  CHECK(c.get("arch") == "toy_vgg");
  CHECK(c.get_list("victims") == std::vector<std::string>{"a.sram", "b.sram"});
  CHECK_FALSE(c.has("arch"));
  CHECK_THROWS_AS(c.get("victim"), ConfigError);
  CHECK_THROWS_AS(RunConfig::parse("seed 3\n"), ConfigError);
  CHECK_THROWS_AS(RunConfig::parse("seed = 3\nseed = 4\n"), ConfigError);
  RunConfig d = RunConfig::parse("seed = x\nphysical = maybe\n");
  CHECK_THROWS_AS(d.get_int("seed"), ConfigError);
  CHECK_THROWS_AS(d.get_bool("physical"), ConfigError);
  d.set("physical", "yes");
  CHECK(d.get_bool("physical"));
}

TEST_CASE("config hash follows content, not the output directory") {
  RunConfig a = RunConfig::parse("task = train-victim\nout = x\n");
  RunConfig b = RunConfig::parse("out = y\ntask = train-victim\nseed = 1\n");
  CHECK(a.hash() == b.hash());
  b.set("seed", "2");
  CHECK(a.hash() != b.hash());
}

TEST_CASE("config validation") {
  const fs::path out = scratch("validate");
  CHECK_NOTHROW(validate(base("train-victim", out)));
  RunConfig c = base("train-victim", out);
  c.set("task", "fly");
  CHECK_THROWS_AS(validate(c), ConfigError);
  c = base("train-victim", out);
  c.set("colour", "red");
  CHECK_THROWS_AS(validate(c), ConfigError);
  c = base("train-subnet", out);
  CHECK_THROWS_AS(validate(c), ConfigError);  // no trigger
  c.set("trigger_builtin", "checker:4");
  CHECK_NOTHROW(validate(c));
  c.set("trigger", "/no/such/trigger.txt");
  CHECK_THROWS_AS(validate(c), ConfigError);
  c = base("replace", out);
  CHECK_THROWS_AS(validate(c), ConfigError);  // victim, subnet, spec missing
  c = base("train-victim", out);
  c.set("lambda", "lots");
  CHECK_THROWS_AS(validate(c), ConfigError);
  c = base("train-victim", out);
  c.set("arch", "alexnet");
  CHECK_THROWS_AS(validate(c), ConfigError);
}

TEST_CASE("exit codes") {
  CHECK(exit_code_for(ConfigError("x")) == 1);
  CHECK(exit_code_for(IoError("x")) == 1);
  CHECK(exit_code_for(ArchHashMismatchError("x")) == 1);
  CHECK(exit_code_for(NumericError("x")) == 2);
  CHECK(exit_code_for(std::runtime_error("x")) == 2);
}

TEST_CASE("every task runs end to end and reruns reproduce the artifacts") {
  const fs::path root = scratch("pipeline");

  const RunResult v1 = run(base("train-victim", root / "victim1"));
  RunConfig vc = base("train-victim", root / "victim1b");
  const RunResult v1b = run(vc);
  CHECK(manifest(root / "victim1")["outputs"] == manifest(root / "victim1b")["outputs"]);
  CHECK(manifest(root / "victim1")["config_hash"] == manifest(root / "victim1b")["config_hash"]);
  vc = base("train-victim", root / "victim2");
  vc.set("seed", "2");
  run(vc);
  CHECK(manifest(root / "victim2")["outputs"]["victim.sram"] != manifest(root / "victim1")["outputs"]["victim.sram"]);
  const fs::path victim1 = root / "victim1" / "victim.sram", victim2 = root / "victim2" / "victim.sram";
  CHECK(std::stod(metric(v1, "clean_accuracy")) > 0.3);

  RunConfig sc = base("train-subnet", root / "subnet");
  sc.set("trigger_builtin", "checker:4");
  sc.set("restarts", "0");
  sc.set("holdout", "300");
  const RunResult s = run(sc);
  CHECK(fs::exists(root / "subnet" / "histogram.csv"));
  const fs::path subnet = root / "subnet" / "subnet.sram", spec = root / "subnet" / "spec.txt";
  const nlohmann::json m = manifest(root / "subnet");
  CHECK(m["task"] == "train-subnet");
  CHECK(m["config"]["width"] == "1");
  CHECK(m["outputs"].contains("subnet.sram"));
  CHECK(m["inputs"].empty());  // data is a directory; triggers are built in

  RunConfig rc = base("replace", root / "replace");
  rc.set("victim", victim2.string());
  rc.set("subnet", subnet.string());
  rc.set("spec", spec.string());
  run(rc);

  RunConfig ec = base("emit-patch", root / "patch");
  ec.set("subnet", subnet.string());
  ec.set("spec", spec.string());
  run(ec);
  RunConfig ac = base("apply-patch", root / "applied");
  ac.set("victim", victim2.string());
  ac.set("patch", (root / "patch" / "patch.srap").string());
  run(ac);
  CHECK(read_file(root / "applied" / "attacked.sram") == read_file(root / "replace" / "attacked.sram"));

  RunConfig evc = base("evaluate", root / "eval");
  evc.set("victim", victim2.string());
  evc.set("model", (root / "applied" / "attacked.sram").string());
  evc.set("trigger_builtin", "checker:4");
  evc.set("subnet", subnet.string());
  evc.set("spec", spec.string());
  evc.set("sweep", "5");
  const RunResult e = run(evc);
  CHECK(fs::exists(root / "eval" / "sweep.csv"));
  CHECK(std::stod(metric(e, "cad")) == doctest::Approx(std::stod(metric(e, "acc_before")) - std::stod(metric(e, "acc_after"))));

  RunConfig tc = base("trials", root / "trials");
  tc.set("victims", victim1.string() + "," + victim2.string());
  tc.set("subnet", subnet.string());
  tc.set("trigger_builtin", "checker:4");
  tc.set("trials", "3");
  run(tc);
  tc.set("out", (root / "trials_again").string());
  run(tc);
  CHECK(read_file(root / "trials" / "trials.csv") == read_file(root / "trials_again" / "trials.csv"));

  RunConfig gc = base("grad-probe", root / "grad");
  gc.set("model", (root / "applied" / "attacked.sram").string());
  gc.set("subnet", subnet.string());
  gc.set("spec", spec.string());
  gc.set("trigger_builtin", "checker:4");
  gc.set("samples", "50");
  const RunResult g = run(gc);
  CHECK(std::stod(metric(g, "max_decomposition_error")) < 1e-4);

  RunConfig pc = base("train-poisoned", root / "dp");
  pc.set("trigger_builtin", "checker:4");
  run(pc);

  RunConfig cc = base("compare", root / "compare");
  cc.set("clean", victim2.string());
  cc.set("dp", (root / "dp" / "poisoned.sram").string());
  cc.set("sra", (root / "applied" / "attacked.sram").string());
  cc.set("reverse_iters", "20");
  run(cc);
  CHECK(fs::exists(root / "compare" / "compare.txt"));
  CHECK(fs::exists(root / "compare" / "sra" / "mask.pgm"));

  RunConfig nc = base("reverse-trigger", root / "reverse");
  nc.set("model", victim2.string());
  nc.set("reverse_iters", "20");
  const RunResult r = run(nc);
  CHECK(fs::exists(root / "reverse" / "restored" / "metrics.txt"));
  CHECK(manifest(root / "reverse")["outputs"].contains("restored/mask.pgm"));
  (void)s;
  (void)v1b;
  (void)r;
}

TEST_CASE("config files resolve paths relative to themselves") {
  const fs::path dir = scratch("relative");
  fs::create_directories(dir / "in");
  std::ofstream(dir / "in" / "trig.txt") << "sra-trigger 1\nid corner\nmode patch\nbuiltin square:3\nend\n";
  std::ofstream(dir / "run.cfg") << "task = train-poisoned\nout = result\ndata = " << SRA_DATA_DIR
                                 << "\ntrigger = in/trig.txt\n";
  const RunConfig c = RunConfig::load(dir / "run.cfg");
  CHECK(c.get_path("trigger") == dir / "in" / "trig.txt");
  CHECK(c.get_path("out") == dir / "result");
  CHECK_NOTHROW(validate(c));
}
