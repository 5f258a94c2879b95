#include <exception>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "sra/errors.hpp"
#include "sra/workbench.hpp"

namespace {

struct Options {
  std::string config;
  std::vector<std::string> sets;
  std::string out;
  std::string seed;
};

void add_common(CLI::App* cmd, Options& o) {
  cmd->add_option("-c,--config", o.config, "config file (key = value lines)")->check(CLI::ExistingFile);
  cmd->add_option("-s,--set", o.sets, "override a config key, as key=value (repeatable)");
  cmd->add_option("-o,--out", o.out, "output directory (overrides 'out')");
  cmd->add_option("--seed", o.seed, "root seed (overrides 'seed')");
}

sra::RunConfig build_config(const Options& o, const std::string& task) {
  sra::RunConfig cfg = o.config.empty() ? sra::RunConfig::parse("") : sra::RunConfig::load(o.config);
  for (const auto& kv : o.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos || eq == 0) throw sra::ConfigError("--set expects key=value, got '" + kv + "'");
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (!o.out.empty()) cfg.set("out", o.out);
  if (!o.seed.empty()) cfg.set("seed", o.seed);
  if (!task.empty()) {
    if (cfg.has("task") && cfg.get("task") != task) {
      throw sra::ConfigError("config declares task '" + cfg.get("task") + "' but '" + task + "' was requested");
    }
    cfg.set("task", task);
  }
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Subnet replacement attack workbench"};
  app.require_subcommand(1);
  app.set_version_flag("--version", sra::kToolVersion);

  Options opts;
  std::string chosen;
  auto* run = app.add_subcommand("run", "run the task named in the config");
  add_common(run, opts);
  run->callback([&] { chosen = ""; });
  for (const auto& task : sra::workbench_tasks()) {
    auto* cmd = app.add_subcommand(task, "run the " + task + " task");
    add_common(cmd, opts);
    cmd->callback([&chosen, task] { chosen = task; });
  }
  bool list_keys = false;
  auto* keys = app.add_subcommand("keys", "list the config schema");
  keys->callback([&] { list_keys = true; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  if (list_keys) {
    for (const auto& k : sra::config_schema()) {
      std::cout << k.name << (k.fallback.empty() ? "" : " = " + k.fallback) << "\n    " << k.help << "\n";
    }
    return 0;
  }

  std::string task = chosen;
  try {
    const sra::RunConfig cfg = build_config(opts, chosen);
    task = cfg.get("task");
    const sra::RunResult r = sra::run(cfg);
    for (const auto& [k, v] : r.summary) std::cout << k << " " << v << "\n";
    for (const auto& a : r.artifacts) std::cout << "wrote " << a.string() << "\n";
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "sra_workbench: " << (task.empty() ? "" : "task " + task + ": ") << e.what() << "\n";
    return sra::exit_code_for(e);
  }
}
