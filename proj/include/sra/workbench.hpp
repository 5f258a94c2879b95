#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace sra {

inline constexpr const char* kToolVersion = "0.1.0";
inline constexpr int kConfigSchemaVersion = 1;

/// Known tasks, in documentation order.
const std::vector<std::string>& workbench_tasks();

/// One documented config key.
struct ConfigKey {
  std::string name;
  std::string fallback;  // default value; empty means unset
  std::string help;
};

const std::vector<ConfigKey>& config_schema();

/// Declarative run configuration: `key = value` lines, `#` comments.
/// Values are kept as text and parsed on use.
class RunConfig {
 public:
  static RunConfig parse(const std::string& text);
  static RunConfig load(const std::filesystem::path& path);

  /// Overrides or adds a key (flags win over the file).
  void set(const std::string& key, const std::string& value);
  bool has(const std::string& key) const;
  /// Explicit value or the schema default; ConfigError when neither exists.
  std::string get(const std::string& key) const;
  std::optional<std::string> find(const std::string& key) const;
  long long get_int(const std::string& key) const;
  double get_double(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::vector<std::string> get_list(const std::string& key) const;
  std::filesystem::path get_path(const std::string& key) const;

  /// Explicit keys plus defaults, sorted; the basis of the config hash.
  std::map<std::string, std::string> resolved() const;
  std::vector<std::string> explicit_keys() const;
  std::string canonical_text() const;
  std::string hash() const;

  /// Paths in the config are resolved relative to this directory.
  std::filesystem::path base_dir;

 private:
  std::map<std::string, std::string> values_;
};

/// Schema check: known keys, known task, parsable numbers, required keys of
/// the task present and their input paths existing. Throws ConfigError.
void validate(const RunConfig& cfg);

struct RunResult {
  std::string task;
  std::vector<std::filesystem::path> artifacts;  // manifest last
  std::map<std::string, std::string> summary;    // headline numbers
};

/// Validates, runs the task and writes its artifacts plus manifest.json to
/// the `out` directory.
RunResult run(const RunConfig& cfg);

/// 0 ok, 1 user or config error, 2 internal or numeric error.
int exit_code_for(const std::exception& e);

}  // namespace sra
