#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "survpfn/model.hpp"
#include "survpfn/prior.hpp"
#include "survpfn/trainer.hpp"

namespace survpfn {

inline constexpr const char* kEnvPrefix = "SURVPFN_";

using EnvList = std::vector<std::pair<std::string, std::string>>;

/// SURVPFN_* variables of the current process.
EnvList process_environment();

/// A TOML document with environment overrides applied.
///
/// Variable SURVPFN_<SECTION>__<KEY>=<value> sets `section.key` (lowercased;
/// `__` separates table levels). The value is read as a TOML value when it
/// parses as one and as a string otherwise. Overrides win over the file.
class Config {
 public:
  Config();
  static Config parse(const std::string& text, const std::string& source = "<string>",
                      const EnvList& env = {});
  static Config load(const std::string& path, const EnvList& env = process_environment());

  [[nodiscard]] bool has(const std::string& key) const;
  [[nodiscard]] std::optional<bool> get_bool(const std::string& key) const;
  [[nodiscard]] std::optional<std::int64_t> get_int(const std::string& key) const;
  [[nodiscard]] std::optional<std::size_t> get_size(const std::string& key) const;
  [[nodiscard]] std::optional<double> get_double(const std::string& key) const;
  [[nodiscard]] std::optional<std::string> get_string(const std::string& key) const;
  [[nodiscard]] std::optional<std::vector<double>> get_doubles(const std::string& key) const;
  [[nodiscard]] std::optional<std::vector<std::string>> get_strings(const std::string& key) const;

  /// Throws ConfigError naming the first key of table `section` not in `allowed`
  /// (sub-tables included). The empty section is the root.
  void check_keys(const std::string& section, const std::vector<std::string>& allowed) const;

  /// Canonical TOML text of the resolved document.
  [[nodiscard]] std::string to_toml() const;

  void set(const std::string& key, const std::string& value);

 private:
  struct Impl;
  std::shared_ptr<Impl> impl_;
};

/// [prior]; `preset = "simple_exponential"` starts from that preset.
PriorConfig prior_config_from(const Config& c, const std::string& section = "prior");
/// [model]
ModelConfig model_config_from(const Config& c, const std::string& section = "model");
/// [train], with its prior and model from [prior] and [model].
TrainConfig train_config_from(const Config& c, const std::string& section = "train");

}  // namespace survpfn
