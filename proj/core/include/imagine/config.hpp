#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>

namespace imagine {

/// Flat key-value config with [section] headers. Lines starting with '#' or
/// ';' are comments. Values keep internal whitespace; keys and section names
/// are trimmed. Unknown keys are tolerated so configs can carry notes for
/// other tooling.
class ConfigFile {
 public:
  ConfigFile() = default;
  static ConfigFile load(const std::filesystem::path& path);
  static ConfigFile parse(const std::string& text, const std::string& origin = "<string>");

  bool has(const std::string& section, const std::string& key) const;

  std::string get_string(const std::string& section, const std::string& key,
                         const std::string& fallback) const;
  double get_double(const std::string& section, const std::string& key, double fallback) const;
  int64_t get_int(const std::string& section, const std::string& key, int64_t fallback) const;
  uint64_t get_u64(const std::string& section, const std::string& key, uint64_t fallback) const;
  bool get_bool(const std::string& section, const std::string& key, bool fallback) const;

  /// Required lookup; throws ConfigError naming section.key when absent.
  std::string require_string(const std::string& section, const std::string& key) const;

  void set(const std::string& section, const std::string& key, const std::string& value);

 private:
  std::map<std::string, std::string> values_;  // "section.key" -> value
  std::string origin_;
};

}  // namespace imagine
