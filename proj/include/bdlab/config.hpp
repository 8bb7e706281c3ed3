#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "bdlab/errors.hpp"

namespace bdlab {

// Raised when a config parses but fails validation; lists every offending field.
class ValidationError : public ConfigError {
 public:
  explicit ValidationError(std::vector<std::string> problems);
  const std::vector<std::string>& problems() const { return problems_; }

 private:
  std::vector<std::string> problems_;
};

// Flat key=value text with [section] headers. A key written under [train] is
// stored as "train.key"; keys before the first header are stored bare.
// '#' and ';' start comments; blank lines are ignored.
struct Config {
  std::map<std::string, std::string> values;

  bool has(const std::string& key) const { return values.count(key) != 0; }
  void set(const std::string& key, std::string value) { values[key] = std::move(value); }
  // Entries under "<prefix>." with the prefix removed.
  std::map<std::string, std::string> section(const std::string& prefix) const;
};

// Throws ConfigError naming the line for malformed or duplicate entries.
Config parse_config(std::string_view text);
Config load_config(const std::filesystem::path& path);

// One "key=value" line per entry in key order; the hash input.
std::string canonical_text(const Config& cfg);
// FNV-1a 64 over the canonical text, as 16 lowercase hex digits.
std::string config_hash(const Config& cfg);

// Typed readers that record a problem instead of throwing, so validation can
// report every bad field at once.
class FieldReader {
 public:
  explicit FieldReader(const Config& cfg) : cfg_(cfg) {}

  std::string str(const std::string& key, const std::string& fallback);
  double real(const std::string& key, double fallback);
  long integer(const std::string& key, long fallback);
  bool boolean(const std::string& key, bool fallback);
  std::vector<double> reals(const std::string& key, const std::vector<double>& fallback);
  std::vector<std::string> words(const std::string& key, const std::vector<std::string>& fallback);

  void problem(std::string msg) { problems_.push_back(std::move(msg)); }
  // Flags keys that no reader asked for.
  void reject_unread();
  // Throws ValidationError when any problem was recorded.
  void finish() const;

 private:
  const std::string* lookup(const std::string& key);

  const Config& cfg_;
  std::map<std::string, bool> read_;
  std::vector<std::string> problems_;
};

}  // namespace bdlab
