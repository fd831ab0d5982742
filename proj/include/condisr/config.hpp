#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "condisr/errors.hpp"

// Flat dotted-key text configuration ("key = value" lines, '#' comments).
// Every known key carries a type, a default and an optional constraint;
// unknown keys are hard errors with a nearest-key suggestion.

namespace condisr {

enum class KeyType { kReal, kInt, kBool, kString, kEnum };

struct KeySpec {
  std::string name;
  KeyType type = KeyType::kString;
  std::string default_value;
  std::vector<std::string> enum_values;  // for kEnum
  std::string constraint_doc;            // human-readable constraint
  std::function<bool(const std::string&)> check;  // value-level constraint
};

class Config {
 public:
  Config();  // all defaults

  /// Parses a config file and overlays it onto the defaults. Collects every
  /// violation instead of stopping at the first.
  static Config from_file(const std::string& path, std::vector<std::string>* errors = nullptr);
  static Config from_string(const std::string& text, std::vector<std::string>* errors = nullptr);

  void set(const std::string& key, const std::string& value);  // throws ConfigError

  std::string get_string(const std::string& key) const;
  double get_real(const std::string& key) const;
  long get_int(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::vector<double> get_real_list(const std::string& key) const;
  std::vector<long> get_int_list(const std::string& key) const;

  /// All keys with resolved values (defaults filled), sorted; reparseable as
  /// a config file.
  std::string resolved() const;

  /// Cross-key validation (e.g. beta_min <= beta_max); returns all problems.
  std::vector<std::string> validate() const;

  static const std::vector<KeySpec>& schema();

 private:
  std::map<std::string, std::string> values_;
};

/// Levenshtein-nearest known key, used for unknown-key suggestions.
std::string nearest_key(const std::string& key);

}  // namespace condisr
