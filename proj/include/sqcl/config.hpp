#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

namespace sqcl {

// Flat `key = value` run configuration with dotted keys. Unknown keys are
// rejected; `grid.<key>` entries carry comma-separated sweep values for any
// registered key.
class RunConfig {
 public:
  RunConfig();  // defaults

  static RunConfig load(const std::string& path);
  static RunConfig from_string(const std::string& text);

  void set(const std::string& key, const std::string& value);
  const std::string& get(const std::string& key) const;
  bool is_default(const std::string& key) const;

  int get_int(const std::string& key) const;
  double get_double(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  uint64_t get_u64(const std::string& key) const;
  std::vector<uint64_t> get_u64_list(const std::string& key) const;
  std::vector<double> get_double_list(const std::string& key) const;

  // Cross-field validation; throws config_error naming the offending field.
  void validate() const;

  std::string serialize() const;        // canonical text form (sorted keys)
  nlohmann::json to_json() const;       // snapshot for records

  // grid.<key> axes, sorted by key; values split on commas
  std::vector<std::pair<std::string, std::vector<std::string>>> grid_axes() const;
  bool has_grid() const { return !grid_axes().empty(); }
  RunConfig without_grid() const;

  static const std::map<std::string, std::string>& registered_keys();

 private:
  std::map<std::string, std::string> values_;
  std::map<std::string, std::string> grid_;
};

}  // namespace sqcl
