#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "difftune/tensor.hpp"

namespace difftune {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Flat dotted-key configuration. Every key has a documented default and
// unknown keys are rejected at parse time.
class RunConfig {
 public:
  struct KeySpec {
    const char* key;
    const char* default_value;
    const char* doc;
  };

  static const std::vector<KeySpec>& key_table();

  RunConfig();  // all defaults

  static RunConfig from_file(const std::string& path);
  static RunConfig from_text(const std::string& text);

  void set(const std::string& key, const std::string& value);

  const std::string& get(const std::string& key) const;
  double get_double(const std::string& key) const;
  int get_int(const std::string& key) const;
  std::uint64_t get_u64(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::vector<std::size_t> get_size_list(const std::string& key) const;

  // Fully resolved key = value document, in key-table order.
  std::string resolved_text() const;

  // FNV-1a over the resolved text, excluding run-identity keys (seed, out)
  // so checkpoints remain resumable across seed overrides.
  std::uint64_t hash() const;

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace difftune
