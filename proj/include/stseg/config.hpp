#pragma once

#include <cstdint>
#include <map>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include "stseg/common.hpp"

namespace stseg {

// Flat key=value configuration. Precedence is handled by merge order:
// defaults, then file, then command-line sets.
class Config {
 public:
  Config() = default;

  static Config from_file(const std::string& path);

  void merge_file(const std::string& path);
  void set(const std::string& key, const std::string& value);
  void set_kv(const std::string& assignment);  // "key=value"

  bool has(const std::string& key) const;

  std::string get_str(const std::string& key, const std::string& dflt) const;
  std::string require_str(const std::string& key) const;
  std::int64_t get_int(const std::string& key, std::int64_t dflt) const;
  std::uint64_t get_u64(const std::string& key, std::uint64_t dflt) const;
  double get_f64(const std::string& key, double dflt) const;
  bool get_bool(const std::string& key, bool dflt) const;
  std::vector<int> get_int_list(const std::string& key, const std::vector<int>& dflt) const;

  // Throws ConfigError if any present key is not in `known`.
  void restrict_keys(const std::set<std::string>& known) const;

  void echo(std::ostream& os) const;
  void echo_file(const std::string& path) const;

  const std::map<std::string, std::string>& entries() const { return kv_; }

 private:
  std::map<std::string, std::string> kv_;
};

}  // namespace stseg
