#pragma once

#include <cstdint>
#include <filesystem>
#include <istream>
#include <map>
#include <set>
#include <string>

namespace mdgfm {

// Flat "section.key" -> value map. Keys before any [section] header have no
// prefix.
using KeyValues = std::map<std::string, std::string>;

KeyValues parse_ini(std::istream& in, const std::string& source_name = "<config>");
KeyValues load_ini(const std::filesystem::path& path);

// Applies a "section.key=value" assignment, replacing any earlier value.
void apply_override(KeyValues& kv, const std::string& assignment);

// Renders as [section] blocks, keys sorted.
std::string to_ini(const KeyValues& kv);

// Typed lookups that record which keys were consumed; unknown keys can then
// be rejected with require_all_used.
class ConfigReader {
 public:
  explicit ConfigReader(const KeyValues& kv) : kv_(kv) {}

  bool has(const std::string& key) const { return kv_.count(key) != 0; }
  std::string get_string(const std::string& key, const std::string& fallback);
  double get_double(const std::string& key, double fallback);
  long long get_int(const std::string& key, long long fallback);
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback);
  bool get_bool(const std::string& key, bool fallback);

  // Marks every key under `prefix` as used.
  void consume_prefix(const std::string& prefix);
  void require_all_used() const;

 private:
  const std::string* find(const std::string& key);

  const KeyValues& kv_;
  std::set<std::string> used_;
};

std::string format_double(double v);
std::string format_bool(bool v);

}  // namespace mdgfm
