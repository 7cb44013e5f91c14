#include "mdgfm/config.hpp"

#include <cerrno>
#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "mdgfm/error.hpp"

namespace mdgfm {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

KeyValues parse_ini(std::istream& in, const std::string& source_name) {
  KeyValues kv;
  std::string section;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#' || t[0] == ';') continue;
    const std::string where = source_name + ":" + std::to_string(line_no);
    if (t.front() == '[') {
      if (t.back() != ']') throw ConfigError(where + ": unterminated section header");
      section = trim(t.substr(1, t.size() - 2));
      continue;
    }
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ConfigError(where + ": expected key = value");
    const std::string key = trim(t.substr(0, eq));
    if (key.empty()) throw ConfigError(where + ": empty key");
    kv[section.empty() ? key : section + "." + key] = trim(t.substr(eq + 1));
  }
  return kv;
}

KeyValues load_ini(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  return parse_ini(in, path.string());
}

void apply_override(KeyValues& kv, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
  kv[trim(assignment.substr(0, eq))] = trim(assignment.substr(eq + 1));
}

std::string to_ini(const KeyValues& kv) {
  std::map<std::string, std::map<std::string, std::string>> sections;
  for (const auto& [key, value] : kv) {
    const auto dot = key.find('.');
    if (dot == std::string::npos) sections[""][key] = value;
    else sections[key.substr(0, dot)][key.substr(dot + 1)] = value;
  }
  std::ostringstream out;
  for (const auto& [name, entries] : sections) {
    if (!name.empty()) out << "[" << name << "]\n";
    for (const auto& [k, v] : entries) out << k << " = " << v << "\n";
  }
  return out.str();
}

const std::string* ConfigReader::find(const std::string& key) {
  const auto it = kv_.find(key);
  if (it == kv_.end()) return nullptr;
  used_.insert(key);
  return &it->second;
}

std::string ConfigReader::get_string(const std::string& key, const std::string& fallback) {
  const auto* v = find(key);
  return v ? *v : fallback;
}

double ConfigReader::get_double(const std::string& key, double fallback) {
  const auto* v = find(key);
  if (!v) return fallback;
  errno = 0;
  char* end = nullptr;
  const double out = std::strtod(v->c_str(), &end);
  if (v->empty() || *end != '\0' || errno == ERANGE) throw ConfigError(key + ": '" + *v + "' is not a number");
  return out;
}

long long ConfigReader::get_int(const std::string& key, long long fallback) {
  const auto* v = find(key);
  if (!v) return fallback;
  long long out = 0;
  const auto res = std::from_chars(v->data(), v->data() + v->size(), out);
  if (res.ec != std::errc() || res.ptr != v->data() + v->size()) {
    throw ConfigError(key + ": '" + *v + "' is not an integer");
  }
  return out;
}

std::uint64_t ConfigReader::get_u64(const std::string& key, std::uint64_t fallback) {
  const auto* v = find(key);
  if (!v) return fallback;
  std::uint64_t out = 0;
  const auto res = std::from_chars(v->data(), v->data() + v->size(), out);
  if (res.ec != std::errc() || res.ptr != v->data() + v->size()) {
    throw ConfigError(key + ": '" + *v + "' is not an unsigned integer");
  }
  return out;
}

bool ConfigReader::get_bool(const std::string& key, bool fallback) {
  const auto* v = find(key);
  if (!v) return fallback;
  if (*v == "true" || *v == "1" || *v == "yes") return true;
  if (*v == "false" || *v == "0" || *v == "no") return false;
  throw ConfigError(key + ": '" + *v + "' is not a boolean");
}

void ConfigReader::consume_prefix(const std::string& prefix) {
  for (const auto& [key, value] : kv_) {
    if (key.rfind(prefix, 0) == 0) used_.insert(key);
  }
}

void ConfigReader::require_all_used() const {
  for (const auto& [key, value] : kv_) {
    if (!used_.count(key)) throw ConfigError("unknown config key '" + key + "'");
  }
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string format_bool(bool v) { return v ? "true" : "false"; }

}  // namespace mdgfm
