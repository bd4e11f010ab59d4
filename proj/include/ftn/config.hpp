#pragma once

// Sectioned key/value configuration: parse, serialize, dotted-path
// overrides. Readers mark keys as consumed so a run can reject anything it
// never understood instead of silently ignoring typos.

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "ftn/common.hpp"

namespace ftn::config {

namespace detail {

inline std::string trim(const std::string& s) {
  auto b = s.begin(), e = s.end();
  while (b != e && std::isspace(static_cast<unsigned char>(*b))) ++b;
  while (e != b && std::isspace(static_cast<unsigned char>(*(e - 1)))) --e;
  return std::string(b, e);
}

inline bool valid_name(const std::string& s) {
  if (s.empty()) return false;
  for (char c : s)
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '_' && c != '-')
      return false;
  return true;
}

}  // namespace detail

class Config {
 public:
  struct Entry {
    std::string key;
    std::string value;
    mutable bool consumed = false;
  };
  struct Section {
    std::string name;
    std::vector<Entry> entries;
  };

  static Config parse_text(const std::string& text, const std::string& origin) {
    Config cfg;
    std::istringstream in(text);
    std::string line;
    std::string section;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const auto where = origin + ":" + std::to_string(lineno);
      std::string s = line;
      const auto hash = s.find_first_of("#;");
      if (hash != std::string::npos) s.erase(hash);
      s = detail::trim(s);
      if (s.empty()) continue;
      if (s.front() == '[') {
        if (s.back() != ']')
          throw format_error("config: unterminated section header at " + where);
        section = detail::trim(s.substr(1, s.size() - 2));
        if (!detail::valid_name(section))
          throw format_error("config: bad section name at " + where);
        cfg.section(section);
        continue;
      }
      const auto eq = s.find('=');
      if (eq == std::string::npos)
        throw format_error("config: expected key=value at " + where);
      const std::string key = detail::trim(s.substr(0, eq));
      const std::string value = detail::trim(s.substr(eq + 1));
      if (!detail::valid_name(key))
        throw format_error("config: bad key name at " + where);
      if (section.empty())
        throw format_error("config: key before any [section] at " + where);
      cfg.set(section, key, value);
    }
    return cfg;
  }

  static Config load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw missing_artifact_error("cannot open config file: " + path);
    std::ostringstream buf;
    buf << f.rdbuf();
    return parse_text(buf.str(), path);
  }

  // insertion order preserved so snapshots diff cleanly
  std::string serialize() const {
    std::ostringstream out;
    bool first = true;
    for (const auto& sec : sections_) {
      if (!first) out << "\n";
      first = false;
      out << "[" << sec.name << "]\n";
      for (const auto& e : sec.entries) out << e.key << " = " << e.value << "\n";
    }
    return out.str();
  }

  void save(const std::string& path) const {
    std::ofstream f(path);
    if (!f) throw missing_artifact_error("cannot write config file: " + path);
    f << serialize();
    if (!f) throw missing_artifact_error("config write failed: " + path);
  }

  void set(const std::string& section, const std::string& key,
           const std::string& value) {
    auto& sec = this->section(section);
    for (auto& e : sec.entries)
      if (e.key == key) {
        e.value = value;
        return;
      }
    sec.entries.push_back({key, value, false});
  }

  // "section.key=value" targets one section; a bare "key=value" is applied
  // where the key already exists and must be unambiguous
  void apply_override(const std::string& spec) {
    const auto eq = spec.find('=');
    if (eq == std::string::npos)
      throw param_error("override: expected key=value, got '" + spec + "'");
    std::string path = detail::trim(spec.substr(0, eq));
    const std::string value = detail::trim(spec.substr(eq + 1));
    const auto dot = path.find('.');
    if (dot != std::string::npos) {
      const std::string section = path.substr(0, dot);
      const std::string key = path.substr(dot + 1);
      if (!detail::valid_name(section) || !detail::valid_name(key))
        throw param_error("override: bad path '" + path + "'");
      set(section, key, value);
      return;
    }
    if (!detail::valid_name(path))
      throw param_error("override: bad key '" + path + "'");
    std::vector<std::string> hits;
    for (const auto& sec : sections_)
      for (const auto& e : sec.entries)
        if (e.key == path) hits.push_back(sec.name);
    if (hits.empty())
      throw param_error("override: unknown key '" + path + "'");
    if (hits.size() > 1)
      throw param_error("override: key '" + path + "' is ambiguous (" + hits[0] +
                        ", " + hits[1] + "); qualify with section.key");
    set(hits[0], path, value);
  }

  bool has(const std::string& section, const std::string& key) const {
    return find(section, key) != nullptr;
  }

  std::string get_string(const std::string& section, const std::string& key,
                         const std::string& fallback) const {
    const Entry* e = find(section, key);
    if (!e) return fallback;
    e->consumed = true;
    return e->value;
  }

  std::string require_string(const std::string& section,
                             const std::string& key) const {
    const Entry* e = find(section, key);
    if (!e) throw param_error("config: missing required key " + section + "." + key);
    e->consumed = true;
    return e->value;
  }

  double get_double(const std::string& section, const std::string& key,
                    double fallback) const {
    const Entry* e = find(section, key);
    if (!e) return fallback;
    e->consumed = true;
    return parse_double(e->value, section, key);
  }

  long get_long(const std::string& section, const std::string& key,
                long fallback) const {
    const Entry* e = find(section, key);
    if (!e) return fallback;
    e->consumed = true;
    std::size_t pos = 0;
    long v = 0;
    try {
      v = std::stol(e->value, &pos);
    } catch (const std::exception&) {
      throw param_error("config: " + section + "." + key + " is not an integer: '" +
                        e->value + "'");
    }
    if (pos != e->value.size())
      throw param_error("config: " + section + "." + key + " is not an integer: '" +
                        e->value + "'");
    return v;
  }

  bool get_bool(const std::string& section, const std::string& key,
                bool fallback) const {
    const Entry* e = find(section, key);
    if (!e) return fallback;
    e->consumed = true;
    std::string v = e->value;
    std::transform(v.begin(), v.end(), v.begin(),
                   [](unsigned char c) { return std::tolower(c); });
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw param_error("config: " + section + "." + key + " is not a boolean: '" +
                      e->value + "'");
  }

  // comma-separated names
  std::vector<std::string> get_list(const std::string& section,
                                    const std::string& key,
                                    const std::string& fallback) const {
    const Entry* e = find(section, key);
    std::string raw = fallback;
    if (e) {
      e->consumed = true;
      raw = e->value;
    }
    std::vector<std::string> out;
    std::istringstream in(raw);
    std::string item;
    while (std::getline(in, item, ',')) {
      item = detail::trim(item);
      if (!item.empty()) out.push_back(item);
    }
    return out;
  }

  // "a,b,c" or inclusive range "start:step:stop"
  std::vector<double> get_grid(const std::string& section, const std::string& key,
                               const std::string& fallback) const {
    const Entry* e = find(section, key);
    std::string raw = fallback;
    if (e) {
      e->consumed = true;
      raw = e->value;
    }
    std::vector<double> out;
    if (raw.find(':') != std::string::npos) {
      std::istringstream in(raw);
      std::string a, b, c;
      if (!std::getline(in, a, ':') || !std::getline(in, b, ':') ||
          !std::getline(in, c))
        throw param_error("config: " + section + "." + key +
                          ": range must be start:step:stop");
      const double start = parse_double(detail::trim(a), section, key);
      const double step = parse_double(detail::trim(b), section, key);
      const double stop = parse_double(detail::trim(c), section, key);
      if (!(step > 0.0))
        throw param_error("config: " + section + "." + key + ": step must be > 0");
      if (stop < start)
        throw param_error("config: " + section + "." + key + ": stop < start");
      for (long i = 0;; ++i) {
        const double v = start + step * static_cast<double>(i);
        if (v > stop + 1e-9 * std::max(1.0, std::abs(stop))) break;
        out.push_back(v);
      }
      return out;
    }
    std::istringstream in(raw);
    std::string item;
    while (std::getline(in, item, ',')) {
      item = detail::trim(item);
      if (!item.empty()) out.push_back(parse_double(item, section, key));
    }
    return out;
  }

  // every key a run never read is an error (catches typos and stale keys)
  void reject_unconsumed() const {
    std::vector<std::string> unknown;
    for (const auto& sec : sections_)
      for (const auto& e : sec.entries)
        if (!e.consumed) unknown.push_back(sec.name + "." + e.key);
    if (!unknown.empty()) {
      std::string msg = "config: unknown keys:";
      for (const auto& k : unknown) msg += " " + k;
      throw param_error(msg);
    }
  }

  const std::vector<Section>& sections() const { return sections_; }

 private:
  std::vector<Section> sections_;

  Section& section(const std::string& name) {
    for (auto& s : sections_)
      if (s.name == name) return s;
    sections_.push_back({name, {}});
    return sections_.back();
  }

  const Entry* find(const std::string& section, const std::string& key) const {
    for (const auto& s : sections_)
      if (s.name == section)
        for (const auto& e : s.entries)
          if (e.key == key) return &e;
    return nullptr;
  }

  static double parse_double(const std::string& raw, const std::string& section,
                             const std::string& key) {
    std::size_t pos = 0;
    double v = 0.0;
    try {
      v = std::stod(raw, &pos);
    } catch (const std::exception&) {
      throw param_error("config: " + section + "." + key + " is not a number: '" +
                        raw + "'");
    }
    if (pos != raw.size())
      throw param_error("config: " + section + "." + key + " is not a number: '" +
                        raw + "'");
    return v;
  }
};

}  // namespace ftn::config
