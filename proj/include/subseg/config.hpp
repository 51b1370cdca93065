#pragma once

#include <fstream>
#include <map>
#include <sstream>
#include <string>

namespace subseg {

/// `key = value` per line, `#` starts a comment, blank lines ignored.
inline std::map<std::string, std::string> parse_config_text(std::istream& is) {
  std::map<std::string, std::string> out;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      bool blank = true;
      for (char c : line)
        if (!std::isspace(static_cast<unsigned char>(c))) blank = false;
      if (blank) continue;
      throw std::runtime_error("config: malformed line " + std::to_string(lineno) + ": " + line);
    }
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw std::runtime_error("config: empty key on line " + std::to_string(lineno));
    out[key] = value;
  }
  return out;
}

inline std::map<std::string, std::string> parse_config_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("config: cannot open " + path);
  return parse_config_text(is);
}

inline void write_config_file(const std::string& path,
                              const std::map<std::string, std::string>& kv) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("config: cannot write " + path);
  for (const auto& [k, v] : kv) os << k << " = " << v << "\n";
  if (!os) throw std::runtime_error("config: write failed for " + path);
}

}  // namespace subseg
