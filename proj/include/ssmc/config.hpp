#pragma once

// Flat run-config files: one `key = value` per line, `#` starts a comment,
// blank lines ignored. Keys are the long flag names of a subcommand without
// the leading dashes; values may be double-quoted.

#include <istream>
#include <string>
#include <utility>
#include <vector>

#include "ssmc/dataset.hpp"
#include "ssmc/error.hpp"

namespace ssmc {

using ConfigEntries = std::vector<std::pair<std::string, std::string>>;

inline ConfigEntries parse_config(std::istream& in, const std::string& source = "config") {
  ConfigEntries out;
  std::string line;
  std::size_t lineno = 0;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return std::string{};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  };
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(source + ":" + std::to_string(lineno) + ": expected key = value");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty())
      throw ConfigError(source + ":" + std::to_string(lineno) + ": empty key");
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"')
      value = value.substr(1, value.size() - 2);
    for (const auto& [k, v] : out)
      if (k == key)
        throw ConfigError(source + ":" + std::to_string(lineno) + ": duplicate key '" + key +
                          "'");
    out.emplace_back(std::move(key), std::move(value));
  }
  return out;
}

inline ConfigEntries parse_config_file(const std::string& path) {
  auto in = detail::open_input(path);
  return parse_config(in, path);
}

}  // namespace ssmc
