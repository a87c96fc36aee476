#include "ctseg/config.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace ctseg {

KvFile KvFile::parse(const std::string& text) {
  KvFile out;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    // trim
    const auto begin = line.find_first_not_of(" \t\r");
    if (begin == std::string::npos) continue;
    const auto end = line.find_last_not_of(" \t\r");
    line = line.substr(begin, end - begin + 1);
    const auto space = line.find_first_of(" \t");
    if (space == std::string::npos) {
      throw std::runtime_error("config line " + std::to_string(lineno) +
                               ": key without value: '" + line + "'");
    }
    const std::string key = line.substr(0, space);
    const auto vstart = line.find_first_not_of(" \t", space);
    out.lines_.emplace_back(key, line.substr(vstart));
  }
  return out;
}

KvFile KvFile::load(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open config '" + path + "'");
  std::ostringstream os;
  os << f.rdbuf();
  return parse(os.str());
}

bool KvFile::has(const std::string& key) const {
  for (const auto& [k, v] : lines_)
    if (k == key) return true;
  return false;
}

std::string KvFile::get(const std::string& key) const {
  for (const auto& [k, v] : lines_)
    if (k == key) return v;
  throw std::runtime_error("config: missing required key '" + key + "'");
}

std::string KvFile::get(const std::string& key,
                        const std::string& fallback) const {
  return has(key) ? get(key) : fallback;
}

int64_t KvFile::get_int(const std::string& key, int64_t fallback) const {
  return has(key) ? std::stoll(get(key)) : fallback;
}

int64_t KvFile::get_int(const std::string& key) const {
  return std::stoll(get(key));
}

double KvFile::get_double(const std::string& key, double fallback) const {
  return has(key) ? std::stod(get(key)) : fallback;
}

bool KvFile::get_bool(const std::string& key, bool fallback) const {
  if (!has(key)) return fallback;
  const std::string v = get(key);
  if (v == "1" || v == "true" || v == "yes") return true;
  if (v == "0" || v == "false" || v == "no") return false;
  throw std::runtime_error("config: bad boolean for '" + key + "': " + v);
}

std::vector<std::string> KvFile::get_list(const std::string& key) const {
  return split_commas(get(key));
}

std::vector<std::string> KvFile::all(const std::string& key) const {
  std::vector<std::string> out;
  for (const auto& [k, v] : lines_)
    if (k == key) out.push_back(v);
  return out;
}

std::vector<std::string> split_commas(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream is(s);
  std::string item;
  while (std::getline(is, item, ',')) {
    const auto b = item.find_first_not_of(" \t");
    if (b == std::string::npos) continue;
    const auto e = item.find_last_not_of(" \t");
    out.push_back(item.substr(b, e - b + 1));
  }
  return out;
}

}  // namespace ctseg
