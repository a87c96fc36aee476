#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace ctseg {

// Ordered key/value lines: `key value...`, '#' comments, repeated keys kept.
class KvFile {
 public:
  static KvFile parse(const std::string& text);
  static KvFile load(const std::string& path);

  bool has(const std::string& key) const;
  std::string get(const std::string& key) const;  // throws when absent
  std::string get(const std::string& key, const std::string& fallback) const;
  int64_t get_int(const std::string& key, int64_t fallback) const;
  int64_t get_int(const std::string& key) const;
  double get_double(const std::string& key, double fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<std::string> get_list(const std::string& key) const;  // comma
  std::vector<std::string> all(const std::string& key) const;

  const std::vector<std::pair<std::string, std::string>>& lines() const {
    return lines_;
  }

 private:
  std::vector<std::pair<std::string, std::string>> lines_;
};

std::vector<std::string> split_commas(const std::string& s);

}  // namespace ctseg
