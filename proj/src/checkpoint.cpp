#include "ctseg/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace ctseg {

namespace {
constexpr const char* kMagic = "CTSEGCKPT 1";
}

void write_checkpoint(const std::string& path,
                      const std::vector<CheckpointEntry>& entries) {
  std::set<std::string> names;
  for (const auto& e : entries) {
    if (e.name.empty() || e.name.find_first_of(" \n") != std::string::npos)
      throw std::invalid_argument("checkpoint: bad tensor name '" + e.name + "'");
    if (!names.insert(e.name).second)
      throw std::invalid_argument("checkpoint: duplicate tensor name '" +
                                  e.name + "'");
    if ((int64_t)e.data.size() != shape_numel(e.shape))
      throw std::invalid_argument("checkpoint: shape/data mismatch for '" +
                                  e.name + "'");
  }
  std::ostringstream index;
  index << kMagic << "\n";
  int64_t offset = 0;
  for (const auto& e : entries) {
    index << "tensor " << e.name << " f64";
    index << " " << e.shape.size();
    for (int d : e.shape) index << " " << d;
    index << " " << offset << "\n";
    offset += (int64_t)e.data.size() * (int64_t)sizeof(double);
  }
  index << "data\n";

  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("checkpoint: cannot open '" + path + "'");
  const std::string head = index.str();
  f.write(head.data(), (std::streamsize)head.size());
  for (const auto& e : entries)
    f.write(reinterpret_cast<const char*>(e.data.data()),
            (std::streamsize)(e.data.size() * sizeof(double)));
  if (!f) throw std::runtime_error("checkpoint: write failed for '" + path + "'");
}

std::vector<CheckpointEntry> read_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("checkpoint: cannot open '" + path + "'");
  std::string line;
  if (!std::getline(f, line) || line != kMagic)
    throw std::runtime_error("checkpoint: bad magic in '" + path + "'");

  std::vector<CheckpointEntry> entries;
  std::vector<int64_t> offsets;
  while (std::getline(f, line)) {
    if (line == "data") break;
    std::istringstream is(line);
    std::string tag, name, dtype;
    size_t rank = 0;
    if (!(is >> tag >> name >> dtype >> rank) || tag != "tensor")
      throw std::runtime_error("checkpoint: malformed index line: " + line);
    if (dtype != "f64")
      throw std::runtime_error("checkpoint: unsupported dtype " + dtype);
    CheckpointEntry e;
    e.name = name;
    e.shape.resize(rank);
    for (size_t i = 0; i < rank; ++i)
      if (!(is >> e.shape[i]))
        throw std::runtime_error("checkpoint: malformed shape: " + line);
    int64_t offset = 0;
    if (!(is >> offset))
      throw std::runtime_error("checkpoint: missing offset: " + line);
    offsets.push_back(offset);
    entries.push_back(std::move(e));
  }
  if (line != "data")
    throw std::runtime_error("checkpoint: missing data section");

  const int64_t data_start = (int64_t)f.tellg();
  for (size_t i = 0; i < entries.size(); ++i) {
    CheckpointEntry& e = entries[i];
    const int64_t count = shape_numel(e.shape);
    e.data.resize(count);
    f.seekg(data_start + offsets[i]);
    f.read(reinterpret_cast<char*>(e.data.data()),
           (std::streamsize)(count * sizeof(double)));
    if (!f)
      throw std::runtime_error("checkpoint: truncated data for '" + e.name + "'");
  }
  return entries;
}

}  // namespace ctseg
