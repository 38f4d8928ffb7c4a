#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "json.hpp"
#include "mhf/core_data.hpp"

namespace mhf {

/// All entities of one dataset directory, sorted by entity id.
struct Dataset {
  std::vector<EntityRecord> entities;
  std::size_t d = 0;
  std::size_t k = 0;
  std::size_t hours = 0;
  nlohmann::json meta;  ///< contents of meta.json

  std::size_t days() const { return hours / 24; }
  std::size_t index_of(const std::string& entity_id) const;
};

/// Reads `entity_<id>.csv`, `interactions.csv` and `meta.json` from `dir`.
/// Throws ParseError naming the offending file (and line).
Dataset load_dataset(const std::filesystem::path& dir);

/// Writes the directory layout. `meta` is written verbatim as meta.json.
void write_dataset(const std::filesystem::path& dir, const Dataset& ds);

struct ChannelStats {
  std::string name;
  double mean = 0.0;
  double stddev = 0.0;
  double min = 0.0;
  double max = 0.0;
};

struct DatasetSummary {
  std::size_t entity_count = 0;
  std::size_t hours = 0;
  std::size_t days = 0;
  std::size_t d = 0;
  std::size_t k = 0;
  std::string drift_kind;
  long drift_hour = -1;
  std::vector<ChannelStats> channels;  ///< f0..f{d-1}, then metric; pooled over entities
};

DatasetSummary describe(const Dataset& ds);
DatasetSummary describe(const std::filesystem::path& dir);
void print_summary(std::ostream& os, const DatasetSummary& s);

/// Shortest round-trip decimal representation.
std::string format_double(double v);

}  // namespace mhf
