#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "mhf/dataset.hpp"

namespace mhf {

enum class DriftKind { none, abrupt, incremental };

std::string to_string(DriftKind k);
DriftKind parse_drift_kind(const std::string& s);

struct GenConfig {
  int n_entities = 30;
  int n_clusters = 3;
  int d = 6;
  int k = 0;  ///< interaction dimension; 0 means n_entities
  int days = 540;
  DriftKind drift_kind = DriftKind::none;
  int drift_day = 0;
  double scale_spread = 10.0;
  double noise_level = 0.1;
  /// Trailing channels whose daily phase flips with the regime (drift signature).
  int regime_channels = 1;
  /// Probability that an entity-day carries a burst of heavy metric noise.
  double outlier_rate = 0.0;
  std::uint64_t seed = 1;
  std::string start_date = "2017-01-01";

  int interaction_dim() const { return k > 0 ? k : n_entities; }
  void validate() const;
};

nlohmann::json to_json(const GenConfig& c);
GenConfig gen_config_from_json(const nlohmann::json& j);

/// Linear read-out of a cluster: metric shape = offset + sum_j weights[j] * centered channel j.
struct ClusterFunctional {
  std::vector<double> weights;
  double offset = 0.0;
};

/// Pre-drift functional of every cluster.
std::vector<ClusterFunctional> cluster_functionals(const GenConfig& cfg);

/// Functional of `cluster` in effect at `hour`, including any drift.
ClusterFunctional functional_at(const GenConfig& cfg, int cluster, std::int64_t hour);

/// Regime indicator in [0, 1]: 0 before drift, 1 once fully drifted.
double regime_at(const GenConfig& cfg, std::int64_t hour);

int cluster_of(const GenConfig& cfg, int entity);
int feature_profile_of(int cluster);
std::string entity_name(int entity);

/// First hour of the drifted regime, or -1 without drift.
long drift_hour(const GenConfig& cfg);

Dataset generate_dataset(const GenConfig& cfg);
void generate(const GenConfig& cfg, const std::filesystem::path& out_dir);

}  // namespace mhf
