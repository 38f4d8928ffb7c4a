#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mhf/matrix.hpp"

namespace mhf {

/// Look-back and estimation horizons, all in hours except the label delay.
struct HorizonConfig {
  int t_p = 168;  ///< input look-back
  int t_a = 24;   ///< backward estimation span
  int t_b = 24;   ///< forward estimation span
  int label_delay_days = 90;

  int horizon() const { return t_a + t_b; }
  void validate() const;
};

/// One entity: hourly features, hourly metric and one interaction snapshot per day.
///
/// Hour index 0 falls on hour-of-day `start_hour_of_day` of day 0 (UTC).
struct EntityRecord {
  std::string entity_id;
  Matrix features;                               // hours x d
  std::vector<double> metric;                    // hours
  std::vector<std::vector<double>> interactions;  // days x k
  int start_hour_of_day = 0;

  std::size_t hours() const { return metric.size(); }
  std::size_t dims() const { return features.cols(); }

  /// Calendar day (0-based) containing hour `hour`.
  std::int64_t day_of(std::int64_t hour) const { return (hour + start_hour_of_day) / 24; }

  /// Throws DataError when an invariant does not hold.
  void validate() const;
};

struct Candidate {
  std::size_t entity = 0;   ///< index into the dataset's entity list
  std::int64_t anchor = 0;  ///< hour index i

  auto operator<=>(const Candidate&) const = default;
};

struct TrainingExample {
  Matrix input_ts;                   // t_p x d
  std::vector<double> interaction;   // k
  std::vector<double> target;        // t_a + t_b
};

/// Model input only; used when the target window is not yet observable.
struct ModelInput {
  Matrix input_ts;
  std::vector<double> interaction;
};

/// Builds the example anchored at `anchor`: input rows [anchor - t_p, anchor),
/// target [anchor - t_a, anchor + t_b). `labeled_end` (exclusive) bounds the
/// usable metric; negative means the full record.
TrainingExample make_window(const EntityRecord& record, std::int64_t anchor, const HorizonConfig& cfg,
                            std::int64_t labeled_end = -1);

/// Features and interaction snapshot for `anchor` without touching the metric.
ModelInput make_input(const EntityRecord& record, std::int64_t anchor, const HorizonConfig& cfg);

/// All anchors with max(t_p, t_a) <= i <= labeled_end - t_b, ascending.
std::vector<std::int64_t> enumerate_anchors(const EntityRecord& record, std::int64_t labeled_end,
                                            const HorizonConfig& cfg);

std::vector<Candidate> enumerate_candidates(const EntityRecord& record, std::size_t entity_index,
                                            std::int64_t labeled_end, const HorizonConfig& cfg);

struct ZNormalized {
  std::vector<double> values;
  bool degenerate = false;
};

/// Population z-normalization. Constant input yields zeros with `degenerate` set.
ZNormalized znormalize(std::span<const double> x);

/// Exclusive end hour of the labels observable at the midnight that starts `day`:
/// labels dated up to `day - delay` inclusive.
std::int64_t labeled_end_hour(std::int64_t day, int label_delay_days);

}  // namespace mhf
