#include "mhf/core_data.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "mhf/errors.hpp"

namespace mhf {

void HorizonConfig::validate() const {
  if (t_p <= 0) throw ConfigError("t_p must be positive");
  if (t_a < 0) throw ConfigError("t_a must be non-negative");
  if (t_b <= 0) throw ConfigError("t_b must be positive");
  if (label_delay_days < 0) throw ConfigError("label_delay_days must be non-negative");
}

void EntityRecord::validate() const {
  if (features.rows() != metric.size()) {
    throw DataError("entity " + entity_id + ": feature rows (" + std::to_string(features.rows()) +
                    ") differ from metric length (" + std::to_string(metric.size()) + ")");
  }
  if (start_hour_of_day < 0 || start_hour_of_day > 23) {
    throw DataError("entity " + entity_id + ": start hour of day out of range");
  }
  if (metric.empty()) return;
  const auto days_spanned = static_cast<std::size_t>(day_of(static_cast<std::int64_t>(metric.size()) - 1) + 1);
  if (interactions.size() < days_spanned) {
    throw DataError("entity " + entity_id + ": " + std::to_string(interactions.size()) +
                    " interaction snapshots for " + std::to_string(days_spanned) + " days");
  }
  const std::size_t k = interactions.front().size();
  for (const auto& snap : interactions) {
    if (snap.size() != k) throw DataError("entity " + entity_id + ": ragged interaction vectors");
    for (double v : snap) {
      if (!(v >= 0.0)) throw DataError("entity " + entity_id + ": negative interaction entry");
    }
  }
}

namespace {

void check_input_bounds(const EntityRecord& record, std::int64_t anchor, const HorizonConfig& cfg) {
  if (anchor - cfg.t_p < 0) {
    throw RangeError("anchor " + std::to_string(anchor) + " violates anchor - t_p >= 0 (t_p=" +
                     std::to_string(cfg.t_p) + ")");
  }
  if (anchor > static_cast<std::int64_t>(record.hours())) {
    throw RangeError("anchor " + std::to_string(anchor) + " beyond the feature series end " +
                     std::to_string(record.hours()));
  }
  const auto day = record.day_of(anchor);
  if (day >= static_cast<std::int64_t>(record.interactions.size())) {
    throw RangeError("no interaction snapshot for day " + std::to_string(day));
  }
}

Matrix slice_rows(const Matrix& m, std::int64_t begin, std::int64_t end) {
  Matrix out(static_cast<std::size_t>(end - begin), m.cols());
  for (std::int64_t r = begin; r < end; ++r) {
    auto src = m.row(static_cast<std::size_t>(r));
    std::copy(src.begin(), src.end(), out.row(static_cast<std::size_t>(r - begin)).begin());
  }
  return out;
}

}  // namespace

ModelInput make_input(const EntityRecord& record, std::int64_t anchor, const HorizonConfig& cfg) {
  check_input_bounds(record, anchor, cfg);
  ModelInput in;
  in.input_ts = slice_rows(record.features, anchor - cfg.t_p, anchor);
  in.interaction = record.interactions[static_cast<std::size_t>(record.day_of(anchor))];
  return in;
}

TrainingExample make_window(const EntityRecord& record, std::int64_t anchor, const HorizonConfig& cfg,
                            std::int64_t labeled_end) {
  const auto len = static_cast<std::int64_t>(record.hours());
  if (labeled_end < 0 || labeled_end > len) labeled_end = len;
  if (anchor - cfg.t_a < 0) {
    throw RangeError("anchor " + std::to_string(anchor) + " violates anchor - t_a >= 0 (t_a=" +
                     std::to_string(cfg.t_a) + ")");
  }
  if (anchor + cfg.t_b > labeled_end) {
    throw RangeError("anchor " + std::to_string(anchor) + " violates anchor + t_b <= labeled end " +
                     std::to_string(labeled_end));
  }
  ModelInput in = make_input(record, anchor, cfg);
  TrainingExample ex;
  ex.input_ts = std::move(in.input_ts);
  ex.interaction = std::move(in.interaction);
  ex.target.assign(record.metric.begin() + (anchor - cfg.t_a), record.metric.begin() + (anchor + cfg.t_b));
  return ex;
}

std::vector<std::int64_t> enumerate_anchors(const EntityRecord& record, std::int64_t labeled_end,
                                            const HorizonConfig& cfg) {
  labeled_end = std::min<std::int64_t>(labeled_end, static_cast<std::int64_t>(record.hours()));
  const std::int64_t first = std::max(cfg.t_p, cfg.t_a);
  const std::int64_t last = labeled_end - cfg.t_b;
  std::vector<std::int64_t> out;
  if (last < first) return out;
  out.reserve(static_cast<std::size_t>(last - first + 1));
  for (std::int64_t i = first; i <= last; ++i) out.push_back(i);
  return out;
}

std::vector<Candidate> enumerate_candidates(const EntityRecord& record, std::size_t entity_index,
                                            std::int64_t labeled_end, const HorizonConfig& cfg) {
  std::vector<Candidate> out;
  for (auto a : enumerate_anchors(record, labeled_end, cfg)) out.push_back({entity_index, a});
  return out;
}

ZNormalized znormalize(std::span<const double> x) {
  ZNormalized z;
  z.values.assign(x.size(), 0.0);
  if (x.empty()) {
    z.degenerate = true;
    return z;
  }
  double mean = 0.0;
  double max_abs = 0.0;
  for (double v : x) {
    mean += v;
    max_abs = std::max(max_abs, std::abs(v));
  }
  mean /= static_cast<double>(x.size());
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  var /= static_cast<double>(x.size());
  const double sd = std::sqrt(var);
  if (sd <= 1e-12 * max_abs || sd == 0.0) {
    z.degenerate = true;
    return z;
  }
  for (std::size_t i = 0; i < x.size(); ++i) z.values[i] = (x[i] - mean) / sd;
  return z;
}

std::int64_t labeled_end_hour(std::int64_t day, int label_delay_days) {
  return std::max<std::int64_t>(0, (day - label_delay_days + 1) * 24);
}

}  // namespace mhf
