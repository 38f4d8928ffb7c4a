#pragma once

#include <cstdint>
#include <deque>
#include <map>
#include <string>
#include <vector>

#include "mhf/core_data.hpp"
#include "mhf/dataset.hpp"
#include "mhf/rng.hpp"

namespace mhf {

class Model;

enum class TemporalKind { uniform, fixed_window, decay, segment };
enum class NonTemporalKind {
  uniform,
  similar,
  high_error,
  low_error,
  high_confidence,
  low_confidence,
  high_variability,
  low_variability
};

/// A sampling scheme `temporal:nontemporal`; `frozen` disables online updates.
struct SchemeSpec {
  TemporalKind temporal = TemporalKind::uniform;
  int window_days = 0;  ///< fixed_window only
  NonTemporalKind nontemporal = NonTemporalKind::uniform;
  bool frozen = false;

  std::string temporal_name() const;
  std::string nontemporal_name() const;
  std::string name() const;
  bool needs_errors() const;
  bool needs_dynamics() const;

  bool operator==(const SchemeSpec&) const = default;
};

/// Accepts `frozen`, `T`, or `T:N` with T in uniform | fixed<days> | decay | segment.
/// Throws ConfigError listing the valid forms.
SchemeSpec parse_scheme(const std::string& s);
std::string valid_schemes_text();

struct CandidateWeights {
  std::vector<Candidate> candidates;
  std::vector<double> weights;
};

/// Throws std::logic_error unless the weights are non-negative and sum to 1.
void check_weights(const CandidateWeights& w);

/// Persistent uniform subsample of all labeled candidates (reservoir sampling)
/// with the latest per-window loss of each.
struct ErrorCache {
  std::vector<Candidate> slots;
  std::vector<double> errors;     ///< parallel to slots; negative until evaluated
  std::uint64_t streamed = 0;     ///< candidates offered to the tracked set so far
  std::int64_t streamed_end = 0;  ///< labeled end hour already streamed
  std::int64_t refreshed_day = -1;

  bool evaluated() const { return refreshed_day >= 0 && !slots.empty(); }
  bool operator==(const ErrorCache&) const = default;
};

/// Last K error snapshots of each tracked candidate.
struct DynamicsHistory {
  std::size_t capacity = 10;
  std::map<Candidate, std::deque<double>> snapshots;

  /// Confidence (negated mean error) and variability (population std of errors);
  /// false when fewer than two snapshots exist.
  bool stats(const Candidate& c, double& confidence, double& variability) const;
  bool operator==(const DynamicsHistory&) const = default;
};

/// `now_hour` is the reference for ages; `curves[e]` is entity e's sampling curve
/// over subsequence starts, candidate anchor i maps to position i - t_p.
CandidateWeights temporal_weights(const SchemeSpec& spec, const std::vector<Candidate>& candidates,
                                  std::int64_t now_hour, const std::vector<std::vector<double>>& curves, int t_p);

/// `distances` holds each candidate's mean per-dimension MASS distance to its
/// entity's current query (similar scheme only).
CandidateWeights nontemporal_weights(const SchemeSpec& spec, const std::vector<Candidate>& candidates,
                                     const ErrorCache& cache, const DynamicsHistory& dyn,
                                     const std::vector<double>& distances);

CandidateWeights combine(const CandidateWeights& w1, const CandidateWeights& w2);

/// Independent draws with replacement.
std::vector<Candidate> sample_batch(const CandidateWeights& w, std::size_t batch_size, Rng& rng);

/// Mean over feature dimensions of the z-normalized distance between each
/// candidate's input window and `query_anchor[entity]`'s input window.
std::vector<double> similarity_distances(const Dataset& ds, const std::vector<Candidate>& candidates,
                                         const std::vector<std::int64_t>& query_anchor, const HorizonConfig& cfg);

/// The first call tracks a uniform subsample of the labeled candidates; later
/// calls add every candidate labeled since. Re-evaluates the loss of every
/// tracked candidate under `model` and appends one snapshot each to `dyn`.
void refresh_error_cache(const Model& model, const Dataset& ds, const HorizonConfig& cfg, std::int64_t labeled_end,
                         std::int64_t day, std::size_t subsample_size, double gamma, Rng& rng, ErrorCache& cache,
                         DynamicsHistory& dyn);

}  // namespace mhf
