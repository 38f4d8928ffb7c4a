#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "mhf/matrix.hpp"

namespace mhf {

struct DistanceProfile {
  std::vector<double> distances;  ///< one per subsequence start, n - m + 1
  std::vector<bool> degenerate;   ///< constant subsequence; distance forced to sqrt(2m)
  std::size_t m = 0;
};

/// Mean, standard deviation and constant flag of every length-m window.
struct WindowStats {
  std::vector<double> mean;
  std::vector<double> sd;
  std::vector<bool> degenerate;
};

WindowStats window_stats(std::span<const double> series, std::size_t m);

/// z-normalized Euclidean distance from `query` to every subsequence of `series`,
/// via an FFT sliding dot product. Throws DataError on a constant query.
DistanceProfile mass(std::span<const double> query, std::span<const double> series);

struct MatrixProfileIndex {
  std::vector<std::int64_t> nn_index;
  std::vector<double> distances;
  std::size_t m = 0;
  std::size_t exclusion_radius = 0;
};

std::size_t default_exclusion_radius(std::size_t m);

/// Correlations closer than this count as equal when picking a nearest neighbour.
inline constexpr double mpi_tie_tolerance = 1e-9;

/// Nearest non-trivial neighbour of every subsequence (|i - j| > radius), ties
/// (within mpi_tie_tolerance in correlation) to the smallest j. A pair involving a constant subsequence is at distance sqrt(2m).
/// Row recurrence over fixed chunks, parallel across chunks.
MatrixProfileIndex matrix_profile_index(std::span<const double> series, std::size_t m, std::size_t exclusion_radius);

/// Serial reference: one MASS call per row.
MatrixProfileIndex matrix_profile_index_reference(std::span<const double> series, std::size_t m,
                                                  std::size_t exclusion_radius);

/// Arc crossings over the idealized count, capped at 1; first and last m positions are 1.
std::vector<double> corrected_arc_count(const MatrixProfileIndex& mpi);

/// Reverse running-minimum clamp followed by normalization to sum 1.
std::vector<double> clamp_and_normalize(std::vector<double> curve);

struct SamplingCurve {
  std::vector<double> p;        ///< non-decreasing, sums to 1
  std::vector<double> cac_sum;  ///< summed per-dimension CAC before the clamp
  std::size_t skipped_dims = 0;
};

/// Per-dimension CAC summed over the columns of `series` (time x d), clamped and
/// normalized. Constant columns are skipped; if all are, the curve is uniform.
SamplingCurve fluss_probability(const Matrix& series, std::size_t m);

}  // namespace mhf
