#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "mhf/dataset.hpp"
#include "mhf/model.hpp"
#include "mhf/sampling.hpp"
#include "mhf/trainer.hpp"

namespace mhf {

struct MetricReport {
  double rmse = 0.0;
  double nrmse = 0.0;  ///< NaN when every truth window is constant
  double r2 = 0.0;
  std::size_t n_windows = 0;
  std::size_t degenerate_windows_skipped = 0;
};

/// RMSE and R² pooled over all points; NRMSE is the mean per-window RMSE after
/// z-normalizing both sides, skipping windows whose truth is constant.
/// Throws DataError when the pooled truth has zero variance.
MetricReport compute_metrics(const std::vector<std::vector<double>>& predictions,
                             const std::vector<std::vector<double>>& truths);

struct WindowPairs {
  std::vector<std::vector<double>> predictions;
  std::vector<std::vector<double>> truths;
};

/// Groups log rows into one window per (day, entity) and joins the ground-truth
/// metric. Days outside [day_from, day_to] and windows running past the data are dropped.
WindowPairs pair_windows(const std::vector<PredictionRow>& log, const Dataset& ds,
                         std::int64_t day_from = std::numeric_limits<std::int64_t>::min(),
                         std::int64_t day_to = std::numeric_limits<std::int64_t>::max());

MetricReport evaluate_log(const std::vector<PredictionRow>& log, const Dataset& ds,
                          std::int64_t day_from = std::numeric_limits<std::int64_t>::min(),
                          std::int64_t day_to = std::numeric_limits<std::int64_t>::max());

/// Ranks 1..n (1 = best), ties share the average of their ranks.
std::vector<double> rank_values(const std::vector<double>& values, bool higher_is_better);

struct RankTable {
  std::string metric;
  std::vector<std::string> rows;  ///< non-temporal schemes
  std::vector<std::string> cols;  ///< temporal schemes
  std::vector<std::vector<double>> cells;  ///< NaN where the pair was not run
  std::vector<double> row_means;
  std::vector<double> col_means;

  double at(const std::string& row, const std::string& col) const;
};

struct BenchmarkRun {
  std::string variant;
  SchemeSpec scheme;
  MetricReport metrics;
};

struct BenchmarkResult {
  std::vector<BenchmarkRun> runs;
  std::map<std::string, std::map<std::string, double>> average_rank;  ///< metric -> scheme name -> rank
  std::map<std::string, RankTable> tables;                            ///< keyed by metric
};

struct BenchmarkOptions {
  int n_days = 0;
  std::int64_t eval_from_day = std::numeric_limits<std::int64_t>::min();  ///< first scored day
};

/// Every (variant, scheme) pair runs the same offline model of its variant and
/// the same seed; ranks schemes per variant and averages across variants.
BenchmarkResult benchmark(const Dataset& ds, const std::vector<ModelConfig>& variants,
                          const std::vector<SchemeSpec>& schemes, const TrainConfig& tc, const HorizonConfig& hc,
                          const BenchmarkOptions& opt);

/// Builds average ranks and tables from finished runs.
void rank_runs(BenchmarkResult& result);

/// report.csv plus ranks_<metric>.csv in `dir`.
void write_benchmark(const std::filesystem::path& dir, const BenchmarkResult& result);

}  // namespace mhf
