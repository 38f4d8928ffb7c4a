#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <string>
#include <vector>

#include "json.hpp"
#include "mhf/dataset.hpp"
#include "mhf/model.hpp"
#include "mhf/nn.hpp"
#include "mhf/rng.hpp"
#include "mhf/sampling.hpp"

namespace mhf {

struct TrainConfig {
  int offline_epochs = 30;
  double learning_rate = 1e-3;
  int batch_size = 1024;
  int n_iter = 100;       ///< online updates per day
  int label_delay_days = 90;
  std::uint64_t seed = 1;
  SchemeSpec scheme;
  int offline_days = 365;
  long offline_max_steps = 0;  ///< 0: no cap on offline Adam steps
  int error_subsample = 10000;

  void validate() const;
};

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

struct PredictionRow {
  std::int64_t day = 0;
  std::size_t entity = 0;
  int offset = 0;  ///< hour relative to the anchor, in [-t_a, t_b)
  double predicted = 0.0;

  bool operator==(const PredictionRow&) const = default;
};

struct SimulationState {
  std::int64_t current_day = 0;
  Model model;
  std::vector<nn::AdamState> optimizer;  ///< one per parameter tensor
  Rng rng;
  ErrorCache cache;
  DynamicsHistory dynamics;
  std::vector<std::vector<double>> curves;  ///< per entity; empty until a segment refresh
  std::vector<PredictionRow> log;
  HorizonConfig horizon;
  TrainConfig train;
  std::uint64_t examples_consumed = 0;  ///< online examples drawn so far
  double initial_loss = 0.0;            ///< offline monitor loss before training
  std::vector<double> epoch_losses;     ///< offline monitor loss after each epoch

  explicit SimulationState(ModelConfig mc) : model(std::move(mc)) {}
  bool operator==(const SimulationState& o) const;
};

/// Per-dataset memo of the expensive per-day quantities (sampling curves and
/// similarity distances). They depend only on the data and the day, so runs of
/// different schemes or variants over the same dataset may share one.
class DayCache {
 public:
  /// Sampling curve over feature rows [0, end).
  std::vector<double> curve(const Dataset& ds, std::size_t entity, std::int64_t end, int m);
  std::vector<double> similarity(const Dataset& ds, const std::vector<Candidate>& candidates,
                                 std::int64_t day, const HorizonConfig& cfg);

 private:
  std::mutex mu_;
  std::map<std::pair<std::size_t, std::int64_t>, std::vector<double>> curves_;
  std::map<std::int64_t, std::vector<double>> similarity_;
};

/// Hour index of the midnight that starts `day` for `record`.
std::int64_t midnight_hour(const EntityRecord& record, std::int64_t day);

/// Shuffled mini-batch Adam over every feasible candidate labeled by the end of
/// the offline span. The returned state sits at day offline_days - 1.
SimulationState train_offline(const Dataset& ds, ModelConfig mc, const TrainConfig& tc, const HorizonConfig& hc);

/// Advances one day: label extension, cache refresh, n_iter updates (none when
/// frozen), then one prediction per entity anchored at the new midnight.
/// Returns the rows appended to the log.
std::vector<PredictionRow> online_step(SimulationState& state, const Dataset& ds, const TrainConfig& tc,
                                       DayCache* day_cache = nullptr);

/// Runs `n_days` online steps starting from an offline-trained state.
void run_online(SimulationState& state, const Dataset& ds, const TrainConfig& tc, int n_days,
                DayCache* day_cache = nullptr);

/// train_offline followed by `n_days` online steps.
SimulationState run_simulation(const Dataset& ds, const ModelConfig& mc, const TrainConfig& tc,
                               const HorizonConfig& hc, int n_days, DayCache* day_cache = nullptr);

/// Last day whose midnight anchor still has an interaction snapshot.
std::int64_t last_simulated_day(const Dataset& ds);

/// CSV `day,entity_id,offset,predicted,actual_when_available`. Actuals are
/// filled only for hours labeled by the end of `as_of_day`.
void write_prediction_log(const std::filesystem::path& path, const std::vector<PredictionRow>& log,
                          const Dataset& ds, std::int64_t as_of_day, int label_delay_days);
std::vector<PredictionRow> read_prediction_log(const std::filesystem::path& path, const Dataset& ds);

inline constexpr std::uint32_t checkpoint_version = 1;

void save_checkpoint(const SimulationState& state, const std::filesystem::path& path);
/// Throws VersionError on a format mismatch and IntegrityError on a damaged or
/// truncated file; nothing is returned unless the whole file checks out.
SimulationState load_checkpoint(const std::filesystem::path& path);

}  // namespace mhf
