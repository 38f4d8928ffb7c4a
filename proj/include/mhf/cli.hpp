#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "mhf/model.hpp"
#include "mhf/sampling.hpp"
#include "mhf/synthgen.hpp"
#include "mhf/trainer.hpp"

namespace mhf {

struct BenchmarkSection {
  std::vector<Variant> variants{Variant::base, Variant::base_inter, Variant::proposed};
  std::vector<SchemeSpec> schemes;
  int days = 60;
  std::optional<std::int64_t> eval_from_day;
};

/// Everything a run needs, from one JSON file with sections `generator`,
/// `model`, `train`, `horizon` and `benchmark`. Unknown keys are rejected.
struct RunConfig {
  GenConfig generator;
  ModelConfig model;
  TrainConfig train;
  HorizonConfig horizon;
  BenchmarkSection benchmark;

  void validate() const;
};

RunConfig run_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const RunConfig& c);
RunConfig load_run_config(const std::filesystem::path& path);

/// Exit codes: 0 success, 1 usage error, 2 data or configuration error.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace mhf
