#include "mhf/cli.hpp"

#include <fftw3.h>
#include <spdlog/spdlog.h>

#include <CLI11.hpp>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "mhf/dataset.hpp"
#include "mhf/errors.hpp"
#include "mhf/eval.hpp"
#include "mhf/profile.hpp"

namespace mhf {

namespace {

constexpr const char* kVersion = "1.0.0";

const char* const kDefaultSchemes[] = {"uniform:uniform", "segment:uniform", "segment:similar", "segment:low_error",
                                       "fixed90:uniform", "decay:uniform",   "uniform:similar", "uniform:low_error"};

HorizonConfig horizon_from_json(const nlohmann::json& j) {
  HorizonConfig h;
  for (const auto& [key, v] : j.items()) {
    if (key == "t_p") h.t_p = v.get<int>();
    else if (key == "t_a") h.t_a = v.get<int>();
    else if (key == "t_b") h.t_b = v.get<int>();
    else throw ConfigError("unknown horizon key '" + key + "'");
  }
  return h;
}

BenchmarkSection benchmark_from_json(const nlohmann::json& j) {
  BenchmarkSection b;
  for (const auto& [key, v] : j.items()) {
    if (key == "variants") {
      b.variants.clear();
      for (const auto& s : v) b.variants.push_back(parse_variant(s.get<std::string>()));
    } else if (key == "schemes") {
      for (const auto& s : v) b.schemes.push_back(parse_scheme(s.get<std::string>()));
    } else if (key == "days") {
      b.days = v.get<int>();
    } else if (key == "eval_from_day") {
      b.eval_from_day = v.get<std::int64_t>();
    } else {
      throw ConfigError("unknown benchmark key '" + key + "'");
    }
  }
  return b;
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

void write_json(const std::filesystem::path& p, const nlohmann::json& j) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw DataError("cannot write " + p.string());
  out << j.dump(2) << '\n';
}

/// `config` is the effective configuration of the command; identical manifests
/// imply identical outputs.
void write_manifest(const std::filesystem::path& dir, const std::string& command, const nlohmann::json& config,
                    std::uint64_t seed) {
  std::filesystem::create_directories(dir);
  nlohmann::json m{{"command", command},
                   {"config", config},
                   {"config_hash", hex(fnv1a(config.dump()))},
                   {"seed", seed},
                   {"versions",
                    {{"mhf", kVersion},
                     {"checkpoint_format", checkpoint_version},
                     {"compiler", __VERSION__},
                     {"fftw", std::string(fftw_version)},
                     {"spdlog", std::to_string(SPDLOG_VER_MAJOR) + "." + std::to_string(SPDLOG_VER_MINOR) + "." +
                                    std::to_string(SPDLOG_VER_PATCH)},
                     {"cli11", CLI11_VERSION},
                     {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                           std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                           std::to_string(NLOHMANN_JSON_VERSION_PATCH)}}}};
  write_json(dir / "run_manifest.json", m);
}

nlohmann::json metrics_json(const MetricReport& r) {
  return {{"rmse", r.rmse},
          {"nrmse", std::isnan(r.nrmse) ? nlohmann::json(nullptr) : nlohmann::json(r.nrmse)},
          {"r2", r.r2},
          {"n_windows", r.n_windows},
          {"degenerate_windows_skipped", r.degenerate_windows_skipped}};
}

std::string scheme_check(const std::string& s) {
  try {
    parse_scheme(s);
    return {};
  } catch (const ConfigError& e) {
    return e.what();
  }
}

}  // namespace

void RunConfig::validate() const {
  generator.validate();
  auto m = model;
  m.d = std::max(m.d, 1);
  m.k = std::max(m.k, 1);
  m.validate();
  train.validate();
  horizon.validate();
  if (benchmark.days < 0) throw ConfigError("benchmark.days must be >= 0");
}

RunConfig run_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("configuration must be a JSON object");
  RunConfig c;
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "generator") c.generator = gen_config_from_json(v);
      else if (key == "model") c.model = model_config_from_json(v);
      else if (key == "train") c.train = train_config_from_json(v);
      else if (key == "horizon") c.horizon = horizon_from_json(v);
      else if (key == "benchmark") c.benchmark = benchmark_from_json(v);
      else throw ConfigError("unknown configuration section '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad configuration value: ") + e.what());
  }
  if (c.benchmark.schemes.empty())
    for (const char* s : kDefaultSchemes) c.benchmark.schemes.push_back(parse_scheme(s));
  c.horizon.label_delay_days = c.train.label_delay_days;
  c.validate();
  return c;
}

nlohmann::json to_json(const RunConfig& c) {
  nlohmann::json schemes = nlohmann::json::array(), variants = nlohmann::json::array();
  for (const auto& s : c.benchmark.schemes) schemes.push_back(s.name());
  for (auto v : c.benchmark.variants) variants.push_back(to_string(v));
  nlohmann::json bench{{"variants", variants}, {"schemes", schemes}, {"days", c.benchmark.days}};
  if (c.benchmark.eval_from_day) bench["eval_from_day"] = *c.benchmark.eval_from_day;
  return {{"generator", to_json(c.generator)},
          {"model", to_json(c.model)},
          {"train", to_json(c.train)},
          {"horizon", {{"t_p", c.horizon.t_p}, {"t_a", c.horizon.t_a}, {"t_b", c.horizon.t_b}}},
          {"benchmark", bench}};
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return run_config_from_json(j);
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multi-horizon entity metric forecasting with drift-aware online training"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  std::string config_path, data, out_path, ckpt, scheme = "uniform:uniform", entity, pred;
  std::optional<std::uint64_t> seed;
  int days = 0;
  int window = 168;
  std::optional<std::int64_t> end_hour, from_day, to_day;

  auto add_seed = [&](CLI::App* c) { c->add_option("--seed", seed, "Seed overriding the configuration"); };

  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset directory");
  gen->add_option("--config", config_path, "Run configuration (JSON)");
  gen->add_option("--out", out_path, "Output dataset directory")->required();
  add_seed(gen);

  auto* desc = app.add_subcommand("describe", "Summarize a dataset directory");
  desc->add_option("--data", data, "Dataset directory")->required();

  auto* train = app.add_subcommand("train-offline", "Offline training; writes model.ckpt");
  train->add_option("--data", data, "Dataset directory")->required();
  train->add_option("--config", config_path, "Run configuration (JSON)");
  train->add_option("--out", out_path, "Output directory")->required();
  add_seed(train);

  auto* online = app.add_subcommand("run-online", "Daily online simulation from a checkpoint");
  online->add_option("--data", data, "Dataset directory")->required();
  online->add_option("--ckpt", ckpt, "Checkpoint from train-offline or run-online")->required();
  online->add_option("--scheme", scheme, "Sampling scheme T[:N] or frozen")->check(scheme_check);
  online->add_option("--days", days, "Number of simulated days")->required()->check(CLI::NonNegativeNumber);
  online->add_option("--out", out_path, "Output directory")->required();
  add_seed(online);

  auto* bench = app.add_subcommand("benchmark", "Variant x scheme grid with average ranks");
  bench->add_option("--data", data, "Dataset directory")->required();
  bench->add_option("--config", config_path, "Run configuration (JSON)");
  bench->add_option("--out", out_path, "Output directory")->required();
  add_seed(bench);

  auto* seg = app.add_subcommand("segment", "Per-position corrected arc counts and sampling curve of one entity");
  seg->add_option("--data", data, "Dataset directory")->required();
  seg->add_option("--entity", entity, "Entity id")->required();
  seg->add_option("--out", out_path, "Output CSV")->required();
  seg->add_option("--window", window, "Subsequence length")->check(CLI::PositiveNumber);
  seg->add_option("--end-hour", end_hour, "Use only hours before this one");

  auto* eval = app.add_subcommand("evaluate", "Metrics of a prediction log against the dataset");
  eval->add_option("--pred", pred, "Prediction log CSV")->required();
  eval->add_option("--data", data, "Dataset directory")->required();
  eval->add_option("--from-day", from_day, "First scored day");
  eval->add_option("--to-day", to_day, "Last scored day");
  eval->add_option("--out", out_path, "Directory for metrics.json");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? 0 : 1;
  }

  auto load_config = [&] {
    RunConfig c = config_path.empty() ? run_config_from_json(nlohmann::json::object()) : load_run_config(config_path);
    if (seed) {
      c.generator.seed = *seed;
      c.train.seed = *seed;
    }
    return c;
  };

  try {
    if (*gen) {
      const auto c = load_config();
      generate(c.generator, out_path);
      write_manifest(out_path, "gen-data", {{"generator", to_json(c.generator)}}, c.generator.seed);
      out << "wrote " << c.generator.n_entities << " entities x " << c.generator.days << " days to " << out_path
          << '\n';
    } else if (*desc) {
      print_summary(out, describe(std::filesystem::path(data)));
    } else if (*train) {
      const auto c = load_config();
      const auto ds = load_dataset(data);
      const auto s = train_offline(ds, c.model, c.train, c.horizon);
      std::filesystem::create_directories(out_path);
      save_checkpoint(s, std::filesystem::path(out_path) / "model.ckpt");
      write_json(std::filesystem::path(out_path) / "offline_summary.json",
                 {{"initial_loss", s.initial_loss},
                  {"epoch_losses", s.epoch_losses},
                  {"gamma", s.model.config().gamma},
                  {"day", s.current_day}});
      auto cfg = to_json(c);
      cfg["data"] = data;
      write_manifest(out_path, "train-offline", cfg, c.train.seed);
      out << "offline loss " << s.initial_loss << " -> "
          << (s.epoch_losses.empty() ? s.initial_loss : s.epoch_losses.back()) << "; checkpoint "
          << (std::filesystem::path(out_path) / "model.ckpt").string() << '\n';
    } else if (*online) {
      const auto ds = load_dataset(data);
      auto s = load_checkpoint(ckpt);
      auto tc = s.train;
      tc.scheme = parse_scheme(scheme);
      if (seed) s.rng.seed(derive_seed(*seed, {3}));
      run_online(s, ds, tc, days);
      s.train.scheme = tc.scheme;
      const std::filesystem::path dir(out_path);
      std::filesystem::create_directories(dir);
      write_prediction_log(dir / "predictions.csv", s.log, ds, s.current_day, tc.label_delay_days);
      save_checkpoint(s, dir / "state.ckpt");
      std::ifstream ck(ckpt, std::ios::binary);
      const std::string ck_bytes((std::istreambuf_iterator<char>(ck)), std::istreambuf_iterator<char>());
      write_manifest(dir, "run-online",
                     {{"data", data},
                      {"checkpoint", ckpt},
                      {"checkpoint_hash", hex(fnv1a(ck_bytes))},
                      {"scheme", tc.scheme.name()},
                      {"days", days},
                      {"seed_override", seed ? nlohmann::json(*seed) : nlohmann::json(nullptr)}},
                     seed.value_or(tc.seed));
      out << "simulated days " << s.current_day - days + 1 << ".." << s.current_day << " with " << tc.scheme.name()
          << "; " << s.log.size() << " prediction rows\n";
    } else if (*bench) {
      const auto c = load_config();
      const auto ds = load_dataset(data);
      std::vector<ModelConfig> variants;
      for (auto v : c.benchmark.variants) {
        auto m = c.model;
        m.variant = v;
        variants.push_back(m);
      }
      BenchmarkOptions opt;
      opt.n_days = c.benchmark.days;
      if (c.benchmark.eval_from_day) opt.eval_from_day = *c.benchmark.eval_from_day;
      const auto res = benchmark(ds, variants, c.benchmark.schemes, c.train, c.horizon, opt);
      write_benchmark(out_path, res);
      auto cfg = to_json(c);
      cfg["data"] = data;
      write_manifest(out_path, "benchmark", cfg, c.train.seed);
      for (const auto& [name, r] : res.average_rank.at("rmse"))
        out << name << ": rmse rank " << r << ", nrmse rank " << res.average_rank.at("nrmse").at(name) << '\n';
    } else if (*seg) {
      const auto ds = load_dataset(data);
      const auto& rec = ds.entities[ds.index_of(entity)];
      const auto rows = static_cast<std::size_t>(
          std::clamp<std::int64_t>(end_hour.value_or(static_cast<std::int64_t>(rec.hours())), 0,
                                   static_cast<std::int64_t>(rec.hours())));
      Matrix x(rows, rec.dims());
      for (std::size_t t = 0; t < rows; ++t)
        for (std::size_t j = 0; j < rec.dims(); ++j) x(t, j) = rec.features(t, j);
      const auto curve = fluss_probability(x, static_cast<std::size_t>(window));
      const std::filesystem::path p(out_path);
      if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
      std::ofstream o(p, std::ios::binary);
      if (!o) throw DataError("cannot write " + p.string());
      o << "position,cac,probability\n";
      for (std::size_t i = 0; i < curve.p.size(); ++i)
        o << i << ',' << format_double(curve.cac_sum[i]) << ',' << format_double(curve.p[i]) << '\n';
      write_manifest(p.has_parent_path() ? p.parent_path() : std::filesystem::path("."), "segment",
                     {{"data", data}, {"entity", entity}, {"window", window}, {"rows", rows}}, 0);
      const auto argmin = std::min_element(curve.cac_sum.begin(), curve.cac_sum.end()) - curve.cac_sum.begin();
      out << "CAC minimum at position " << argmin << "; skipped " << curve.skipped_dims << " constant dimensions\n";
    } else if (*eval) {
      const auto ds = load_dataset(data);
      const auto log = read_prediction_log(pred, ds);
      const auto r = evaluate_log(log, ds, from_day.value_or(std::numeric_limits<std::int64_t>::min()),
                                  to_day.value_or(std::numeric_limits<std::int64_t>::max()));
      const auto j = metrics_json(r);
      out << j.dump(2) << '\n';
      if (!out_path.empty()) {
        std::filesystem::create_directories(out_path);
        write_json(std::filesystem::path(out_path) / "metrics.json", j);
        write_manifest(out_path, "evaluate",
                       {{"pred", pred},
                        {"data", data},
                        {"from_day", from_day ? nlohmann::json(*from_day) : nlohmann::json(nullptr)},
                        {"to_day", to_day ? nlohmann::json(*to_day) : nlohmann::json(nullptr)}},
                       0);
      }
    }
  } catch (const DataError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::out_of_range& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const nlohmann::json::exception& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}

}  // namespace mhf
