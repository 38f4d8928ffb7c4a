#include "mhf/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "mhf/errors.hpp"
#include "mhf/rng.hpp"

namespace mhf {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr int kInteractionWindowDays = 30;

double normal(Rng& rng) {
  // Box-Muller on our own uniforms keeps output identical across standard libraries.
  double u1 = uniform01(rng);
  while (u1 <= 0.0) u1 = uniform01(rng);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(kTwoPi * u2);
}

double uniform(Rng& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

// Knuth for small means, normal approximation above; deterministic given the stream.
double poisson(Rng& rng, double lambda) {
  if (lambda <= 0.0) return 0.0;
  if (lambda > 60.0) return std::max(0.0, std::round(lambda + std::sqrt(lambda) * normal(rng)));
  const double limit = std::exp(-lambda);
  double p = 1.0;
  int n = -1;
  do {
    ++n;
    p *= uniform01(rng);
  } while (p > limit);
  return n;
}

struct ChannelProfile {
  double level, daily_amp, daily_phase, harm_amp, harm_phase, weekly_amp, weekly_phase;
  double noise_sd() const {
    return std::sqrt(0.5 * (daily_amp * daily_amp + harm_amp * harm_amp + weekly_amp * weekly_amp));
  }
};

std::vector<ChannelProfile> feature_profile(const GenConfig& cfg, int profile) {
  Rng rng(derive_seed(cfg.seed, {1, static_cast<std::uint64_t>(profile)}));
  std::vector<ChannelProfile> out(static_cast<std::size_t>(cfg.d));
  for (auto& ch : out) {
    ch.level = uniform(rng, -1.0, 1.0);
    ch.daily_amp = uniform(rng, 0.5, 1.5);
    ch.daily_phase = uniform(rng, 0.0, kTwoPi);
    ch.harm_amp = uniform(rng, 0.0, 0.4);
    ch.harm_phase = uniform(rng, 0.0, kTwoPi);
    ch.weekly_amp = uniform(rng, 0.2, 0.8);
    ch.weekly_phase = uniform(rng, 0.0, kTwoPi);
  }
  return out;
}

// Noise-free channel value centered on its level.
// The regime shift moves the 12-hour harmonic against the daily wave. Shifting
// the daily wave instead would equal a plain 12-hour time shift, which
// z-normalized matching cannot see.
double channel_signal(const ChannelProfile& ch, double t, double regime_shift) {
  return ch.daily_amp * std::sin(kTwoPi * t / 24.0 + ch.daily_phase) +
         ch.harm_amp * std::sin(2.0 * kTwoPi * t / 24.0 + ch.harm_phase + regime_shift) +
         ch.weekly_amp * std::sin(kTwoPi * t / 168.0 + ch.weekly_phase);
}

ClusterFunctional blend(const ClusterFunctional& a, const ClusterFunctional& b, double alpha) {
  ClusterFunctional out = a;
  for (std::size_t j = 0; j < out.weights.size(); ++j) out.weights[j] = (1 - alpha) * a.weights[j] + alpha * b.weights[j];
  out.offset = (1 - alpha) * a.offset + alpha * b.offset;
  return out;
}

ClusterFunctional drifted(const std::vector<ClusterFunctional>& fs, int cluster) {
  const int n = static_cast<int>(fs.size());
  if (n == 1) {
    ClusterFunctional f = fs[0];
    for (auto& w : f.weights) w = -w;
    return f;
  }
  return fs[static_cast<std::size_t>((cluster + 1) % n)];
}

}  // namespace

std::string to_string(DriftKind k) {
  switch (k) {
    case DriftKind::none: return "none";
    case DriftKind::abrupt: return "abrupt";
    case DriftKind::incremental: return "incremental";
  }
  return "none";
}

DriftKind parse_drift_kind(const std::string& s) {
  if (s == "none") return DriftKind::none;
  if (s == "abrupt") return DriftKind::abrupt;
  if (s == "incremental") return DriftKind::incremental;
  throw ConfigError("unknown drift kind '" + s + "' (expected none, abrupt, incremental)");
}

void GenConfig::validate() const {
  if (n_entities < 1) throw ConfigError("n_entities must be >= 1");
  if (n_clusters < 1 || n_clusters > n_entities) throw ConfigError("need 1 <= n_clusters <= n_entities");
  if (d < 1) throw ConfigError("d must be >= 1");
  if (regime_channels < 0 || regime_channels >= d) throw ConfigError("need 0 <= regime_channels < d");
  if (k < 0) throw ConfigError("k must be >= 0");
  if (k > 0 && k < n_entities) throw ConfigError("k must cover every entity");
  if (days < 1) throw ConfigError("days must be >= 1");
  if (drift_kind != DriftKind::none && !(drift_day > 0 && drift_day < days)) {
    throw ConfigError("drift_day must satisfy 0 < drift_day < days");
  }
  if (!(scale_spread >= 1.0)) throw ConfigError("scale_spread must be >= 1");
  if (!(noise_level >= 0.0)) throw ConfigError("noise_level must be >= 0");
  if (!(outlier_rate >= 0.0 && outlier_rate <= 1.0)) throw ConfigError("outlier_rate must lie in [0, 1]");
}

nlohmann::json to_json(const GenConfig& c) {
  return {{"n_entities", c.n_entities}, {"n_clusters", c.n_clusters},       {"d", c.d},
          {"k", c.interaction_dim()},   {"days", c.days},                   {"drift_kind", to_string(c.drift_kind)},
          {"drift_day", c.drift_day},   {"scale_spread", c.scale_spread},   {"noise_level", c.noise_level},
          {"regime_channels", c.regime_channels}, {"outlier_rate", c.outlier_rate}, {"seed", c.seed},
          {"start_date", c.start_date}};
}

GenConfig gen_config_from_json(const nlohmann::json& j) {
  GenConfig c;
  for (const auto& [key, v] : j.items()) {
    if (key == "n_entities") c.n_entities = v.get<int>();
    else if (key == "n_clusters") c.n_clusters = v.get<int>();
    else if (key == "d") c.d = v.get<int>();
    else if (key == "k") c.k = v.get<int>();
    else if (key == "days") c.days = v.get<int>();
    else if (key == "drift_kind") c.drift_kind = parse_drift_kind(v.get<std::string>());
    else if (key == "drift_day") c.drift_day = v.get<int>();
    else if (key == "scale_spread") c.scale_spread = v.get<double>();
    else if (key == "noise_level") c.noise_level = v.get<double>();
    else if (key == "regime_channels") c.regime_channels = v.get<int>();
    else if (key == "outlier_rate") c.outlier_rate = v.get<double>();
    else if (key == "seed") c.seed = v.get<std::uint64_t>();
    else if (key == "start_date") c.start_date = v.get<std::string>();
    else throw ConfigError("unknown generator key '" + key + "'");
  }
  return c;
}

int cluster_of(const GenConfig& cfg, int entity) { return entity % cfg.n_clusters; }

// Clusters come in pairs sharing one feature profile; only their read-outs differ.
int feature_profile_of(int cluster) { return cluster / 2; }

std::string entity_name(int entity) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "E%03d", entity);
  return buf;
}

long drift_hour(const GenConfig& cfg) {
  return cfg.drift_kind == DriftKind::none ? -1L : static_cast<long>(cfg.drift_day) * 24L;
}

double regime_at(const GenConfig& cfg, std::int64_t hour) {
  switch (cfg.drift_kind) {
    case DriftKind::none: return 0.0;
    case DriftKind::abrupt: return hour >= drift_hour(cfg) ? 1.0 : 0.0;
    case DriftKind::incremental: {
      const double start = static_cast<double>(drift_hour(cfg));
      const double end = static_cast<double>(cfg.days) * 24.0;
      return std::clamp((static_cast<double>(hour) - start) / (end - start), 0.0, 1.0);
    }
  }
  return 0.0;
}

std::vector<ClusterFunctional> cluster_functionals(const GenConfig& cfg) {
  const int active = cfg.d - cfg.regime_channels;
  std::vector<ClusterFunctional> out(static_cast<std::size_t>(cfg.n_clusters));
  for (int c = 0; c < cfg.n_clusters; ++c) {
    auto& f = out[static_cast<std::size_t>(c)];
    f.weights.assign(static_cast<std::size_t>(cfg.d), 0.0);
    Rng rng(derive_seed(cfg.seed, {2, static_cast<std::uint64_t>(c)}));
    f.offset = 3.0 + uniform(rng, -1.0, 1.0);
    if (c % 2 == 1) {
      // Partner of a feature-sharing pair: mirrored read-out of the same channels.
      const auto& partner = out[static_cast<std::size_t>(c - 1)];
      const double gain = uniform(rng, 0.7, 1.0);
      for (int j = 0; j < active; ++j) f.weights[static_cast<std::size_t>(j)] = -gain * partner.weights[static_cast<std::size_t>(j)];
      continue;
    }
    double norm = 0.0;
    for (int j = 0; j < active; ++j) {
      const double w = normal(rng);
      f.weights[static_cast<std::size_t>(j)] = w;
      norm += w * w;
    }
    norm = std::sqrt(norm);
    for (auto& w : f.weights) w /= norm;
  }
  return out;
}

ClusterFunctional functional_at(const GenConfig& cfg, int cluster, std::int64_t hour) {
  const auto fs = cluster_functionals(cfg);
  const double r = regime_at(cfg, hour);
  const auto& pre = fs[static_cast<std::size_t>(cluster)];
  if (r <= 0.0) return pre;
  return blend(pre, drifted(fs, cluster), r);
}

Dataset generate_dataset(const GenConfig& cfg) {
  cfg.validate();
  const int hours = cfg.days * 24;
  const int k = cfg.interaction_dim();
  const int n_profiles = (cfg.n_clusters + 1) / 2;
  std::vector<std::vector<ChannelProfile>> profiles;
  for (int p = 0; p < n_profiles; ++p) profiles.push_back(feature_profile(cfg, p));
  const auto functionals = cluster_functionals(cfg);
  std::vector<ClusterFunctional> post;
  for (int c = 0; c < cfg.n_clusters; ++c) post.push_back(drifted(functionals, c));

  std::vector<double> regime(static_cast<std::size_t>(hours));
  for (int t = 0; t < hours; ++t) regime[static_cast<std::size_t>(t)] = regime_at(cfg, t);

  // Per-entity population and scale come from their own streams; cluster sizes are needed by every entity.
  std::vector<double> population(static_cast<std::size_t>(cfg.n_entities));
  std::vector<double> scale(static_cast<std::size_t>(cfg.n_entities));
  for (int e = 0; e < cfg.n_entities; ++e) {
    Rng rng(derive_seed(cfg.seed, {3, static_cast<std::uint64_t>(e)}));
    population[static_cast<std::size_t>(e)] = std::exp(uniform(rng, 0.0, std::log(10.0)));
    scale[static_cast<std::size_t>(e)] = std::exp(uniform(rng, 0.0, std::log(cfg.scale_spread)));
  }
  const double cross = 0.2 / std::max(1, cfg.n_clusters - 1);

  Dataset ds;
  ds.entities.resize(static_cast<std::size_t>(cfg.n_entities));
  ds.d = static_cast<std::size_t>(cfg.d);
  ds.k = static_cast<std::size_t>(k);
  ds.hours = static_cast<std::size_t>(hours);

#pragma omp parallel for schedule(static)
  for (int e = 0; e < cfg.n_entities; ++e) {
    Rng rng(derive_seed(cfg.seed, {4, static_cast<std::uint64_t>(e)}));
    const int c = cluster_of(cfg, e);
    const auto& prof = profiles[static_cast<std::size_t>(feature_profile_of(c))];
    const auto& f_pre = functionals[static_cast<std::size_t>(c)];
    const auto& f_post = post[static_cast<std::size_t>(c)];
    const double s = scale[static_cast<std::size_t>(e)];

    EntityRecord& rec = ds.entities[static_cast<std::size_t>(e)];
    rec.entity_id = entity_name(e);
    rec.features = Matrix(static_cast<std::size_t>(hours), static_cast<std::size_t>(cfg.d));
    rec.metric.assign(static_cast<std::size_t>(hours), 0.0);

    std::vector<double> centered(static_cast<std::size_t>(cfg.d));
    for (int t = 0; t < hours; ++t) {
      const double r = regime[static_cast<std::size_t>(t)];
      for (int j = 0; j < cfg.d; ++j) {
        const auto& ch = prof[static_cast<std::size_t>(j)];
        const bool regime_channel = j >= cfg.d - cfg.regime_channels;
        const double sig = channel_signal(ch, t, regime_channel ? std::numbers::pi * r : 0.0);
        centered[static_cast<std::size_t>(j)] = sig;
        rec.features(static_cast<std::size_t>(t), static_cast<std::size_t>(j)) =
            ch.level + sig + cfg.noise_level * ch.noise_sd() * normal(rng);
      }
      double u_pre = f_pre.offset;
      double u_post = f_post.offset;
      for (int j = 0; j < cfg.d; ++j) {
        u_pre += f_pre.weights[static_cast<std::size_t>(j)] * centered[static_cast<std::size_t>(j)];
        u_post += f_post.weights[static_cast<std::size_t>(j)] * centered[static_cast<std::size_t>(j)];
      }
      const double u = (1.0 - r) * u_pre + r * u_post;
      rec.metric[static_cast<std::size_t>(t)] = s * (u + 0.5 * cfg.noise_level * normal(rng));
    }
    if (cfg.outlier_rate > 0.0) {
      for (int day = 0; day < cfg.days; ++day) {
        if (uniform01(rng) >= cfg.outlier_rate) continue;
        for (int h = 0; h < 24; ++h) rec.metric[static_cast<std::size_t>(day * 24 + h)] += 3.0 * s * normal(rng);
      }
    }

    // Fixed pairwise affinities; daily Poisson counts; snapshot for day D sums days [D-30, D-1].
    std::vector<double> rate(static_cast<std::size_t>(k), 0.0);
    for (int o = 0; o < k; ++o) {
      const double affinity = std::exp(uniform(rng, std::log(0.5), std::log(2.0)));
      if (o == e || o >= cfg.n_entities) continue;
      const double relation = cluster_of(cfg, o) == c ? 1.0 : cross;
      rate[static_cast<std::size_t>(o)] = 5.0 * population[static_cast<std::size_t>(e)] * relation * affinity;
    }
    const int total_days = cfg.days + kInteractionWindowDays;
    std::vector<std::vector<double>> daily(static_cast<std::size_t>(total_days), std::vector<double>(static_cast<std::size_t>(k)));
    for (auto& row : daily) {
      for (int o = 0; o < k; ++o) row[static_cast<std::size_t>(o)] = poisson(rng, rate[static_cast<std::size_t>(o)]);
    }
    rec.interactions.assign(static_cast<std::size_t>(cfg.days), std::vector<double>(static_cast<std::size_t>(k), 0.0));
    std::vector<double> window(static_cast<std::size_t>(k), 0.0);
    for (int q = 0; q < kInteractionWindowDays; ++q) {
      for (int o = 0; o < k; ++o) window[static_cast<std::size_t>(o)] += daily[static_cast<std::size_t>(q)][static_cast<std::size_t>(o)];
    }
    for (int day = 0; day < cfg.days; ++day) {
      rec.interactions[static_cast<std::size_t>(day)] = window;
      const auto& add = daily[static_cast<std::size_t>(day + kInteractionWindowDays)];
      const auto& drop = daily[static_cast<std::size_t>(day)];
      for (int o = 0; o < k; ++o) window[static_cast<std::size_t>(o)] += add[static_cast<std::size_t>(o)] - drop[static_cast<std::size_t>(o)];
    }
  }

  nlohmann::json entities = nlohmann::json::array();
  for (int e = 0; e < cfg.n_entities; ++e) {
    entities.push_back({{"id", entity_name(e)},
                        {"cluster", cluster_of(cfg, e)},
                        {"feature_profile", feature_profile_of(cluster_of(cfg, e))},
                        {"scale", scale[static_cast<std::size_t>(e)]}});
  }
  ds.meta = {{"format_version", 1},
             {"d", cfg.d},
             {"k", k},
             {"tau_e", hours},
             {"start_date", cfg.start_date},
             {"start_hour_of_day", 0},
             {"drift", {{"kind", to_string(cfg.drift_kind)}, {"day", cfg.drift_kind == DriftKind::none ? -1 : cfg.drift_day}, {"hour", drift_hour(cfg)}}},
             {"config", to_json(cfg)},
             {"entities", entities}};
  return ds;
}

void generate(const GenConfig& cfg, const std::filesystem::path& out_dir) {
  write_dataset(out_dir, generate_dataset(cfg));
}

}  // namespace mhf
