#include "mhf/sampling.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "mhf/errors.hpp"
#include "mhf/model.hpp"
#include "mhf/parallel.hpp"
#include "mhf/profile.hpp"

namespace mhf {

namespace {

constexpr double kEps = 1e-6;

const std::vector<std::pair<std::string, NonTemporalKind>>& nontemporal_table() {
  static const std::vector<std::pair<std::string, NonTemporalKind>> t{
      {"uniform", NonTemporalKind::uniform},
      {"similar", NonTemporalKind::similar},
      {"high_error", NonTemporalKind::high_error},
      {"low_error", NonTemporalKind::low_error},
      {"high_confidence", NonTemporalKind::high_confidence},
      {"low_confidence", NonTemporalKind::low_confidence},
      {"high_variability", NonTemporalKind::high_variability},
      {"low_variability", NonTemporalKind::low_variability}};
  return t;
}

CandidateWeights uniform_weights(const std::vector<Candidate>& c) {
  CandidateWeights w{c, std::vector<double>(c.size(), c.empty() ? 0.0 : 1.0 / static_cast<double>(c.size()))};
  return w;
}

// Normalizes raw non-negative weights; all-zero falls back to uniform.
CandidateWeights normalized(const std::vector<Candidate>& c, std::vector<double> raw, const char* what) {
  double sum = 0.0;
  for (double v : raw) sum += v;
  if (!(sum > 0.0)) {
    spdlog::warn("{}: no candidate has positive weight, falling back to uniform", what);
    return uniform_weights(c);
  }
  for (auto& v : raw) v /= sum;
  CandidateWeights w{c, std::move(raw)};
  check_weights(w);
  return w;
}

// Linear-rank weights over the candidates with `has[i]`: ascending (value, candidate)
// order gets ranks 1..n; `high` favors large values, otherwise the order is reversed.
std::vector<double> rank_weights(const std::vector<Candidate>& c, const std::vector<double>& value,
                                 const std::vector<bool>& has, bool high) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < c.size(); ++i)
    if (has[i]) idx.push_back(i);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    if (value[a] != value[b]) return value[a] < value[b];
    return c[a] < c[b];
  });
  std::vector<double> w(c.size(), 0.0);
  const double n = static_cast<double>(idx.size());
  for (std::size_t r = 0; r < idx.size(); ++r) {
    const double rank = static_cast<double>(r + 1);
    w[idx[r]] = high ? rank : n + 1.0 - rank;
  }
  return w;
}

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

std::string SchemeSpec::temporal_name() const {
  switch (temporal) {
    case TemporalKind::uniform: return "uniform";
    case TemporalKind::fixed_window: return "fixed" + std::to_string(window_days);
    case TemporalKind::decay: return "decay";
    case TemporalKind::segment: return "segment";
  }
  return "uniform";
}

std::string SchemeSpec::nontemporal_name() const {
  for (const auto& [name, kind] : nontemporal_table())
    if (kind == nontemporal) return name;
  return "uniform";
}

std::string SchemeSpec::name() const { return frozen ? "frozen" : temporal_name() + ":" + nontemporal_name(); }

bool SchemeSpec::needs_errors() const {
  return nontemporal == NonTemporalKind::high_error || nontemporal == NonTemporalKind::low_error || needs_dynamics();
}

bool SchemeSpec::needs_dynamics() const {
  return nontemporal == NonTemporalKind::high_confidence || nontemporal == NonTemporalKind::low_confidence ||
         nontemporal == NonTemporalKind::high_variability || nontemporal == NonTemporalKind::low_variability;
}

std::string valid_schemes_text() {
  std::string s = "valid schemes: frozen, or T[:N] with T in {uniform, fixed<days> (e.g. fixed90), decay, segment} "
                  "and N in {";
  for (std::size_t i = 0; i < nontemporal_table().size(); ++i) s += (i ? ", " : "") + nontemporal_table()[i].first;
  return s + "}";
}

SchemeSpec parse_scheme(const std::string& s) {
  SchemeSpec spec;
  if (s == "frozen") {
    spec.frozen = true;
    return spec;
  }
  const auto colon = s.find(':');
  const std::string t = s.substr(0, colon);
  const std::string n = colon == std::string::npos ? "uniform" : s.substr(colon + 1);
  auto fail = [&] { throw ConfigError("invalid scheme '" + s + "'; " + valid_schemes_text()); };
  if (t == "uniform") {
    spec.temporal = TemporalKind::uniform;
  } else if (t == "decay") {
    spec.temporal = TemporalKind::decay;
  } else if (t == "segment") {
    spec.temporal = TemporalKind::segment;
  } else if (t.starts_with("fixed") && t.size() > 5) {
    const std::string digits = t.substr(5);
    if (!std::all_of(digits.begin(), digits.end(), [](char ch) { return ch >= '0' && ch <= '9'; }) || digits.size() > 6) fail();
    spec.temporal = TemporalKind::fixed_window;
    spec.window_days = std::stoi(digits);
    if (spec.window_days <= 0) fail();
  } else {
    fail();
  }
  bool found = false;
  for (const auto& [name, kind] : nontemporal_table()) {
    if (name == n) {
      spec.nontemporal = kind;
      found = true;
    }
  }
  if (!found) fail();
  return spec;
}

void check_weights(const CandidateWeights& w) {
  if (w.candidates.size() != w.weights.size()) throw std::logic_error("candidate weights: length mismatch");
  if (w.weights.empty()) return;
  double sum = 0.0;
  for (double v : w.weights) {
    if (!(v >= 0.0)) throw std::logic_error("candidate weights: negative or non-finite entry");
    sum += v;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw std::logic_error("candidate weights: sum differs from 1");
}

bool DynamicsHistory::stats(const Candidate& c, double& confidence, double& variability) const {
  const auto it = snapshots.find(c);
  if (it == snapshots.end() || it->second.size() < 2) return false;
  const auto& s = it->second;
  const double n = static_cast<double>(s.size());
  const double mean = std::accumulate(s.begin(), s.end(), 0.0) / n;
  double var = 0.0;
  for (double v : s) var += (v - mean) * (v - mean);
  confidence = -mean;
  variability = std::sqrt(var / n);
  return true;
}

CandidateWeights temporal_weights(const SchemeSpec& spec, const std::vector<Candidate>& candidates,
                                  std::int64_t now_hour, const std::vector<std::vector<double>>& curves, int t_p) {
  if (candidates.empty()) throw DataError("temporal_weights: no candidates");
  std::vector<double> raw(candidates.size(), 1.0);
  auto age_days = [&](const Candidate& c) { return static_cast<double>(now_hour - c.anchor) / 24.0; };
  switch (spec.temporal) {
    case TemporalKind::uniform:
      return uniform_weights(candidates);
    case TemporalKind::fixed_window: {
      for (std::size_t i = 0; i < candidates.size(); ++i) {
        raw[i] = age_days(candidates[i]) <= static_cast<double>(spec.window_days) ? 1.0 : 0.0;
      }
      return normalized(candidates, std::move(raw), "fixed window");
    }
    case TemporalKind::decay: {
      double oldest = 0.0;
      for (const auto& c : candidates) oldest = std::max(oldest, age_days(c));
      for (std::size_t i = 0; i < candidates.size(); ++i) {
        raw[i] = oldest > 0.0 ? std::max(kEps, 1.0 - age_days(candidates[i]) / oldest) : 1.0;
      }
      return normalized(candidates, std::move(raw), "decay");
    }
    case TemporalKind::segment: {
      for (std::size_t i = 0; i < candidates.size(); ++i) {
        const auto& c = candidates[i];
        const auto pos = c.anchor - t_p;
        const auto& curve = c.entity < curves.size() ? curves[c.entity] : std::vector<double>{};
        if (curve.empty()) {
          raw[i] = 0.0;
          continue;
        }
        raw[i] = pos >= 0 && pos < static_cast<std::int64_t>(curve.size()) ? curve[static_cast<std::size_t>(pos)]
                                                                          : curve.back();
      }
      return normalized(candidates, std::move(raw), "segment");
    }
  }
  return uniform_weights(candidates);
}

CandidateWeights nontemporal_weights(const SchemeSpec& spec, const std::vector<Candidate>& candidates,
                                     const ErrorCache& cache, const DynamicsHistory& dyn,
                                     const std::vector<double>& distances) {
  if (candidates.empty()) throw DataError("nontemporal_weights: no candidates");
  const std::size_t n = candidates.size();
  switch (spec.nontemporal) {
    case NonTemporalKind::uniform:
      return uniform_weights(candidates);
    case NonTemporalKind::similar: {
      if (distances.size() != n) {
        spdlog::warn("similar: no distances available, falling back to uniform");
        return uniform_weights(candidates);
      }
      std::map<std::size_t, double> d_max;
      for (std::size_t i = 0; i < n; ++i) {
        auto& m = d_max[candidates[i].entity];
        m = std::max(m, distances[i]);
      }
      std::vector<double> raw(n);
      for (std::size_t i = 0; i < n; ++i) raw[i] = d_max[candidates[i].entity] - distances[i] + kEps;
      return normalized(candidates, std::move(raw), "similar");
    }
    default:
      break;
  }
  std::map<Candidate, double> err;
  for (std::size_t s = 0; s < cache.slots.size(); ++s)
    if (cache.errors[s] >= 0.0) err[cache.slots[s]] = cache.errors[s];
  std::vector<bool> has(n, false);
  std::vector<double> value(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto it = err.find(candidates[i]);
    if (it == err.end()) continue;
    has[i] = true;
    value[i] = it->second;
  }
  if (std::none_of(has.begin(), has.end(), [](bool b) { return b; })) {
    spdlog::warn("{}: error cache is empty, falling back to uniform", spec.nontemporal_name());
    return uniform_weights(candidates);
  }
  const bool high = spec.nontemporal == NonTemporalKind::high_error ||
                    spec.nontemporal == NonTemporalKind::high_confidence ||
                    spec.nontemporal == NonTemporalKind::high_variability;
  if (spec.needs_dynamics()) {
    const bool want_conf = spec.nontemporal == NonTemporalKind::high_confidence ||
                           spec.nontemporal == NonTemporalKind::low_confidence;
    std::vector<bool> known(n, false);
    std::vector<double> known_values;
    for (std::size_t i = 0; i < n; ++i) {
      if (!has[i]) continue;
      double conf = 0.0, var = 0.0;
      if (dyn.stats(candidates[i], conf, var)) {
        known[i] = true;
        value[i] = want_conf ? conf : var;
        known_values.push_back(value[i]);
      }
    }
    if (known_values.empty()) spdlog::warn("{}: no candidate has two snapshots yet", spec.nontemporal_name());
    const double med = median(known_values);
    for (std::size_t i = 0; i < n; ++i)
      if (has[i] && !known[i]) value[i] = med;
  }
  return normalized(candidates, rank_weights(candidates, value, has, high), spec.nontemporal_name().c_str());
}

CandidateWeights combine(const CandidateWeights& w1, const CandidateWeights& w2) {
  if (w1.candidates != w2.candidates) throw ShapeError("combine: candidate lists differ");
  std::vector<double> raw(w1.weights.size());
  for (std::size_t i = 0; i < raw.size(); ++i) raw[i] = w1.weights[i] * w2.weights[i];
  return normalized(w1.candidates, std::move(raw), "combine");
}

std::vector<Candidate> sample_batch(const CandidateWeights& w, std::size_t batch_size, Rng& rng) {
  check_weights(w);
  if (w.candidates.empty()) throw DataError("sample_batch: no candidates");
  std::vector<double> cum(w.weights.size());
  std::partial_sum(w.weights.begin(), w.weights.end(), cum.begin());
  const double total = cum.back();
  std::size_t last_positive = 0;
  for (std::size_t i = 0; i < w.weights.size(); ++i)
    if (w.weights[i] > 0.0) last_positive = i;
  std::vector<Candidate> out;
  out.reserve(batch_size);
  for (std::size_t b = 0; b < batch_size; ++b) {
    const double u = uniform01(rng) * total;
    auto idx = static_cast<std::size_t>(std::upper_bound(cum.begin(), cum.end(), u) - cum.begin());
    out.push_back(w.candidates[std::min(idx, last_positive)]);
  }
  return out;
}

std::vector<double> similarity_distances(const Dataset& ds, const std::vector<Candidate>& candidates,
                                         const std::vector<std::int64_t>& query_anchor, const HorizonConfig& cfg) {
  std::vector<double> out(candidates.size(), 0.0);
  std::map<std::size_t, std::vector<std::size_t>> by_entity;
  for (std::size_t i = 0; i < candidates.size(); ++i) by_entity[candidates[i].entity].push_back(i);
  std::vector<std::pair<std::size_t, std::vector<std::size_t>>> groups(by_entity.begin(), by_entity.end());

  FirstException err;
#pragma omp parallel for schedule(dynamic, 1)
  for (std::ptrdiff_t g = 0; g < static_cast<std::ptrdiff_t>(groups.size()); ++g) {
    err.run([&] {
      const auto& [e, idx] = groups[static_cast<std::size_t>(g)];
      const auto& rec = ds.entities[e];
      const std::int64_t q = query_anchor.at(e);
      if (q - cfg.t_p < 0 || q > static_cast<std::int64_t>(rec.hours())) return;
      std::int64_t end = 0;
      for (auto i : idx) end = std::max(end, candidates[i].anchor);
      if (end < cfg.t_p) return;
      std::vector<double> acc(idx.size(), 0.0);
      std::size_t used = 0;
      for (std::size_t j = 0; j < rec.dims(); ++j) {
        const auto col = rec.features.column(j);
        const std::span<const double> query(col.data() + (q - cfg.t_p), static_cast<std::size_t>(cfg.t_p));
        const std::span<const double> series(col.data(), static_cast<std::size_t>(end));
        if (znormalize(query).degenerate) continue;
        const auto dp = mass(query, series);
        for (std::size_t k = 0; k < idx.size(); ++k) acc[k] += dp.distances[static_cast<std::size_t>(candidates[idx[k]].anchor - cfg.t_p)];
        ++used;
      }
      if (used == 0) return;
      for (std::size_t k = 0; k < idx.size(); ++k) out[idx[k]] = acc[k] / static_cast<double>(used);
    });
  }
  err.rethrow();
  return out;
}

void refresh_error_cache(const Model& model, const Dataset& ds, const HorizonConfig& cfg, std::int64_t labeled_end,
                         std::int64_t day, std::size_t subsample_size, double gamma, Rng& rng, ErrorCache& cache,
                         DynamicsHistory& dyn) {
  if (labeled_end > cache.streamed_end) {
    // First refresh: uniform reservoir over everything labeled so far. Later
    // refreshes: every newly labeled candidate joins the tracked set.
    const bool first = cache.streamed_end == 0;
    const std::int64_t first_new = std::max<std::int64_t>(cache.streamed_end - cfg.t_b + 1, 0);
    for (std::size_t e = 0; e < ds.entities.size(); ++e) {
      for (auto a : enumerate_anchors(ds.entities[e], labeled_end, cfg)) {
        if (!first && a < first_new) continue;
        const Candidate c{e, a};
        ++cache.streamed;
        if (!first || cache.slots.size() < subsample_size) {
          cache.slots.push_back(c);
          cache.errors.push_back(-1.0);
          continue;
        }
        const auto j = static_cast<std::uint64_t>(uniform01(rng) * static_cast<double>(cache.streamed));
        if (j < subsample_size) {
          cache.slots[j] = c;
          cache.errors[j] = -1.0;
        }
      }
    }
    cache.streamed_end = labeled_end;
  }
  std::vector<TrainingExample> examples;
  examples.reserve(cache.slots.size());
  for (const auto& c : cache.slots) examples.push_back(make_window(ds.entities[c.entity], c.anchor, cfg, labeled_end));
  cache.errors = example_losses(model, examples, gamma);
  cache.refreshed_day = day;
  for (std::size_t s = 0; s < cache.slots.size(); ++s) {
    auto& buf = dyn.snapshots[cache.slots[s]];
    buf.push_back(cache.errors[s]);
    while (buf.size() > dyn.capacity) buf.pop_front();
  }
}

}  // namespace mhf
