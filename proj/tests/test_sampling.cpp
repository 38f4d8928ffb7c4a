#include <set>
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "mhf/errors.hpp"
#include "mhf/model.hpp"
#include "mhf/sampling.hpp"
#include "mhf/synthgen.hpp"

using namespace mhf;

namespace {

std::vector<Candidate> line(std::size_t n, std::size_t entity = 0, std::int64_t first = 168) {
  std::vector<Candidate> c;
  for (std::size_t i = 0; i < n; ++i) c.push_back({entity, first + static_cast<std::int64_t>(i)});
  return c;
}

double sum(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0); }

ErrorCache cache_of(const std::vector<Candidate>& c, const std::vector<double>& e) {
  ErrorCache cache;
  cache.slots = c;
  cache.errors = e;
  cache.refreshed_day = 0;
  return cache;
}

// Upper tail of the chi-square distribution via the regularized incomplete gamma.
double chi2_sf(double x, double k) {
  const double a = k / 2.0, z = x / 2.0;
  if (z < a + 1.0) {
    double term = 1.0 / a, s = term;
    for (int n = 1; n < 10000; ++n) {
      term *= z / (a + n);
      s += term;
      if (term < s * 1e-15) break;
    }
    return 1.0 - s * std::exp(-z + a * std::log(z) - std::lgamma(a));
  }
  double b = z + 1.0 - a, c = 1e300, d = 1.0 / b, h = d;
  for (int i = 1; i < 10000; ++i) {
    const double an = -i * (i - a);
    b += 2.0;
    d = an * d + b;
    c = b + an / c;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < 1e-15) break;
  }
  return std::exp(-z + a * std::log(z) - std::lgamma(a)) * h;
}

}  // namespace

TEST_CASE("scheme parsing") {
  auto s = parse_scheme("fixed90:uniform");
  CHECK(s.temporal == TemporalKind::fixed_window);
  CHECK(s.window_days == 90);
  CHECK(s.nontemporal == NonTemporalKind::uniform);
  s = parse_scheme("segment:similar");
  CHECK(s.temporal == TemporalKind::segment);
  CHECK(s.nontemporal == NonTemporalKind::similar);
  CHECK(s.name() == "segment:similar");
  CHECK(parse_scheme("decay:low_error").nontemporal == NonTemporalKind::low_error);
  CHECK(parse_scheme("uniform").name() == "uniform:uniform");
  CHECK(parse_scheme("frozen").frozen);
  CHECK(parse_scheme("fixed365:high_variability").name() == "fixed365:high_variability");
  for (const char* bad : {"", "segment:", "fixed:uniform", "fixed0:uniform", "fixedx:uniform", "sgment:similar",
                          "uniform:best", "decay:low_error:x"}) {
    CAPTURE(bad);
    CHECK_THROWS_AS(parse_scheme(bad), ConfigError);
  }
  try {
    parse_scheme("nope");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("low_variability") != std::string::npos);
  }
}

TEST_CASE("temporal weights") {
  const std::vector<Candidate> two{{0, 1000}, {0, 1000 + 90 * 24}};
  const std::int64_t now = 1000 + 100 * 24;
  const SchemeSpec fixed = parse_scheme("fixed90");
  auto w = temporal_weights(fixed, two, now, {}, 168);
  CHECK(w.weights == std::vector<double>{0.0, 1.0});

  const SchemeSpec decay = parse_scheme("decay");
  w = temporal_weights(decay, two, 1000 + 90 * 24, {}, 168);
  CHECK(w.weights[1] / w.weights[0] >= 1e4);
  const auto c3 = line(3, 0, 0);
  w = temporal_weights(decay, {{0, 0}, {0, 24}, {0, 48}}, 48, {}, 168);
  CHECK(w.weights[1] == doctest::Approx(0.5 / (1.5 + 1e-6)));

  // empty window support falls back to uniform
  w = temporal_weights(fixed, two, now + 400 * 24, {}, 168);
  CHECK(w.weights == std::vector<double>{0.5, 0.5});

  const auto u = temporal_weights(parse_scheme("uniform"), c3, 48, {}, 0);
  CHECK(u.weights[0] == doctest::Approx(1.0 / 3));
}

TEST_CASE("segment weights follow the curve") {
  std::vector<std::vector<double>> curves{{0.1, 0.2, 0.3, 0.4}, {0.25, 0.25, 0.25, 0.25}};
  const std::vector<Candidate> c{{0, 10}, {0, 13}, {1, 11}, {1, 12}};
  const auto w = temporal_weights(parse_scheme("segment"), c, 13, curves, 10);
  const double total = 0.1 + 0.4 + 0.25 + 0.25;
  CHECK(w.weights[0] == doctest::Approx(0.1 / total));
  CHECK(w.weights[1] == doctest::Approx(0.4 / total));
  CHECK(w.weights[2] == doctest::Approx(0.25 / total));
}

TEST_CASE("error ranking") {
  const auto c = line(3);
  const auto cache = cache_of(c, {5, 1, 3});
  DynamicsHistory dyn;
  auto w = nontemporal_weights(parse_scheme("uniform:high_error"), c, cache, dyn, {});
  CHECK(w.weights[0] == doctest::Approx(0.5));
  CHECK(w.weights[1] == doctest::Approx(1.0 / 6));
  CHECK(w.weights[2] == doctest::Approx(1.0 / 3));
  auto lw = nontemporal_weights(parse_scheme("uniform:low_error"), c, cache, dyn, {});
  CHECK(lw.weights[1] == doctest::Approx(0.5));

  // high and low rankings are exact reverses, ties by candidate order
  Rng rng(1);
  const auto many = line(50);
  std::vector<double> errs(50);
  for (auto& e : errs) e = std::floor(uniform01(rng) * 5);
  const auto big = cache_of(many, errs);
  const auto hi = nontemporal_weights(parse_scheme("uniform:high_error"), many, big, dyn, {});
  const auto lo = nontemporal_weights(parse_scheme("uniform:low_error"), many, big, dyn, {});
  for (std::size_t i = 0; i < 50; ++i) CHECK(std::abs((hi.weights[i] + lo.weights[i]) * (50.0 * 51 / 2) - 51.0) < 1e-9);

  // candidates outside the cache get zero weight; an empty cache is uniform
  const auto partial = cache_of({c[0]}, {2.0});
  w = nontemporal_weights(parse_scheme("uniform:high_error"), c, partial, dyn, {});
  CHECK(w.weights == std::vector<double>{1.0, 0.0, 0.0});
  w = nontemporal_weights(parse_scheme("uniform:low_error"), c, ErrorCache{}, dyn, {});
  CHECK(w.weights[2] == doctest::Approx(1.0 / 3));
}

TEST_CASE("dynamics ranking") {
  const auto c = line(3);
  const auto cache = cache_of(c, {1, 1, 1});
  DynamicsHistory dyn;
  dyn.snapshots[c[0]] = {2, 2, 2, 2};
  dyn.snapshots[c[1]] = {1, 3, 1, 3};
  dyn.snapshots[c[2]] = {5};
  double conf = 0, var = 0;
  CHECK(dyn.stats(c[1], conf, var));
  CHECK(conf == -2.0);
  CHECK(var == 1.0);
  CHECK(!dyn.stats(c[2], conf, var));

  auto w = nontemporal_weights(parse_scheme("uniform:low_variability"), c, cache, dyn, {});
  // values: [0, 1, median 0.5] -> low favours 0
  CHECK(w.weights[0] > w.weights[2]);
  CHECK(w.weights[2] > w.weights[1]);
  w = nontemporal_weights(parse_scheme("uniform:high_variability"), c, cache, dyn, {});
  CHECK(w.weights[1] > w.weights[2]);
  w = nontemporal_weights(parse_scheme("uniform:high_confidence"), c, cache, dyn, {});
  // confidences all tie at -2, so candidate order decides
  CHECK(w.weights[0] == doctest::Approx(1.0 / 6));
  CHECK(w.weights[2] == doctest::Approx(0.5));
}

TEST_CASE("similar weights") {
  const std::vector<Candidate> c{{0, 200}, {0, 300}, {1, 200}, {1, 250}};
  const std::vector<double> d{0.0, 4.0, 2.0, 2.0};
  const auto w = nontemporal_weights(parse_scheme("uniform:similar"), c, ErrorCache{}, DynamicsHistory{}, d);
  CHECK(w.weights[0] > w.weights[1]);
  CHECK(w.weights[0] == doctest::Approx((4.0 + 1e-6) / (4.0 + 4e-6)));
}

TEST_CASE("similarity distances") {
  GenConfig g;
  g.n_entities = 2;
  g.n_clusters = 1;
  g.d = 3;
  g.days = 30;
  auto ds = generate_dataset(g);
  HorizonConfig cfg{48, 24, 24, 0};
  std::vector<Candidate> cands;
  for (std::size_t e = 0; e < 2; ++e)
    for (auto a : enumerate_anchors(ds.entities[e], 400, cfg)) cands.push_back({e, a});
  const std::vector<std::int64_t> q{300, 320};
  const auto d = similarity_distances(ds, cands, q, cfg);
  const auto w = nontemporal_weights(parse_scheme("uniform:similar"), cands, ErrorCache{}, DynamicsHistory{}, d);
  double best0 = -1;
  std::int64_t arg0 = -1;
  for (std::size_t i = 0; i < cands.size(); ++i) {
    if (cands[i].entity == 0 && w.weights[i] > best0) {
      best0 = w.weights[i];
      arg0 = cands[i].anchor;
    }
    if (cands[i].entity == 0 && cands[i].anchor == 300) CHECK(d[i] < 1e-6);
  }
  CHECK(arg0 == 300);
}

TEST_CASE("combine") {
  const auto c = line(2);
  const CandidateWeights a{c, {0.5, 0.5}}, b{c, {0.8, 0.2}};
  CHECK(combine(a, b).weights[0] == doctest::Approx(0.8));
  CHECK(combine(b, a).weights[1] == doctest::Approx(0.2));
  const CandidateWeights x{c, {1.0, 0.0}}, y{c, {0.0, 1.0}};
  CHECK(combine(x, y).weights == std::vector<double>{0.5, 0.5});
  Rng rng(3);
  const auto many = line(40);
  std::vector<double> raw(40);
  for (auto& v : raw) v = uniform01(rng);
  const double s = sum(raw);
  for (auto& v : raw) v /= s;
  const CandidateWeights w{many, raw}, u{many, std::vector<double>(40, 1.0 / 40)};
  const auto cw = combine(w, u);
  for (std::size_t i = 0; i < 40; ++i) CHECK(std::abs(cw.weights[i] - raw[i]) < 1e-12);
  CHECK_THROWS_AS(combine(w, CandidateWeights{line(40, 1), u.weights}), ShapeError);
}

TEST_CASE("sample_batch") {
  const auto c = line(2);
  Rng rng(5);
  for (const auto& s : sample_batch({c, {1.0, 0.0}}, 1000, rng)) CHECK(s == c[0]);
  for (const auto& s : sample_batch({c, {0.0, 1.0}}, 1000, rng)) CHECK(s == c[1]);

  const auto many = line(100);
  const CandidateWeights u{many, std::vector<double>(100, 0.01)};
  Rng r1(9), r2(9);
  const auto b1 = sample_batch(u, 100000, r1);
  CHECK(b1 == sample_batch(u, 100000, r2));
  std::vector<double> freq(100, 0.0);
  for (const auto& s : b1) freq[static_cast<std::size_t>(s.anchor - 168)] += 1.0;
  double worst = 0.0, chi2 = 0.0;
  for (double f : freq) {
    worst = std::max(worst, std::abs(f / 1e5 - 0.01));
    chi2 += (f - 1000.0) * (f - 1000.0) / 1000.0;
  }
  CHECK(worst < 0.005);
  CHECK(chi2_sf(chi2, 99) > 0.001);
  CHECK(chi2_sf(99.0, 99) == doctest::Approx(0.4811).epsilon(0.01));
}

TEST_CASE("error cache tracked set") {
  GenConfig g;
  g.n_entities = 3;
  g.n_clusters = 1;
  g.d = 2;
  g.days = 30;
  const auto ds = generate_dataset(g);
  HorizonConfig cfg{24, 12, 12, 0};
  ModelConfig mc;
  mc.variant = Variant::proposed;
  mc.n_k = 4;
  mc.channels = 3;
  mc.n_blocks = 1;
  mc.n_basis = 2;
  mc.horizon = 24;
  mc.d = 2;
  mc.k = 3;
  mc.t_p = 24;
  Model model(mc);
  Rng init(1);
  model.initialize(init);

  // subsample larger than the candidate pool covers everything
  ErrorCache all;
  DynamicsHistory dyn;
  Rng rng(2);
  refresh_error_cache(model, ds, cfg, 240, 10, 100000, 1.0, rng, all, dyn);
  std::size_t total = 0;
  for (const auto& e : ds.entities) total += enumerate_anchors(e, 240, cfg).size();
  CHECK(all.slots.size() == total);
  for (std::size_t s = 0; s < all.slots.size(); ++s) {
    const auto ex = make_window(ds.entities[all.slots[s].entity], all.slots[s].anchor, cfg, 240);
    CHECK(std::abs(all.errors[s] - loss(model.forward(ex), ex.target, 1.0)) < 1e-12);
    CHECK(all.errors[s] >= 0.0);
  }

  ErrorCache small;
  DynamicsHistory sdyn;
  refresh_error_cache(model, ds, cfg, 240, 10, 50, 1.0, rng, small, sdyn);
  CHECK(small.slots.size() == 50);
  CHECK(small.streamed == total);
  for (int day = 11; day < 25; ++day) refresh_error_cache(model, ds, cfg, day * 24, day, 50, 1.0, rng, small, sdyn);
  std::size_t total_late = 0;
  for (const auto& e : ds.entities) total_late += enumerate_anchors(e, 24 * 24, cfg).size();
  CHECK(small.streamed == total_late);
  // the initial subsample persists and every later candidate is tracked
  CHECK(small.slots.size() == 50 + (total_late - total));
  CHECK(sdyn.snapshots.size() == small.slots.size());
  std::set<Candidate> tracked(small.slots.begin(), small.slots.end());
  CHECK(tracked.size() == small.slots.size());
  for (const auto& e : ds.entities)
    for (auto a : enumerate_anchors(e, 24 * 24, cfg))
      if (a + cfg.t_b > 240) CHECK(tracked.count({static_cast<std::size_t>(&e - ds.entities.data()), a}) == 1);
  for (const auto& [c, buf] : sdyn.snapshots) CHECK(buf.size() <= 10);
  // a perfect model would give all-zero errors; ranking then follows candidate order
  ErrorCache zero = cache_of(line(4), {0, 0, 0, 0});
  const auto w = nontemporal_weights(parse_scheme("uniform:high_error"), line(4), zero, DynamicsHistory{}, {});
  CHECK(w.weights[3] == doctest::Approx(0.4));
}
