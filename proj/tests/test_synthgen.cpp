#include <omp.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "mhf/errors.hpp"
#include "mhf/synthgen.hpp"

using namespace mhf;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("mhf_synth_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

GenConfig small_cfg() {
  GenConfig c;
  c.n_entities = 6;
  c.n_clusters = 2;
  c.d = 3;
  c.days = 40;
  c.drift_kind = DriftKind::abrupt;
  c.drift_day = 20;
  c.seed = 99;
  return c;
}

// Solves the normal equations A x = b for a small symmetric positive definite A.
std::vector<double> solve_spd(std::vector<std::vector<double>> A, std::vector<double> b) {
  const std::size_t n = b.size();
  for (std::size_t i = 0; i < n; ++i) A[i][i] += 1e-9;
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t piv = c;
    for (std::size_t r = c + 1; r < n; ++r)
      if (std::abs(A[r][c]) > std::abs(A[piv][c])) piv = r;
    std::swap(A[c], A[piv]);
    std::swap(b[c], b[piv]);
    for (std::size_t r = c + 1; r < n; ++r) {
      const double f = A[r][c] / A[c][c];
      for (std::size_t k = c; k < n; ++k) A[r][k] -= f * A[c][k];
      b[r] -= f * b[c];
    }
  }
  std::vector<double> x(n);
  for (std::size_t i = n; i-- > 0;) {
    double s = b[i];
    for (std::size_t k = i + 1; k < n; ++k) s -= A[i][k] * x[k];
    x[i] = s / A[i][i];
  }
  return x;
}

struct Fit {
  std::vector<std::vector<double>> ata;
  std::vector<double> atb;
  explicit Fit(std::size_t n) : ata(n, std::vector<double>(n, 0.0)), atb(n, 0.0) {}
  void add(const std::vector<double>& x, double y) {
    for (std::size_t i = 0; i < x.size(); ++i) {
      atb[i] += x[i] * y;
      for (std::size_t j = 0; j < x.size(); ++j) ata[i][j] += x[i] * x[j];
    }
  }
};

}  // namespace

TEST_CASE("config validation and json") {
  auto c = small_cfg();
  CHECK_NOTHROW(c.validate());
  const auto back = gen_config_from_json(to_json(c));
  CHECK(to_json(back) == to_json(c));
  c.n_clusters = 7;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = small_cfg();
  c.drift_day = 40;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = small_cfg();
  c.scale_spread = 0.5;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CHECK_THROWS_AS(gen_config_from_json({{"n_entitys", 3}}), ConfigError);
  CHECK_THROWS_AS(parse_drift_kind("sudden"), ConfigError);
}

TEST_CASE("determinism and thread independence") {
  const auto c = small_cfg();
  const auto a = scratch("a"), b = scratch("b");
  omp_set_num_threads(1);
  generate(c, a);
  omp_set_num_threads(4);
  generate(c, b);
  std::size_t files = 0;
  for (const auto& entry : fs::directory_iterator(a)) {
    ++files;
    CHECK(slurp(entry.path()) == slurp(b / entry.path().filename()));
  }
  CHECK(files == 6 + 2);
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("meta records drift ground truth") {
  auto c = small_cfg();
  c.days = 300;
  c.drift_day = 200;
  const auto ds = generate_dataset(c);
  CHECK(ds.meta["drift"]["hour"].get<long>() == 4800);
  CHECK(ds.meta["drift"]["kind"] == "abrupt");
  CHECK(ds.meta["tau_e"].get<int>() == 7200);
  CHECK(drift_hour(c) == 4800);
}

TEST_CASE("write and load round trip") {
  const auto c = small_cfg();
  const auto ds = generate_dataset(c);
  const auto dir = scratch("rt");
  write_dataset(dir, ds);
  const auto back = load_dataset(dir);
  REQUIRE(back.entities.size() == ds.entities.size());
  CHECK(back.d == ds.d);
  CHECK(back.k == ds.k);
  for (std::size_t e = 0; e < ds.entities.size(); ++e) {
    CHECK(back.entities[e].entity_id == ds.entities[e].entity_id);
    CHECK(back.entities[e].features == ds.entities[e].features);
    CHECK(back.entities[e].metric == ds.entities[e].metric);
    CHECK(back.entities[e].interactions == ds.entities[e].interactions);
  }
  fs::remove_all(dir);
}

TEST_CASE("describe") {
  const auto c = small_cfg();
  const auto dir = scratch("describe");
  generate(c, dir);
  const auto s = describe(dir);
  CHECK(s.entity_count == 6);
  CHECK(s.days == 40);
  CHECK(s.drift_kind == "abrupt");
  CHECK(s.drift_hour == 480);
  const auto ds = load_dataset(dir);
  REQUIRE(s.channels.size() == c.d + 1u);
  for (std::size_t j = 0; j <= static_cast<std::size_t>(c.d); ++j) {
    double sum = 0.0, mn = 1e300, mx = -1e300;
    std::size_t n = 0;
    for (const auto& e : ds.entities)
      for (std::size_t t = 0; t < e.hours(); ++t) {
        const double v = j < static_cast<std::size_t>(c.d) ? e.features(t, j) : e.metric[t];
        sum += v;
        mn = std::min(mn, v);
        mx = std::max(mx, v);
        ++n;
      }
    const double mean = sum / static_cast<double>(n);
    double var = 0.0;
    for (const auto& e : ds.entities)
      for (std::size_t t = 0; t < e.hours(); ++t) {
        const double v = j < static_cast<std::size_t>(c.d) ? e.features(t, j) : e.metric[t];
        var += (v - mean) * (v - mean);
      }
    CHECK(s.channels[j].mean == doctest::Approx(mean).epsilon(1e-10));
    CHECK(s.channels[j].stddev == doctest::Approx(std::sqrt(var / static_cast<double>(n))).epsilon(1e-10));
    CHECK(s.channels[j].min == mn);
    CHECK(s.channels[j].max == mx);
  }
  std::ostringstream os;
  print_summary(os, s);
  CHECK(os.str().find("entities") != std::string::npos);

  fs::remove(dir / "interactions.csv");
  try {
    describe(dir);
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("interactions.csv") != std::string::npos);
  }
  fs::remove_all(dir);
}

TEST_CASE("malformed csv reports file and line") {
  const auto dir = scratch("bad");
  generate(small_cfg(), dir);
  {
    std::ofstream out(dir / "entity_E001.csv", std::ios::app);
    out << "960,1,2,oops,4\n";
  }
  try {
    load_dataset(dir);
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("entity_E001.csv") != std::string::npos);
    CHECK(msg.find(":962") != std::string::npos);
  }
  fs::remove_all(dir);
}

TEST_CASE("interactions concentrate within clusters") {
  GenConfig c;
  c.n_entities = 12;
  c.n_clusters = 3;
  c.days = 60;
  const auto ds = generate_dataset(c);
  double within = 0.0, across = 0.0;
  for (std::size_t e = 0; e < ds.entities.size(); ++e) {
    for (const auto& snap : ds.entities[e].interactions) {
      for (std::size_t o = 0; o < snap.size(); ++o) {
        CHECK(snap[o] >= 0.0);
        if (o == e) CHECK(snap[o] == 0.0);
        (cluster_of(c, static_cast<int>(o)) == cluster_of(c, static_cast<int>(e)) ? within : across) += snap[o];
      }
    }
  }
  CHECK(within >= 3.0 * across);
}

TEST_CASE("drift changes the read-out") {
  for (auto kind : {DriftKind::abrupt, DriftKind::incremental}) {
    for (int clusters : {1, 2, 3}) {
      GenConfig c;
      c.n_entities = 6;
      c.n_clusters = clusters;
      c.days = 100;
      c.drift_kind = kind;
      c.drift_day = 50;
      for (int cl = 0; cl < clusters; ++cl) {
        const auto pre = functional_at(c, cl, 0);
        const auto post = functional_at(c, cl, 100 * 24 - 1);
        double diff = 0.0;
        for (std::size_t j = 0; j < pre.weights.size(); ++j) diff += std::abs(pre.weights[j] - post.weights[j]);
        CHECK(diff > 0.0);
      }
    }
  }
  GenConfig c = small_cfg();
  c.drift_kind = DriftKind::incremental;
  CHECK(regime_at(c, 0) == 0.0);
  CHECK(regime_at(c, 20 * 24) == 0.0);
  CHECK(regime_at(c, 30 * 24) == doctest::Approx(0.5));
}

TEST_CASE("cluster identity is needed to recover the metric") {
  GenConfig c;
  c.n_entities = 30;
  c.n_clusters = 2;
  c.d = 6;
  c.days = 120;
  c.seed = 5;
  const auto ds = generate_dataset(c);
  const std::size_t d = ds.d;
  const std::size_t n_feat = d + 1;
  const std::size_t split = 80 * 24;
  std::vector<double> scale;
  for (const auto& e : ds.meta["entities"]) scale.push_back(e["scale"].get<double>());

  auto regressors = [&](const EntityRecord& r, std::size_t t) {
    std::vector<double> x(n_feat, 1.0);
    for (std::size_t j = 0; j < d; ++j) x[j] = r.features(t, j);
    return x;
  };
  Fit pooled(n_feat);
  std::vector<Fit> per_cluster(2, Fit(n_feat));
  for (std::size_t e = 0; e < ds.entities.size(); ++e) {
    const auto& r = ds.entities[e];
    for (std::size_t t = 0; t < split; ++t) {
      const auto x = regressors(r, t);
      const double y = r.metric[t] / scale[e];
      pooled.add(x, y);
      per_cluster[e % 2].add(x, y);
    }
  }
  const auto w_pool = solve_spd(pooled.ata, pooled.atb);
  const auto w0 = solve_spd(per_cluster[0].ata, per_cluster[0].atb);
  const auto w1 = solve_spd(per_cluster[1].ata, per_cluster[1].atb);

  double se_pool = 0, se_id = 0, sum = 0, sum2 = 0;
  std::size_t n = 0;
  for (std::size_t e = 0; e < ds.entities.size(); ++e) {
    const auto& r = ds.entities[e];
    const auto& w_id = e % 2 == 0 ? w0 : w1;
    for (std::size_t t = split; t < r.hours(); ++t) {
      const auto x = regressors(r, t);
      const double y = r.metric[t] / scale[e];
      double p_pool = 0, p_id = 0;
      for (std::size_t i = 0; i < n_feat; ++i) {
        p_pool += w_pool[i] * x[i];
        p_id += w_id[i] * x[i];
      }
      se_pool += (p_pool - y) * (p_pool - y);
      se_id += (p_id - y) * (p_id - y);
      sum += y;
      sum2 += y * y;
      ++n;
    }
  }
  const double var = sum2 / static_cast<double>(n) - (sum / static_cast<double>(n)) * (sum / static_cast<double>(n));
  const double nrmse_id = std::sqrt(se_id / static_cast<double>(n) / var);
  const double nrmse_pool = std::sqrt(se_pool / static_cast<double>(n) / var);
  MESSAGE("oracle NRMSE with cluster id " << nrmse_id << ", without " << nrmse_pool);
  CHECK(nrmse_id < 0.3);
  CHECK(nrmse_pool >= 0.7);
}
