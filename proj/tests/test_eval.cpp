#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "doctest.h"
#include "mhf/errors.hpp"
#include "mhf/eval.hpp"
#include "mhf/rng.hpp"
#include "mhf/synthgen.hpp"

using namespace mhf;
namespace fs = std::filesystem;

namespace {

std::vector<std::vector<double>> random_windows(Rng& rng, std::size_t n, std::size_t h) {
  std::normal_distribution<double> nd(3.0, 2.0);
  std::vector<std::vector<double>> w(n, std::vector<double>(h));
  for (auto& v : w)
    for (auto& x : v) x = nd(rng);
  return w;
}

double pooled_var(const std::vector<std::vector<double>>& t) {
  double s = 0.0, n = 0.0;
  for (const auto& w : t)
    for (double v : w) s += v, n += 1;
  const double m = s / n;
  double q = 0.0;
  for (const auto& w : t)
    for (double v : w) q += (v - m) * (v - m);
  return q / n;
}

}  // namespace

TEST_CASE("metric closed forms") {
  Rng rng(1);
  const auto truth = random_windows(rng, 20, 48);
  auto r = compute_metrics(truth, truth);
  CHECK(r.rmse == 0.0);
  CHECK(r.nrmse == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(r.r2 == 1.0);
  CHECK(r.n_windows == 20);

  auto shifted = truth;
  for (auto& w : shifted)
    for (auto& v : w) v += 5.0;
  r = compute_metrics(shifted, truth);
  CHECK(r.rmse == doctest::Approx(5.0).epsilon(1e-12));
  CHECK(std::abs(r.nrmse) < 1e-12);
  CHECK(r.r2 == doctest::Approx(1.0 - 25.0 / pooled_var(truth)).epsilon(1e-12));

  double mean = 0.0;
  for (const auto& w : truth) mean += std::accumulate(w.begin(), w.end(), 0.0);
  mean /= 20.0 * 48.0;
  const std::vector<std::vector<double>> flat(20, std::vector<double>(48, mean));
  CHECK(std::abs(compute_metrics(flat, truth).r2) < 1e-12);
}

TEST_CASE("metric invariances") {
  Rng rng(2);
  const auto truth = random_windows(rng, 30, 48);
  const auto pred = random_windows(rng, 30, 48);
  const auto base = compute_metrics(pred, truth);
  CHECK(base.rmse >= 0.0);
  CHECK(base.r2 <= 1.0);

  auto p2 = pred, t2 = truth;
  for (std::size_t w = 0; w < 30; ++w)
    for (std::size_t i = 0; i < 48; ++i) p2[w][i] += 123.0, t2[w][i] += 123.0;
  CHECK(std::abs(compute_metrics(p2, t2).rmse - base.rmse) < 1e-12);

  auto p3 = pred;
  for (std::size_t w = 0; w < 30; ++w) {
    const double a = 0.1 + static_cast<double>(w), b = -7.0 * static_cast<double>(w);
    for (auto& v : p3[w]) v = a * v + b;
  }
  CHECK(std::abs(compute_metrics(p3, truth).nrmse - base.nrmse) < 1e-9);
}

TEST_CASE("metric edge cases") {
  std::vector<std::vector<double>> truth{{1, 2, 3}, {4, 4, 4}};
  std::vector<std::vector<double>> pred{{1, 2, 4}, {1, 2, 3}};
  const auto r = compute_metrics(pred, truth);
  CHECK(r.degenerate_windows_skipped == 1);
  CHECK(r.n_windows == 2);
  const std::vector<std::vector<double>> c{{2, 2}, {2, 2}};
  CHECK_THROWS_AS(compute_metrics(c, c), DataError);
  CHECK_THROWS_AS(compute_metrics({}, {}), DataError);
  CHECK_THROWS_AS(compute_metrics({{1, 2}}, {{1, 2, 3}}), ShapeError);
}

TEST_CASE("rank ties and sums") {
  CHECK(rank_values({3.0, 1.0, 2.0}, false) == std::vector<double>{3, 1, 2});
  CHECK(rank_values({3.0, 1.0, 2.0}, true) == std::vector<double>{1, 3, 2});
  CHECK(rank_values({1.0, 1.0}, false) == std::vector<double>{1.5, 1.5});
  CHECK(rank_values({5.0, 2.0, 5.0, 2.0, 9.0}, false) == std::vector<double>{3.5, 1.5, 3.5, 1.5, 5});
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> v(8);
    for (auto& x : v) x = std::floor(uniform01(rng) * 4);  // many ties
    const auto r = rank_values(v, trial % 2 == 0);
    CHECK(std::accumulate(r.begin(), r.end(), 0.0) == 36.0);
    for (double x : r) CHECK((x >= 1.0 && x <= 8.0));
  }
}

TEST_CASE("average ranks across variants") {
  BenchmarkResult res;
  auto rep = [](double rmse) {
    MetricReport m;
    m.rmse = rmse;
    m.nrmse = rmse;
    m.r2 = -rmse;
    return m;
  };
  const auto a = parse_scheme("segment:similar"), b = parse_scheme("uniform:uniform"), c = parse_scheme("decay:uniform");
  res.runs = {{"base", a, rep(1)}, {"base", b, rep(2)}, {"base", c, rep(2)},
              {"proposed", a, rep(0.5)}, {"proposed", b, rep(0.7)}, {"proposed", c, rep(0.6)}};
  rank_runs(res);
  CHECK(res.average_rank["rmse"]["segment:similar"] == 1.0);
  CHECK(res.average_rank["rmse"]["uniform:uniform"] == doctest::Approx(2.75));
  CHECK(res.average_rank["rmse"]["decay:uniform"] == doctest::Approx(2.25));
  CHECK(res.average_rank["r2"]["segment:similar"] == 1.0);
  const auto& t = res.tables["rmse"];
  CHECK(t.at("similar", "segment") == 1.0);
  CHECK(t.at("uniform", "decay") == doctest::Approx(2.25));
  CHECK(std::isnan(t.at("similar", "decay")));
  CHECK(t.row_means.size() == t.rows.size());
  CHECK(t.col_means.size() == t.cols.size());
}

TEST_CASE("prediction windows join ground truth") {
  GenConfig g;
  g.n_entities = 2;
  g.d = 2;
  g.n_clusters = 1;
  g.days = 5;
  const auto ds = generate_dataset(g);
  std::vector<PredictionRow> log;
  for (std::int64_t day : {1, 2, 5})
    for (std::size_t e = 0; e < 2; ++e)
      for (int o = -24; o < 24; ++o) log.push_back({day, e, o, 0.0});
  const auto w = pair_windows(log, ds);
  CHECK(w.predictions.size() == 4);  // day 5 runs past the data
  CHECK(w.truths[0][0] == ds.entities[0].metric[0]);
  CHECK(w.truths[1][47] == ds.entities[1].metric[47]);
  CHECK(pair_windows(log, ds, 2, 2).predictions.size() == 2);
  log.push_back({1, 0, 0, 1.0});
  CHECK_THROWS_AS(pair_windows(log, ds), DataError);
}

TEST_CASE("benchmark grid reproduces and matches evaluate") {
  GenConfig g;
  g.n_entities = 4;
  g.n_clusters = 2;
  g.d = 2;
  g.days = 32;
  g.drift_kind = DriftKind::abrupt;
  g.drift_day = 21;
  g.seed = 9;
  const auto ds = generate_dataset(g);
  HorizonConfig h;
  h.t_p = 24;
  h.t_a = 6;
  h.t_b = 6;
  TrainConfig t;
  t.offline_epochs = 1;
  t.batch_size = 16;
  t.n_iter = 2;
  t.label_delay_days = 4;
  t.offline_days = 20;
  t.error_subsample = 40;
  ModelConfig m;
  m.n_k = 4;
  m.channels = 4;
  m.n_blocks = 1;
  m.n_basis = 3;
  std::vector<ModelConfig> variants(2, m);
  variants[0].variant = Variant::base;
  std::vector<SchemeSpec> schemes;
  for (const char* s : {"uniform:uniform", "segment:similar", "frozen"}) schemes.push_back(parse_scheme(s));
  BenchmarkOptions opt;
  opt.n_days = 8;

  const auto a = benchmark(ds, variants, schemes, t, h, opt);
  const auto b = benchmark(ds, variants, schemes, t, h, opt);
  REQUIRE(a.runs.size() == 6);
  for (std::size_t i = 0; i < 6; ++i) {
    CHECK(a.runs[i].metrics.rmse == b.runs[i].metrics.rmse);
    CHECK(a.runs[i].metrics.nrmse == b.runs[i].metrics.nrmse);
  }
  double sum = 0.0;
  for (const auto& [name, r] : a.average_rank.at("rmse")) sum += r;
  CHECK(sum == doctest::Approx(6.0));

  // frozen cell equals a separate run evaluated from its written log
  auto tf = t;
  tf.scheme = parse_scheme("frozen");
  const auto s = run_simulation(ds, variants[1], tf, h, 8);
  const auto dir = fs::temp_directory_path() / "mhf_eval_test";
  fs::create_directories(dir);
  write_prediction_log(dir / "pred.csv", s.log, ds, s.current_day, t.label_delay_days);
  const auto e = evaluate_log(read_prediction_log(dir / "pred.csv", ds), ds);
  CHECK(e.rmse == a.runs[5].metrics.rmse);
  CHECK(e.nrmse == a.runs[5].metrics.nrmse);
  CHECK(e.r2 == a.runs[5].metrics.r2);

  write_benchmark(dir, a);
  std::ifstream in(dir / "ranks_nrmse.csv");
  std::string header;
  std::getline(in, header);
  CHECK(header == "nontemporal,uniform,segment,frozen,mean");
  std::ifstream rep(dir / "report.csv");
  std::getline(rep, header);
  CHECK(header == "variant,temporal,nontemporal,rmse,nrmse,r2");

  CHECK_THROWS_AS(benchmark(ds, {m}, schemes, t, h, opt), ConfigError);
  opt.n_days = 50;
  CHECK_THROWS_WITH_AS(benchmark(ds, variants, schemes, t, h, opt), doctest::Contains("uniform:uniform"), DataError);
}
