#include "mhf/eval.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <optional>

#include "mhf/errors.hpp"

namespace mhf {

MetricReport compute_metrics(const std::vector<std::vector<double>>& predictions,
                             const std::vector<std::vector<double>>& truths) {
  if (predictions.empty()) throw DataError("compute_metrics: no windows");
  if (predictions.size() != truths.size()) throw ShapeError("compute_metrics: prediction/truth count mismatch");
  MetricReport r;
  r.n_windows = predictions.size();

  double sse = 0.0, sum_t = 0.0;
  std::size_t n = 0;
  double nrmse_sum = 0.0;
  std::size_t nrmse_n = 0;
  for (std::size_t w = 0; w < predictions.size(); ++w) {
    const auto& p = predictions[w];
    const auto& t = truths[w];
    if (p.size() != t.size() || p.empty()) throw ShapeError("compute_metrics: window length mismatch");
    for (std::size_t i = 0; i < p.size(); ++i) {
      sse += (p[i] - t[i]) * (p[i] - t[i]);
      sum_t += t[i];
    }
    n += p.size();
    const auto zt = znormalize(t);
    if (zt.degenerate) {
      ++r.degenerate_windows_skipped;
      continue;
    }
    const auto zp = znormalize(p);
    double s = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) s += (zp.values[i] - zt.values[i]) * (zp.values[i] - zt.values[i]);
    nrmse_sum += std::sqrt(s / static_cast<double>(p.size()));
    ++nrmse_n;
  }
  const double mean_t = sum_t / static_cast<double>(n);
  double sst = 0.0;
  for (const auto& t : truths)
    for (double v : t) sst += (v - mean_t) * (v - mean_t);
  if (!(sst > 0.0)) throw DataError("R^2 undefined: truth has zero total variance");

  r.rmse = std::sqrt(sse / static_cast<double>(n));
  r.nrmse = nrmse_n > 0 ? nrmse_sum / static_cast<double>(nrmse_n) : std::nan("");
  r.r2 = 1.0 - sse / sst;
  return r;
}

WindowPairs pair_windows(const std::vector<PredictionRow>& log, const Dataset& ds, std::int64_t day_from,
                         std::int64_t day_to) {
  // (day, entity) -> offset-ordered values
  std::map<std::pair<std::int64_t, std::size_t>, std::map<int, double>> groups;
  for (const auto& r : log) {
    if (r.day < day_from || r.day > day_to) continue;
    if (r.entity >= ds.entities.size()) throw DataError("prediction log refers to an unknown entity");
    if (!groups[{r.day, r.entity}].emplace(r.offset, r.predicted).second)
      throw DataError("prediction log repeats day " + std::to_string(r.day) + " offset " + std::to_string(r.offset));
  }
  WindowPairs out;
  std::size_t expected = 0;
  for (const auto& [key, vals] : groups) {
    const auto& rec = ds.entities[key.second];
    if (expected == 0) expected = vals.size();
    if (vals.size() != expected) throw DataError("prediction log windows have different lengths");
    std::vector<double> p, t;
    bool inside = true;
    for (const auto& [offset, v] : vals) {
      const std::int64_t h = midnight_hour(rec, key.first) + offset;
      if (h < 0 || h >= static_cast<std::int64_t>(rec.hours())) {
        inside = false;
        break;
      }
      p.push_back(v);
      t.push_back(rec.metric[static_cast<std::size_t>(h)]);
    }
    if (!inside) continue;
    out.predictions.push_back(std::move(p));
    out.truths.push_back(std::move(t));
  }
  return out;
}

MetricReport evaluate_log(const std::vector<PredictionRow>& log, const Dataset& ds, std::int64_t day_from,
                          std::int64_t day_to) {
  const auto w = pair_windows(log, ds, day_from, day_to);
  return compute_metrics(w.predictions, w.truths);
}

std::vector<double> rank_values(const std::vector<double>& values, bool higher_is_better) {
  const std::size_t n = values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  // NaN ranks last
  auto key = [&](std::size_t i) {
    const double v = values[i];
    if (std::isnan(v)) return std::numeric_limits<double>::infinity();
    return higher_is_better ? -v : v;
  };
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return key(a) < key(b); });
  std::vector<double> ranks(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && key(order[j + 1]) == key(order[i])) ++j;
    const double avg = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
    i = j + 1;
  }
  return ranks;
}

double RankTable::at(const std::string& row, const std::string& col) const {
  const auto r = std::find(rows.begin(), rows.end(), row);
  const auto c = std::find(cols.begin(), cols.end(), col);
  if (r == rows.end() || c == cols.end()) return std::nan("");
  return cells[static_cast<std::size_t>(r - rows.begin())][static_cast<std::size_t>(c - cols.begin())];
}

namespace {

std::string temporal_of(const SchemeSpec& s) { return s.frozen ? "frozen" : s.temporal_name(); }
std::string nontemporal_of(const SchemeSpec& s) { return s.frozen ? "frozen" : s.nontemporal_name(); }

double metric_value(const MetricReport& m, const std::string& metric) {
  if (metric == "rmse") return m.rmse;
  if (metric == "nrmse") return m.nrmse;
  return m.r2;
}

void add_unique(std::vector<std::string>& v, const std::string& s) {
  if (std::find(v.begin(), v.end(), s) == v.end()) v.push_back(s);
}

double mean_present(const std::vector<double>& v) {
  double s = 0.0;
  std::size_t n = 0;
  for (double x : v)
    if (!std::isnan(x)) {
      s += x;
      ++n;
    }
  return n ? s / static_cast<double>(n) : std::nan("");
}

}  // namespace

void rank_runs(BenchmarkResult& result) {
  std::vector<std::string> variants, schemes;
  for (const auto& r : result.runs) {
    add_unique(variants, r.variant);
    add_unique(schemes, r.scheme.name());
  }
  result.average_rank.clear();
  result.tables.clear();
  for (const std::string metric : {"rmse", "nrmse", "r2"}) {
    std::map<std::string, double> sum;
    std::map<std::string, int> count;
    for (const auto& v : variants) {
      std::vector<const BenchmarkRun*> rs;
      for (const auto& r : result.runs)
        if (r.variant == v) rs.push_back(&r);
      std::vector<double> vals;
      for (auto* r : rs) vals.push_back(metric_value(r->metrics, metric));
      const auto ranks = rank_values(vals, metric == "r2");
      for (std::size_t i = 0; i < rs.size(); ++i) {
        sum[rs[i]->scheme.name()] += ranks[i];
        ++count[rs[i]->scheme.name()];
      }
    }
    auto& avg = result.average_rank[metric];
    for (const auto& [name, s] : sum) avg[name] = s / count[name];

    RankTable t;
    t.metric = metric;
    for (const auto& r : result.runs) {
      add_unique(t.rows, nontemporal_of(r.scheme));
      add_unique(t.cols, temporal_of(r.scheme));
    }
    t.cells.assign(t.rows.size(), std::vector<double>(t.cols.size(), std::nan("")));
    for (const auto& r : result.runs) {
      const auto ri = static_cast<std::size_t>(std::find(t.rows.begin(), t.rows.end(), nontemporal_of(r.scheme)) - t.rows.begin());
      const auto ci = static_cast<std::size_t>(std::find(t.cols.begin(), t.cols.end(), temporal_of(r.scheme)) - t.cols.begin());
      t.cells[ri][ci] = avg[r.scheme.name()];
    }
    for (const auto& row : t.cells) t.row_means.push_back(mean_present(row));
    for (std::size_t c = 0; c < t.cols.size(); ++c) {
      std::vector<double> col;
      for (const auto& row : t.cells) col.push_back(row[c]);
      t.col_means.push_back(mean_present(col));
    }
    result.tables[metric] = std::move(t);
  }
}

BenchmarkResult benchmark(const Dataset& ds, const std::vector<ModelConfig>& variants,
                          const std::vector<SchemeSpec>& schemes, const TrainConfig& tc, const HorizonConfig& hc,
                          const BenchmarkOptions& opt) {
  if (variants.size() < 2) throw ConfigError("benchmark needs at least 2 model variants");
  if (schemes.size() < 2) throw ConfigError("benchmark needs at least 2 schemes");
  for (std::size_t i = 0; i < schemes.size(); ++i)
    for (std::size_t j = 0; j < i; ++j)
      if (schemes[i] == schemes[j]) throw ConfigError("benchmark scheme listed twice: " + schemes[i].name());

  BenchmarkResult result;
  DayCache day_cache;
  for (const auto& mc : variants) {
    const std::string vname = to_string(mc.variant);
    std::optional<SimulationState> offline;
    try {
      offline.emplace(train_offline(ds, mc, tc, hc));
    } catch (const std::exception& e) {
      throw DataError("benchmark run (" + vname + ", offline) failed: " + e.what());
    }
    for (const auto& sc : schemes) {
      spdlog::info("benchmark: {} x {}", vname, sc.name());
      try {
        auto s = *offline;
        auto run_tc = tc;
        run_tc.scheme = sc;
        run_online(s, ds, run_tc, opt.n_days, &day_cache);
        result.runs.push_back({vname, sc, evaluate_log(s.log, ds, opt.eval_from_day)});
      } catch (const std::exception& e) {
        throw DataError("benchmark run (" + vname + ", " + sc.name() + ") failed: " + e.what());
      }
    }
  }
  rank_runs(result);
  return result;
}

void write_benchmark(const std::filesystem::path& dir, const BenchmarkResult& result) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "report.csv", std::ios::binary);
    if (!out) throw DataError("cannot write " + (dir / "report.csv").string());
    out << "variant,temporal,nontemporal,rmse,nrmse,r2\n";
    for (const auto& r : result.runs)
      out << r.variant << ',' << temporal_of(r.scheme) << ',' << nontemporal_of(r.scheme) << ','
          << format_double(r.metrics.rmse) << ',' << format_double(r.metrics.nrmse) << ','
          << format_double(r.metrics.r2) << '\n';
  }
  for (const auto& [metric, t] : result.tables) {
    const auto path = dir / ("ranks_" + metric + ".csv");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    auto cell = [](double v) { return std::isnan(v) ? std::string() : format_double(v); };
    out << "nontemporal";
    for (const auto& c : t.cols) out << ',' << c;
    out << ",mean\n";
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
      out << t.rows[r];
      for (double v : t.cells[r]) out << ',' << cell(v);
      out << ',' << cell(t.row_means[r]) << '\n';
    }
    out << "mean";
    for (double v : t.col_means) out << ',' << cell(v);
    out << ",\n";
  }
}

}  // namespace mhf
