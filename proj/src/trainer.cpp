#include "mhf/trainer.hpp"

#include <spdlog/spdlog.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "mhf/errors.hpp"
#include "mhf/profile.hpp"

namespace mhf {

static_assert(std::endian::native == std::endian::little, "checkpoint writer assumes a little-endian host");

void TrainConfig::validate() const {
  if (offline_epochs < 1) throw ConfigError("offline_epochs must be >= 1");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning_rate must be > 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (n_iter < 1) throw ConfigError("n_iter must be >= 1");
  if (label_delay_days < 1) throw ConfigError("label_delay_days must be >= 1");
  if (offline_days < 1) throw ConfigError("offline_days must be >= 1");
  if (offline_max_steps < 0) throw ConfigError("offline_max_steps must be >= 0");
  if (error_subsample < 1) throw ConfigError("error_subsample must be >= 1");
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"offline_epochs", c.offline_epochs},
          {"learning_rate", c.learning_rate},
          {"batch_size", c.batch_size},
          {"n_iter", c.n_iter},
          {"label_delay_days", c.label_delay_days},
          {"seed", c.seed},
          {"scheme", c.scheme.name()},
          {"offline_days", c.offline_days},
          {"offline_max_steps", c.offline_max_steps},
          {"error_subsample", c.error_subsample}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  for (const auto& [key, v] : j.items()) {
    if (key == "offline_epochs") c.offline_epochs = v.get<int>();
    else if (key == "learning_rate") c.learning_rate = v.get<double>();
    else if (key == "batch_size") c.batch_size = v.get<int>();
    else if (key == "n_iter") c.n_iter = v.get<int>();
    else if (key == "label_delay_days") c.label_delay_days = v.get<int>();
    else if (key == "seed") c.seed = v.get<std::uint64_t>();
    else if (key == "scheme") c.scheme = parse_scheme(v.get<std::string>());
    else if (key == "offline_days") c.offline_days = v.get<int>();
    else if (key == "offline_max_steps") c.offline_max_steps = v.get<long>();
    else if (key == "error_subsample") c.error_subsample = v.get<int>();
    else throw ConfigError("unknown train key '" + key + "'");
  }
  return c;
}

bool SimulationState::operator==(const SimulationState& o) const {
  if (optimizer.size() != o.optimizer.size()) return false;
  for (std::size_t i = 0; i < optimizer.size(); ++i) {
    const auto &a = optimizer[i], &b = o.optimizer[i];
    if (a.first_moment != b.first_moment || a.second_moment != b.second_moment || a.step_count != b.step_count ||
        a.hyper.learning_rate != b.hyper.learning_rate)
      return false;
  }
  return current_day == o.current_day && to_json(model.config()) == to_json(o.model.config()) &&
         model.params() == o.model.params() && rng == o.rng && cache == o.cache && dynamics == o.dynamics &&
         curves == o.curves && log == o.log && to_json(train) == to_json(o.train) &&
         horizon.t_p == o.horizon.t_p && horizon.t_a == o.horizon.t_a && horizon.t_b == o.horizon.t_b &&
         horizon.label_delay_days == o.horizon.label_delay_days && examples_consumed == o.examples_consumed &&
         initial_loss == o.initial_loss && epoch_losses == o.epoch_losses;
}

// --- DayCache ----------------------------------------------------------------

namespace {

std::vector<double> compute_curve(const Dataset& ds, std::size_t entity, std::int64_t end, int m) {
  const auto& rec = ds.entities[entity];
  const auto rows = static_cast<std::size_t>(std::min<std::int64_t>(end, static_cast<std::int64_t>(rec.hours())));
  Matrix x(rows, rec.dims());
  for (std::size_t t = 0; t < rows; ++t)
    for (std::size_t j = 0; j < rec.dims(); ++j) x(t, j) = rec.features(t, j);
  try {
    return fluss_probability(x, static_cast<std::size_t>(m)).p;
  } catch (const DataError& e) {
    spdlog::warn("no sampling curve for entity {}: {}", rec.entity_id, e.what());
    return {};
  }
}

std::vector<std::int64_t> query_anchors(const Dataset& ds, std::int64_t day) {
  std::vector<std::int64_t> q;
  for (const auto& rec : ds.entities) q.push_back(midnight_hour(rec, day));
  return q;
}

}  // namespace

std::vector<double> DayCache::curve(const Dataset& ds, std::size_t entity, std::int64_t end, int m) {
  const auto key = std::make_pair(entity, end);
  {
    std::lock_guard lock(mu_);
    if (auto it = curves_.find(key); it != curves_.end()) return it->second;
  }
  auto c = compute_curve(ds, entity, end, m);
  std::lock_guard lock(mu_);
  return curves_.emplace(key, std::move(c)).first->second;
}

std::vector<double> DayCache::similarity(const Dataset& ds, const std::vector<Candidate>& candidates,
                                         std::int64_t day, const HorizonConfig& cfg) {
  {
    std::lock_guard lock(mu_);
    if (auto it = similarity_.find(day); it != similarity_.end() && it->second.size() == candidates.size())
      return it->second;
  }
  auto d = similarity_distances(ds, candidates, query_anchors(ds, day), cfg);
  std::lock_guard lock(mu_);
  return similarity_.insert_or_assign(day, std::move(d)).first->second;
}

std::int64_t midnight_hour(const EntityRecord& record, std::int64_t day) { return day * 24 - record.start_hour_of_day; }

std::int64_t last_simulated_day(const Dataset& ds) { return static_cast<std::int64_t>(ds.days()) - 1; }

// --- training ----------------------------------------------------------------

namespace {

std::vector<Candidate> all_candidates(const Dataset& ds, std::int64_t labeled_end, const HorizonConfig& hc) {
  std::vector<Candidate> out;
  for (std::size_t e = 0; e < ds.entities.size(); ++e) {
    auto c = enumerate_candidates(ds.entities[e], e, labeled_end, hc);
    out.insert(out.end(), c.begin(), c.end());
  }
  return out;
}

std::vector<TrainingExample> build_examples(const Dataset& ds, std::span<const Candidate> batch,
                                            const HorizonConfig& hc, std::int64_t labeled_end) {
  std::vector<TrainingExample> ex;
  ex.reserve(batch.size());
  for (const auto& c : batch) ex.push_back(make_window(ds.entities[c.entity], c.anchor, hc, labeled_end));
  return ex;
}

void apply_update(SimulationState& s, std::span<const TrainingExample> examples, ModelParams& grad) {
  batch_loss_grad(s.model, examples, s.model.config().gamma, grad);
  if (!grad.all_finite()) throw DataError("non-finite gradient; parameters left unchanged");
  auto& p = s.model.params();
  for (std::size_t i = 0; i < p.tensors.size(); ++i) nn::adam_step(p.tensors[i], grad.tensors[i], s.optimizer[i]);
}

double mean_loss(const Model& model, std::span<const TrainingExample> ex) {
  const auto l = example_losses(model, ex, model.config().gamma);
  double s = 0.0;
  for (double v : l) s += v;
  return s / static_cast<double>(l.size());
}

}  // namespace

SimulationState train_offline(const Dataset& ds, ModelConfig mc, const TrainConfig& tc, const HorizonConfig& hc_in) {
  tc.validate();
  HorizonConfig hc = hc_in;
  hc.label_delay_days = tc.label_delay_days;
  hc.validate();
  if (ds.entities.empty()) throw DataError("dataset has no entities");
  if (static_cast<std::int64_t>(ds.days()) < tc.offline_days)
    throw DataError("dataset spans " + std::to_string(ds.days()) + " days, offline span needs " +
                    std::to_string(tc.offline_days));
  mc.d = static_cast<int>(ds.d);
  mc.k = static_cast<int>(ds.k);
  mc.t_p = hc.t_p;
  mc.horizon = hc.horizon();

  const std::int64_t day = tc.offline_days - 1;
  const std::int64_t labeled_end = labeled_end_hour(day, tc.label_delay_days);
  auto cands = all_candidates(ds, labeled_end, hc);
  if (cands.empty()) throw DataError("no feasible candidates in the offline span");

  if (mc.gamma_auto) {
    std::vector<std::vector<double>> targets;
    targets.reserve(cands.size());
    for (const auto& c : cands) {
      const auto& m = ds.entities[c.entity].metric;
      targets.emplace_back(m.begin() + (c.anchor - hc.t_a), m.begin() + (c.anchor + hc.t_b));
    }
    mc.gamma = mc.gamma_factor * auto_gamma(targets);
  }
  mc.validate();

  SimulationState s(mc);
  s.current_day = day;
  s.horizon = hc;
  s.train = tc;
  Rng init_rng(derive_seed(tc.seed, {1}));
  s.model.initialize(init_rng);
  s.rng.seed(derive_seed(tc.seed, {2}));
  nn::AdamHyper hyper;
  hyper.learning_rate = tc.learning_rate;
  for (const auto& t : s.model.params().tensors) s.optimizer.emplace_back(t, hyper);
  s.curves.assign(ds.entities.size(), {});

  // fixed strided subset for loss monitoring
  std::vector<Candidate> monitor;
  const std::size_t stride = std::max<std::size_t>(1, cands.size() / 512);
  for (std::size_t i = 0; i < cands.size(); i += stride) monitor.push_back(cands[i]);
  const auto monitor_ex = build_examples(ds, monitor, hc, labeled_end);
  s.initial_loss = mean_loss(s.model, monitor_ex);

  auto grad = s.model.params().zeros_like();
  const auto bs = static_cast<std::size_t>(tc.batch_size);
  long steps = 0;
  bool capped = false;
  for (int epoch = 0; epoch < tc.offline_epochs && !capped; ++epoch) {
    for (std::size_t i = cands.size() - 1; i > 0; --i) {
      const auto j = static_cast<std::size_t>(uniform01(s.rng) * static_cast<double>(i + 1));
      std::swap(cands[i], cands[j]);
    }
    for (std::size_t b = 0; b < cands.size(); b += bs) {
      const auto batch = std::span(cands).subspan(b, std::min(bs, cands.size() - b));
      apply_update(s, build_examples(ds, batch, hc, labeled_end), grad);
      if (tc.offline_max_steps > 0 && ++steps >= tc.offline_max_steps) {
        capped = true;
        break;
      }
    }
    s.epoch_losses.push_back(mean_loss(s.model, monitor_ex));
    spdlog::debug("offline epoch {}: monitor loss {}", epoch + 1, s.epoch_losses.back());
  }
  return s;
}

std::vector<PredictionRow> online_step(SimulationState& s, const Dataset& ds, const TrainConfig& tc,
                                       DayCache* day_cache) {
  tc.validate();
  const auto& hc = s.horizon;
  if (tc.label_delay_days != hc.label_delay_days)
    throw ConfigError("label_delay_days differs from the one the state was trained with");
  if (s.curves.size() != ds.entities.size()) throw DataError("state and dataset disagree on the entity count");
  const std::int64_t T = s.current_day + 1;
  if (T > last_simulated_day(ds)) throw RangeError("day " + std::to_string(T) + " lies beyond the dataset");
  s.current_day = T;
  const std::int64_t labeled_end = labeled_end_hour(T, hc.label_delay_days);
  const auto& spec = tc.scheme;

  if (!spec.frozen) {
    const auto cands = all_candidates(ds, labeled_end, hc);
    if (cands.empty()) {
      spdlog::warn("day {}: no labeled candidates, skipping updates", T);
    } else {
      if (spec.needs_errors() || spec.needs_dynamics())
        refresh_error_cache(s.model, ds, hc, labeled_end, T, static_cast<std::size_t>(tc.error_subsample),
                            s.model.config().gamma, s.rng, s.cache, s.dynamics);
      if (spec.temporal == TemporalKind::segment) {
        // segmentation sees only the labeled region
        for (std::size_t e = 0; e < ds.entities.size(); ++e)
          s.curves[e] = day_cache ? day_cache->curve(ds, e, labeled_end, hc.t_p)
                                  : compute_curve(ds, e, labeled_end, hc.t_p);
      }
      std::vector<double> distances;
      if (spec.nontemporal == NonTemporalKind::similar)
        distances = day_cache ? day_cache->similarity(ds, cands, T, hc)
                              : similarity_distances(ds, cands, query_anchors(ds, T), hc);
      const std::int64_t newest = labeled_end - hc.t_b;
      const auto w = combine(temporal_weights(spec, cands, newest, s.curves, hc.t_p),
                             nontemporal_weights(spec, cands, s.cache, s.dynamics, distances));
      auto grad = s.model.params().zeros_like();
      for (int it = 0; it < tc.n_iter; ++it) {
        const auto batch = sample_batch(w, static_cast<std::size_t>(tc.batch_size), s.rng);
        apply_update(s, build_examples(ds, batch, hc, labeled_end), grad);
        s.examples_consumed += batch.size();
      }
    }
  }

  std::vector<PredictionRow> rows;
  for (std::size_t e = 0; e < ds.entities.size(); ++e) {
    const auto& rec = ds.entities[e];
    const std::int64_t anchor = midnight_hour(rec, T);
    ModelInput in;
    try {
      in = make_input(rec, anchor, hc);
    } catch (const RangeError& err) {
      spdlog::warn("day {}: entity {} skipped: {}", T, rec.entity_id, err.what());
      continue;
    }
    const auto pred = s.model.forward(in.input_ts, in.interaction);
    for (std::size_t k = 0; k < pred.m_hat.size(); ++k)
      rows.push_back({T, e, static_cast<int>(k) - hc.t_a, pred.m_hat[k]});
  }
  s.log.insert(s.log.end(), rows.begin(), rows.end());
  return rows;
}

void run_online(SimulationState& s, const Dataset& ds, const TrainConfig& tc, int n_days, DayCache* day_cache) {
  if (n_days < 0) throw ConfigError("days must be >= 0");
  if (s.current_day + n_days > last_simulated_day(ds))
    throw DataError("span mismatch: " + std::to_string(n_days) + " online days from day " +
                    std::to_string(s.current_day + 1) + " exceed the dataset's " + std::to_string(ds.days()) +
                    " days");
  for (int i = 0; i < n_days; ++i) online_step(s, ds, tc, day_cache);
}

SimulationState run_simulation(const Dataset& ds, const ModelConfig& mc, const TrainConfig& tc,
                               const HorizonConfig& hc, int n_days, DayCache* day_cache) {
  if (n_days < 0 || n_days > static_cast<std::int64_t>(ds.days()) - tc.offline_days)
    throw DataError("span mismatch: " + std::to_string(n_days) + " online days do not fit after a " +
                    std::to_string(tc.offline_days) + "-day offline span in " + std::to_string(ds.days()) +
                    " days");
  auto s = train_offline(ds, mc, tc, hc);
  run_online(s, ds, tc, n_days, day_cache);
  return s;
}

// --- prediction log ----------------------------------------------------------

void write_prediction_log(const std::filesystem::path& path, const std::vector<PredictionRow>& log,
                          const Dataset& ds, std::int64_t as_of_day, int label_delay_days) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  const std::int64_t known = labeled_end_hour(as_of_day, label_delay_days);
  out << "day,entity_id,offset,predicted,actual_when_available\n";
  for (const auto& r : log) {
    const auto& rec = ds.entities.at(r.entity);
    const std::int64_t h = midnight_hour(rec, r.day) + r.offset;
    out << r.day << ',' << rec.entity_id << ',' << r.offset << ',' << format_double(r.predicted) << ',';
    if (h >= 0 && h < known && h < static_cast<std::int64_t>(rec.hours()))
      out << format_double(rec.metric[static_cast<std::size_t>(h)]);
    out << '\n';
  }
  if (!out) throw DataError("failed writing " + path.string());
}

std::vector<PredictionRow> read_prediction_log(const std::filesystem::path& path, const Dataset& ds) {
  std::ifstream in(path);
  const std::string file = path.string();
  if (!in) throw ParseError(file, 0, "cannot open file");
  std::string line;
  if (!std::getline(in, line) || line != "day,entity_id,offset,predicted,actual_when_available")
    throw ParseError(file, 1, "expected header 'day,entity_id,offset,predicted,actual_when_available'");
  std::vector<PredictionRow> rows;
  long lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (line.back() == ',') f.emplace_back();
    if (f.size() != 5) throw ParseError(file, lineno, "expected 5 columns");
    try {
      PredictionRow r;
      std::size_t pos = 0;
      r.day = std::stoll(f[0], &pos);
      if (pos != f[0].size()) throw std::invalid_argument("day");
      r.entity = ds.index_of(f[1]);
      r.offset = std::stoi(f[2], &pos);
      if (pos != f[2].size()) throw std::invalid_argument("offset");
      r.predicted = std::stod(f[3], &pos);
      if (pos != f[3].size()) throw std::invalid_argument("predicted");
      rows.push_back(r);
    } catch (const std::exception& e) {
      throw ParseError(file, lineno, std::string("bad row: ") + e.what());
    }
  }
  return rows;
}

// --- checkpoint --------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'M', 'H', 'F', 'C', 'K', 'P', 'T', '\0'};

std::uint64_t fnv1a(const char* p, std::size_t n) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= static_cast<unsigned char>(p[i]);
    h *= 0x100000001b3ULL;
  }
  return h;
}

class Writer {
 public:
  template <class T>
  void put(T v) {
    char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    buf.append(b, sizeof(T));
  }
  void put_doubles(std::span<const double> v) {
    put<std::uint64_t>(v.size());
    buf.append(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(double));
  }
  void put_string(const std::string& s) {
    put<std::uint64_t>(s.size());
    buf += s;
  }
  std::string buf;
};

class Reader {
 public:
  Reader(const std::string& b, std::size_t end) : buf_(b), end_(end) {}
  template <class T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, buf_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::size_t get_size() {
    const auto n = get<std::uint64_t>();
    if (n > end_) throw IntegrityError("checkpoint length field out of range");
    return static_cast<std::size_t>(n);
  }
  std::vector<double> get_doubles() {
    const auto n = get_size();
    need(n * sizeof(double));
    std::vector<double> v(n);
    std::memcpy(v.data(), buf_.data() + pos_, n * sizeof(double));
    pos_ += n * sizeof(double);
    return v;
  }
  std::string get_string() {
    const auto n = get_size();
    need(n);
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == end_; }

 private:
  void need(std::size_t n) const {
    if (n > end_ - pos_) throw IntegrityError("checkpoint truncated");
  }
  const std::string& buf_;
  std::size_t end_;
  std::size_t pos_ = 0;
};

void put_candidate(Writer& w, const Candidate& c) {
  w.put<std::uint64_t>(c.entity);
  w.put<std::int64_t>(c.anchor);
}

Candidate get_candidate(Reader& r) {
  Candidate c;
  c.entity = r.get<std::uint64_t>();
  c.anchor = r.get<std::int64_t>();
  return c;
}

nlohmann::json horizon_json(const HorizonConfig& h) {
  return {{"t_p", h.t_p}, {"t_a", h.t_a}, {"t_b", h.t_b}, {"label_delay_days", h.label_delay_days}};
}

}  // namespace

void save_checkpoint(const SimulationState& s, const std::filesystem::path& path) {
  Writer w;
  w.buf.append(kMagic, sizeof kMagic);
  w.put<std::uint32_t>(checkpoint_version);
  const nlohmann::json header{{"model", to_json(s.model.config())},
                              {"train", to_json(s.train)},
                              {"horizon", horizon_json(s.horizon)},
                              {"current_day", s.current_day},
                              {"examples_consumed", s.examples_consumed}};
  w.put_string(header.dump());
  w.put<double>(s.model.config().gamma);

  const auto& p = s.model.params();
  w.put<std::uint64_t>(p.tensors.size());
  for (const auto& t : p.tensors) w.put_doubles(t.values);
  for (const auto& a : s.optimizer) {
    w.put<std::int64_t>(a.step_count);
    w.put_doubles(a.first_moment.values);
    w.put_doubles(a.second_moment.values);
  }
  std::ostringstream rng_text;
  rng_text << s.rng;
  w.put_string(rng_text.str());

  w.put<std::uint64_t>(s.cache.slots.size());
  for (const auto& c : s.cache.slots) put_candidate(w, c);
  w.put_doubles(s.cache.errors);
  w.put<std::uint64_t>(s.cache.streamed);
  w.put<std::int64_t>(s.cache.streamed_end);
  w.put<std::int64_t>(s.cache.refreshed_day);

  w.put<std::uint64_t>(s.dynamics.capacity);
  w.put<std::uint64_t>(s.dynamics.snapshots.size());
  for (const auto& [c, q] : s.dynamics.snapshots) {
    put_candidate(w, c);
    w.put_doubles(std::vector<double>(q.begin(), q.end()));
  }

  w.put<std::uint64_t>(s.curves.size());
  for (const auto& c : s.curves) w.put_doubles(c);

  w.put<std::uint64_t>(s.log.size());
  for (const auto& r : s.log) {
    w.put<std::int64_t>(r.day);
    w.put<std::uint64_t>(r.entity);
    w.put<std::int32_t>(r.offset);
    w.put<double>(r.predicted);
  }
  w.put<double>(s.initial_loss);
  w.put_doubles(s.epoch_losses);
  w.put<std::uint64_t>(fnv1a(w.buf.data(), w.buf.size()));

  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + tmp);
    out.write(w.buf.data(), static_cast<std::streamsize>(w.buf.size()));
    if (!out) throw DataError("failed writing " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

SimulationState load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  const std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (buf.size() < sizeof kMagic + 4 + 8 || std::memcmp(buf.data(), kMagic, sizeof kMagic) != 0)
    throw IntegrityError(path.string() + ": not a checkpoint file (bad magic)");
  std::uint32_t version;
  std::memcpy(&version, buf.data() + sizeof kMagic, 4);
  if (version != checkpoint_version)
    throw VersionError(path.string() + ": checkpoint format version " + std::to_string(version) +
                       ", this build reads version " + std::to_string(checkpoint_version));
  const std::size_t body = buf.size() - 8;
  std::uint64_t stored;
  std::memcpy(&stored, buf.data() + body, 8);
  if (stored != fnv1a(buf.data(), body)) throw IntegrityError(path.string() + ": checksum mismatch");

  try {
    Reader r(buf, body);
    for (std::size_t i = 0; i < sizeof kMagic + 4; ++i) r.get<char>();
    const auto header = nlohmann::json::parse(r.get_string());
    auto mc = model_config_from_json(header.at("model"));
    mc.gamma = r.get<double>();
    SimulationState s(mc);
    s.train = train_config_from_json(header.at("train"));
    const auto& h = header.at("horizon");
    s.horizon.t_p = h.at("t_p").get<int>();
    s.horizon.t_a = h.at("t_a").get<int>();
    s.horizon.t_b = h.at("t_b").get<int>();
    s.horizon.label_delay_days = h.at("label_delay_days").get<int>();
    s.current_day = header.at("current_day").get<std::int64_t>();
    s.examples_consumed = header.at("examples_consumed").get<std::uint64_t>();

    auto& p = s.model.params();
    if (r.get<std::uint64_t>() != p.tensors.size()) throw IntegrityError("parameter count does not match the model");
    for (auto& t : p.tensors) {
      auto v = r.get_doubles();
      if (v.size() != t.size()) throw IntegrityError("parameter size does not match the model");
      t.values = std::move(v);
    }
    nn::AdamHyper hyper;
    hyper.learning_rate = s.train.learning_rate;
    for (const auto& t : p.tensors) {
      nn::AdamState a(t, hyper);
      a.step_count = r.get<std::int64_t>();
      a.first_moment.values = r.get_doubles();
      a.second_moment.values = r.get_doubles();
      if (a.first_moment.size() != t.size() || a.second_moment.size() != t.size())
        throw IntegrityError("optimizer moment size does not match the model");
      s.optimizer.push_back(std::move(a));
    }
    std::istringstream rng_text(r.get_string());
    rng_text >> s.rng;
    if (!rng_text) throw IntegrityError("bad RNG state");

    const auto n_slots = r.get_size();
    for (std::size_t i = 0; i < n_slots; ++i) s.cache.slots.push_back(get_candidate(r));
    s.cache.errors = r.get_doubles();
    if (s.cache.errors.size() != n_slots) throw IntegrityError("error cache sizes disagree");
    s.cache.streamed = r.get<std::uint64_t>();
    s.cache.streamed_end = r.get<std::int64_t>();
    s.cache.refreshed_day = r.get<std::int64_t>();

    s.dynamics.capacity = r.get_size();
    const auto n_dyn = r.get_size();
    for (std::size_t i = 0; i < n_dyn; ++i) {
      const auto c = get_candidate(r);
      const auto v = r.get_doubles();
      s.dynamics.snapshots[c] = std::deque<double>(v.begin(), v.end());
    }

    s.curves.resize(r.get_size());
    for (auto& c : s.curves) c = r.get_doubles();

    const auto n_log = r.get_size();
    s.log.reserve(n_log);
    for (std::size_t i = 0; i < n_log; ++i) {
      PredictionRow row;
      row.day = r.get<std::int64_t>();
      row.entity = r.get<std::uint64_t>();
      row.offset = r.get<std::int32_t>();
      row.predicted = r.get<double>();
      s.log.push_back(row);
    }
    s.initial_loss = r.get<double>();
    s.epoch_losses = r.get_doubles();
    if (!r.done()) throw IntegrityError("trailing bytes in checkpoint");
    return s;
  } catch (const IntegrityError&) {
    throw;
  } catch (const std::exception& e) {
    throw IntegrityError(path.string() + ": malformed checkpoint: " + e.what());
  }
}

}  // namespace mhf
