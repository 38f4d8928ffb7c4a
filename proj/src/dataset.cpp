#include "mhf/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>

#include "mhf/errors.hpp"

namespace mhf {

namespace fs = std::filesystem;

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::size_t Dataset::index_of(const std::string& entity_id) const {
  for (std::size_t i = 0; i < entities.size(); ++i) {
    if (entities[i].entity_id == entity_id) return i;
  }
  throw DataError("unknown entity '" + entity_id + "'");
}

namespace {

std::vector<std::string_view> split(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    auto pos = line.find(',', start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

double parse_number(std::string_view s, const std::string& file, long line) {
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw ParseError(file, line, "not a number: '" + std::string(s) + "'");
  }
  return v;
}

long parse_int(std::string_view s, const std::string& file, long line) {
  long v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw ParseError(file, line, "not an integer: '" + std::string(s) + "'");
  }
  return v;
}

std::ifstream open_or_throw(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw ParseError(p.string(), 0, "cannot open file");
  return in;
}

void strip_cr(std::string& s) {
  if (!s.empty() && s.back() == '\r') s.pop_back();
}

EntityRecord read_entity(const fs::path& p, const std::string& id) {
  const std::string file = p.string();
  auto in = open_or_throw(p);
  std::string line;
  if (!std::getline(in, line)) throw ParseError(file, 1, "missing header");
  strip_cr(line);
  auto header = split(line);
  if (header.size() < 2 || header.front() != "hour" || header.back() != "metric") {
    throw ParseError(file, 1, "expected header 'hour,f0..,metric'");
  }
  const std::size_t d = header.size() - 2;
  for (std::size_t j = 0; j < d; ++j) {
    if (header[j + 1] != "f" + std::to_string(j)) throw ParseError(file, 1, "bad feature column name");
  }
  std::vector<double> feat;
  std::vector<double> metric;
  long lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    strip_cr(line);
    if (line.empty()) continue;
    auto cols = split(line);
    if (cols.size() != d + 2) throw ParseError(file, lineno, "expected " + std::to_string(d + 2) + " columns");
    const long hour = parse_int(cols[0], file, lineno);
    if (hour != static_cast<long>(metric.size())) throw ParseError(file, lineno, "hours must be consecutive from 0");
    for (std::size_t j = 0; j < d; ++j) feat.push_back(parse_number(cols[j + 1], file, lineno));
    metric.push_back(parse_number(cols[d + 1], file, lineno));
  }
  EntityRecord rec;
  rec.entity_id = id;
  rec.features = Matrix(metric.size(), d);
  std::copy(feat.begin(), feat.end(), rec.features.values().begin());
  rec.metric = std::move(metric);
  return rec;
}

}  // namespace

Dataset load_dataset(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw ParseError(dir.string(), 0, "not a dataset directory");
  Dataset ds;
  {
    const auto meta_path = dir / "meta.json";
    auto in = open_or_throw(meta_path);
    try {
      ds.meta = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(meta_path.string(), 0, e.what());
    }
  }
  std::vector<std::pair<std::string, fs::path>> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const auto name = entry.path().filename().string();
    if (name.rfind("entity_", 0) == 0 && entry.path().extension() == ".csv") {
      files.emplace_back(name.substr(7, name.size() - 7 - 4), entry.path());
    }
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw ParseError(dir.string(), 0, "no entity_<id>.csv files");
  std::map<std::string, std::size_t> index;
  for (const auto& [id, path] : files) {
    index[id] = ds.entities.size();
    ds.entities.push_back(read_entity(path, id));
  }
  ds.d = ds.entities.front().dims();
  ds.hours = ds.entities.front().hours();
  for (const auto& e : ds.entities) {
    if (e.dims() != ds.d || e.hours() != ds.hours) {
      throw ParseError((dir / ("entity_" + e.entity_id + ".csv")).string(), 0, "shape differs from other entities");
    }
  }

  const auto inter_path = dir / "interactions.csv";
  const std::string file = inter_path.string();
  auto in = open_or_throw(inter_path);
  std::string line;
  if (!std::getline(in, line)) throw ParseError(file, 1, "missing header");
  strip_cr(line);
  auto header = split(line);
  if (header.size() < 3 || header[0] != "day" || header[1] != "entity_id") {
    throw ParseError(file, 1, "expected header 'day,entity_id,c0..'");
  }
  ds.k = header.size() - 2;
  const std::size_t n_days = (ds.hours + 23) / 24;
  for (auto& e : ds.entities) e.interactions.assign(n_days, {});
  long lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    strip_cr(line);
    if (line.empty()) continue;
    auto cols = split(line);
    if (cols.size() != ds.k + 2) throw ParseError(file, lineno, "expected " + std::to_string(ds.k + 2) + " columns");
    const long day = parse_int(cols[0], file, lineno);
    auto it = index.find(std::string(cols[1]));
    if (it == index.end()) throw ParseError(file, lineno, "unknown entity '" + std::string(cols[1]) + "'");
    if (day < 0 || day >= static_cast<long>(n_days)) throw ParseError(file, lineno, "day out of range");
    std::vector<double> v(ds.k);
    for (std::size_t j = 0; j < ds.k; ++j) {
      v[j] = parse_number(cols[j + 2], file, lineno);
      if (v[j] < 0.0) throw ParseError(file, lineno, "negative interaction count");
    }
    ds.entities[it->second].interactions[static_cast<std::size_t>(day)] = std::move(v);
  }
  for (const auto& e : ds.entities) {
    for (std::size_t day = 0; day < n_days; ++day) {
      if (e.interactions[day].size() != ds.k) {
        throw ParseError(file, 0, "missing snapshot for entity " + e.entity_id + " day " + std::to_string(day));
      }
    }
    e.validate();
  }
  return ds;
}

void write_dataset(const fs::path& dir, const Dataset& ds) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw DataError("cannot create output directory " + dir.string());
  auto open_out = [](const fs::path& p) {
    std::ofstream out(p, std::ios::binary);
    if (!out) throw DataError("cannot write " + p.string());
    return out;
  };
  for (const auto& e : ds.entities) {
    auto out = open_out(dir / ("entity_" + e.entity_id + ".csv"));
    out << "hour";
    for (std::size_t j = 0; j < e.dims(); ++j) out << ",f" << j;
    out << ",metric\n";
    std::string row;
    for (std::size_t t = 0; t < e.hours(); ++t) {
      row = std::to_string(t);
      for (double v : e.features.row(t)) {
        row += ',';
        row += format_double(v);
      }
      row += ',';
      row += format_double(e.metric[t]);
      row += '\n';
      out << row;
    }
  }
  {
    auto out = open_out(dir / "interactions.csv");
    out << "day,entity_id";
    for (std::size_t j = 0; j < ds.k; ++j) out << ",c" << j;
    out << '\n';
    const std::size_t n_days = ds.entities.empty() ? 0 : ds.entities.front().interactions.size();
    for (std::size_t day = 0; day < n_days; ++day) {
      for (const auto& e : ds.entities) {
        out << day << ',' << e.entity_id;
        for (double v : e.interactions[day]) out << ',' << format_double(v);
        out << '\n';
      }
    }
  }
  auto out = open_out(dir / "meta.json");
  out << ds.meta.dump(2) << '\n';
}

DatasetSummary describe(const Dataset& ds) {
  DatasetSummary s;
  s.entity_count = ds.entities.size();
  s.hours = ds.hours;
  s.days = ds.hours / 24;
  s.d = ds.d;
  s.k = ds.k;
  if (ds.meta.contains("drift")) {
    s.drift_kind = ds.meta["drift"].value("kind", "none");
    s.drift_hour = ds.meta["drift"].value("hour", -1L);
  } else {
    s.drift_kind = "none";
  }
  for (std::size_t j = 0; j <= ds.d; ++j) {
    ChannelStats c;
    c.name = j < ds.d ? "f" + std::to_string(j) : "metric";
    double sum = 0.0;
    double sq = 0.0;
    double n = 0.0;
    c.min = INFINITY;
    c.max = -INFINITY;
    for (const auto& e : ds.entities) {
      for (std::size_t t = 0; t < e.hours(); ++t) {
        const double v = j < ds.d ? e.features(t, j) : e.metric[t];
        sum += v;
        sq += v * v;
        n += 1.0;
        c.min = std::min(c.min, v);
        c.max = std::max(c.max, v);
      }
    }
    c.mean = n > 0 ? sum / n : 0.0;
    c.stddev = n > 0 ? std::sqrt(std::max(0.0, sq / n - c.mean * c.mean)) : 0.0;
    s.channels.push_back(c);
  }
  return s;
}

DatasetSummary describe(const fs::path& dir) { return describe(load_dataset(dir)); }

void print_summary(std::ostream& os, const DatasetSummary& s) {
  os << "entities: " << s.entity_count << '\n'
     << "span: " << s.hours << " hours (" << s.days << " days)\n"
     << "d: " << s.d << "  k: " << s.k << '\n'
     << "drift: " << s.drift_kind;
  if (s.drift_hour >= 0) os << " at hour " << s.drift_hour;
  os << '\n' << "channel,mean,std,min,max\n";
  for (const auto& c : s.channels) {
    os << c.name << ',' << format_double(c.mean) << ',' << format_double(c.stddev) << ','
       << format_double(c.min) << ',' << format_double(c.max) << '\n';
  }
}

}  // namespace mhf
