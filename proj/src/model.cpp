#include "mhf/model.hpp"
#include "mhf/parallel.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>

#include "mhf/errors.hpp"

namespace mhf {

using nn::Tensor;

std::string to_string(Variant v) {
  switch (v) {
    case Variant::base: return "base";
    case Variant::base_inter: return "base_inter";
    case Variant::proposed: return "proposed";
  }
  return "proposed";
}

Variant parse_variant(const std::string& s) {
  if (s == "base") return Variant::base;
  if (s == "base_inter") return Variant::base_inter;
  if (s == "proposed") return Variant::proposed;
  throw ConfigError("unknown model variant '" + s + "' (expected base, base_inter, proposed)");
}

void ModelConfig::validate() const {
  if (n_k < 1 || channels < 1) throw ConfigError("n_k and channels must be >= 1");
  if (kernel_width < 1) throw ConfigError("kernel_width must be >= 1");
  if (n_blocks < 1) throw ConfigError("n_blocks must be >= 1");
  if (n_basis < 1) throw ConfigError("n_basis must be >= 1");
  if (horizon < 1) throw ConfigError("horizon must be >= 1");
  if (d < 1) throw ConfigError("d must be >= 1");
  if (t_p < 1) throw ConfigError("t_p must be >= 1");
  if (variant != Variant::base && k < 1) throw ConfigError("k must be >= 1 for interaction variants");
  if (!std::isfinite(gamma) || gamma < 0.0) throw ConfigError("gamma must be finite and >= 0");
  if (!std::isfinite(gamma_factor) || gamma_factor <= 0.0) throw ConfigError("gamma_factor must be finite and > 0");
}

nlohmann::json to_json(const ModelConfig& c) {
  return {{"variant", to_string(c.variant)}, {"n_k", c.n_k},         {"channels", c.channels},
          {"kernel_width", c.kernel_width},  {"n_blocks", c.n_blocks}, {"n_basis", c.n_basis},
          {"horizon", c.horizon},            {"d", c.d},               {"k", c.k},
          {"t_p", c.t_p},                    {"gamma_auto", c.gamma_auto}, {"gamma_factor", c.gamma_factor},
          {"gamma", c.gamma}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  for (const auto& [key, v] : j.items()) {
    if (key == "variant") c.variant = parse_variant(v.get<std::string>());
    else if (key == "n_k") c.n_k = v.get<int>();
    else if (key == "channels") c.channels = v.get<int>();
    else if (key == "kernel_width") c.kernel_width = v.get<int>();
    else if (key == "n_blocks") c.n_blocks = v.get<int>();
    else if (key == "n_basis") c.n_basis = v.get<int>();
    else if (key == "horizon") c.horizon = v.get<int>();
    else if (key == "d") c.d = v.get<int>();
    else if (key == "k") c.k = v.get<int>();
    else if (key == "t_p") c.t_p = v.get<int>();
    else if (key == "gamma") {
      if (v.is_string()) {
        if (v.get<std::string>() != "auto") throw ConfigError("gamma must be a number or \"auto\"");
        c.gamma_auto = true;
      } else {
        c.gamma = v.get<double>();
        c.gamma_auto = false;
      }
    } else if (key == "gamma_auto") c.gamma_auto = v.get<bool>();
    else if (key == "gamma_factor") c.gamma_factor = v.get<double>();
    else throw ConfigError("unknown model key '" + key + "'");
  }
  return c;
}

// --- ModelParams -------------------------------------------------------------

std::size_t ModelParams::total_size() const {
  std::size_t n = 0;
  for (const auto& t : tensors) n += t.size();
  return n;
}

ModelParams ModelParams::zeros_like() const {
  ModelParams out;
  out.names = names;
  for (const auto& t : tensors) out.tensors.emplace_back(t.shape);
  return out;
}

void ModelParams::set_zero() {
  for (auto& t : tensors) t.fill(0.0);
}

std::vector<double> ModelParams::flatten() const {
  std::vector<double> out;
  out.reserve(total_size());
  for (const auto& t : tensors) out.insert(out.end(), t.values.begin(), t.values.end());
  return out;
}

void ModelParams::unflatten(std::span<const double> flat) {
  if (flat.size() != total_size()) throw ShapeError("unflatten: length mismatch");
  std::size_t off = 0;
  for (auto& t : tensors) {
    std::copy(flat.begin() + static_cast<std::ptrdiff_t>(off), flat.begin() + static_cast<std::ptrdiff_t>(off + t.size()),
              t.values.begin());
    off += t.size();
  }
}

bool ModelParams::all_finite() const {
  return std::all_of(tensors.begin(), tensors.end(), [](const Tensor& t) { return t.all_finite(); });
}

std::size_t ModelParams::index(const std::string& name) const {
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i] == name) return i;
  throw ShapeError("no parameter named '" + name + "'");
}

// --- construction ----------------------------------------------------------

namespace {

void add_param(ModelParams& p, std::string name, std::vector<std::size_t> shape) {
  p.names.push_back(std::move(name));
  p.tensors.emplace_back(std::move(shape));
}

void add_linear(ModelParams& p, const std::string& name, std::size_t n_in, std::size_t n_out) {
  add_param(p, name + ".W", {n_in, n_out});
  add_param(p, name + ".b", {n_out});
}

ModelParams build_layout(const ModelConfig& c) {
  ModelParams p;
  const auto C = static_cast<std::size_t>(c.channels);
  const auto w = static_cast<std::size_t>(c.kernel_width);
  const auto nk = static_cast<std::size_t>(c.n_k);
  const auto h = static_cast<std::size_t>(c.horizon);
  for (int b = 0; b < c.n_blocks; ++b) {
    const std::string pre = "tcn." + std::to_string(b);
    const std::size_t cin = b == 0 ? static_cast<std::size_t>(c.d) : C;
    add_param(p, pre + ".conv_a.K", {C, cin, w});
    add_param(p, pre + ".conv_a.b", {C});
    add_param(p, pre + ".conv_b.K", {C, C, w});
    add_param(p, pre + ".conv_b.b", {C});
    if (b == 0) {
      add_param(p, pre + ".res.K", {C, cin, 1});
      add_param(p, pre + ".res.b", {C});
    }
  }
  switch (c.variant) {
    case Variant::base:
      add_linear(p, "head", C, h);
      break;
    case Variant::base_inter:
      add_param(p, "emb.C", {static_cast<std::size_t>(c.k), nk});
      add_linear(p, "top.1", C, nk);
      add_linear(p, "top.2", nk, nk);
      add_linear(p, "wgen.1", nk, nk);
      add_linear(p, "wgen.2", nk, nk * h);
      break;
    case Variant::proposed: {
      const auto nb = static_cast<std::size_t>(c.n_basis);
      add_param(p, "emb.C", {static_cast<std::size_t>(c.k), nk});
      add_linear(p, "scale.top.1", C, nk);
      add_linear(p, "scale.top.2", nk, nk);
      add_linear(p, "scale.w.1", nk, nk);
      add_linear(p, "scale.w.2", nk, 2 * nk);
      add_linear(p, "shape.mix.1", C, nk);
      add_linear(p, "shape.mix.2", nk, nb);
      add_linear(p, "shape.bank.1", nk, nk);
      add_linear(p, "shape.bank.2", nk, nb * h);
      break;
    }
  }
  return p;
}

// Sequential cursor over the declaration order; forward and backward walk it identically.
struct Cursor {
  std::size_t i = 0;
  std::size_t next() { return i++; }
};

struct BlockCache {
  Matrix a, b, out;
};

struct Cache {
  std::vector<BlockCache> blocks;
  std::vector<double> h_T;
  std::vector<double> ibar, h_I;
  // top passage on h_T (scale top / base_inter top / shape mixer hidden)
  std::vector<double> t1, t2;
  // passage on h_I generating W or the bank
  std::vector<double> u1, wflat;
  // shape decoder
  std::vector<double> p1, mix, q1, bank;
  Prediction pred;
};

struct LinearRef {
  std::size_t W, b;
};

LinearRef take_linear(Cursor& c) {
  LinearRef r{c.next(), 0};
  r.b = c.next();
  return r;
}

void linear(const ModelParams& p, LinearRef r, std::span<const double> x, std::vector<double>& y) {
  y.resize(p.tensors[r.W].shape[1]);
  nn::dense_forward(x, p.tensors[r.W], p.tensors[r.b], y);
}

void linear_relu(const ModelParams& p, LinearRef r, std::span<const double> x, std::vector<double>& y) {
  linear(p, r, x, y);
  nn::relu_inplace(y);
}

// dy is the gradient w.r.t. the layer output (post-activation when `y_post` is given).
std::vector<double> linear_back(const ModelParams& p, ModelParams& g, LinearRef r, std::span<const double> x,
                                std::vector<double> dy, const std::vector<double>* y_post, bool want_dx) {
  if (y_post) nn::relu_backward(*y_post, dy, dy);
  std::vector<double> dx(want_dx ? x.size() : 0);
  nn::dense_backward(x, p.tensors[r.W], dy, dx, g.tensors[r.W], g.tensors[r.b]);
  return dx;
}

void temporal_forward(const ModelConfig& cfg, const ModelParams& p, const Matrix& x, Cache& c) {
  if (x.cols() != static_cast<std::size_t>(cfg.d) || x.rows() == 0) {
    throw ShapeError("temporal_encode: input must be time x d with d=" + std::to_string(cfg.d));
  }
  c.blocks.resize(static_cast<std::size_t>(cfg.n_blocks));
  Cursor cur;
  const Matrix* in = &x;
  for (int b = 0; b < cfg.n_blocks; ++b) {
    auto& bc = c.blocks[static_cast<std::size_t>(b)];
    const auto ka = cur.next(), ba = cur.next(), kb = cur.next(), bb = cur.next();
    nn::conv1d_causal_forward(*in, p.tensors[ka], p.tensors[ba], bc.a);
    nn::relu_inplace(bc.a.values());
    nn::conv1d_causal_forward(bc.a, p.tensors[kb], p.tensors[bb], bc.b);
    nn::relu_inplace(bc.b.values());
    if (b == 0) {
      const auto kr = cur.next(), br = cur.next();
      nn::conv1d_causal_forward(*in, p.tensors[kr], p.tensors[br], bc.out);
    } else {
      bc.out = *in;
    }
    auto out = bc.out.values();
    auto bv = bc.b.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::max(0.0, out[i] + bv[i]);
    in = &bc.out;
  }
  c.h_T = nn::global_avg_pool_time(*in);
}

void temporal_backward(const ModelConfig& cfg, const ModelParams& p, ModelParams& g, const Matrix& x,
                       const Cache& c, std::span<const double> dh_T, Matrix* d_input) {
  const auto nb = static_cast<std::size_t>(cfg.n_blocks);
  // Parameter indices per block in declaration order.
  std::vector<std::array<std::size_t, 6>> idx(nb);
  Cursor cur;
  for (std::size_t b = 0; b < nb; ++b) {
    for (std::size_t j = 0; j < 4; ++j) idx[b][j] = cur.next();
    if (b == 0) {
      idx[b][4] = cur.next();
      idx[b][5] = cur.next();
    }
  }
  Matrix d_out(c.blocks.back().out.rows(), c.blocks.back().out.cols());
  nn::global_avg_pool_time_backward(dh_T, d_out);
  Matrix d_pre, d_b, d_a, d_in;
  for (std::size_t bi = nb; bi-- > 0;) {
    const auto& bc = c.blocks[bi];
    const Matrix& in = bi == 0 ? x : c.blocks[bi - 1].out;
    d_pre = d_out;
    nn::relu_backward(bc.out.values(), d_pre.values(), d_pre.values());
    d_b = d_pre;
    nn::relu_backward(bc.b.values(), d_b.values(), d_b.values());
    nn::conv1d_causal_backward(bc.a, p.tensors[idx[bi][2]], d_b, &d_a, g.tensors[idx[bi][2]], g.tensors[idx[bi][3]]);
    nn::relu_backward(bc.a.values(), d_a.values(), d_a.values());
    const bool need_dx = bi > 0 || d_input != nullptr;
    nn::conv1d_causal_backward(in, p.tensors[idx[bi][0]], d_a, need_dx ? &d_in : nullptr, g.tensors[idx[bi][0]],
                               g.tensors[idx[bi][1]]);
    if (bi == 0) {
      Matrix d_res;
      nn::conv1d_causal_backward(in, p.tensors[idx[bi][4]], d_pre, d_input ? &d_res : nullptr, g.tensors[idx[bi][4]],
                                 g.tensors[idx[bi][5]]);
      if (d_input) {
        auto di = d_in.values();
        auto dr = d_res.values();
        for (std::size_t i = 0; i < di.size(); ++i) di[i] += dr[i];
        *d_input = d_in;
      }
    } else {
      auto di = d_in.values();
      auto dp = d_pre.values();
      for (std::size_t i = 0; i < di.size(); ++i) di[i] += dp[i];
      d_out = d_in;
    }
  }
}

std::size_t temporal_param_count(const ModelConfig& cfg) { return 4 * static_cast<std::size_t>(cfg.n_blocks) + 2; }

void forward_all(const ModelConfig& cfg, const ModelParams& p, const Matrix& x, std::span<const double> inter,
                 Cache& c) {
  temporal_forward(cfg, p, x, c);
  const auto h = static_cast<std::size_t>(cfg.horizon);
  Cursor cur{temporal_param_count(cfg)};
  Prediction& pred = c.pred;
  pred = Prediction{};
  if (cfg.variant == Variant::base) {
    linear(p, take_linear(cur), c.h_T, pred.m_hat);
    return;
  }
  const auto emb = cur.next();
  c.h_I = interaction_encode(inter, p.tensors[emb]);
  {
    double s = std::accumulate(inter.begin(), inter.end(), 0.0);
    c.ibar.resize(inter.size());
    for (std::size_t i = 0; i < inter.size(); ++i) c.ibar[i] = inter[i] / s;
  }
  const auto nk = static_cast<std::size_t>(cfg.n_k);
  if (cfg.variant == Variant::base_inter) {
    const auto l1 = take_linear(cur), l2 = take_linear(cur), l3 = take_linear(cur), l4 = take_linear(cur);
    linear_relu(p, l1, c.h_T, c.t1);
    linear_relu(p, l2, c.t1, c.t2);
    linear_relu(p, l3, c.h_I, c.u1);
    linear(p, l4, c.u1, c.wflat);
    pred.m_hat.assign(h, 0.0);
    for (std::size_t i = 0; i < nk; ++i) {
      const double ai = c.t2[i];
      if (ai == 0.0) continue;
      for (std::size_t t = 0; t < h; ++t) pred.m_hat[t] += ai * c.wflat[i * h + t];
    }
    return;
  }
  const auto s1 = take_linear(cur), s2 = take_linear(cur), s3 = take_linear(cur), s4 = take_linear(cur);
  const auto m1 = take_linear(cur), m2 = take_linear(cur), b1 = take_linear(cur), b2 = take_linear(cur);
  linear_relu(p, s1, c.h_T, c.t1);
  linear_relu(p, s2, c.t1, c.t2);
  linear_relu(p, s3, c.h_I, c.u1);
  linear(p, s4, c.u1, c.wflat);
  pred.sigma = 0.0;
  pred.mu = 0.0;
  for (std::size_t i = 0; i < nk; ++i) {
    pred.sigma += c.t2[i] * c.wflat[2 * i];
    pred.mu += c.t2[i] * c.wflat[2 * i + 1];
  }
  const auto nb = static_cast<std::size_t>(cfg.n_basis);
  linear_relu(p, m1, c.h_T, c.p1);
  std::vector<double> logits;
  linear(p, m2, c.p1, logits);
  c.mix = nn::softmax(logits);
  linear_relu(p, b1, c.h_I, c.q1);
  linear(p, b2, c.q1, c.bank);
  pred.has_shape = true;
  pred.mix_weights = c.mix;
  pred.bank = Matrix(nb, h);
  std::copy(c.bank.begin(), c.bank.end(), pred.bank.values().begin());
  pred.shape.assign(h, 0.0);
  for (std::size_t b = 0; b < nb; ++b)
    for (std::size_t t = 0; t < h; ++t) pred.shape[t] += c.mix[b] * c.bank[b * h + t];
  pred.m_hat.resize(h);
  for (std::size_t t = 0; t < h; ++t) pred.m_hat[t] = pred.shape[t] * pred.sigma + pred.mu;
}

void backward_all(const ModelConfig& cfg, const ModelParams& p, ModelParams& g, const Matrix& x, const Cache& c,
                  std::span<const double> d_mhat, std::span<const double> d_shape_direct, Matrix* d_input) {
  const auto h = static_cast<std::size_t>(cfg.horizon);
  const auto nk = static_cast<std::size_t>(cfg.n_k);
  Cursor cur{temporal_param_count(cfg)};
  std::vector<double> dh_T(c.h_T.size(), 0.0);
  auto add_into = [](std::vector<double>& acc, const std::vector<double>& v) {
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += v[i];
  };
  if (cfg.variant == Variant::base) {
    const auto head = take_linear(cur);
    dh_T = linear_back(p, g, head, c.h_T, {d_mhat.begin(), d_mhat.end()}, nullptr, true);
    temporal_backward(cfg, p, g, x, c, dh_T, d_input);
    return;
  }
  const auto emb = cur.next();
  std::vector<double> dh_I(nk, 0.0);
  if (cfg.variant == Variant::base_inter) {
    const auto l1 = take_linear(cur), l2 = take_linear(cur), l3 = take_linear(cur), l4 = take_linear(cur);
    std::vector<double> d_a(nk, 0.0), d_w(nk * h, 0.0);
    for (std::size_t i = 0; i < nk; ++i) {
      for (std::size_t t = 0; t < h; ++t) {
        d_a[i] += d_mhat[t] * c.wflat[i * h + t];
        d_w[i * h + t] = c.t2[i] * d_mhat[t];
      }
    }
    auto d_u1 = linear_back(p, g, l4, c.u1, d_w, nullptr, true);
    dh_I = linear_back(p, g, l3, c.h_I, d_u1, &c.u1, true);
    auto d_t1 = linear_back(p, g, l2, c.t1, d_a, &c.t2, true);
    dh_T = linear_back(p, g, l1, c.h_T, d_t1, &c.t1, true);
  } else {
    const auto s1 = take_linear(cur), s2 = take_linear(cur), s3 = take_linear(cur), s4 = take_linear(cur);
    const auto m1 = take_linear(cur), m2 = take_linear(cur), b1 = take_linear(cur), b2 = take_linear(cur);
    const auto& pred = c.pred;
    const auto nb = static_cast<std::size_t>(cfg.n_basis);
    double d_sigma = 0.0, d_mu = 0.0;
    std::vector<double> d_shape(h);
    for (std::size_t t = 0; t < h; ++t) {
      d_sigma += d_mhat[t] * pred.shape[t];
      d_mu += d_mhat[t];
      d_shape[t] = d_mhat[t] * pred.sigma + (d_shape_direct.empty() ? 0.0 : d_shape_direct[t]);
    }
    // scale decoder
    std::vector<double> d_a(nk), d_w(2 * nk);
    for (std::size_t i = 0; i < nk; ++i) {
      d_a[i] = d_sigma * c.wflat[2 * i] + d_mu * c.wflat[2 * i + 1];
      d_w[2 * i] = c.t2[i] * d_sigma;
      d_w[2 * i + 1] = c.t2[i] * d_mu;
    }
    auto d_u1 = linear_back(p, g, s4, c.u1, d_w, nullptr, true);
    add_into(dh_I, linear_back(p, g, s3, c.h_I, d_u1, &c.u1, true));
    auto d_t1 = linear_back(p, g, s2, c.t1, d_a, &c.t2, true);
    add_into(dh_T, linear_back(p, g, s1, c.h_T, d_t1, &c.t1, true));
    // shape decoder
    std::vector<double> d_mix(nb, 0.0), d_bank(nb * h);
    for (std::size_t b = 0; b < nb; ++b) {
      for (std::size_t t = 0; t < h; ++t) {
        d_mix[b] += d_shape[t] * c.bank[b * h + t];
        d_bank[b * h + t] = c.mix[b] * d_shape[t];
      }
    }
    std::vector<double> d_logits(nb);
    nn::softmax_backward(c.mix, d_mix, d_logits);
    auto d_p1 = linear_back(p, g, m2, c.p1, d_logits, nullptr, true);
    add_into(dh_T, linear_back(p, g, m1, c.h_T, d_p1, &c.p1, true));
    auto d_q1 = linear_back(p, g, b2, c.q1, d_bank, nullptr, true);
    add_into(dh_I, linear_back(p, g, b1, c.h_I, d_q1, &c.q1, true));
  }
  // interaction encoder: h_I = ibar . C
  auto& dC = g.tensors[emb];
  for (std::size_t r = 0; r < c.ibar.size(); ++r) {
    const double w = c.ibar[r];
    if (w == 0.0) continue;
    double* row = dC.data() + r * nk;
    for (std::size_t j = 0; j < nk; ++j) row[j] += w * dh_I[j];
  }
  temporal_backward(cfg, p, g, x, c, dh_T, d_input);
}

// dL/dm_hat and the direct dL/dshape for one example.
double loss_terms(const Prediction& pred, std::span<const double> target, double gamma, std::vector<double>* d_mhat,
                  std::vector<double>* d_shape) {
  const std::size_t h = target.size();
  if (pred.m_hat.size() != h) throw ShapeError("loss: prediction and target lengths differ");
  const double inv_h = 1.0 / static_cast<double>(h);
  double mse = 0.0;
  if (d_mhat) d_mhat->assign(h, 0.0);
  for (std::size_t t = 0; t < h; ++t) {
    const double e = pred.m_hat[t] - target[t];
    mse += e * e;
    if (d_mhat) (*d_mhat)[t] = 2.0 * e * inv_h;
  }
  mse *= inv_h;
  if (d_shape) d_shape->clear();
  if (!pred.has_shape) return mse;
  if (pred.shape.size() != h) throw ShapeError("loss: shape and target lengths differ");
  const auto z = znormalize(target);
  if (z.degenerate) return mse;
  double nmse = 0.0;
  if (d_shape) d_shape->assign(h, 0.0);
  for (std::size_t t = 0; t < h; ++t) {
    const double e = pred.shape[t] - z.values[t];
    nmse += e * e;
    if (d_shape) (*d_shape)[t] = 2.0 * gamma * e * inv_h;
  }
  return mse + gamma * nmse * inv_h;
}

}  // namespace

Model::Model(ModelConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  params_ = build_layout(cfg_);
}

void Model::initialize(Rng& rng) {
  for (std::size_t i = 0; i < params_.tensors.size(); ++i) {
    auto& t = params_.tensors[i];
    const auto& name = params_.names[i];
    if (name.ends_with(".b")) {
      t.fill(0.0);
    } else if (name == "emb.C") {
      init_uniform_fan_in(t, t.dim(0), rng);
    } else if (t.shape.size() == 3) {
      nn::init_uniform_fan_in(t, t.dim(1) * t.dim(2), rng);
    } else {
      nn::init_uniform_fan_in(t, t.dim(0), rng);
    }
  }
}

Prediction Model::forward(const Matrix& input_ts, std::span<const double> interaction) const {
  Cache c;
  forward_all(cfg_, params_, input_ts, interaction, c);
  return std::move(c.pred);
}

double Model::loss_and_grad(const TrainingExample& ex, double gamma, ModelParams& grad) const {
  Cache c;
  forward_all(cfg_, params_, ex.input_ts, ex.interaction, c);
  std::vector<double> d_mhat, d_shape;
  const double l = loss_terms(c.pred, ex.target, gamma, &d_mhat, &d_shape);
  backward_all(cfg_, params_, grad, ex.input_ts, c, d_mhat, d_shape, nullptr);
  return l;
}

double Model::loss_and_grad(const TrainingExample& ex, double gamma, ModelParams& grad, Matrix& d_input) const {
  Cache c;
  forward_all(cfg_, params_, ex.input_ts, ex.interaction, c);
  std::vector<double> d_mhat, d_shape;
  const double l = loss_terms(c.pred, ex.target, gamma, &d_mhat, &d_shape);
  backward_all(cfg_, params_, grad, ex.input_ts, c, d_mhat, d_shape, &d_input);
  return l;
}

std::vector<double> interaction_encode(std::span<const double> interaction, const Tensor& C) {
  if (C.shape.size() != 2 || C.shape[0] != interaction.size()) {
    throw ShapeError("interaction_encode: embedding rows must equal interaction length");
  }
  double sum = 0.0;
  for (double v : interaction) {
    if (!(v >= 0.0)) throw DataError("interaction_encode: negative or non-finite interaction entry");
    sum += v;
  }
  if (!(sum > 0.0)) throw DataError("interaction_encode: degenerate (all-zero) interaction vector");
  const std::size_t nk = C.shape[1];
  std::vector<double> h(nk, 0.0);
  for (std::size_t r = 0; r < interaction.size(); ++r) {
    const double w = interaction[r] / sum;
    if (w == 0.0) continue;
    const double* row = C.data() + r * nk;
    for (std::size_t j = 0; j < nk; ++j) h[j] += w * row[j];
  }
  return h;
}

std::vector<double> temporal_encode(const Matrix& input_ts, const Model& model) {
  Cache c;
  temporal_forward(model.config(), model.params(), input_ts, c);
  return c.h_T;
}

std::pair<double, double> scale_decode(const HiddenReps& h, const Model& model) {
  const auto& cfg = model.config();
  if (cfg.variant != Variant::proposed) throw ConfigError("scale_decode requires the proposed variant");
  const auto& p = model.params();
  Cursor cur{temporal_param_count(cfg) + 1};
  const auto s1 = take_linear(cur), s2 = take_linear(cur), s3 = take_linear(cur), s4 = take_linear(cur);
  std::vector<double> t1, t2, u1, w;
  linear_relu(p, s1, h.h_T, t1);
  linear_relu(p, s2, t1, t2);
  linear_relu(p, s3, h.h_I, u1);
  linear(p, s4, u1, w);
  double sigma = 0.0, mu = 0.0;
  for (std::size_t i = 0; i < t2.size(); ++i) {
    sigma += t2[i] * w[2 * i];
    mu += t2[i] * w[2 * i + 1];
  }
  return {sigma, mu};
}

ShapeOutput shape_decode(const HiddenReps& h, const Model& model) {
  const auto& cfg = model.config();
  if (cfg.variant != Variant::proposed) throw ConfigError("shape_decode requires the proposed variant");
  const auto& p = model.params();
  Cursor cur{temporal_param_count(cfg) + 1 + 8};
  const auto m1 = take_linear(cur), m2 = take_linear(cur), b1 = take_linear(cur), b2 = take_linear(cur);
  std::vector<double> p1, logits, q1, bank;
  linear_relu(p, m1, h.h_T, p1);
  linear(p, m2, p1, logits);
  linear_relu(p, b1, h.h_I, q1);
  linear(p, b2, q1, bank);
  const auto nb = static_cast<std::size_t>(cfg.n_basis);
  const auto hz = static_cast<std::size_t>(cfg.horizon);
  ShapeOutput out;
  out.mix_weights = nn::softmax(logits);
  out.bank = Matrix(nb, hz);
  std::copy(bank.begin(), bank.end(), out.bank.values().begin());
  out.shape.assign(hz, 0.0);
  for (std::size_t b = 0; b < nb; ++b)
    for (std::size_t t = 0; t < hz; ++t) out.shape[t] += out.mix_weights[b] * out.bank(b, t);
  return out;
}

double loss(const Prediction& pred, std::span<const double> target, double gamma) {
  return loss_terms(pred, target, gamma, nullptr, nullptr);
}

double auto_gamma(std::span<const std::vector<double>> targets) {
  if (targets.empty()) return 1.0;
  double acc = 0.0;
  for (const auto& t : targets) {
    double mean = 0.0;
    for (double v : t) mean += v;
    mean /= static_cast<double>(t.size());
    double var = 0.0;
    for (double v : t) var += (v - mean) * (v - mean);
    acc += var / static_cast<double>(t.size());
  }
  return acc / static_cast<double>(targets.size());
}

// --- batch kernels -----------------------------------------------------------

namespace {

constexpr std::size_t kChunk = 8;

void scale_params(ModelParams& g, double s) {
  for (auto& t : g.tensors)
    for (auto& v : t.values) v *= s;
}

void add_params(ModelParams& acc, const ModelParams& g) {
  for (std::size_t i = 0; i < acc.tensors.size(); ++i) {
    auto& a = acc.tensors[i].values;
    const auto& b = g.tensors[i].values;
    for (std::size_t j = 0; j < a.size(); ++j) a[j] += b[j];
  }
}

}  // namespace

double batch_loss_grad_serial(const Model& model, std::span<const TrainingExample> batch, double gamma,
                              ModelParams& grad) {
  grad = model.params().zeros_like();
  if (batch.empty()) return 0.0;
  double total = 0.0;
  for (const auto& ex : batch) total += model.loss_and_grad(ex, gamma, grad);
  const double inv = 1.0 / static_cast<double>(batch.size());
  scale_params(grad, inv);
  return total * inv;
}

double batch_loss_grad(const Model& model, std::span<const TrainingExample> batch, double gamma, ModelParams& grad) {
  grad = model.params().zeros_like();
  if (batch.empty()) return 0.0;
  const std::size_t n_chunks = (batch.size() + kChunk - 1) / kChunk;
  std::vector<ModelParams> partial(n_chunks);
  std::vector<double> losses(n_chunks, 0.0);
  FirstException err;
#pragma omp parallel for schedule(dynamic, 1)
  for (std::ptrdiff_t ci = 0; ci < static_cast<std::ptrdiff_t>(n_chunks); ++ci) {
    err.run([&] {
      const auto c = static_cast<std::size_t>(ci);
      partial[c] = model.params().zeros_like();
      const std::size_t end = std::min(batch.size(), (c + 1) * kChunk);
      double l = 0.0;
      for (std::size_t i = c * kChunk; i < end; ++i) l += model.loss_and_grad(batch[i], gamma, partial[c]);
      losses[c] = l;
    });
  }
  err.rethrow();
  double total = 0.0;
  for (std::size_t c = 0; c < n_chunks; ++c) {
    add_params(grad, partial[c]);
    total += losses[c];
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  scale_params(grad, inv);
  return total * inv;
}

std::vector<double> example_losses(const Model& model, std::span<const TrainingExample> examples, double gamma) {
  std::vector<double> out(examples.size());
  FirstException err;
#pragma omp parallel for schedule(dynamic, 8)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(examples.size()); ++i) {
    err.run([&] {
      const auto& ex = examples[static_cast<std::size_t>(i)];
      out[static_cast<std::size_t>(i)] = loss(model.forward(ex), ex.target, gamma);
    });
  }
  err.rethrow();
  return out;
}

}  // namespace mhf
