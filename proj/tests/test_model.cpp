#include <omp.h>

#include <cmath>
#include <numeric>

#include "doctest.h"
#include "mhf/errors.hpp"
#include "mhf/model.hpp"

using namespace mhf;

namespace {

ModelConfig small_config(Variant v) {
  ModelConfig c;
  c.variant = v;
  c.n_k = 8;
  c.channels = 5;
  c.kernel_width = 3;
  c.n_blocks = 2;
  c.n_basis = 4;
  c.horizon = 6;
  c.d = 3;
  c.k = 4;
  c.t_p = 16;
  return c;
}

TrainingExample random_example(const ModelConfig& c, Rng& rng) {
  std::normal_distribution<double> nd;
  TrainingExample ex;
  ex.input_ts = Matrix(static_cast<std::size_t>(c.t_p), static_cast<std::size_t>(c.d));
  for (auto& v : ex.input_ts.values()) v = nd(rng);
  ex.interaction.resize(static_cast<std::size_t>(c.k));
  for (auto& v : ex.interaction) v = 0.1 + uniform01(rng) * 5.0;
  ex.target.resize(static_cast<std::size_t>(c.horizon));
  for (auto& v : ex.target) v = 2.0 + nd(rng);
  return ex;
}

// Biases nudged positive so most ReLUs sit away from their kink.
Model random_model(const ModelConfig& c, std::uint64_t seed) {
  Model m(c);
  Rng rng(seed);
  m.initialize(rng);
  for (std::size_t i = 0; i < m.params().tensors.size(); ++i) {
    if (m.params().names[i].ends_with(".b")) {
      for (auto& v : m.params().tensors[i].values) v = 0.1 + 0.2 * uniform01(rng);
    }
  }
  return m;
}

double param_grad_error(Model& m, const TrainingExample& ex, double gamma) {
  auto f = [&](std::span<const double> p) {
    Model probe = m;
    probe.params().unflatten(p);
    return loss(probe.forward(ex), ex.target, gamma);
  };
  auto g = [&](std::span<const double> p) {
    Model probe = m;
    probe.params().unflatten(p);
    auto grad = probe.params().zeros_like();
    probe.loss_and_grad(ex, gamma, grad);
    return grad.flatten();
  };
  return nn::grad_check(f, g, m.params().flatten());
}

double input_grad_error(Model& m, const TrainingExample& ex, double gamma) {
  auto f = [&](std::span<const double> x) {
    TrainingExample e = ex;
    std::copy(x.begin(), x.end(), e.input_ts.values().begin());
    return loss(m.forward(e), e.target, gamma);
  };
  auto g = [&](std::span<const double> x) {
    TrainingExample e = ex;
    std::copy(x.begin(), x.end(), e.input_ts.values().begin());
    auto grad = m.params().zeros_like();
    Matrix dx;
    m.loss_and_grad(e, gamma, grad, dx);
    return std::vector<double>(dx.values().begin(), dx.values().end());
  };
  return nn::grad_check(f, g, {ex.input_ts.values().begin(), ex.input_ts.values().end()});
}

}  // namespace

TEST_CASE("parameter layout") {
  Model m(small_config(Variant::proposed));
  CHECK(m.params().at("emb.C").shape == std::vector<std::size_t>{4, 8});
  CHECK(m.params().at("tcn.0.res.K").shape == std::vector<std::size_t>{5, 3, 1});
  CHECK(m.params().at("scale.w.2.W").shape == std::vector<std::size_t>{8, 16});
  CHECK(m.params().at("shape.bank.2.W").shape == std::vector<std::size_t>{8, 24});
  CHECK_THROWS_AS(m.params().at("tcn.1.res.K"), ShapeError);
  Model b(small_config(Variant::base));
  CHECK(b.params().at("head.W").shape == std::vector<std::size_t>{5, 6});
  Model bi(small_config(Variant::base_inter));
  CHECK(bi.params().at("wgen.2.W").shape == std::vector<std::size_t>{8, 48});
}

TEST_CASE("config json round trip") {
  auto c = small_config(Variant::base_inter);
  c.gamma_auto = false;
  c.gamma = 0.25;
  const auto back = model_config_from_json(to_json(c));
  CHECK(to_json(back) == to_json(c));
  CHECK_THROWS_AS(model_config_from_json({{"n_k", 4}, {"bogus", 1}}), ConfigError);
  CHECK_THROWS_AS(parse_variant("gru"), ConfigError);
  CHECK(model_config_from_json({{"gamma", "auto"}}).gamma_auto);
  CHECK(model_config_from_json({{"gamma_factor", 4.0}}).gamma_factor == 4.0);
  auto bad = c;
  bad.gamma_factor = 0.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("interaction_encode") {
  nn::Tensor C({3, 2});
  C.values = {1, 2, 3, 4, 5, 6};
  CHECK(interaction_encode(std::vector<double>{0, 1, 0}, C) == std::vector<double>{3, 4});
  CHECK(interaction_encode(std::vector<double>{0, 7, 0}, C) == std::vector<double>{3, 4});
  const auto h = interaction_encode(std::vector<double>{2, 6, 0}, C);
  CHECK(h[0] == doctest::Approx(0.25 * 1 + 0.75 * 3));
  CHECK(h[1] == doctest::Approx(0.25 * 2 + 0.75 * 4));
  const auto avg = interaction_encode(std::vector<double>{1, 0, 1}, C);
  CHECK(avg == std::vector<double>{3, 4});
  CHECK_THROWS_AS(interaction_encode(std::vector<double>{0, 0, 0}, C), DataError);

  Rng rng(2);
  nn::Tensor R({6, 5});
  nn::init_uniform_fan_in(R, 6, rng);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> I(6), J(6);
    const double alpha = 0.01 + 100.0 * uniform01(rng);
    for (std::size_t i = 0; i < 6; ++i) {
      I[i] = uniform01(rng) * 4;
      J[i] = alpha * I[i];
    }
    const auto a = interaction_encode(I, R), b = interaction_encode(J, R);
    for (std::size_t j = 0; j < 5; ++j) CHECK(std::abs(a[j] - b[j]) < 1e-12);
  }
}

TEST_CASE("temporal_encode") {
  const auto c = small_config(Variant::proposed);
  Model zero(c);
  Rng rng(1);
  auto ex = random_example(c, rng);
  const auto h = temporal_encode(ex.input_ts, zero);
  CHECK(h.size() == 5);
  CHECK(std::all_of(h.begin(), h.end(), [](double v) { return v == 0.0; }));

  auto m = random_model(c, 3);
  const auto h0 = temporal_encode(ex.input_ts, m);
  ex.input_ts(15, 0) += 1.0;
  const auto h1 = temporal_encode(ex.input_ts, m);
  CHECK(h0 != h1);
  CHECK_THROWS_AS(temporal_encode(Matrix(16, 2), m), ShapeError);
}

TEST_CASE("scale_decode") {
  auto c = small_config(Variant::proposed);
  Model m(c);
  HiddenReps h{std::vector<double>(8, 0.3), std::vector<double>(5, 0.7)};
  auto [s0, mu0] = scale_decode(h, m);
  CHECK(s0 == 0.0);
  CHECK(mu0 == 0.0);
  // processed h_T = e_1; W row 0 = [3, 7]
  m.params().at("scale.top.2.b").values[0] = 1.0;
  m.params().at("scale.w.2.b").values[0] = 3.0;
  m.params().at("scale.w.2.b").values[1] = 7.0;
  auto [s1, mu1] = scale_decode(h, m);
  CHECK(s1 == 3.0);
  CHECK(mu1 == 7.0);
  Model base(small_config(Variant::base));
  CHECK_THROWS_AS(scale_decode(h, base), ConfigError);
}

TEST_CASE("shape_decode") {
  auto c = small_config(Variant::proposed);
  Model m = random_model(c, 5);
  HiddenReps h{std::vector<double>(8, 0.3), std::vector<double>(5, 0.7)};
  // near one-hot mixer at basis 2
  auto& mixW = m.params().at("shape.mix.2.W");
  mixW.fill(0.0);
  auto& mixb = m.params().at("shape.mix.2.b");
  mixb.values = {0, 0, 800, 0};
  auto out = shape_decode(h, m);
  for (std::size_t t = 0; t < 6; ++t) CHECK(std::abs(out.shape[t] - out.bank(2, t)) < 1e-12);
  // bank rows 0 and 1 equal, weights only on those rows
  auto& bankW = m.params().at("shape.bank.2.W");
  auto& bankb = m.params().at("shape.bank.2.b");
  bankW.fill(0.0);
  for (std::size_t t = 0; t < 6; ++t) bankb.values[t] = bankb.values[6 + t] = 0.5 * static_cast<double>(t);
  mixb.values = {3, 1, -800, -800};
  out = shape_decode(h, m);
  for (std::size_t t = 0; t < 6; ++t) CHECK(std::abs(out.shape[t] - 0.5 * static_cast<double>(t)) < 1e-12);
}

TEST_CASE("forward structure") {
  Rng rng(4);
  for (auto v : {Variant::base, Variant::base_inter, Variant::proposed}) {
    const auto c = small_config(v);
    const auto m = random_model(c, 9);
    for (int trial = 0; trial < 10; ++trial) {
      const auto ex = random_example(c, rng);
      const auto p = m.forward(ex);
      REQUIRE(p.m_hat.size() == 6);
      CHECK(p.has_shape == (v == Variant::proposed));
      if (!p.has_shape) continue;
      const double s = std::accumulate(p.mix_weights.begin(), p.mix_weights.end(), 0.0);
      CHECK(std::abs(s - 1.0) < 1e-12);
      for (double w : p.mix_weights) CHECK(w > 0.0);
      for (std::size_t t = 0; t < 6; ++t) CHECK(p.m_hat[t] == p.shape[t] * p.sigma + p.mu);
    }
  }
}

TEST_CASE("amalgamate arithmetic") {
  auto c = small_config(Variant::proposed);
  Model m(c);
  Rng rng(1);
  const auto ex = random_example(c, rng);
  // sigma via scale.w row 0 = [2, 3]; processed h_T = e_1
  m.params().at("scale.top.2.b").values[0] = 1.0;
  m.params().at("scale.w.2.b").values[0] = 2.0;
  m.params().at("scale.w.2.b").values[1] = 3.0;
  auto p = m.forward(ex);
  for (double v : p.m_hat) CHECK(v == 3.0);  // zero bank -> zero shape
  auto& bankb = m.params().at("shape.bank.2.b");
  for (std::size_t b = 0; b < 4; ++b)
    for (std::size_t t = 0; t < 6; ++t) bankb.values[b * 6 + t] = static_cast<double>(t);
  p = m.forward(ex);
  for (std::size_t t = 0; t < 6; ++t) CHECK(p.m_hat[t] == doctest::Approx(3.0 + 2.0 * static_cast<double>(t)));
}

TEST_CASE("loss") {
  Prediction p;
  p.m_hat = {1, 2, 3};
  p.has_shape = true;
  const std::vector<double> target{1, 2, 3};
  p.shape = znormalize(target).values;
  CHECK(loss(p, target, 2.0) == 0.0);
  p.shape = {0, 0, 0};
  CHECK(loss(p, target, 2.0) == doctest::Approx(2.0));
  const std::vector<double> flat{4, 4, 4};
  p.m_hat = {4, 4, 4};
  p.shape = {1, 1, 1};
  CHECK(loss(p, flat, 2.0) == 0.0);

  Rng rng(6);
  std::normal_distribution<double> nd;
  for (int trial = 0; trial < 20; ++trial) {
    Prediction q;
    q.has_shape = true;
    std::vector<double> y(8);
    for (auto& v : y) v = nd(rng);
    for (int i = 0; i < 8; ++i) {
      q.m_hat.push_back(nd(rng));
      q.shape.push_back(nd(rng));
    }
    double mean = std::accumulate(y.begin(), y.end(), 0.0) / 8, var = 0;
    for (double v : y) var += (v - mean) * (v - mean);
    const double sd = std::sqrt(var / 8);
    double mse = 0, nmse = 0;
    for (int i = 0; i < 8; ++i) {
      mse += (q.m_hat[i] - y[i]) * (q.m_hat[i] - y[i]);
      const double z = (y[i] - mean) / sd;
      nmse += (q.shape[i] - z) * (q.shape[i] - z);
    }
    CHECK(std::abs(loss(q, y, 0.7) - (mse / 8 + 0.7 * nmse / 8)) < 1e-12);
    q.has_shape = false;
    CHECK(std::abs(loss(q, y, 0.7) - mse / 8) < 1e-12);
  }
}

TEST_CASE("auto gamma") {
  std::vector<std::vector<double>> t{{1, 2, 3}, {5, 5, 5}};
  CHECK(auto_gamma(t) == doctest::Approx((2.0 / 3.0) / 2.0));
}

TEST_CASE("full model gradients") {
  Rng rng(17);
  for (auto v : {Variant::base, Variant::base_inter, Variant::proposed}) {
    const auto c = small_config(v);
    for (int trial = 0; trial < 3; ++trial) {
      auto m = random_model(c, 100 + static_cast<std::uint64_t>(trial));
      const auto ex = random_example(c, rng);
      CAPTURE(to_string(v));
      CHECK(param_grad_error(m, ex, 0.8) < 1e-5);
      CHECK(input_grad_error(m, ex, 0.8) < 1e-5);
    }
  }
}

TEST_CASE("one-example overfit") {
  Rng rng(23);
  for (auto v : {Variant::base, Variant::base_inter, Variant::proposed}) {
    const auto c = small_config(v);
    auto m = random_model(c, 7);
    const auto ex = random_example(c, rng);
    std::vector<nn::AdamState> opt;
    for (const auto& t : m.params().tensors) opt.emplace_back(t, nn::AdamHyper{1e-2});
    const double initial = loss(m.forward(ex), ex.target, 1.0);
    double last = initial;
    for (int step = 0; step < 500; ++step) {
      auto grad = m.params().zeros_like();
      last = m.loss_and_grad(ex, 1.0, grad);
      for (std::size_t i = 0; i < opt.size(); ++i) nn::adam_step(m.params().tensors[i], grad.tensors[i], opt[i]);
    }
    last = loss(m.forward(ex), ex.target, 1.0);
    CAPTURE(to_string(v));
    CHECK(last < 1e-3 * initial);
  }
}

TEST_CASE("batch kernels") {
  Rng rng(31);
  const auto c = small_config(Variant::proposed);
  const auto m = random_model(c, 41);
  std::vector<TrainingExample> batch;
  for (int i = 0; i < 37; ++i) batch.push_back(random_example(c, rng));
  ModelParams gs, g1, g4;
  const double ls = batch_loss_grad_serial(m, batch, 0.5, gs);
  omp_set_num_threads(1);
  const double l1 = batch_loss_grad(m, batch, 0.5, g1);
  omp_set_num_threads(4);
  const double l4 = batch_loss_grad(m, batch, 0.5, g4);
  CHECK(l1 == l4);
  CHECK(g1 == g4);
  CHECK(std::abs(ls - l1) < 1e-12);
  const auto fs = gs.flatten(), fp = g1.flatten();
  for (std::size_t i = 0; i < fs.size(); ++i) CHECK(std::abs(fs[i] - fp[i]) < 1e-12 * (1 + std::abs(fs[i])));
  const auto per = example_losses(m, batch, 0.5);
  CHECK(std::abs(std::accumulate(per.begin(), per.end(), 0.0) / 37 - ls) < 1e-12);
  ModelParams empty;
  CHECK(batch_loss_grad(m, {}, 0.5, empty) == 0.0);
}
