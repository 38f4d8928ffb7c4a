#include "mhf/nn.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "mhf/errors.hpp"

namespace mhf::nn {

std::size_t element_count(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (auto s : shape) n *= s;
  return n;
}

Tensor::Tensor(std::vector<std::size_t> dims, double fill)
    : shape(std::move(dims)), values(element_count(shape), fill) {}

void Tensor::fill(double v) { std::fill(values.begin(), values.end(), v); }

bool Tensor::all_finite() const {
  return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
}

void init_uniform_fan_in(Tensor& t, std::size_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(fan_in, 1)));
  for (auto& v : t.values) v = bound * (2.0 * uniform01(rng) - 1.0);
}

namespace {

void require(bool ok, const char* what) {
  if (!ok) throw ShapeError(what);
}

}  // namespace

// --- dense -----------------------------------------------------------------

void dense_forward(std::span<const double> x, const Tensor& W, const Tensor& b, std::span<double> y) {
  require(W.shape.size() == 2 && W.shape[0] == x.size(), "dense: W rows must equal input length");
  const std::size_t n_out = W.shape[1];
  require(b.size() == n_out && y.size() == n_out, "dense: bias/output length must equal W columns");
  std::copy(b.values.begin(), b.values.end(), y.begin());
  const double* w = W.data();
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double xi = x[i];
    if (xi == 0.0) continue;
    const double* wr = w + i * n_out;
    for (std::size_t o = 0; o < n_out; ++o) y[o] += xi * wr[o];
  }
}

std::vector<double> dense(std::span<const double> x, const Tensor& W, const Tensor& b) {
  require(W.shape.size() == 2, "dense: W must be a matrix");
  std::vector<double> y(W.shape[1]);
  dense_forward(x, W, b, y);
  return y;
}

void dense_backward(std::span<const double> x, const Tensor& W, std::span<const double> dy,
                    std::span<double> dx, Tensor& dW, Tensor& db) {
  const std::size_t n_in = W.shape[0];
  const std::size_t n_out = W.shape[1];
  require(x.size() == n_in && dy.size() == n_out, "dense_backward: shape mismatch");
  require(dW.size() == W.size() && db.size() == n_out, "dense_backward: gradient shape mismatch");
  for (std::size_t o = 0; o < n_out; ++o) db.values[o] += dy[o];
  const double* w = W.data();
  double* gw = dW.data();
  for (std::size_t i = 0; i < n_in; ++i) {
    const double xi = x[i];
    double* gr = gw + i * n_out;
    if (xi != 0.0) {
      for (std::size_t o = 0; o < n_out; ++o) gr[o] += xi * dy[o];
    }
    if (!dx.empty()) {
      const double* wr = w + i * n_out;
      double acc = 0.0;
      for (std::size_t o = 0; o < n_out; ++o) acc += wr[o] * dy[o];
      dx[i] = acc;
    }
  }
}

// --- causal convolution ----------------------------------------------------

namespace {

struct ConvDims {
  std::size_t c_out, c_in, w;
};

ConvDims conv_dims(const Matrix& x, const Tensor& K, const Tensor& b) {
  require(K.shape.size() == 3, "conv1d_causal: kernel must be c_out x c_in x w");
  ConvDims d{K.shape[0], K.shape[1], K.shape[2]};
  require(d.w >= 1, "conv1d_causal: kernel width must be >= 1");
  require(x.cols() == d.c_in, "conv1d_causal: input channels differ from kernel c_in");
  require(b.size() == d.c_out, "conv1d_causal: bias length must equal c_out");
  return d;
}

// Repacked to [k][c_in][c_out] so the innermost loop runs over contiguous outputs.
std::vector<double> repack(const Tensor& K, const ConvDims& d) {
  std::vector<double> p(K.size());
  for (std::size_t o = 0; o < d.c_out; ++o)
    for (std::size_t c = 0; c < d.c_in; ++c)
      for (std::size_t k = 0; k < d.w; ++k) p[(k * d.c_in + c) * d.c_out + o] = K.values[(o * d.c_in + c) * d.w + k];
  return p;
}

}  // namespace

void conv1d_causal_forward(const Matrix& x, const Tensor& K, const Tensor& b, Matrix& y) {
  const auto d = conv_dims(x, K, b);
  const std::size_t T = x.rows();
  if (y.rows() != T || y.cols() != d.c_out) y = Matrix(T, d.c_out);
  const auto kp = repack(K, d);
  for (std::size_t t = 0; t < T; ++t) {
    double* yr = y.row(t).data();
    std::copy(b.values.begin(), b.values.end(), yr);
    for (std::size_t k = 0; k < d.w; ++k) {
      const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t + k) - static_cast<std::ptrdiff_t>(d.w - 1);
      if (src < 0) continue;
      const double* xr = x.row(static_cast<std::size_t>(src)).data();
      for (std::size_t c = 0; c < d.c_in; ++c) {
        const double xv = xr[c];
        if (xv == 0.0) continue;
        const double* kr = kp.data() + (k * d.c_in + c) * d.c_out;
        for (std::size_t o = 0; o < d.c_out; ++o) yr[o] += kr[o] * xv;
      }
    }
  }
}

Matrix conv1d_causal(const Matrix& x, const Tensor& K, const Tensor& b) {
  Matrix y;
  conv1d_causal_forward(x, K, b, y);
  return y;
}

void conv1d_causal_backward(const Matrix& x, const Tensor& K, const Matrix& dy, Matrix* dx, Tensor& dK, Tensor& db) {
  const auto d = conv_dims(x, K, db);
  const std::size_t T = x.rows();
  require(dy.rows() == T && dy.cols() == d.c_out, "conv1d_causal_backward: dy shape mismatch");
  require(dK.size() == K.size(), "conv1d_causal_backward: dK shape mismatch");
  const auto kp = repack(K, d);
  std::vector<double> gkp(K.size(), 0.0);
  if (dx) {
    if (dx->rows() != T || dx->cols() != d.c_in) *dx = Matrix(T, d.c_in);
    std::fill(dx->values().begin(), dx->values().end(), 0.0);
  }
  for (std::size_t t = 0; t < T; ++t) {
    const double* dyr = dy.row(t).data();
    bool any = false;
    for (std::size_t o = 0; o < d.c_out; ++o) {
      db.values[o] += dyr[o];
      any = any || dyr[o] != 0.0;
    }
    if (!any) continue;
    for (std::size_t k = 0; k < d.w; ++k) {
      const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t + k) - static_cast<std::ptrdiff_t>(d.w - 1);
      if (src < 0) continue;
      const double* xr = x.row(static_cast<std::size_t>(src)).data();
      double* dxr = dx ? dx->row(static_cast<std::size_t>(src)).data() : nullptr;
      for (std::size_t c = 0; c < d.c_in; ++c) {
        const std::size_t base = (k * d.c_in + c) * d.c_out;
        const double xv = xr[c];
        if (xv != 0.0) {
          double* g = gkp.data() + base;
          for (std::size_t o = 0; o < d.c_out; ++o) g[o] += dyr[o] * xv;
        }
        if (dxr) {
          const double* kr = kp.data() + base;
          double acc = 0.0;
          for (std::size_t o = 0; o < d.c_out; ++o) acc += kr[o] * dyr[o];
          dxr[c] += acc;
        }
      }
    }
  }
  for (std::size_t o = 0; o < d.c_out; ++o)
    for (std::size_t c = 0; c < d.c_in; ++c)
      for (std::size_t k = 0; k < d.w; ++k) dK.values[(o * d.c_in + c) * d.w + k] += gkp[(k * d.c_in + c) * d.c_out + o];
}

// --- pointwise -------------------------------------------------------------

std::vector<double> relu(std::span<const double> x) {
  std::vector<double> y(x.begin(), x.end());
  relu_inplace(y);
  return y;
}

void relu_inplace(std::span<double> x) {
  for (auto& v : x) v = v > 0.0 ? v : 0.0;
}

void relu_backward(std::span<const double> y, std::span<const double> dy, std::span<double> dx) {
  require(y.size() == dy.size() && dy.size() == dx.size(), "relu_backward: shape mismatch");
  for (std::size_t i = 0; i < y.size(); ++i) dx[i] = y[i] > 0.0 ? dy[i] : 0.0;
}

std::vector<double> softmax(std::span<const double> x) {
  std::vector<double> y(x.size());
  if (x.empty()) return y;
  const double mx = *std::max_element(x.begin(), x.end());
  double sum = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    y[i] = std::exp(x[i] - mx);
    sum += y[i];
  }
  for (auto& v : y) v /= sum;
  return y;
}

void softmax_backward(std::span<const double> y, std::span<const double> dy, std::span<double> dx) {
  require(y.size() == dy.size() && dy.size() == dx.size(), "softmax_backward: shape mismatch");
  double dot = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) dot += y[i] * dy[i];
  for (std::size_t i = 0; i < y.size(); ++i) dx[i] = y[i] * (dy[i] - dot);
}

std::vector<double> global_avg_pool_time(const Matrix& x) {
  if (x.rows() == 0) throw ShapeError("global_avg_pool_time: empty time axis");
  std::vector<double> out(x.cols(), 0.0);
  for (std::size_t t = 0; t < x.rows(); ++t) {
    auto r = x.row(t);
    for (std::size_t c = 0; c < x.cols(); ++c) out[c] += r[c];
  }
  const double inv = 1.0 / static_cast<double>(x.rows());
  for (auto& v : out) v *= inv;
  return out;
}

void global_avg_pool_time_backward(std::span<const double> dy, Matrix& dx) {
  require(dy.size() == dx.cols() && dx.rows() > 0, "global_avg_pool_time_backward: shape mismatch");
  const double inv = 1.0 / static_cast<double>(dx.rows());
  for (std::size_t t = 0; t < dx.rows(); ++t) {
    auto r = dx.row(t);
    for (std::size_t c = 0; c < dx.cols(); ++c) r[c] = dy[c] * inv;
  }
}

// --- Adam ------------------------------------------------------------------

AdamState::AdamState(const Tensor& like, AdamHyper h)
    : first_moment(like.shape), second_moment(like.shape), hyper(h) {}

void adam_step(Tensor& param, const Tensor& grad, AdamState& state) {
  if (param.size() != grad.size() || state.first_moment.size() != param.size() ||
      state.second_moment.size() != param.size()) {
    throw ShapeError("adam_step: parameter, gradient and moments must share a shape");
  }
  if (!grad.all_finite()) throw DataError("adam_step: non-finite gradient");
  const auto& h = state.hyper;
  state.step_count += 1;
  const double bc1 = 1.0 - std::pow(h.beta1, static_cast<double>(state.step_count));
  const double bc2 = 1.0 - std::pow(h.beta2, static_cast<double>(state.step_count));
  double* m = state.first_moment.data();
  double* v = state.second_moment.data();
  double* p = param.data();
  const double* g = grad.data();
  for (std::size_t i = 0; i < param.size(); ++i) {
    m[i] = h.beta1 * m[i] + (1.0 - h.beta1) * g[i];
    v[i] = h.beta2 * v[i] + (1.0 - h.beta2) * g[i] * g[i];
    const double mhat = m[i] / bc1;
    const double vhat = v[i] / bc2;
    p[i] -= h.learning_rate * mhat / (std::sqrt(vhat) + h.epsilon);
  }
}

// --- gradient checking -----------------------------------------------------

double grad_check(const std::function<double(std::span<const double>)>& f,
                  const std::function<std::vector<double>(std::span<const double>)>& analytic,
                  std::vector<double> x, double eps, double floor) {
  const auto a = analytic(x);
  if (a.size() != x.size()) throw ShapeError("grad_check: analytic gradient length differs from x");
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + eps;
    const double fp = f(x);
    x[i] = saved - eps;
    const double fm = f(x);
    x[i] = saved;
    const double numeric = (fp - fm) / (2.0 * eps);
    const double denom = std::max({std::abs(a[i]), std::abs(numeric), floor});
    worst = std::max(worst, std::abs(a[i] - numeric) / denom);
  }
  return worst;
}

}  // namespace mhf::nn
