#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "mhf/matrix.hpp"
#include "mhf/rng.hpp"

namespace mhf::nn {

/// Row-major tensor of doubles.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> values;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> dims, double fill = 0.0);

  std::size_t size() const { return values.size(); }
  std::size_t dim(std::size_t i) const { return shape.at(i); }
  double* data() { return values.data(); }
  const double* data() const { return values.data(); }
  std::span<double> span() { return values; }
  std::span<const double> span() const { return values; }
  void fill(double v);
  bool all_finite() const;

  bool operator==(const Tensor&) const = default;
};

std::size_t element_count(const std::vector<std::size_t>& shape);

/// U(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights.
void init_uniform_fan_in(Tensor& t, std::size_t fan_in, Rng& rng);

// ---------------------------------------------------------------------------
// Layers. Each forward has a matching backward that accumulates (+=) into the
// parameter gradients and writes (=) the input gradient when one is requested.
// ---------------------------------------------------------------------------

/// y = x W + b, W is n_in x n_out.
std::vector<double> dense(std::span<const double> x, const Tensor& W, const Tensor& b);
void dense_forward(std::span<const double> x, const Tensor& W, const Tensor& b, std::span<double> y);
void dense_backward(std::span<const double> x, const Tensor& W, std::span<const double> dy,
                    std::span<double> dx, Tensor& dW, Tensor& db);

/// Causal 1-D convolution. x is time x c_in, K is c_out x c_in x w, b is c_out.
/// Output row t depends on input rows t-w+1 .. t (zeros before 0).
Matrix conv1d_causal(const Matrix& x, const Tensor& K, const Tensor& b);
void conv1d_causal_forward(const Matrix& x, const Tensor& K, const Tensor& b, Matrix& y);
/// `dx` may be null; when given it is overwritten.
void conv1d_causal_backward(const Matrix& x, const Tensor& K, const Matrix& dy, Matrix* dx, Tensor& dK, Tensor& db);

std::vector<double> relu(std::span<const double> x);
void relu_inplace(std::span<double> x);
/// dx = dy where y > 0, else 0 (subgradient 0 at 0).
void relu_backward(std::span<const double> y, std::span<const double> dy, std::span<double> dx);

std::vector<double> softmax(std::span<const double> x);
void softmax_backward(std::span<const double> y, std::span<const double> dy, std::span<double> dx);

std::vector<double> global_avg_pool_time(const Matrix& x);
void global_avg_pool_time_backward(std::span<const double> dy, Matrix& dx);

// ---------------------------------------------------------------------------

struct AdamHyper {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  Tensor first_moment;
  Tensor second_moment;
  std::int64_t step_count = 0;
  AdamHyper hyper;

  AdamState() = default;
  AdamState(const Tensor& like, AdamHyper h);
};

/// One bias-corrected Adam update. Throws DataError on a non-finite gradient
/// before touching any state.
void adam_step(Tensor& param, const Tensor& grad, AdamState& state);

/// Maximum elementwise relative error between `analytic(x)` and central
/// differences of `f` around x. The denominator is max(|a|, |n|, floor).
double grad_check(const std::function<double(std::span<const double>)>& f,
                  const std::function<std::vector<double>(std::span<const double>)>& analytic,
                  std::vector<double> x, double eps = 1e-5, double floor = 1e-4);

}  // namespace mhf::nn
