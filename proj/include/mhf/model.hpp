#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "mhf/core_data.hpp"
#include "mhf/nn.hpp"

namespace mhf {

enum class Variant { base, base_inter, proposed };

std::string to_string(Variant v);
Variant parse_variant(const std::string& s);

struct ModelConfig {
  Variant variant = Variant::proposed;
  int n_k = 64;          ///< embedding size and decoder hidden width
  int channels = 64;     ///< conv kernels per layer; length of h_T
  int kernel_width = 3;
  int n_blocks = 3;
  int n_basis = 16;
  int horizon = 48;      ///< t_a + t_b
  int d = 0;
  int k = 0;
  int t_p = 168;
  bool gamma_auto = true;
  double gamma_factor = 1.0;  ///< multiplies the auto value
  double gamma = 1.0;    ///< resolved shape-loss weight

  void validate() const;
};

nlohmann::json to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);

/// Named parameter tensors in a fixed declaration order.
struct ModelParams {
  std::vector<std::string> names;
  std::vector<nn::Tensor> tensors;

  std::size_t total_size() const;
  ModelParams zeros_like() const;
  void set_zero();
  std::vector<double> flatten() const;
  void unflatten(std::span<const double> flat);
  bool all_finite() const;
  std::size_t index(const std::string& name) const;
  nn::Tensor& at(const std::string& name) { return tensors[index(name)]; }
  const nn::Tensor& at(const std::string& name) const { return tensors[index(name)]; }

  bool operator==(const ModelParams&) const = default;
};

struct HiddenReps {
  std::vector<double> h_I;
  std::vector<double> h_T;
};

struct Prediction {
  std::vector<double> m_hat;
  bool has_shape = false;  ///< false for the base variants
  std::vector<double> shape;
  double sigma = 0.0;
  double mu = 0.0;
  std::vector<double> mix_weights;
  Matrix bank;             ///< n_basis x horizon
};

class Model {
 public:
  explicit Model(ModelConfig cfg);  ///< all parameters zero

  /// Fan-in uniform weights, zero biases.
  void initialize(Rng& rng);

  const ModelConfig& config() const { return cfg_; }
  ModelConfig& config() { return cfg_; }
  const ModelParams& params() const { return params_; }
  ModelParams& params() { return params_; }

  Prediction forward(const Matrix& input_ts, std::span<const double> interaction) const;
  Prediction forward(const TrainingExample& ex) const { return forward(ex.input_ts, ex.interaction); }

  /// Loss for one example; adds d(loss)/d(params) into `grad` (same layout as params()).
  double loss_and_grad(const TrainingExample& ex, double gamma, ModelParams& grad) const;

  /// Gradient w.r.t. the input time series as well, for end-to-end checks.
  double loss_and_grad(const TrainingExample& ex, double gamma, ModelParams& grad, Matrix& d_input) const;

 private:
  ModelConfig cfg_;
  ModelParams params_;
};

// Component operations on a model's parameters.
std::vector<double> interaction_encode(std::span<const double> interaction, const nn::Tensor& C);
std::vector<double> temporal_encode(const Matrix& input_ts, const Model& model);
std::pair<double, double> scale_decode(const HiddenReps& h, const Model& model);

struct ShapeOutput {
  std::vector<double> shape;
  std::vector<double> mix_weights;
  Matrix bank;
};
ShapeOutput shape_decode(const HiddenReps& h, const Model& model);

/// MSE(m_hat, target) + gamma * MSE(shape, znormalize(target)); the second term
/// is dropped for base variants and degenerate targets.
double loss(const Prediction& pred, std::span<const double> target, double gamma);

/// Mean per-window population variance of the targets ("auto" gamma).
double auto_gamma(std::span<const std::vector<double>> targets);

// ---------------------------------------------------------------------------
// Batch kernels: mean loss over the batch, `grad` overwritten with the mean
// gradient. The parallel kernel sums fixed-size chunks in chunk order, so its
// result does not depend on the thread count.
// ---------------------------------------------------------------------------
double batch_loss_grad_serial(const Model& model, std::span<const TrainingExample> batch, double gamma,
                              ModelParams& grad);
double batch_loss_grad(const Model& model, std::span<const TrainingExample> batch, double gamma, ModelParams& grad);

/// Per-example losses, evaluated in parallel.
std::vector<double> example_losses(const Model& model, std::span<const TrainingExample> examples, double gamma);

}  // namespace mhf
