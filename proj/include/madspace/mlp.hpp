#pragma once

#include <cstdint>
#include <iosfwd>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace madspace {

enum class Activation { kSelu, kIdentity };

std::string_view to_string(Activation a);
Activation activation_from_string(std::string_view name);

inline constexpr double kSeluAlpha = 1.6732632423543772848170429916717;
inline constexpr double kSeluScale = 1.0507009873554804934193349852946;

double selu(double x);
double selu_derivative(double x);

struct DenseLayer {
  Eigen::MatrixXd weights;  // out x in
  Eigen::VectorXd bias;
};

/// Gradient (or moment) buffers with one DenseLayer per network layer.
struct MlpGradients {
  std::vector<DenseLayer> layers;

  MlpGradients& operator+=(const MlpGradients& other);
  MlpGradients& operator*=(double factor);
};

/// Activations saved by a batched forward pass, consumed by backward().
struct ForwardCache {
  std::vector<Eigen::MatrixXd> inputs;           // input of layer l
  std::vector<Eigen::MatrixXd> pre_activations;  // W x + b of layer l
};

/// Fully connected network. Hidden layers use `hidden` activation, the last layer
/// `output` (identity by default). Batched calls take one sample per column.
class Mlp {
 public:
  Mlp() = default;
  /// Zero-initialized network with the given layer sizes (input first).
  explicit Mlp(std::vector<int> layer_dims, Activation hidden = Activation::kSelu,
               Activation output = Activation::kIdentity);

  /// Weights and biases uniform in +-sqrt(1 / fan_in).
  static Mlp uniform_init(std::vector<int> layer_dims, std::mt19937_64& rng,
                          Activation hidden = Activation::kSelu,
                          Activation output = Activation::kIdentity);

  const std::vector<int>& layer_dims() const { return dims_; }
  int input_dim() const { return dims_.front(); }
  int output_dim() const { return dims_.back(); }
  Activation hidden_activation() const { return hidden_; }
  Activation output_activation() const { return output_; }
  std::size_t num_layers() const { return layers_.size(); }
  const std::vector<DenseLayer>& layers() const { return layers_; }
  std::vector<DenseLayer>& layers() { return layers_; }

  Eigen::VectorXd forward(const Eigen::VectorXd& x) const;
  Eigen::MatrixXd forward(const Eigen::MatrixXd& x, ForwardCache* cache = nullptr) const;

  /// Gradients of a scalar loss given d loss / d output (`upstream`, one column per
  /// sample). Optionally writes d loss / d input.
  MlpGradients backward(const ForwardCache& cache, const Eigen::MatrixXd& upstream,
                        Eigen::MatrixXd* input_grad = nullptr) const;

  MlpGradients zero_gradients() const;

  std::size_t parameter_count() const;
  /// Parameters in declaration order: layer 0 weights (row-major), layer 0 bias, layer 1 ...
  std::vector<double> flat_parameters() const;
  void set_flat_parameters(std::span<const double> values);
  bool all_finite() const;

  void save(std::ostream& out) const;
  /// `source` names the file in error messages.
  static Mlp load(std::istream& in, std::string_view source);

  bool operator==(const Mlp& other) const;

 private:
  Activation activation_for(std::size_t layer) const {
    return layer + 1 == layers_.size() ? output_ : hidden_;
  }

  std::vector<int> dims_;
  Activation hidden_ = Activation::kSelu;
  Activation output_ = Activation::kIdentity;
  std::vector<DenseLayer> layers_;
};

std::vector<double> flatten(const MlpGradients& g);

/// Adam with decoupled weight decay: p <- p * (1 - lr * decay), then the Adam update.
class AdamW {
 public:
  struct Options {
    double learning_rate = 5e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double weight_decay = 0.0;
    double eps = 1e-8;
  };

  AdamW(const Mlp& model, Options options);

  /// Throws ValidationError naming the parameter block if a gradient is not finite.
  void step(Mlp& model, const MlpGradients& grads);

  std::int64_t step_count() const { return steps_; }
  const Options& options() const { return options_; }

 private:
  Options options_;
  MlpGradients first_;
  MlpGradients second_;
  std::int64_t steps_ = 0;
};

}  // namespace madspace
