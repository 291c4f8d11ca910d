#include "madspace/mlp.hpp"

#include <cmath>
#include <ostream>

#include "madspace/errors.hpp"
#include "madspace/text_io.hpp"

namespace madspace {
namespace {

Eigen::MatrixXd activate(Activation a, const Eigen::MatrixXd& pre) {
  if (a == Activation::kIdentity) return pre;
  const auto x = pre.array();
  return (x > 0.0).select(kSeluScale * x, (kSeluScale * kSeluAlpha) * (x.exp() - 1.0)).matrix();
}

Eigen::MatrixXd activation_grad(Activation a, const Eigen::MatrixXd& pre) {
  if (a == Activation::kIdentity) return Eigen::MatrixXd::Ones(pre.rows(), pre.cols());
  const auto x = pre.array();
  return (x > 0.0)
      .select(Eigen::ArrayXXd::Constant(x.rows(), x.cols(), kSeluScale),
              (kSeluScale * kSeluAlpha) * x.exp())
      .matrix();
}

void write_array(std::ostream& out, const double* data, Eigen::Index n) {
  for (Eigen::Index i = 0; i < n; ++i) out << ' ' << text_io::format_double(data[i]);
}

}  // namespace

std::string_view to_string(Activation a) {
  return a == Activation::kSelu ? "selu" : "identity";
}

Activation activation_from_string(std::string_view name) {
  if (name == "selu") return Activation::kSelu;
  if (name == "identity") return Activation::kIdentity;
  throw ParseError("unknown activation '" + std::string(name) + "'");
}

double selu(double x) { return x > 0.0 ? kSeluScale * x : kSeluScale * kSeluAlpha * std::expm1(x); }

double selu_derivative(double x) {
  return x > 0.0 ? kSeluScale : kSeluScale * kSeluAlpha * std::exp(x);
}

MlpGradients& MlpGradients::operator+=(const MlpGradients& other) {
  if (other.layers.size() != layers.size()) throw ValidationError("gradient shape mismatch");
  for (std::size_t l = 0; l < layers.size(); ++l) {
    layers[l].weights += other.layers[l].weights;
    layers[l].bias += other.layers[l].bias;
  }
  return *this;
}

MlpGradients& MlpGradients::operator*=(double factor) {
  for (DenseLayer& layer : layers) {
    layer.weights *= factor;
    layer.bias *= factor;
  }
  return *this;
}

Mlp::Mlp(std::vector<int> layer_dims, Activation hidden, Activation output)
    : dims_(std::move(layer_dims)), hidden_(hidden), output_(output) {
  if (dims_.size() < 2) throw ConfigError("an MLP needs at least input and output dims");
  for (int d : dims_) {
    if (d < 1) throw ConfigError("MLP layer dims must be positive");
  }
  for (std::size_t l = 0; l + 1 < dims_.size(); ++l) {
    layers_.push_back({Eigen::MatrixXd::Zero(dims_[l + 1], dims_[l]),
                       Eigen::VectorXd::Zero(dims_[l + 1])});
  }
}

Mlp Mlp::uniform_init(std::vector<int> layer_dims, std::mt19937_64& rng, Activation hidden,
                      Activation output) {
  Mlp m(std::move(layer_dims), hidden, output);
  for (DenseLayer& layer : m.layers_) {
    const double bound = std::sqrt(1.0 / static_cast<double>(layer.weights.cols()));
    std::uniform_real_distribution<double> u(-bound, bound);
    // Row-major fill so the draw order matches the flat parameter order.
    for (Eigen::Index r = 0; r < layer.weights.rows(); ++r) {
      for (Eigen::Index c = 0; c < layer.weights.cols(); ++c) layer.weights(r, c) = u(rng);
    }
    for (Eigen::Index r = 0; r < layer.bias.size(); ++r) layer.bias(r) = u(rng);
  }
  return m;
}

Eigen::VectorXd Mlp::forward(const Eigen::VectorXd& x) const {
  const Eigen::MatrixXd out = forward(Eigen::MatrixXd(x), nullptr);
  return out.col(0);
}

Eigen::MatrixXd Mlp::forward(const Eigen::MatrixXd& x, ForwardCache* cache) const {
  if (x.rows() != input_dim()) {
    throw ValidationError("MLP input has dimension " + std::to_string(x.rows()) + ", expected " +
                          std::to_string(input_dim()));
  }
  if (cache) {
    cache->inputs.clear();
    cache->pre_activations.clear();
  }
  Eigen::MatrixXd h = x;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    Eigen::MatrixXd pre = layers_[l].weights * h;
    pre.colwise() += layers_[l].bias;
    Eigen::MatrixXd next = activate(activation_for(l), pre);
    if (cache) {
      cache->inputs.push_back(std::move(h));
      cache->pre_activations.push_back(std::move(pre));
    }
    h = std::move(next);
  }
  return h;
}

MlpGradients Mlp::backward(const ForwardCache& cache, const Eigen::MatrixXd& upstream,
                           Eigen::MatrixXd* input_grad) const {
  if (cache.inputs.size() != layers_.size()) {
    throw ValidationError("backward needs a cache from forward() on this network");
  }
  if (upstream.rows() != output_dim() || upstream.cols() != cache.inputs.front().cols()) {
    throw ValidationError("backward: upstream gradient shape does not match the output");
  }
  MlpGradients grads;
  grads.layers.resize(layers_.size());
  Eigen::MatrixXd delta = upstream;
  for (std::size_t l = layers_.size(); l-- > 0;) {
    if (activation_for(l) != Activation::kIdentity) {
      delta = delta.cwiseProduct(activation_grad(activation_for(l), cache.pre_activations[l]));
    }
    grads.layers[l].weights.noalias() = delta * cache.inputs[l].transpose();
    grads.layers[l].bias = delta.rowwise().sum();
    if (l > 0 || input_grad) {
      Eigen::MatrixXd below = layers_[l].weights.transpose() * delta;
      delta = std::move(below);
    }
  }
  if (input_grad) *input_grad = std::move(delta);
  return grads;
}

MlpGradients Mlp::zero_gradients() const {
  MlpGradients g;
  for (const DenseLayer& layer : layers_) {
    g.layers.push_back({Eigen::MatrixXd::Zero(layer.weights.rows(), layer.weights.cols()),
                        Eigen::VectorXd::Zero(layer.bias.size())});
  }
  return g;
}

std::size_t Mlp::parameter_count() const {
  std::size_t n = 0;
  for (const DenseLayer& layer : layers_) n += layer.weights.size() + layer.bias.size();
  return n;
}

namespace {

void append_layers(const std::vector<DenseLayer>& layers, std::vector<double>& out) {
  for (const DenseLayer& layer : layers) {
    for (Eigen::Index r = 0; r < layer.weights.rows(); ++r) {
      for (Eigen::Index c = 0; c < layer.weights.cols(); ++c) out.push_back(layer.weights(r, c));
    }
    for (Eigen::Index r = 0; r < layer.bias.size(); ++r) out.push_back(layer.bias(r));
  }
}

}  // namespace

std::vector<double> Mlp::flat_parameters() const {
  std::vector<double> out;
  out.reserve(parameter_count());
  append_layers(layers_, out);
  return out;
}

std::vector<double> flatten(const MlpGradients& g) {
  std::vector<double> out;
  append_layers(g.layers, out);
  return out;
}

void Mlp::set_flat_parameters(std::span<const double> values) {
  if (values.size() != parameter_count()) {
    throw ValidationError("set_flat_parameters: expected " + std::to_string(parameter_count()) +
                          " values, got " + std::to_string(values.size()));
  }
  std::size_t k = 0;
  for (DenseLayer& layer : layers_) {
    for (Eigen::Index r = 0; r < layer.weights.rows(); ++r) {
      for (Eigen::Index c = 0; c < layer.weights.cols(); ++c) layer.weights(r, c) = values[k++];
    }
    for (Eigen::Index r = 0; r < layer.bias.size(); ++r) layer.bias(r) = values[k++];
  }
}

bool Mlp::all_finite() const {
  for (const DenseLayer& layer : layers_) {
    if (!layer.weights.allFinite() || !layer.bias.allFinite()) return false;
  }
  return true;
}

bool Mlp::operator==(const Mlp& other) const {
  if (dims_ != other.dims_ || hidden_ != other.hidden_ || output_ != other.output_) return false;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    if (layers_[l].weights != other.layers_[l].weights) return false;
    if (layers_[l].bias != other.layers_[l].bias) return false;
  }
  return true;
}

void Mlp::save(std::ostream& out) const {
  out << "mlp\nlayer_dims";
  for (int d : dims_) out << ' ' << d;
  out << "\nhidden_activation " << to_string(hidden_) << "\noutput_activation "
      << to_string(output_) << '\n';
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> w =
        layers_[l].weights;
    out << "weights " << l << ' ' << w.rows() << ' ' << w.cols();
    write_array(out, w.data(), w.size());
    out << "\nbias " << l << ' ' << layers_[l].bias.size();
    write_array(out, layers_[l].bias.data(), layers_[l].bias.size());
    out << '\n';
  }
  out << "end_mlp\n";
}

Mlp Mlp::load(std::istream& in, std::string_view source) {
  text_io::LineReader reader(in, source);
  try {
    reader.expect("mlp");
    std::vector<int> dims;
    {
      const auto tokens = reader.expect("layer_dims");
      for (std::size_t i = 1; i < tokens.size(); ++i) {
        dims.push_back(static_cast<int>(text_io::parse_int(tokens[i])));
      }
    }
    const Activation hidden = activation_from_string(reader.value("hidden_activation"));
    const Activation output = activation_from_string(reader.value("output_activation"));
    Mlp m(dims, hidden, output);
    for (std::size_t l = 0; l < m.layers_.size(); ++l) {
      DenseLayer& layer = m.layers_[l];
      {
        const auto tokens = reader.expect("weights");
        const auto rows = layer.weights.rows();
        const auto cols = layer.weights.cols();
        if (tokens.size() != static_cast<std::size_t>(4 + rows * cols) ||
            text_io::parse_int(tokens[1]) != static_cast<long long>(l) ||
            text_io::parse_int(tokens[2]) != rows || text_io::parse_int(tokens[3]) != cols) {
          reader.fail("weights of layer " + std::to_string(l) + " have the wrong shape");
        }
        for (Eigen::Index r = 0; r < rows; ++r) {
          for (Eigen::Index c = 0; c < cols; ++c) {
            layer.weights(r, c) = text_io::parse_double(tokens[4 + r * cols + c]);
          }
        }
      }
      {
        const auto tokens = reader.expect("bias");
        const auto n = layer.bias.size();
        if (tokens.size() != static_cast<std::size_t>(3 + n) ||
            text_io::parse_int(tokens[1]) != static_cast<long long>(l) ||
            text_io::parse_int(tokens[2]) != n) {
          reader.fail("bias of layer " + std::to_string(l) + " has the wrong shape");
        }
        for (Eigen::Index r = 0; r < n; ++r) layer.bias(r) = text_io::parse_double(tokens[3 + r]);
      }
    }
    reader.expect("end_mlp");
    if (!m.all_finite()) reader.fail("non-finite parameter");
    return m;
  } catch (const ParseError& e) {
    const std::string what = e.what();
    if (what.rfind(std::string(source), 0) == 0) throw;
    reader.fail(what);
  } catch (const ConfigError& e) {
    reader.fail(e.what());
  }
}

AdamW::AdamW(const Mlp& model, Options options)
    : options_(options), first_(model.zero_gradients()), second_(model.zero_gradients()) {
  if (!(options.learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
  if (options.weight_decay < 0.0) throw ConfigError("weight decay must be non-negative");
}

void AdamW::step(Mlp& model, const MlpGradients& grads) {
  auto& layers = model.layers();
  if (grads.layers.size() != layers.size() || first_.layers.size() != layers.size()) {
    throw ValidationError("AdamW: gradient shape mismatch");
  }
  for (std::size_t l = 0; l < layers.size(); ++l) {
    if (grads.layers[l].weights.rows() != layers[l].weights.rows() ||
        grads.layers[l].weights.cols() != layers[l].weights.cols() ||
        grads.layers[l].bias.size() != layers[l].bias.size()) {
      throw ValidationError("AdamW: gradient shape mismatch in layer " + std::to_string(l));
    }
    if (!grads.layers[l].weights.allFinite()) {
      throw ValidationError("AdamW: non-finite gradient in layer " + std::to_string(l) +
                            " weights");
    }
    if (!grads.layers[l].bias.allFinite()) {
      throw ValidationError("AdamW: non-finite gradient in layer " + std::to_string(l) + " bias");
    }
  }
  ++steps_;
  const double lr = options_.learning_rate;
  const double b1 = options_.beta1;
  const double b2 = options_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
  const double decay = 1.0 - lr * options_.weight_decay;
  auto update = [&](auto& param, const auto& grad, auto& m, auto& v) {
    m = b1 * m + (1.0 - b1) * grad;
    v = b2 * v + (1.0 - b2) * grad.cwiseProduct(grad);
    param *= decay;
    param.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + options_.eps);
  };
  for (std::size_t l = 0; l < layers.size(); ++l) {
    update(layers[l].weights, grads.layers[l].weights, first_.layers[l].weights,
           second_.layers[l].weights);
    update(layers[l].bias, grads.layers[l].bias, first_.layers[l].bias, second_.layers[l].bias);
  }
}

}  // namespace madspace
