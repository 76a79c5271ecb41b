#pragma once

// Small dense/convolutional networks in double precision with hand-written
// backpropagation. Parameters live in one flat vector so that derivative-free
// search and gradient descent share the same representation.

#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "skillplan/common.hpp"

namespace skillplan::nn {

enum class Activation { Identity, Tanh, Relu, Sigmoid };

const char* activation_name(Activation a);
Activation parse_activation(const std::string& name);

struct ConvSpec {
  int out_channels = 1;
  int kernel = 3;
  int stride = 1;
  int pool = 1;  // average-pool factor applied after the activation; 1 = none

  bool operator==(const ConvSpec&) const = default;
};

/// Input layout: an optional image (channels x height x width, row-major)
/// followed by `vector_inputs` plain features. The convolutional front-end
/// sees only the image; its flattened output is concatenated with the
/// plain features before the dense layers.
struct Architecture {
  int image_channels = 0;
  int image_height = 0;
  int image_width = 0;
  std::vector<ConvSpec> conv;
  int vector_inputs = 0;
  std::vector<int> hidden;
  int outputs = 1;
  Activation hidden_activation = Activation::Tanh;
  Activation output_activation = Activation::Identity;

  int image_size() const { return image_channels * image_height * image_width; }
  int input_size() const { return image_size() + vector_inputs; }
  bool operator==(const Architecture&) const = default;
};

void to_json(nlohmann::json& j, const Architecture& a);
void from_json(const nlohmann::json& j, Architecture& a);

class Network {
 public:
  /// Activations of one forward pass, kept for backpropagation.
  struct Tape {
    std::vector<std::vector<double>> values;  // values[0] is the (image) input
    std::vector<double> extra;                // plain features joined after the front-end
  };

  Network() = default;
  explicit Network(Architecture arch);

  const Architecture& architecture() const { return arch_; }
  std::size_t parameter_count() const { return params_.size(); }
  std::span<const double> parameters() const { return params_; }
  std::span<double> parameters() { return params_; }
  void set_parameters(std::span<const double> values);

  /// Scaled uniform (Glorot) weights, zero biases.
  void init_random(Rng& rng);

  std::vector<double> forward(std::span<const double> input) const;
  std::vector<double> forward(std::span<const double> input, Tape& tape) const;

  /// Adds d(sum_j grad_out[j] * out[j]) / d(params) into `grad_params`.
  void backward(const Tape& tape, std::span<const double> grad_out,
                std::span<double> grad_params) const;

  bool operator==(const Network& o) const { return arch_ == o.arch_ && params_ == o.params_; }

 private:
  enum class Kind { Conv, Pool, Act, Concat, Dense };
  struct Layer {
    Kind kind;
    int in_c = 0, in_h = 0, in_w = 0;
    int out_c = 0, out_h = 0, out_w = 0;
    int kernel = 0, stride = 1;
    Activation act = Activation::Identity;
    std::size_t in_size = 0, out_size = 0;
    std::size_t offset = 0, count = 0;
  };

  void forward_layer(const Layer& l, std::span<const double> in, std::span<const double> extra,
                     std::vector<double>& out) const;

  Architecture arch_;
  std::vector<Layer> layers_;
  std::vector<double> params_;
};

nlohmann::json network_to_json(const Network& net);
Network network_from_json(const nlohmann::json& j);

double sigmoid(double z);

}  // namespace skillplan::nn
