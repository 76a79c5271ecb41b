#include "skillplan/nn.hpp"

#include <algorithm>
#include <cmath>

namespace skillplan::nn {

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

const char* activation_name(Activation a) {
  switch (a) {
    case Activation::Identity:
      return "identity";
    case Activation::Tanh:
      return "tanh";
    case Activation::Relu:
      return "relu";
    case Activation::Sigmoid:
      return "sigmoid";
  }
  return "identity";
}

Activation parse_activation(const std::string& name) {
  if (name == "identity") return Activation::Identity;
  if (name == "tanh") return Activation::Tanh;
  if (name == "relu") return Activation::Relu;
  if (name == "sigmoid") return Activation::Sigmoid;
  throw Error(ErrorCode::Parse, "unknown activation '" + name + "'");
}

void to_json(nlohmann::json& j, const Architecture& a) {
  nlohmann::json conv = nlohmann::json::array();
  for (const auto& c : a.conv) {
    conv.push_back({{"out_channels", c.out_channels},
                    {"kernel", c.kernel},
                    {"stride", c.stride},
                    {"pool", c.pool}});
  }
  j = {{"image", {a.image_channels, a.image_height, a.image_width}},
       {"conv", conv},
       {"vector_inputs", a.vector_inputs},
       {"hidden", a.hidden},
       {"outputs", a.outputs},
       {"hidden_activation", activation_name(a.hidden_activation)},
       {"output_activation", activation_name(a.output_activation)}};
}

void from_json(const nlohmann::json& j, Architecture& a) {
  const auto& img = j.at("image");
  a.image_channels = img.at(0).get<int>();
  a.image_height = img.at(1).get<int>();
  a.image_width = img.at(2).get<int>();
  a.conv.clear();
  for (const auto& c : j.at("conv")) {
    a.conv.push_back({c.at("out_channels").get<int>(), c.at("kernel").get<int>(),
                      c.at("stride").get<int>(), c.at("pool").get<int>()});
  }
  a.vector_inputs = j.at("vector_inputs").get<int>();
  a.hidden = j.at("hidden").get<std::vector<int>>();
  a.outputs = j.at("outputs").get<int>();
  a.hidden_activation = parse_activation(j.at("hidden_activation").get<std::string>());
  a.output_activation = parse_activation(j.at("output_activation").get<std::string>());
}

namespace {

void activate(Activation a, std::span<const double> in, std::vector<double>& out) {
  out.resize(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) {
    const double z = in[i];
    switch (a) {
      case Activation::Identity:
        out[i] = z;
        break;
      case Activation::Tanh:
        out[i] = std::tanh(z);
        break;
      case Activation::Relu:
        out[i] = z > 0.0 ? z : 0.0;
        break;
      case Activation::Sigmoid:
        out[i] = sigmoid(z);
        break;
    }
  }
}

// Derivative expressed through the activation output y.
double activation_slope(Activation a, double y) {
  switch (a) {
    case Activation::Identity:
      return 1.0;
    case Activation::Tanh:
      return 1.0 - y * y;
    case Activation::Relu:
      return y > 0.0 ? 1.0 : 0.0;
    case Activation::Sigmoid:
      return y * (1.0 - y);
  }
  return 1.0;
}

}  // namespace

Network::Network(Architecture arch) : arch_(std::move(arch)) {
  if (arch_.outputs <= 0 || arch_.vector_inputs < 0 || arch_.input_size() <= 0) {
    throw Error(ErrorCode::InvalidArgument, "network needs inputs and outputs");
  }
  std::size_t offset = 0;
  auto add = [&](Layer l) {
    l.offset = offset;
    offset += l.count;
    layers_.push_back(l);
  };

  const bool image = arch_.image_size() > 0;
  if (!image && !arch_.conv.empty()) {
    throw Error(ErrorCode::InvalidArgument, "convolutional layers need an image input");
  }
  int c = arch_.image_channels;
  int h = arch_.image_height;
  int w = arch_.image_width;
  for (const auto& spec : arch_.conv) {
    if (spec.kernel <= 0 || spec.stride <= 0 || spec.out_channels <= 0 || spec.pool <= 0 ||
        spec.kernel > h || spec.kernel > w) {
      throw Error(ErrorCode::InvalidArgument, "invalid convolution spec");
    }
    Layer conv{Kind::Conv};
    conv.in_c = c, conv.in_h = h, conv.in_w = w;
    conv.kernel = spec.kernel;
    conv.stride = spec.stride;
    conv.out_c = spec.out_channels;
    conv.out_h = (h - spec.kernel) / spec.stride + 1;
    conv.out_w = (w - spec.kernel) / spec.stride + 1;
    conv.in_size = static_cast<std::size_t>(c) * h * w;
    conv.out_size = static_cast<std::size_t>(conv.out_c) * conv.out_h * conv.out_w;
    conv.count = static_cast<std::size_t>(conv.out_c) * c * spec.kernel * spec.kernel + conv.out_c;
    add(conv);
    c = conv.out_c, h = conv.out_h, w = conv.out_w;

    Layer act{Kind::Act};
    act.act = arch_.hidden_activation;
    act.in_size = act.out_size = static_cast<std::size_t>(c) * h * w;
    add(act);

    if (spec.pool > 1) {
      Layer pool{Kind::Pool};
      pool.in_c = c, pool.in_h = h, pool.in_w = w;
      pool.kernel = spec.pool;
      pool.out_c = c, pool.out_h = h / spec.pool, pool.out_w = w / spec.pool;
      if (pool.out_h == 0 || pool.out_w == 0) {
        throw Error(ErrorCode::InvalidArgument, "pooling factor exceeds feature map");
      }
      pool.in_size = static_cast<std::size_t>(c) * h * w;
      pool.out_size = static_cast<std::size_t>(c) * pool.out_h * pool.out_w;
      add(pool);
      h = pool.out_h, w = pool.out_w;
    }
  }

  std::size_t width = static_cast<std::size_t>(c) * h * w;
  if (image) {
    Layer concat{Kind::Concat};
    concat.in_size = width;
    concat.out_size = width + static_cast<std::size_t>(arch_.vector_inputs);
    add(concat);
    width = concat.out_size;
  } else {
    width = static_cast<std::size_t>(arch_.vector_inputs);
  }

  auto dense = [&](int out, Activation a) {
    Layer d{Kind::Dense};
    d.in_size = width;
    d.out_size = static_cast<std::size_t>(out);
    d.count = d.in_size * d.out_size + d.out_size;
    add(d);
    if (a != Activation::Identity) {
      Layer act{Kind::Act};
      act.act = a;
      act.in_size = act.out_size = d.out_size;
      add(act);
    }
    width = d.out_size;
  };
  for (int units : arch_.hidden) {
    if (units <= 0) throw Error(ErrorCode::InvalidArgument, "hidden layer width must be positive");
    dense(units, arch_.hidden_activation);
  }
  dense(arch_.outputs, arch_.output_activation);
  params_.assign(offset, 0.0);
}

void Network::set_parameters(std::span<const double> values) {
  if (values.size() != params_.size()) {
    throw Error(ErrorCode::DimensionMismatch, "parameter vector has " +
                                                  std::to_string(values.size()) + " entries, expected " +
                                                  std::to_string(params_.size()));
  }
  std::copy(values.begin(), values.end(), params_.begin());
}

void Network::init_random(Rng& rng) {
  std::fill(params_.begin(), params_.end(), 0.0);
  for (const auto& l : layers_) {
    std::size_t fan_in = 0;
    std::size_t fan_out = 0;
    std::size_t weights = 0;
    if (l.kind == Kind::Dense) {
      fan_in = l.in_size;
      fan_out = l.out_size;
      weights = l.in_size * l.out_size;
    } else if (l.kind == Kind::Conv) {
      fan_in = static_cast<std::size_t>(l.in_c) * l.kernel * l.kernel;
      fan_out = static_cast<std::size_t>(l.out_c) * l.kernel * l.kernel;
      weights = fan_in * l.out_c;
    } else {
      continue;
    }
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> u(-limit, limit);
    for (std::size_t i = 0; i < weights; ++i) params_[l.offset + i] = u(rng);
  }
}

void Network::forward_layer(const Layer& l, std::span<const double> in,
                            std::span<const double> extra, std::vector<double>& out) const {
  const double* p = params_.data() + l.offset;
  switch (l.kind) {
    case Kind::Act:
      activate(l.act, in, out);
      return;
    case Kind::Concat:
      out.assign(in.begin(), in.end());
      out.insert(out.end(), extra.begin(), extra.end());
      return;
    case Kind::Dense: {
      out.assign(l.out_size, 0.0);
      const double* bias = p + l.in_size * l.out_size;
      for (std::size_t o = 0; o < l.out_size; ++o) {
        const double* row = p + o * l.in_size;
        double s = bias[o];
        for (std::size_t i = 0; i < l.in_size; ++i) s += row[i] * in[i];
        out[o] = s;
      }
      return;
    }
    case Kind::Conv: {
      out.assign(l.out_size, 0.0);
      const int k = l.kernel;
      const double* bias = p + static_cast<std::size_t>(l.out_c) * l.in_c * k * k;
      for (int oc = 0; oc < l.out_c; ++oc) {
        for (int oy = 0; oy < l.out_h; ++oy) {
          for (int ox = 0; ox < l.out_w; ++ox) {
            double s = bias[oc];
            for (int ic = 0; ic < l.in_c; ++ic) {
              const double* wk = p + ((static_cast<std::size_t>(oc) * l.in_c + ic) * k) * k;
              const double* src = in.data() + static_cast<std::size_t>(ic) * l.in_h * l.in_w;
              for (int u = 0; u < k; ++u) {
                const double* row = src + static_cast<std::size_t>(oy * l.stride + u) * l.in_w +
                                    ox * l.stride;
                for (int v = 0; v < k; ++v) s += wk[u * k + v] * row[v];
              }
            }
            out[(static_cast<std::size_t>(oc) * l.out_h + oy) * l.out_w + ox] = s;
          }
        }
      }
      return;
    }
    case Kind::Pool: {
      out.assign(l.out_size, 0.0);
      const int f = l.kernel;
      const double scale = 1.0 / (f * f);
      for (int c = 0; c < l.out_c; ++c) {
        for (int oy = 0; oy < l.out_h; ++oy) {
          for (int ox = 0; ox < l.out_w; ++ox) {
            double s = 0.0;
            for (int u = 0; u < f; ++u) {
              for (int v = 0; v < f; ++v) {
                s += in[(static_cast<std::size_t>(c) * l.in_h + oy * f + u) * l.in_w + ox * f + v];
              }
            }
            out[(static_cast<std::size_t>(c) * l.out_h + oy) * l.out_w + ox] = s * scale;
          }
        }
      }
      return;
    }
  }
}

std::vector<double> Network::forward(std::span<const double> input) const {
  Tape tape;
  return forward(input, tape);
}

std::vector<double> Network::forward(std::span<const double> input, Tape& tape) const {
  if (input.size() != static_cast<std::size_t>(arch_.input_size())) {
    throw Error(ErrorCode::DimensionMismatch,
                "network input has " + std::to_string(input.size()) + " entries, expected " +
                    std::to_string(arch_.input_size()));
  }
  const std::size_t image = static_cast<std::size_t>(arch_.image_size());
  tape.values.resize(layers_.size() + 1);
  if (image > 0) {
    tape.values[0].assign(input.begin(), input.begin() + static_cast<std::ptrdiff_t>(image));
    tape.extra.assign(input.begin() + static_cast<std::ptrdiff_t>(image), input.end());
  } else {
    tape.values[0].assign(input.begin(), input.end());
    tape.extra.clear();
  }
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    forward_layer(layers_[i], tape.values[i], tape.extra, tape.values[i + 1]);
  }
  return tape.values.back();
}

void Network::backward(const Tape& tape, std::span<const double> grad_out,
                       std::span<double> grad_params) const {
  if (grad_out.size() != static_cast<std::size_t>(arch_.outputs) ||
      grad_params.size() != params_.size() || tape.values.size() != layers_.size() + 1) {
    throw Error(ErrorCode::DimensionMismatch, "backward: inconsistent buffer sizes");
  }
  std::vector<double> g(grad_out.begin(), grad_out.end());
  std::vector<double> g_in;
  for (std::size_t idx = layers_.size(); idx-- > 0;) {
    const Layer& l = layers_[idx];
    const std::vector<double>& in = tape.values[idx];
    const std::vector<double>& out = tape.values[idx + 1];
    const double* p = params_.data() + l.offset;
    double* gp = grad_params.data() + l.offset;
    const bool need_input_grad = idx > 0;
    switch (l.kind) {
      case Kind::Act:
        g_in.resize(l.in_size);
        for (std::size_t i = 0; i < l.in_size; ++i) g_in[i] = g[i] * activation_slope(l.act, out[i]);
        break;
      case Kind::Concat:
        g_in.assign(g.begin(), g.begin() + static_cast<std::ptrdiff_t>(l.in_size));
        break;
      case Kind::Dense: {
        double* gbias = gp + l.in_size * l.out_size;
        g_in.assign(need_input_grad ? l.in_size : 0, 0.0);
        for (std::size_t o = 0; o < l.out_size; ++o) {
          const double go = g[o];
          gbias[o] += go;
          if (go == 0.0) continue;
          double* grow = gp + o * l.in_size;
          const double* row = p + o * l.in_size;
          for (std::size_t i = 0; i < l.in_size; ++i) grow[i] += go * in[i];
          if (need_input_grad) {
            for (std::size_t i = 0; i < l.in_size; ++i) g_in[i] += go * row[i];
          }
        }
        break;
      }
      case Kind::Conv: {
        const int k = l.kernel;
        double* gbias = gp + static_cast<std::size_t>(l.out_c) * l.in_c * k * k;
        g_in.assign(need_input_grad ? l.in_size : 0, 0.0);
        for (int oc = 0; oc < l.out_c; ++oc) {
          for (int oy = 0; oy < l.out_h; ++oy) {
            for (int ox = 0; ox < l.out_w; ++ox) {
              const double go = g[(static_cast<std::size_t>(oc) * l.out_h + oy) * l.out_w + ox];
              gbias[oc] += go;
              if (go == 0.0) continue;
              for (int ic = 0; ic < l.in_c; ++ic) {
                const std::size_t wbase = ((static_cast<std::size_t>(oc) * l.in_c + ic) * k) * k;
                const std::size_t src = static_cast<std::size_t>(ic) * l.in_h * l.in_w;
                for (int u = 0; u < k; ++u) {
                  const std::size_t row =
                      src + static_cast<std::size_t>(oy * l.stride + u) * l.in_w + ox * l.stride;
                  for (int v = 0; v < k; ++v) {
                    gp[wbase + u * k + v] += go * in[row + v];
                    if (need_input_grad) g_in[row + v] += go * p[wbase + u * k + v];
                  }
                }
              }
            }
          }
        }
        break;
      }
      case Kind::Pool: {
        const int f = l.kernel;
        const double scale = 1.0 / (f * f);
        g_in.assign(l.in_size, 0.0);
        for (int c = 0; c < l.out_c; ++c) {
          for (int oy = 0; oy < l.out_h; ++oy) {
            for (int ox = 0; ox < l.out_w; ++ox) {
              const double go =
                  g[(static_cast<std::size_t>(c) * l.out_h + oy) * l.out_w + ox] * scale;
              for (int u = 0; u < f; ++u) {
                for (int v = 0; v < f; ++v) {
                  g_in[(static_cast<std::size_t>(c) * l.in_h + oy * f + u) * l.in_w + ox * f + v] += go;
                }
              }
            }
          }
        }
        break;
      }
    }
    if (!need_input_grad) break;
    g.swap(g_in);
  }
}

nlohmann::json network_to_json(const Network& net) {
  return {{"format", "skillplan-network"},
          {"version", 1},
          {"architecture", net.architecture()},
          {"parameters", std::vector<double>(net.parameters().begin(), net.parameters().end())}};
}

Network network_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "skillplan-network" || j.value("version", 0) != 1) {
    throw Error(ErrorCode::Parse, "not a network checkpoint");
  }
  Network net(j.at("architecture").get<Architecture>());
  net.set_parameters(j.at("parameters").get<std::vector<double>>());
  return net;
}

}  // namespace skillplan::nn
