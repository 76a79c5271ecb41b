#include <doctest.h>

#include <cmath>
#include <vector>

#include "skillplan/nn.hpp"

using namespace skillplan;
using namespace skillplan::nn;

namespace {

double output_sum(const Network& net, const std::vector<double>& x, const std::vector<double>& w) {
  const auto y = net.forward(x);
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += w[i] * y[i];
  return s;
}

std::vector<double> random_vector(Rng& rng, std::size_t n) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> v(n);
  for (double& x : v) x = u(rng);
  return v;
}

void check_gradient(const Architecture& arch, std::uint64_t seed) {
  Rng rng(seed);
  Network net(arch);
  net.init_random(rng);
  const auto x = random_vector(rng, static_cast<std::size_t>(arch.input_size()));
  const auto w = random_vector(rng, static_cast<std::size_t>(arch.outputs));
  Network::Tape tape;
  net.forward(x, tape);
  std::vector<double> grad(net.parameter_count(), 0.0);
  net.backward(tape, w, grad);

  const double h = 1e-6;
  std::vector<double> params(net.parameters().begin(), net.parameters().end());
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params;
    p[i] += h;
    net.set_parameters(p);
    const double up = output_sum(net, x, w);
    p[i] -= 2 * h;
    net.set_parameters(p);
    const double down = output_sum(net, x, w);
    const double numeric = (up - down) / (2 * h);
    const double denom = std::max({std::fabs(numeric), std::fabs(grad[i]), 1e-6});
    CAPTURE(i);
    CHECK(std::fabs(numeric - grad[i]) / denom <= 1e-4);
  }
  net.set_parameters(params);
}

}  // namespace

TEST_CASE("dense network gradients match finite differences") {
  for (Activation act : {Activation::Tanh, Activation::Sigmoid, Activation::Identity}) {
    Architecture a;
    a.vector_inputs = 4;
    a.hidden = {5, 3};
    a.outputs = 2;
    a.hidden_activation = act;
    check_gradient(a, 11);
  }
}

TEST_CASE("convolutional network gradients match finite differences") {
  Architecture a;
  a.image_channels = 1;
  a.image_height = 8;
  a.image_width = 8;
  a.conv = {{2, 3, 1, 2}, {3, 2, 1, 1}};
  a.vector_inputs = 2;
  a.hidden = {4};
  a.outputs = 2;
  check_gradient(a, 5);
}

TEST_CASE("new networks are zero and output their biases") {
  Architecture a;
  a.vector_inputs = 3;
  a.hidden = {4};
  a.outputs = 2;
  Network net(a);
  const std::vector<double> x{1.0, -2.0, 0.5};
  CHECK(net.forward(x) == std::vector<double>{0.0, 0.0});
  CHECK(net.parameter_count() == 3 * 4 + 4 + 4 * 2 + 2);
}

TEST_CASE("input and parameter sizes are checked") {
  Architecture a;
  a.vector_inputs = 3;
  a.hidden = {4};
  Network net(a);
  CHECK_THROWS_AS(net.forward(std::vector<double>{1.0}), Error);
  CHECK_THROWS_AS(net.set_parameters(std::vector<double>(3, 0.0)), Error);
}

TEST_CASE("network JSON round trip is exact") {
  Architecture a;
  a.image_channels = 1;
  a.image_height = 6;
  a.image_width = 6;
  a.conv = {{2, 3, 1, 1}};
  a.vector_inputs = 1;
  a.hidden = {3};
  a.outputs = 1;
  Network net(a);
  Rng rng(3);
  net.init_random(rng);
  const Network back = network_from_json(network_to_json(net));
  CHECK(back == net);
  const std::vector<double> x(37, 0.25);
  CHECK(back.forward(x) == net.forward(x));
}

TEST_CASE("sigmoid is stable at large magnitudes") {
  CHECK(sigmoid(0.0) == 0.5);
  CHECK(sigmoid(800.0) == 1.0);
  CHECK(sigmoid(-800.0) >= 0.0);
  CHECK(std::isfinite(sigmoid(-800.0)));
}
