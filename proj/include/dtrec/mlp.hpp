#pragma once

#include <vector>

#include <Eigen/Dense>

#include "dtrec/rng.hpp"

namespace dtrec {

// weight is (out x in). An empty bias means the layer has no bias term.
struct DenseLayer {
  Eigen::MatrixXd weight;
  Eigen::VectorXd bias;
};

// Feed-forward network with ReLU on every hidden layer and a linear scalar
// output layer.
struct Mlp {
  std::vector<DenseLayer> layers;

  bool empty() const { return layers.empty(); }
  Eigen::Index input_size() const { return layers.empty() ? 0 : layers.front().weight.cols(); }
};

enum class MlpInit {
  glorot_uniform,   // U(-a, a), a = sqrt(6 / (fan_in + fan_out)); biases zero
  scaled_normal,    // N(0, 1) / sqrt(fan_in)
  zeros,
};

// `widths` lists the output width of every layer; the last must be 1.
Mlp make_mlp(Eigen::Index input_size, const std::vector<int>& widths, bool with_bias,
             MlpInit init, Rng& rng);

// Intermediate values kept for backprop. activations[0] is the input;
// pre[l] is layer l's affine output.
struct MlpTrace {
  std::vector<Eigen::VectorXd> activations;
  std::vector<Eigen::VectorXd> pre;
};

double mlp_forward(const Mlp& mlp, const Eigen::VectorXd& input, MlpTrace* trace = nullptr);

// Accumulates upstream * d(output)/d(params) into `grads` (same shapes as
// mlp.layers) and, when requested, d(output)/d(input) * upstream into
// `input_grad`.
void mlp_backward(const Mlp& mlp, const MlpTrace& trace, double upstream,
                  std::vector<DenseLayer>* grads, Eigen::VectorXd* input_grad);

// Gradient of the scalar output with respect to the input.
Eigen::VectorXd mlp_input_gradient(const Mlp& mlp, const Eigen::VectorXd& input);

// For a loss P(q) of the input gradient q = d(output)/d(input), accumulates
// dP/d(weights) given dP/dq. ReLU masks are piecewise constant, so biases and
// the input receive no gradient almost everywhere.
void mlp_input_gradient_backward(const Mlp& mlp, const Eigen::VectorXd& input,
                                 const Eigen::VectorXd& dloss_dq,
                                 std::vector<DenseLayer>* grads);

std::vector<DenseLayer> zero_like(const std::vector<DenseLayer>& layers);

}  // namespace dtrec
