#include "dtrec/mlp.hpp"

#include <cmath>

#include "dtrec/error.hpp"

namespace dtrec {

Mlp make_mlp(Eigen::Index input_size, const std::vector<int>& widths, bool with_bias,
             MlpInit init, Rng& rng) {
  if (widths.empty() || widths.back() != 1)
    throw Error("bad_architecture", "mlp must end in a scalar output layer");
  Mlp mlp;
  Eigen::Index fan_in = input_size;
  std::normal_distribution<double> normal(0.0, 1.0);
  for (const int width : widths) {
    if (width < 1) throw Error("bad_architecture", "layer width must be positive");
    DenseLayer layer;
    layer.weight = Eigen::MatrixXd::Zero(width, fan_in);
    if (with_bias) layer.bias = Eigen::VectorXd::Zero(width);
    if (init == MlpInit::glorot_uniform) {
      const double a = std::sqrt(6.0 / static_cast<double>(fan_in + width));
      std::uniform_real_distribution<double> u(-a, a);
      for (Eigen::Index c = 0; c < layer.weight.cols(); ++c)
        for (Eigen::Index r = 0; r < layer.weight.rows(); ++r) layer.weight(r, c) = u(rng);
    } else if (init == MlpInit::scaled_normal) {
      const double s = 1.0 / std::sqrt(static_cast<double>(fan_in));
      for (Eigen::Index c = 0; c < layer.weight.cols(); ++c)
        for (Eigen::Index r = 0; r < layer.weight.rows(); ++r) layer.weight(r, c) = s * normal(rng);
    }
    mlp.layers.push_back(std::move(layer));
    fan_in = width;
  }
  return mlp;
}

double mlp_forward(const Mlp& mlp, const Eigen::VectorXd& input, MlpTrace* trace) {
  Eigen::VectorXd a = input;
  if (trace) {
    trace->activations.clear();
    trace->pre.clear();
    trace->activations.push_back(a);
  }
  const auto n = mlp.layers.size();
  for (std::size_t l = 0; l < n; ++l) {
    const auto& layer = mlp.layers[l];
    Eigen::VectorXd z = layer.weight * a;
    if (layer.bias.size() > 0) z += layer.bias;
    if (trace) trace->pre.push_back(z);
    a = (l + 1 < n) ? Eigen::VectorXd(z.cwiseMax(0.0)) : z;
    if (trace) trace->activations.push_back(a);
  }
  return a(0);
}

void mlp_backward(const Mlp& mlp, const MlpTrace& trace, double upstream,
                  std::vector<DenseLayer>* grads, Eigen::VectorXd* input_grad) {
  const auto n = mlp.layers.size();
  Eigen::VectorXd delta = Eigen::VectorXd::Constant(1, upstream);
  for (std::size_t l = n; l-- > 0;) {
    const auto& layer = mlp.layers[l];
    if (grads) {
      auto& g = (*grads)[l];
      g.weight.noalias() += delta * trace.activations[l].transpose();
      if (g.bias.size() > 0) g.bias += delta;
    }
    Eigen::VectorXd back = layer.weight.transpose() * delta;
    if (l > 0) {
      const auto& pre = trace.pre[l - 1];
      for (Eigen::Index k = 0; k < back.size(); ++k)
        if (pre(k) <= 0.0) back(k) = 0.0;
    }
    delta = std::move(back);
  }
  if (input_grad) *input_grad += delta;
}

Eigen::VectorXd mlp_input_gradient(const Mlp& mlp, const Eigen::VectorXd& input) {
  MlpTrace trace;
  mlp_forward(mlp, input, &trace);
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(input.size());
  mlp_backward(mlp, trace, 1.0, nullptr, &grad);
  return grad;
}

void mlp_input_gradient_backward(const Mlp& mlp, const Eigen::VectorXd& input,
                                 const Eigen::VectorXd& dloss_dq,
                                 std::vector<DenseLayer>* grads) {
  MlpTrace trace;
  mlp_forward(mlp, input, &trace);
  const auto n = mlp.layers.size();
  // s[l]: d(output)/d(pre-activation of layer l), masked by ReLU.
  std::vector<Eigen::VectorXd> s(n);
  s[n - 1] = Eigen::VectorXd::Ones(1);
  for (std::size_t l = n - 1; l-- > 0;) {
    Eigen::VectorXd back = mlp.layers[l + 1].weight.transpose() * s[l + 1];
    for (Eigen::Index k = 0; k < back.size(); ++k)
      if (trace.pre[l](k) <= 0.0) back(k) = 0.0;
    s[l] = std::move(back);
  }
  // q = W_0^T s_0, and s_l = mask_l * (W_{l+1}^T s_{l+1}).
  Eigen::VectorXd e = dloss_dq;
  for (std::size_t l = 0; l < n; ++l) {
    (*grads)[l].weight.noalias() += s[l] * e.transpose();
    if (l + 1 == n) break;
    Eigen::VectorXd r = mlp.layers[l].weight * e;
    for (Eigen::Index k = 0; k < r.size(); ++k)
      if (trace.pre[l](k) <= 0.0) r(k) = 0.0;
    e = std::move(r);
  }
}

std::vector<DenseLayer> zero_like(const std::vector<DenseLayer>& layers) {
  std::vector<DenseLayer> out;
  out.reserve(layers.size());
  for (const auto& l : layers) {
    out.push_back({Eigen::MatrixXd::Zero(l.weight.rows(), l.weight.cols()),
                   Eigen::VectorXd::Zero(l.bias.size())});
  }
  return out;
}

}  // namespace dtrec
