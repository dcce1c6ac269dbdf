#include "cmasge/layers.hpp"

#include <cmath>

namespace cmasge {

Norm parse_norm(const std::string& s) {
  if (s == "bn") return Norm::batch;
  if (s == "none") return Norm::none;
  throw ValidationError("norm must be 'bn' or 'none', got '" + s + "'");
}

std::string to_string(Norm n) { return n == Norm::batch ? "bn" : "none"; }

Matrix fan_in_uniform(Index rows, Index cols, Index fan_in, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-bound, bound);
  return m;
}

Linear::Linear(const std::string& name, Index in, Index out, Rng& rng, bool with_bias)
    : weight(name + ".weight", fan_in_uniform(in, out, in, rng)),
      bias(name + ".bias", Matrix::Zero(1, out)),
      has_bias_(with_bias) {}

Var Linear::forward(Var x) {
  Tape& t = x.tape();
  if (!has_bias_) return matmul(x, t.param(weight));
  return linear(x, t.param(weight), t.param(bias));
}

ParameterList Linear::parameters() {
  if (!has_bias_) return {&weight};
  return {&weight, &bias};
}

BatchNorm::BatchNorm(const std::string& name, Index dim, double eps_, double momentum_)
    : gamma(name + ".gamma", Matrix::Ones(1, dim)),
      beta(name + ".beta", Matrix::Zero(1, dim)),
      eps(eps_),
      momentum(momentum_) {}

Var BatchNorm::forward(Var x, Mode mode) {
  Tape& t = x.tape();
  if (mode == Mode::eval) {
    if (!running) throw ContractError("batch_norm: eval mode before any training step");
    return batch_norm_fixed(x, t.param(gamma), t.param(beta), *running, eps);
  }
  if (x.rows() == 1 && !warned_single_row_) {
    log_warning(gamma.name + ": training-mode batch norm over a single row outputs beta");
    warned_single_row_ = true;
  }
  BatchMoments batch;
  Var y = batch_norm_train(x, t.param(gamma), t.param(beta), eps, &batch);
  if (!running) {
    running = batch;
  } else {
    running->mean = momentum * running->mean + (1.0 - momentum) * batch.mean;
    running->var = momentum * running->var + (1.0 - momentum) * batch.var;
  }
  return y;
}

Conv2d::Conv2d(const std::string& name, Index in_channels, Index out_channels,
               ConvGeometry geometry, Rng& rng, bool with_bias)
    : kernel(name, geometry.kernel_h * geometry.kernel_w * in_channels, out_channels, rng,
             with_bias),
      geometry_(geometry) {}

Var Conv2d::forward(Var x, const Grid& in, Grid* out) {
  require(x.cols() * geometry_.kernel_h * geometry_.kernel_w == kernel.in_features(),
          kernel.weight.name + ": input has " + std::to_string(x.cols()) + " channels");
  Var cols = im2col(x, in, geometry_);
  if (out != nullptr) *out = conv_output(in, geometry_);
  return kernel.forward(cols);
}

DenseBlock::DenseBlock(const std::string& name, Index in, Index out, Norm norm, Rng& rng)
    : fc(name + ".fc", in, out, rng, norm == Norm::none) {
  if (norm == Norm::batch) bn.emplace(name + ".bn", out);
}

Var DenseBlock::forward(Var x, Mode mode) {
  Var y = fc.forward(x);
  if (bn) y = bn->forward(y, mode);
  return relu(y);
}

ParameterList DenseBlock::parameters() {
  ParameterList p = fc.parameters();
  if (bn) append(p, bn->parameters());
  return p;
}

}  // namespace cmasge
