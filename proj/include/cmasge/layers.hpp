#pragma once

#include "cmasge/autograd.hpp"
#include "cmasge/rng.hpp"

#include <optional>
#include <string>
#include <vector>

namespace cmasge {

enum class Mode { train, eval };
enum class Norm { batch, none };

Norm parse_norm(const std::string& s);
std::string to_string(Norm n);

// Uniform in +-sqrt(6 / fan_in).
Matrix fan_in_uniform(Index rows, Index cols, Index fan_in, Rng& rng);

using ParameterList = std::vector<Parameter*>;

/// Fully connected layer y = xW + b, W stored in x out.
class Linear {
 public:
  Linear() = default;
  Linear(const std::string& name, Index in, Index out, Rng& rng, bool with_bias = true);

  Var forward(Var x);
  ParameterList parameters();
  bool has_bias() const { return has_bias_; }
  Index in_features() const { return weight.value.rows(); }
  Index out_features() const { return weight.value.cols(); }

  Parameter weight;
  Parameter bias;  // 1 x out, zero and unused when !has_bias()

 private:
  bool has_bias_ = true;
};

/// Per-column batch normalization with running statistics.
///
/// Running statistics follow running = momentum * running + (1 - momentum) * batch,
/// and are only available after the first training-mode forward.
class BatchNorm {
 public:
  BatchNorm() = default;
  BatchNorm(const std::string& name, Index dim, double eps = 1e-5, double momentum = 0.9);

  Var forward(Var x, Mode mode);
  ParameterList parameters() { return {&gamma, &beta}; }
  bool has_running_stats() const { return running.has_value(); }

  Parameter gamma;
  Parameter beta;
  std::optional<BatchMoments> running;
  double eps = 1e-5;
  double momentum = 0.9;

 private:
  bool warned_single_row_ = false;
};

/// Convolution over a `Grid` layout via patch extraction and one GEMM.
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(const std::string& name, Index in_channels, Index out_channels, ConvGeometry geometry,
         Rng& rng, bool with_bias = true);

  Var forward(Var x, const Grid& in, Grid* out);
  ParameterList parameters() { return kernel.parameters(); }
  const ConvGeometry& geometry() const { return geometry_; }

  Linear kernel;  // weight is (kh*kw*in) x out

 private:
  ConvGeometry geometry_;
};

/// Linear -> optional BatchNorm -> ReLU, applied to every row independently
/// (a 1x1 convolution when rows are spatial locations). The linear bias is
/// dropped when BatchNorm follows, since normalization cancels it.
class DenseBlock {
 public:
  DenseBlock() = default;
  DenseBlock(const std::string& name, Index in, Index out, Norm norm, Rng& rng);

  Var forward(Var x, Mode mode);
  ParameterList parameters();

  Linear fc;
  std::optional<BatchNorm> bn;
};

inline void append(ParameterList& dst, const ParameterList& src) {
  dst.insert(dst.end(), src.begin(), src.end());
}

}  // namespace cmasge
