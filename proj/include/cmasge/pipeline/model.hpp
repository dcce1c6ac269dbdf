#pragma once

#include "cmasge/backbone.hpp"
#include "cmasge/cma.hpp"
#include "cmasge/pipeline/config.hpp"
#include "cmasge/tensor.hpp"

#include <memory>
#include <optional>
#include <vector>

namespace cmasge {

/// Backbone (toy convnet, SNet or identity) followed by one attention head per
/// configured scale, fused by averaging probabilities. Label embeddings are a
/// frozen input unless `model.joint` makes them a parameter.
class Model {
 public:
  Model(const RunConfig& cfg, Index input_channels, Index num_labels, const Matrix& embeddings);

  struct Output {
    Var probabilities;                // B x N
    std::vector<AttentionMaps> maps;  // one per head, in model.scales order
  };

  Output forward(Tape& t, const Matrix& inputs, const Grid& grid, Mode mode);
  Matrix predict(const Matrix& inputs, const Grid& grid);  // eval mode, no gradient

  ParameterList parameters();
  std::vector<BatchNorm*> batch_norms();
  const Matrix& embeddings() const { return embeddings_.value; }
  const std::vector<int>& scales() const { return scales_; }
  Index num_labels() const { return num_labels_; }

  // Parameter values, momentum buffers and running statistics.
  void save(TensorArchive& archive) const;
  void load(const TensorArchive& archive);

 private:
  std::vector<FeatureMap> features(Tape& t, const Matrix& inputs, const Grid& grid, Mode mode);

  Task task_;
  Index num_labels_;
  std::vector<int> scales_;
  bool joint_;
  std::optional<ToyImageBackbone> toy_;
  std::optional<SNet> snet_;
  std::vector<AttentionHead> heads_;
  Parameter embeddings_;
};

}  // namespace cmasge
