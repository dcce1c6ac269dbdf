#pragma once

#include "cmasge/backbone.hpp"
#include "cmasge/layers.hpp"

#include <string>
#include <vector>

namespace cmasge {

enum class HeadKind { cma, self_attention, uniform };

HeadKind parse_head_kind(const std::string& s);
std::string to_string(HeadKind k);

/// Per-location projection into the embedding space: `layers` 1x1 blocks
/// (linear -> BN -> ReLU), the first C -> C_e and the rest C_e -> C_e.
class CmtModule {
 public:
  CmtModule() = default;
  CmtModule(const std::string& name, Index in, Index embed_dim, int layers, Norm norm, Rng& rng);

  Var forward(Var x, Mode mode);
  ParameterList parameters();
  Index in_features() const;
  Index out_features() const;

  std::vector<DenseBlock> blocks;
};

/// Per-category weight rows over visual channels plus a shared (1x1) or
/// per-category (1xN) bias.
class Classifier {
 public:
  Classifier() = default;
  Classifier(const std::string& name, Index num_labels, Index channels, bool per_class_bias,
             Rng& rng);

  // h: (B*N) x C aggregated features -> B x N logits.
  Var logits(Var h);
  ParameterList parameters() { return {&weight, &bias}; }
  Index num_labels() const { return weight.value.rows(); }

  Parameter weight;
  Parameter bias;
};

/// Raw and normalized attention for a batch. Rows follow the feature grid
/// (example, location); columns are categories, or a single shared column
/// for the self-attention and uniform heads.
struct AttentionMaps {
  Matrix z;
  Matrix a;
  Grid grid;

  // N x M (or 1 x M) view for one example.
  Matrix normalized(Index example) const;
};

struct HeadOutput {
  Var probabilities;  // B x N
  AttentionMaps maps;
};

// z = relu(cos(I_s row, e_k)): (B*M) x N.
Var attention_scores(Var projected, Var embeddings, double eps = 1e-12);
// Column-normalizes z within each example; all-zero columns fall back to 1/M.
Var normalize_attention(Var z, Index locations, double eps = 1e-12);
// h_k = sum_i a_k^i I^i per example: (B*N) x C. `a` may have a single shared column.
Var aggregate_features(Var a, Var features, Index locations, Index num_labels);

struct HeadConfig {
  HeadKind kind = HeadKind::cma;
  Index channels = 16;
  Index embed_dim = 16;
  Index num_labels = 1;
  int cmt_layers = 2;
  Norm norm = Norm::batch;
  bool per_class_bias = false;
  double eps = 1e-12;
};

/// One per-scale attention classifier: CMT + cosine attention for `cma`, a
/// learned 1x1 sigmoid score shared by all categories for `self_attention`,
/// constant weights (global average pooling) for `uniform`.
class AttentionHead {
 public:
  AttentionHead(const std::string& name, const HeadConfig& cfg, Rng& rng);

  // `embeddings` (N x C_e) is only read by the cma kind; pass any Var otherwise.
  HeadOutput forward(const FeatureMap& features, Var embeddings, Mode mode);
  ParameterList parameters();
  std::vector<BatchNorm*> batch_norms();
  const HeadConfig& config() const { return cfg_; }

  CmtModule cmt;
  Linear score;  // self-attention only
  Classifier classifier;

 private:
  HeadConfig cfg_;
};

// Mean of per-scale probabilities; one head per scale.
HeadOutput multi_scale_forward(std::vector<AttentionHead>& heads,
                               const std::vector<FeatureMap>& features, Var embeddings,
                               Mode mode, std::vector<AttentionMaps>* per_scale = nullptr);

}  // namespace cmasge
