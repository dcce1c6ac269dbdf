#include "cmasge/cma.hpp"

namespace cmasge {

HeadKind parse_head_kind(const std::string& s) {
  if (s == "cma") return HeadKind::cma;
  if (s == "self_attention") return HeadKind::self_attention;
  if (s == "uniform") return HeadKind::uniform;
  throw ValidationError("unknown model kind '" + s + "' (expected cma, self_attention or uniform)");
}

std::string to_string(HeadKind k) {
  switch (k) {
    case HeadKind::cma: return "cma";
    case HeadKind::self_attention: return "self_attention";
    case HeadKind::uniform: return "uniform";
  }
  return "?";
}

CmtModule::CmtModule(const std::string& name, Index in, Index embed_dim, int layers, Norm norm,
                     Rng& rng) {
  require(layers >= 1, "CMT needs at least one layer");
  for (int l = 0; l < layers; ++l)
    blocks.emplace_back(name + ".l" + std::to_string(l + 1), l == 0 ? in : embed_dim, embed_dim,
                        norm, rng);
}

Var CmtModule::forward(Var x, Mode mode) {
  require(x.cols() == in_features(), "CMT expects " + std::to_string(in_features()) +
                                         " channels, got " + std::to_string(x.cols()));
  for (auto& b : blocks) x = b.forward(x, mode);
  return x;
}

ParameterList CmtModule::parameters() {
  ParameterList p;
  for (auto& b : blocks) append(p, b.parameters());
  return p;
}

Index CmtModule::in_features() const { return blocks.front().fc.in_features(); }
Index CmtModule::out_features() const { return blocks.back().fc.out_features(); }

Classifier::Classifier(const std::string& name, Index num_labels, Index channels,
                       bool per_class_bias, Rng& rng) {
  weight = Parameter(name + ".weight", fan_in_uniform(num_labels, channels, channels, rng));
  bias = Parameter(name + ".bias", Matrix::Zero(1, per_class_bias ? num_labels : 1));
}

Var Classifier::logits(Var h) {
  Tape& t = h.tape();
  return classify_rows(h, t.param(weight), t.param(bias));
}

Matrix AttentionMaps::normalized(Index example) const {
  const Index m = grid.locations();
  require(example >= 0 && example < grid.batch, "attention map example out of range");
  return a.middleRows(example * m, m).transpose();
}

Var attention_scores(Var projected, Var embeddings, double eps) {
  return relu(cosine_rows(projected, embeddings, eps));
}

Var normalize_attention(Var z, Index locations, double eps) {
  return group_normalize(z, locations, eps);
}

Var aggregate_features(Var a, Var features, Index locations, Index num_labels) {
  if (a.cols() == 1 && num_labels != 1) a = repeat_cols(a, num_labels);
  require(a.cols() == num_labels, "aggregate_features: attention has " + std::to_string(a.cols()) +
                                      " columns for " + std::to_string(num_labels) + " labels");
  return group_aggregate(a, features, locations);
}

AttentionHead::AttentionHead(const std::string& name, const HeadConfig& cfg, Rng& rng)
    : cfg_(cfg) {
  if (cfg.kind == HeadKind::cma)
    cmt = CmtModule(name + ".cmt", cfg.channels, cfg.embed_dim, cfg.cmt_layers, cfg.norm, rng);
  if (cfg.kind == HeadKind::self_attention) score = Linear(name + ".score", cfg.channels, 1, rng);
  classifier = Classifier(name + ".cls", cfg.num_labels, cfg.channels, cfg.per_class_bias, rng);
}

HeadOutput AttentionHead::forward(const FeatureMap& features, Var embeddings, Mode mode) {
  const Var x = features.values;
  require(x.cols() == cfg_.channels, "attention head expects " + std::to_string(cfg_.channels) +
                                         " channels, got " + std::to_string(x.cols()));
  const Index m = features.locations();
  Tape& t = x.tape();
  Var z;
  switch (cfg_.kind) {
    case HeadKind::cma:
      require(embeddings.rows() == cfg_.num_labels && embeddings.cols() == cfg_.embed_dim,
              "embeddings are " + shape_str(embeddings.value()) + ", head expects " +
                  shape_str(cfg_.num_labels, cfg_.embed_dim));
      z = attention_scores(cmt.forward(x, mode), embeddings, cfg_.eps);
      break;
    case HeadKind::self_attention:
      z = sigmoid(score.forward(x));
      break;
    case HeadKind::uniform:
      z = t.constant(Matrix::Ones(x.rows(), 1));
      break;
  }
  const Var a = normalize_attention(z, m, cfg_.eps);
  const Var h = aggregate_features(a, x, m, cfg_.num_labels);
  return {sigmoid(classifier.logits(h)), {z.value(), a.value(), features.grid}};
}

ParameterList AttentionHead::parameters() {
  ParameterList p;
  if (cfg_.kind == HeadKind::cma) append(p, cmt.parameters());
  if (cfg_.kind == HeadKind::self_attention) append(p, score.parameters());
  append(p, classifier.parameters());
  return p;
}

std::vector<BatchNorm*> AttentionHead::batch_norms() {
  std::vector<BatchNorm*> out;
  for (auto& b : cmt.blocks)
    if (b.bn) out.push_back(&*b.bn);
  return out;
}

HeadOutput multi_scale_forward(std::vector<AttentionHead>& heads,
                               const std::vector<FeatureMap>& features, Var embeddings,
                               Mode mode, std::vector<AttentionMaps>* per_scale) {
  if (features.empty()) throw ValidationError("multi-scale fusion needs at least one scale");
  require(heads.size() == features.size(), "one attention head per scale is required");
  if (per_scale != nullptr) per_scale->clear();
  HeadOutput fused;
  for (std::size_t l = 0; l < heads.size(); ++l) {
    HeadOutput out = heads[l].forward(features[l], embeddings, mode);
    fused.probabilities = l == 0 ? out.probabilities : add(fused.probabilities, out.probabilities);
    if (per_scale != nullptr) per_scale->push_back(out.maps);
    if (l == 0) fused.maps = std::move(out.maps);
  }
  if (heads.size() > 1)
    fused.probabilities = scale(fused.probabilities, 1.0 / static_cast<double>(heads.size()));
  return fused;
}

}  // namespace cmasge
