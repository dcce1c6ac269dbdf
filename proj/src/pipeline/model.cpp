#include "cmasge/pipeline/model.hpp"

#include <algorithm>

namespace cmasge {

Model::Model(const RunConfig& cfg, Index input_channels, Index num_labels, const Matrix& embeddings)
    : task_(cfg.task),
      num_labels_(num_labels),
      scales_(cfg.model.scales),
      joint_(cfg.model.joint),
      embeddings_("embeddings", embeddings) {
  const ModelSection& m = cfg.model;
  if (m.kind == HeadKind::cma &&
      (embeddings.rows() != num_labels || embeddings.cols() != cfg.asge.dim))
    throw ValidationError("label embeddings are " + shape_str(embeddings) + ", model expects " +
                          shape_str(num_labels, cfg.asge.dim));
  Rng rng(cfg.seed, 0xC0DE);
  Index channels = input_channels;
  if (m.backbone == "toy") {
    Rng r = rng.fork(1);
    toy_.emplace(ImageBackboneConfig{.in_channels = input_channels,
                                     .stage_channels = m.stage_channels,
                                     .out_channels = m.channels,
                                     .scales = *std::max_element(scales_.begin(), scales_.end()),
                                     .norm = m.norm},
                 r);
    channels = m.channels;
  } else if (m.backbone == "snet") {
    Rng r = rng.fork(2);
    snet_.emplace(SNetConfig{.in_channels = input_channels,
                             .channels = m.channels,
                             .stages = m.snet_stages,
                             .kernel = m.snet_kernel,
                             .pool = m.snet_pool,
                             .norm = m.norm},
                  r);
    channels = m.channels;
  }
  heads_.reserve(scales_.size());
  for (int s : scales_) {
    Rng r = rng.fork(100 + static_cast<std::uint64_t>(s));
    heads_.emplace_back("head.s" + std::to_string(s),
                        HeadConfig{.kind = m.kind,
                                   .channels = channels,
                                   .embed_dim = embeddings.cols(),
                                   .num_labels = num_labels,
                                   .cmt_layers = m.cmt_layers,
                                   .norm = m.norm,
                                   .per_class_bias = m.per_class_bias},
                        r);
  }
}

std::vector<FeatureMap> Model::features(Tape& t, const Matrix& inputs, const Grid& grid, Mode mode) {
  const Var x = t.constant(inputs);
  std::vector<FeatureMap> out;
  if (toy_) {
    const auto maps = toy_->forward(x, grid, mode);
    for (int s : scales_) out.push_back(maps[static_cast<std::size_t>(s - 1)]);
  } else if (snet_) {
    out.push_back(snet_->forward(x, grid, mode));
  } else {
    out.push_back({x, grid, 1, task_ == Task::image ? Layout::image : Layout::video});
  }
  return out;
}

Model::Output Model::forward(Tape& t, const Matrix& inputs, const Grid& grid, Mode mode) {
  const auto feats = features(t, inputs, grid, mode);
  const Var e = joint_ ? t.param(embeddings_) : t.constant(embeddings_.value);
  Output out;
  out.probabilities = multi_scale_forward(heads_, feats, e, mode, &out.maps).probabilities;
  return out;
}

Matrix Model::predict(const Matrix& inputs, const Grid& grid) {
  Tape t;
  return forward(t, inputs, grid, Mode::eval).probabilities.value();
}

ParameterList Model::parameters() {
  ParameterList p;
  if (toy_) append(p, toy_->parameters());
  if (snet_) append(p, snet_->parameters());
  for (auto& h : heads_) append(p, h.parameters());
  if (joint_) p.push_back(&embeddings_);
  return p;
}

std::vector<BatchNorm*> Model::batch_norms() {
  std::vector<BatchNorm*> out;
  if (toy_) for (BatchNorm* b : toy_->batch_norms()) out.push_back(b);
  if (snet_) for (BatchNorm* b : snet_->batch_norms()) out.push_back(b);
  for (auto& h : heads_)
    for (BatchNorm* b : h.batch_norms()) out.push_back(b);
  return out;
}

void Model::save(TensorArchive& archive) const {
  Model& self = const_cast<Model&>(*this);
  for (const Parameter* p : self.parameters()) {
    archive.put_matrix("param/" + p->name, p->value);
    archive.put_matrix("momentum/" + p->name, p->momentum);
  }
  archive.put_matrix("embeddings", embeddings_.value);
  for (const BatchNorm* b : self.batch_norms()) {
    if (!b->running) continue;
    archive.put_matrix("bn_mean/" + b->gamma.name, b->running->mean);
    archive.put_matrix("bn_var/" + b->gamma.name, b->running->var);
  }
}

void Model::load(const TensorArchive& archive) {
  auto fetch = [&](const std::string& key, const Matrix& like) {
    if (!archive.contains(key)) throw ValidationError("checkpoint is missing '" + key + "'");
    Matrix m = archive.matrix(key);
    if (m.rows() != like.rows() || m.cols() != like.cols())
      throw ValidationError("checkpoint entry '" + key + "' is " + shape_str(m) + ", model has " +
                            shape_str(like));
    return m;
  };
  embeddings_.value = fetch("embeddings", embeddings_.value);
  for (Parameter* p : parameters()) {
    p->value = fetch("param/" + p->name, p->value);
    p->momentum = fetch("momentum/" + p->name, p->momentum);
    p->grad.setZero();
  }
  for (BatchNorm* b : batch_norms()) {
    const std::string key = "bn_mean/" + b->gamma.name;
    if (!archive.contains(key)) {
      b->running.reset();
      continue;
    }
    const Matrix like = Matrix::Zero(1, b->gamma.value.cols());
    b->running = BatchMoments{fetch(key, like), fetch("bn_var/" + b->gamma.name, like)};
  }
}

}  // namespace cmasge
