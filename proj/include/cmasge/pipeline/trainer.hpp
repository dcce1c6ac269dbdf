#pragma once

#include "cmasge/loss_metrics.hpp"
#include "cmasge/pipeline/dataset.hpp"
#include "cmasge/pipeline/model.hpp"

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <vector>

namespace cmasge {

struct EpochRecord {
  int epoch = 0;
  double lr = 0;
  double train_loss = 0;
  double val_map = 0;
};

struct TrainOptions {
  std::optional<std::filesystem::path> resume;  // checkpoint to continue from
  std::ostream* progress = nullptr;
};

struct TrainResult {
  std::vector<EpochRecord> log;
  std::filesystem::path checkpoint;
};

/// Minibatch SGD on the weighted BCE. Each epoch shuffles with (seed, epoch),
/// evaluates mAP on `val`, rewrites train_log.csv and checkpoint.cmck in `out_dir`.
TrainResult train_classifier(const RunConfig& cfg, const Dataset& train, const Dataset& val,
                             const Matrix& embeddings, const std::filesystem::path& out_dir,
                             const TrainOptions& opt = {});

// Eval-mode probabilities for every example, in order.
Matrix predict_dataset(Model& model, const Dataset& data, Index batch = 100);

/// Image task: map, all.* (threshold) and top<K>.* blocks. Video task: gap,
/// hit1, perr, map. Both also record example and excluded-class counts.
MetricReport metric_report(const RunConfig& cfg, const PredictionBatch& batch);

struct Checkpoint {
  int epoch = 0;
  std::vector<EpochRecord> log;
};

void save_checkpoint(const std::filesystem::path& path, const RunConfig& cfg, const Model& model,
                     const Checkpoint& state);
// Restores into `model`; the architecture hash must match `cfg`.
Checkpoint load_checkpoint(const std::filesystem::path& path, const RunConfig& cfg, Model& model);
// Builds a model shaped by `cfg` and the checkpoint's stored embeddings, then restores it.
Model restore_model(const std::filesystem::path& path, const RunConfig& cfg, Index input_channels,
                    Index num_labels, Checkpoint* state = nullptr);

}  // namespace cmasge
