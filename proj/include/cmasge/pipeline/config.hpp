#pragma once

#include "cmasge/asge.hpp"
#include "cmasge/cma.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace cmasge {

enum class Task { image, video };

struct SynthSection {
  Index num_labels = 12;
  Index groups = 2;
  double q_in = 0.4;
  double q_out = 0.05;
  Index train_examples = 2000;
  Index test_examples = 500;
  Index height = 32;
  Index width = 32;
  Index cell = 8;       // planted square side (image)
  Index frames = 64;
  Index segment = 16;   // planted run length (video)
  Index channels = 8;   // raw input channels
  double signal = 1.0;
  double noise = 1.0;
  Index distractors = 0;  // unlabeled planted cells per example
  double objectness = 0;  // squared weight of the direction shared by all planted patterns
};

struct ModelSection {
  HeadKind kind = HeadKind::cma;
  std::string backbone = "toy";  // toy | snet | identity
  Index stage_channels = 16;
  Index channels = 16;           // C fed to the heads
  std::vector<int> scales{3};    // backbone scale ids with a head each
  int cmt_layers = 2;
  Norm norm = Norm::batch;
  bool per_class_bias = false;
  bool joint = false;            // fine-tune label embeddings
  int snet_stages = 4;
  Index snet_kernel = 3;
  Index snet_pool = 2;
};

struct TrainSection {
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 1e-5;
  int epochs = 30;
  Index batch_size = 32;
  double lr_decay = 10;
  int lr_step = 30;
};

struct LossSection {
  double beta = 0.0;
};

struct EvalSection {
  double threshold = 0.5;
  Index top_k = 3;
  Index gap_top = 20;
};

struct ExportSection {
  Index examples = 4;
};

struct PathsSection {
  std::string root = "run";
  std::string data;        // default root/data
  std::string graph;       // default root/graph
  std::string embeddings;  // default root/embeddings
  std::string train;       // default root/train
};

struct RunConfig {
  Task task = Task::image;
  std::uint64_t seed = 0;
  SynthSection synth;
  AsgeConfig asge;
  ModelSection model;
  TrainSection train;
  LossSection loss;
  EvalSection eval;
  ExportSection export_;
  PathsSection paths;

  /// Applies one `key = value` assignment; unknown keys and bad values are
  /// validation errors.
  void set(const std::string& key, const std::string& value);
  void validate() const;

  // Every key in schema order as `key = value`, doubles printed round-trip exact.
  std::string dump() const;
  std::vector<std::string> keys() const;

  std::uint64_t hash() const;               // all keys except paths.*
  std::uint64_t architecture_hash() const;  // keys that shape the model

  std::filesystem::path data_dir() const;
  std::filesystem::path graph_dir() const;
  std::filesystem::path embeddings_dir() const;
  std::filesystem::path train_dir() const;
};

std::string to_string(Task t);

/// Reads a flat config file: `key = value` lines, `#` comments, blank lines.
/// Keys under `manifest.` are skipped, so a run manifest loads as a config.
RunConfig load_config(const std::filesystem::path& path);
RunConfig parse_config(const std::string& text, const std::string& origin = "<config>");

// "key=value" command-line override.
void apply_override(RunConfig& cfg, const std::string& assignment);

std::uint64_t fnv1a(const std::string& text);

}  // namespace cmasge
