#pragma once

#include "cmasge/label_graph.hpp"
#include "cmasge/pipeline/config.hpp"
#include "cmasge/tensor.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace cmasge {

/// Planted rectangle in input coordinates; video uses x0 = 0, w = 1.
struct Region {
  Index y0 = -1, x0 = -1, h = 0, w = 0;
  bool present() const { return h > 0 && w > 0; }
};

/// One split: raw inputs as (B * M0) x C0 rows in `grid` order, labels, and
/// the planted region of every (example, label) pair.
struct Dataset {
  Task task = Task::image;
  Matrix inputs;
  Grid grid;
  AnnotationSet annotations;
  std::vector<std::vector<Region>> regions;  // [example][label]

  Index size() const { return grid.batch; }
  Index num_labels() const { return annotations.num_labels; }
  Index channels() const { return inputs.cols(); }
  Matrix label_matrix() const;  // B x N
  // Rows of the given examples, stacked in order.
  Matrix input_rows(const std::vector<Index>& examples) const;
  Matrix label_rows(const std::vector<Index>& examples) const;
};

struct SyntheticData {
  Dataset train;
  Dataset test;
  Matrix patterns;  // N x C0 planted signatures
  Matrix distractor_patterns;
};

// Deterministic in (cfg.synth, cfg.task, cfg.seed).
SyntheticData generate_synthetic(const RunConfig& cfg);

std::vector<std::string> default_label_names(Index n);

// Writes <split>.tsv, <split>_x.cmat and <split>_regions.cmat.
void save_split(const std::filesystem::path& dir, const std::string& split, const Dataset& d);
Dataset load_split(const std::filesystem::path& dir, const std::string& split, Task task);

/// Writes both splits, labels.txt, patterns.cmat and summary.txt (empirical
/// priors and symmetrized co-occurrence of the training split).
void write_synthetic(const std::filesystem::path& dir, const SyntheticData& data);

}  // namespace cmasge
