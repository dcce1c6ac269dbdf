#pragma once

#include "cmasge/pipeline/dataset.hpp"
#include "cmasge/pipeline/model.hpp"

#include <filesystem>
#include <vector>

namespace cmasge {

/// Fraction of each feature-map cell covered by `region`, with the input grid
/// split evenly over the fh x fw cells. Row-major, length fh * fw.
std::vector<double> mask_fractions(const Region& region, Index in_h, Index in_w, Index fh, Index fw);

// sum_i a_i * fraction_i
double attention_mass(const std::vector<double>& attention, const std::vector<double>& fractions);

struct Localization {
  double mean_mass = 0;     // over (example, true label) pairs
  double mean_uniform = 0;  // |mask| / M over the same pairs
  Index pairs = 0;
};

// Uses the first head's maps; shared single-column maps serve every label.
Localization measure_localization(Model& model, const Dataset& data, Index batch = 100);

struct ExportedMap {
  std::filesystem::path pgm;
  std::filesystem::path csv;
  double mass = 0;
  double uniform = 0;
};

/// For each of the first `examples` examples and each true label: a P2 PGM
/// (maxval 65535, min/max in a comment) and an exact CSV of the attention at
/// feature resolution, per head. Video writes per-frame CSVs only. Also writes
/// attention_stats.csv with the mass inside the planted region.
std::vector<ExportedMap> export_attention(Model& model, const Dataset& data,
                                          const std::filesystem::path& out_dir, Index examples);

struct PgmImage {
  Index width = 0, height = 0, maxval = 0;
  double min = 0, max = 0;
  std::vector<Index> pixels;
};
PgmImage read_pgm(const std::filesystem::path& path);

}  // namespace cmasge
