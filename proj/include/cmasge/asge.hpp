#pragma once

#include "cmasge/layers.hpp"
#include "cmasge/optim.hpp"

#include <filesystem>
#include <optional>
#include <vector>

namespace cmasge {

/// Label embeddings, one row per label.
struct EmbeddingSet {
  Matrix vectors;

  Index size() const { return vectors.rows(); }
  Index dim() const { return vectors.cols(); }
  // Throws if any row norm is at or below eps.
  void validate(double eps = 1e-12) const;
};

struct AsgeConfig {
  std::vector<Index> hidden{256, 256};
  Index dim = 256;
  Norm norm = Norm::batch;
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 0.0;
  int epochs = 2000;
  std::optional<double> alpha;  // relaxation threshold, 0 <= alpha < 1
  std::uint64_t seed = 0;
  double cos_eps = 1e-12;

  void validate() const;
};

/// Maps one-hot label codes to embeddings: (Linear -> BN -> ReLU) per hidden
/// width, then a plain Linear to `dim`.
class AsgeNetwork {
 public:
  AsgeNetwork(Index num_labels, const AsgeConfig& cfg);

  // All N one-hot rows as a single batch.
  Var forward(Tape& tape, Mode mode);
  // Arbitrary batch of label codes (rows of length N).
  Var forward(Tape& tape, const Matrix& codes, Mode mode);
  EmbeddingSet embeddings(Mode mode);

  // Sets BN running statistics to the exact full-batch statistics of the current weights.
  void refresh_statistics();

  ParameterList parameters();
  Index num_labels() const { return num_labels_; }
  Index dim() const { return output_.out_features(); }

 private:
  Index num_labels_;
  std::vector<DenseBlock> hidden_;
  Linear output_;
};

/// Relaxation gate: 0 where target < alpha and cos < alpha, else 1. All ones without alpha.
Matrix relaxation_mask(const Matrix& cos, const Matrix& target, std::optional<double> alpha);

/// sum_ij mask_ij * (cos(e_i, e_j) - target_ij)^2 over all ordered pairs. The
/// mask is computed from the current cosines and held constant for the gradient.
Var asge_objective(Var embeddings, const Matrix& target, std::optional<double> alpha,
                   double eps = 1e-12);

double asge_loss(const Matrix& embeddings, const Matrix& target, double eps = 1e-12);
double relaxed_asge_loss(const Matrix& embeddings, const Matrix& target, double alpha,
                         double eps = 1e-12);

Matrix cosine_matrix(const Matrix& embeddings, double eps = 1e-12);

struct AsgeEpoch {
  int epoch;
  double loss;
  double relaxed_fraction;
};

struct AsgeResult {
  EmbeddingSet embeddings;
  std::vector<AsgeEpoch> curve;
};

/// Full-batch SGD on the (optionally relaxed) objective. Returns eval-mode embeddings.
AsgeResult train_asge(const Matrix& target, const AsgeConfig& cfg);

struct PairFit {
  Index i, j;
  double target, cos, sigma, residual;
};

struct SimilarityReport {
  std::vector<PairFit> pairs;  // ordered pairs with i != j
  double mean_residual = 0.0;  // over included pairs
  double max_residual = 0.0;
  double relaxed_fraction = 0.0;
};

SimilarityReport embedding_similarity_report(const Matrix& embeddings, const Matrix& target,
                                             std::optional<double> alpha, double eps = 1e-12);

// embeddings.csv, embeddings.cmat, asge_loss.csv, similarity.csv under `dir`.
void export_embeddings(const std::filesystem::path& dir, const AsgeResult& result,
                       const SimilarityReport& report);
EmbeddingSet load_embeddings(const std::filesystem::path& cmat);

}  // namespace cmasge
