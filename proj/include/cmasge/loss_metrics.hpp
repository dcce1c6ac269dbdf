#pragma once

#include "cmasge/autograd.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace cmasge {

// w_k = y_k e^{beta (1 - p_k)} + (1 - y_k) e^{beta p_k}; rows of `labels` are examples.
Matrix class_weights(const Matrix& labels, const RowVector& priors, double beta);

/// Mean over rows of -sum_k w_k [y_k log p_k + (1 - y_k) log(1 - p_k)] with
/// p clamped to [eps, 1 - eps]. Clamped entries pass no gradient.
Var weighted_bce(Var probabilities, const Matrix& labels, const Matrix& weights,
                 double eps = 1e-12);
double weighted_bce(const Matrix& probabilities, const Matrix& labels, const Matrix& weights,
                    double eps = 1e-12);

struct PredictionBatch {
  Matrix scores;  // B x N
  Matrix labels;  // B x N, entries 0 or 1
  std::vector<std::string> ids;

  Index examples() const { return scores.rows(); }
  Index classes() const { return scores.cols(); }
  void validate() const;
};

// Ranking is by descending score, ties by ascending index. Empty when no positives.
std::optional<double> average_precision(std::span<const double> scores,
                                        std::span<const double> labels);

struct MapResult {
  double map = 0;
  std::vector<double> per_class;     // NaN for excluded classes
  std::vector<Index> excluded;       // classes without positives
};
MapResult mean_average_precision(const PredictionBatch& batch);

struct PrfOptions {
  enum class Mode { threshold, topk } mode = Mode::threshold;
  double threshold = 0.5;
  Index k = 3;
};

struct PrfMetrics {
  double cp = 0, cr = 0, cf1 = 0;
  double op = 0, orc = 0, of1 = 0;
  std::vector<Index> absent_classes;    // no positives: left out of CP/CR
  std::vector<Index> unpredicted;       // never predicted: precision counted as 0
};

// Per-example predicted label sets as a 0/1 matrix.
Matrix predicted_labels(const Matrix& scores, const PrfOptions& opt);
PrfMetrics prf_metrics(const PredictionBatch& batch, const PrfOptions& opt);

struct VideoMetrics {
  double gap = 0;
  double hit1 = 0;
  double perr = 0;
  double map = 0;
};

// Pools each example's top `top` predictions and ranks them globally.
double global_average_precision(const PredictionBatch& batch, Index top = 20);
VideoMetrics video_metrics(const PredictionBatch& batch, Index gap_top = 20);

/// Ordered metric=value pairs.
class MetricReport {
 public:
  void set(const std::string& key, double value);
  double get(const std::string& key) const;
  bool contains(const std::string& key) const;
  const std::vector<std::pair<std::string, double>>& entries() const { return entries_; }
  bool operator==(const MetricReport&) const = default;

  std::string table() const;  // human-readable

 private:
  std::vector<std::pair<std::string, double>> entries_;
};

void add_prf(MetricReport& report, const std::string& prefix, const PrfMetrics& m);

void write_metric_report(const std::filesystem::path& path, const MetricReport& report);
MetricReport read_metric_report(const std::filesystem::path& path);

}  // namespace cmasge
