#pragma once

#include "cmasge/common.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace cmasge {

using CountMatrix = MatrixX<std::int64_t>;

/// Multi-label annotations: each example is a sorted, duplicate-free set of
/// label indices in [0, num_labels).
struct AnnotationSet {
  AnnotationSet() = default;
  AnnotationSet(Index num_labels, std::vector<std::vector<Index>> examples,
                std::vector<std::string> ids = {});

  Index num_labels = 0;
  std::vector<std::vector<Index>> examples;
  std::vector<std::string> ids;

  Index size() const { return static_cast<Index>(examples.size()); }
  // size() x num_labels indicator matrix.
  Matrix indicator() const;
};

struct LabelGraph {
  Index num_labels = 0;
  CountMatrix counts;  // counts(i, j) = #examples with both i and j
  Matrix conditional;  // A(i, j) = P(i | j)
  Matrix symmetric;    // (A + A^T) / 2
  Vector priors;       // fraction of examples containing each label
  Index num_examples = 0;

  std::vector<Index> unobserved_labels() const;
};

CountMatrix count_cooccurrence(const AnnotationSet& ann);

// A(i, j) = counts(i, j) / counts(j, j); zero where label j never occurs.
Matrix conditional_matrix(const CountMatrix& counts);

template <typename Derived>
MatrixX<typename Derived::Scalar> symmetrize(const Eigen::MatrixBase<Derived>& a) {
  require(a.rows() == a.cols(), "symmetrize: matrix is not square " + shape_str(a));
  return (a + a.transpose()) / typename Derived::Scalar(2);
}

Vector label_priors(const AnnotationSet& ann);

LabelGraph build_label_graph(const AnnotationSet& ann);

// ---- files -----------------------------------------------------------------

// `example_id<TAB>label label ...` per line. num_labels <= 0 infers max index + 1.
AnnotationSet read_annotations(const std::filesystem::path& path, Index num_labels = 0);
void write_annotations(const std::filesystem::path& path, const AnnotationSet& ann);

// One name per line; line number is the label index. Missing file gives "0".."N-1".
std::vector<std::string> read_label_names(const std::filesystem::path& path, Index num_labels);

// counts.csv, A.csv, A_sym.csv, priors.csv, graph.cmck and summary.txt under `dir`.
void export_label_graph(const std::filesystem::path& dir, const LabelGraph& graph,
                        const std::vector<std::string>& names);
LabelGraph load_label_graph(const std::filesystem::path& archive);

}  // namespace cmasge
