#include "cmasge/label_graph.hpp"

#include "cmasge/tensor.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace cmasge {

AnnotationSet::AnnotationSet(Index n, std::vector<std::vector<Index>> ex,
                             std::vector<std::string> example_ids)
    : num_labels(n), examples(std::move(ex)), ids(std::move(example_ids)) {
  if (num_labels < 1) throw ValidationError("annotation set needs at least one label");
  for (auto& labels : examples) {
    for (Index k : labels) {
      if (k < 0 || k >= num_labels) {
        throw ValidationError("label index " + std::to_string(k) + " out of range [0, " +
                              std::to_string(num_labels) + ")");
      }
    }
    std::sort(labels.begin(), labels.end());
    labels.erase(std::unique(labels.begin(), labels.end()), labels.end());
  }
  if (ids.empty()) {
    for (std::size_t i = 0; i < examples.size(); ++i) ids.push_back(std::to_string(i));
  }
  if (ids.size() != examples.size()) throw ValidationError("example id count mismatch");
}

Matrix AnnotationSet::indicator() const {
  Matrix y = Matrix::Zero(size(), num_labels);
  for (Index b = 0; b < size(); ++b) {
    for (Index k : examples[static_cast<std::size_t>(b)]) y(b, k) = 1.0;
  }
  return y;
}

std::vector<Index> LabelGraph::unobserved_labels() const {
  std::vector<Index> out;
  for (Index k = 0; k < num_labels; ++k) {
    if (counts(k, k) == 0) out.push_back(k);
  }
  return out;
}

CountMatrix count_cooccurrence(const AnnotationSet& ann) {
  require(ann.num_labels >= 1, "count_cooccurrence: N must be positive");
  CountMatrix counts = CountMatrix::Zero(ann.num_labels, ann.num_labels);
  for (const auto& labels : ann.examples) {
    for (Index i : labels) {
      if (i < 0 || i >= ann.num_labels) throw ValidationError("label index out of range");
      for (Index j : labels) counts(i, j) += 1;
    }
  }
  return counts;
}

Matrix conditional_matrix(const CountMatrix& counts) {
  require(counts.rows() == counts.cols(), "conditional_matrix: counts not square");
  Matrix a = Matrix::Zero(counts.rows(), counts.cols());
  for (Index j = 0; j < counts.cols(); ++j) {
    const auto denom = counts(j, j);
    if (denom == 0) continue;
    for (Index i = 0; i < counts.rows(); ++i) {
      a(i, j) = static_cast<double>(counts(i, j)) / static_cast<double>(denom);
    }
  }
  return a;
}

Vector label_priors(const AnnotationSet& ann) {
  if (ann.examples.empty()) throw ValidationError("label_priors: empty dataset");
  const CountMatrix counts = count_cooccurrence(ann);
  return counts.diagonal().cast<double>() / static_cast<double>(ann.size());
}

LabelGraph build_label_graph(const AnnotationSet& ann) {
  LabelGraph g;
  g.num_labels = ann.num_labels;
  g.counts = count_cooccurrence(ann);
  g.conditional = conditional_matrix(g.counts);
  g.symmetric = symmetrize(g.conditional);
  g.priors = label_priors(ann);
  g.num_examples = ann.size();
  return g;
}

AnnotationSet read_annotations(const std::filesystem::path& path, Index num_labels) {
  std::ifstream is(path);
  if (!is) throw ValidationError("cannot open annotation file " + path.string());
  std::vector<std::vector<Index>> examples;
  std::vector<std::string> ids;
  std::string line;
  Index max_label = -1;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    ids.push_back(line.substr(0, tab));
    std::vector<Index> labels;
    if (tab != std::string::npos) {
      std::istringstream ss(line.substr(tab + 1));
      std::string tok;
      while (ss >> tok) {
        std::size_t used = 0;
        long long v = -1;
        try {
          v = std::stoll(tok, &used);
        } catch (const std::exception&) {
          used = 0;
        }
        if (used != tok.size() || v < 0) {
          throw ValidationError(path.string() + ":" + std::to_string(line_no) +
                                ": malformed label '" + tok + "'");
        }
        labels.push_back(static_cast<Index>(v));
        max_label = std::max<Index>(max_label, static_cast<Index>(v));
      }
    }
    examples.push_back(std::move(labels));
  }
  if (num_labels <= 0) num_labels = max_label + 1;
  if (max_label >= num_labels) {
    throw ValidationError(path.string() + ": label index " + std::to_string(max_label) +
                          " >= N=" + std::to_string(num_labels));
  }
  return AnnotationSet(std::max<Index>(num_labels, 1), std::move(examples), std::move(ids));
}

void write_annotations(const std::filesystem::path& path, const AnnotationSet& ann) {
  std::ofstream os(path);
  if (!os) throw RuntimeFailure("cannot write " + path.string());
  for (std::size_t i = 0; i < ann.examples.size(); ++i) {
    os << ann.ids[i] << '\t';
    for (std::size_t j = 0; j < ann.examples[i].size(); ++j) {
      os << (j ? " " : "") << ann.examples[i][j];
    }
    os << '\n';
  }
}

std::vector<std::string> read_label_names(const std::filesystem::path& path, Index num_labels) {
  std::vector<std::string> names;
  if (!path.empty() && std::filesystem::exists(path)) {
    std::ifstream is(path);
    std::string line;
    while (std::getline(is, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      names.push_back(line);
    }
    if (static_cast<Index>(names.size()) < num_labels) {
      throw ValidationError(path.string() + " names " + std::to_string(names.size()) +
                            " labels but N=" + std::to_string(num_labels));
    }
    names.resize(static_cast<std::size_t>(num_labels));
  } else {
    for (Index k = 0; k < num_labels; ++k) names.push_back(std::to_string(k));
  }
  return names;
}

void export_label_graph(const std::filesystem::path& dir, const LabelGraph& g,
                        const std::vector<std::string>& names) {
  std::filesystem::create_directories(dir);
  save_tensor_csv(dir / "counts.csv", Tensor::from_matrix(g.counts.cast<double>()), names);
  save_tensor_csv(dir / "A.csv", Tensor::from_matrix(g.conditional), names);
  save_tensor_csv(dir / "A_sym.csv", Tensor::from_matrix(g.symmetric), names);
  save_tensor_csv(dir / "priors.csv", Tensor::from_matrix(g.priors.transpose()), names);

  TensorArchive ar;
  ar.put_matrix("counts", g.counts.cast<double>());
  ar.put_matrix("A", g.conditional);
  ar.put_matrix("A_sym", g.symmetric);
  ar.put_matrix("priors", g.priors.transpose());
  ar.put_matrix("num_examples", Matrix::Constant(1, 1, static_cast<double>(g.num_examples)));
  ar.save(dir / "graph.cmck");

  std::ofstream os(dir / "summary.txt");
  os << "labels=" << g.num_labels << '\n' << "examples=" << g.num_examples << '\n';
  const auto missing = g.unobserved_labels();
  os << "unobserved_labels=";
  for (std::size_t i = 0; i < missing.size(); ++i) os << (i ? "," : "") << names[missing[i]];
  os << '\n';
  const Matrix off = g.symmetric - Matrix(g.symmetric.diagonal().asDiagonal());
  os << std::setprecision(6) << "mean_offdiag_A_sym="
     << (g.num_labels > 1 ? off.sum() / static_cast<double>(g.num_labels * (g.num_labels - 1)) : 0.0)
     << '\n';
  if (!missing.empty()) {
    log_warning(std::to_string(missing.size()) + " label(s) never observed; zero rows/columns");
  }
}

LabelGraph load_label_graph(const std::filesystem::path& archive) {
  const auto ar = TensorArchive::load(archive);
  LabelGraph g;
  const Matrix counts = ar.matrix("counts");
  g.num_labels = counts.rows();
  g.counts = counts.cast<std::int64_t>();
  g.conditional = ar.matrix("A");
  g.symmetric = ar.matrix("A_sym");
  g.priors = ar.matrix("priors").row(0).transpose();
  g.num_examples = static_cast<Index>(ar.matrix("num_examples")(0, 0));
  return g;
}

}  // namespace cmasge
