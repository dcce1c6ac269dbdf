#include "cmasge/asge.hpp"

#include "cmasge/tensor.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>

namespace cmasge {

void EmbeddingSet::validate(double eps) const {
  for (Index i = 0; i < vectors.rows(); ++i) {
    if (vectors.row(i).norm() <= eps) {
      throw RuntimeFailure("embedding " + std::to_string(i) + " has (near) zero norm");
    }
  }
}

void AsgeConfig::validate() const {
  if (dim < 1) throw ValidationError("asge.dim must be positive");
  for (Index h : hidden) {
    if (h < 1) throw ValidationError("asge.hidden widths must be positive");
  }
  if (epochs < 0) throw ValidationError("asge.epochs must be >= 0");
  if (alpha && (*alpha < 0.0 || *alpha >= 1.0)) {
    throw ValidationError("asge.alpha must lie in [0, 1)");
  }
  if (!(lr > 0.0)) throw ValidationError("asge.lr must be positive");
}

AsgeNetwork::AsgeNetwork(Index num_labels, const AsgeConfig& cfg) : num_labels_(num_labels) {
  require(num_labels >= 1, "AsgeNetwork needs at least one label");
  Rng rng = Rng(cfg.seed).fork(0xA56E);
  Index width = num_labels;
  for (std::size_t l = 0; l < cfg.hidden.size(); ++l) {
    hidden_.emplace_back("asge.h" + std::to_string(l), width, cfg.hidden[l], cfg.norm, rng);
    width = cfg.hidden[l];
  }
  output_ = Linear("asge.out", width, cfg.dim, rng);
}

Var AsgeNetwork::forward(Tape& tape, Mode mode) {
  return forward(tape, Matrix::Identity(num_labels_, num_labels_), mode);
}

Var AsgeNetwork::forward(Tape& tape, const Matrix& codes, Mode mode) {
  require(codes.cols() == num_labels_, "AsgeNetwork: codes must have N columns");
  Var x = tape.constant(codes);
  for (auto& block : hidden_) x = block.forward(x, mode);
  return output_.forward(x);
}

EmbeddingSet AsgeNetwork::embeddings(Mode mode) {
  Tape tape;
  return {forward(tape, mode).value()};
}

void AsgeNetwork::refresh_statistics() {
  std::vector<double> saved;
  for (auto& block : hidden_) {
    if (!block.bn) continue;
    saved.push_back(block.bn->momentum);
    block.bn->momentum = 0.0;
  }
  Tape tape;
  forward(tape, Mode::train);
  std::size_t k = 0;
  for (auto& block : hidden_) {
    if (block.bn) block.bn->momentum = saved[k++];
  }
}

ParameterList AsgeNetwork::parameters() {
  ParameterList p;
  for (auto& block : hidden_) append(p, block.parameters());
  append(p, output_.parameters());
  return p;
}

Matrix relaxation_mask(const Matrix& cos, const Matrix& target, std::optional<double> alpha) {
  require(cos.rows() == target.rows() && cos.cols() == target.cols(),
          "relaxation_mask: shape mismatch");
  if (!alpha) return Matrix::Ones(cos.rows(), cos.cols());
  const double a = *alpha;
  return ((target.array() < a) && (cos.array() < a)).select(Matrix::Zero(cos.rows(), cos.cols()), 1.0);
}

Var asge_objective(Var embeddings, const Matrix& target, std::optional<double> alpha,
                   double eps) {
  require(embeddings.rows() == target.rows() && target.rows() == target.cols(),
          "asge_objective: embeddings " + shape_str(embeddings.value()) + " vs target " +
              shape_str(target));
  Tape& t = embeddings.tape();
  Var cos = cosine_rows(embeddings, embeddings, eps);
  Var diff = sub(cos, t.constant(target));
  Var sq = square(diff);
  if (alpha) sq = hadamard(sq, relaxation_mask(cos.value(), target, alpha));
  return sum(sq);
}

Matrix cosine_matrix(const Matrix& e, double eps) {
  const Vector n = e.rowwise().norm().cwiseMax(eps);
  const Matrix eh = n.cwiseInverse().asDiagonal() * e;
  return eh * eh.transpose();
}

double asge_loss(const Matrix& e, const Matrix& target, double eps) {
  return (cosine_matrix(e, eps) - target).squaredNorm();
}

double relaxed_asge_loss(const Matrix& e, const Matrix& target, double alpha, double eps) {
  const Matrix cos = cosine_matrix(e, eps);
  return (cos - target).cwiseAbs2().cwiseProduct(relaxation_mask(cos, target, alpha)).sum();
}

namespace {
double relaxed_fraction(const Matrix& mask) {
  const Index n = mask.rows();
  if (n < 2) return 0.0;
  const double off = (1.0 - mask.array()).sum() - (1.0 - mask.diagonal().array()).sum();
  return off / static_cast<double>(n * (n - 1));
}
}  // namespace

AsgeResult train_asge(const Matrix& target, const AsgeConfig& cfg) {
  cfg.validate();
  require(target.rows() == target.cols() && target.rows() >= 1, "train_asge: target not square");
  AsgeNetwork net(target.rows(), cfg);
  ParameterList params = net.parameters();
  const SgdOptions opt{cfg.lr, cfg.momentum, cfg.weight_decay};
  AsgeResult result;
  result.curve.reserve(static_cast<std::size_t>(cfg.epochs));
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Tape tape;
    Var e = net.forward(tape, Mode::train);
    Var loss = asge_objective(e, target, cfg.alpha, cfg.cos_eps);
    const double value = loss.value()(0, 0);
    if (!std::isfinite(value)) {
      throw RuntimeFailure("ASGE diverged at epoch " + std::to_string(epoch) +
                           " (loss not finite); lower asge.lr");
    }
    const Matrix mask = relaxation_mask(cosine_matrix(e.value(), cfg.cos_eps), target, cfg.alpha);
    result.curve.push_back({epoch, value, relaxed_fraction(mask)});
    tape.backward(loss);
    sgd_step(params, opt);
  }
  net.refresh_statistics();
  result.embeddings = net.embeddings(Mode::eval);
  return result;
}

SimilarityReport embedding_similarity_report(const Matrix& e, const Matrix& target,
                                             std::optional<double> alpha, double eps) {
  const Matrix cos = cosine_matrix(e, eps);
  const Matrix mask = relaxation_mask(cos, target, alpha);
  SimilarityReport r;
  Index included = 0;
  for (Index i = 0; i < cos.rows(); ++i) {
    for (Index j = 0; j < cos.cols(); ++j) {
      if (i == j) continue;
      const double residual = std::abs(cos(i, j) - target(i, j));
      r.pairs.push_back({i, j, target(i, j), cos(i, j), mask(i, j), residual});
      if (mask(i, j) != 0.0) {
        ++included;
        r.mean_residual += residual;
        r.max_residual = std::max(r.max_residual, residual);
      }
    }
  }
  if (included > 0) r.mean_residual /= static_cast<double>(included);
  r.relaxed_fraction = relaxed_fraction(mask);
  return r;
}

void export_embeddings(const std::filesystem::path& dir, const AsgeResult& result,
                       const SimilarityReport& report) {
  std::filesystem::create_directories(dir);
  const Tensor e = Tensor::from_matrix(result.embeddings.vectors);
  save_tensor(dir / "embeddings.cmat", e);
  save_tensor_csv(dir / "embeddings.csv", e);
  {
    std::ofstream os(dir / "asge_loss.csv");
    os << "epoch,loss,relaxed_fraction\n" << std::setprecision(17);
    for (const auto& row : result.curve) {
      os << row.epoch << ',' << row.loss << ',' << row.relaxed_fraction << '\n';
    }
  }
  std::ofstream os(dir / "similarity.csv");
  os << "i,j,target,cos,sigma,residual\n" << std::setprecision(17);
  for (const auto& p : report.pairs) {
    os << p.i << ',' << p.j << ',' << p.target << ',' << p.cos << ',' << p.sigma << ','
       << p.residual << '\n';
  }
  std::ofstream summary(dir / "similarity_summary.txt");
  summary << std::setprecision(17) << "mean_residual=" << report.mean_residual << '\n'
          << "max_residual=" << report.max_residual << '\n'
          << "relaxed_fraction=" << report.relaxed_fraction << '\n';
}

EmbeddingSet load_embeddings(const std::filesystem::path& cmat) {
  const Tensor t = load_tensor(cmat);
  if (t.rank() != 2) throw ValidationError(cmat.string() + ": embeddings must be rank 2");
  return {t.matrix()};
}

}  // namespace cmasge
