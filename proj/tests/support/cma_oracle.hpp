#pragma once

// Scalar-loop reimplementation of the attention heads. Reads parameter values
// from the modules but shares no computation with the library.

#include "cmasge/cma.hpp"

#include <cmath>
#include <vector>

namespace cmasge::oracle {

using Table = std::vector<std::vector<double>>;

inline Table to_table(const Matrix& m) {
  Table t(m.rows(), std::vector<double>(m.cols()));
  for (Index r = 0; r < m.rows(); ++r)
    for (Index c = 0; c < m.cols(); ++c) t[r][c] = m(r, c);
  return t;
}

inline double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// One dense block in training mode: x W (+ b), batch norm over all rows, ReLU.
inline Table dense_block(const Table& x, const DenseBlock& block) {
  const Matrix& w = block.fc.weight.value;
  const std::size_t rows = x.size(), in = w.rows(), out = w.cols();
  Table y(rows, std::vector<double>(out, 0.0));
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t o = 0; o < out; ++o) {
      double acc = block.fc.has_bias() ? block.fc.bias.value(0, o) : 0.0;
      for (std::size_t i = 0; i < in; ++i) acc += x[r][i] * w(i, o);
      y[r][o] = acc;
    }
  if (block.bn) {
    for (std::size_t o = 0; o < out; ++o) {
      double mean = 0;
      for (std::size_t r = 0; r < rows; ++r) mean += y[r][o];
      mean /= static_cast<double>(rows);
      double var = 0;
      for (std::size_t r = 0; r < rows; ++r) var += (y[r][o] - mean) * (y[r][o] - mean);
      var /= static_cast<double>(rows);
      for (std::size_t r = 0; r < rows; ++r)
        y[r][o] = block.bn->gamma.value(0, o) * (y[r][o] - mean) / std::sqrt(var + block.bn->eps) +
                  block.bn->beta.value(0, o);
    }
  }
  for (auto& row : y)
    for (double& v : row) v = v > 0 ? v : 0.0;
  return y;
}

struct Result {
  Table probabilities;  // B x N
  Table attention;      // (B*M) x columns
};

// a: (B*M) x cols of nonnegative scores; normalizes each column per example.
inline Table normalize(const Table& z, std::size_t batch, std::size_t m, double eps) {
  Table a = z;
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t k = 0; k < z[0].size(); ++k) {
      double s = 0;
      for (std::size_t i = 0; i < m; ++i) s += z[b * m + i][k];
      for (std::size_t i = 0; i < m; ++i)
        a[b * m + i][k] = s < eps ? 1.0 / static_cast<double>(m) : z[b * m + i][k] / s;
    }
  return a;
}

inline Table classify(const Table& a, const Table& x, std::size_t batch, std::size_t m,
                      const Classifier& clf) {
  const std::size_t n = clf.weight.value.rows(), c = x[0].size();
  Table p(batch, std::vector<double>(n));
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t k = 0; k < n; ++k) {
      const std::size_t col = a[0].size() == 1 ? 0 : k;
      double logit = clf.bias.value.cols() == 1 ? clf.bias.value(0, 0) : clf.bias.value(0, k);
      for (std::size_t j = 0; j < c; ++j) {
        double h = 0;
        for (std::size_t i = 0; i < m; ++i) h += a[b * m + i][col] * x[b * m + i][j];
        logit += clf.weight.value(k, j) * h;
      }
      p[b][k] = logistic(logit);
    }
  return p;
}

inline Result cma(const AttentionHead& head, const Matrix& features, std::size_t batch,
                  std::size_t m, const Matrix& embeddings) {
  const double eps = head.config().eps;
  const Table x = to_table(features);
  Table s = x;
  for (const auto& block : head.cmt.blocks) s = dense_block(s, block);
  const Table e = to_table(embeddings);
  Table z(s.size(), std::vector<double>(e.size()));
  for (std::size_t r = 0; r < s.size(); ++r)
    for (std::size_t k = 0; k < e.size(); ++k) {
      double dot = 0, ns = 0, ne = 0;
      for (std::size_t j = 0; j < e[k].size(); ++j) {
        dot += s[r][j] * e[k][j];
        ns += s[r][j] * s[r][j];
        ne += e[k][j] * e[k][j];
      }
      const double cos = dot / (std::max(std::sqrt(ns), eps) * std::max(std::sqrt(ne), eps));
      z[r][k] = cos > 0 ? cos : 0.0;
    }
  Result res;
  res.attention = normalize(z, batch, m, eps);
  res.probabilities = classify(res.attention, x, batch, m, head.classifier);
  return res;
}

inline Result self_attention(const AttentionHead& head, const Matrix& features, std::size_t batch,
                             std::size_t m) {
  const Table x = to_table(features);
  Table z(x.size(), std::vector<double>(1));
  for (std::size_t r = 0; r < x.size(); ++r) {
    double score = head.score.bias.value(0, 0);
    for (std::size_t j = 0; j < x[r].size(); ++j) score += x[r][j] * head.score.weight.value(j, 0);
    z[r][0] = logistic(score);
  }
  Result res;
  res.attention = normalize(z, batch, m, head.config().eps);
  res.probabilities = classify(res.attention, x, batch, m, head.classifier);
  return res;
}

inline double max_abs_diff(const Table& t, const Matrix& m) {
  double worst = 0;
  for (Index r = 0; r < m.rows(); ++r)
    for (Index c = 0; c < m.cols(); ++c) worst = std::max(worst, std::abs(t[r][c] - m(r, c)));
  return worst;
}

}  // namespace cmasge::oracle
