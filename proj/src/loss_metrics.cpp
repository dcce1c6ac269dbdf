#include "cmasge/loss_metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

namespace cmasge {

Matrix class_weights(const Matrix& labels, const RowVector& priors, double beta) {
  require(labels.cols() == priors.cols(), "class_weights: " + std::to_string(labels.cols()) +
                                              " labels vs " + std::to_string(priors.cols()) +
                                              " priors");
  require(beta >= 0, "class_weights: beta must be nonnegative");
  Matrix w(labels.rows(), labels.cols());
  for (Index b = 0; b < labels.rows(); ++b)
    for (Index k = 0; k < labels.cols(); ++k) {
      const double y = labels(b, k);
      w(b, k) = y * std::exp(beta * (1 - priors(k))) + (1 - y) * std::exp(beta * priors(k));
    }
  return w;
}

double weighted_bce(const Matrix& p, const Matrix& y, const Matrix& w, double eps) {
  require(p.rows() == y.rows() && p.cols() == y.cols() && w.rows() == y.rows() &&
              w.cols() == y.cols(),
          "weighted_bce: shape mismatch");
  require(p.rows() >= 1, "weighted_bce on an empty batch");
  double total = 0;
  for (Index b = 0; b < p.rows(); ++b)
    for (Index k = 0; k < p.cols(); ++k) {
      const double q = std::clamp(p(b, k), eps, 1 - eps);
      total -= w(b, k) * (y(b, k) * std::log(q) + (1 - y(b, k)) * std::log(1 - q));
    }
  return total / static_cast<double>(p.rows());
}

Var weighted_bce(Var probabilities, const Matrix& y, const Matrix& w, double eps) {
  const Matrix& p = probabilities.value();
  Matrix out(1, 1);
  out(0, 0) = weighted_bce(p, y, w, eps);
  const double inv_b = 1.0 / static_cast<double>(p.rows());
  return probabilities.tape().record(
      std::move(out), {probabilities}, [probabilities, y, w, eps, inv_b](Tape& t, const Matrix& g) {
        const Matrix& p = probabilities.value();
        Matrix d(p.rows(), p.cols());
        for (Index b = 0; b < p.rows(); ++b)
          for (Index k = 0; k < p.cols(); ++k) {
            const double q = p(b, k);
            d(b, k) = (q < eps || q > 1 - eps)
                          ? 0.0
                          : -w(b, k) * (y(b, k) / q - (1 - y(b, k)) / (1 - q)) * inv_b;
          }
        t.accumulate(probabilities, g(0, 0) * d);
      });
}

void PredictionBatch::validate() const {
  if (scores.rows() != labels.rows() || scores.cols() != labels.cols())
    throw ValidationError("prediction batch: scores " + shape_str(scores) + " vs labels " +
                          shape_str(labels));
  if (!ids.empty() && static_cast<Index>(ids.size()) != scores.rows())
    throw ValidationError("prediction batch: id count does not match example count");
  if (!all_finite(scores)) throw ValidationError("prediction batch: non-finite score");
  for (Index i = 0; i < labels.size(); ++i) {
    const double v = labels.data()[i];
    if (v != 0.0 && v != 1.0) throw ValidationError("prediction batch: labels must be 0 or 1");
  }
}

namespace {

// Indices sorted by descending score, ties by ascending index.
std::vector<Index> ranking(std::span<const double> scores) {
  std::vector<Index> order(scores.size());
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](Index a, Index b) { return scores[a] > scores[b]; });
  return order;
}

std::vector<double> column(const Matrix& m, Index k) {
  std::vector<double> c(m.rows());
  for (Index b = 0; b < m.rows(); ++b) c[b] = m(b, k);
  return c;
}

std::vector<double> row(const Matrix& m, Index b) {
  std::vector<double> r(m.cols());
  for (Index k = 0; k < m.cols(); ++k) r[k] = m(b, k);
  return r;
}

double f1(double p, double r) { return p + r > 0 ? 2 * p * r / (p + r) : 0.0; }

double ratio(double num, double den) { return den > 0 ? num / den : 0.0; }

}  // namespace

std::optional<double> average_precision(std::span<const double> scores,
                                        std::span<const double> labels) {
  require(scores.size() == labels.size(), "average_precision: length mismatch");
  double positives = 0;
  for (double l : labels) positives += l;
  if (positives == 0) return std::nullopt;
  double hits = 0, sum = 0;
  const auto order = ranking(scores);
  for (std::size_t r = 0; r < order.size(); ++r) {
    if (labels[order[r]] != 0) {
      hits += 1;
      sum += hits / static_cast<double>(r + 1);
    }
  }
  return sum / positives;
}

MapResult mean_average_precision(const PredictionBatch& batch) {
  batch.validate();
  MapResult res;
  double total = 0;
  Index counted = 0;
  for (Index k = 0; k < batch.classes(); ++k) {
    const auto s = column(batch.scores, k);
    const auto l = column(batch.labels, k);
    const auto ap = average_precision(s, l);
    if (ap) {
      res.per_class.push_back(*ap);
      total += *ap;
      ++counted;
    } else {
      res.per_class.push_back(std::nan(""));
      res.excluded.push_back(k);
    }
  }
  if (!res.excluded.empty())
    log_warning(std::to_string(res.excluded.size()) +
                " class(es) without positives excluded from mAP");
  res.map = counted > 0 ? total / static_cast<double>(counted) : 0.0;
  return res;
}

Matrix predicted_labels(const Matrix& scores, const PrfOptions& opt) {
  Matrix pred = Matrix::Zero(scores.rows(), scores.cols());
  for (Index b = 0; b < scores.rows(); ++b) {
    if (opt.mode == PrfOptions::Mode::threshold) {
      for (Index k = 0; k < scores.cols(); ++k) pred(b, k) = scores(b, k) >= opt.threshold;
    } else {
      require(opt.k >= 1, "top-k prediction needs k >= 1");
      const auto order = ranking(row(scores, b));
      const Index k = std::min<Index>(opt.k, scores.cols());
      for (Index r = 0; r < k; ++r) pred(b, order[r]) = 1;
    }
  }
  return pred;
}

PrfMetrics prf_metrics(const PredictionBatch& batch, const PrfOptions& opt) {
  batch.validate();
  const Matrix pred = predicted_labels(batch.scores, opt);
  PrfMetrics m;
  double tp_all = 0, fp_all = 0, fn_all = 0;
  double p_sum = 0, r_sum = 0;
  Index present = 0;
  for (Index k = 0; k < batch.classes(); ++k) {
    double tp = 0, fp = 0, fn = 0;
    for (Index b = 0; b < batch.examples(); ++b) {
      const bool y = batch.labels(b, k) != 0, p = pred(b, k) != 0;
      tp += y && p;
      fp += !y && p;
      fn += y && !p;
    }
    tp_all += tp;
    fp_all += fp;
    fn_all += fn;
    if (tp + fn == 0) {
      m.absent_classes.push_back(k);
      continue;
    }
    if (tp + fp == 0) m.unpredicted.push_back(k);
    p_sum += ratio(tp, tp + fp);
    r_sum += ratio(tp, tp + fn);
    ++present;
  }
  m.cp = ratio(p_sum, static_cast<double>(present));
  m.cr = ratio(r_sum, static_cast<double>(present));
  m.cf1 = f1(m.cp, m.cr);
  m.op = ratio(tp_all, tp_all + fp_all);
  m.orc = ratio(tp_all, tp_all + fn_all);
  m.of1 = f1(m.op, m.orc);
  return m;
}

double global_average_precision(const PredictionBatch& batch, Index top) {
  batch.validate();
  require(top >= 1, "GAP needs top >= 1");
  std::vector<double> pooled_scores, pooled_hits;
  const double positives = batch.labels.sum();
  for (Index b = 0; b < batch.examples(); ++b) {
    const auto order = ranking(row(batch.scores, b));
    const Index n = std::min<Index>(top, batch.classes());
    for (Index r = 0; r < n; ++r) {
      pooled_scores.push_back(batch.scores(b, order[r]));
      pooled_hits.push_back(batch.labels(b, order[r]));
    }
  }
  if (positives == 0) return 0.0;
  double hits = 0, sum = 0;
  const auto order = ranking(pooled_scores);
  for (std::size_t r = 0; r < order.size(); ++r) {
    if (pooled_hits[order[r]] != 0) {
      hits += 1;
      sum += hits / static_cast<double>(r + 1);
    }
  }
  return sum / positives;
}

VideoMetrics video_metrics(const PredictionBatch& batch, Index gap_top) {
  batch.validate();
  VideoMetrics m;
  double perr_sum = 0;
  Index perr_count = 0;
  for (Index b = 0; b < batch.examples(); ++b) {
    const auto order = ranking(row(batch.scores, b));
    if (!order.empty() && batch.labels(b, order[0]) != 0) m.hit1 += 1;
    const auto truth = static_cast<Index>(batch.labels.row(b).sum());
    if (truth == 0) continue;
    double correct = 0;
    for (Index r = 0; r < truth; ++r) correct += batch.labels(b, order[r]);
    perr_sum += correct / static_cast<double>(truth);
    ++perr_count;
  }
  m.hit1 = ratio(m.hit1, static_cast<double>(batch.examples()));
  m.perr = ratio(perr_sum, static_cast<double>(perr_count));
  m.gap = global_average_precision(batch, gap_top);
  m.map = mean_average_precision(batch).map;
  return m;
}

void MetricReport::set(const std::string& key, double value) {
  require(!key.empty() && key.find_first_of("= \t\n") == std::string::npos,
          "metric key '" + key + "' must be non-empty without '=' or whitespace");
  for (auto& [k, v] : entries_)
    if (k == key) {
      v = value;
      return;
    }
  entries_.emplace_back(key, value);
}

double MetricReport::get(const std::string& key) const {
  for (const auto& [k, v] : entries_)
    if (k == key) return v;
  throw ValidationError("metric '" + key + "' not in report");
}

bool MetricReport::contains(const std::string& key) const {
  return std::any_of(entries_.begin(), entries_.end(),
                     [&](const auto& e) { return e.first == key; });
}

std::string MetricReport::table() const {
  std::size_t width = 6;
  for (const auto& e : entries_) width = std::max(width, e.first.size());
  std::ostringstream os;
  char buf[64];
  os << std::string(width, '-') << "  ----------\n";
  for (const auto& [k, v] : entries_) {
    std::snprintf(buf, sizeof buf, "%10.4f", v);
    os << k << std::string(width - k.size(), ' ') << "  " << buf << "\n";
  }
  return os.str();
}

void add_prf(MetricReport& report, const std::string& prefix, const PrfMetrics& m) {
  report.set(prefix + ".cp", m.cp);
  report.set(prefix + ".cr", m.cr);
  report.set(prefix + ".cf1", m.cf1);
  report.set(prefix + ".op", m.op);
  report.set(prefix + ".or", m.orc);
  report.set(prefix + ".of1", m.of1);
}

void write_metric_report(const std::filesystem::path& path, const MetricReport& report) {
  std::ofstream out(path);
  if (!out) throw RuntimeFailure("cannot write metric report " + path.string());
  char buf[64];
  for (const auto& [k, v] : report.entries()) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    out << k << "=" << buf << "\n";
  }
  if (!out) throw RuntimeFailure("write failed for " + path.string());
}

MetricReport read_metric_report(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open metric report " + path.string());
  MetricReport report;
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ValidationError(path.string() + ":" + std::to_string(n) + ": expected metric=value");
    const std::string value = line.substr(eq + 1);
    char* end = nullptr;
    const double v = std::strtod(value.c_str(), &end);
    if (end == value.c_str() || *end != '\0')
      throw ValidationError(path.string() + ":" + std::to_string(n) + ": bad number '" + value +
                            "'");
    report.set(line.substr(0, eq), v);
  }
  return report;
}

}  // namespace cmasge
