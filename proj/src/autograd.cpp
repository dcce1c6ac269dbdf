#include "cmasge/autograd.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <memory>

namespace cmasge {

namespace {
#ifdef NDEBUG
std::atomic<bool> g_finite_checks{false};
#else
std::atomic<bool> g_finite_checks{true};
#endif
}  // namespace

void set_finite_checks(bool enabled) { g_finite_checks = enabled; }
bool finite_checks() { return g_finite_checks; }

Parameter::Parameter(std::string n, Matrix init)
    : name(std::move(n)),
      value(std::move(init)),
      grad(Matrix::Zero(value.rows(), value.cols())),
      momentum(Matrix::Zero(value.rows(), value.cols())) {}

const Matrix& Var::value() const { return tape_->value(*this); }
Matrix Var::grad() const { return tape_->grad(*this); }
Tape& Var::tape() const {
  require(tape_ != nullptr, "use of an unbound Var");
  return *tape_;
}
bool Var::requires_grad() const { return tape_->requires_grad(*this); }

Var Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Matrix value) {
  Node n;
  n.value = std::move(value);
  return push(std::move(n));
}

Var Tape::variable(Matrix value) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = true;
  return push(std::move(n));
}

Var Tape::param(Parameter& p) {
  if (auto it = bound_.find(&p); it != bound_.end()) return Var(this, it->second);
  Node n;
  n.value = p.value;
  n.requires_grad = true;
  n.param = &p;
  Var v = push(std::move(n));
  bound_[&p] = v.id();
  return v;
}

Var Tape::record(Matrix value, std::initializer_list<Var> inputs, BackwardFn fn) {
  if (g_finite_checks && !all_finite(value)) {
    throw RuntimeFailure("non-finite value produced by op");
  }
  Node n;
  n.value = std::move(value);
  for (const Var& in : inputs) {
    require(in.tape_ == this, "op inputs live on different tapes");
    n.requires_grad = n.requires_grad || nodes_[in.id()].requires_grad;
  }
  if (n.requires_grad) n.backward = std::move(fn);
  return push(std::move(n));
}

Matrix Tape::grad(Var v) const {
  const Node& n = nodes_[v.id()];
  if (n.grad.size() == 0) return Matrix::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

void Tape::backward(Var root) {
  require(root.tape_ == this, "backward root from another tape");
  Node& r = nodes_[root.id()];
  require(r.value.rows() == 1 && r.value.cols() == 1, "backward root must be a scalar");
  if (!r.requires_grad) return;
  r.grad = Matrix::Ones(1, 1);
  for (std::size_t i = root.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || n.grad.size() == 0) continue;
    if (n.backward) n.backward(*this, n.grad);
    if (n.param != nullptr) n.param->grad += n.grad;
  }
}

// ---- elementwise and linear algebra ----------------------------------------

Var matmul(Var a, Var b) {
  require(a.cols() == b.rows(),
          "matmul shape mismatch " + shape_str(a.value()) + " * " + shape_str(b.value()));
  return a.tape().record(a.value() * b.value(), {a, b}, [a, b](Tape& t, const Matrix& g) {
    if (a.requires_grad()) t.accumulate(a, g * b.value().transpose());
    if (b.requires_grad()) t.accumulate(b, a.value().transpose() * g);
  });
}

namespace {
void require_same_shape(Var a, Var b, const char* op) {
  require(a.rows() == b.rows() && a.cols() == b.cols(),
          std::string(op) + " shape mismatch " + shape_str(a.value()) + " vs " +
              shape_str(b.value()));
}
}  // namespace

Var add(Var a, Var b) {
  require_same_shape(a, b, "add");
  return a.tape().record(a.value() + b.value(), {a, b}, [a, b](Tape& t, const Matrix& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

Var sub(Var a, Var b) {
  require_same_shape(a, b, "sub");
  return a.tape().record(a.value() - b.value(), {a, b}, [a, b](Tape& t, const Matrix& g) {
    t.accumulate(a, g);
    t.accumulate(b, -g);
  });
}

Var hadamard(Var a, Var b) {
  require_same_shape(a, b, "hadamard");
  return a.tape().record(a.value().cwiseProduct(b.value()), {a, b},
                         [a, b](Tape& t, const Matrix& g) {
                           if (a.requires_grad()) t.accumulate(a, g.cwiseProduct(b.value()));
                           if (b.requires_grad()) t.accumulate(b, g.cwiseProduct(a.value()));
                         });
}

Var hadamard(Var a, const Matrix& mask) {
  require(a.rows() == mask.rows() && a.cols() == mask.cols(), "hadamard mask shape mismatch");
  return a.tape().record(a.value().cwiseProduct(mask), {a}, [a, mask](Tape& t, const Matrix& g) {
    t.accumulate(a, g.cwiseProduct(mask));
  });
}

Var scale(Var a, double s) {
  return a.tape().record(a.value() * s, {a},
                         [a, s](Tape& t, const Matrix& g) { t.accumulate(a, g * s); });
}

Var add_row(Var x, Var row) {
  require(row.rows() == 1 && row.cols() == x.cols(),
          "add_row expects a 1x" + std::to_string(x.cols()) + " row, got " +
              shape_str(row.value()));
  Matrix out = x.value().rowwise() + row.value().row(0);
  return x.tape().record(std::move(out), {x, row}, [x, row](Tape& t, const Matrix& g) {
    t.accumulate(x, g);
    if (row.requires_grad()) t.accumulate(row, g.colwise().sum());
  });
}

Var linear(Var x, Var weight, Var bias) {
  require(x.cols() == weight.rows(), "linear: input " + shape_str(x.value()) +
                                         " does not conform to weight " +
                                         shape_str(weight.value()));
  require(bias.rows() == 1 && bias.cols() == weight.cols(), "linear: bias shape mismatch");
  Matrix out = x.value() * weight.value();
  out.rowwise() += bias.value().row(0);
  return x.tape().record(std::move(out), {x, weight, bias},
                         [x, weight, bias](Tape& t, const Matrix& g) {
                           if (x.requires_grad()) t.accumulate(x, g * weight.value().transpose());
                           if (weight.requires_grad()) {
                             t.accumulate(weight, x.value().transpose() * g);
                           }
                           if (bias.requires_grad()) t.accumulate(bias, g.colwise().sum());
                         });
}

Var relu(Var x) {
  Matrix out = x.value().cwiseMax(0.0);
  return x.tape().record(std::move(out), {x}, [x](Tape& t, const Matrix& g) {
    t.accumulate(x, (x.value().array() > 0.0).select(g, 0.0));
  });
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Var sigmoid(Var x) {
  Matrix out = x.value().unaryExpr([](double v) { return sigmoid(v); });
  Matrix s = out;
  return x.tape().record(std::move(out), {x}, [x, s](Tape& t, const Matrix& g) {
    t.accumulate(x, g.cwiseProduct(s.cwiseProduct((1.0 - s.array()).matrix())));
  });
}

Var square(Var x) {
  return x.tape().record(x.value().cwiseAbs2(), {x}, [x](Tape& t, const Matrix& g) {
    t.accumulate(x, 2.0 * g.cwiseProduct(x.value()));
  });
}

Var sum(Var x) {
  Matrix out(1, 1);
  out(0, 0) = x.value().sum();
  return x.tape().record(std::move(out), {x}, [x](Tape& t, const Matrix& g) {
    t.accumulate(x, Matrix::Constant(x.rows(), x.cols(), g(0, 0)));
  });
}

Var mean(Var x) {
  require(x.value().size() > 0, "mean of an empty matrix");
  return scale(sum(x), 1.0 / static_cast<double>(x.value().size()));
}

Var repeat_cols(Var column, Index n) {
  require(column.cols() == 1, "repeat_cols expects a single column");
  Matrix out = column.value().replicate(1, n);
  return column.tape().record(std::move(out), {column}, [column](Tape& t, const Matrix& g) {
    t.accumulate(column, g.rowwise().sum());
  });
}

Var cosine_rows(Var x, Var y, double eps) {
  require(x.cols() == y.cols(), "cosine_rows: dimension mismatch " + shape_str(x.value()) +
                                    " vs " + shape_str(y.value()));
  const Vector raw_x = x.value().rowwise().norm();
  const Vector raw_y = y.value().rowwise().norm();
  const Vector nx = raw_x.cwiseMax(eps);
  const Vector ny = raw_y.cwiseMax(eps);
  const Matrix xh = nx.cwiseInverse().asDiagonal() * x.value();
  const Matrix yh = ny.cwiseInverse().asDiagonal() * y.value();
  Matrix out = xh * yh.transpose();
  Matrix cos = out;
  return x.tape().record(
      std::move(out), {x, y},
      [x, y, eps, raw_x, raw_y, nx, ny, xh, yh, cos](Tape& t, const Matrix& g) {
        const Vector gc = g.cwiseProduct(cos).rowwise().sum();            // per x row
        const RowVector gc_t = g.cwiseProduct(cos).colwise().sum();       // per y row
        if (x.requires_grad()) {
          Matrix dx = g * yh;
          for (Index r = 0; r < dx.rows(); ++r) {
            dx.row(r) /= nx(r);
            if (raw_x(r) > eps) dx.row(r) -= gc(r) * xh.row(r) / nx(r);
          }
          t.accumulate(x, dx);
        }
        if (y.requires_grad()) {
          Matrix dy = g.transpose() * xh;
          for (Index n = 0; n < dy.rows(); ++n) {
            dy.row(n) /= ny(n);
            if (raw_y(n) > eps) dy.row(n) -= gc_t(n) * yh.row(n) / ny(n);
          }
          t.accumulate(y, dy);
        }
      });
}

// ---- normalization ---------------------------------------------------------

Var batch_norm_train(Var x, Var gamma, Var beta, double eps, BatchMoments* moments) {
  const Index rows = x.rows();
  const Index d = x.cols();
  require(rows >= 1, "batch_norm on an empty batch");
  require(gamma.rows() == 1 && gamma.cols() == d && beta.rows() == 1 && beta.cols() == d,
          "batch_norm: gamma/beta must be 1x" + std::to_string(d));
  const RowVector mu = x.value().colwise().mean();
  const Matrix centered = x.value().rowwise() - mu;
  const RowVector var = centered.cwiseAbs2().colwise().mean();
  const RowVector inv_std = (var.array() + eps).rsqrt().matrix();
  const Matrix xhat = centered * inv_std.asDiagonal();
  Matrix out = xhat * gamma.value().row(0).asDiagonal();
  out.rowwise() += beta.value().row(0);
  if (moments != nullptr) *moments = {mu, var};
  return x.tape().record(
      std::move(out), {x, gamma, beta},
      [x, gamma, beta, xhat, inv_std, rows](Tape& t, const Matrix& g) {
        if (gamma.requires_grad()) t.accumulate(gamma, g.cwiseProduct(xhat).colwise().sum());
        if (beta.requires_grad()) t.accumulate(beta, g.colwise().sum());
        if (x.requires_grad()) {
          const Matrix dxhat = g * gamma.value().row(0).asDiagonal();
          const RowVector sum_d = dxhat.colwise().sum();
          const RowVector sum_dx = dxhat.cwiseProduct(xhat).colwise().sum();
          Matrix dx = (dxhat * static_cast<double>(rows)).rowwise() - sum_d;
          dx -= xhat * sum_dx.asDiagonal();
          dx = dx * (inv_std / static_cast<double>(rows)).asDiagonal();
          t.accumulate(x, dx);
        }
      });
}

Var batch_norm_fixed(Var x, Var gamma, Var beta, const BatchMoments& stats, double eps) {
  const Index d = x.cols();
  require(stats.mean.size() == d && stats.var.size() == d, "batch_norm: statistics size mismatch");
  const RowVector inv_std = (stats.var.array() + eps).rsqrt().matrix();
  const Matrix xhat = (x.value().rowwise() - stats.mean) * inv_std.asDiagonal();
  Matrix out = xhat * gamma.value().row(0).asDiagonal();
  out.rowwise() += beta.value().row(0);
  return x.tape().record(std::move(out), {x, gamma, beta},
                         [x, gamma, beta, xhat, inv_std](Tape& t, const Matrix& g) {
                           if (gamma.requires_grad()) {
                             t.accumulate(gamma, g.cwiseProduct(xhat).colwise().sum());
                           }
                           if (beta.requires_grad()) t.accumulate(beta, g.colwise().sum());
                           if (x.requires_grad()) {
                             const RowVector s = gamma.value().row(0).cwiseProduct(inv_std);
                             t.accumulate(x, g * s.asDiagonal());
                           }
                         });
}

// ---- spatial ---------------------------------------------------------------

Grid conv_output(const Grid& in, const ConvGeometry& g) {
  require(g.stride_h >= 1 && g.stride_w >= 1, "conv stride must be positive");
  const Index oh = (in.height + 2 * g.pad_h - g.kernel_h) / g.stride_h + 1;
  const Index ow = (in.width + 2 * g.pad_w - g.kernel_w) / g.stride_w + 1;
  require(oh >= 1 && ow >= 1, "conv input smaller than its kernel");
  return {in.batch, oh, ow};
}

Grid pool_output(const Grid& in, Index pool_h, Index pool_w) {
  require(pool_h >= 1 && pool_w >= 1, "pool size must be positive");
  return {in.batch, (in.height + pool_h - 1) / pool_h, (in.width + pool_w - 1) / pool_w};
}

namespace {

// For each output row and patch slot, the source row (or -1 for padding).
std::vector<Index> patch_index(const Grid& in, const ConvGeometry& g, const Grid& out) {
  const Index k = g.kernel_h * g.kernel_w;
  std::vector<Index> idx(static_cast<std::size_t>(out.rows() * k), -1);
  std::size_t p = 0;
  for (Index b = 0; b < out.batch; ++b) {
    for (Index oy = 0; oy < out.height; ++oy) {
      for (Index ox = 0; ox < out.width; ++ox) {
        for (Index ky = 0; ky < g.kernel_h; ++ky) {
          for (Index kx = 0; kx < g.kernel_w; ++kx, ++p) {
            Index iy = oy * g.stride_h - g.pad_h + ky;
            Index ix = ox * g.stride_w - g.pad_w + kx;
            if (g.replicate_pad) {
              iy = std::clamp<Index>(iy, 0, in.height - 1);
              ix = std::clamp<Index>(ix, 0, in.width - 1);
            }
            if (iy >= 0 && iy < in.height && ix >= 0 && ix < in.width) {
              idx[p] = (b * in.height + iy) * in.width + ix;
            }
          }
        }
      }
    }
  }
  return idx;
}

}  // namespace

Var im2col(Var x, const Grid& in, const ConvGeometry& g) {
  require(x.rows() == in.rows(), "im2col: matrix has " + std::to_string(x.rows()) +
                                     " rows but grid expects " + std::to_string(in.rows()));
  const Grid out = conv_output(in, g);
  const Index c = x.cols();
  const Index k = g.kernel_h * g.kernel_w;
  auto idx = std::make_shared<std::vector<Index>>(patch_index(in, g, out));
  Matrix cols = Matrix::Zero(out.rows(), k * c);
  const Matrix& xv = x.value();
  for (Index r = 0; r < out.rows(); ++r) {
    for (Index s = 0; s < k; ++s) {
      const Index src = (*idx)[static_cast<std::size_t>(r * k + s)];
      if (src >= 0) cols.block(r, s * c, 1, c) = xv.row(src);
    }
  }
  return x.tape().record(std::move(cols), {x}, [x, idx, k, c](Tape& t, const Matrix& gr) {
    Matrix dx = Matrix::Zero(x.rows(), c);
    for (Index r = 0; r < gr.rows(); ++r) {
      for (Index s = 0; s < k; ++s) {
        const Index src = (*idx)[static_cast<std::size_t>(r * k + s)];
        if (src >= 0) dx.row(src) += gr.block(r, s * c, 1, c);
      }
    }
    t.accumulate(x, dx);
  });
}

Var avg_pool(Var x, const Grid& in, Index pool_h, Index pool_w) {
  require(x.rows() == in.rows(), "avg_pool: row count does not match grid");
  const Grid out = pool_output(in, pool_h, pool_w);
  // Each input row belongs to exactly one window; record it with the window's size.
  std::vector<Index> dest(static_cast<std::size_t>(in.rows()));
  std::vector<double> count(static_cast<std::size_t>(out.rows()), 0.0);
  for (Index b = 0; b < in.batch; ++b) {
    for (Index y = 0; y < in.height; ++y) {
      for (Index xx = 0; xx < in.width; ++xx) {
        const Index o = (b * out.height + y / pool_h) * out.width + xx / pool_w;
        dest[static_cast<std::size_t>((b * in.height + y) * in.width + xx)] = o;
        count[static_cast<std::size_t>(o)] += 1.0;
      }
    }
  }
  Matrix pooled = Matrix::Zero(out.rows(), x.cols());
  for (Index r = 0; r < in.rows(); ++r) pooled.row(dest[r]) += x.value().row(r);
  for (Index o = 0; o < out.rows(); ++o) pooled.row(o) /= count[o];
  return x.tape().record(std::move(pooled), {x}, [x, dest, count](Tape& t, const Matrix& g) {
    Matrix dx(x.rows(), x.cols());
    for (Index r = 0; r < x.rows(); ++r) dx.row(r) = g.row(dest[r]) / count[dest[r]];
    t.accumulate(x, dx);
  });
}

// ---- attention -------------------------------------------------------------

Var group_normalize(Var z, Index group, double eps) {
  require(group >= 1 && z.rows() % group == 0,
          "group_normalize: rows not a multiple of the group size");
  const Index batch = z.rows() / group;
  const Index n = z.cols();
  Matrix a(z.rows(), n);
  Matrix sums(batch, n);
  for (Index b = 0; b < batch; ++b) {
    const auto block = z.value().middleRows(b * group, group);
    for (Index k = 0; k < n; ++k) {
      const double s = block.col(k).sum();
      sums(b, k) = s;
      if (s < eps) {
        a.block(b * group, k, group, 1).setConstant(1.0 / static_cast<double>(group));
      } else {
        a.block(b * group, k, group, 1) = block.col(k) / s;
      }
    }
  }
  Matrix a_copy = a;
  return z.tape().record(std::move(a), {z}, [z, group, eps, sums, a_copy](Tape& t, const Matrix& g) {
    Matrix dz = Matrix::Zero(z.rows(), z.cols());
    for (Index b = 0; b < sums.rows(); ++b) {
      for (Index k = 0; k < sums.cols(); ++k) {
        const double s = sums(b, k);
        if (s < eps) continue;
        const auto gk = g.block(b * group, k, group, 1);
        const auto ak = a_copy.block(b * group, k, group, 1);
        const double inner = gk.cwiseProduct(ak).sum();
        dz.block(b * group, k, group, 1) = (gk.array() - inner).matrix() / s;
      }
    }
    t.accumulate(z, dz);
  });
}

Var group_aggregate(Var a, Var x, Index group) {
  require(group >= 1 && a.rows() == x.rows() && a.rows() % group == 0,
          "group_aggregate: attention " + shape_str(a.value()) + " and features " +
              shape_str(x.value()) + " disagree");
  const Index batch = a.rows() / group;
  const Index n = a.cols();
  const Index c = x.cols();
  Matrix h(batch * n, c);
  for (Index b = 0; b < batch; ++b) {
    h.middleRows(b * n, n).noalias() =
        a.value().middleRows(b * group, group).transpose() * x.value().middleRows(b * group, group);
  }
  return a.tape().record(std::move(h), {a, x}, [a, x, group, batch, n](Tape& t, const Matrix& g) {
    if (a.requires_grad()) {
      Matrix da(a.rows(), a.cols());
      for (Index b = 0; b < batch; ++b) {
        da.middleRows(b * group, group).noalias() =
            x.value().middleRows(b * group, group) * g.middleRows(b * n, n).transpose();
      }
      t.accumulate(a, da);
    }
    if (x.requires_grad()) {
      Matrix dx(x.rows(), x.cols());
      for (Index b = 0; b < batch; ++b) {
        dx.middleRows(b * group, group).noalias() =
            a.value().middleRows(b * group, group) * g.middleRows(b * n, n);
      }
      t.accumulate(x, dx);
    }
  });
}

Var classify_rows(Var h, Var weight, Var bias) {
  const Index n = weight.rows();
  require(h.cols() == weight.cols() && h.rows() % n == 0,
          "classify_rows: features " + shape_str(h.value()) + " vs weights " +
              shape_str(weight.value()));
  require(bias.rows() == 1 && (bias.cols() == 1 || bias.cols() == n),
          "classify_rows: bias must be 1x1 or 1xN");
  const Index batch = h.rows() / n;
  Matrix logits(batch, n);
  for (Index b = 0; b < batch; ++b) {
    logits.row(b) = h.value().middleRows(b * n, n).cwiseProduct(weight.value()).rowwise().sum().transpose();
  }
  if (bias.cols() == 1) {
    logits.array() += bias.value()(0, 0);
  } else {
    logits.rowwise() += bias.value().row(0);
  }
  return h.tape().record(std::move(logits), {h, weight, bias},
                         [h, weight, bias, batch, n](Tape& t, const Matrix& g) {
                           if (h.requires_grad()) {
                             Matrix dh(h.rows(), h.cols());
                             for (Index b = 0; b < batch; ++b) {
                               dh.middleRows(b * n, n) = g.row(b).transpose().asDiagonal() * weight.value();
                             }
                             t.accumulate(h, dh);
                           }
                           if (weight.requires_grad()) {
                             Matrix dw = Matrix::Zero(weight.rows(), weight.cols());
                             for (Index b = 0; b < batch; ++b) {
                               dw += g.row(b).transpose().asDiagonal() * h.value().middleRows(b * n, n);
                             }
                             t.accumulate(weight, dw);
                           }
                           if (bias.requires_grad()) {
                             if (bias.cols() == 1) {
                               t.accumulate(bias, Matrix::Constant(1, 1, g.sum()));
                             } else {
                               t.accumulate(bias, g.colwise().sum());
                             }
                           }
                         });
}

}  // namespace cmasge
