#include "cmasge/autograd.hpp"
#include "cmasge/grad_check.hpp"
#include "cmasge/layers.hpp"
#include "cmasge/optim.hpp"
#include "cmasge/tensor.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <sstream>

namespace cmasge {
namespace {

Matrix rows(std::initializer_list<std::initializer_list<double>> init) {
  Matrix m(static_cast<Index>(init.size()), static_cast<Index>(init.begin()->size()));
  Index r = 0;
  for (const auto& row : init) {
    Index c = 0;
    for (double v : row) m(r, c++) = v;
    ++r;
  }
  return m;
}

Matrix random_matrix(Index r, Index c, Rng& rng, double scale = 1.0) {
  Matrix m(r, c);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.normal();
  return m;
}

TEST(Linear, IdentityWeights) {
  Tape t;
  Var y = linear(t.constant(rows({{1, 2}})), t.constant(rows({{1, 0}, {0, 1}})),
                 t.constant(rows({{0, 0}})));
  EXPECT_EQ(y.value(), rows({{1, 2}}));
}

TEST(Linear, ZeroInputPassesBias) {
  Tape t;
  Var y = linear(t.constant(rows({{0, 0}})), t.constant(rows({{5, -7}, {2, 9}})),
                 t.constant(rows({{3, -1}})));
  EXPECT_EQ(y.value(), rows({{3, -1}}));
}

TEST(Linear, DiagonalWeights) {
  Tape t;
  Var y = linear(t.constant(rows({{1, 1}})), t.constant(rows({{2, 0}, {0, 3}})),
                 t.constant(rows({{1, 1}})));
  EXPECT_EQ(y.value(), rows({{3, 4}}));
}

TEST(Linear, ShapeMismatchIsContractViolation) {
  Tape t;
  EXPECT_THROW(linear(t.constant(Matrix::Ones(1, 3)), t.constant(Matrix::Ones(2, 2)),
                      t.constant(Matrix::Zero(1, 2))),
               ContractError);
}

TEST(Relu, Definition) {
  Tape t;
  Var x = t.variable(rows({{-1, 0, 2}}));
  Var y = relu(x);
  EXPECT_EQ(y.value(), rows({{0, 0, 2}}));
  t.backward(sum(y));
  EXPECT_EQ(x.grad(), rows({{0, 0, 1}}));  // subgradient at 0 is 0

  Tape t2;
  EXPECT_TRUE(relu(t2.constant(rows({{-3, -0.5, -1e-9}}))).value().isZero());
}

TEST(Relu, GradientAtPlusMinusTwo) {
  Tape t;
  Var x = t.variable(rows({{2, -2}}));
  t.backward(sum(relu(x)));
  EXPECT_EQ(x.grad()(0, 0), 1.0);
  EXPECT_EQ(x.grad()(0, 1), 0.0);
}

TEST(Sigmoid, Values) {
  EXPECT_EQ(sigmoid(0.0), 0.5);
  const double big = sigmoid(1000.0);
  EXPECT_GT(big, 1.0 - 1e-12);
  EXPECT_LE(big, 1.0);
  EXPECT_EQ(sigmoid(-1000.0), 0.0);
  EXPECT_NEAR(sigmoid(std::log(3.0)), 0.75, 1e-15);
  Tape t;
  Var y = sigmoid(t.constant(rows({{0, 1000, -1000}})));
  EXPECT_TRUE(all_finite(y.value()));
}

TEST(BatchNorm, StandardizedBatchPassesThrough) {
  Rng rng(3);
  Matrix x = random_matrix(64, 3, rng);
  x = x.rowwise() - x.colwise().mean();
  const RowVector sd = (x.cwiseAbs2().colwise().mean()).cwiseSqrt();
  x = x * sd.cwiseInverse().asDiagonal();
  BatchNorm bn("bn", 3);
  Tape t;
  Var y = bn.forward(t.constant(x), Mode::train);
  EXPECT_LT((y.value() - x).cwiseAbs().maxCoeff(), 1e-4);  // eps effect only
}

TEST(BatchNorm, ZeroGammaGivesBeta) {
  Rng rng(4);
  BatchNorm bn("bn", 2);
  bn.gamma.value.setZero();
  bn.beta.value = rows({{0.5, -2}});
  Tape t;
  Var y = bn.forward(t.constant(random_matrix(5, 2, rng)), Mode::train);
  for (Index r = 0; r < 5; ++r) {
    EXPECT_EQ(y.value()(r, 0), 0.5);
    EXPECT_EQ(y.value()(r, 1), -2.0);
  }
}

TEST(BatchNorm, TwoSampleBatch) {
  BatchNorm bn("bn", 1, /*eps=*/0.0);
  Tape t;
  Var y = bn.forward(t.constant(rows({{0}, {2}})), Mode::train);
  EXPECT_EQ(y.value(), rows({{-1}, {1}}));
}

TEST(BatchNorm, EvalBeforeTrainFails) {
  BatchNorm bn("bn", 2);
  Tape t;
  EXPECT_THROW(bn.forward(t.constant(Matrix::Ones(3, 2)), Mode::eval), ContractError);
}

TEST(BatchNorm, SingleRowDegradesToBeta) {
  BatchNorm bn("bn", 2);
  bn.beta.value = rows({{0.25, 0.75}});
  Tape t;
  Var y = bn.forward(t.constant(rows({{4, -9}})), Mode::train);
  EXPECT_EQ(y.value(), rows({{0.25, 0.75}}));
}

TEST(BatchNorm, RunningStatisticsUseMomentum) {
  BatchNorm bn("bn", 1, 1e-5, 0.9);
  Tape t;
  bn.forward(t.constant(rows({{0}, {2}})), Mode::train);  // mean 1, var 1
  bn.forward(t.constant(rows({{2}, {4}})), Mode::train);  // mean 3, var 1
  EXPECT_NEAR(bn.running->mean(0), 0.9 * 1 + 0.1 * 3, 1e-15);
  EXPECT_NEAR(bn.running->var(0), 1.0, 1e-15);
  Var y = bn.forward(t.constant(rows({{1.2}})), Mode::eval);
  EXPECT_NEAR(y.value()(0, 0), 0.0, 1e-12);
}

TEST(Cosine, Examples) {
  Vector u(3);
  u << 1, -2, 0.5;
  EXPECT_NEAR(cosine_similarity(u, u), 1.0, 1e-15);
  Vector a(2), b(2);
  a << 1, 0;
  b << 0, 3;
  EXPECT_EQ(cosine_similarity(a, b), 0.0);
  b << 1, 1;
  EXPECT_NEAR(cosine_similarity(a, b), 1.0 / std::sqrt(2.0), 1e-15);
  EXPECT_EQ(cosine_similarity(Vector::Zero(2), b), 0.0);  // eps guard
}

TEST(Cosine, RowsMatchScalarDefinition) {
  Rng rng(8);
  const Matrix x = random_matrix(4, 5, rng);
  const Matrix y = random_matrix(3, 5, rng);
  Tape t;
  Var c = cosine_rows(t.constant(x), t.constant(y));
  for (Index i = 0; i < 4; ++i) {
    for (Index j = 0; j < 3; ++j) {
      EXPECT_NEAR(c.value()(i, j), cosine_similarity(x.row(i), y.row(j)), 1e-14);
    }
  }
}

TEST(Sgd, VanillaStep) {
  Parameter p("p", rows({{1, 2}}));
  p.grad = rows({{0.5, -1}});
  Parameter* list[] = {&p};
  sgd_step(list, {.lr = 0.1, .momentum = 0.0, .weight_decay = 0.0});
  EXPECT_NEAR(p.value(0, 0), 1 - 0.05, 1e-15);
  EXPECT_NEAR(p.value(0, 1), 2 + 0.1, 1e-15);
  EXPECT_TRUE(p.grad.isZero());
}

TEST(Sgd, ZeroGradientLeavesValue) {
  Parameter p("p", rows({{1, 2}}));
  Parameter* list[] = {&p};
  sgd_step(list, {.lr = 0.1, .momentum = 0.9, .weight_decay = 0.0});
  EXPECT_EQ(p.value, rows({{1, 2}}));
}

TEST(Sgd, MomentumUnrolling) {
  Parameter p("p", rows({{0}}));
  Parameter* list[] = {&p};
  const SgdOptions opt{.lr = 0.1, .momentum = 0.9, .weight_decay = 0.0};
  p.grad(0, 0) = 1.0;
  sgd_step(list, opt);
  EXPECT_NEAR(p.value(0, 0), -0.1, 1e-15);
  p.grad(0, 0) = 1.0;
  sgd_step(list, opt);
  EXPECT_NEAR(p.value(0, 0), -0.29, 1e-15);
}

TEST(Sgd, NonFiniteGradientAborts) {
  Parameter a("a", rows({{1}}));
  Parameter b("b", rows({{1}}));
  a.grad(0, 0) = 1.0;
  b.grad(0, 0) = std::numeric_limits<double>::quiet_NaN();
  Parameter* list[] = {&a, &b};
  EXPECT_THROW(sgd_step(list, {}), RuntimeFailure);
  EXPECT_EQ(a.value(0, 0), 1.0);
}

TEST(StepSchedule, DecaysByFactor) {
  StepSchedule s{.base_lr = 0.01, .factor = 10.0, .step_epochs = 30};
  EXPECT_EQ(s.lr_at(0), 0.01);
  EXPECT_EQ(s.lr_at(29), 0.01);
  EXPECT_NEAR(s.lr_at(30), 0.001, 1e-18);
  EXPECT_NEAR(s.lr_at(65), 0.0001, 1e-18);
}

TEST(GradCheck, QuadraticIsExact) {
  Rng rng(1);
  Parameter w("w", random_matrix(3, 4, rng));
  Parameter* list[] = {&w};
  auto res = grad_check([&](Tape& t) { return sum(square(t.param(w))); }, list);
  EXPECT_LE(res.max_rel_err, 1e-7);
}

TEST(GradCheck, DetectsCorruptedBackward) {
  Rng rng(2);
  Parameter w("w", random_matrix(2, 3, rng));
  Parameter* list[] = {&w};
  auto doubled_square = [](Var x) {
    return x.tape().record(x.value().cwiseAbs2(), {x}, [x](Tape& t, const Matrix& g) {
      t.accumulate(x, 2.0 * (2.0 * g.cwiseProduct(x.value())));  // twice the true gradient
    });
  };
  auto res = grad_check([&](Tape& t) { return sum(doubled_square(t.param(w))); }, list);
  // |2g - g| / max(|2g|, |g|)
  EXPECT_NEAR(res.max_rel_err, 0.5, 1e-6);
}

// Every differentiable op, composed at a random point.
TEST(GradCheck, AllOpsComposite) {
  Rng rng(11);
  const Grid grid{2, 4, 3};
  Parameter x("x", random_matrix(grid.rows(), 2, rng));
  Conv2d conv("conv", 2, 3, {.kernel_h = 3, .kernel_w = 3, .stride_h = 2, .stride_w = 1,
                             .pad_h = 1, .pad_w = 1}, rng, /*with_bias=*/false);
  BatchNorm bn("bn", 3);
  Parameter e("e", random_matrix(4, 3, rng));
  Parameter w("w", random_matrix(4, 3, rng));
  Parameter b("b", random_matrix(1, 1, rng));
  ParameterList list{&x, &conv.kernel.weight, &bn.gamma, &bn.beta, &e, &w, &b};
  auto build = [&](Tape& t) {
    Grid out;
    Var y = conv.forward(t.param(x), grid, &out);
    y = bn.forward(y, Mode::train);
    Var pooled = avg_pool(y, out, 2, 2);
    const Grid pgrid = pool_output(out, 2, 2);
    Var z = relu(cosine_rows(pooled, t.param(e)));
    Var a = group_normalize(z, pgrid.locations());
    Var shared = group_normalize(sigmoid(matmul(pooled, t.constant(Matrix::Ones(3, 1)))),
                                 pgrid.locations());
    a = add(a, repeat_cols(shared, 4));
    Var h = group_aggregate(a, pooled, pgrid.locations());
    Var logits = classify_rows(h, t.param(w), t.param(b));
    return sub(mean(square(sigmoid(logits))), sum(hadamard(pooled, square(pooled))));
  };
  auto res = grad_check(build, list);
  EXPECT_LE(res.max_rel_err, 1e-4) << res.worst_parameter << "[" << res.worst_index << "]";
}

TEST(GroupNormalize, FallbackRowIsUniformAndConstant) {
  Tape t;
  Var z = t.variable(rows({{0, 0.2}, {0, 0.6}}));
  Var a = group_normalize(z, 2);
  EXPECT_TRUE(a.value().isApprox(rows({{0.5, 0.25}, {0.5, 0.75}}), 1e-15));
  t.backward(sum(hadamard(a, rows({{1, 2}, {3, 4}}))));
  EXPECT_EQ(z.grad()(0, 0), 0.0);
  EXPECT_EQ(z.grad()(1, 0), 0.0);
}

TEST(AvgPool, CeilModeAveragesPartialWindows) {
  Tape t;
  Var x = t.constant(rows({{1}, {2}, {3}, {4}, {5}}));
  Var y = avg_pool(x, Grid{1, 5, 1}, 2, 1);
  EXPECT_EQ(y.value(), rows({{1.5}, {3.5}, {5}}));
}

TEST(Tensor, RejectsNonFinite) {
  EXPECT_THROW(Tensor({2}, {1.0, std::numeric_limits<double>::infinity()}), ContractError);
  EXPECT_THROW(Tensor({3}, {1.0, 2.0}), ContractError);
}

TEST(Tensor, BinaryLayout) {
  Tensor t({1, 2}, {1.0, -2.5});
  std::stringstream ss;
  write_tensor(ss, t);
  const std::string bytes = ss.str();
  ASSERT_EQ(bytes.size(), 4u + 2 + 2 + 2 * 8 + 2 * 8);
  EXPECT_EQ(bytes.substr(0, 4), "CMAT");
  EXPECT_EQ(static_cast<unsigned char>(bytes[4]), 1);  // version, little-endian
  EXPECT_EQ(static_cast<unsigned char>(bytes[5]), 0);
  EXPECT_EQ(static_cast<unsigned char>(bytes[6]), 2);  // rank
  EXPECT_EQ(static_cast<unsigned char>(bytes[16]), 2);  // second extent
  // 1.0 = 0x3FF0000000000000, stored LSB first.
  EXPECT_EQ(static_cast<unsigned char>(bytes[31]), 0x3F);
  EXPECT_EQ(static_cast<unsigned char>(bytes[30]), 0xF0);
}

TEST(Tensor, RoundTripProperty) {
  Rng rng(21);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<std::uint64_t> shape(rng.below(4));
    for (auto& e : shape) e = 1 + rng.below(4);
    Tensor t(shape);
    for (auto& v : t.data()) v = rng.normal() * std::pow(10.0, rng.uniform(-30, 30));
    std::stringstream ss;
    write_tensor(ss, t);
    EXPECT_EQ(read_tensor(ss), t);
  }
}

TEST(Tensor, BadMagicRejected) {
  std::stringstream ss("XXXX\x01\x00");
  EXPECT_THROW(read_tensor(ss), ValidationError);
}

TEST(Properties, ForwardOutputsFinite) {
  Rng rng(5);
  for (int trial = 0; trial < 30; ++trial) {
    const Index r = 1 + static_cast<Index>(rng.below(6));
    const Index c = 1 + static_cast<Index>(rng.below(5));
    const Matrix x = random_matrix(r, c, rng, std::pow(10.0, rng.uniform(-3, 3)));
    Tape t;
    Var v = t.constant(x);
    EXPECT_TRUE(all_finite(sigmoid(v).value()));
    EXPECT_TRUE(all_finite(relu(v).value()));
    EXPECT_TRUE(all_finite(cosine_rows(v, v).value()));
    EXPECT_TRUE(all_finite(group_normalize(relu(v), r).value()));
    BatchNorm bn("bn", c);
    EXPECT_TRUE(all_finite(bn.forward(v, Mode::train).value()));
  }
}

TEST(Determinism, SameSeedSameInit) {
  Rng a(99), b(99);
  Linear la("l", 5, 4, a), lb("l", 5, 4, b);
  EXPECT_EQ(la.weight.value, lb.weight.value);
  Rng c(100);
  Linear lc("l", 5, 4, c);
  EXPECT_NE(la.weight.value, lc.weight.value);
}

TEST(Init, FanInBound) {
  Rng rng(0);
  const Matrix w = fan_in_uniform(24, 10, 24, rng);
  EXPECT_LE(w.cwiseAbs().maxCoeff(), std::sqrt(6.0 / 24));
}

}  // namespace
}  // namespace cmasge
