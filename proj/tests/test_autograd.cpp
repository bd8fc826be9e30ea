#include <cmath>
#include <functional>

#include <gtest/gtest.h>

#include "cisum/autograd.hpp"
#include "cisum/errors.hpp"
#include "cisum/model.hpp"
#include "support/fixtures.hpp"
#include "support/gradcheck.hpp"

namespace {

using cisum::Matrix;
using cisum::model::ParameterSet;
using cisum::model::Tape;
using cisum::model::Var;
namespace ag = cisum::ag;

// Reduces an op's output to a scalar through fixed random weights so every
// output entry contributes to the checked gradient.
using Op = std::function<Var(Tape&, ParameterSet&)>;

double check_op(ParameterSet& params, const Op& op) {
  auto objective = [&](Tape& tape) {
    const Var out = op(tape, params);
    const Var w = tape.constant(fixtures::random_matrix(out.rows(), out.cols(), 77));
    return ag::sum_all(ag::mul(out, w));
  };
  const auto report = gradcheck::compare(
      params,
      [&] {
        Tape tape;
        tape.backward(objective(tape));
      },
      [&] {
        Tape tape;
        return objective(tape).value()(0, 0);
      },
      1e-5, 1e-8);
  return report.worst_relative;
}

TEST(AutogradOps, ElementwiseAndLinearAlgebra) {
  ParameterSet ps;
  auto& a = ps.add("a", fixtures::random_matrix(3, 4, 1));
  auto& b = ps.add("b", fixtures::random_matrix(3, 4, 2));
  auto& c = ps.add("c", fixtures::random_matrix(4, 2, 3));
  auto& row = ps.add("row", fixtures::random_matrix(1, 4, 4));

  EXPECT_LT(check_op(ps, [&](Tape& t, ParameterSet&) { return ag::matmul(t.param(a), t.param(c)); }), 1e-6);
  EXPECT_LT(check_op(ps, [&](Tape& t, ParameterSet&) { return ag::matmul_nt(t.param(a), t.param(b)); }), 1e-6);
  EXPECT_LT(check_op(ps, [&](Tape& t, ParameterSet&) { return ag::sub(ag::add(t.param(a), t.param(b)), t.param(a)); }), 1e-6);
  EXPECT_LT(check_op(ps, [&](Tape& t, ParameterSet&) { return ag::mul(t.param(a), t.param(b)); }), 1e-6);
  EXPECT_LT(check_op(ps, [&](Tape& t, ParameterSet&) { return ag::one_minus(ag::scale(t.param(a), 0.3)); }), 1e-6);
  EXPECT_LT(check_op(ps, [&](Tape& t, ParameterSet&) { return ag::add_row(t.param(a), t.param(row)); }), 1e-6);
  EXPECT_LT(check_op(ps, [&](Tape& t, ParameterSet&) { return ag::transpose(t.param(a)); }), 1e-6);
}

TEST(AutogradOps, Activations) {
  ParameterSet ps;
  auto& a = ps.add("a", fixtures::random_matrix(3, 5, 9, 2.0));
  EXPECT_LT(check_op(ps, [&](Tape& t, ParameterSet&) { return ag::gelu(t.param(a)); }), 1e-6);
  EXPECT_LT(check_op(ps, [&](Tape& t, ParameterSet&) { return ag::sigmoid(t.param(a)); }), 1e-6);
}

TEST(AutogradOps, LayerNormGradients) {
  ParameterSet ps;
  auto& x = ps.add("x", fixtures::random_matrix(3, 6, 11));
  auto& g = ps.add("g", fixtures::random_matrix(1, 6, 12));
  auto& s = ps.add("s", fixtures::random_matrix(1, 6, 13));
  EXPECT_LT(check_op(ps, [&](Tape& t, ParameterSet&) { return ag::layer_norm(t.param(x), t.param(g), t.param(s)); }),
            1e-5);
}

TEST(AutogradOps, LayerNormSingleRowByHand) {
  Tape t;
  Matrix x(1, 3);
  x << 1, 2, 3;
  const Var y = ag::layer_norm(t.constant(x), t.constant(Matrix::Ones(1, 3)), t.constant(Matrix::Zero(1, 3)));
  const double sd = std::sqrt(2.0 / 3.0 + 1e-5);
  EXPECT_NEAR(y.value()(0, 0), -1.0 / sd, 1e-12);
  EXPECT_NEAR(y.value()(0, 1), 0.0, 1e-12);
  EXPECT_NEAR(y.value()(0, 2), 1.0 / sd, 1e-12);
}

TEST(AutogradOps, MaskedSoftmaxGradients) {
  ParameterSet ps;
  auto& a = ps.add("a", fixtures::random_matrix(4, 4, 21));
  const cisum::Mask mask{1, 0, 1, 1};
  EXPECT_LT(check_op(ps, [&](Tape& t, ParameterSet&) { return ag::masked_softmax_rows(t.param(a), mask, false); }), 1e-6);
  EXPECT_LT(check_op(ps, [&](Tape& t, ParameterSet&) { return ag::masked_softmax_rows(t.param(a), {}, true); }), 1e-6);
  EXPECT_LT(check_op(ps, [&](Tape& t, ParameterSet&) {
              return ag::pick(ag::masked_log_softmax_rows(t.param(a), {}), std::vector<int>{0, 3, -1, 2});
            }),
            1e-6);
}

TEST(AutogradOps, MaskedSoftmaxZeroesMaskedAndFutureKeys) {
  Tape t;
  const Var w = ag::masked_softmax_rows(t.constant(fixtures::random_matrix(4, 4, 5)), {1, 1, 0, 1}, true);
  for (int i = 0; i < 4; ++i) {
    double sum = 0;
    for (int j = 0; j < 4; ++j) {
      if (j > i || j == 2) {
        EXPECT_EQ(w.value()(i, j), 0.0);
      }
      sum += w.value()(i, j);
    }
    EXPECT_NEAR(sum, 1.0, 1e-12);
  }
}

TEST(AutogradOps, SoftmaxPropagatesNaNAndLeavesFullyMaskedRowsZero) {
  Tape t;
  Matrix x = Matrix::Zero(2, 3);
  x(0, 1) = std::nan("");
  x.row(1).setConstant(std::nan(""));
  for (const Var& y : {ag::masked_softmax_rows(t.constant(x), {1, 1, 1}, false),
                       ag::masked_log_softmax_rows(t.constant(x), {1, 1, 1})}) {
    EXPECT_TRUE(std::isnan(y.value()(0, 0)));
    EXPECT_TRUE(std::isnan(y.value()(1, 2)));
  }
  const Var masked = ag::masked_softmax_rows(t.constant(Matrix::Ones(1, 2)), {0, 0}, false);
  EXPECT_EQ(masked.value(), Matrix::Zero(1, 2));
}

TEST(AutogradOps, ShapeOps) {
  ParameterSet ps;
  auto& a = ps.add("a", fixtures::random_matrix(4, 6, 31));
  auto& b = ps.add("b", fixtures::random_matrix(4, 2, 32));
  auto& table = ps.add("table", fixtures::random_matrix(5, 3, 33));
  auto& row = ps.add("row", fixtures::random_matrix(1, 3, 34));
  EXPECT_LT(check_op(ps, [&](Tape& t, ParameterSet&) {
              return ag::concat_cols(std::vector<Var>{t.param(a), t.param(b)});
            }),
            1e-6);
  EXPECT_LT(check_op(ps, [&](Tape& t, ParameterSet&) { return ag::slice_cols(t.param(a), 2, 3); }), 1e-6);
  EXPECT_LT(check_op(ps, [&](Tape& t, ParameterSet&) { return ag::slice_rows(t.param(a), 1, 2); }), 1e-6);
  EXPECT_LT(check_op(ps, [&](Tape& t, ParameterSet&) {
              return ag::gather_rows(t.param(table), std::vector<int>{4, 1, 4, 0});
            }),
            1e-6);
  EXPECT_LT(check_op(ps, [&](Tape& t, ParameterSet&) { return ag::broadcast_rows(t.param(row), 3); }), 1e-6);
  EXPECT_LT(check_op(ps, [&](Tape& t, ParameterSet&) { return ag::masked_mean_rows(t.param(a), {0, 1, 1, 0}); }),
            1e-6);
}

TEST(AutogradOps, RepeatedParameterUseAccumulates) {
  ParameterSet ps;
  auto& a = ps.add("a", Matrix::Constant(1, 1, 3.0));
  ps.zero_grad();
  Tape t;
  const Var x = t.param(a);
  t.backward(ag::sum_all(ag::mul(x, x)));
  EXPECT_DOUBLE_EQ(a.grad(0, 0), 6.0);
  Tape t2;
  t2.backward(ag::sum_all(t2.param(a)), 0.5);
  EXPECT_DOUBLE_EQ(a.grad(0, 0), 6.5);
}

TEST(AutogradOps, BackwardNeedsScalarRoot) {
  ParameterSet ps;
  auto& a = ps.add("a", Matrix::Ones(2, 2));
  Tape t;
  EXPECT_THROW(t.backward(t.param(a)), cisum::ContractViolation);
}

TEST(AutogradOps, ShapeMismatchIsConfigError) {
  Tape t;
  EXPECT_THROW(ag::add(t.constant(Matrix::Ones(2, 2)), t.constant(Matrix::Ones(2, 3))), cisum::ConfigError);
}

}  // namespace
