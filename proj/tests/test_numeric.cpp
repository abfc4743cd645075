#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "flags/error.hpp"
#include "flags/finite_diff.hpp"
#include "flags/graph.hpp"
#include "test_util.hpp"

using namespace flags;
using flags::testing::random_tensor;

namespace {

constexpr double kFdEps = 1e-6;
constexpr double kGradTol = 1e-5;

using OpFn = std::function<Var(std::span<const Var>)>;

// Contracts op(inputs) with a fixed random weight so every output element
// matters, then compares backward() against central differences for each
// input.
double op_grad_error(const OpFn& op, const std::vector<Tensor>& inputs, Rng& rng) {
    Tensor weight;
    {
        Graph g;
        std::vector<Var> vs;
        for (const Tensor& t : inputs) {
            vs.push_back(g.constant(t));
        }
        weight = random_tensor(op(vs).shape(), rng);
    }
    auto value_at = [&](const std::vector<Tensor>& xs) {
        Graph g;
        std::vector<Var> vs;
        for (const Tensor& t : xs) {
            vs.push_back(g.constant(t));
        }
        return sum(mul(op(vs), g.constant(weight))).value().item();
    };

    Graph g;
    std::vector<Var> leaves;
    for (const Tensor& t : inputs) {
        leaves.push_back(g.leaf(t));
    }
    g.backward(sum(mul(op(leaves), g.constant(weight))));

    double worst = 0.0;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        const Tensor fd = finite_diff_grad(
            [&](const Tensor& xi) {
                std::vector<Tensor> xs = inputs;
                xs[i] = xi;
                return value_at(xs);
            },
            inputs[i], kFdEps);
        worst = std::max(worst, max_relative_error(leaves[i].grad(), fd));
    }
    return worst;
}

Tensor positive_tensor(Shape shape, Rng& rng) {
    Tensor t(std::move(shape));
    for (double& v : t.values()) {
        v = rng.uniform(0.5, 2.0);
    }
    return t;
}

}  // namespace

TEST(Tensor, ShapeMustMatchValues) {
    EXPECT_THROW(Tensor({2, 3}, std::vector<double>(5)), DimensionError);
    const Tensor t({2, 3}, {1, 2, 3, 4, 5, 6});
    EXPECT_EQ(t.rows(), 2u);
    EXPECT_EQ(t.cols(), 3u);
    EXPECT_DOUBLE_EQ(t.at(1, 2), 6.0);
    EXPECT_EQ(Tensor::vector({1, 2}).rows(), 1u);
}

TEST(Matmul, IdentityLeavesOperandUnchanged) {
    Graph g;
    const Tensor b = Tensor::matrix(2, 2, {1.5, -2.0, 3.25, 4.0});
    const Var out = matmul(g.constant(Tensor::matrix(2, 2, {1, 0, 0, 1})), g.constant(b));
    EXPECT_EQ(out.value(), b);
}

TEST(Matmul, HandArithmetic) {
    Graph g;
    const Var out = matmul(g.constant(Tensor::matrix(1, 2, {1, 2})), g.constant(Tensor::matrix(2, 1, {3, 4})));
    EXPECT_EQ(out.shape(), (Shape{1, 1}));
    EXPECT_DOUBLE_EQ(out.value().item(), 11.0);
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
    Graph g;
    try {
        matmul(g.constant(Tensor({2, 3})), g.constant(Tensor({2, 3})));
        FAIL() << "expected DimensionError";
    } catch (const DimensionError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("[2 x 3]"), std::string::npos) << msg;
    }
}

TEST(Matmul, GradientOfSumIsOnesTimesBTransposed) {
    Rng rng(11);
    const Tensor a = random_tensor({3, 4}, rng);
    const Tensor b = random_tensor({4, 2}, rng);
    Graph g;
    const Var va = g.leaf(a);
    g.backward(sum(matmul(va, g.constant(b))));
    // ones(3x2) * b^T: every row equals the row sums of b.
    Tensor expected({3, 4});
    for (std::size_t r = 0; r < 3; ++r) {
        for (std::size_t k = 0; k < 4; ++k) {
            expected.at(r, k) = b.at(k, 0) + b.at(k, 1);
        }
    }
    const Tensor fd = finite_diff_grad(
        [&b](const Tensor& x) {
            Graph h;
            return sum(matmul(h.constant(x), h.constant(b))).value().item();
        },
        a);
    EXPECT_LT(max_relative_error(va.grad(), expected), 1e-12);
    EXPECT_LT(max_relative_error(fd, expected), kGradTol);
}

TEST(L2Normalize, ThreeFourFive) {
    Graph g;
    const Var y = l2_normalize(g.constant(Tensor::vector({3, 4})));
    EXPECT_NEAR(y.value()[0], 0.6, 1e-15);
    EXPECT_NEAR(y.value()[1], 0.8, 1e-15);
}

TEST(L2Normalize, UnitVectorIsFixed) {
    Rng rng(3);
    const Tensor u = flags::testing::random_unit(16, rng);
    Graph g;
    const Var y = l2_normalize(g.constant(u));
    for (std::size_t i = 0; i < u.size(); ++i) {
        EXPECT_NEAR(y.value()[i], u[i], 1e-15);
    }
}

TEST(L2Normalize, OutputNormWithinTolerance) {
    Rng rng(5);
    for (int trial = 0; trial < 200; ++trial) {
        const double scale = std::pow(10.0, rng.uniform(-5.0, 5.0));
        Graph g;
        const Var y = l2_normalize(g.constant(random_tensor({4, 16}, rng, scale)));
        for (std::size_t r = 0; r < 4; ++r) {
            EXPECT_NEAR(norm(y.value().row(r)), 1.0, 1e-9);
        }
    }
}

TEST(L2Normalize, DegenerateVectorThrows) {
    Graph g;
    EXPECT_THROW(l2_normalize(g.constant(Tensor({4}))), DegenerateVectorError);
    EXPECT_THROW(l2_normalize(g.constant(Tensor::vector({1e-13, 0.0}))), DegenerateVectorError);
    Tensor rows = Tensor::matrix(2, 2, {1, 0, 0, 0});
    EXPECT_THROW(l2_normalize(g.constant(rows)), DegenerateVectorError);
}

TEST(L2Normalize, JacobianMatchesFiniteDifferences) {
    Rng rng(17);
    for (int trial = 0; trial < 20; ++trial) {
        const Tensor x = random_tensor({16}, rng);
        for (std::size_t out = 0; out < 16; ++out) {
            Graph g;
            const Var vx = g.leaf(x);
            Tensor pick({16});
            pick[out] = 1.0;
            g.backward(dot(l2_normalize(vx), g.constant(pick)));
            const Tensor fd = finite_diff_grad(
                [out](const Tensor& t) {
                    Graph h;
                    return l2_normalize(h.constant(t)).value()[out];
                },
                x);
            EXPECT_LT(max_relative_error(vx.grad(), fd), kGradTol);
        }
    }
}

TEST(Backward, SquareAtThree) {
    Graph g;
    const Var x = g.leaf(Tensor::scalar(3.0));
    g.backward(mul(x, x));
    EXPECT_DOUBLE_EQ(x.grad().item(), 6.0);
}

TEST(Backward, SumOfNormalizedMatchesFiniteDifferences) {
    Rng rng(23);
    for (int trial = 0; trial < 10; ++trial) {
        const Tensor x = random_tensor({8}, rng);
        Graph g;
        const Var vx = g.leaf(x);
        g.backward(sum(l2_normalize(vx)));
        const Tensor fd = finite_diff_grad(
            [](const Tensor& t) {
                Graph h;
                return sum(l2_normalize(h.constant(t))).value().item();
            },
            x);
        EXPECT_LT(max_relative_error(vx.grad(), fd), kGradTol);
    }
}

TEST(Backward, DisconnectedLeafGetsZeroGrad) {
    Graph g;
    const Var x = g.leaf(Tensor::vector({1, 2}));
    const Var unused = g.leaf(Tensor::vector({5, 6, 7}));
    g.backward(sum(x));
    EXPECT_EQ(unused.grad(), Tensor({3}));
    EXPECT_EQ(x.grad(), Tensor::vector({1, 1}));
}

TEST(Backward, NonScalarOutputIsContractError) {
    Graph g;
    const Var x = g.leaf(Tensor::vector({1, 2}));
    EXPECT_THROW(g.backward(scale(x, 2.0)), ContractError);
}

TEST(Backward, GradBeforeBackwardIsContractError) {
    Graph g;
    const Var x = g.leaf(Tensor::vector({1, 2}));
    EXPECT_THROW(static_cast<void>(x.grad()), ContractError);
}

TEST(Backward, SharedSubexpressionEqualsUnrolledGraph) {
    Rng rng(29);
    const Tensor x = random_tensor({3, 5}, rng);
    const Tensor w = random_tensor({5, 4}, rng);

    Graph shared;
    const Var xs = shared.leaf(x);
    const Var h = relu(matmul(xs, shared.constant(w)));
    shared.backward(sum(add(mul(h, h), scale(h, 3.0))));

    Graph unrolled;
    const Var xu = unrolled.leaf(x);
    auto branch = [&] { return relu(matmul(xu, unrolled.constant(w))); };
    unrolled.backward(sum(add(mul(branch(), branch()), scale(branch(), 3.0))));

    EXPECT_LT(max_relative_error(xs.grad(), xu.grad()), 1e-14);
}

TEST(Exp, OverflowGuardRaises) {
    Graph g;
    EXPECT_NO_THROW(exp(g.constant(Tensor::vector({700.0}))));
    EXPECT_THROW(exp(g.constant(Tensor::vector({700.5}))), OverflowError);
}

TEST(Log, NonPositiveRaises) {
    Graph g;
    EXPECT_THROW(log(g.constant(Tensor::vector({1.0, 0.0}))), NumericError);
    EXPECT_THROW(log(g.constant(Tensor::vector({-1.0}))), NumericError);
}

TEST(LogSumExp, StableForLargeArguments) {
    Graph g;
    const Var y = logsumexp_rows(g.constant(Tensor::matrix(2, 2, {1000, 1000, -1000, -1000})));
    EXPECT_NEAR(y.value()[0], 1000.0 + std::log(2.0), 1e-12);
    EXPECT_NEAR(y.value()[1], -1000.0 + std::log(2.0), 1e-12);
}

TEST(Concat, JoinsAlongEachAxis) {
    Graph g;
    const Var a = g.constant(Tensor::matrix(2, 1, {1, 2}));
    const Var b = g.constant(Tensor::matrix(2, 2, {3, 4, 5, 6}));
    const Var parts[] = {a, b};
    EXPECT_EQ(concat(parts, 1).value(), Tensor::matrix(2, 3, {1, 3, 4, 2, 5, 6}));
    const Var rows[] = {b, b};
    EXPECT_EQ(concat(rows, 0).shape(), (Shape{4, 2}));
    const Var mismatched[] = {a, g.constant(Tensor({3, 1}))};
    EXPECT_THROW(concat(mismatched, 1), DimensionError);
}

TEST(FiniteDiff, SumGivesOnes) {
    Rng rng(31);
    const Tensor x = random_tensor({7}, rng);
    const Tensor fd = finite_diff_grad(
        [](const Tensor& t) {
            double s = 0.0;
            for (double v : t.values()) {
                s += v;
            }
            return s;
        },
        x);
    for (double v : fd.values()) {
        EXPECT_NEAR(v, 1.0, 1e-8);
    }
}

TEST(FiniteDiff, SelfDotAtOneTwo) {
    const Tensor fd = finite_diff_grad(
        [](const Tensor& t) { return dot(t.values(), t.values()); }, Tensor::vector({1, 2}));
    EXPECT_NEAR(fd[0], 2.0, 1e-8);
    EXPECT_NEAR(fd[1], 4.0, 1e-8);
}

TEST(FiniteDiff, NonFiniteValueRaises) {
    EXPECT_THROW(finite_diff_grad([](const Tensor&) { return std::nan(""); }, Tensor::vector({1})),
                 NumericError);
}

TEST(FiniteDiff, AgreesWithBackwardOnMatmulNormalizeLogSoftmax) {
    Rng rng(37);
    const Tensor w = random_tensor({6, 5}, rng);
    auto chain = [&w](Graph& g, Var x) {
        const Var z = l2_normalize(matmul(x, g.constant(w)));
        const Var logits = scale(z, 4.0);
        // log-softmax of column 0 for every row
        Tensor pick({3, 5});
        for (std::size_t r = 0; r < 3; ++r) {
            pick.at(r, 0) = 1.0;
        }
        return sum(sub(row_dot(logits, g.constant(pick)), logsumexp_rows(logits)));
    };
    for (int trial = 0; trial < 20; ++trial) {
        const Tensor x = random_tensor({3, 6}, rng);
        Graph g;
        const Var vx = g.leaf(x);
        g.backward(chain(g, vx));
        const Tensor fd = finite_diff_grad(
            [&](const Tensor& t) {
                Graph h;
                return chain(h, h.constant(t)).value().item();
            },
            x);
        EXPECT_LT(max_relative_error(vx.grad(), fd), kGradTol);
    }
}

struct OpCase {
    const char* name;
    std::function<std::vector<Tensor>(Rng&)> inputs;
    OpFn op;
};

class OpGradient : public ::testing::TestWithParam<OpCase> {};

TEST_P(OpGradient, MatchesFiniteDifferencesAtHundredPoints) {
    const OpCase& c = GetParam();
    Rng rng(mix_seed(41, std::hash<std::string>{}(c.name)));
    double worst = 0.0;
    for (int point = 0; point < 100; ++point) {
        worst = std::max(worst, op_grad_error(c.op, c.inputs(rng), rng));
    }
    EXPECT_LT(worst, kGradTol) << c.name;
}

INSTANTIATE_TEST_SUITE_P(
    AllOps, OpGradient,
    ::testing::Values(
        OpCase{"matmul",
               [](Rng& r) { return std::vector{random_tensor({3, 4}, r), random_tensor({4, 2}, r)}; },
               [](std::span<const Var> v) { return matmul(v[0], v[1]); }},
        OpCase{"matmul_nt",
               [](Rng& r) { return std::vector{random_tensor({3, 4}, r), random_tensor({5, 4}, r)}; },
               [](std::span<const Var> v) { return matmul_nt(v[0], v[1]); }},
        OpCase{"add",
               [](Rng& r) { return std::vector{random_tensor({2, 3}, r), random_tensor({2, 3}, r)}; },
               [](std::span<const Var> v) { return add(v[0], v[1]); }},
        OpCase{"sub",
               [](Rng& r) { return std::vector{random_tensor({4}, r), random_tensor({4}, r)}; },
               [](std::span<const Var> v) { return sub(v[0], v[1]); }},
        OpCase{"mul",
               [](Rng& r) { return std::vector{random_tensor({2, 3}, r), random_tensor({2, 3}, r)}; },
               [](std::span<const Var> v) { return mul(v[0], v[1]); }},
        OpCase{"scale", [](Rng& r) { return std::vector{random_tensor({5}, r)}; },
               [](std::span<const Var> v) { return scale(v[0], -2.5); }},
        OpCase{"add_bias",
               [](Rng& r) { return std::vector{random_tensor({3, 4}, r), random_tensor({4}, r)}; },
               [](std::span<const Var> v) { return add_bias(v[0], v[1]); }},
        OpCase{"relu", [](Rng& r) { return std::vector{random_tensor({3, 4}, r)}; },
               [](std::span<const Var> v) { return relu(v[0]); }},
        OpCase{"exp", [](Rng& r) { return std::vector{random_tensor({6}, r)}; },
               [](std::span<const Var> v) { return exp(v[0]); }},
        OpCase{"log", [](Rng& r) { return std::vector{positive_tensor({6}, r)}; },
               [](std::span<const Var> v) { return log(v[0]); }},
        OpCase{"dot",
               [](Rng& r) { return std::vector{random_tensor({5}, r), random_tensor({5}, r)}; },
               [](std::span<const Var> v) { return dot(v[0], v[1]); }},
        OpCase{"row_dot",
               [](Rng& r) { return std::vector{random_tensor({3, 5}, r), random_tensor({3, 5}, r)}; },
               [](std::span<const Var> v) { return row_dot(v[0], v[1]); }},
        OpCase{"concat_rank1",
               [](Rng& r) { return std::vector{random_tensor({2}, r), random_tensor({3}, r)}; },
               [](std::span<const Var> v) { return concat(v, 0); }},
        OpCase{"concat_rows",
               [](Rng& r) { return std::vector{random_tensor({2, 3}, r), random_tensor({1, 3}, r)}; },
               [](std::span<const Var> v) { return concat(v, 0); }},
        OpCase{"concat_cols",
               [](Rng& r) { return std::vector{random_tensor({2, 1}, r), random_tensor({2, 3}, r)}; },
               [](std::span<const Var> v) { return concat(v, 1); }},
        OpCase{"sum", [](Rng& r) { return std::vector{random_tensor({3, 3}, r)}; },
               [](std::span<const Var> v) { return sum(v[0]); }},
        OpCase{"logsumexp_rows", [](Rng& r) { return std::vector{random_tensor({3, 6}, r, 3.0)}; },
               [](std::span<const Var> v) { return logsumexp_rows(v[0]); }},
        OpCase{"logsumexp_vector", [](Rng& r) { return std::vector{random_tensor({6}, r, 3.0)}; },
               [](std::span<const Var> v) { return logsumexp_rows(v[0]); }},
        OpCase{"l2_normalize_rows", [](Rng& r) { return std::vector{random_tensor({3, 16}, r)}; },
               [](std::span<const Var> v) { return l2_normalize(v[0]); }}),
    [](const ::testing::TestParamInfo<OpCase>& info) { return std::string(info.param.name); });
