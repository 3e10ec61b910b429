#include <gtest/gtest.h>

#include <cmath>

#include "rpnet/gradcheck.hpp"
#include "rpnet/rng.hpp"
#include "rpnet/tensor.hpp"

using namespace rpnet;

TEST(Tensor, ShapeInvariants) {
    Tensor t({2, 3}, {1, 2, 3, 4, 5, 6});
    EXPECT_EQ(t.size(), 6u);
    EXPECT_EQ(t.at(1, 2), 6.0);
    EXPECT_THROW(Tensor({2, 3}, {1, 2}), ShapeError);
    EXPECT_THROW(Tensor({2, 0, 3}), ShapeError);
}

TEST(Matmul, IdentityIsExact) {
    Tensor x = Tensor::matrix({{1, 2}, {3, 4}});
    Tensor y = matmul(Tensor::identity(2), x);
    for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(y[i], x[i]);
}

TEST(Matmul, ZeroAnnihilates) {
    Tensor z = Tensor::zeros({2, 3});
    Rng rng(1);
    Tensor b = random_tensor(rng, {3, 4});
    Tensor y = matmul(z, b);
    for (std::size_t i = 0; i < y.size(); ++i) EXPECT_EQ(y[i], 0.0);
    EXPECT_EQ(y.shape(), (Shape{2, 4}));
}

TEST(Matmul, HandComputed) {
    Tensor y = matmul(Tensor::matrix({{1, 2}, {3, 4}}), Tensor::matrix({{5}, {6}}));
    EXPECT_EQ(y.at(0, 0), 17.0);
    EXPECT_EQ(y.at(1, 0), 39.0);
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
    Tensor a({2, 3}), b({4, 2});
    try {
        matmul(a, b);
        FAIL() << "expected ShapeError";
    } catch (const ShapeError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("[2x3]"), std::string::npos);
        EXPECT_NE(msg.find("[4x2]"), std::string::npos);
    }
}

TEST(Elementwise, ReluDefinition) {
    Tensor y = relu(Tensor::vector({-1, 0, 2}));
    EXPECT_EQ(y[0], 0.0);
    EXPECT_EQ(y[1], 0.0);
    EXPECT_EQ(y[2], 2.0);
}

TEST(Elementwise, AddZeroIdentity) {
    Rng rng(2);
    Tensor x = random_tensor(rng, {3, 5});
    Tensor y = add(x, Tensor::zeros({3, 5}));
    for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(y[i], x[i]);
}

TEST(Elementwise, MulHandComputed) {
    Tensor y = mul(Tensor::vector({2, 3}), Tensor::vector({4, 5}));
    EXPECT_EQ(y[0], 8.0);
    EXPECT_EQ(y[1], 15.0);
}

TEST(Elementwise, ShapeMismatch) {
    EXPECT_THROW(add(Tensor({2, 2}), Tensor({2, 3})), ShapeError);
}

TEST(Elementwise, ReluGradientZeroAtKink) {
    Tensor x = Tensor::vector({0.0, -1.0, 1.0});
    Tensor dy = Tensor::vector({5.0, 5.0, 5.0});
    Tensor dx = relu_backward(x, dy);
    EXPECT_EQ(dx[0], 0.0);  // subgradient convention at exactly zero
    EXPECT_EQ(dx[1], 0.0);
    EXPECT_EQ(dx[2], 5.0);
}

TEST(Reduce, MaxDefinition) {
    MaxReduce r = reduce_max(Tensor::vector({1, 5, 3}), 0);
    EXPECT_EQ(r.values[0], 5.0);
    EXPECT_EQ(r.argmax[0], 1u);
}

TEST(Reduce, MaxTieFirstOccurrence) {
    MaxReduce r = reduce_max(Tensor::vector({2, 7, 7, 1}), 0);
    EXPECT_EQ(r.argmax[0], 1u);
}

TEST(Reduce, MeanHandComputed) {
    Tensor y = reduce_mean(Tensor::vector({2, 4}), 0);
    EXPECT_EQ(y[0], 3.0);
}

TEST(Reduce, SumPermutationInvariant) {
    Rng rng(3);
    Tensor x = random_tensor(rng, {1, 64});
    Tensor direct = reduce_sum(x, 1);
    std::vector<std::size_t> perm(64);
    for (std::size_t i = 0; i < 64; ++i) perm[i] = i;
    rng.shuffle(perm);
    Tensor shuffled({1, 64});
    for (std::size_t i = 0; i < 64; ++i) shuffled[i] = x[perm[i]];
    Tensor permuted = reduce_sum(shuffled, 1);
    EXPECT_NEAR(direct[0], permuted[0], 1e-12);
}

TEST(Reduce, MaxBackwardRoutesToArgmaxOnly) {
    Tensor x = Tensor::matrix({{1, 9, 2}, {4, 0, 3}});
    MaxReduce r = reduce_max(x, 1);
    Tensor dy = Tensor::vector({1.0, 2.0});
    Tensor dx = reduce_max_backward(dy, x.shape(), 1, r.argmax);
    EXPECT_EQ(dx.at(0, 1), 1.0);
    EXPECT_EQ(dx.at(1, 0), 2.0);
    EXPECT_EQ(dx.at(0, 0), 0.0);
    EXPECT_EQ(dx.at(1, 2), 0.0);
}

TEST(Gather, IdentityRows) {
    Tensor x = Tensor::matrix({{1, 2}, {3, 4}});
    IndexArray idx({2, 1}, {0, 1});
    Tensor y = gather_rows(x, idx);
    EXPECT_EQ(y.shape(), (Shape{2, 1, 2}));
    EXPECT_EQ(y.at(0, 0, 1), 2.0);
    EXPECT_EQ(y.at(1, 0, 0), 3.0);
}

TEST(Gather, DuplicateIndexBackwardAccumulates) {
    IndexArray idx({1, 2}, {0, 0});
    Tensor dy({1, 2, 3});
    for (std::size_t i = 0; i < dy.size(); ++i) dy[i] = static_cast<double>(i + 1);
    Tensor dx = scatter_add_rows(dy, idx, 2);
    EXPECT_EQ(dx.at(0, 0), 1.0 + 4.0);
    EXPECT_EQ(dx.at(0, 1), 2.0 + 5.0);
    EXPECT_EQ(dx.at(0, 2), 3.0 + 6.0);
    EXPECT_EQ(dx.at(1, 0), 0.0);
}

TEST(Gather, InversePermutationRoundTrip) {
    Rng rng(4);
    Tensor x = random_tensor(rng, {6, 3});
    std::vector<std::size_t> perm{3, 1, 5, 0, 2, 4};
    std::vector<std::size_t> inv(6);
    for (std::size_t i = 0; i < 6; ++i) inv[perm[i]] = i;
    Tensor mid = gather_rows(x, IndexArray({6}, perm)).reshaped({6, 3});
    Tensor back = gather_rows(mid, IndexArray({6}, inv)).reshaped({6, 3});
    for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(back[i], x[i]);
}

TEST(Gather, OutOfRangeNamesOffendingValue) {
    Tensor x({2, 2});
    try {
        gather_rows(x, IndexArray({1, 1}, {7}));
        FAIL() << "expected IndexError";
    } catch (const IndexError& e) {
        EXPECT_NE(std::string(e.what()).find("7"), std::string::npos);
    }
}

TEST(Gather, ScatterAdjointOfGather) {
    Rng rng(5);
    Tensor x = random_tensor(rng, {8, 4});
    IndexArray idx({3, 2}, {0, 7, 2, 2, 5, 1});
    Tensor gx = gather_rows(x, idx);
    Tensor g = random_tensor(rng, gx.shape());
    Tensor sg = scatter_add_rows(g, idx, 8);
    EXPECT_NEAR(dot(gx, g), dot(x, sg), 1e-12);
}

// --------------------------- gradient checking -----------------------------

TEST(GradientCheck, LinearMapIsNearlyExact) {
    Rng rng(6);
    DiffOp op{
        "linear_probe",
        [](Rng& r) {
            return std::vector<Tensor>{random_tensor(r, {3, 4}), random_tensor(r, {4, 2})};
        },
        [](const std::vector<Tensor>& in) { return matmul(in[0], in[1]); },
        [](const std::vector<Tensor>& in, const Tensor& dy) {
            Tensor da(in[0].shape()), db(in[1].shape());
            matmul_backward(in[0], in[1], dy, &da, &db);
            return std::vector<Tensor>{da, db};
        },
        nullptr};
    GradCheckReport r = gradient_check(op, rng);
    EXPECT_TRUE(r.pass);
    EXPECT_LT(r.max_rel_error, 1e-10);
}

TEST(GradientCheck, ConstantFunctionZeroBothWays) {
    Rng rng(7);
    DiffOp op{"constant",
              [](Rng& r) { return std::vector<Tensor>{random_tensor(r, {3})}; },
              [](const std::vector<Tensor>&) { return Tensor::full({2}, 4.5); },
              [](const std::vector<Tensor>& in, const Tensor&) {
                  return std::vector<Tensor>{Tensor::zeros(in[0].shape())};
              },
              nullptr};
    GradCheckReport r = gradient_check(op, rng);
    EXPECT_TRUE(r.pass);
    EXPECT_EQ(r.max_rel_error, 0.0);
}

TEST(GradientCheck, ReluAwayFromKink) {
    Rng rng(8);
    const auto ops = primitive_diffops();
    const DiffOp* relu_op = nullptr;
    for (const auto& op : ops)
        if (op.name == "relu") relu_op = &op;
    ASSERT_NE(relu_op, nullptr);
    GradCheckReport r = gradient_check(*relu_op, rng);
    EXPECT_TRUE(r.pass) << r.detail;
}

TEST(GradientCheck, EveryPrimitivePassesOnFiveSeeds) {
    for (const DiffOp& op : primitive_diffops()) {
        for (std::uint64_t seed = 0; seed < 5; ++seed) {
            Rng rng(seed);
            GradCheckReport r = gradient_check(op, rng);
            EXPECT_TRUE(r.pass) << op.name << " seed " << seed << ": " << r.detail
                                << " err=" << r.max_rel_error;
        }
    }
}

TEST(GradientCheck, CorruptedBackwardIsCaught) {
    Rng rng(9);
    DiffOp bad{"corrupted_scale",
               [](Rng& r) { return std::vector<Tensor>{random_tensor(r, {4})}; },
               [](const std::vector<Tensor>& in) { return scale(in[0], 2.0); },
               [](const std::vector<Tensor>& in, const Tensor& dy) {
                   (void)in;
                   return std::vector<Tensor>{scale(dy, 3.0)};  // wrong factor
               },
               nullptr};
    GradCheckReport r = gradient_check(bad, rng);
    EXPECT_FALSE(r.pass);
}

TEST(GradientCheck, NonFiniteForwardReported) {
    Rng rng(10);
    DiffOp nan_op{"nan_forward",
                  [](Rng& r) { return std::vector<Tensor>{random_tensor(r, {2})}; },
                  [](const std::vector<Tensor>&) {
                      Tensor t({1});
                      t[0] = std::nan("");
                      return t;
                  },
                  [](const std::vector<Tensor>& in, const Tensor&) {
                      return std::vector<Tensor>{Tensor::zeros(in[0].shape())};
                  },
                  nullptr};
    GradCheckReport r = gradient_check(nan_op, rng);
    EXPECT_FALSE(r.pass);
    EXPECT_NE(r.detail.find("non-finite"), std::string::npos);
}

TEST(MacCounter, CountsMatmulAndElementwise) {
    MacCounterScope scope;
    Rng rng(11);
    Tensor a = random_tensor(rng, {2, 3});
    Tensor b = random_tensor(rng, {3, 5});
    matmul(a, b);                 // 2*3*5 = 30
    add(Tensor({2, 5}), Tensor({2, 5}));  // 10
    EXPECT_EQ(scope.value(), 40u);
}
