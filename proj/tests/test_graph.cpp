// Reverse-mode autodiff tape: every op's value against a naive recomputation
// and every op's gradient against central finite differences in double.

#include <doctest.h>

#include "dam/graph.hpp"
#include "dam/rng.hpp"

#include <cmath>
#include <functional>
#include <limits>
#include <vector>

using namespace dam;

namespace {

MatrixD rand_mat(Eigen::Index r, Eigen::Index c, Rng& rng, double lo = -1.0, double hi = 1.0) {
    MatrixD m(r, c);
    for (Eigen::Index i = 0; i < r; ++i) {
        for (Eigen::Index j = 0; j < c; ++j) m(i, j) = rng.uniform(lo, hi);
    }
    return m;
}

using Build = std::function<int(Graph<double>&, const std::vector<int>&)>;

// Backward() gradients for every element of every input versus central
// finite differences of the scalar loss.
void check_gradients(std::vector<MatrixD> params, const Build& build, double h = 1e-6,
                     double tol = 1e-6) {
    std::vector<MatrixD> accums;
    accums.reserve(params.size());
    for (const auto& p : params) accums.push_back(MatrixD::Zero(p.rows(), p.cols()));
    {
        Graph<double> g;
        std::vector<int> ids;
        for (std::size_t i = 0; i < params.size(); ++i) ids.push_back(g.param(&params[i], &accums[i]));
        const int loss = build(g, ids);
        REQUIRE(g.value(loss).rows() == 1);
        REQUIRE(g.value(loss).cols() == 1);
        g.backward(loss);
    }
    auto eval = [&]() {
        Graph<double> g;
        std::vector<int> ids;
        for (std::size_t i = 0; i < params.size(); ++i) ids.push_back(g.input_ref(&params[i]));
        return g.value(build(g, ids))(0, 0);
    };
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        for (Eigen::Index r = 0; r < params[pi].rows(); ++r) {
            for (Eigen::Index c = 0; c < params[pi].cols(); ++c) {
                const double keep = params[pi](r, c);
                params[pi](r, c) = keep + h;
                const double lp = eval();
                params[pi](r, c) = keep - h;
                const double lm = eval();
                params[pi](r, c) = keep;
                const double fd = (lp - lm) / (2.0 * h);
                const double an = accums[pi](r, c);
                const double scale = std::max({1.0, std::abs(fd), std::abs(an)});
                CAPTURE(pi);
                CAPTURE(r);
                CAPTURE(c);
                CHECK(std::abs(fd - an) <= tol * scale);
            }
        }
    }
}

// Weighted scalar readout so output gradients are non-uniform.
int weighted_sum(Graph<double>& g, int node, Rng& rng) {
    const Eigen::Index r = g.value(node).rows();
    const Eigen::Index c = g.value(node).cols();
    return g.sum_all(g.hadamard(node, g.input(rand_mat(r, c, rng))));
}

}  // namespace

TEST_CASE("matmul values and gradients for all transpose combinations") {
    Rng rng(1);
    const MatrixD A = rand_mat(3, 4, rng);
    const MatrixD B = rand_mat(4, 2, rng);

    Graph<double> g;
    const int a = g.input(A), b = g.input(B);
    CHECK(g.value(g.matmul(a, b)) == MatrixD(A * B));

    const MatrixD At = A.transpose(), Bt = B.transpose();
    const int at = g.input(At), bt = g.input(Bt);
    CHECK(g.value(g.matmul(at, b, true, false)) == MatrixD(At.transpose() * B));
    CHECK(g.value(g.matmul(a, bt, false, true)) == MatrixD(A * Bt.transpose()));
    CHECK(g.value(g.matmul(at, bt, true, true)) == MatrixD(At.transpose() * Bt.transpose()));
    CHECK_THROWS_AS(g.matmul(a, a), std::invalid_argument);

    for (const auto [ta, tb] : {std::pair{false, false}, {true, false}, {false, true}, {true, true}}) {
        Rng wr(2);
        const MatrixD lhs = ta ? MatrixD(A.transpose()) : A;
        const MatrixD rhs = tb ? MatrixD(B.transpose()) : B;
        check_gradients({lhs, rhs}, [&, ta = ta, tb = tb](Graph<double>& gg, const std::vector<int>& ids) {
            Rng w(7);
            return weighted_sum(gg, gg.matmul(ids[0], ids[1], ta, tb), w);
        });
    }
}

TEST_CASE("elementwise ops: add, sub, scale, hadamard") {
    Rng rng(3);
    const MatrixD A = rand_mat(4, 3, rng), B = rand_mat(4, 3, rng);
    Graph<double> g;
    const int a = g.input(A), b = g.input(B);
    CHECK(g.value(g.add(a, b)) == MatrixD(A + B));
    CHECK(g.value(g.sub(a, b)) == MatrixD(A - B));
    CHECK(g.value(g.scale(a, -2.5)) == MatrixD(-2.5 * A));
    CHECK(g.value(g.hadamard(a, b)) == MatrixD(A.cwiseProduct(B)));
    CHECK_THROWS_AS(g.add(a, g.input(MatrixD::Zero(2, 2))), std::invalid_argument);

    check_gradients({A, B}, [](Graph<double>& gg, const std::vector<int>& ids) {
        Rng w(8);
        const int x = gg.hadamard(gg.add(ids[0], ids[1]), gg.sub(ids[0], ids[1]));
        return weighted_sum(gg, gg.scale(x, 0.75), w);
    });
}

TEST_CASE("row-vector broadcast ops") {
    Rng rng(4);
    const MatrixD A = rand_mat(4, 5, rng);
    const MatrixD R = rand_mat(1, 5, rng, 0.5, 2.0);  // divisor away from zero

    Graph<double> g;
    const int a = g.input(A), r = g.input(R);
    MatrixD div_expect = A;
    MatrixD add_expect = A;
    for (Eigen::Index i = 0; i < A.rows(); ++i) {
        for (Eigen::Index j = 0; j < A.cols(); ++j) {
            div_expect(i, j) = A(i, j) / R(0, j);
            add_expect(i, j) = A(i, j) + R(0, j);
        }
    }
    CHECK(g.value(g.div_rowvec(a, r)).isApprox(div_expect, 1e-15));
    CHECK(g.value(g.add_rowvec(a, r)).isApprox(add_expect, 1e-15));
    CHECK_THROWS_AS(g.div_rowvec(a, a), std::invalid_argument);

    check_gradients({A, R}, [](Graph<double>& gg, const std::vector<int>& ids) {
        Rng w(9);
        return weighted_sum(gg, gg.div_rowvec(ids[0], ids[1]), w);
    });
    check_gradients({A, R}, [](Graph<double>& gg, const std::vector<int>& ids) {
        Rng w(10);
        return weighted_sum(gg, gg.add_rowvec(ids[0], ids[1]), w);
    });
}

TEST_CASE("sign-preserving clamp away from zero") {
    MatrixD X(1, 6);
    X << -2.0, -0.2, 0.0, 0.3, 1.5, 0.5;
    Graph<double> g;
    const int x = g.input(X);
    const int y = g.clamp_away_from_zero(x, 0.5);
    MatrixD expect(1, 6);
    expect << -2.0, -0.5, 0.5, 0.5, 1.5, 0.5;
    CHECK(g.value(y) == expect);
    CHECK_THROWS_AS(g.clamp_away_from_zero(x, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(g.clamp_away_from_zero(x, -1.0), std::invalid_argument);

    // Exact gradient: pass-through outside the band (boundary included), zero
    // inside.
    MatrixD param = X;
    MatrixD accum = MatrixD::Zero(1, 6);
    MatrixD W(1, 6);
    W << 1, 2, 3, 4, 5, 6;
    Graph<double> g2;
    const int p = g2.param(&param, &accum);
    const int loss = g2.sum_all(g2.hadamard(g2.clamp_away_from_zero(p, 0.5), g2.input(W)));
    g2.backward(loss);
    MatrixD expect_grad(1, 6);
    expect_grad << 1, 0, 0, 0, 5, 6;
    CHECK(accum == expect_grad);

    // FD check on smooth entries only.
    check_gradients({(MatrixD(1, 4) << -2.0, -0.9, 0.8, 1.5).finished()},
                    [](Graph<double>& gg, const std::vector<int>& ids) {
                        Rng w(11);
                        return weighted_sum(gg, gg.clamp_away_from_zero(ids[0], 0.5), w);
                    });
}

TEST_CASE("linear layer") {
    Rng rng(5);
    const MatrixD X = rand_mat(4, 3, rng), W = rand_mat(3, 6, rng), B = rand_mat(1, 6, rng);
    Graph<double> g;
    MatrixD expect = X * W;
    expect.rowwise() += B.row(0);
    CHECK(g.value(g.linear(g.input(X), g.input(W), g.input(B))) == expect);
    CHECK_THROWS_AS(g.linear(g.input(X), g.input(MatrixD::Zero(4, 6)), g.input(B)),
                    std::invalid_argument);
    CHECK_THROWS_AS(g.linear(g.input(X), g.input(W), g.input(MatrixD::Zero(1, 3))),
                    std::invalid_argument);

    check_gradients({X, W, B}, [](Graph<double>& gg, const std::vector<int>& ids) {
        Rng w(12);
        return weighted_sum(gg, gg.linear(ids[0], ids[1], ids[2]), w);
    });
}

TEST_CASE("gelu matches the erf form") {
    Rng rng(6);
    const MatrixD X = rand_mat(3, 4, rng, -3.0, 3.0);
    Graph<double> g;
    const MatrixD Y = g.value(g.gelu(g.input(X)));
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
        for (Eigen::Index j = 0; j < X.cols(); ++j) {
            const double v = X(i, j);
            const double expect = 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0)));
            CHECK(Y(i, j) == doctest::Approx(expect).epsilon(1e-14));
        }
    }
    check_gradients({X}, [](Graph<double>& gg, const std::vector<int>& ids) {
        Rng w(13);
        return weighted_sum(gg, gg.gelu(ids[0]), w);
    });
}

TEST_CASE("layernorm normalizes rows and differentiates") {
    Rng rng(7);
    const MatrixD X = rand_mat(4, 6, rng, -2.0, 2.0);
    const MatrixD Gn = rand_mat(1, 6, rng, 0.5, 1.5);
    const MatrixD Bs = rand_mat(1, 6, rng);
    const double eps = 1e-5;

    Graph<double> g;
    const MatrixD Y = g.value(g.layernorm(g.input(X), g.input(Gn), g.input(Bs)));
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
        const double mu = X.row(i).mean();
        double var = 0.0;
        for (Eigen::Index j = 0; j < X.cols(); ++j) var += (X(i, j) - mu) * (X(i, j) - mu);
        var /= double(X.cols());
        for (Eigen::Index j = 0; j < X.cols(); ++j) {
            const double xhat = (X(i, j) - mu) / std::sqrt(var + eps);
            CHECK(Y(i, j) == doctest::Approx(Gn(0, j) * xhat + Bs(0, j)).epsilon(1e-12));
        }
    }
    // Normalized rows have zero mean and unit variance before gain/bias.
    const MatrixD plain =
        g.value(g.layernorm(g.input(X), g.input(MatrixD::Ones(1, 6)), g.input(MatrixD::Zero(1, 6))));
    for (Eigen::Index i = 0; i < plain.rows(); ++i) {
        CHECK(plain.row(i).mean() == doctest::Approx(0.0).epsilon(1e-12));
        CHECK(plain.row(i).squaredNorm() / 6.0 == doctest::Approx(1.0).epsilon(1e-4));
    }

    check_gradients({X, Gn, Bs},
                    [](Graph<double>& gg, const std::vector<int>& ids) {
                        Rng w(14);
                        return weighted_sum(gg, gg.layernorm(ids[0], ids[1], ids[2]), w);
                    },
                    1e-6, 1e-5);
}

TEST_CASE("softmax rows: normalization, shift invariance, gradients") {
    Rng rng(8);
    const MatrixD X = rand_mat(3, 5, rng, -4.0, 4.0);
    Graph<double> g;
    const MatrixD P = g.value(g.softmax_rows(g.input(X)));
    for (Eigen::Index i = 0; i < P.rows(); ++i) {
        CHECK(P.row(i).sum() == doctest::Approx(1.0).epsilon(1e-12));
        double manual_denominator = 0.0;
        for (Eigen::Index j = 0; j < P.cols(); ++j) manual_denominator += std::exp(X(i, j));
        for (Eigen::Index j = 0; j < P.cols(); ++j) {
            CHECK(P(i, j) == doctest::Approx(std::exp(X(i, j)) / manual_denominator).epsilon(1e-12));
        }
    }
    MatrixD shifted = X;
    shifted.array() += 123.0;
    CHECK(g.value(g.softmax_rows(g.input(shifted))).isApprox(P, 1e-12));

    check_gradients({X}, [](Graph<double>& gg, const std::vector<int>& ids) {
        Rng w(15);
        return weighted_sum(gg, gg.softmax_rows(ids[0]), w);
    });
}

TEST_CASE("append_zero_col adds the attend-to-nothing slot") {
    Rng rng(9);
    const MatrixD X = rand_mat(3, 4, rng);
    Graph<double> g;
    const MatrixD Y = g.value(g.append_zero_col(g.input(X)));
    CHECK(Y.rows() == 3);
    CHECK(Y.cols() == 5);
    CHECK(Y.leftCols(4) == X);
    CHECK(Y.col(4) == VectorD::Zero(3));

    check_gradients({X}, [](Graph<double>& gg, const std::vector<int>& ids) {
        Rng w(16);
        return weighted_sum(gg, gg.softmax_rows(gg.append_zero_col(ids[0])), w);
    });
}

TEST_CASE("slicing and concatenation") {
    Rng rng(10);
    const MatrixD X = rand_mat(5, 4, rng);
    Graph<double> g;
    const int x = g.input(X);
    CHECK(g.value(g.slice_rows(x, 1, 3)) == MatrixD(X.middleRows(1, 3)));
    CHECK(g.value(g.slice_cols(x, 2, 2)) == MatrixD(X.middleCols(2, 2)));
    CHECK_THROWS_AS(g.slice_rows(x, 4, 3), std::invalid_argument);
    CHECK_THROWS_AS(g.slice_cols(x, 0, 5), std::invalid_argument);
    CHECK_THROWS_AS(g.slice_rows(x, -1, 2), std::invalid_argument);

    const MatrixD A = rand_mat(2, 4, rng), B = rand_mat(3, 4, rng);
    Graph<double> g2;
    MatrixD cat(5, 4);
    cat << A, B;
    CHECK(g2.value(g2.concat_rows(g2.input(A), g2.input(B))) == cat);
    const MatrixD C = rand_mat(2, 3, rng);
    MatrixD catc(2, 7);
    catc << A, C;
    CHECK(g2.value(g2.concat_cols(g2.input(A), g2.input(C))) == catc);
    CHECK_THROWS_AS(g2.concat_rows(g2.input(A), g2.input(C)), std::invalid_argument);
    CHECK_THROWS_AS(g2.concat_rows(std::vector<int>{}), std::invalid_argument);

    check_gradients({X}, [](Graph<double>& gg, const std::vector<int>& ids) {
        Rng w(17);
        const int top = gg.slice_rows(ids[0], 0, 2);
        const int bottom = gg.slice_rows(ids[0], 2, 3);
        const int left = gg.slice_cols(ids[0], 0, 2);
        return weighted_sum(
            gg, gg.concat_cols(gg.concat_rows(top, bottom), gg.concat_cols(left, gg.slice_cols(ids[0], 2, 2))),
            w);
    });
}

TEST_CASE("gather_rows repeats and accumulates") {
    Rng rng(11);
    const MatrixD X = rand_mat(4, 3, rng);
    Graph<double> g;
    const int y = g.gather_rows(g.input(X), {2, 0, 2, 3});
    CHECK(g.value(y).row(0) == X.row(2));
    CHECK(g.value(y).row(1) == X.row(0));
    CHECK(g.value(y).row(2) == X.row(2));
    CHECK(g.value(y).row(3) == X.row(3));
    CHECK_THROWS_AS(g.gather_rows(g.input(X), {4}), std::invalid_argument);
    CHECK_THROWS_AS(g.gather_rows(g.input(X), {-1}), std::invalid_argument);

    check_gradients({X}, [](Graph<double>& gg, const std::vector<int>& ids) {
        Rng w(18);
        return weighted_sum(gg, gg.gather_rows(ids[0], {2, 0, 2, 3, 1, 1}), w);
    });
}

TEST_CASE("mean_merge averages groups and splits gradients") {
    Rng rng(12);
    const MatrixD X = rand_mat(5, 3, rng);
    const MergeGroups groups = {{0}, {1, 3, 4}, {2}};
    Graph<double> g;
    const MatrixD Y = g.value(g.mean_merge(g.input(X), groups));
    REQUIRE(Y.rows() == 3);
    CHECK(Y.row(0) == X.row(0));
    CHECK(Y.row(1).isApprox(((X.row(1) + X.row(3) + X.row(4)) / 3.0).eval(), 1e-15));
    CHECK(Y.row(2) == X.row(2));
    CHECK_THROWS_AS(g.mean_merge(g.input(X), {{0}, {}}), std::invalid_argument);
    CHECK_THROWS_AS(g.mean_merge(g.input(X), {{0}, {7}}), std::invalid_argument);

    check_gradients({X}, [groups](Graph<double>& gg, const std::vector<int>& ids) {
        Rng w(19);
        return weighted_sum(gg, gg.mean_merge(ids[0], groups), w);
    });
}

TEST_CASE("transpose, mean_rows, sum_all") {
    Rng rng(13);
    const MatrixD X = rand_mat(3, 5, rng);
    Graph<double> g;
    CHECK(g.value(g.transpose(g.input(X))) == MatrixD(X.transpose()));
    CHECK(g.value(g.mean_rows(g.input(X))) == MatrixD(X.colwise().mean()));
    CHECK(g.value(g.sum_all(g.input(X)))(0, 0) == doctest::Approx(X.sum()).epsilon(1e-14));

    check_gradients({X}, [](Graph<double>& gg, const std::vector<int>& ids) {
        Rng w(20);
        return weighted_sum(gg, gg.mean_rows(gg.transpose(ids[0])), w);
    });
}

TEST_CASE("huber loss values and gradients in both regimes") {
    // Differences straddle the delta=1 boundary but stay away from it.
    MatrixD P(1, 4), T(1, 4), W(1, 4);
    P << 0.3, -0.4, 2.5, -3.0;
    T << 0.0, 0.0, 0.0, 0.5;
    W << 1.0, 2.0, 0.5, 1.5;
    const double delta = 1.0, scale = 0.25;

    Graph<double> g;
    const int loss = g.huber_loss(g.input(P), g.input(T), g.input(W), delta, scale);
    double expect = 0.0;
    for (int j = 0; j < 4; ++j) {
        const double d = P(0, j) - T(0, j);
        const double h = std::abs(d) <= delta ? 0.5 * d * d : delta * (std::abs(d) - 0.5 * delta);
        expect += W(0, j) * h;
    }
    CHECK(g.value(loss)(0, 0) == doctest::Approx(scale * expect).epsilon(1e-14));
    CHECK_THROWS_AS(g.huber_loss(g.input(P), g.input(T), g.input(W), 0.0, 1.0),
                    std::invalid_argument);
    CHECK_THROWS_AS(g.huber_loss(g.input(P), g.input(T), g.input(MatrixD::Ones(2, 4)), 1.0, 1.0),
                    std::invalid_argument);

    check_gradients({P, T, W}, [=](Graph<double>& gg, const std::vector<int>& ids) {
        return gg.huber_loss(ids[0], ids[1], ids[2], delta, scale);
    });
}

TEST_CASE("parameter gradients accumulate across graphs and reuses") {
    Rng rng(14);
    MatrixD Wp = rand_mat(3, 3, rng);
    MatrixD accum = MatrixD::Zero(3, 3);

    MatrixD first_grad;
    {
        Graph<double> g;
        const int p = g.param(&Wp, &accum);
        g.backward(g.sum_all(g.matmul(p, p)));  // parameter used twice
        first_grad = accum;
    }
    // d/dW sum(W*W) = (W + W^T) * ones-sum structure; verify by FD separately.
    check_gradients({Wp}, [](Graph<double>& gg, const std::vector<int>& ids) {
        return gg.sum_all(gg.matmul(ids[0], ids[0]));
    });

    {
        Graph<double> g;
        const int p = g.param(&Wp, &accum);
        g.backward(g.sum_all(g.scale(p, 2.0)));
    }
    // Second backward added 2s on top of the first gradient.
    CHECK(accum == MatrixD(first_grad + MatrixD::Constant(3, 3, 2.0)));

    SUBCASE("accumulator shape must match") {
        MatrixD bad = MatrixD::Zero(2, 2);
        Graph<double> g;
        CHECK_THROWS_AS(g.param(&Wp, &bad), std::invalid_argument);
        CHECK_THROWS_AS(g.param(nullptr, &accum), std::invalid_argument);
        CHECK_THROWS_AS(g.input_ref(nullptr), std::invalid_argument);
    }
}

TEST_CASE("graph lifecycle rules") {
    MatrixD W = MatrixD::Ones(2, 2);
    MatrixD accum = MatrixD::Zero(2, 2);

    SUBCASE("backward twice is rejected") {
        Graph<double> g;
        const int loss = g.sum_all(g.param(&W, &accum));
        g.backward(loss);
        CHECK_THROWS_AS(g.backward(loss), std::logic_error);
    }
    SUBCASE("extending after backward is rejected") {
        Graph<double> g;
        const int loss = g.sum_all(g.param(&W, &accum));
        g.backward(loss);
        CHECK_THROWS_AS(g.input(MatrixD::Zero(1, 1)), std::logic_error);
    }
    SUBCASE("loss must be scalar and attached") {
        Graph<double> g;
        const int p = g.param(&W, &accum);
        CHECK_THROWS_AS(g.backward(p), std::invalid_argument);  // 2x2
        const int detached = g.sum_all(g.input(MatrixD::Ones(2, 2)));
        CHECK_THROWS_AS(g.backward(detached), std::logic_error);
    }
    SUBCASE("gradient access guards") {
        Graph<double> g;
        const int p = g.param(&W, &accum);
        const int c = g.input(MatrixD::Ones(2, 2));
        const int loss = g.sum_all(g.add(p, c));
        CHECK(!g.has_grad(p));
        CHECK_THROWS_AS(g.grad(p), std::logic_error);
        g.backward(loss);
        CHECK(g.has_grad(p));
        CHECK(g.grad(p) == MatrixD::Ones(2, 2));
        CHECK_THROWS_AS(g.grad(c), std::logic_error);  // constants carry no grad
        CHECK_THROWS_AS(g.value(999), std::out_of_range);
        CHECK_THROWS_AS(g.value(-1), std::out_of_range);
    }
}

TEST_CASE("finite checking names the offending op") {
    Graph<double> strict(true);
    CHECK(strict.check_finite());
    MatrixD bad(1, 1);
    bad << std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_WITH_AS(strict.input(std::move(bad)), doctest::Contains("input"),
                         std::runtime_error);

    const int big = strict.input(MatrixD::Constant(1, 1, 1e308));
    CHECK_THROWS_WITH_AS(strict.add(big, big), doctest::Contains("add"), std::runtime_error);

    // The default graph lets non-finite values flow.
    Graph<double> loose;
    MatrixD inf(1, 1);
    inf << std::numeric_limits<double>::infinity();
    CHECK_NOTHROW(loose.input(std::move(inf)));
}

TEST_CASE("dropout masks scale kept entries and honor the probability") {
    Rng rng(15);
    const double p = 0.3;
    const MatrixD mask = make_dropout_mask<double>(200, 200, p, rng);
    double zeros = 0.0;
    const double keep = 1.0 / (1.0 - p);
    for (Eigen::Index i = 0; i < mask.rows(); ++i) {
        for (Eigen::Index j = 0; j < mask.cols(); ++j) {
            if (mask(i, j) == 0.0) zeros += 1.0;
            else CHECK(mask(i, j) == keep);
        }
    }
    CHECK(zeros / double(mask.size()) == doctest::Approx(p).epsilon(0.05));

    Rng a(16), b(16);
    CHECK(make_dropout_mask<double>(8, 8, 0.5, a) == make_dropout_mask<double>(8, 8, 0.5, b));
    Rng c(17);
    CHECK(make_dropout_mask<double>(4, 4, 0.0, c) == MatrixD::Ones(4, 4));
    Rng d(18);
    CHECK_THROWS_AS(make_dropout_mask<double>(2, 2, 1.0, d), std::invalid_argument);
    CHECK_THROWS_AS(make_dropout_mask<double>(2, 2, -0.1, d), std::invalid_argument);
}

TEST_CASE("identical builds produce identical values") {
    auto build = [](Graph<double>& g) {
        Rng rng(19);
        const int x = g.input(rand_mat(6, 6, rng));
        const int w = g.input(rand_mat(6, 6, rng));
        return g.value(g.softmax_rows(g.gelu(g.matmul(x, w))));
    };
    Graph<double> g1, g2;
    CHECK(build(g1) == build(g2));
}
