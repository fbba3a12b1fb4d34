#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <functional>
#include <vector>

#include "ocn/tape.hpp"
#include "test_support.hpp"

using namespace ocn;
using ocn::test::central_diff;
using ocn::test::random_tensor;
using ocn::test::rel_err;

namespace {

using GraphFn = std::function<ad::Var(ad::Tape&, std::vector<ad::Var>&)>;

double eval_scalar(const GraphFn& f, std::vector<Tensor>& masters) {
    ad::Tape tape;
    std::vector<ad::Var> leaves;
    for (Tensor& m : masters) leaves.push_back(tape.leaf(m, true));
    return f(tape, leaves).val()[0];
}

/// Analytic vs central finite-difference gradients for every entry of every
/// master tensor; returns the max relative error.
double max_grad_err(const GraphFn& f, std::vector<Tensor>& masters) {
    ad::Tape tape;
    std::vector<ad::Var> leaves;
    for (Tensor& m : masters) leaves.push_back(tape.leaf(m, true));
    ad::Var root = f(tape, leaves);
    tape.backward(root);
    std::vector<Tensor> analytic;
    for (ad::Var v : leaves) analytic.push_back(tape.grad(v));

    double worst = 0.0;
    for (size_t mi = 0; mi < masters.size(); ++mi) {
        for (int64_t i = 0; i < masters[mi].numel(); ++i) {
            const double fd = central_diff([&] { return eval_scalar(f, masters); }, masters[mi], i);
            worst = std::max(worst, rel_err(analytic[mi][i], fd));
        }
    }
    return worst;
}

} // namespace

TEST_CASE("softplus closed-form values") {
    ad::Tape tape;
    ad::Var x = tape.leaf(Tensor(Shape{3}, {0.0, 50.0, -50.0}));
    ad::Var y = ad::softplus(x);
    CHECK(y.val()[0] == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(y.val()[1] == doctest::Approx(50.0).epsilon(1e-12)); // saturates without overflow
    CHECK(y.val()[2] == doctest::Approx(std::log1p(std::exp(-50.0))).epsilon(1e-12));
}

TEST_CASE("backward of sum(x*x) is 2x") {
    ad::Tape tape;
    ad::Var x = tape.leaf(Tensor(Shape{3}, {1.0, 2.0, 3.0}), true);
    ad::Var y = ad::sum(ad::mul(x, x));
    tape.backward(y);
    const Tensor g = tape.grad(x);
    CHECK(g[0] == 2.0);
    CHECK(g[1] == 4.0);
    CHECK(g[2] == 6.0);
}

TEST_CASE("softmax([0,0]) dot [1,0]: grad of first logit is 0.25") {
    // Hand Jacobian of the 2-element softmax at equal logits: p(1-p) = 0.25.
    ad::Tape tape;
    ad::Var x = tape.leaf(Tensor(Shape{2}, {0.0, 0.0}), true);
    ad::Var w = tape.constant(Tensor(Shape{2}, {1.0, 0.0}));
    ad::Var y = ad::sum(ad::mul(ad::softmax_rows(x), w));
    tape.backward(y);
    const Tensor g = tape.grad(x);
    CHECK(g[0] == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(g[1] == doctest::Approx(-0.25).epsilon(1e-12));
}

TEST_CASE("constant root leaves all gradients zero") {
    ad::Tape tape;
    ad::Var x = tape.leaf(Tensor(Shape{4}, {1.0, 2.0, 3.0, 4.0}), true);
    ad::Var c = tape.constant(Tensor::scalar(7.0));
    ad::Var root = ad::sum(ad::smul(c, c)); // root does not depend on x
    tape.backward(root);
    const Tensor g = tape.grad(x);
    for (int64_t i = 0; i < g.numel(); ++i) CHECK(g[i] == 0.0);
}

TEST_CASE("grad of sum(A.x) is the column sums of A") {
    Rng rng(11);
    Tensor a = random_tensor(Shape{3, 4}, rng);
    ad::Tape tape;
    ad::Var av = tape.constant(a);
    ad::Var x = tape.leaf(random_tensor(Shape{4, 1}, rng), true);
    tape.backward(ad::sum(ad::matmul(av, x)));
    const Tensor g = tape.grad(x);
    for (int64_t j = 0; j < 4; ++j) {
        double col = 0.0;
        for (int64_t i = 0; i < 3; ++i) col += a.at2(i, j);
        CHECK(g[j] == doctest::Approx(col).epsilon(1e-14));
    }
}

TEST_CASE("non-scalar backward root is rejected") {
    ad::Tape tape;
    ad::Var x = tape.leaf(Tensor(Shape{2, 2}), true);
    CHECK_THROWS_AS(tape.backward(x), ShapeError);
}

TEST_CASE("shape mismatch errors name the primitive and both shapes") {
    ad::Tape tape;
    ad::Var a = tape.leaf(Tensor(Shape{2, 3}));
    ad::Var b = tape.leaf(Tensor(Shape{2, 4}));
    try {
        ad::add(a, b);
        FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("add") != std::string::npos);
        CHECK(msg.find("[2,3]") != std::string::npos);
        CHECK(msg.find("[2,4]") != std::string::npos);
    }
}

TEST_CASE("per-primitive gradients match central differences to 1e-6") {
    Rng rng(42);

    SUBCASE("add/sub/mul/scale chain") {
        std::vector<Tensor> m{random_tensor(Shape{4, 4}, rng), random_tensor(Shape{4, 4}, rng)};
        const double err = max_grad_err(
            [](ad::Tape&, std::vector<ad::Var>& v) {
                return ad::sum(ad::mul(ad::add(v[0], v[1]), ad::scale(ad::sub(v[0], v[1]), 1.7)));
            },
            m);
        CHECK(err < 1e-6);
    }
    SUBCASE("smul") {
        std::vector<Tensor> m{random_tensor(Shape{4, 4}, rng), Tensor::scalar(0.37)};
        const double err = max_grad_err(
            [](ad::Tape&, std::vector<ad::Var>& v) { return ad::sum(ad::smul(ad::square(v[0]), v[1])); }, m);
        CHECK(err < 1e-6);
    }
    SUBCASE("matmul and transpose") {
        std::vector<Tensor> m{random_tensor(Shape{4, 3}, rng), random_tensor(Shape{4, 2}, rng)};
        const double err = max_grad_err(
            [](ad::Tape&, std::vector<ad::Var>& v) {
                return ad::sum(ad::matmul(ad::transpose2d(v[0]), v[1]));
            },
            m);
        CHECK(err < 1e-6);
    }
    SUBCASE("concat and slice") {
        std::vector<Tensor> m{random_tensor(Shape{2, 3}, rng), random_tensor(Shape{2, 3}, rng)};
        const double err = max_grad_err(
            [](ad::Tape&, std::vector<ad::Var>& v) {
                ad::Var c = ad::concat({v[0], v[1]}, 0);
                ad::Var s = ad::slice(c, 0, 1, 2);
                return ad::sum(ad::square(s));
            },
            m);
        CHECK(err < 1e-6);
    }
    SUBCASE("pads and correlate") {
        Tensor kernel(Shape{3, 3}, {0.0, 1.0, 0.0, -1.0, 4.0, -1.0, 0.0, 1.0, 0.0});
        std::vector<Tensor> m{random_tensor(Shape{4, 4}, rng)};
        const double err = max_grad_err(
            [kernel](ad::Tape&, std::vector<ad::Var>& v) {
                ad::Var p = ad::pad_periodic(ad::pad_replicate(v[0], 0), 1);
                return ad::sum(ad::square(ad::correlate(p, kernel)));
            },
            m);
        CHECK(err < 1e-6);
    }
    SUBCASE("conv2d stride 1 and stride 2") {
        std::vector<Tensor> m{random_tensor(Shape{2, 4, 4}, rng), random_tensor(Shape{3, 2, 3, 3}, rng),
                              random_tensor(Shape{3}, rng)};
        const double err1 = max_grad_err(
            [](ad::Tape&, std::vector<ad::Var>& v) {
                return ad::sum(ad::square(ad::conv2d(v[0], v[1], v[2], 1, 1)));
            },
            m);
        CHECK(err1 < 1e-6);
        const double err2 = max_grad_err(
            [](ad::Tape&, std::vector<ad::Var>& v) {
                return ad::sum(ad::square(ad::conv2d(v[0], v[1], v[2], 2, 1)));
            },
            m);
        CHECK(err2 < 1e-6);
    }
    SUBCASE("conv2d_transpose") {
        std::vector<Tensor> m{random_tensor(Shape{2, 2, 2}, rng), random_tensor(Shape{2, 3, 3, 3}, rng),
                              random_tensor(Shape{3}, rng)};
        const double err = max_grad_err(
            [](ad::Tape&, std::vector<ad::Var>& v) {
                ad::Var y = ad::conv2d_transpose(v[0], v[1], v[2], 2, 1, 1);
                return ad::sum(ad::square(y));
            },
            m);
        CHECK(err < 1e-6);
    }
    SUBCASE("softplus/relu/softmax/masked_fill") {
        Tensor keep = Tensor::full(Shape{4, 4}, 1.0);
        keep.at2(1, 2) = 0.0;
        keep.at2(3, 0) = 0.0;
        std::vector<Tensor> m{random_tensor(Shape{4, 4}, rng)};
        const double err = max_grad_err(
            [keep](ad::Tape&, std::vector<ad::Var>& v) {
                ad::Var a = ad::softplus(v[0]);
                ad::Var b = ad::relu(ad::scale(v[0], 2.0));
                ad::Var sm = ad::softmax_rows(ad::add(a, b));
                return ad::mean(ad::square(ad::masked_fill(sm, keep, 0.0)));
            },
            m);
        CHECK(err < 1e-6);
    }
    SUBCASE("reshape") {
        std::vector<Tensor> m{random_tensor(Shape{2, 8}, rng)};
        const double err = max_grad_err(
            [](ad::Tape&, std::vector<ad::Var>& v) {
                return ad::sum(ad::square(ad::reshape(v[0], Shape{4, 4})));
            },
            m);
        CHECK(err < 1e-6);
    }
}

TEST_CASE("composite graph matches finite differences at 10 random points") {
    Tensor kernel(Shape{1, 3}, {-0.5, 0.0, 0.5});
    for (uint64_t seed = 1; seed <= 10; ++seed) {
        Rng rng(seed);
        std::vector<Tensor> m{random_tensor(Shape{3, 4}, rng, -0.6, 0.6),
                              random_tensor(Shape{3, 4}, rng, -0.6, 0.6),
                              Tensor::scalar(rng.uniform(0.2, 1.2))};
        const double err = max_grad_err(
            [kernel](ad::Tape&, std::vector<ad::Var>& v) {
                ad::Var a = ad::softplus(ad::mul(v[0], v[1]));
                ad::Var b = ad::correlate(ad::pad_periodic(a, 1), kernel);
                ad::Var c = ad::smul(ad::add(b, ad::sub(v[0], v[1])), v[2]);
                ad::Var d = ad::matmul(c, ad::transpose2d(ad::concat({v[1], v[0]}, 0)));
                ad::Var e = ad::slice(d, 1, 1, 4);
                return ad::mean(ad::square(e));
            },
            m);
        CHECK(err < 1e-6);
    }
}

TEST_CASE("forward+backward is bit-deterministic across runs") {
    auto run = [](std::vector<double>& grads_out) {
        Rng rng(77);
        ad::Tape tape;
        ad::Var x = tape.leaf(random_tensor(Shape{4, 4}, rng), true);
        ad::Var w = tape.leaf(random_tensor(Shape{4, 4}, rng), true);
        ad::Var y = ad::mean(ad::square(ad::matmul(ad::softmax_rows(x), w)));
        tape.backward(y);
        for (ad::Var v : {x, w}) {
            const Tensor g = tape.grad(v);
            for (int64_t i = 0; i < g.numel(); ++i) grads_out.push_back(g[i]);
        }
        return y.val()[0];
    };
    std::vector<double> g1, g2;
    const double y1 = run(g1);
    const double y2 = run(g2);
    CHECK(y1 == y2);
    REQUIRE(g1.size() == g2.size());
    for (size_t i = 0; i < g1.size(); ++i) CHECK(g1[i] == g2[i]);
}

TEST_CASE("backward is linear in the root") {
    Rng rng(5);
    Tensor x0 = random_tensor(Shape{3, 3}, rng);
    const double a = 1.3, b = -0.7;

    auto grads_of = [&x0](const std::function<ad::Var(ad::Var)>& body) {
        ad::Tape tape;
        ad::Var x = tape.leaf(x0, true);
        tape.backward(body(x));
        return tape.grad(x);
    };
    auto f = [](ad::Var x) { return ad::sum(ad::square(x)); };
    auto g = [](ad::Var x) { return ad::mean(ad::softplus(x)); };
    const Tensor gf = grads_of(f);
    const Tensor gg = grads_of(g);
    const Tensor gfg = grads_of([&](ad::Var x) { return ad::add(ad::scale(f(x), a), ad::scale(g(x), b)); });
    for (int64_t i = 0; i < gfg.numel(); ++i) {
        CHECK(gfg[i] == doctest::Approx(a * gf[i] + b * gg[i]).epsilon(1e-12));
    }
}

TEST_CASE("pad_periodic + correlate equals brute force on a wrapped array") {
    Tensor kernel(Shape{3, 3}, {0.25, -1.0, 0.5, 2.0, -3.0, 1.5, 0.0, 1.0, -0.75});
    for (uint64_t seed = 1; seed <= 4; ++seed) {
        Rng rng(seed);
        const int64_t H = 5 + static_cast<int64_t>(seed % 3), W = 8 - static_cast<int64_t>(seed % 2);
        Tensor x = random_tensor(Shape{H, W}, rng);

        ad::Tape tape;
        ad::Var xv = tape.leaf(x);
        ad::Var out = ad::correlate(ad::pad_periodic(ad::pad_periodic(xv, 0), 1), kernel);
        REQUIRE(out.val().dim(0) == H);
        REQUIRE(out.val().dim(1) == W);

        // Independent evaluation on explicit wrapped indexing, same loop order.
        for (int64_t i = 0; i < H; ++i) {
            for (int64_t j = 0; j < W; ++j) {
                double acc = 0.0;
                for (int64_t p = 0; p < 3; ++p)
                    for (int64_t q = 0; q < 3; ++q) {
                        const int64_t ii = (i + p - 1 + H) % H;
                        const int64_t jj = (j + q - 1 + W) % W;
                        acc += kernel.at2(p, q) * x.at2(ii, jj);
                    }
                CHECK(out.val().at2(i, j) == acc); // bit-for-bit
            }
        }
    }
}
