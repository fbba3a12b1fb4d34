#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "ocn/corrector.hpp"
#include "test_support.hpp"

using namespace ocn;
using ocn::test::random_tensor;
using ocn::test::rel_err;

namespace {

GridSpec make_grid(int H, int W) {
    GridConfig c;
    c.n_lat = H;
    c.n_lon = W;
    c.lat_min_deg = -60.0;
    c.lat_max_deg = 60.0;
    return build_grid(c);
}

CorrectorConfig small_cfg() {
    CorrectorConfig cfg;
    cfg.base_channels = 4;
    cfg.n_down = 2;
    cfg.n_heads = 2;
    cfg.d_model = 8;
    return cfg;
}

} // namespace

TEST_CASE("config validation") {
    CorrectorConfig cfg = small_cfg();
    cfg.n_heads = 3; // 8 % 3 != 0
    CHECK_THROWS_AS(cfg.validate(16, 32), ConfigError);
    CorrectorConfig cfg2 = small_cfg();
    CHECK_THROWS_AS(cfg2.validate(10, 32), ConfigError); // 10 % 4 != 0
    CHECK_NOTHROW(small_cfg().validate(16, 32));
}

TEST_CASE("encoder shapes and zero propagation") {
    const CorrectorConfig cfg = small_cfg();
    const int c_in = 9 + 4;
    SUBCASE("spatial dims halve per stage: 16x32 -> 4x8, skips 16x32 and 8x16") {
        Rng rng(1);
        CorrectorWeights w = CorrectorWeights::init(cfg, c_in, 9, rng);
        ad::Tape tape;
        CorrectorVars vars = lift_corrector(tape, w, false);
        ad::Var y = tape.leaf(random_tensor(Shape{9, 16, 32}, rng));
        ad::Var f = tape.leaf(random_tensor(Shape{4, 16, 32}, rng));
        EncodeResult enc = encode(y, f, vars, cfg);
        CHECK(enc.z.val().shape() == Shape{8, 4, 8});
        REQUIRE(enc.skips.size() == 2);
        CHECK(enc.skips[0].val().shape() == Shape{4, 16, 32});
        CHECK(enc.skips[1].val().shape() == Shape{8, 8, 16});
    }
    SUBCASE("all-zero inputs with zero weights give zero z and skips") {
        CorrectorWeights w = CorrectorWeights::zeros(cfg, c_in, 9);
        ad::Tape tape;
        CorrectorVars vars = lift_corrector(tape, w, false);
        ad::Var y = tape.leaf(Tensor(Shape{9, 16, 32}));
        ad::Var f = tape.leaf(Tensor(Shape{4, 16, 32}));
        EncodeResult enc = encode(y, f, vars, cfg);
        for (int64_t i = 0; i < enc.z.val().numel(); ++i) CHECK(enc.z.val()[i] == 0.0);
        for (const auto& s : enc.skips)
            for (int64_t i = 0; i < s.val().numel(); ++i) CHECK(s.val()[i] == 0.0);
    }
    SUBCASE("bit-identical output for a fixed seed") {
        auto run = [&] {
            Rng rng(99);
            CorrectorWeights w = CorrectorWeights::init(cfg, c_in, 9, rng);
            ad::Tape tape;
            CorrectorVars vars = lift_corrector(tape, w, false);
            ad::Var y = tape.leaf(random_tensor(Shape{9, 16, 32}, rng));
            ad::Var f = tape.leaf(random_tensor(Shape{4, 16, 32}, rng));
            return encode(y, f, vars, cfg).z.val();
        };
        const Tensor a = run(), b = run();
        for (int64_t i = 0; i < a.numel(); ++i) CHECK(a[i] == b[i]);
    }
}

TEST_CASE("ste identities") {
    SUBCASE("single token with identity projections is a fixed point") {
        CorrectorConfig cfg;
        cfg.n_heads = 1;
        cfg.d_model = 3;
        cfg.base_channels = 1;
        cfg.n_down = 1;
        CorrectorWeights w = CorrectorWeights::zeros(cfg, 1, 1);
        auto eye = [](int n) {
            Tensor t(Shape{n, n});
            for (int i = 0; i < n; ++i) t.at2(i, i) = 1.0;
            return t;
        };
        w.wq[0] = eye(3);
        w.wk[0] = eye(3);
        w.wv[0] = eye(3);
        w.wo = eye(3);
        ad::Tape tape;
        CorrectorVars vars = lift_corrector(tape, w, false);
        Tensor z(Shape{3, 1, 1}, {0.3, -1.2, 2.0});
        const Tensor out = ste(tape.leaf(z), vars, cfg).val();
        for (int64_t i = 0; i < 3; ++i) CHECK(out[i] == doctest::Approx(z[i]).epsilon(1e-14));
    }
    SUBCASE("identical keys average the value rows") {
        CorrectorConfig cfg;
        cfg.n_heads = 1;
        cfg.d_model = 2;
        cfg.base_channels = 1;
        cfg.n_down = 1;
        CorrectorWeights w = CorrectorWeights::zeros(cfg, 1, 1);
        Rng rng(3);
        w.wq[0] = random_tensor(Shape{2, 2}, rng); // arbitrary queries
        // wk stays zero -> all keys identical -> uniform attention
        w.wv[0] = Tensor(Shape{2, 2}, {1.0, 0.0, 0.0, 1.0});
        w.wo = Tensor(Shape{2, 2}, {1.0, 0.0, 0.0, 1.0});
        ad::Tape tape;
        CorrectorVars vars = lift_corrector(tape, w, false);
        Tensor z(Shape{2, 1, 2}, {1.0, 3.0, -2.0, 5.0}); // tokens (1,-2) and (3,5)
        const Tensor out = ste(tape.leaf(z), vars, cfg).val();
        // each output token equals the mean of the two value rows
        CHECK(out.at3(0, 0, 0) == doctest::Approx(2.0).epsilon(1e-14));
        CHECK(out.at3(0, 0, 1) == doctest::Approx(2.0).epsilon(1e-14));
        CHECK(out.at3(1, 0, 0) == doctest::Approx(1.5).epsilon(1e-14));
        CHECK(out.at3(1, 0, 1) == doctest::Approx(1.5).epsilon(1e-14));
    }
    SUBCASE("attention rows sum to one") {
        Rng rng(5);
        ad::Tape tape;
        ad::Var q = tape.leaf(random_tensor(Shape{6, 4}, rng, -2.0, 2.0));
        ad::Var k = tape.leaf(random_tensor(Shape{6, 4}, rng, -2.0, 2.0));
        ad::Var attn = ad::softmax_rows(ad::scale(ad::matmul(q, ad::transpose2d(k)), 0.5));
        const Tensor a = attn.val();
        for (int i = 0; i < 6; ++i) {
            double row = 0.0;
            for (int j = 0; j < 6; ++j) row += a.at2(i, j);
            CHECK(std::abs(row - 1.0) <= 1e-12);
        }
    }
    SUBCASE("permutation equivariance over tokens") {
        const CorrectorConfig cfg = small_cfg();
        Rng rng(17);
        CorrectorWeights w = CorrectorWeights::init(cfg, 4, 4, rng);
        ad::Tape tape;
        CorrectorVars vars = lift_corrector(tape, w, false);
        Tensor z = random_tensor(Shape{cfg.d_model, 2, 4}, rng);
        const int64_t n = 8;
        std::vector<int64_t> perm(n);
        for (int64_t i = 0; i < n; ++i) perm[i] = i;
        Rng prng(23);
        prng.shuffle(perm);
        Tensor zp(z.shape());
        for (int c = 0; c < cfg.d_model; ++c)
            for (int64_t t = 0; t < n; ++t) zp[c * n + perm[t]] = z[c * n + t];
        const Tensor out = ste(tape.leaf(z), vars, cfg).val();
        const Tensor outp = ste(tape.leaf(zp), vars, cfg).val();
        for (int c = 0; c < cfg.d_model; ++c)
            for (int64_t t = 0; t < n; ++t) {
                CHECK(outp[c * n + perm[t]] == doctest::Approx(out[c * n + t]).epsilon(1e-12));
            }
    }
}

TEST_CASE("decoder") {
    const CorrectorConfig cfg = small_cfg();
    const GridSpec grid = make_grid(16, 32);
    const int c_in = 9 + 4, c_out = 9;
    SUBCASE("zero everything gives a zero tendency") {
        CorrectorWeights w = CorrectorWeights::zeros(cfg, c_in, c_out);
        ad::Tape tape;
        CorrectorVars vars = lift_corrector(tape, w, false);
        std::vector<ad::Var> skips{tape.leaf(Tensor(Shape{4, 16, 32})), tape.leaf(Tensor(Shape{8, 8, 16}))};
        const Tensor out = decode(tape.leaf(Tensor(Shape{8, 4, 8})), skips, vars, cfg, grid).value.val();
        CHECK(out.shape() == Shape{9, 16, 32});
        for (int64_t i = 0; i < out.numel(); ++i) CHECK(out[i] == 0.0);
    }
    SUBCASE("skip shape mismatch names the stage") {
        Rng rng(2);
        CorrectorWeights w = CorrectorWeights::init(cfg, c_in, c_out, rng);
        ad::Tape tape;
        CorrectorVars vars = lift_corrector(tape, w, false);
        std::vector<ad::Var> skips{tape.leaf(Tensor(Shape{4, 16, 32})), tape.leaf(Tensor(Shape{8, 4, 16}))};
        try {
            decode(tape.leaf(Tensor(Shape{8, 4, 8})), skips, vars, cfg, grid);
            FAIL("expected ShapeError");
        } catch (const ShapeError& e) {
            CHECK(std::string(e.what()).find("stage 0") != std::string::npos);
        }
    }
}

TEST_CASE("corrector_forward") {
    const CorrectorConfig cfg = small_cfg();
    const int c_out = 5;
    SUBCASE("zero weights give zero output; output respects the mask") {
        GridConfig gc;
        gc.n_lat = 16;
        gc.n_lon = 32;
        gc.lat_min_deg = -60.0;
        gc.lat_max_deg = 60.0;
        Tensor m = Tensor::full(Shape{16, 32}, 1.0);
        for (int i = 4; i < 8; ++i)
            for (int j = 10; j < 20; ++j) m.at2(i, j) = 0.0;
        gc.mask = m;
        const GridSpec grid = build_grid(gc);
        CorrectorWeights w = CorrectorWeights::zeros(cfg, c_out + 4, c_out);
        ad::Tape tape;
        CorrectorVars vars = lift_corrector(tape, w, false);
        Rng rng(8);
        Field y{tape.leaf(random_tensor(Shape{c_out, 16, 32}, rng)), &grid};
        Field f{tape.leaf(random_tensor(Shape{4, 16, 32}, rng)), &grid};
        const Tensor out = corrector_forward(y, f, vars, cfg).value.val();
        for (int64_t i = 0; i < out.numel(); ++i) CHECK(out[i] == 0.0);

        // random weights: finite everywhere, exactly zero on land
        Rng wrng(9);
        CorrectorWeights w2 = CorrectorWeights::init(cfg, c_out + 4, c_out, wrng);
        CorrectorVars vars2 = lift_corrector(tape, w2, false);
        const Tensor out2 = corrector_forward(y, f, vars2, cfg).value.val();
        CHECK(out2.all_finite());
        for (int c = 0; c < c_out; ++c)
            for (int i = 0; i < 16; ++i)
                for (int j = 0; j < 32; ++j) {
                    if (m.at2(i, j) == 0.0) CHECK(out2.at3(c, i, j) == 0.0);
                }
    }
}

TEST_CASE("corrector gradients match finite differences on a 16x32 grid") {
    const CorrectorConfig cfg = small_cfg();
    const GridSpec grid = make_grid(16, 32);
    const int c_out = 5;
    Rng rng(31);
    CorrectorWeights weights = CorrectorWeights::init(cfg, c_out + 4, c_out, rng);
    const Tensor y0 = random_tensor(Shape{c_out, 16, 32}, rng);
    const Tensor f0 = random_tensor(Shape{4, 16, 32}, rng);

    auto loss_value = [&] {
        ad::Tape tape;
        CorrectorVars vars = lift_corrector(tape, weights, true);
        Field y{tape.leaf(y0), &grid};
        Field f{tape.leaf(f0), &grid};
        return ad::sum(corrector_forward(y, f, vars, cfg).value).val()[0];
    };

    ad::Tape tape;
    CorrectorVars vars = lift_corrector(tape, weights, true);
    ad::Var root = ad::sum(corrector_forward(Field{tape.leaf(y0), &grid}, Field{tape.leaf(f0), &grid}, vars, cfg).value);
    tape.backward(root);

    // The lift order matches collect() order, so pair analytic grads by leaf id.
    std::vector<ParamRef> refs;
    weights.collect(refs);
    std::vector<ad::Var> leaf_vars;
    for (int32_t id = 0; id < tape.size(); ++id) {
        if (tape.parents(id).empty() && tape.needs_grad(id)) leaf_vars.push_back(ad::Var{&tape, id});
    }
    REQUIRE(leaf_vars.size() == refs.size());

    // Mixed relative/absolute criterion: gradients below the FD resolution
    // floor (round-off of an O(10) loss over a 2e-5 interval ~ 1e-9) are
    // compared absolutely at rtol * floor.
    Rng pick(55);
    for (int s = 0; s < 40; ++s) {
        const size_t pi = static_cast<size_t>(pick.below(static_cast<int64_t>(refs.size())));
        const int64_t idx = pick.below(refs[pi].tensor->numel());
        const double analytic = tape.grad(leaf_vars[pi])[idx];
        const double fd = ocn::test::central_diff(loss_value, *refs[pi].tensor, idx);
        CHECK(rel_err(analytic, fd, 1e-3) < 1e-5);
    }
}
