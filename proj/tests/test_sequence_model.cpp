#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "storm/errors.hpp"
#include "storm/seq/patching.hpp"
#include "storm/seq/transformer.hpp"

using namespace storm::nn;
using namespace storm::seq;

namespace {

Matrix random_matrix(Rng& rng, int r, int c) {
    Matrix m(r, c);
    for (int i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-1.0, 1.0);
    return m;
}

Matrix numbered_window(int w, int n, int d) {
    Matrix win(w * n, d);
    for (int i = 0; i < win.size(); ++i) win.data()[i] = static_cast<double>(i) * 0.25;
    return win;
}

}  // namespace

TEST_CASE("ts patching: counts, placement, exact round-trip") {
    int w = 64, n = 2, d = 3, p = 4;
    Matrix win = numbered_window(w, n, d);
    auto grid = patch_time_series(win, w, n, d, p);
    CHECK(grid.count() == 32);  // (64/4) * 2
    CHECK(grid.patch_len() == p * d);
    CHECK(grid.patch_shape.days == p);
    CHECK(grid.patch_shape.stocks == 1);

    // element (t=5, i=1, d=0) lands in token i*(W/p) + t/p at offset (t%p)*D
    int token = ts_token_of(5, 1, w, n, p);
    CHECK(token == 1 * 16 + 1);
    CHECK(grid.tokens(token, (5 % p) * d + 0) == win(5 * n + 1, 0));

    Matrix back = unpatch(grid);
    CHECK((back - win).norm() == 0.0);  // bitwise round-trip

    CHECK_THROWS_AS(patch_time_series(win, w, n, d, 5), storm::ConfigError);
}

TEST_CASE("cs patching: one patch per day regardless of N, exact round-trip") {
    int w = 64, n = 7, d = 2;
    Matrix win = numbered_window(w, n, d);
    auto grid = patch_cross_section(win, w, n, d);
    CHECK(grid.count() == 64);
    CHECK(grid.patch_len() == n * d);
    CHECK(grid.tokens(10, 3 * d + 1) == win(10 * n + 3, 1));
    CHECK((unpatch(grid) - win).norm() == 0.0);
}

TEST_CASE("N=1: ts patching with p=1 matches cs patching token-for-token") {
    int w = 16, n = 1, d = 4;
    Rng rng(3);
    Matrix win = random_matrix(rng, w * n, d);
    auto ts = patch_time_series(win, w, n, d, 1);
    auto cs = patch_cross_section(win, w, n, d);
    REQUIRE(ts.count() == cs.count());
    CHECK((ts.tokens - cs.tokens).norm() == 0.0);
}

TEST_CASE("patch maps round-trip as permutations for random shapes") {
    Rng rng(4);
    for (int trial = 0; trial < 20; ++trial) {
        int p = rng.uniform_int(1, 4);
        int w = p * rng.uniform_int(1, 6);
        int n = rng.uniform_int(1, 5);
        int d = rng.uniform_int(1, 4);
        Matrix win = random_matrix(rng, w * n, d);
        auto ts = patch_time_series(win, w, n, d, p);
        CHECK((unpatch(ts) - win).norm() == 0.0);
        auto cs = patch_cross_section(win, w, n, d);
        CHECK((unpatch(cs) - win).norm() == 0.0);
        // lossless tiling: token count x patch length covers the window
        CHECK(ts.count() * ts.patch_len() == w * n * d);
        CHECK(cs.count() * cs.patch_len() == w * n * d);
    }
}

TEST_CASE("attention config is validated") {
    AttentionConfig bad;
    bad.width = 10;
    bad.heads = 4;
    CHECK_THROWS_AS(bad.validate(), storm::ConfigError);
    AttentionConfig ok;
    ok.width = 16;
    ok.heads = 4;
    ok.layers = 2;
    CHECK_NOTHROW(ok.validate());
}

TEST_CASE("encoder stack preserves shape and is identity when residual branches are zero") {
    AttentionConfig cfg;
    cfg.layers = 2;
    cfg.heads = 2;
    cfg.width = 8;
    cfg.mlp_ratio = 2;
    ParamStore store;
    Rng rng(5);
    auto stack = make_stack(store, "enc", cfg, rng);

    Matrix x0 = random_matrix(rng, 6, 8);
    {
        Tape tape;
        Var out = stack_forward(tape, tape.input(x0), stack);
        CHECK(out.rows() == 6);
        CHECK(out.cols() == 8);
        CHECK(out.val().allFinite());
    }

    // zero the attention output and MLP output projections -> identity map
    for (auto& p : store.all()) {
        if (p->name.find(".o.") != std::string::npos ||
            p->name.find(".fc2.") != std::string::npos)
            p->value.setZero();
    }
    Tape tape;
    Var out = stack_forward(tape, tape.input(x0), stack);
    CHECK((out.val() - x0).norm() == 0.0);
}

TEST_CASE("encoder gradients match central differences on a 2-token toy") {
    AttentionConfig cfg;
    cfg.layers = 1;
    cfg.heads = 2;
    cfg.width = 4;
    cfg.mlp_ratio = 2;
    ParamStore store;
    Rng rng(6);
    auto stack = make_stack(store, "enc", cfg, rng);
    Matrix x0 = random_matrix(rng, 2, 4);
    Matrix target = random_matrix(rng, 2, 4);

    auto loss_value = [&]() {
        Tape tape;
        Var out = stack_forward(tape, tape.input(x0), stack);
        return sum_sq(sub(out, tape.input(target))).scalar();
    };

    store.zero_grad();
    {
        Tape tape;
        Var out = stack_forward(tape, tape.input(x0), stack);
        tape.backward(sum_sq(sub(out, tape.input(target))));
    }

    // probe several parameters of each kind
    Rng pick(7);
    double h = 1e-5;
    for (auto& p : store.all()) {
        for (int probe = 0; probe < 2; ++probe) {
            int idx = pick.uniform_int(0, static_cast<int>(p->value.size()) - 1);
            double keep = p->value.data()[idx];
            p->value.data()[idx] = keep + h;
            double up = loss_value();
            p->value.data()[idx] = keep - h;
            double dn = loss_value();
            p->value.data()[idx] = keep;
            double fd = (up - dn) / (2 * h);
            double an = p->grad.data()[idx];
            double denom = std::max({std::abs(fd), std::abs(an), 1e-3});
            CHECK(std::abs(fd - an) / denom < 1e-4);
        }
    }
}

TEST_CASE("encoder is permutation-equivariant over tokens at initialization") {
    // with no positional terms, permuting token rows permutes outputs
    AttentionConfig cfg;
    cfg.layers = 2;
    cfg.heads = 2;
    cfg.width = 8;
    cfg.mlp_ratio = 2;
    ParamStore store;
    Rng rng(8);
    auto stack = make_stack(store, "enc", cfg, rng);

    Matrix x = random_matrix(rng, 5, 8);
    std::vector<int> perm = {3, 0, 4, 1, 2};
    Matrix xp(5, 8);
    for (int r = 0; r < 5; ++r) xp.row(r) = x.row(perm[r]);

    Tape tape;
    Matrix out = stack_forward(tape, tape.input(x), stack).val();
    Matrix outp = stack_forward(tape, tape.input(xp), stack).val();
    for (int r = 0; r < 5; ++r)
        CHECK((outp.row(r) - out.row(perm[r])).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("forward passes are deterministic given parameters and input") {
    AttentionConfig cfg;
    cfg.layers = 2;
    cfg.heads = 4;
    cfg.width = 8;
    ParamStore store;
    Rng rng(9);
    auto stack = make_stack(store, "enc", cfg, rng);
    Matrix x = random_matrix(rng, 4, 8);
    Tape t1, t2;
    Matrix a = stack_forward(t1, t1.input(x), stack).val();
    Matrix b = stack_forward(t2, t2.input(x), stack).val();
    CHECK((a - b).norm() == 0.0);
}
