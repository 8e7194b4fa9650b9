#include "doctest.h"

#include <cmath>

#include "eqprop/model.hpp"
#include "eqprop/ops.hpp"
#include "eqprop/rng.hpp"

using namespace eqprop;

namespace {

Tensor filled(const std::vector<int>& shape, std::initializer_list<double> vals) {
    Tensor t(shape);
    REQUIRE(t.numel() == vals.size());
    std::size_t i = 0;
    for (double v : vals) t.v[i++] = v;
    return t;
}

NetState random_interior_state(const Topology& topo, std::uint64_t seed, double lo = 0.1,
                               double hi = 0.9) {
    CounterRng rng(seed);
    NetState s = init_state(topo);
    for (auto& layer : s.s)
        for (auto& v : layer.v) v = rng.next_uniform(lo, hi);
    return s;
}

Tensor random_input(const Topology& topo, std::uint64_t seed) {
    CounterRng rng(seed);
    Tensor x({topo.in_channels, topo.in_h, topo.in_w});
    for (auto& v : x.v) v = rng.next_unit();
    return x;
}

// the conv+fc stack used by several checks below
Topology two_conv_net() {
    Topology t;
    t.in_channels = 2;
    t.in_h = 8;
    t.in_w = 8;
    t.conv = {{3, 3, 1, 2}, {4, 3, 1, 2}};
    t.fc = {2};
    t.scheme = Scheme::symmetric;
    t.head = Head::squared_error;
    t.validate();
    return t;
}

}  // namespace

TEST_CASE("topology shape arithmetic") {
    Topology t;
    t.in_channels = 3;
    t.in_h = 32;
    t.in_w = 32;
    t.conv = {{128, 3, 1, 2}, {256, 3, 1, 2}, {512, 3, 1, 2}, {512, 3, 0, 2}};
    t.fc = {10};
    t.head = Head::softmax_readout;
    t.validate();
    CHECK(t.n_tot() == 5);
    CHECK(t.n_state() == 4);
    CHECK(t.layer_shape(1) == std::vector<int>{128, 16, 16});
    CHECK(t.layer_shape(2) == std::vector<int>{256, 8, 8});
    CHECK(t.layer_shape(3) == std::vector<int>{512, 4, 4});
    CHECK(t.prepool_shape(4) == std::vector<int>{512, 2, 2});
    CHECK(t.layer_shape(4) == std::vector<int>{512, 1, 1});
    CHECK(t.flat_size(4) == 512);
    CHECK(t.classes() == 10);

    t.head = Head::squared_error;
    CHECK(t.n_state() == 5);
    CHECK(t.layer_shape(5) == std::vector<int>{10});
}

TEST_CASE("topology validation rejects bad descriptions") {
    Topology t;
    t.fc = {};
    CHECK_THROWS_AS(t.validate(), ModelError);

    Topology se_asym;
    se_asym.in_channels = 1;
    se_asym.fc = {4, 2};
    se_asym.head = Head::squared_error;
    se_asym.scheme = Scheme::asymmetric;
    CHECK_THROWS_AS(se_asym.validate(), ModelError);

    Topology no_state;
    no_state.fc = {10};
    no_state.head = Head::softmax_readout;
    CHECK_THROWS_AS(no_state.validate(), ModelError);

    Topology odd_pool;
    odd_pool.in_channels = 1;
    odd_pool.in_h = 5;
    odd_pool.in_w = 5;
    odd_pool.conv = {{2, 3, 1, 2}};  // 5x5 map, pool 2
    odd_pool.fc = {2};
    odd_pool.head = Head::squared_error;
    CHECK_THROWS_AS(odd_pool.validate(), ModelError);
}

TEST_CASE("init_params shapes, bounds, and stream separation") {
    Topology t;
    t.in_channels = 1;
    t.in_h = 4;
    t.in_w = 4;
    t.conv = {{2, 3, 1, 2}};
    t.fc = {5, 3};
    t.head = Head::softmax_readout;
    t.scheme = Scheme::asymmetric;
    Params p = init_params(t, 99);

    REQUIRE(p.w.size() == 2);  // conv stage + one fc state stage
    CHECK(p.w[0].shape == std::vector<int>{2, 1, 3, 3});
    CHECK(p.b[0].shape == std::vector<int>{2});
    CHECK(p.w[1].shape == std::vector<int>{5, 8});
    CHECK(p.b[1].shape == std::vector<int>{5});
    REQUIRE(p.wb.size() == 1);
    CHECK(p.wb[0].shape == p.w[1].shape);
    CHECK(p.w_out.shape == std::vector<int>{3, 5});

    auto check_bound = [](const Tensor& w, double bound) {
        for (double v : w.v) {
            CHECK(std::abs(v) <= bound);
        }
    };
    check_bound(p.w[0], 1.0 / 3.0);       // fan_in 9
    check_bound(p.b[0], 1.0 / 3.0);
    check_bound(p.w[1], 1.0 / std::sqrt(8.0));
    check_bound(p.w_out, 1.0 / std::sqrt(5.0));

    Params q = init_params(t, 99);
    CHECK(max_abs_diff(p, q) == 0.0);
    Params r = init_params(t, 100);
    CHECK(max_abs_diff(p, r) > 0.0);
    CHECK(p.wb[0].v != p.w[1].v);  // backward kernels draw their own stream

    // not all zero anywhere
    CHECK(p.w[0].max_abs() > 0.0);
    CHECK(p.b[1].max_abs() > 0.0);
}

TEST_CASE("phi on hand-computable nets") {
    Topology t;
    t.in_channels = 2;
    t.fc = {3};
    t.head = Head::squared_error;
    Params p = init_params(t, 1);
    p.w[0] = filled({3, 2}, {1, 1, 1, 1, 1, 1});
    p.b[0] = filled({3}, {0, 0, 0});
    Tensor x = filled({2, 1, 1}, {1, 1});
    NetState s = init_state(t);
    s.s[0] = filled({3}, {1, 1, 1});
    CHECK(phi(t, p, x, s) == doctest::Approx(6.0).epsilon(1e-15));

    // zero state kills every term, bias included
    NetState z = init_state(t);
    p.b[0] = filled({3}, {0.5, -0.5, 0.25});
    CHECK(phi(t, p, x, z) == 0.0);
}

TEST_CASE("step matches a hand computation, nudge reads the time-t state") {
    Topology t;
    t.in_channels = 2;
    t.fc = {2, 2};
    t.head = Head::squared_error;
    t.validate();
    Params p = init_params(t, 5);
    p.w[0] = filled({2, 2}, {0.2, -0.1, 0.3, 0.4});
    p.b[0] = filled({2}, {0.05, -0.05});
    p.w[1] = filled({2, 2}, {0.5, -0.2, 0.1, 0.6});
    p.b[1] = filled({2}, {0.0, 0.1});
    Tensor x = filled({2, 1, 1}, {1.0, 0.5});
    NetState s = init_state(t);
    s.s[0] = filled({2}, {0.4, 0.6});
    s.s[1] = filled({2}, {0.3, 0.7});

    StepOut free = step_sym_sq(t, p, x, s, 0.0, nullptr);
    // pre1 = w1 x + b1 + w2^T s2 = [0.2,0.45] + [0.22,0.36] = [0.42,0.81]
    CHECK(free.state.s[0].v[0] == doctest::Approx(0.21).epsilon(1e-15));
    CHECK(free.state.s[0].v[1] == doctest::Approx(0.405).epsilon(1e-15));
    // pre2 = w2 s1 + b2 = [0.08, 0.5]
    CHECK(free.state.s[1].v[0] == doctest::Approx(0.04).epsilon(1e-15));
    CHECK(free.state.s[1].v[1] == doctest::Approx(0.25).epsilon(1e-15));
    CHECK(free.residual == doctest::Approx(0.45).epsilon(1e-12));

    Tensor y = filled({2}, {1.0, 0.0});
    StepOut nudged = step_sym_sq(t, p, x, s, 0.5, &y);
    // top += beta*(y - s2_at_time_t), i.e. 0.5*(1-0.3) and 0.5*(0-0.7)
    CHECK(nudged.state.s[1].v[0] == doctest::Approx(0.39).epsilon(1e-15));
    CHECK(nudged.state.s[1].v[1] == doctest::Approx(-0.10).epsilon(1e-13));
    CHECK(nudged.state.s[0].v[0] == doctest::Approx(0.21).epsilon(1e-15));

    CHECK_THROWS_AS(step_sym_sq(t, p, x, s, 0.5, nullptr), ModelError);
}

TEST_CASE("pre-activations are the state-gradient of phi") {
    Topology t = two_conv_net();
    Params p = init_params(t, 300);
    Tensor x = random_input(t, 301);
    NetState s = random_interior_state(t, 302);

    DriveOut d = drive(t, p, x, s);
    const double eps = 1e-6;
    for (int n = 1; n <= t.n_state(); ++n) {
        Tensor& layer = s.s[static_cast<std::size_t>(n - 1)];
        for (std::size_t i = 0; i < layer.numel(); i += 7) {  // sample entries
            const double keep = layer.v[i];
            layer.v[i] = keep + eps;
            const double up = phi(t, p, x, s);
            layer.v[i] = keep - eps;
            const double dn = phi(t, p, x, s);
            layer.v[i] = keep;
            const double fd = (up - dn) / (2 * eps);
            CHECK(d.pre[static_cast<std::size_t>(n - 1)].v[i] ==
                  doctest::Approx(fd).epsilon(1e-6));
        }
    }
}

TEST_CASE("grad_phi agrees with finite differences of phi") {
    Topology t = two_conv_net();
    Params p = init_params(t, 310);
    Tensor x = random_input(t, 311);
    NetState s = random_interior_state(t, 312);

    ParamGrads g = grad_phi(t, p, x, s);
    const double eps = 1e-6;
    auto fd_check = [&](Tensor& pt, const Tensor& gt) {
        for (std::size_t i = 0; i < pt.numel(); i += 5) {
            const double keep = pt.v[i];
            pt.v[i] = keep + eps;
            const double up = phi(t, p, x, s);
            pt.v[i] = keep - eps;
            const double dn = phi(t, p, x, s);
            pt.v[i] = keep;
            CHECK(gt.v[i] == doctest::Approx((up - dn) / (2 * eps)).epsilon(1e-6));
        }
    };
    for (std::size_t i = 0; i < p.w.size(); ++i) {
        fd_check(p.w[i], g.w[i]);
        fd_check(p.b[i], g.b[i]);
    }
}

TEST_CASE("grad_phi_tilde: forward/backward stage gradients against per-stage finite differences") {
    Topology t;
    t.in_channels = 2;
    t.in_h = 8;
    t.in_w = 8;
    t.conv = {{3, 3, 1, 2}, {4, 3, 1, 2}};
    t.fc = {5, 3};
    t.scheme = Scheme::asymmetric;
    t.head = Head::softmax_readout;
    t.validate();
    Params p = init_params(t, 320);
    Tensor x = random_input(t, 321);
    NetState s = random_interior_state(t, 322);

    ParamGrads g = grad_phi_tilde(t, p, x, s);
    const double eps = 1e-6;

    // forward kernel of stage n only enters that stage's bottom-up term
    auto bottom_up_term = [&](int n) {
        const std::size_t i = static_cast<std::size_t>(n - 1);
        const Tensor& below = (n == 1) ? x : s.s[i - 1];
        const Tensor& here = s.s[i];
        if (t.is_conv_stage(n)) {
            const ConvSpec& c = t.conv[i];
            return gdot(here, maxpool(conv2d(p.w[i], below, p.b[i], c.pad), c.pool).first);
        }
        Tensor z = matvec_flat(p.w[i], below);
        z += p.b[i];
        return gdot(here, z);
    };
    // backward kernel of stage m drives the bias-free top-down term
    auto top_down_term = [&](int m) {
        const std::size_t i = static_cast<std::size_t>(m - 1);
        const Tensor& below = s.s[i - 1];
        const Tensor& here = s.s[i];
        if (t.is_conv_stage(m)) {
            const ConvSpec& c = t.conv[i];
            return gdot(here,
                        maxpool(conv2d(p.wb[static_cast<std::size_t>(m - 2)], below, Tensor(), c.pad), c.pool).first);
        }
        return gdot(here, matvec_flat(p.wb[static_cast<std::size_t>(m - 2)], below));
    };

    for (int n = 1; n <= t.n_state(); ++n) {
        const std::size_t i = static_cast<std::size_t>(n - 1);
        for (std::size_t k = 0; k < p.w[i].numel(); k += 11) {
            const double keep = p.w[i].v[k];
            p.w[i].v[k] = keep + eps;
            const double up = bottom_up_term(n);
            p.w[i].v[k] = keep - eps;
            const double dn = bottom_up_term(n);
            p.w[i].v[k] = keep;
            CHECK(g.w[i].v[k] == doctest::Approx((up - dn) / (2 * eps)).epsilon(1e-6));
        }
    }
    for (int m = 2; m <= t.n_state(); ++m) {
        const std::size_t j = static_cast<std::size_t>(m - 2);
        for (std::size_t k = 0; k < p.wb[j].numel(); k += 11) {
            const double keep = p.wb[j].v[k];
            p.wb[j].v[k] = keep + eps;
            const double up = top_down_term(m);
            p.wb[j].v[k] = keep - eps;
            const double dn = top_down_term(m);
            p.wb[j].v[k] = keep;
            CHECK(g.wb[j].v[k] == doctest::Approx((up - dn) / (2 * eps)).epsilon(1e-6));
        }
    }

    // fc stages: backward gradient recomputes to the forward one bit for bit
    CHECK(g.wb[1].v == g.w[2].v);
}

TEST_CASE("untied kernels with copied values reproduce the tied dynamics bit for bit") {
    Topology sym;
    sym.in_channels = 1;
    sym.in_h = 8;
    sym.in_w = 8;
    sym.conv = {{2, 3, 1, 2}, {3, 3, 1, 2}};
    sym.fc = {10};
    sym.head = Head::softmax_readout;
    sym.scheme = Scheme::symmetric;
    sym.validate();
    Topology asym = sym;
    asym.scheme = Scheme::asymmetric;

    Params ps = init_params(sym, 42);
    Params pa = init_params(asym, 42);
    // the forward streams coincide by construction; overwrite the backward set
    for (std::size_t i = 0; i < ps.w.size(); ++i) {
        REQUIRE(ps.w[i].v == pa.w[i].v);
        REQUIRE(ps.b[i].v == pa.b[i].v);
    }
    pa.wb[0] = ps.w[1];

    Tensor x = random_input(sym, 43);
    NetState s0s = init_state(sym), s0a = init_state(asym);
    NetState cs = s0s, ca = s0a;
    for (int t = 0; t < 12; ++t) {
        cs = step(sym, ps, x, cs, 0.0, nullptr).state;
        ca = step(asym, pa, x, ca, 0.0, nullptr).state;
    }
    CHECK(state_max_abs_diff(cs, ca) == 0.0);
}

TEST_CASE("dropout mask semantics") {
    Topology t;
    t.in_channels = 1;
    t.fc = {6, 3};
    t.head = Head::softmax_readout;
    t.validate();
    CounterRng rng(derive_seed({7, 7}));
    DropoutMask m = sample_dropout_mask(t, 1, 0.5, rng);
    CHECK(m.keep.numel() == 6);
    for (double k : m.keep.v) CHECK((k == 0.0 || k == 1.0));

    Tensor v = filled({6}, {1, 2, 3, 4, 5, 6});
    Tensor masked = m.apply(v);
    for (std::size_t i = 0; i < 6; ++i)
        CHECK(masked.v[i] == v.v[i] * m.keep.v[i] * 2.0);  // 1/(1-0.5)

    CHECK_THROWS_AS(sample_dropout_mask(t, 0, 0.5, rng), ModelError);
    CHECK_THROWS_AS(sample_dropout_mask(t, 2, 0.5, rng), ModelError);  // softmax head: one state layer
    CHECK_THROWS_AS(sample_dropout_mask(t, 1, 1.0, rng), ModelError);
    CHECK_THROWS_AS(sample_dropout_mask(t, 1, -0.1, rng), ModelError);

    Topology se = t;
    se.head = Head::squared_error;  // two state layers now; the output one is off-limits
    se.validate();
    CHECK_THROWS_AS(sample_dropout_mask(se, 2, 0.5, rng), ModelError);
    DropoutMask ok = sample_dropout_mask(se, 1, 0.5, rng);
    CHECK(ok.layer == 1);

    // expected masked activity matches the unmasked activity
    Tensor ones = filled({6}, {1, 1, 1, 1, 1, 1});
    double acc = 0.0;
    const int reps = 4000;
    CounterRng mc(derive_seed({7, 8}));
    for (int i = 0; i < reps; ++i) {
        DropoutMask mm = sample_dropout_mask(t, 1, 0.3, mc);
        Tensor a = mm.apply(ones);
        for (double av : a.v) acc += av;
    }
    CHECK(acc / (reps * 6.0) == doctest::Approx(1.0).epsilon(0.02));
}

TEST_CASE("a p=0 mask is a bitwise no-op on the dynamics") {
    Topology t = two_conv_net();
    Params p = init_params(t, 500);
    Tensor x = random_input(t, 501);
    NetState s = random_interior_state(t, 502);
    CounterRng rng(derive_seed({9}));
    DropoutMask m = sample_dropout_mask(t, 1, 0.0, rng);
    for (double k : m.keep.v) REQUIRE(k == 1.0);
    StepOut with = step(t, p, x, s, 0.0, nullptr, &m);
    StepOut without = step(t, p, x, s, 0.0, nullptr);
    CHECK(state_max_abs_diff(with.state, without.state) == 0.0);
    CHECK(phi(t, p, x, s, &m) == phi(t, p, x, s));
}

TEST_CASE("loss, readout, and the readout weight rule") {
    Topology t;
    t.in_channels = 1;
    t.fc = {2, 2};
    t.head = Head::softmax_readout;
    t.validate();
    Params p = init_params(t, 50);
    p.w_out = filled({2, 2}, {1.0, 0.0, 0.0, 1.0});
    NetState s = init_state(t);
    s.s[0] = filled({2}, {0.8, 0.2});
    Tensor y = one_hot(2, 0);

    // logits are the state itself; cross entropy by hand
    const double z0 = 0.8, z1 = 0.2;
    const double lse = std::log(std::exp(z0) + std::exp(z1));
    CHECK(loss(t, p, s, y) == doctest::Approx(lse - z0).epsilon(1e-14));

    Tensor yh = readout(t, p, s);
    const double p0 = std::exp(z0) / (std::exp(z0) + std::exp(z1));
    CHECK(yh.v[0] == doctest::Approx(p0).epsilon(1e-14));

    Tensor g = readout_grad(t, p, s, y);
    CHECK(g.at(0, 0) == doctest::Approx((1 - p0) * 0.8).epsilon(1e-12));
    CHECK(g.at(1, 1) == doctest::Approx((0 - (1 - p0)) * 0.2).epsilon(1e-12));

    // squared error head
    Topology se;
    se.in_channels = 1;
    se.fc = {2};
    se.head = Head::squared_error;
    se.validate();
    Params pse = init_params(se, 51);
    NetState ss = init_state(se);
    ss.s[0] = filled({2}, {0.25, 0.75});
    Tensor ty = filled({2}, {1.0, 0.0});
    CHECK(loss(se, pse, ss, ty) == doctest::Approx(0.5 * (0.5625 + 0.5625)).epsilon(1e-14));

    CHECK_THROWS_AS(one_hot(2, 2), ModelError);
    CHECK_THROWS_AS(one_hot(2, -1), ModelError);
    CHECK(one_hot(10, 3).v[3] == 1.0);
}

TEST_CASE("big logits stay finite through loss and readout") {
    Topology t;
    t.in_channels = 1;
    t.fc = {2, 2};
    t.head = Head::softmax_readout;
    Params p = init_params(t, 60);
    p.w_out = filled({2, 2}, {1000.0, 0.0, 0.0, 1000.0});
    NetState s = init_state(t);
    s.s[0] = filled({2}, {1.0, 0.0});
    Tensor y = one_hot(2, 1);
    CHECK(std::isfinite(loss(t, p, s, y)));
    CHECK(readout(t, p, s).all_finite());
}
