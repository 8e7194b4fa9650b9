#include "eqprop/model.hpp"

#include <algorithm>
#include <cmath>

namespace eqprop {

namespace {

void need(bool ok, const std::string& msg) {
    if (!ok) throw ModelError(msg);
}

// Pointer table over (input, state layers) with the dropout mask applied to
// its layer; everything else aliases the originals.
struct MaskedStates {
    std::vector<const Tensor*> at;  // index 0 = input, n = layer n
    Tensor masked;

    MaskedStates(const Tensor& x, const NetState& s, const DropoutMask* drop) {
        at.resize(s.s.size() + 1);
        at[0] = &x;
        for (std::size_t n = 0; n < s.s.size(); ++n) at[n + 1] = &s.s[n];
        if (drop) {
            need(drop->layer >= 1 && drop->layer <= static_cast<int>(s.s.size()),
                 "dropout layer " + std::to_string(drop->layer) + " out of range");
            masked = drop->apply(s.s[static_cast<std::size_t>(drop->layer) - 1]);
            at[static_cast<std::size_t>(drop->layer)] = &masked;
        }
    }
};

void check_state(const Topology& topo, const NetState& s, const char* who) {
    need(static_cast<int>(s.s.size()) == topo.n_state(),
         std::string(who) + ": state has " + std::to_string(s.s.size()) + " layers, topology " +
             std::to_string(topo.n_state()));
}

}  // namespace

std::vector<int> Topology::layer_shape(int n) const {
    if (n == 0) return {in_channels, in_h, in_w};
    if (n <= n_conv()) {
        auto pre = prepool_shape(n);
        return {pre[0], pre[1] / conv[n - 1].pool, pre[2] / conv[n - 1].pool};
    }
    return {fc[static_cast<std::size_t>(n - n_conv() - 1)]};
}

std::vector<int> Topology::prepool_shape(int n) const {
    auto below = layer_shape(n - 1);
    const ConvSpec& c = conv[static_cast<std::size_t>(n - 1)];
    return {c.channels, below[1] + 2 * c.pad - c.kernel + 1,
            below[2] + 2 * c.pad - c.kernel + 1};
}

int Topology::flat_size(int n) const {
    auto s = layer_shape(n);
    int f = 1;
    for (int d : s) f *= d;
    return f;
}

void Topology::validate() const {
    need(in_channels >= 1 && in_h >= 1 && in_w >= 1,
         "topology: input " + std::to_string(in_channels) + "x" + std::to_string(in_h) + "x" +
             std::to_string(in_w));
    need(!fc.empty(), "topology: fc stage list is empty (the class count lives there)");
    need(n_state() >= 1, "topology: no state layers (softmax head needs a layer to read)");
    if (scheme == Scheme::asymmetric)
        need(head == Head::softmax_readout,
             "topology: asymmetric scheme is only defined with the softmax readout head");
    for (int n = 1; n <= n_conv(); ++n) {
        const ConvSpec& c = conv[static_cast<std::size_t>(n - 1)];
        need(c.channels >= 1 && c.kernel >= 1 && c.pad >= 0 && c.pool >= 1,
             "topology: conv stage " + std::to_string(n) + " has channels " +
                 std::to_string(c.channels) + ", kernel " + std::to_string(c.kernel) +
                 ", pad " + std::to_string(c.pad) + ", pool " + std::to_string(c.pool));
        auto pre = prepool_shape(n);
        need(pre[1] >= 1 && pre[2] >= 1, "topology: conv stage " + std::to_string(n) +
                                             " produces empty map " + std::to_string(pre[1]) +
                                             "x" + std::to_string(pre[2]));
        need(pre[1] % c.pool == 0 && pre[2] % c.pool == 0,
             "topology: conv stage " + std::to_string(n) + " map " + std::to_string(pre[1]) +
                 "x" + std::to_string(pre[2]) + " not divisible by pool " +
                 std::to_string(c.pool));
    }
    for (std::size_t i = 0; i < fc.size(); ++i)
        need(fc[i] >= 1, "topology: fc stage " + std::to_string(i) + " has size " +
                             std::to_string(fc[i]));
}

Params zero_grads(const Topology& topo) {
    Params p;
    const int S = topo.n_state();
    p.w.reserve(static_cast<std::size_t>(S));
    p.b.reserve(static_cast<std::size_t>(S));
    for (int n = 1; n <= S; ++n) {
        if (topo.is_conv_stage(n)) {
            const ConvSpec& c = topo.conv[static_cast<std::size_t>(n - 1)];
            const int cin = topo.layer_shape(n - 1)[0];
            p.w.emplace_back(std::vector<int>{c.channels, cin, c.kernel, c.kernel});
            p.b.emplace_back(std::vector<int>{c.channels});
        } else {
            p.w.emplace_back(std::vector<int>{topo.layer_shape(n)[0], topo.flat_size(n - 1)});
            p.b.emplace_back(std::vector<int>{topo.layer_shape(n)[0]});
        }
    }
    if (topo.scheme == Scheme::asymmetric)
        for (int n = 2; n <= S; ++n) p.wb.push_back(Tensor(p.w[static_cast<std::size_t>(n - 1)].shape));
    if (topo.head == Head::softmax_readout)
        p.w_out = Tensor({topo.classes(), topo.flat_size(S)});
    return p;
}

namespace {

void fill_kaiming(Tensor& t, int fan_in, std::uint64_t stream) {
    CounterRng rng(stream);
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (double& x : t.v) x = rng.next_uniform(-bound, bound);
}

int fan_in_of(const Tensor& w) {
    if (w.rank() == 4) return w.dim(1) * w.dim(2) * w.dim(3);
    return w.dim(1);
}

}  // namespace

Params init_params(const Topology& topo, std::uint64_t seed) {
    topo.validate();
    Params p = zero_grads(topo);
    for (std::size_t i = 0; i < p.w.size(); ++i) {
        const int fan = fan_in_of(p.w[i]);
        fill_kaiming(p.w[i], fan, derive_seed({seed, 2 * i}));
        fill_kaiming(p.b[i], fan, derive_seed({seed, 2 * i + 1}));
    }
    for (std::size_t j = 0; j < p.wb.size(); ++j)
        fill_kaiming(p.wb[j], fan_in_of(p.wb[j]), derive_seed({seed, 1000 + j}));
    if (p.w_out.numel()) fill_kaiming(p.w_out, p.w_out.dim(1), derive_seed({seed, 2000}));
    return p;
}

namespace {

template <typename F>
void for_each_pair(Params& a, const Params& b, F f) {
    if (a.w.size() != b.w.size() || a.b.size() != b.b.size() || a.wb.size() != b.wb.size() ||
        a.w_out.numel() != b.w_out.numel())
        throw ModelError("parameter structures disagree");
    for (std::size_t i = 0; i < a.w.size(); ++i) f(a.w[i], b.w[i]);
    for (std::size_t i = 0; i < a.b.size(); ++i) f(a.b[i], b.b[i]);
    for (std::size_t i = 0; i < a.wb.size(); ++i) f(a.wb[i], b.wb[i]);
    if (a.w_out.numel()) f(a.w_out, b.w_out);
}

template <typename F>
void for_each_pair_c(const Params& a, const Params& b, F f) {
    for_each_pair(const_cast<Params&>(a), b,
                  [&](Tensor& ta, const Tensor& tb) { f(static_cast<const Tensor&>(ta), tb); });
}

}  // namespace

void axpy(Params& dst, double a, const Params& src) {
    for_each_pair(dst, src, [a](Tensor& d, const Tensor& s) {
        d.check_same(s, "axpy");
        for (std::size_t i = 0; i < d.numel(); ++i) d.v[i] += a * s.v[i];
    });
}

void scale(Params& p, double a) {
    for (Tensor& t : p.w) t *= a;
    for (Tensor& t : p.b) t *= a;
    for (Tensor& t : p.wb) t *= a;
    p.w_out *= a;
}

double dot(const Params& a, const Params& b) {
    double acc = 0.0;
    for_each_pair_c(a, b, [&](const Tensor& ta, const Tensor& tb) { acc += gdot(ta, tb); });
    return acc;
}

double norm(const Params& p) { return std::sqrt(dot(p, p)); }

std::size_t param_count(const Params& p) {
    std::size_t n = p.w_out.numel();
    for (const Tensor& t : p.w) n += t.numel();
    for (const Tensor& t : p.b) n += t.numel();
    for (const Tensor& t : p.wb) n += t.numel();
    return n;
}

double max_abs_diff(const Params& a, const Params& b) {
    double m = 0.0;
    for_each_pair_c(a, b, [&](const Tensor& ta, const Tensor& tb) {
        ta.check_same(tb, "max_abs_diff");
        for (std::size_t i = 0; i < ta.numel(); ++i)
            m = std::max(m, std::fabs(ta.v[i] - tb.v[i]));
    });
    return m;
}

NetState init_state(const Topology& topo) {
    NetState st;
    st.s.reserve(static_cast<std::size_t>(topo.n_state()));
    for (int n = 1; n <= topo.n_state(); ++n) st.s.emplace_back(topo.layer_shape(n));
    return st;
}

double state_max_abs_diff(const NetState& a, const NetState& b) {
    if (a.s.size() != b.s.size()) throw ModelError("states disagree on layer count");
    double m = 0.0;
    for (std::size_t n = 0; n < a.s.size(); ++n) {
        a.s[n].check_same(b.s[n], "state_max_abs_diff");
        for (std::size_t i = 0; i < a.s[n].numel(); ++i)
            m = std::max(m, std::fabs(a.s[n].v[i] - b.s[n].v[i]));
    }
    return m;
}

Tensor DropoutMask::apply(const Tensor& s) const {
    keep.check_same(s, "dropout mask");
    Tensor out = s;
    const double inv = 1.0 / (1.0 - p);
    for (std::size_t i = 0; i < out.numel(); ++i) out.v[i] *= keep.v[i] * inv;
    return out;
}

DropoutMask sample_dropout_mask(const Topology& topo, int layer, double p, CounterRng& rng) {
    need(p >= 0.0 && p < 1.0, "dropout probability " + std::to_string(p));
    need(layer >= 1 && layer <= topo.n_state(),
         "dropout layer " + std::to_string(layer) + " out of range 1.." +
             std::to_string(topo.n_state()));
    need(!(topo.head == Head::squared_error && layer == topo.n_state()),
         "dropout on the squared-error output layer is not supported");
    DropoutMask m;
    m.layer = layer;
    m.p = p;
    m.keep = Tensor(topo.layer_shape(layer));
    for (double& k : m.keep.v) k = rng.next_unit() < p ? 0.0 : 1.0;
    return m;
}

DriveOut drive(const Topology& topo, const Params& p, const Tensor& x, const NetState& s,
               const DropoutMask* drop) {
    const int S = topo.n_state(), nc = topo.n_conv();
    check_state(topo, s, "drive");
    const bool asym = topo.scheme == Scheme::asymmetric;
    MaskedStates se(x, s, drop);

    // Bottom-up drive and this step's forward pool argmaxes, all from time-t
    // states.
    DriveOut out;
    out.pre.resize(static_cast<std::size_t>(S));
    out.ind_f.resize(static_cast<std::size_t>(nc));
    for (int n = 1; n <= S; ++n) {
        if (topo.is_conv_stage(n)) {
            const ConvSpec& c = topo.conv[static_cast<std::size_t>(n - 1)];
            Tensor a = conv2d(p.w[static_cast<std::size_t>(n - 1)], *se.at[static_cast<std::size_t>(n - 1)],
                              p.b[static_cast<std::size_t>(n - 1)], c.pad);
            auto pooled = maxpool(a, c.pool);
            out.pre[static_cast<std::size_t>(n - 1)] = std::move(pooled.first);
            out.ind_f[static_cast<std::size_t>(n - 1)] = std::move(pooled.second);
        } else {
            Tensor z = matvec_flat(p.w[static_cast<std::size_t>(n - 1)], *se.at[static_cast<std::size_t>(n - 1)]);
            z += p.b[static_cast<std::size_t>(n - 1)];
            out.pre[static_cast<std::size_t>(n - 1)] = std::move(z);
        }
    }

    // Top-down drive into layers 1..S-1, also from time-t states. The
    // asymmetric scheme swaps in the backward kernels, whose conv top-down
    // replays the argmaxes of their own pre-activations.
    for (int n = 1; n < S; ++n) {
        const int m = n + 1;
        const Tensor& wm = asym ? p.wb[static_cast<std::size_t>(m - 2)] : p.w[static_cast<std::size_t>(m - 1)];
        Tensor td;
        if (topo.is_conv_stage(m)) {
            const ConvSpec& c = topo.conv[static_cast<std::size_t>(m - 1)];
            const PoolIndices* ind = &out.ind_f[static_cast<std::size_t>(m - 1)];
            PoolIndices ind_b;
            if (asym) {
                ind_b = maxpool(conv2d(wm, *se.at[static_cast<std::size_t>(n)], Tensor(), c.pad), c.pool).second;
                ind = &ind_b;
            }
            Tensor u = unpool(*se.at[static_cast<std::size_t>(m)], *ind);
            td = conv2d_transpose(wm, u, c.pad);
        } else {
            Tensor v = matTvec_flat(wm, *se.at[static_cast<std::size_t>(m)]);
            td = n == nc ? v.reshaped(topo.layer_shape(n)) : std::move(v);
        }
        out.pre[static_cast<std::size_t>(n - 1)] += td;
    }

    if (drop) {
        Tensor& pre = out.pre[static_cast<std::size_t>(drop->layer - 1)];
        const double inv = 1.0 / (1.0 - drop->p);
        for (std::size_t i = 0; i < pre.numel(); ++i) pre.v[i] *= drop->keep.v[i] * inv;
    }
    return out;
}

StepOut step(const Topology& topo, const Params& p, const Tensor& x, const NetState& s,
             double beta, const Tensor* y, const DropoutMask* drop) {
    const int S = topo.n_state();
    check_state(topo, s, "step");
    if (beta != 0.0) {
        need(y != nullptr, "step: nonzero beta requires a target");
        need(static_cast<int>(y->numel()) == topo.classes(),
             "step: target has " + std::to_string(y->numel()) + " entries, topology expects " +
                 std::to_string(topo.classes()));
    }

    DriveOut d = drive(topo, p, x, s, drop);
    StepOut out;
    out.state.s.resize(static_cast<std::size_t>(S));
    out.state.pool_ind = std::move(d.ind_f);
    for (int n = 1; n <= S; ++n)
        out.state.s[static_cast<std::size_t>(n - 1)] = hard_sigmoid(d.pre[static_cast<std::size_t>(n - 1)]);

    if (topo.head == Head::squared_error) {
        Tensor& top = out.state.s[static_cast<std::size_t>(S - 1)];
        if (beta != 0.0) {
            const Tensor& cur = s.s[static_cast<std::size_t>(S - 1)];
            for (std::size_t i = 0; i < top.numel(); ++i)
                top.v[i] += beta * (y->v[i] - cur.v[i]);
        }
        out.yhat = top;
    } else {
        out.yhat = readout(topo, p, s, drop);
        if (beta != 0.0) {
            Tensor delta({topo.classes()});
            for (int c = 0; c < topo.classes(); ++c) delta[c] = y->v[static_cast<std::size_t>(c)] - out.yhat[static_cast<std::size_t>(c)];
            Tensor nudge = matTvec(p.w_out, delta);
            if (drop && drop->layer == S) {
                const double inv = 1.0 / (1.0 - drop->p);
                for (std::size_t i = 0; i < nudge.numel(); ++i) nudge.v[i] *= drop->keep.v[i] * inv;
            }
            Tensor& top = out.state.s[static_cast<std::size_t>(S - 1)];
            for (std::size_t i = 0; i < top.numel(); ++i) top.v[i] += beta * nudge.v[i];
        }
    }

    out.residual = state_max_abs_diff(out.state, s);
    return out;
}

StepOut step_sym_sq(const Topology& topo, const Params& p, const Tensor& x, const NetState& s,
                    double beta, const Tensor* y) {
    need(topo.scheme == Scheme::symmetric && topo.head == Head::squared_error,
         "step_sym_sq: topology is not symmetric/squared-error");
    return step(topo, p, x, s, beta, y);
}

StepOut step_sym_ce(const Topology& topo, const Params& p, const Tensor& x, const NetState& s,
                    double beta, const Tensor* y) {
    need(topo.scheme == Scheme::symmetric && topo.head == Head::softmax_readout,
         "step_sym_ce: topology is not symmetric/softmax");
    return step(topo, p, x, s, beta, y);
}

StepOut step_asym_ce(const Topology& topo, const Params& p, const Tensor& x, const NetState& s,
                     double beta, const Tensor* y) {
    need(topo.scheme == Scheme::asymmetric && topo.head == Head::softmax_readout,
         "step_asym_ce: topology is not asymmetric/softmax");
    return step(topo, p, x, s, beta, y);
}

double phi(const Topology& topo, const Params& p, const Tensor& x, const NetState& s,
           const DropoutMask* drop) {
    need(topo.scheme == Scheme::symmetric, "phi: undefined for the asymmetric scheme");
    check_state(topo, s, "phi");
    MaskedStates se(x, s, drop);
    double acc = 0.0;
    for (int n = 1; n <= topo.n_state(); ++n) {
        const std::size_t i = static_cast<std::size_t>(n - 1);
        if (topo.is_conv_stage(n)) {
            const ConvSpec& c = topo.conv[i];
            Tensor pooled = maxpool(conv2d(p.w[i], *se.at[i], p.b[i], c.pad), c.pool).first;
            acc += gdot(*se.at[static_cast<std::size_t>(n)], pooled);
        } else {
            Tensor z = matvec_flat(p.w[i], *se.at[i]);
            z += p.b[i];
            acc += gdot(*se.at[static_cast<std::size_t>(n)], z);
        }
    }
    return acc;
}

namespace {

// Shared body of grad_phi / grad_phi_tilde: per-stage gradients at a given
// state, pool argmaxes re-evaluated there.
void stage_grads(const Topology& topo, const Params& p, const MaskedStates& se,
                 ParamGrads& g) {
    for (int n = 1; n <= topo.n_state(); ++n) {
        const std::size_t i = static_cast<std::size_t>(n - 1);
        const Tensor& below = *se.at[i];
        const Tensor& here = *se.at[static_cast<std::size_t>(n)];
        if (topo.is_conv_stage(n)) {
            const ConvSpec& c = topo.conv[i];
            PoolIndices ind = maxpool(conv2d(p.w[i], below, p.b[i], c.pad), c.pool).second;
            Tensor u = unpool(here, ind);
            g.w[i] = conv2d_weight_grad(below, u, c.kernel, c.pad);
            g.b[i] = conv2d_bias_grad(u);
        } else {
            g.w[i] = outer_flat(here, below);
            g.b[i] = here;
        }
    }
}

}  // namespace

ParamGrads grad_phi(const Topology& topo, const Params& p, const Tensor& x, const NetState& s,
                    const DropoutMask* drop) {
    need(topo.scheme == Scheme::symmetric, "grad_phi: undefined for the asymmetric scheme");
    check_state(topo, s, "grad_phi");
    MaskedStates se(x, s, drop);
    ParamGrads g = zero_grads(topo);
    stage_grads(topo, p, se, g);
    return g;
}

ParamGrads grad_phi_tilde(const Topology& topo, const Params& p, const Tensor& x,
                          const NetState& s, const DropoutMask* drop) {
    need(topo.scheme == Scheme::asymmetric,
         "grad_phi_tilde: defined for the asymmetric scheme only");
    check_state(topo, s, "grad_phi_tilde");
    MaskedStates se(x, s, drop);
    ParamGrads g = zero_grads(topo);
    stage_grads(topo, p, se, g);
    for (int m = 2; m <= topo.n_state(); ++m) {
        const std::size_t i = static_cast<std::size_t>(m - 1);
        const Tensor& below = *se.at[i];
        const Tensor& here = *se.at[static_cast<std::size_t>(m)];
        if (topo.is_conv_stage(m)) {
            const ConvSpec& c = topo.conv[i];
            PoolIndices ind =
                maxpool(conv2d(p.wb[static_cast<std::size_t>(m - 2)], below, Tensor(), c.pad), c.pool).second;
            Tensor u = unpool(here, ind);
            g.wb[static_cast<std::size_t>(m - 2)] = conv2d_weight_grad(below, u, c.kernel, c.pad);
        } else {
            // same expression as the forward gradient; recomputed rather
            // than copied, and bit-identical to it by determinism
            g.wb[static_cast<std::size_t>(m - 2)] = outer_flat(here, below);
        }
    }
    return g;
}

double loss(const Topology& topo, const Params& p, const NetState& s, const Tensor& y,
            const DropoutMask* drop) {
    check_state(topo, s, "loss");
    need(static_cast<int>(y.numel()) == topo.classes(),
         "loss: target has " + std::to_string(y.numel()) + " entries, topology expects " +
             std::to_string(topo.classes()));
    const std::size_t top = static_cast<std::size_t>(topo.n_state() - 1);
    if (topo.head == Head::squared_error) {
        double acc = 0.0;
        for (std::size_t i = 0; i < y.numel(); ++i) {
            const double d = s.s[top].v[i] - y.v[i];
            acc += 0.5 * d * d;
        }
        return acc;
    }
    Tensor dummy_x({1});  // softmax path reads only the top layer
    MaskedStates se(dummy_x, s, drop);
    Tensor z = matvec_flat(p.w_out, *se.at[top + 1]);
    double m = z[0];
    for (double v : z.v) m = std::max(m, v);
    double lse = 0.0, ysum = 0.0, yz = 0.0;
    for (std::size_t c = 0; c < z.numel(); ++c) {
        lse += std::exp(z.v[c] - m);
        ysum += y.v[c];
        yz += y.v[c] * z.v[c];
    }
    return ysum * (m + std::log(lse)) - yz;
}

Tensor readout(const Topology& topo, const Params& p, const NetState& s,
               const DropoutMask* drop) {
    check_state(topo, s, "readout");
    const std::size_t top = static_cast<std::size_t>(topo.n_state() - 1);
    if (topo.head == Head::squared_error) return s.s[top];
    Tensor dummy_x({1});
    MaskedStates se(dummy_x, s, drop);
    return softmax(matvec_flat(p.w_out, *se.at[top + 1]));
}

Tensor readout_grad(const Topology& topo, const Params& p, const NetState& s, const Tensor& y,
                    const DropoutMask* drop) {
    need(topo.head == Head::softmax_readout, "readout_grad: softmax head only");
    check_state(topo, s, "readout_grad");
    const std::size_t top = static_cast<std::size_t>(topo.n_state() - 1);
    Tensor dummy_x({1});
    MaskedStates se(dummy_x, s, drop);
    Tensor yhat = softmax(matvec_flat(p.w_out, *se.at[top + 1]));
    Tensor delta({topo.classes()});
    for (std::size_t c = 0; c < delta.numel(); ++c) delta.v[c] = y.v[c] - yhat.v[c];
    const Tensor& sflat = *se.at[top + 1];
    Tensor g({topo.classes(), static_cast<int>(sflat.numel())});
    for (std::size_t r = 0; r < delta.numel(); ++r)
        for (std::size_t c = 0; c < sflat.numel(); ++c)
            g.v[r * sflat.numel() + c] = delta.v[r] * sflat.v[c];
    return g;
}

Tensor one_hot(int classes, int label) {
    if (label < 0 || label >= classes)
        throw ModelError("one_hot: label " + std::to_string(label) + " outside 0.." +
                         std::to_string(classes - 1));
    Tensor y({classes});
    y[label] = 1.0;
    return y;
}

}  // namespace eqprop
