#include "eqprop/oracle.hpp"

#include <cmath>
#include <string>

#include "eqprop/ops.hpp"
#include "eqprop/phases.hpp"

namespace eqprop {

namespace {

constexpr double kSettleTol = 1e-8;

}  // namespace

const ParamGrads& BpttGrad::at(int t) const {
    if (t < 0 || t > depth())
        throw OracleError("truncation depth " + std::to_string(t) + " outside 0.." +
                          std::to_string(depth()));
    return prefix[static_cast<std::size_t>(t)];
}

BpttGrad bptt(const Topology& topo, const Params& p, const Tensor& x, const Tensor& y, int T, int K) {
    if (topo.scheme != Scheme::symmetric)
        throw OracleError("bptt: tied-kernel dynamics only");
    if (K < 1 || K >= T)
        throw OracleError("bptt: need 1 <= K < T, got K=" + std::to_string(K) +
                          " T=" + std::to_string(T));

    PhaseResult relax = free_phase(topo, p, x, T, nullptr, K);
    const std::vector<NetState>& tape = relax.recorded;  // s_{T-K} .. s_T
    const double settle = state_max_abs_diff(tape[1], tape[0]);
    if (!(settle < kSettleTol))
        throw OracleError("bptt: state still moving at step " + std::to_string(T - K) +
                          " (residual " + std::to_string(settle) +
                          "); increase T or shrink K");

    const int S = topo.n_state();
    const NetState& sT = tape.back();

    // adjoint of the loss at the final state
    std::vector<Tensor> lam(static_cast<std::size_t>(S));
    for (int n = 1; n <= S; ++n) lam[static_cast<std::size_t>(n - 1)] = Tensor(topo.layer_shape(n));
    Tensor w_out_grad;
    if (topo.head == Head::squared_error) {
        lam[static_cast<std::size_t>(S - 1)] = sT.s[static_cast<std::size_t>(S - 1)];
        lam[static_cast<std::size_t>(S - 1)] -= y;
    } else {
        Tensor yhat = readout(topo, p, sT);
        Tensor delta({topo.classes()});
        for (std::size_t c = 0; c < delta.numel(); ++c) delta.v[c] = yhat.v[c] - y.v[c];
        lam[static_cast<std::size_t>(S - 1)] =
            matTvec_flat(p.w_out, delta).reshaped(topo.layer_shape(S));
        w_out_grad = outer_flat(delta, sT.s[static_cast<std::size_t>(S - 1)]);
    }

    BpttGrad out;
    out.prefix.assign(static_cast<std::size_t>(K) + 1, zero_grads(topo));
    if (topo.head == Head::softmax_readout) out.prefix[0].w_out = w_out_grad;

    ParamGrads acc = zero_grads(topo);
    for (int t = 1; t <= K; ++t) {
        // differentiate step T-t: input state tape[K-t], output tape[K-t+1]
        const NetState& s_in = tape[static_cast<std::size_t>(K - t)];
        DriveOut d = drive(topo, p, x, s_in);

        std::vector<Tensor> del(static_cast<std::size_t>(S));
        for (int n = 1; n <= S; ++n) {
            const std::size_t i = static_cast<std::size_t>(n - 1);
            del[i] = hard_sigmoid_deriv(d.pre[i]);
            for (std::size_t k = 0; k < del[i].numel(); ++k) del[i].v[k] *= lam[i].v[k];
        }

        // this step's parameter gradient: each weight acts once bottom-up
        // and (for stages 2..S) once top-down
        for (int n = 1; n <= S; ++n) {
            const std::size_t i = static_cast<std::size_t>(n - 1);
            const Tensor& below = (n == 1) ? x : s_in.s[i - 1];
            if (topo.is_conv_stage(n)) {
                const ConvSpec& c = topo.conv[i];
                Tensor u = unpool(del[i], d.ind_f[i]);
                acc.w[i] += conv2d_weight_grad(below, u, c.kernel, c.pad);
                acc.b[i] += conv2d_bias_grad(u);
                if (n >= 2)
                    acc.w[i] += conv2d_weight_grad(del[i - 1], unpool(s_in.s[i], d.ind_f[i]), c.kernel, c.pad);
            } else {
                acc.w[i] += outer_flat(del[i], below);
                acc.b[i] += del[i];
                if (n >= 2) acc.w[i] += outer_flat(s_in.s[i], del[i - 1]);
            }
        }

        // adjoint at the previous time: every layer collects from the
        // stage above it (bottom-up role) and the stage it tops (top-down
        // role)
        std::vector<Tensor> prev(static_cast<std::size_t>(S));
        for (int n = 1; n <= S; ++n) {
            const std::size_t i = static_cast<std::size_t>(n - 1);
            Tensor l(topo.layer_shape(n));
            if (n < S) {
                if (topo.is_conv_stage(n + 1)) {
                    const ConvSpec& c = topo.conv[i + 1];
                    l += conv2d_transpose(p.w[i + 1], unpool(del[i + 1], d.ind_f[i + 1]), c.pad);
                } else {
                    l += matTvec_flat(p.w[i + 1], del[i + 1]).reshaped(topo.layer_shape(n));
                }
            }
            if (n >= 2) {
                if (topo.is_conv_stage(n)) {
                    const ConvSpec& c = topo.conv[i];
                    l += pool_select(conv2d(p.w[i], del[i - 1], Tensor(), c.pad), d.ind_f[i]);
                } else {
                    l += matvec_flat(p.w[i], del[i - 1]);
                }
            }
            prev[i] = std::move(l);
        }
        lam = std::move(prev);

        out.prefix[static_cast<std::size_t>(t)] = acc;
        if (topo.head == Head::softmax_readout)
            out.prefix[static_cast<std::size_t>(t)].w_out = w_out_grad;
    }
    return out;
}

ParamGrads finite_diff(const Topology& topo, const Params& p, const Tensor& x, const Tensor& y, int T,
                       double eps, std::size_t max_params) {
    const std::size_t count = param_count(p);
    if (count > max_params)
        throw OracleError("finite_diff: " + std::to_string(count) + " parameters exceed the " +
                          std::to_string(max_params) + " probe guard");
    Params q = p;
    auto objective = [&]() {
        PhaseResult r = free_phase(topo, q, x, T);
        return loss(topo, q, r.state, y);
    };
    ParamGrads g = zero_grads(topo);
    auto probe = [&](Tensor& qt, Tensor& gt) {
        for (std::size_t i = 0; i < qt.numel(); ++i) {
            const double keep = qt.v[i];
            qt.v[i] = keep + eps;
            const double lp = objective();
            qt.v[i] = keep - eps;
            const double lm = objective();
            qt.v[i] = keep;
            gt.v[i] = (lp - lm) / (2.0 * eps);
        }
    };
    for (std::size_t i = 0; i < q.w.size(); ++i) {
        probe(q.w[i], g.w[i]);
        probe(q.b[i], g.b[i]);
    }
    for (std::size_t j = 0; j < q.wb.size(); ++j) probe(q.wb[j], g.wb[j]);
    if (q.w_out.numel()) probe(q.w_out, g.w_out);
    return g;
}

BiasOrderFit bias_order_fit(const std::vector<double>& betas, const std::vector<double>& errs,
                            double floor) {
    if (betas.size() != errs.size())
        throw OracleError("bias_order_fit: " + std::to_string(betas.size()) + " betas vs " +
                          std::to_string(errs.size()) + " errors");
    std::vector<double> lx, ly;
    for (std::size_t i = 0; i < betas.size(); ++i) {
        if (!(betas[i] > 0.0))
            throw OracleError("bias_order_fit: betas must be positive");
        if (errs[i] <= floor) continue;  // rounding noise, uninformative
        lx.push_back(std::log(betas[i]));
        ly.push_back(std::log(errs[i]));
    }
    BiasOrderFit fit;
    fit.used = static_cast<int>(lx.size());
    if (fit.used < 2)
        throw OracleError("bias_order_fit: only " + std::to_string(fit.used) +
                          " points above the noise floor");
    double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < lx.size(); ++i) {
        sx += lx[i];
        sy += ly[i];
        sxx += lx[i] * lx[i];
        sxy += lx[i] * ly[i];
    }
    const double n = static_cast<double>(lx.size());
    const double denom = n * sxx - sx * sx;
    if (denom == 0.0) throw OracleError("bias_order_fit: degenerate abscissae");
    fit.slope = (n * sxy - sx * sy) / denom;
    fit.intercept = (sy - fit.slope * sx) / n;
    return fit;
}

double alignment_angle(const Tensor& a, const Tensor& b) {
    a.check_same(b, "alignment_angle");
    double ab = 0.0, aa = 0.0, bb = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) {
        ab += a.v[i] * b.v[i];
        aa += a.v[i] * a.v[i];
        bb += b.v[i] * b.v[i];
    }
    if (aa == 0.0 || bb == 0.0) throw OracleError("alignment_angle: zero-norm input");
    double c = ab / (std::sqrt(aa) * std::sqrt(bb));
    c = std::min(1.0, std::max(-1.0, c));
    return std::acos(c) * 180.0 / 3.14159265358979323846;
}

std::vector<double> kernel_alignment_angles(const Topology& topo, const Params& p) {
    if (topo.scheme != Scheme::asymmetric)
        throw OracleError("kernel_alignment_angles: untied-kernel topologies only");
    std::vector<double> out;
    for (int n = 2; n <= topo.n_state(); ++n)
        out.push_back(alignment_angle(p.w[static_cast<std::size_t>(n - 1)],
                                      p.wb[static_cast<std::size_t>(n - 2)]));
    return out;
}

}  // namespace eqprop
