#include "eqprop/phases.hpp"

#include <cmath>

namespace eqprop {

namespace {

void check_finite(const NetState& s, int step_idx) {
    for (const Tensor& t : s.s)
        if (!t.all_finite())
            throw DivergenceError(step_idx, "dynamics diverged: non-finite unit at step " +
                                                std::to_string(step_idx));
}

}  // namespace

PhaseResult free_phase(const Topology& topo, const Params& p, const Tensor& x, int T,
                       const DropoutMask* drop, int record_tail) {
    if (T < 1) throw ModelError("free_phase: T must be >= 1, got " + std::to_string(T));
    if (record_tail < 0 || record_tail > T)
        throw ModelError("free_phase: record_tail " + std::to_string(record_tail) +
                         " outside 0.." + std::to_string(T));

    PhaseResult out;
    NetState s = init_state(topo);
    if (record_tail == T) out.recorded.push_back(s);
    double residual = 0.0;
    Tensor yhat;
    for (int t = 0; t < T; ++t) {
        StepOut r = step(topo, p, x, s, 0.0, nullptr, drop);
        s = std::move(r.state);
        residual = r.residual;
        yhat = std::move(r.yhat);
        check_finite(s, t + 1);
        if (record_tail > 0 && t + 1 >= T - record_tail) out.recorded.push_back(s);
    }
    out.state = std::move(s);
    out.yhat = readout(topo, p, out.state, drop);
    out.residual = residual;
    return out;
}

PhaseResult nudged_phase(const Topology& topo, const Params& p, const Tensor& x,
                         const Tensor& y, const NetState& start, double beta, int K,
                         const DropoutMask* drop) {
    if (K < 0) throw ModelError("nudged_phase: K must be >= 0, got " + std::to_string(K));
    PhaseResult out;
    NetState s = start;
    double residual = 0.0;
    for (int t = 0; t < K; ++t) {
        StepOut r = step(topo, p, x, s, beta, &y, drop);
        s = std::move(r.state);
        residual = r.residual;
        check_finite(s, t + 1);
    }
    out.state = std::move(s);
    out.yhat = readout(topo, p, out.state, drop);
    out.residual = residual;
    return out;
}

std::vector<ParamGrads> transient_record(const Topology& topo, const Params& p,
                                         const Tensor& x, const Tensor& y,
                                         const NetState& s_star, double beta, int K,
                                         const DropoutMask* drop) {
    if (topo.scheme != Scheme::symmetric)
        throw ModelError("transient_record: symmetric scheme only");
    if (std::fabs(beta) < 1e-12)
        throw ModelError("transient_record: |beta| below 1e-12 division guard");
    if (K < 1) throw ModelError("transient_record: K must be >= 1");

    const ParamGrads g_free = grad_phi(topo, p, x, s_star, drop);
    std::vector<ParamGrads> rec;
    rec.reserve(static_cast<std::size_t>(K));
    NetState s = s_star;
    for (int t = 0; t < K; ++t) {
        StepOut r = step(topo, p, x, s, beta, &y, drop);
        s = std::move(r.state);
        check_finite(s, t + 1);
        ParamGrads g = grad_phi(topo, p, x, s, drop);
        axpy(g, -1.0, g_free);
        scale(g, 1.0 / beta);
        if (topo.head == Head::softmax_readout) g.w_out = readout_grad(topo, p, s, y, drop);
        rec.push_back(std::move(g));
    }
    return rec;
}

}  // namespace eqprop
