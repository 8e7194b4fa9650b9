#include "eqprop/estimators.hpp"

#include <cmath>
#include <cstdlib>

namespace eqprop {

namespace {

constexpr double kBetaFloor = 1e-12;

void check_beta(double beta) {
    if (!(std::abs(beta) >= kBetaFloor))
        throw ModelError("estimator: |beta| must be >= 1e-12, got " + std::to_string(beta));
}

// readout rule shared by every estimator with a softmax head: mean of the
// plain cross-entropy gradients at the states the network actually
// visited (no 1/beta factor; the nudge already carries it).
void fill_readout(const Topology& topo, const Params& p, const Tensor& y, const NetState& s_a,
                  const NetState* s_b, const DropoutMask* drop, ParamGrads& g) {
    if (topo.head != Head::softmax_readout) return;
    g.w_out = readout_grad(topo, p, s_a, y, drop);
    if (s_b != nullptr) {
        g.w_out += readout_grad(topo, p, *s_b, y, drop);
        g.w_out *= 0.5;
    }
}

}  // namespace

const char* estimator_name(EstimatorKind k) {
    switch (k) {
        case EstimatorKind::one_sided: return "one_sided";
        case EstimatorKind::random_sign: return "random_sign";
        case EstimatorKind::symmetric: return "symmetric";
        case EstimatorKind::vf_sym: return "vf_sym";
        case EstimatorKind::kp_vf_sym: return "kp_vf_sym";
    }
    return "?";
}

EstimatorKind estimator_from_name(const std::string& name) {
    if (name == "one_sided") return EstimatorKind::one_sided;
    if (name == "random_sign") return EstimatorKind::random_sign;
    if (name == "symmetric") return EstimatorKind::symmetric;
    if (name == "vf_sym") return EstimatorKind::vf_sym;
    if (name == "kp_vf_sym") return EstimatorKind::kp_vf_sym;
    throw ModelError("unknown estimator '" + name + "'");
}

GradEstimate assemble_one_sided(const Topology& topo, const Params& p, const Tensor& x, const Tensor& y,
                                const NetState& s_free, const NetState& s_nudged, double beta,
                                const DropoutMask* drop) {
    check_beta(beta);
    GradEstimate est;
    est.kind = EstimatorKind::one_sided;
    est.beta = beta;
    est.g = grad_phi(topo, p, x, s_nudged, drop);
    axpy(est.g, -1.0, grad_phi(topo, p, x, s_free, drop));
    scale(est.g, 1.0 / beta);
    fill_readout(topo, p, y, s_nudged, nullptr, drop, est.g);
    return est;
}

GradEstimate assemble_symmetric(const Topology& topo, const Params& p, const Tensor& x, const Tensor& y,
                                const NetState& s_pos, const NetState& s_neg, double beta,
                                const DropoutMask* drop) {
    check_beta(beta);
    GradEstimate est;
    est.kind = EstimatorKind::symmetric;
    est.beta = beta;
    est.g = grad_phi(topo, p, x, s_pos, drop);
    axpy(est.g, -1.0, grad_phi(topo, p, x, s_neg, drop));
    scale(est.g, 1.0 / (2.0 * beta));
    fill_readout(topo, p, y, s_pos, &s_neg, drop, est.g);
    return est;
}

GradEstimate assemble_vf_sym(const Topology& topo, const Params& p, const Tensor& x, const Tensor& y,
                             const NetState& s_free, const NetState& s_pos, const NetState& s_neg, double beta,
                             const DropoutMask* drop) {
    check_beta(beta);
    if (topo.scheme != Scheme::asymmetric)
        throw ModelError("vf_sym needs untied forward/backward kernels");
    // Dropout enters the dynamics as a fixed rescaling of one layer; bake
    // it into working copies so the assembly below stays uniform.
    NetState sf = s_free, sp = s_pos, sn = s_neg;
    if (drop != nullptr) {
        const std::size_t L = static_cast<std::size_t>(drop->layer - 1);
        sf.s[L] = drop->apply(sf.s[L]);
        sp.s[L] = drop->apply(sp.s[L]);
        sn.s[L] = drop->apply(sn.s[L]);
    }

    GradEstimate est;
    est.kind = EstimatorKind::vf_sym;
    est.beta = beta;
    est.g = zero_grads(topo);
    const double inv = 1.0 / (2.0 * beta);
    const int S = topo.n_state();
    for (int n = 1; n <= S; ++n) {
        const std::size_t i = static_cast<std::size_t>(n - 1);
        const Tensor& below_star = (n == 1) ? x : sf.s[i - 1];
        Tensor diff_here = sp.s[i];
        diff_here -= sn.s[i];
        if (topo.is_conv_stage(n)) {
            const ConvSpec& c = topo.conv[i];
            // pooling route of the forward kernel at the free state
            PoolIndices ind_f = maxpool(conv2d(p.w[i], below_star, p.b[i], c.pad), c.pool).second;
            Tensor u = unpool(diff_here, ind_f);
            est.g.w[i] = conv2d_weight_grad(below_star, u, c.kernel, c.pad);
            est.g.w[i] *= inv;
            est.g.b[i] = conv2d_bias_grad(u);
            est.g.b[i] *= inv;
        } else {
            est.g.w[i] = outer_flat(diff_here, below_star);
            est.g.w[i] *= inv;
            est.g.b[i] = diff_here;
            est.g.b[i] *= inv;
        }
        if (n >= 2) {
            // backward kernel: post-synaptic factor frozen at the free
            // state, pre-synaptic difference from the nudged phases,
            // pooling route of the backward kernel at the free state
            const std::size_t j = static_cast<std::size_t>(n - 2);
            Tensor diff_below = sp.s[i - 1];
            diff_below -= sn.s[i - 1];
            if (topo.is_conv_stage(n)) {
                const ConvSpec& c = topo.conv[i];
                PoolIndices ind_b = maxpool(conv2d(p.wb[j], below_star, Tensor(), c.pad), c.pool).second;
                Tensor u = unpool(sf.s[i], ind_b);
                est.g.wb[j] = conv2d_weight_grad(diff_below, u, c.kernel, c.pad);
                est.g.wb[j] *= inv;
            } else {
                est.g.wb[j] = outer_flat(sf.s[i], diff_below);
                est.g.wb[j] *= inv;
            }
        }
    }
    // states already carry the mask, so don't re-apply it in the readout
    fill_readout(topo, p, y, sp, &sn, nullptr, est.g);
    return est;
}

KpVfParts assemble_kp_vf_sym(const Topology& topo, const Params& p, const Tensor& x, const Tensor& y,
                             const NetState& s_pos, const NetState& s_neg, double beta,
                             const DropoutMask* drop) {
    check_beta(beta);
    if (topo.scheme != Scheme::asymmetric)
        throw ModelError("kp_vf_sym needs untied forward/backward kernels");
    ParamGrads d = grad_phi_tilde(topo, p, x, s_pos, drop);
    axpy(d, -1.0, grad_phi_tilde(topo, p, x, s_neg, drop));
    scale(d, 1.0 / (2.0 * beta));

    KpVfParts parts;
    parts.dir_f = zero_grads(topo);
    parts.dir_b = zero_grads(topo);
    parts.shared.kind = EstimatorKind::kp_vf_sym;
    parts.shared.beta = beta;
    parts.shared.g = zero_grads(topo);

    const int S = topo.n_state();
    for (int n = 1; n <= S; ++n) {
        std::size_t i = static_cast<std::size_t>(n - 1);
        parts.dir_f.w[i] = d.w[i];
        parts.dir_f.b[i] = d.b[i];
        parts.shared.g.b[i] = d.b[i];
        if (n == 1) {
            parts.shared.g.w[i] = d.w[i];  // no backward partner for the input stage
            continue;
        }
        std::size_t j = static_cast<std::size_t>(n - 2);
        parts.dir_b.wb[j] = d.wb[j];
        Tensor avg = d.w[i];
        avg += d.wb[j];
        avg *= 0.5;
        parts.shared.g.w[i] = avg;
        parts.shared.g.wb[j] = avg;
    }
    fill_readout(topo, p, y, s_pos, &s_neg, drop, parts.shared.g);
    parts.dir_f.w_out = parts.shared.g.w_out;
    parts.dir_b.w_out = parts.shared.g.w_out;
    return parts;
}

GradEstimate one_sided(const Topology& topo, const Params& p, const Tensor& x, const Tensor& y, int T, int K,
                       double beta, const DropoutMask* drop) {
    check_beta(beta);
    PhaseResult free = free_phase(topo, p, x, T, drop);
    PhaseResult nudged = nudged_phase(topo, p, x, y, free.state, beta, K, drop);
    return assemble_one_sided(topo, p, x, y, free.state, nudged.state, beta, drop);
}

GradEstimate random_sign(const Topology& topo, const Params& p, const Tensor& x, const Tensor& y, int T, int K,
                         double beta, CounterRng& rng, const DropoutMask* drop) {
    check_beta(beta);
    double signed_beta = rng.next_sign() * beta;
    GradEstimate est = one_sided(topo, p, x, y, T, K, signed_beta, drop);
    est.kind = EstimatorKind::random_sign;
    return est;
}

GradEstimate symmetric(const Topology& topo, const Params& p, const Tensor& x, const Tensor& y, int T, int K,
                       double beta, const DropoutMask* drop) {
    check_beta(beta);
    PhaseResult free = free_phase(topo, p, x, T, drop);
    PhaseResult pos = nudged_phase(topo, p, x, y, free.state, beta, K, drop);
    PhaseResult neg = nudged_phase(topo, p, x, y, free.state, -beta, K, drop);
    return assemble_symmetric(topo, p, x, y, pos.state, neg.state, beta, drop);
}

GradEstimate vf_sym(const Topology& topo, const Params& p, const Tensor& x, const Tensor& y, int T, int K,
                    double beta, const DropoutMask* drop) {
    check_beta(beta);
    PhaseResult free = free_phase(topo, p, x, T, drop);
    PhaseResult pos = nudged_phase(topo, p, x, y, free.state, beta, K, drop);
    PhaseResult neg = nudged_phase(topo, p, x, y, free.state, -beta, K, drop);
    return assemble_vf_sym(topo, p, x, y, free.state, pos.state, neg.state, beta, drop);
}

KpVfParts kp_vf_sym_parts(const Topology& topo, const Params& p, const Tensor& x, const Tensor& y, int T, int K,
                          double beta, const DropoutMask* drop) {
    check_beta(beta);
    PhaseResult free = free_phase(topo, p, x, T, drop);
    PhaseResult pos = nudged_phase(topo, p, x, y, free.state, beta, K, drop);
    PhaseResult neg = nudged_phase(topo, p, x, y, free.state, -beta, K, drop);
    return assemble_kp_vf_sym(topo, p, x, y, pos.state, neg.state, beta, drop);
}

GradEstimate kp_vf_sym(const Topology& topo, const Params& p, const Tensor& x, const Tensor& y, int T, int K,
                       double beta, const DropoutMask* drop) {
    return kp_vf_sym_parts(topo, p, x, y, T, K, beta, drop).shared;
}

void apply_update(Params& p, const Topology& topo, const GradEstimate& est, double lr, double leak) {
    (void)topo;
    if (est.kind == EstimatorKind::kp_vf_sym && leak != 0.0) {
        scale(p, 1.0 - lr * leak);
    }
    axpy(p, lr, est.g);
}

}  // namespace eqprop
