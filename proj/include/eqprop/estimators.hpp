#pragma once

// Gradient estimators built from contrastive phase statistics.
//
// All estimators share the same recipe: relax the network to its free
// fixed point, relax again under one or two output nudges, and read the
// parameter gradient off the difference of energy-gradients between the
// settled states.  The variants differ in how many nudged phases run and
// in which state each local statistic is evaluated at:
//
//   one_sided    (1/b)  (dPhi(s_b)  - dPhi(s_0))          bias O(b)
//   random_sign  one_sided with b drawn as +/-|b|          bias O(b^2) in
//                                                          expectation
//   symmetric    (1/2b) (dPhi(s_+b) - dPhi(s_-b))          bias O(b^2)
//   vf_sym       symmetric rule for untied forward/backward
//                kernels; each factor of the update is evaluated at the
//                state that multiplies it in the energy
//   kp_vf_sym    untied kernels with a single shared estimate per stage
//                (the mean of the forward- and backward-kernel
//                estimates), intended to be applied with weight leak so
//                the two kernel sets converge to each other
//
// The softmax readout matrix never enters the network energy; its update
// is the plain cross-entropy gradient at the nudged states and carries no
// 1/beta factor.

#include <cstdint>

#include "eqprop/model.hpp"
#include "eqprop/phases.hpp"
#include "eqprop/rng.hpp"

namespace eqprop {

enum class EstimatorKind { one_sided, random_sign, symmetric, vf_sym, kp_vf_sym };

const char* estimator_name(EstimatorKind k);
EstimatorKind estimator_from_name(const std::string& name);

struct GradEstimate {
    EstimatorKind kind = EstimatorKind::symmetric;
    double beta = 0.0;  // signed nudge actually applied (sign matters for one_sided / random_sign)
    ParamGrads g;
};

// ---- assembly from already-relaxed states (pure, for tests) ----

// ascent direction (dPhi(nudged) - dPhi(free)) / beta; beta signed
GradEstimate assemble_one_sided(const Topology& topo, const Params& p, const Tensor& x, const Tensor& y,
                                const NetState& s_free, const NetState& s_nudged, double beta,
                                const DropoutMask* drop = nullptr);

// (dPhi(pos) - dPhi(neg)) / (2 beta); beta > 0 is the magnitude
GradEstimate assemble_symmetric(const Topology& topo, const Params& p, const Tensor& x, const Tensor& y,
                                const NetState& s_pos, const NetState& s_neg, double beta,
                                const DropoutMask* drop = nullptr);

// untied-kernel symmetric rule; needs the free state for the pooling
// routes and the pre-synaptic factors
GradEstimate assemble_vf_sym(const Topology& topo, const Params& p, const Tensor& x, const Tensor& y,
                             const NetState& s_free, const NetState& s_pos, const NetState& s_neg, double beta,
                             const DropoutMask* drop = nullptr);

struct KpVfParts {
    ParamGrads dir_f;      // estimate seen by the forward kernels (w slots filled)
    ParamGrads dir_b;      // estimate seen by the backward kernels (wb slots filled)
    GradEstimate shared;   // per-stage mean of the two, written to both slots
};

KpVfParts assemble_kp_vf_sym(const Topology& topo, const Params& p, const Tensor& x, const Tensor& y,
                             const NetState& s_pos, const NetState& s_neg, double beta,
                             const DropoutMask* drop = nullptr);

// ---- phase-running entry points ----

GradEstimate one_sided(const Topology& topo, const Params& p, const Tensor& x, const Tensor& y, int T, int K,
                       double beta, const DropoutMask* drop = nullptr);

GradEstimate random_sign(const Topology& topo, const Params& p, const Tensor& x, const Tensor& y, int T, int K,
                         double beta, CounterRng& rng, const DropoutMask* drop = nullptr);

GradEstimate symmetric(const Topology& topo, const Params& p, const Tensor& x, const Tensor& y, int T, int K,
                       double beta, const DropoutMask* drop = nullptr);

GradEstimate vf_sym(const Topology& topo, const Params& p, const Tensor& x, const Tensor& y, int T, int K,
                    double beta, const DropoutMask* drop = nullptr);

GradEstimate kp_vf_sym(const Topology& topo, const Params& p, const Tensor& x, const Tensor& y, int T, int K,
                       double beta, const DropoutMask* drop = nullptr);

KpVfParts kp_vf_sym_parts(const Topology& topo, const Params& p, const Tensor& x, const Tensor& y, int T, int K,
                          double beta, const DropoutMask* drop = nullptr);

// One ascent step along the estimate.  Plain rule: theta += lr * g.
// For kp_vf_sym estimates every tensor instead follows
// theta += lr * (g - leak * theta), which contracts the forward/backward
// kernel gap geometrically by (1 - lr * leak) per step.
void apply_update(Params& p, const Topology& topo, const GradEstimate& est, double lr, double leak);

}  // namespace eqprop
