#pragma once

// Reference gradients and measurement helpers the estimators are judged
// against.  Everything here is deliberately independent of the contrastive
// estimator path: the unrolled gradient differentiates the settling
// dynamics step by step, and finite_diff perturbs one parameter at a time.

#include <limits>
#include <vector>

#include "eqprop/model.hpp"

namespace eqprop {

struct OracleError : std::runtime_error {
    explicit OracleError(const std::string& m) : std::runtime_error(m) {}
};

// Truncated gradients of the loss at the end of a T-step free relaxation,
// obtained by reverse accumulation through the last t synchronous steps:
//   at(t) = sum over the final t steps of that step's parameter gradient.
// The readout matrix of the softmax head sits outside the dynamics, so its
// gradient is exact at every depth, including t = 0.
//
// Sign convention: these are plain loss gradients (descent direction is
// their negation).  The contrastive estimators return ascent directions of
// the learning objective, so a settled estimator at nudge depth t matches
// -at(t), not +at(t).
struct BpttGrad {
    std::vector<ParamGrads> prefix;  // prefix[t], t = 0..depth()

    int depth() const { return static_cast<int>(prefix.size()) - 1; }
    const ParamGrads& at(int t) const;
    const ParamGrads& full() const { return prefix.back(); }
};

// Unroll with a tape of the last K states of the T-step free phase.  The
// state must have effectively settled by step T-K (residual below 1e-8);
// otherwise the truncations are not comparable to anything and the call
// throws.  Symmetric scheme only.
BpttGrad bptt(const Topology& topo, const Params& p, const Tensor& x, const Tensor& y, int T, int K);

// Central finite differences of the scalar objective
//   E(theta) = loss after a fresh T-step free relaxation
// over every parameter.  Guarded against accidental use on large nets;
// raise max_params deliberately if a bigger probe is really wanted.
ParamGrads finite_diff(const Topology& topo, const Params& p, const Tensor& x, const Tensor& y, int T,
                       double eps = 1e-5, std::size_t max_params = 2000);

// Least-squares slope of log(err) against log(beta), for reading off the
// order of an estimator's bias.  Points with err <= floor are treated as
// drowned in rounding noise and excluded; fewer than two surviving points
// is an error.  Default floor: 100 ulp of 1.0.
struct BiasOrderFit {
    double slope = 0.0;
    double intercept = 0.0;  // in log space
    int used = 0;
};

BiasOrderFit bias_order_fit(const std::vector<double>& betas, const std::vector<double>& errs,
                            double floor = 100.0 * std::numeric_limits<double>::epsilon());

// Angle in degrees between two same-shaped tensors viewed flat; 0 means
// perfectly aligned, 90 orthogonal.  Zero-norm input is an error.
double alignment_angle(const Tensor& a, const Tensor& b);

// Per-stage angle between the forward kernel and its backward partner
// (stages 2..S of an untied-kernel topology), in stage order.
std::vector<double> kernel_alignment_angles(const Topology& topo, const Params& p);

}  // namespace eqprop
