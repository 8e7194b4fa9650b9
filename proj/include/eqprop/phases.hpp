#ifndef EQPROP_PHASES_HPP
#define EQPROP_PHASES_HPP

#include <vector>

#include "eqprop/model.hpp"

namespace eqprop {

// Raised when a relaxation produces a non-finite unit; names the step.
struct DivergenceError : std::runtime_error {
    int at_step;
    DivergenceError(int step, const std::string& what)
        : std::runtime_error(what), at_step(step) {}
};

struct PhaseResult {
    NetState state;   // state after the last step
    Tensor yhat;      // readout at that state
    double residual;  // max-abs state change of the last step
    // Tail of the trajectory when requested: states at steps
    // T-record_tail .. T inclusive (record_tail+1 entries), the forward tape
    // for unrolled differentiation.
    std::vector<NetState> recorded;
};

// Relaxes the free dynamics (beta = 0) from the zero state for exactly T
// steps. Throws DivergenceError if any unit leaves the finite range.
PhaseResult free_phase(const Topology& topo, const Params& p, const Tensor& x, int T,
                       const DropoutMask* drop = nullptr, int record_tail = 0);

// Relaxes the nudged dynamics for K steps starting from `start`, which is
// meant to be the stored free steady state: both signs of beta restart from
// the same point.
PhaseResult nudged_phase(const Topology& topo, const Params& p, const Tensor& x,
                         const Tensor& y, const NetState& start, double beta, int K,
                         const DropoutMask* drop = nullptr);

// Truncated estimates along the nudged trajectory: entry t-1 holds
//   (grad_phi(s_t^beta) - grad_phi(s_star)) / beta
// for t = 1..K, plus the readout rule's value at s_t^beta for the softmax
// head. Symmetric scheme only.
std::vector<ParamGrads> transient_record(const Topology& topo, const Params& p,
                                         const Tensor& x, const Tensor& y,
                                         const NetState& s_star, double beta, int K,
                                         const DropoutMask* drop = nullptr);

}  // namespace eqprop

#endif
