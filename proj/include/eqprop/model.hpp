#ifndef EQPROP_MODEL_HPP
#define EQPROP_MODEL_HPP

#include <cstdint>
#include <vector>

#include "eqprop/ops.hpp"
#include "eqprop/rng.hpp"
#include "eqprop/tensor.hpp"

namespace eqprop {

struct ModelError : std::runtime_error {
    explicit ModelError(const std::string& what) : std::runtime_error(what) {}
};

// Whether top-down influence reuses the forward weights (transposed /
// flipped) or a separate, independently learned backward set.
enum class Scheme { symmetric, asymmetric };

// Output stage. squared_error: the class vector is the last state layer and
// the teaching signal nudges it directly. softmax_readout: a linear map
// w_out reads the last state layer out to class scores; the readout is not
// part of the recurrent state.
enum class Head { squared_error, softmax_readout };

struct ConvSpec {
    int channels = 0;  // output channels
    int kernel = 3;    // square kernel side
    int pad = 1;       // zero padding per spatial side
    int pool = 2;      // max-pool window and stride after the conv
};

// Static description of a network: a stack of conv stages (each conv is
// followed by its max-pool) and then fully connected stages. Stage n maps
// layer n-1 to layer n; layer 0 is the input image. The last fc entry is the
// class count: the output layer for squared_error, the readout dimension
// for softmax_readout.
struct Topology {
    int in_channels = 1, in_h = 1, in_w = 1;
    std::vector<ConvSpec> conv;
    std::vector<int> fc;
    Scheme scheme = Scheme::symmetric;
    Head head = Head::softmax_readout;

    int n_conv() const { return static_cast<int>(conv.size()); }
    int n_fc() const { return static_cast<int>(fc.size()); }
    int n_tot() const { return n_conv() + n_fc(); }

    // Number of state layers (and of weight stages): the softmax readout is
    // not a state layer, so it contributes its weight as w_out instead.
    int n_state() const { return head == Head::squared_error ? n_tot() : n_tot() - 1; }

    bool is_conv_stage(int n) const { return n >= 1 && n <= n_conv(); }
    int classes() const { return fc.back(); }

    // Shape of layer n (0 = input, 1..n_state() = states). Conv layers are
    // [C, H, W] after pooling; fc layers are [d].
    std::vector<int> layer_shape(int n) const;
    // Shape of conv stage n's pre-pool map [C, H, W].
    std::vector<int> prepool_shape(int n) const;
    int flat_size(int n) const;

    // Throws ModelError on an inconsistent description (empty fc list,
    // pooling that does not divide the map, kernels larger than the padded
    // input, asymmetric scheme with a squared-error head, ...).
    void validate() const;
};

// Learnable tensors. w[i]/b[i] belong to stage i+1 (conv: [Cout,Cin,F,F] and
// [Cout]; fc: [out,in] and [out]). wb[i] is the backward kernel of stage i+2
// under the asymmetric scheme (bias-free; the input stage has none because
// nothing propagates top-down into the input). w_out is the softmax readout.
//
// The same struct doubles as the container for anything parameter-shaped:
// gradient estimates, momentum buffers.
struct Params {
    std::vector<Tensor> w;
    std::vector<Tensor> b;
    std::vector<Tensor> wb;
    Tensor w_out;
};

using ParamGrads = Params;

// Uniform Kaiming initialization, U(+-1/sqrt(fan_in)) for every weight and
// bias; forward and backward tensors draw from independent streams of
// `seed`, so the asymmetric scheme starts genuinely unaligned.
Params init_params(const Topology& topo, std::uint64_t seed);

// Parameter-shaped zeros (wb populated only for the asymmetric scheme,
// w_out only for the softmax head).
ParamGrads zero_grads(const Topology& topo);

// dst += a * src over every tensor in the structure.
void axpy(Params& dst, double a, const Params& src);
void scale(Params& p, double a);
double dot(const Params& a, const Params& b);
double norm(const Params& p);
std::size_t param_count(const Params& p);
double max_abs_diff(const Params& a, const Params& b);

// The recurrent state: one tensor per layer plus the pooling argmaxes
// recorded by the latest step (empty before any step ran).
struct NetState {
    std::vector<Tensor> s;
    std::vector<PoolIndices> pool_ind;
};

NetState init_state(const Topology& topo);
double state_max_abs_diff(const NetState& a, const NetState& b);

// Multiplicative dropout mask pinned to one state layer: `keep` is 0/1 per
// unit, survivors are rescaled by 1/(1-p) wherever the layer enters the
// energy, so the expected masked activity matches the unmasked one. One mask
// is sampled per example per training iteration and reused across every
// phase of that iteration.
struct DropoutMask {
    int layer = 0;
    double p = 0.0;
    Tensor keep;

    Tensor apply(const Tensor& s) const;
};

DropoutMask sample_dropout_mask(const Topology& topo, int layer, double p, CounterRng& rng);

struct StepOut {
    NetState state;
    Tensor yhat;      // class probabilities (softmax head) or output layer copy
    double residual;  // max-abs change against the previous state
};

// Everything one synchronous step derives from the time-t state before the
// activation fires: per-layer pre-activations (bottom-up + top-down drive,
// dropout rescaling applied) and the forward pool argmaxes they imply.
// step() consumes this; the unrolled-gradient oracle replays it.
struct DriveOut {
    std::vector<Tensor> pre;         // pre[n-1] drives layer n
    std::vector<PoolIndices> ind_f;  // ind_f[n-1] for conv stage n
};

DriveOut drive(const Topology& topo, const Params& p, const Tensor& x, const NetState& s,
               const DropoutMask* drop = nullptr);

// One synchronous update of every layer from the previous step's state:
// each layer's new value depends only on time-t values. beta = 0 runs the
// free dynamics; beta != 0 requires a target y and applies the head's nudge
// outside the activation.
StepOut step(const Topology& topo, const Params& p, const Tensor& x, const NetState& s,
             double beta, const Tensor* y, const DropoutMask* drop = nullptr);

// Head/scheme-specific entry points; each checks the topology matches.
StepOut step_sym_sq(const Topology& topo, const Params& p, const Tensor& x,
                    const NetState& s, double beta, const Tensor* y);
StepOut step_sym_ce(const Topology& topo, const Params& p, const Tensor& x,
                    const NetState& s, double beta, const Tensor* y);
StepOut step_asym_ce(const Topology& topo, const Params& p, const Tensor& x,
                     const NetState& s, double beta, const Tensor* y);

// Scalar energy whose state-gradient the symmetric dynamics ascend: conv
// stages contribute s_n . pool(conv(w_n, s_{n-1}) + b_n), fc stages
// s_n . (w_n s_{n-1} + b_n). Pool argmaxes are taken at the given state.
// Asymmetric scheme has no such scalar; calling with one throws.
double phi(const Topology& topo, const Params& p, const Tensor& x, const NetState& s,
           const DropoutMask* drop = nullptr);

// Analytic parameter gradient of phi at the given state (pool argmaxes
// re-evaluated there, then held fixed). Fills w and b; wb stays empty and
// w_out zero, since neither enters phi.
ParamGrads grad_phi(const Topology& topo, const Params& p, const Tensor& x,
                    const NetState& s, const DropoutMask* drop = nullptr);

// Asymmetric counterpart built from the per-layer pseudo-energies
// s_n . pool(conv(w_n^f, s_{n-1})) + s_{n+1} . pool(conv(w_{n+1}^b, s_n)):
// forward gradients match grad_phi with forward argmaxes, backward conv
// gradients re-pool their own kernels' pre-activations for the argmaxes,
// and backward fc gradients coincide with the forward ones bit for bit.
ParamGrads grad_phi_tilde(const Topology& topo, const Params& p, const Tensor& x,
                          const NetState& s, const DropoutMask* drop = nullptr);

// Head loss at a state: squared_error 0.5*||s_S - y||^2; softmax_readout
// cross-entropy of softmax(w_out . flat(s_S)) against y.
double loss(const Topology& topo, const Params& p, const NetState& s, const Tensor& y,
            const DropoutMask* drop = nullptr);

// Class scores at a state: the output layer itself (squared_error) or the
// softmax readout probabilities.
Tensor readout(const Topology& topo, const Params& p, const NetState& s,
               const DropoutMask* drop = nullptr);

// Readout weight rule evaluated at a state: (y - yhat) x flat(s_S), the
// ascent direction for w_out. No 1/beta factor belongs here; the rule is
// used as-is at nudged states. Softmax head only.
Tensor readout_grad(const Topology& topo, const Params& p, const NetState& s, const Tensor& y,
                    const DropoutMask* drop = nullptr);

Tensor one_hot(int classes, int label);

}  // namespace eqprop

#endif
