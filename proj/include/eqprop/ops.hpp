#ifndef EQPROP_OPS_HPP
#define EQPROP_OPS_HPP

#include <utility>

#include "eqprop/tensor.hpp"

namespace eqprop {

// 2-d convolution, stride 1, zero padding `pad` on both spatial sides.
//   w    [Cout, Cin, F, F]
//   x    [Cin, H, W]
//   bias [Cout] or empty tensor for none
// returns [Cout, H + 2*pad - F + 1, W + 2*pad - F + 1]
Tensor conv2d(const Tensor& w, const Tensor& x, const Tensor& bias, int pad);

// Adjoint of the linear part of conv2d in its input argument:
//   <conv2d(w, x, 0, pad), g> == <x, conv2d_transpose(w, g, pad)>
// for all x, g. g has conv2d's output shape; the result has x's shape.
Tensor conv2d_transpose(const Tensor& w, const Tensor& g, int pad);

// Adjoint of conv2d in its kernel argument: accumulates, for an output
// cotangent g, the gradient w.r.t. w. x is the conv input.
//   <conv2d(w, x, 0, pad), g> == <w, conv2d_weight_grad(x, g, kernel, pad)>
Tensor conv2d_weight_grad(const Tensor& x, const Tensor& g, int kernel, int pad);

// Adjoint of conv2d in its bias argument: per-channel sums of g.
Tensor conv2d_bias_grad(const Tensor& g);

// Max pooling with square window and stride both equal to `window`.
// Spatial dims must be divisible by `window`. Ties break to the first
// occurrence in row-major window order. Returns the pooled map and the
// argmax offsets for unpool / adjoint replay.
std::pair<Tensor, PoolIndices> maxpool(const Tensor& x, int window);

// Places each pooled value back at its recorded argmax position, zeros
// elsewhere. Output shape [C, out_h*window, out_w*window].
Tensor unpool(const Tensor& y, const PoolIndices& ind);

// Reads the value at each recorded argmax position of a pre-pool-shaped
// tensor: the adjoint of unpool, and equal to maxpool(x).first when ind was
// recorded from x itself.
Tensor pool_select(const Tensor& x, const PoolIndices& ind);

// Piecewise-linear sigmoid sigma(z) = max(0, min(z/2, 1)). Saturates at 0
// below z=0 and at 1 above z=2; slope 1/2 between.
inline double hard_sigmoid(double z) {
    if (z <= 0.0) return 0.0;
    if (z >= 2.0) return 1.0;
    return 0.5 * z;
}

// Derivative convention: 1/2 strictly inside (0, 2), 0 at and beyond the
// kinks. Adjoints and the BPTT oracle use this everywhere.
inline double hard_sigmoid_deriv(double z) {
    return (z > 0.0 && z < 2.0) ? 0.5 : 0.0;
}

Tensor hard_sigmoid(const Tensor& z);
Tensor hard_sigmoid_deriv(const Tensor& z);

// Numerically stable softmax over a vector.
Tensor softmax(const Tensor& z);

// Generalized scalar product: sum over elementwise products of two tensors
// of identical shape (any rank).
double gdot(const Tensor& a, const Tensor& b);

// Dense helpers. Matrices are [rows, cols]; vectors are rank-1.
Tensor matvec(const Tensor& w, const Tensor& x);        // w[m,n] x[n] -> [m]
Tensor matTvec(const Tensor& w, const Tensor& y);       // w[m,n] y[m] -> [n]
Tensor outer(const Tensor& a, const Tensor& b);         // a[m] b[n] -> [m,n]

// Same maps with the vector argument viewed flat regardless of rank,
// sparing the reshape copy at the conv/fc boundary.
Tensor matvec_flat(const Tensor& w, const Tensor& t);
Tensor matTvec_flat(const Tensor& w, const Tensor& t);
Tensor outer_flat(const Tensor& a, const Tensor& b);    // [a.numel(), b.numel()]

}  // namespace eqprop

#endif
