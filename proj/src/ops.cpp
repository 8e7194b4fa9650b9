#include "eqprop/ops.hpp"

#include <algorithm>

namespace eqprop {

namespace {

void need(bool ok, const std::string& msg) {
    if (!ok) throw ShapeError(msg);
}

// Copy x into a zero border of `pad` pixels on each spatial side.
Tensor pad_spatial(const Tensor& x, int pad) {
    const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    Tensor out({c, h + 2 * pad, w + 2 * pad});
    for (int i = 0; i < c; ++i)
        for (int r = 0; r < h; ++r)
            std::copy_n(&x.v[(static_cast<std::size_t>(i) * h + r) * w], w,
                        &out.at(i, r + pad, pad));
    return out;
}

void check_conv_args(const Tensor& w, const Tensor& x, int pad, const char* who) {
    need(w.rank() == 4, std::string(who) + ": kernel must be rank 4, got " +
                            Tensor::shape_str(w.shape));
    need(x.rank() == 3, std::string(who) + ": input must be rank 3, got " +
                            Tensor::shape_str(x.shape));
    need(w.dim(2) == w.dim(3), std::string(who) + ": kernel must be square, got " +
                                   Tensor::shape_str(w.shape));
    need(w.dim(1) == x.dim(0), std::string(who) + ": kernel expects " +
                                   std::to_string(w.dim(1)) + " input channels, input has " +
                                   std::to_string(x.dim(0)));
    need(pad >= 0, std::string(who) + ": negative padding");
    const int f = w.dim(2);
    need(x.dim(1) + 2 * pad >= f && x.dim(2) + 2 * pad >= f,
         std::string(who) + ": kernel " + std::to_string(f) + " exceeds padded input " +
             std::to_string(x.dim(1) + 2 * pad) + "x" + std::to_string(x.dim(2) + 2 * pad));
}

}  // namespace

Tensor conv2d(const Tensor& w, const Tensor& x, const Tensor& bias, int pad) {
    check_conv_args(w, x, pad, "conv2d");
    const int cout = w.dim(0), cin = w.dim(1), f = w.dim(2);
    if (bias.numel())
        need(bias.rank() == 1 && bias.dim(0) == cout,
             "conv2d: bias shape " + Tensor::shape_str(bias.shape) + " vs " +
                 std::to_string(cout) + " output channels");
    const Tensor xp = pad > 0 ? pad_spatial(x, pad) : x;
    const int hp = xp.dim(1), wp = xp.dim(2);
    const int oh = hp - f + 1, ow = wp - f + 1;

    Tensor y({cout, oh, ow});
    for (int c = 0; c < cout; ++c) {
        if (bias.numel()) {
            double* plane = &y.at(c, 0, 0);
            std::fill_n(plane, static_cast<std::size_t>(oh) * ow, bias[c]);
        }
        for (int i = 0; i < cin; ++i)
            for (int j = 0; j < f; ++j)
                for (int k = 0; k < f; ++k) {
                    const double coef = w.at(c, i, j, k);
                    if (coef == 0.0) continue;
                    for (int h = 0; h < oh; ++h) {
                        double* yrow = &y.at(c, h, 0);
                        const double* xrow = &xp.at(i, h + j, k);
                        for (int t = 0; t < ow; ++t) yrow[t] += coef * xrow[t];
                    }
                }
    }
    return y;
}

Tensor conv2d_transpose(const Tensor& w, const Tensor& g, int pad) {
    need(w.rank() == 4 && g.rank() == 3,
         "conv2d_transpose: kernel rank 4 and cotangent rank 3 required, got " +
             Tensor::shape_str(w.shape) + " and " + Tensor::shape_str(g.shape));
    need(w.dim(0) == g.dim(0), "conv2d_transpose: kernel has " + std::to_string(w.dim(0)) +
                                   " output channels, cotangent has " +
                                   std::to_string(g.dim(0)));
    const int cout = w.dim(0), cin = w.dim(1), f = w.dim(2);
    const int oh = g.dim(1), ow = g.dim(2);
    const int h = oh + f - 1 - 2 * pad, wdt = ow + f - 1 - 2 * pad;
    need(h > 0 && wdt > 0, "conv2d_transpose: implied input " + std::to_string(h) + "x" +
                               std::to_string(wdt) + " is empty");

    Tensor acc({cin, oh + f - 1, ow + f - 1});  // padded-input-sized accumulator
    for (int c = 0; c < cout; ++c)
        for (int i = 0; i < cin; ++i)
            for (int j = 0; j < f; ++j)
                for (int k = 0; k < f; ++k) {
                    const double coef = w.at(c, i, j, k);
                    if (coef == 0.0) continue;
                    for (int r = 0; r < oh; ++r) {
                        const double* grow = &g.at(c, r, 0);
                        double* arow = &acc.at(i, r + j, k);
                        for (int t = 0; t < ow; ++t) arow[t] += coef * grow[t];
                    }
                }
    if (pad == 0) return acc;
    Tensor out({cin, h, wdt});
    for (int i = 0; i < cin; ++i)
        for (int r = 0; r < h; ++r)
            std::copy_n(&acc.at(i, r + pad, pad), wdt, &out.at(i, r, 0));
    return out;
}

Tensor conv2d_weight_grad(const Tensor& x, const Tensor& g, int kernel, int pad) {
    need(x.rank() == 3 && g.rank() == 3,
         "conv2d_weight_grad: rank-3 input and cotangent required, got " +
             Tensor::shape_str(x.shape) + " and " + Tensor::shape_str(g.shape));
    const int cin = x.dim(0), cout = g.dim(0), f = kernel;
    const int oh = g.dim(1), ow = g.dim(2);
    need(x.dim(1) + 2 * pad - f + 1 == oh && x.dim(2) + 2 * pad - f + 1 == ow,
         "conv2d_weight_grad: cotangent " + Tensor::shape_str(g.shape) +
             " inconsistent with input " + Tensor::shape_str(x.shape) + ", kernel " +
             std::to_string(f) + ", pad " + std::to_string(pad));
    const Tensor xp = pad > 0 ? pad_spatial(x, pad) : x;

    Tensor dw({cout, cin, f, f});
    for (int c = 0; c < cout; ++c)
        for (int i = 0; i < cin; ++i)
            for (int j = 0; j < f; ++j)
                for (int k = 0; k < f; ++k) {
                    double acc = 0.0;
                    for (int h = 0; h < oh; ++h) {
                        const double* grow = &g.at(c, h, 0);
                        const double* xrow = &xp.at(i, h + j, k);
                        for (int t = 0; t < ow; ++t) acc += grow[t] * xrow[t];
                    }
                    dw.at(c, i, j, k) = acc;
                }
    return dw;
}

Tensor conv2d_bias_grad(const Tensor& g) {
    need(g.rank() == 3, "conv2d_bias_grad: rank-3 cotangent required, got " +
                            Tensor::shape_str(g.shape));
    Tensor db({g.dim(0)});
    const std::size_t plane = static_cast<std::size_t>(g.dim(1)) * g.dim(2);
    for (int c = 0; c < g.dim(0); ++c) {
        double acc = 0.0;
        const double* p = g.data() + c * plane;
        for (std::size_t t = 0; t < plane; ++t) acc += p[t];
        db[c] = acc;
    }
    return db;
}

std::pair<Tensor, PoolIndices> maxpool(const Tensor& x, int window) {
    need(x.rank() == 3, "maxpool: rank-3 input required, got " + Tensor::shape_str(x.shape));
    need(window >= 1 && window <= 255, "maxpool: window " + std::to_string(window));
    need(x.dim(1) % window == 0 && x.dim(2) % window == 0,
         "maxpool: spatial dims " + std::to_string(x.dim(1)) + "x" +
             std::to_string(x.dim(2)) + " not divisible by window " + std::to_string(window));
    const int c = x.dim(0), oh = x.dim(1) / window, ow = x.dim(2) / window;

    Tensor y({c, oh, ow});
    PoolIndices ind;
    ind.channels = c;
    ind.out_h = oh;
    ind.out_w = ow;
    ind.window = window;
    ind.row_off.resize(ind.cells());
    ind.col_off.resize(ind.cells());

    std::size_t cell = 0;
    for (int i = 0; i < c; ++i)
        for (int r = 0; r < oh; ++r)
            for (int q = 0; q < ow; ++q, ++cell) {
                double best = x.at(i, r * window, q * window);
                int bj = 0, bk = 0;
                for (int j = 0; j < window; ++j)
                    for (int k = 0; k < window; ++k) {
                        const double val = x.at(i, r * window + j, q * window + k);
                        if (val > best) {  // strict: ties keep first in row-major order
                            best = val;
                            bj = j;
                            bk = k;
                        }
                    }
                y.at(i, r, q) = best;
                ind.row_off[cell] = static_cast<unsigned char>(bj);
                ind.col_off[cell] = static_cast<unsigned char>(bk);
            }
    return {std::move(y), std::move(ind)};
}

Tensor unpool(const Tensor& y, const PoolIndices& ind) {
    need(y.rank() == 3 && y.dim(0) == ind.channels && y.dim(1) == ind.out_h &&
             y.dim(2) == ind.out_w,
         "unpool: pooled tensor " + Tensor::shape_str(y.shape) + " vs indices for [" +
             std::to_string(ind.channels) + "," + std::to_string(ind.out_h) + "," +
             std::to_string(ind.out_w) + "]");
    const int f = ind.window;
    Tensor out({ind.channels, ind.out_h * f, ind.out_w * f});
    std::size_t cell = 0;
    for (int i = 0; i < ind.channels; ++i)
        for (int r = 0; r < ind.out_h; ++r)
            for (int q = 0; q < ind.out_w; ++q, ++cell)
                out.at(i, r * f + ind.row_off[cell], q * f + ind.col_off[cell]) = y.at(i, r, q);
    return out;
}

Tensor pool_select(const Tensor& x, const PoolIndices& ind) {
    const int f = ind.window;
    need(x.rank() == 3 && x.dim(0) == ind.channels && x.dim(1) == ind.out_h * f &&
             x.dim(2) == ind.out_w * f,
         "pool_select: tensor " + Tensor::shape_str(x.shape) + " vs indices for [" +
             std::to_string(ind.channels) + "," + std::to_string(ind.out_h * f) + "," +
             std::to_string(ind.out_w * f) + "]");
    Tensor y({ind.channels, ind.out_h, ind.out_w});
    std::size_t cell = 0;
    for (int i = 0; i < ind.channels; ++i)
        for (int r = 0; r < ind.out_h; ++r)
            for (int q = 0; q < ind.out_w; ++q, ++cell)
                y.at(i, r, q) = x.at(i, r * f + ind.row_off[cell], q * f + ind.col_off[cell]);
    return y;
}

Tensor hard_sigmoid(const Tensor& z) {
    Tensor out = z;
    for (double& x : out.v) x = hard_sigmoid(x);
    return out;
}

Tensor hard_sigmoid_deriv(const Tensor& z) {
    Tensor out = z;
    for (double& x : out.v) x = hard_sigmoid_deriv(x);
    return out;
}

Tensor softmax(const Tensor& z) {
    need(z.numel() > 0, "softmax: empty input");
    Tensor out = z;
    double m = out.v[0];
    for (double x : out.v) m = std::max(m, x);
    double sum = 0.0;
    for (double& x : out.v) {
        x = std::exp(x - m);
        sum += x;
    }
    for (double& x : out.v) x /= sum;
    return out;
}

double gdot(const Tensor& a, const Tensor& b) {
    a.check_same(b, "gdot");
    double s = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) s += a.v[i] * b.v[i];
    return s;
}

Tensor matvec(const Tensor& w, const Tensor& x) {
    need(w.rank() == 2 && x.rank() == 1 && w.dim(1) == x.dim(0),
         "matvec: " + Tensor::shape_str(w.shape) + " * " + Tensor::shape_str(x.shape));
    Tensor y({w.dim(0)});
    for (int r = 0; r < w.dim(0); ++r) {
        double acc = 0.0;
        const double* row = &w.v[static_cast<std::size_t>(r) * w.dim(1)];
        for (int c = 0; c < w.dim(1); ++c) acc += row[c] * x[c];
        y[r] = acc;
    }
    return y;
}

Tensor matTvec(const Tensor& w, const Tensor& y) {
    need(w.rank() == 2 && y.rank() == 1 && w.dim(0) == y.dim(0),
         "matTvec: " + Tensor::shape_str(w.shape) + "^T * " + Tensor::shape_str(y.shape));
    Tensor x({w.dim(1)});
    for (int r = 0; r < w.dim(0); ++r) {
        const double yr = y[r];
        if (yr == 0.0) continue;
        const double* row = &w.v[static_cast<std::size_t>(r) * w.dim(1)];
        for (int c = 0; c < w.dim(1); ++c) x[c] += row[c] * yr;
    }
    return x;
}

Tensor outer(const Tensor& a, const Tensor& b) {
    need(a.rank() == 1 && b.rank() == 1,
         "outer: " + Tensor::shape_str(a.shape) + " x " + Tensor::shape_str(b.shape));
    Tensor m({a.dim(0), b.dim(0)});
    for (int r = 0; r < a.dim(0); ++r)
        for (int c = 0; c < b.dim(0); ++c) m.at(r, c) = a[r] * b[c];
    return m;
}

Tensor matvec_flat(const Tensor& w, const Tensor& t) {
    need(w.rank() == 2 && static_cast<std::size_t>(w.dim(1)) == t.numel(),
         "matvec_flat: " + Tensor::shape_str(w.shape) + " cannot consume " +
             Tensor::shape_str(t.shape));
    Tensor y({w.dim(0)});
    for (int r = 0; r < w.dim(0); ++r) {
        double acc = 0.0;
        const double* row = &w.v[static_cast<std::size_t>(r) * w.dim(1)];
        for (std::size_t c = 0; c < t.numel(); ++c) acc += row[c] * t.v[c];
        y[r] = acc;
    }
    return y;
}

Tensor matTvec_flat(const Tensor& w, const Tensor& t) {
    need(w.rank() == 2 && static_cast<std::size_t>(w.dim(0)) == t.numel(),
         "matTvec_flat: " + Tensor::shape_str(w.shape) + "^T cannot consume " +
             Tensor::shape_str(t.shape));
    Tensor x({w.dim(1)});
    for (int r = 0; r < w.dim(0); ++r) {
        const double yr = t.v[r];
        if (yr == 0.0) continue;
        const double* row = &w.v[static_cast<std::size_t>(r) * w.dim(1)];
        for (int c = 0; c < w.dim(1); ++c) x[c] += row[c] * yr;
    }
    return x;
}

Tensor outer_flat(const Tensor& a, const Tensor& b) {
    Tensor m({static_cast<int>(a.numel()), static_cast<int>(b.numel())});
    for (std::size_t r = 0; r < a.numel(); ++r)
        for (std::size_t c = 0; c < b.numel(); ++c)
            m.v[r * b.numel() + c] = a.v[r] * b.v[c];
    return m;
}

}  // namespace eqprop
