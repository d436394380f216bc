#include "tog/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

#include "tog/errors.hpp"
#include "tog/rng.hpp"

namespace tog {

namespace {

enum class Broadcast { Same, Scalar, LastAxis };

Broadcast broadcast_mode(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape == b.shape) return Broadcast::Same;
    if (b.numel() == 1) return Broadcast::Scalar;
    if (b.shape.size() == 1 && !a.shape.empty() && b.shape[0] == a.shape.back())
        return Broadcast::LastAxis;
    throw DimensionError(std::string(op) + ": cannot broadcast " + shape_str(b.shape) + " onto " +
                         shape_str(a.shape));
}

void check_matmul_shapes(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape.size() != 2 || b.shape.size() != 2 || a.shape[1] != b.shape[0]) {
        throw DimensionError(std::string(op) + ": incompatible shapes " + shape_str(a.shape) +
                             " and " + shape_str(b.shape));
    }
}

// Raw C[m,n] += A[m,k]*B[k,n]; inner loop runs over contiguous B rows.
// Accumulates in double so finite-difference probes at step 1e-2 stay
// within the 1e-3 tolerance; storage remains f32.
void gemm_acc(const float* a, const float* b, float* c, int m, int k, int n) {
    thread_local std::vector<double> acc;
    acc.assign(static_cast<std::size_t>(n), 0.0);
    for (int i = 0; i < m; ++i) {
        const float* arow = a + static_cast<std::size_t>(i) * k;
        float* crow = c + static_cast<std::size_t>(i) * n;
        for (int j = 0; j < n; ++j) acc[j] = crow[j];
        for (int p = 0; p < k; ++p) {
            const float av = arow[p];
            if (av == 0.0f) continue;
            const double avd = av;
            const float* brow = b + static_cast<std::size_t>(p) * n;
            for (int j = 0; j < n; ++j) acc[j] += avd * brow[j];
        }
        for (int j = 0; j < n; ++j) crow[j] = static_cast<float>(acc[j]);
    }
}

struct ConvDims {
    int h, w, cin, kh, kw, cout, oh, ow;
};

ConvDims conv_dims(const Tensor& x, const Tensor& w, const Tensor& bias, int stride, int pad) {
    if (x.shape.size() != 3) throw DimensionError("conv2d: input must be [H,W,C], got " + shape_str(x.shape));
    if (w.shape.size() != 4) throw DimensionError("conv2d: kernel must be [kh,kw,Cin,Cout], got " + shape_str(w.shape));
    ConvDims d;
    d.h = x.shape[0];
    d.w = x.shape[1];
    d.cin = x.shape[2];
    d.kh = w.shape[0];
    d.kw = w.shape[1];
    d.cout = w.shape[3];
    if (w.shape[2] != d.cin) {
        throw DimensionError("conv2d: kernel expects " + std::to_string(w.shape[2]) +
                             " input channels, input has " + std::to_string(d.cin));
    }
    if (bias.shape != Shape{d.cout}) {
        throw DimensionError("conv2d: bias shape " + shape_str(bias.shape) + " != [" +
                             std::to_string(d.cout) + "]");
    }
    if (stride < 1) throw ConfigError("conv2d: stride must be >= 1");
    if (pad < 0) throw ConfigError("conv2d: padding must be >= 0");
    if (d.kh > d.h + 2 * pad || d.kw > d.w + 2 * pad) {
        throw ConfigError("conv2d: kernel " + std::to_string(d.kh) + "x" + std::to_string(d.kw) +
                          " does not fit input " + shape_str(x.shape) + " with padding " +
                          std::to_string(pad));
    }
    if ((d.h + 2 * pad - d.kh) % stride != 0 || (d.w + 2 * pad - d.kw) % stride != 0) {
        throw ConfigError("conv2d: non-integral output size for input " + shape_str(x.shape) +
                          ", kernel " + std::to_string(d.kh) + "x" + std::to_string(d.kw) +
                          ", stride " + std::to_string(stride) + ", padding " + std::to_string(pad));
    }
    d.oh = (d.h + 2 * pad - d.kh) / stride + 1;
    d.ow = (d.w + 2 * pad - d.kw) / stride + 1;
    return d;
}

// Patch matrix [oh*ow, kh*kw*cin]; out-of-bounds taps stay zero.
void im2col(const float* x, const ConvDims& d, int stride, int pad, float* cols) {
    const std::size_t patch = static_cast<std::size_t>(d.kh) * d.kw * d.cin;
    std::memset(cols, 0, static_cast<std::size_t>(d.oh) * d.ow * patch * sizeof(float));
    for (int oy = 0; oy < d.oh; ++oy) {
        for (int ox = 0; ox < d.ow; ++ox) {
            float* prow = cols + (static_cast<std::size_t>(oy) * d.ow + ox) * patch;
            for (int ky = 0; ky < d.kh; ++ky) {
                const int iy = oy * stride + ky - pad;
                if (iy < 0 || iy >= d.h) continue;
                for (int kx = 0; kx < d.kw; ++kx) {
                    const int ix = ox * stride + kx - pad;
                    if (ix < 0 || ix >= d.w) continue;
                    const float* src = x + (static_cast<std::size_t>(iy) * d.w + ix) * d.cin;
                    float* dst = prow + (static_cast<std::size_t>(ky) * d.kw + kx) * d.cin;
                    std::memcpy(dst, src, static_cast<std::size_t>(d.cin) * sizeof(float));
                }
            }
        }
    }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    check_matmul_shapes(a, b, "matmul");
    const int m = a.shape[0], k = a.shape[1], n = b.shape[1];
    Tensor out = Tensor::zeros({m, n});
    gemm_acc(a.ptr(), b.ptr(), out.ptr(), m, k, n);

    if (tracing(a, b)) {
        out.requires_grad = true;
        out.ensure_grad();
        Tensor ac = a, bc = b, oc = out;
        Tape::active()->record([ac, bc, oc, m, k, n]() mutable {
            const float* dc = oc.grad_ptr();
            if (ac.requires_grad) {
                // dA[i,p] = sum_j dC[i,j] * B[p,j]
                float* da = ac.grad_ptr();
                const float* bp = bc.ptr();
                for (int i = 0; i < m; ++i) {
                    const float* dcrow = dc + static_cast<std::size_t>(i) * n;
                    float* darow = da + static_cast<std::size_t>(i) * k;
                    for (int p = 0; p < k; ++p) {
                        const float* brow = bp + static_cast<std::size_t>(p) * n;
                        float acc = 0.0f;
                        for (int j = 0; j < n; ++j) acc += dcrow[j] * brow[j];
                        darow[p] += acc;
                    }
                }
            }
            if (bc.requires_grad) {
                // dB[p,j] = sum_i A[i,p] * dC[i,j]
                float* db = bc.grad_ptr();
                const float* ap = ac.ptr();
                for (int i = 0; i < m; ++i) {
                    const float* arow = ap + static_cast<std::size_t>(i) * k;
                    const float* dcrow = dc + static_cast<std::size_t>(i) * n;
                    for (int p = 0; p < k; ++p) {
                        const float av = arow[p];
                        if (av == 0.0f) continue;
                        float* dbrow = db + static_cast<std::size_t>(p) * n;
                        for (int j = 0; j < n; ++j) dbrow[j] += av * dcrow[j];
                    }
                }
            }
        });
    }
    return out;
}

Tensor transpose2d(const Tensor& a) {
    if (a.shape.size() != 2) throw DimensionError("transpose2d: need 2-d tensor, got " + shape_str(a.shape));
    const int m = a.shape[0], n = a.shape[1];
    Tensor out = Tensor::zeros({n, m});
    const float* src = a.ptr();
    float* dst = out.ptr();
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
            dst[static_cast<std::size_t>(j) * m + i] = src[static_cast<std::size_t>(i) * n + j];

    if (tracing(a)) {
        out.requires_grad = true;
        out.ensure_grad();
        Tensor ac = a, oc = out;
        Tape::active()->record([ac, oc, m, n]() mutable {
            const float* dg = oc.grad_ptr();
            float* da = ac.grad_ptr();
            for (int j = 0; j < n; ++j)
                for (int i = 0; i < m; ++i)
                    da[static_cast<std::size_t>(i) * n + j] += dg[static_cast<std::size_t>(j) * m + i];
        });
    }
    return out;
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride, int pad) {
    const ConvDims d = conv_dims(x, w, bias, stride, pad);
    const std::size_t patch = static_cast<std::size_t>(d.kh) * d.kw * d.cin;
    const std::size_t rows = static_cast<std::size_t>(d.oh) * d.ow;

    std::vector<float> cols(rows * patch);
    im2col(x.ptr(), d, stride, pad, cols.data());

    Tensor out = Tensor::zeros({d.oh, d.ow, d.cout});
    float* op = out.ptr();
    const float* bp = bias.ptr();
    for (std::size_t r = 0; r < rows; ++r) {
        float* orow = op + r * d.cout;
        for (int c = 0; c < d.cout; ++c) orow[c] = bp[c];
    }
    gemm_acc(cols.data(), w.ptr(), op, static_cast<int>(rows), static_cast<int>(patch), d.cout);

    if (Tape::active() && (x.requires_grad || w.requires_grad || bias.requires_grad)) {
        out.requires_grad = true;
        out.ensure_grad();
        Tensor xc = x, wc = w, bc = bias, oc = out;
        Tape::active()->record([xc, wc, bc, oc, d, stride, pad, patch, rows]() mutable {
            const float* dout = oc.grad_ptr();
            if (bc.requires_grad) {
                float* db = bc.grad_ptr();
                for (std::size_t r = 0; r < rows; ++r) {
                    const float* drow = dout + r * d.cout;
                    for (int c = 0; c < d.cout; ++c) db[c] += drow[c];
                }
            }
            if (wc.requires_grad) {
                // dW[p,c] = sum_r cols[r,p] * dOut[r,c]; patches recomputed.
                std::vector<float> cols2(rows * patch);
                im2col(xc.ptr(), d, stride, pad, cols2.data());
                float* dw = wc.grad_ptr();
                for (std::size_t r = 0; r < rows; ++r) {
                    const float* crow = cols2.data() + r * patch;
                    const float* drow = dout + r * d.cout;
                    for (std::size_t p = 0; p < patch; ++p) {
                        const float cv = crow[p];
                        if (cv == 0.0f) continue;
                        float* dwrow = dw + p * d.cout;
                        for (int c = 0; c < d.cout; ++c) dwrow[c] += cv * drow[c];
                    }
                }
            }
            if (xc.requires_grad) {
                // dCols = dOut * W^T, scattered back through the patch map.
                float* dx = xc.grad_ptr();
                const float* wp = wc.ptr();
                std::vector<float> dpatch(patch);
                for (int oy = 0; oy < d.oh; ++oy) {
                    for (int ox = 0; ox < d.ow; ++ox) {
                        const float* drow =
                            dout + (static_cast<std::size_t>(oy) * d.ow + ox) * d.cout;
                        for (std::size_t p = 0; p < patch; ++p) {
                            const float* wrow = wp + p * d.cout;
                            float acc = 0.0f;
                            for (int c = 0; c < d.cout; ++c) acc += drow[c] * wrow[c];
                            dpatch[p] = acc;
                        }
                        for (int ky = 0; ky < d.kh; ++ky) {
                            const int iy = oy * stride + ky - pad;
                            if (iy < 0 || iy >= d.h) continue;
                            for (int kx = 0; kx < d.kw; ++kx) {
                                const int ix = ox * stride + kx - pad;
                                if (ix < 0 || ix >= d.w) continue;
                                const float* src =
                                    dpatch.data() + (static_cast<std::size_t>(ky) * d.kw + kx) * d.cin;
                                float* dst =
                                    dx + (static_cast<std::size_t>(iy) * d.w + ix) * d.cin;
                                for (int c = 0; c < d.cin; ++c) dst[c] += src[c];
                            }
                        }
                    }
                }
            }
        });
    }
    return out;
}

Tensor conv_transpose2d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride) {
    if (x.shape.size() != 3)
        throw DimensionError("conv_transpose2d: input must be [H,W,C], got " + shape_str(x.shape));
    if (w.shape.size() != 4)
        throw DimensionError("conv_transpose2d: kernel must be [kh,kw,Cin,Cout], got " +
                             shape_str(w.shape));
    if (stride < 1) throw ConfigError("conv_transpose2d: stride must be >= 1");
    const int h = x.shape[0], wd = x.shape[1], cin = x.shape[2];
    const int kh = w.shape[0], kw = w.shape[1], cout = w.shape[3];
    if (w.shape[2] != cin) {
        throw DimensionError("conv_transpose2d: kernel expects " + std::to_string(w.shape[2]) +
                             " input channels, input has " + std::to_string(cin));
    }
    if (bias.shape != Shape{cout}) {
        throw DimensionError("conv_transpose2d: bias shape " + shape_str(bias.shape) + " != [" +
                             std::to_string(cout) + "]");
    }
    const int oh = (h - 1) * stride + kh;
    const int ow = (wd - 1) * stride + kw;

    Tensor out = Tensor::zeros({oh, ow, cout});
    float* op = out.ptr();
    const float* bp = bias.ptr();
    std::vector<double> acc(static_cast<std::size_t>(oh) * ow * cout);
    for (std::size_t r = 0; r < static_cast<std::size_t>(oh) * ow; ++r) {
        double* orow = acc.data() + r * cout;
        for (int c = 0; c < cout; ++c) orow[c] = bp[c];
    }
    const float* xp = x.ptr();
    const float* wp = w.ptr();
    for (int iy = 0; iy < h; ++iy) {
        for (int ix = 0; ix < wd; ++ix) {
            const float* xsite = xp + (static_cast<std::size_t>(iy) * wd + ix) * cin;
            for (int ky = 0; ky < kh; ++ky) {
                const int oy = iy * stride + ky;
                for (int kx = 0; kx < kw; ++kx) {
                    const int ox = ix * stride + kx;
                    double* osite = acc.data() + (static_cast<std::size_t>(oy) * ow + ox) * cout;
                    const float* wsite = wp + (static_cast<std::size_t>(ky) * kw + kx) * cin * cout;
                    for (int ci = 0; ci < cin; ++ci) {
                        const float xv = xsite[ci];
                        if (xv == 0.0f) continue;
                        const double xvd = xv;
                        const float* wrow = wsite + static_cast<std::size_t>(ci) * cout;
                        for (int co = 0; co < cout; ++co) osite[co] += xvd * wrow[co];
                    }
                }
            }
        }
    }
    for (std::size_t i = 0; i < acc.size(); ++i) op[i] = static_cast<float>(acc[i]);

    if (Tape::active() && (x.requires_grad || w.requires_grad || bias.requires_grad)) {
        out.requires_grad = true;
        out.ensure_grad();
        Tensor xc = x, wc = w, bc = bias, oc = out;
        Tape::active()->record([xc, wc, bc, oc, h, wd, cin, kh, kw, cout, ow, stride]() mutable {
            const float* dout = oc.grad_ptr();
            if (bc.requires_grad) {
                float* db = bc.grad_ptr();
                const std::size_t sites = oc.numel() / cout;
                for (std::size_t r = 0; r < sites; ++r) {
                    const float* drow = dout + r * cout;
                    for (int c = 0; c < cout; ++c) db[c] += drow[c];
                }
            }
            const float* xp2 = xc.ptr();
            const float* wp2 = wc.ptr();
            float* dx = xc.requires_grad ? xc.grad_ptr() : nullptr;
            float* dw = wc.requires_grad ? wc.grad_ptr() : nullptr;
            for (int iy = 0; iy < h; ++iy) {
                for (int ix = 0; ix < wd; ++ix) {
                    const std::size_t xoff = (static_cast<std::size_t>(iy) * wd + ix) * cin;
                    for (int ky = 0; ky < kh; ++ky) {
                        const int oy = iy * stride + ky;
                        for (int kx = 0; kx < kw; ++kx) {
                            const int ox = ix * stride + kx;
                            const float* drow =
                                dout + (static_cast<std::size_t>(oy) * ow + ox) * cout;
                            const std::size_t woff =
                                (static_cast<std::size_t>(ky) * kw + kx) * cin * cout;
                            for (int ci = 0; ci < cin; ++ci) {
                                const float* wrow = wp2 + woff + static_cast<std::size_t>(ci) * cout;
                                if (dx) {
                                    float acc = 0.0f;
                                    for (int co = 0; co < cout; ++co) acc += drow[co] * wrow[co];
                                    dx[xoff + ci] += acc;
                                }
                                if (dw) {
                                    const float xv = xp2[xoff + ci];
                                    if (xv != 0.0f) {
                                        float* dwrow = dw + woff + static_cast<std::size_t>(ci) * cout;
                                        for (int co = 0; co < cout; ++co) dwrow[co] += xv * drow[co];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        });
    }
    return out;
}

namespace {

template <typename Fwd>
Tensor binary_elementwise(const Tensor& a, const Tensor& b, const char* name, Fwd fwd,
                          void (*bwd)(const Tensor&, const Tensor&, const Tensor&, Broadcast)) {
    const Broadcast mode = broadcast_mode(a, b, name);
    Tensor out = Tensor::zeros(a.shape);
    const std::size_t n = a.numel();
    const float* ap = a.ptr();
    const float* bp = b.ptr();
    float* op = out.ptr();
    if (mode == Broadcast::Same) {
        for (std::size_t i = 0; i < n; ++i) op[i] = fwd(ap[i], bp[i]);
    } else if (mode == Broadcast::Scalar) {
        const float bv = bp[0];
        for (std::size_t i = 0; i < n; ++i) op[i] = fwd(ap[i], bv);
    } else {
        const std::size_t last = static_cast<std::size_t>(a.shape.back());
        for (std::size_t i = 0; i < n; ++i) op[i] = fwd(ap[i], bp[i % last]);
    }
    if (tracing(a, b)) {
        out.requires_grad = true;
        out.ensure_grad();
        Tensor ac = a, bc = b, oc = out;
        Tape::active()->record([ac, bc, oc, mode, bwd]() { bwd(ac, bc, oc, mode); });
    }
    return out;
}

void add_backward(const Tensor& a, const Tensor& b, const Tensor& out, Broadcast mode) {
    const std::size_t n = out.numel();
    const float* dg = out.grad_ptr();
    if (a.requires_grad) {
        float* da = const_cast<Tensor&>(a).grad_ptr();
        for (std::size_t i = 0; i < n; ++i) da[i] += dg[i];
    }
    if (b.requires_grad) {
        float* db = const_cast<Tensor&>(b).grad_ptr();
        if (mode == Broadcast::Same) {
            for (std::size_t i = 0; i < n; ++i) db[i] += dg[i];
        } else if (mode == Broadcast::Scalar) {
            float acc = 0.0f;
            for (std::size_t i = 0; i < n; ++i) acc += dg[i];
            db[0] += acc;
        } else {
            const std::size_t last = static_cast<std::size_t>(a.shape.back());
            for (std::size_t i = 0; i < n; ++i) db[i % last] += dg[i];
        }
    }
}

void mul_backward(const Tensor& a, const Tensor& b, const Tensor& out, Broadcast mode) {
    const std::size_t n = out.numel();
    const float* dg = out.grad_ptr();
    const float* ap = a.ptr();
    const float* bp = b.ptr();
    const std::size_t last = a.shape.empty() ? 1 : static_cast<std::size_t>(a.shape.back());
    if (a.requires_grad) {
        float* da = const_cast<Tensor&>(a).grad_ptr();
        if (mode == Broadcast::Same) {
            for (std::size_t i = 0; i < n; ++i) da[i] += dg[i] * bp[i];
        } else if (mode == Broadcast::Scalar) {
            const float bv = bp[0];
            for (std::size_t i = 0; i < n; ++i) da[i] += dg[i] * bv;
        } else {
            for (std::size_t i = 0; i < n; ++i) da[i] += dg[i] * bp[i % last];
        }
    }
    if (b.requires_grad) {
        float* db = const_cast<Tensor&>(b).grad_ptr();
        if (mode == Broadcast::Same) {
            for (std::size_t i = 0; i < n; ++i) db[i] += dg[i] * ap[i];
        } else if (mode == Broadcast::Scalar) {
            float acc = 0.0f;
            for (std::size_t i = 0; i < n; ++i) acc += dg[i] * ap[i];
            db[0] += acc;
        } else {
            for (std::size_t i = 0; i < n; ++i) db[i % last] += dg[i] * ap[i];
        }
    }
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    return binary_elementwise(a, b, "add", [](float x, float y) { return x + y; }, add_backward);
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary_elementwise(a, b, "mul", [](float x, float y) { return x * y; }, mul_backward);
}

Tensor relu(const Tensor& a) {
    Tensor out = Tensor::zeros(a.shape);
    const std::size_t n = a.numel();
    const float* ap = a.ptr();
    float* op = out.ptr();
    for (std::size_t i = 0; i < n; ++i) op[i] = ap[i] > 0.0f ? ap[i] : 0.0f;
    if (tracing(a)) {
        out.requires_grad = true;
        out.ensure_grad();
        Tensor ac = a, oc = out;
        Tape::active()->record([ac, oc]() mutable {
            const std::size_t n2 = ac.numel();
            const float* dg = oc.grad_ptr();
            const float* av = ac.ptr();
            float* da = ac.grad_ptr();
            for (std::size_t i = 0; i < n2; ++i)
                if (av[i] > 0.0f) da[i] += dg[i];
        });
    }
    return out;
}

Tensor sigmoid(const Tensor& a) {
    Tensor out = Tensor::zeros(a.shape);
    const std::size_t n = a.numel();
    const float* ap = a.ptr();
    float* op = out.ptr();
    for (std::size_t i = 0; i < n; ++i) {
        const float x = ap[i];
        if (x >= 0.0f) {
            op[i] = 1.0f / (1.0f + std::exp(-x));
        } else {
            const float e = std::exp(x);
            op[i] = e / (1.0f + e);
        }
    }
    if (tracing(a)) {
        out.requires_grad = true;
        out.ensure_grad();
        Tensor ac = a, oc = out;
        Tape::active()->record([ac, oc]() mutable {
            const std::size_t n2 = ac.numel();
            const float* dg = oc.grad_ptr();
            const float* y = oc.ptr();
            float* da = ac.grad_ptr();
            for (std::size_t i = 0; i < n2; ++i) da[i] += dg[i] * y[i] * (1.0f - y[i]);
        });
    }
    return out;
}

Tensor scale(const Tensor& a, float c) {
    Tensor out = Tensor::zeros(a.shape);
    const std::size_t n = a.numel();
    const float* ap = a.ptr();
    float* op = out.ptr();
    for (std::size_t i = 0; i < n; ++i) op[i] = ap[i] * c;
    if (tracing(a)) {
        out.requires_grad = true;
        out.ensure_grad();
        Tensor ac = a, oc = out;
        Tape::active()->record([ac, oc, c]() mutable {
            const std::size_t n2 = ac.numel();
            const float* dg = oc.grad_ptr();
            float* da = ac.grad_ptr();
            for (std::size_t i = 0; i < n2; ++i) da[i] += dg[i] * c;
        });
    }
    return out;
}

Tensor softmax(const Tensor& a, int axis) {
    if (axis < 0) axis += static_cast<int>(a.shape.size());
    if (axis < 0 || axis >= static_cast<int>(a.shape.size()))
        throw DimensionError("softmax: axis out of range for " + shape_str(a.shape));
    const int len = a.shape[axis];
    std::size_t inner = 1, outer = 1;
    for (int i = axis + 1; i < static_cast<int>(a.shape.size()); ++i) inner *= a.shape[i];
    for (int i = 0; i < axis; ++i) outer *= a.shape[i];

    Tensor out = Tensor::zeros(a.shape);
    const float* ap = a.ptr();
    float* op = out.ptr();
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
            const std::size_t base = o * len * inner + in;
            float mx = ap[base];
            for (int l = 1; l < len; ++l) mx = std::max(mx, ap[base + l * inner]);
            double sum = 0.0;
            for (int l = 0; l < len; ++l) {
                const float e = std::exp(ap[base + l * inner] - mx);
                op[base + l * inner] = e;
                sum += e;
            }
            const float norm = static_cast<float>(1.0 / sum);
            for (int l = 0; l < len; ++l) op[base + l * inner] *= norm;
        }
    }
    if (tracing(a)) {
        out.requires_grad = true;
        out.ensure_grad();
        Tensor ac = a, oc = out;
        Tape::active()->record([ac, oc, len, inner, outer]() mutable {
            // dx = y * (dy - sum(dy*y)) along the axis
            const float* y = oc.ptr();
            const float* dy = oc.grad_ptr();
            float* da = ac.grad_ptr();
            for (std::size_t o = 0; o < outer; ++o) {
                for (std::size_t in = 0; in < inner; ++in) {
                    const std::size_t base = o * len * inner + in;
                    double dot = 0.0;
                    for (int l = 0; l < len; ++l) {
                        const std::size_t idx = base + l * inner;
                        dot += static_cast<double>(dy[idx]) * y[idx];
                    }
                    const float d = static_cast<float>(dot);
                    for (int l = 0; l < len; ++l) {
                        const std::size_t idx = base + l * inner;
                        da[idx] += y[idx] * (dy[idx] - d);
                    }
                }
            }
        });
    }
    return out;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
    if (x.shape.empty() || w.shape.size() != 2)
        throw DimensionError("linear: need x [...,din] and W [din,dout]");
    const int din = w.shape[0], dout = w.shape[1];
    if (x.shape.back() != din) {
        throw DimensionError("linear: input width " + std::to_string(x.shape.back()) +
                             " != W rows " + std::to_string(din));
    }
    if (b.shape != Shape{dout}) {
        throw DimensionError("linear: bias shape " + shape_str(b.shape) + " != [" +
                             std::to_string(dout) + "]");
    }
    const std::size_t rows = x.numel() / static_cast<std::size_t>(din);
    Shape out_shape = x.shape;
    out_shape.back() = dout;
    Tensor out = Tensor::zeros(out_shape);
    float* op = out.ptr();
    const float* bp = b.ptr();
    for (std::size_t r = 0; r < rows; ++r) {
        float* orow = op + r * dout;
        for (int c = 0; c < dout; ++c) orow[c] = bp[c];
    }
    gemm_acc(x.ptr(), w.ptr(), op, static_cast<int>(rows), din, dout);

    if (Tape::active() && (x.requires_grad || w.requires_grad || b.requires_grad)) {
        out.requires_grad = true;
        out.ensure_grad();
        Tensor xc = x, wc = w, bc = b, oc = out;
        Tape::active()->record([xc, wc, bc, oc, rows, din, dout]() mutable {
            const float* dg = oc.grad_ptr();
            if (bc.requires_grad) {
                float* db = bc.grad_ptr();
                for (std::size_t r = 0; r < rows; ++r) {
                    const float* drow = dg + r * dout;
                    for (int c = 0; c < dout; ++c) db[c] += drow[c];
                }
            }
            if (xc.requires_grad) {
                float* dx = xc.grad_ptr();
                const float* wp = wc.ptr();
                for (std::size_t r = 0; r < rows; ++r) {
                    const float* drow = dg + r * dout;
                    float* dxrow = dx + r * din;
                    for (int p = 0; p < din; ++p) {
                        const float* wrow = wp + static_cast<std::size_t>(p) * dout;
                        float acc = 0.0f;
                        for (int c = 0; c < dout; ++c) acc += drow[c] * wrow[c];
                        dxrow[p] += acc;
                    }
                }
            }
            if (wc.requires_grad) {
                float* dw = wc.grad_ptr();
                const float* xp = xc.ptr();
                for (std::size_t r = 0; r < rows; ++r) {
                    const float* xrow = xp + r * din;
                    const float* drow = dg + r * dout;
                    for (int p = 0; p < din; ++p) {
                        const float xv = xrow[p];
                        if (xv == 0.0f) continue;
                        float* dwrow = dw + static_cast<std::size_t>(p) * dout;
                        for (int c = 0; c < dout; ++c) dwrow[c] += xv * drow[c];
                    }
                }
            }
        });
    }
    return out;
}

Tensor upsample_nearest(const Tensor& x, int factor) {
    if (factor < 1) throw ConfigError("upsample_nearest: factor must be >= 1");
    if (x.shape.size() != 3)
        throw DimensionError("upsample_nearest: input must be [H,W,C], got " + shape_str(x.shape));
    const int h = x.shape[0], w = x.shape[1], c = x.shape[2];
    Tensor out = Tensor::zeros({h * factor, w * factor, c});
    const float* xp = x.ptr();
    float* op = out.ptr();
    const int ow = w * factor;
    for (int oy = 0; oy < h * factor; ++oy) {
        const int iy = oy / factor;
        for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox / factor;
            const float* src = xp + (static_cast<std::size_t>(iy) * w + ix) * c;
            float* dst = op + (static_cast<std::size_t>(oy) * ow + ox) * c;
            std::memcpy(dst, src, static_cast<std::size_t>(c) * sizeof(float));
        }
    }
    if (tracing(x)) {
        out.requires_grad = true;
        out.ensure_grad();
        Tensor xc = x, oc = out;
        Tape::active()->record([xc, oc, h, w, c, factor, ow]() mutable {
            const float* dg = oc.grad_ptr();
            float* dx = xc.grad_ptr();
            for (int oy = 0; oy < h * factor; ++oy) {
                const int iy = oy / factor;
                for (int ox = 0; ox < ow; ++ox) {
                    const int ix = ox / factor;
                    const float* src = dg + (static_cast<std::size_t>(oy) * ow + ox) * c;
                    float* dst = dx + (static_cast<std::size_t>(iy) * w + ix) * c;
                    for (int ch = 0; ch < c; ++ch) dst[ch] += src[ch];
                }
            }
        });
    }
    return out;
}

Tensor concat(const std::vector<Tensor>& xs, int axis) {
    if (xs.empty()) throw DimensionError("concat: empty input list");
    const int rank = static_cast<int>(xs[0].shape.size());
    if (axis < 0) axis += rank;
    if (axis < 0 || axis >= rank) throw DimensionError("concat: axis out of range");
    int axis_total = 0;
    for (const Tensor& t : xs) {
        if (static_cast<int>(t.shape.size()) != rank)
            throw DimensionError("concat: rank mismatch " + shape_str(t.shape));
        for (int i = 0; i < rank; ++i) {
            if (i != axis && t.shape[i] != xs[0].shape[i]) {
                throw DimensionError("concat: non-axis dims differ: " + shape_str(xs[0].shape) +
                                     " vs " + shape_str(t.shape));
            }
        }
        axis_total += t.shape[axis];
    }
    Shape out_shape = xs[0].shape;
    out_shape[axis] = axis_total;
    Tensor out = Tensor::zeros(out_shape);

    std::size_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= out_shape[i];
    for (int i = axis + 1; i < rank; ++i) inner *= out_shape[i];

    float* op = out.ptr();
    std::size_t off = 0;
    for (const Tensor& t : xs) {
        const std::size_t seg = static_cast<std::size_t>(t.shape[axis]) * inner;
        const float* tp = t.ptr();
        for (std::size_t o = 0; o < outer; ++o) {
            std::memcpy(op + o * static_cast<std::size_t>(axis_total) * inner + off * inner,
                        tp + o * seg, seg * sizeof(float));
        }
        off += static_cast<std::size_t>(t.shape[axis]);
    }

    bool any_grad = false;
    for (const Tensor& t : xs) any_grad |= t.requires_grad;
    if (Tape::active() && any_grad) {
        out.requires_grad = true;
        out.ensure_grad();
        std::vector<Tensor> parts = xs;
        Tensor oc = out;
        Tape::active()->record([parts, oc, outer, inner, axis_total, axis]() mutable {
            const float* dg = oc.grad_ptr();
            std::size_t off = 0;
            for (Tensor& t : parts) {
                const std::size_t seg = static_cast<std::size_t>(t.shape[axis]) * inner;
                if (t.requires_grad) {
                    float* dt = t.grad_ptr();
                    for (std::size_t o = 0; o < outer; ++o) {
                        const float* src =
                            dg + o * static_cast<std::size_t>(axis_total) * inner + off * inner;
                        float* dst = dt + o * seg;
                        for (std::size_t i = 0; i < seg; ++i) dst[i] += src[i];
                    }
                }
                off += static_cast<std::size_t>(t.shape[axis]);
            }
        });
    }
    return out;
}

Tensor embedding_lookup(const Tensor& table, const std::vector<int>& ids) {
    if (table.shape.size() != 2)
        throw DimensionError("embedding_lookup: table must be [V,d], got " + shape_str(table.shape));
    const int v = table.shape[0], d = table.shape[1];
    for (int id : ids) {
        if (id < 0 || id >= v) {
            throw IndexError("embedding_lookup: id " + std::to_string(id) + " outside [0," +
                             std::to_string(v) + ")");
        }
    }
    Tensor out = Tensor::zeros({static_cast<int>(ids.size()), d});
    const float* tp = table.ptr();
    float* op = out.ptr();
    for (std::size_t t = 0; t < ids.size(); ++t) {
        std::memcpy(op + t * d, tp + static_cast<std::size_t>(ids[t]) * d,
                    static_cast<std::size_t>(d) * sizeof(float));
    }
    if (tracing(table)) {
        out.requires_grad = true;
        out.ensure_grad();
        Tensor tc = table, oc = out;
        std::vector<int> idc = ids;
        Tape::active()->record([tc, oc, idc, d]() mutable {
            const float* dg = oc.grad_ptr();
            float* dt = tc.grad_ptr();
            for (std::size_t t = 0; t < idc.size(); ++t) {
                float* dst = dt + static_cast<std::size_t>(idc[t]) * d;
                const float* src = dg + t * d;
                for (int i = 0; i < d; ++i) dst[i] += src[i];
            }
        });
    }
    return out;
}

Tensor sum_all(const Tensor& a) {
    double acc = 0.0;
    const float* ap = a.ptr();
    const std::size_t n = a.numel();
    for (std::size_t i = 0; i < n; ++i) acc += ap[i];
    Tensor out = Tensor::scalar(static_cast<float>(acc));
    if (tracing(a)) {
        out.requires_grad = true;
        out.ensure_grad();
        Tensor ac = a, oc = out;
        Tape::active()->record([ac, oc]() mutable {
            const float g = oc.grad_ptr()[0];
            float* da = ac.grad_ptr();
            const std::size_t n2 = ac.numel();
            for (std::size_t i = 0; i < n2; ++i) da[i] += g;
        });
    }
    return out;
}

namespace {

constexpr float kBceEps = 1e-7f;

Tensor bce_impl(const Tensor& pred, const Tensor& target, const Tensor* mask) {
    if (pred.shape != target.shape) {
        throw DimensionError("bce: prediction " + shape_str(pred.shape) + " vs target " +
                             shape_str(target.shape));
    }
    const std::size_t n = pred.numel();
    std::size_t ratio = 1;
    if (mask) {
        if (mask->numel() == 0 || n % mask->numel() != 0) {
            throw DimensionError("bce: mask of " + std::to_string(mask->numel()) +
                                 " elements cannot tile " + std::to_string(n));
        }
        ratio = n / mask->numel();
    }
    const float* pp = pred.ptr();
    const float* tp = target.ptr();
    const float* mp = mask ? mask->ptr() : nullptr;

    std::size_t count = 0;
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (mp && mp[i / ratio] == 0.0f) continue;
        ++count;
        const float p = std::clamp(pp[i], kBceEps, 1.0f - kBceEps);
        const float t = tp[i];
        acc -= static_cast<double>(t) * std::log(static_cast<double>(p)) +
               static_cast<double>(1.0f - t) * std::log(static_cast<double>(1.0f - p));
    }
    Tensor out = Tensor::scalar(count ? static_cast<float>(acc / static_cast<double>(count)) : 0.0f);
    if (count == 0) return out;  // all-masked: constant, nothing to differentiate

    if (tracing(pred, target)) {
        out.requires_grad = true;
        out.ensure_grad();
        Tensor pc = pred, tc = target, oc = out;
        Tensor mc = mask ? *mask : Tensor();
        const std::size_t cnt = count;
        Tape::active()->record([pc, tc, oc, mc, ratio, cnt]() mutable {
            const float g = oc.grad_ptr()[0] / static_cast<float>(cnt);
            const std::size_t n2 = pc.numel();
            const float* pp2 = pc.ptr();
            const float* tp2 = tc.ptr();
            const float* mp2 = mc.defined() ? mc.ptr() : nullptr;
            float* dp = pc.requires_grad ? pc.grad_ptr() : nullptr;
            if (!dp) return;
            for (std::size_t i = 0; i < n2; ++i) {
                if (mp2 && mp2[i / ratio] == 0.0f) continue;
                const float praw = pp2[i];
                if (praw < kBceEps || praw > 1.0f - kBceEps) continue;  // clamped: flat
                dp[i] += g * (praw - tp2[i]) / (praw * (1.0f - praw));
            }
        });
    }
    return out;
}

}  // namespace

Tensor bce(const Tensor& pred, const Tensor& target) { return bce_impl(pred, target, nullptr); }

Tensor bce_masked(const Tensor& pred, const Tensor& target, const Tensor& mask) {
    return bce_impl(pred, target, &mask);
}

Tensor ce_rows(const Tensor& logits, const std::vector<int>& targets) {
    if (logits.shape.size() != 2)
        throw DimensionError("ce_rows: logits must be [N,M], got " + shape_str(logits.shape));
    const int rows = logits.shape[0], cols = logits.shape[1];
    if (static_cast<int>(targets.size()) != rows)
        throw DimensionError("ce_rows: target count != rows");
    for (int t : targets)
        if (t < 0 || t >= cols) throw IndexError("ce_rows: target column out of range");

    const float* lp = logits.ptr();
    double acc = 0.0;
    for (int r = 0; r < rows; ++r) {
        const float* row = lp + static_cast<std::size_t>(r) * cols;
        float mx = row[0];
        for (int c = 1; c < cols; ++c) mx = std::max(mx, row[c]);
        double sum = 0.0;
        for (int c = 0; c < cols; ++c) sum += std::exp(static_cast<double>(row[c] - mx));
        acc += std::log(sum) + mx - row[targets[r]];
    }
    Tensor out = Tensor::scalar(static_cast<float>(acc / rows));
    if (tracing(logits)) {
        out.requires_grad = true;
        out.ensure_grad();
        Tensor lc = logits, oc = out;
        std::vector<int> tg = targets;
        Tape::active()->record([lc, oc, tg, rows, cols]() mutable {
            const float g = oc.grad_ptr()[0] / static_cast<float>(rows);
            const float* lp2 = lc.ptr();
            float* dl = lc.grad_ptr();
            for (int r = 0; r < rows; ++r) {
                const float* row = lp2 + static_cast<std::size_t>(r) * cols;
                float* drow = dl + static_cast<std::size_t>(r) * cols;
                float mx = row[0];
                for (int c = 1; c < cols; ++c) mx = std::max(mx, row[c]);
                double sum = 0.0;
                for (int c = 0; c < cols; ++c) sum += std::exp(static_cast<double>(row[c] - mx));
                for (int c = 0; c < cols; ++c) {
                    const float sm =
                        static_cast<float>(std::exp(static_cast<double>(row[c] - mx)) / sum);
                    drow[c] += g * (sm - (c == tg[r] ? 1.0f : 0.0f));
                }
            }
        });
    }
    return out;
}

Tensor l2_normalize_rows(const Tensor& x) {
    if (x.shape.size() != 2)
        throw DimensionError("l2_normalize_rows: need [N,d], got " + shape_str(x.shape));
    const int rows = x.shape[0], d = x.shape[1];
    Tensor out = Tensor::zeros(x.shape);
    const float* xp = x.ptr();
    float* op = out.ptr();
    std::vector<float> norms(rows);
    for (int r = 0; r < rows; ++r) {
        const float* row = xp + static_cast<std::size_t>(r) * d;
        double s = 0.0;
        for (int c = 0; c < d; ++c) s += static_cast<double>(row[c]) * row[c];
        const float nrm = static_cast<float>(std::sqrt(s) + 1e-12);
        norms[r] = nrm;
        float* orow = op + static_cast<std::size_t>(r) * d;
        for (int c = 0; c < d; ++c) orow[c] = row[c] / nrm;
    }
    if (tracing(x)) {
        out.requires_grad = true;
        out.ensure_grad();
        Tensor xc = x, oc = out;
        Tape::active()->record([xc, oc, norms, rows, d]() mutable {
            // dx = (dy - y * (dy . y)) / ||x||
            const float* y = oc.ptr();
            const float* dy = oc.grad_ptr();
            float* dx = xc.grad_ptr();
            for (int r = 0; r < rows; ++r) {
                const std::size_t off = static_cast<std::size_t>(r) * d;
                double dot = 0.0;
                for (int c = 0; c < d; ++c) dot += static_cast<double>(dy[off + c]) * y[off + c];
                const float dt = static_cast<float>(dot);
                for (int c = 0; c < d; ++c)
                    dx[off + c] += (dy[off + c] - y[off + c] * dt) / norms[r];
            }
        });
    }
    return out;
}

double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, float step,
                  int max_coords, std::uint64_t seed) {
    Tensor probe = x.clone_detached();
    probe.requires_grad = true;
    probe.ensure_grad();
    std::vector<float> analytic;
    {
        Tape tape;
        Tensor y = f(probe);
        if (!y.is_scalar()) throw DimensionError("grad_check: f must be scalar-valued");
        tape.backward(y);
        analytic = *probe.grad;
    }

    const std::size_t n = x.numel();
    std::vector<std::size_t> coords(n);
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (max_coords > 0 && static_cast<std::size_t>(max_coords) < n) {
        Rng rng(Rng::derive(seed, 0x67c0));
        for (int i = 0; i < max_coords; ++i) {
            const int j = i + rng.below(static_cast<int>(n - i));
            std::swap(coords[i], coords[j]);
        }
        coords.resize(max_coords);
    }

    double max_err = 0.0;
    Tensor work = x.clone_detached();  // no grad: numeric passes stay off-tape
    for (std::size_t c : coords) {
        const float original = (*work.data)[c];
        (*work.data)[c] = original + step;
        const double f_plus = f(work).value();
        (*work.data)[c] = original - step;
        const double f_minus = f(work).value();
        (*work.data)[c] = original;
        const double numeric = (f_plus - f_minus) / (2.0 * static_cast<double>(step));
        const double a = analytic[c];
        const double err = std::abs(a - numeric) / std::max(1e-6, std::abs(a) + std::abs(numeric));
        max_err = std::max(max_err, err);
    }
    return max_err;
}

}  // namespace tog
