#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "tog/tensor.hpp"

namespace tog {

// Differentiable ops. All record onto the active tape when any input
// requires gradients. Image-like tensors are [H,W,C] row-major.

/// C[m,n] = A[m,k] * B[k,n]. Backward: dA = dC*B^T, dB = A^T*dC.
Tensor matmul(const Tensor& a, const Tensor& b);

Tensor transpose2d(const Tensor& a);

/// Cross-correlation. x:[H,W,Cin], w:[kh,kw,Cin,Cout], bias:[Cout].
/// Output side (H + 2*pad - kh) / stride + 1 must be integral.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride, int pad);

/// Adjoint of conv2d over the input: out[(H-1)*s+kh, (W-1)*s+kw, Cout].
/// w:[kh,kw,Cin,Cout] consumes x's Cin channels.
Tensor conv_transpose2d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride);

// Binary elementwise ops accept equal shapes, a one-element b (broadcast
// everywhere), or a 1-d b matching a's last axis (broadcast per site).
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);  // Hadamard

Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor scale(const Tensor& a, float c);

/// Max-subtracted softmax along `axis`.
Tensor softmax(const Tensor& a, int axis);

/// y = x*W + b over the last axis. x:[...,din], W:[din,dout], b:[dout].
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

/// Nearest-neighbour upsampling of [H,W,C] by an integer factor >= 1.
Tensor upsample_nearest(const Tensor& x, int factor);

Tensor concat(const std::vector<Tensor>& xs, int axis);

/// Row gather: table:[V,d], out:[ids.size(),d]. Gradient scatter-adds.
Tensor embedding_lookup(const Tensor& table, const std::vector<int>& ids);

Tensor sum_all(const Tensor& a);

/// Mean binary cross entropy with predictions clamped to [1e-7, 1-1e-7].
Tensor bce(const Tensor& pred, const Tensor& target);

/// BCE averaged over elements whose mask entry is nonzero. mask.numel()
/// must divide pred.numel(); entry i uses mask[i / (pred/mask ratio)],
/// i.e. a per-pixel mask applies to every channel of that pixel.
/// An all-zero mask yields a constant 0 (no gradient).
Tensor bce_masked(const Tensor& pred, const Tensor& target, const Tensor& mask);

/// Mean cross entropy of logits[N,M] rows against integer targets.
Tensor ce_rows(const Tensor& logits, const std::vector<int>& targets);

/// Rows scaled to unit L2 norm (eps-guarded).
Tensor l2_normalize_rows(const Tensor& x);

/// Central-difference check of f's gradient at x. Returns the max over
/// checked coordinates of |a-n| / max(1e-6, |a|+|n|). When max_coords > 0
/// only that many coordinates are checked (sampled with `seed`), which
/// keeps deep compositions affordable. f must be scalar-valued and
/// deterministic.
double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, float step,
                  int max_coords = 0, std::uint64_t seed = 0);

}  // namespace tog
