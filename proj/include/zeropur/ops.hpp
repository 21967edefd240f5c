#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "zeropur/tape.hpp"

// Differentiable operations recorded on a Tape. Every op validates shapes
// (ShapeError) and rejects non-finite results (NumericError naming the op).
// Broadcasting is limited to tensor-by-scalar; reshape explicitly otherwise.
namespace zp::ops {

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
Var scale(Var a, double factor);

/// [m,k] x [k,n] -> [m,n]
Var matmul(Var a, Var b);

/// NCHW input, OIHW weight, no bias (use channel_affine).
Var conv2d(Var x, Var weight, std::size_t stride = 1, std::size_t pad = 0);

/// y[n,c,...] = x[n,c,...] * scale[c] + bias[c]; x is [N,C] or [N,C,H,W].
Var channel_affine(Var x, Var scale, Var bias);

/// Subgradient at 0 is 0.
Var relu(Var x);

/// Gradient routes to the first maximal element of each window.
Var max_pool2d(Var x, std::size_t window, std::size_t stride);
Var avg_pool2d(Var x, std::size_t window, std::size_t stride);
/// [N,C,H,W] -> [N,C]
Var global_avg_pool(Var x);

Var reshape(Var x, Shape shape);
/// [N,...] -> [N, prod(...)]
Var flatten(Var x);

/// x [N,in], weight [out,in], bias [out] -> [N,out]
Var linear(Var x, Var weight, Var bias);

/// Row-wise over [N,C].
Var softmax(Var x);
Var log_softmax(Var x);
/// Mean negative log-likelihood of `labels` under row-wise softmax of logits [N,C].
Var cross_entropy(Var logits, std::span<const int> labels);

/// Euclidean norm of all elements -> [1]. Gradient at the origin is 0.
Var l2_norm(Var x);
/// Per-row Euclidean norm of [N,D] -> [N]. Gradient at a zero row is 0.
Var row_l2_norm(Var x);
/// Sum of elementwise products of two same-shape tensors -> [1].
Var dot(Var a, Var b);
Var sum(Var x);
Var mean(Var x);

/// Unit l2 norm across the channel axis of [N,C,H,W] at every (n,h,w).
/// Locations whose norm is <= 1e-12 map to 0 with zero gradient.
Var channel_normalize(Var x);

/// Per-sample, per-channel standardisation of [N,C,H,W]:
/// (x - mean) / sqrt(var + eps) over each HxW plane.
Var instance_standardize(Var x, double eps = 1e-4);

/// a.b / (|a||b|). Rank-1 inputs give [1]; [N,D] inputs give [N] (row-wise).
/// Throws NumericError("degenerate embedding") when a norm is below 1e-12.
Var cosine_similarity(Var a, Var b);

/// Concatenate [N,D_i] tensors along axis 1.
Var concat_columns(std::span<const Var> parts);

struct ResizePad {
  std::size_t size;  ///< side of the resized square image
  std::size_t top;
  std::size_t left;
};

/// Per-sample nearest-neighbour resize of a square image to `size` followed by
/// zero padding back to the original extent at offset (top, left).
Var resize_pad(Var x, std::span<const ResizePad> params);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator/(Var a, Var b) { return div(a, b); }
inline Var operator*(double s, Var a) { return scale(a, s); }
inline Var operator-(Var a) { return scale(a, -1.0); }

}  // namespace zp::ops
