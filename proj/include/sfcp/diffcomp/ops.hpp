#pragma once

#include <span>

#include "sfcp/diffcomp/tape.hpp"

namespace sfcp::dc {

inline constexpr double kLayerNormEps = 1e-5;

// Plain forward math on matrices (row-wise where it matters).

/// Row-wise softmax with max subtraction.
Mat softmax_rows(const Mat& x);
Mat gelu(const Mat& x);
/// Population-variance layer norm applied to every row.
Mat layer_norm_rows(const Mat& x, const Mat& gain, const Mat& bias, double eps = kLayerNormEps);
/// Interleaved sin/cos table with wavelength base 10000; d must be even.
Mat sinusoidal_pe(std::size_t n, std::size_t d);
/// PE row for every layout row, by its position in its own sequence.
Mat positional_rows(const SeqLayout& layout, std::size_t d);

// Recorded ops.

Var matmul(Var a, Var b);
/// x * w + b with b a 1 x out row broadcast over rows.
Var affine(Var x, Var w, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var scale(Var a, double s);
Var gelu(Var x);
Var sigmoid(Var x);
Var layer_norm(Var x, Var gain, Var bias, double eps = kLayerNormEps);
Var softmax(Var x);
Var concat_cols(Var a, Var b);
/// Zeroes the rows marked as padding.
Var mask_rows(Var x, const SeqLayout& layout);
/// Scaled dot-product attention per sequence and head on already projected
/// Q, K, V (N x d each). Padded keys get zero weight; padded query rows output 0.
Var attention(Var q, Var k, Var v, const SeqLayout& layout, std::size_t heads);
/// Mean over valid rows of every sequence -> sequences x d.
Var mean_pool(Var x, const SeqLayout& layout);
/// out(i, 0) = x(i, index[i]).
Var pick(Var x, std::span<const std::size_t> index);
Var sum(Var x);
Var mean(Var x);
/// mean((pred - target)^2) over all entries.
Var mse(Var pred, const Mat& target);
/// Mean binary cross-entropy of sigmoid(logits) against 0/1 labels.
Var bce_with_logits(Var logits, const Mat& labels);

/// Attention weights of one head for one sequence (for inspection/tests).
Mat attention_weights(const Mat& q, const Mat& k, const SeqLayout& layout, std::size_t seq, std::size_t head,
                      std::size_t heads);

}  // namespace sfcp::dc
