#pragma once

#include <cstddef>
#include <vector>

#include "tides/autodiff/tape.hpp"

// Differentiable primitives. Every function records one node on the tape that
// owns its operands and throws std::invalid_argument naming the primitive and
// the offending shapes when operands are not conformable.
//
// Binary elementwise ops accept a right operand with the same shape as the
// left, a 1-D operand matching the left's last extent (broadcast over rows),
// or a single element.
//
// Complex tensors are real tensors whose last extent is 2P, laid out as
// [re_0 .. re_{P-1} | im_0 .. im_{P-1}]. Gradients of complex quantities are
// stored in the same layout as (dL/dre, dL/dim).
namespace tides::ad {

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double c);
Var add_scalar(Var a, double c);

Var neg(Var a);
Var exp(Var a);
Var log(Var a);
Var reciprocal(Var a);
Var square(Var a);
Var sigmoid(Var a);
Var softplus(Var a);
Var tanh(Var a);
// Tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))).
Var gelu(Var a);
// Elementwise clamp to [lo, hi]; the gradient is passed through strictly inside.
Var clamp(Var a, double lo, double hi);

Var sum(Var a);
Var mean(Var a);

Var matmul(Var a, Var b);
Var transpose(Var a);
Var reshape(Var a, Shape shape);
// Concatenate 1-D or 2-D tensors along the last axis.
Var concat(const std::vector<Var>& parts);
// Columns [begin, end) along the last axis.
Var slice(Var a, std::size_t begin, std::size_t end);
// Repeat a 1-D tensor as `rows` rows.
Var broadcast_rows(Var v, std::size_t rows);
// Mean over consecutive blocks of `group` rows: [G*group, C] -> [G, C].
Var group_mean_rows(Var a, std::size_t group);

// out[r, q] = sum_k m[r, q*K + k] * v[r, k]   with m: [R, Q*K], v: [R, K].
Var row_matvec(Var m, Var v);
// out[r, q] = sum_k c[r, k] * v[r, k*Q + q]   with v: [R, K*Q], c: [R, K].
Var row_combine(Var v, Var c);

Var complex_mul(Var a, Var b);
Var complex_exp(Var z);
// (exp(z) - 1) / z, with the series 1 + z/2 for |z| < 1e-8.
Var complex_expm1_over(Var z);
Var complex_reciprocal(Var z);
Var complex_conj(Var z);
// Complex tensor [R, 2P] times a real tensor [R, P], per mode.
Var complex_scale(Var z, Var r);
// Real tensor [R, P] -> complex [R, 2P] with zero imaginary part.
Var complex_from_real(Var r);
Var complex_from_parts(Var re, Var im);
Var complex_real(Var z);
Var complex_imag(Var z);

// Per-column standardization of a [N, C] tensor with its own batch
// statistics (biased variance): (x - mean) / sqrt(var + eps).
Var batchnorm_train(Var x, double eps);
// Each row divided by sqrt(sum(x^2) / entries + eps). `entries` is the number
// of (possibly complex) values the row represents.
Var rms_normalize(Var x, std::size_t entries, double eps);
// Mean softmax cross-entropy of logits [B, K] against class labels.
Var cross_entropy(Var logits, const std::vector<std::size_t>& labels);
Var mse(Var prediction, Var target);

}  // namespace tides::ad
