#pragma once

#include <complex>
#include <cstddef>
#include <span>
#include <vector>

#include "tides/autodiff/tape.hpp"

namespace tides::ssm {

using cplx = std::complex<double>;

// One step of x_k = a_k * x_{k-1} + b_k over P diagonal modes.
struct ScanElement {
  std::vector<cplx> a;
  std::vector<cplx> b;
};

// `flipped` swaps the operands of the combine. It exists only so the verify
// command can demonstrate that a wrong operator is caught.
enum class CombineOrder { standard, flipped };

// (a_i, b_i) (+) (a_j, b_j) = (a_j a_i, b_j + a_j b_i), `earlier` is i.
ScanElement scan_combine(const ScanElement& earlier, const ScanElement& later);

// Inclusive scan with the Brent-Kung up-sweep / down-sweep schedule:
// O(n) combines in O(log n) rounds. `op(earlier, later)` must be associative.
template <class T, class Op>
void tree_inclusive_scan(std::span<T> xs, Op&& op) {
  const std::size_t n = xs.size();
  if (n < 2) return;
  std::size_t top = 1;
  for (std::size_t s = 1; s < n; s *= 2) {
    for (std::size_t i = 2 * s - 1; i < n; i += 2 * s) xs[i] = op(xs[i - s], xs[i]);
    top = s;
  }
  for (std::size_t s = top; s >= 1; s /= 2) {
    for (std::size_t i = 3 * s - 1; i < n; i += 2 * s) xs[i] = op(xs[i - s], xs[i]);
    if (s == 1) break;
  }
}

// States x_1..x_L of the recurrence with x_0 = 0, via tree_inclusive_scan.
std::vector<std::vector<cplx>> parallel_scan(std::span<const ScanElement> elements,
                                             CombineOrder order = CombineOrder::standard);

// Plain left-to-right loop over the same recurrence.
std::vector<std::vector<cplx>> sequential_scan(std::span<const ScanElement> elements);

enum class ScanDirection { forward, reverse };

// Differentiable scan over complex tensors a, b: [B*L, 2P]. Rows are grouped
// into sequences of `seq_len`; `reverse` runs each sequence from its end, so
// row k holds a_k x_{k+1} + b_k.
ad::Var linear_scan(ad::Var a, ad::Var b, std::size_t seq_len, ScanDirection direction = ScanDirection::forward);

// Each row replaced by the state one step earlier in scan order (zero for the
// first step), turning post-update states into pre-update states.
ad::Var previous_states(ad::Var x, std::size_t seq_len, ScanDirection direction = ScanDirection::forward);

}  // namespace tides::ssm
