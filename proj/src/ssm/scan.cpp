#include "tides/ssm/scan.hpp"

#include <stdexcept>
#include <string>

namespace tides::ssm {

ScanElement scan_combine(const ScanElement& earlier, const ScanElement& later) {
  const std::size_t p = earlier.a.size();
  if (earlier.b.size() != p || later.a.size() != p || later.b.size() != p) {
    throw std::invalid_argument("scan_combine: element lengths differ (" + std::to_string(p) + " vs " +
                                std::to_string(later.a.size()) + ")");
  }
  ScanElement out{std::vector<cplx>(p), std::vector<cplx>(p)};
  for (std::size_t i = 0; i < p; ++i) {
    out.a[i] = later.a[i] * earlier.a[i];
    out.b[i] = later.b[i] + later.a[i] * earlier.b[i];
  }
  return out;
}

std::vector<std::vector<cplx>> parallel_scan(std::span<const ScanElement> elements, CombineOrder order) {
  if (elements.empty()) throw std::invalid_argument("parallel_scan: empty sequence");
  std::vector<ScanElement> work(elements.begin(), elements.end());
  if (order == CombineOrder::standard) {
    tree_inclusive_scan(std::span<ScanElement>(work), [](const ScanElement& e, const ScanElement& l) {
      return scan_combine(e, l);
    });
  } else {
    tree_inclusive_scan(std::span<ScanElement>(work), [](const ScanElement& e, const ScanElement& l) {
      return scan_combine(l, e);
    });
  }
  std::vector<std::vector<cplx>> states;
  states.reserve(work.size());
  for (ScanElement& e : work) states.push_back(std::move(e.b));
  return states;
}

std::vector<std::vector<cplx>> sequential_scan(std::span<const ScanElement> elements) {
  if (elements.empty()) throw std::invalid_argument("sequential_scan: empty sequence");
  const std::size_t p = elements.front().a.size();
  std::vector<cplx> x(p);
  std::vector<std::vector<cplx>> states;
  for (const ScanElement& e : elements) {
    if (e.a.size() != p || e.b.size() != p) throw std::invalid_argument("sequential_scan: ragged elements");
    for (std::size_t i = 0; i < p; ++i) x[i] = e.a[i] * x[i] + e.b[i];
    states.push_back(x);
  }
  return states;
}

namespace {

struct Pair {
  cplx a, b;
};

Pair combine(const Pair& earlier, const Pair& later) { return {later.a * earlier.a, later.b + later.a * earlier.b}; }

// Runs the scalar recurrence for every (sequence, mode) lane; `load` and
// `store` address elements by scan position.
template <class Load, class Store>
void scan_lanes(std::size_t sequences, std::size_t seq_len, std::size_t modes, Load&& load, Store&& store) {
  std::vector<Pair> buf(seq_len);
  for (std::size_t s = 0; s < sequences; ++s) {
    for (std::size_t m = 0; m < modes; ++m) {
      for (std::size_t k = 0; k < seq_len; ++k) buf[k] = load(s, m, k);
      tree_inclusive_scan(std::span<Pair>(buf), combine);
      for (std::size_t k = 0; k < seq_len; ++k) store(s, m, k, buf[k].b);
    }
  }
}

}  // namespace

ad::Var linear_scan(ad::Var a, ad::Var b, std::size_t seq_len, ScanDirection direction) {
  if (!a.valid() || !b.valid()) throw std::invalid_argument("linear_scan: unbound variable");
  const ad::Tensor& av = a.value();
  if (av.shape() != b.value().shape() || av.rank() != 2 || av.cols() % 2 != 0 || seq_len == 0 ||
      av.rows() % seq_len != 0 || av.rows() == 0) {
    throw std::invalid_argument("primitive 'linear_scan': shapes " + ad::shape_str(av.shape()) + " and " +
                                ad::shape_str(b.value().shape()) + " with sequence length " + std::to_string(seq_len));
  }
  const bool rev = direction == ScanDirection::reverse;

  auto forward = [seq_len, rev](ad::Tape::Inputs in) {
    const ad::Tensor& at = *in[0];
    const ad::Tensor& bt = *in[1];
    const std::size_t w = at.cols(), p = w / 2, seqs = at.rows() / seq_len;
    ad::Tensor out(at.shape());
    auto row = [&](std::size_t s, std::size_t k) { return s * seq_len + (rev ? seq_len - 1 - k : k); };
    scan_lanes(
        seqs, seq_len, p,
        [&](std::size_t s, std::size_t m, std::size_t k) {
          const std::size_t r = row(s, k) * w;
          return Pair{{at[r + m], at[r + p + m]}, {bt[r + m], bt[r + p + m]}};
        },
        [&](std::size_t s, std::size_t m, std::size_t k, cplx x) {
          const std::size_t r = row(s, k) * w;
          out[r + m] = x.real();
          out[r + p + m] = x.imag();
        });
    return out;
  };

  // With lambda_k the total adjoint of x_k (in scan order):
  //   lambda_k = g_k + conj(a_{k+1}) lambda_{k+1},
  //   dL/db_k = lambda_k,  dL/da_k = lambda_k conj(x_{k-1}).
  // The adjoint is itself a linear recurrence, run from the end.
  auto backward = [seq_len, rev](ad::Tape::Inputs in, const ad::Tensor& x, const ad::Tensor& g,
                                 std::span<ad::Tensor* const> gin) {
    const ad::Tensor& at = *in[0];
    const std::size_t w = at.cols(), p = w / 2, seqs = at.rows() / seq_len;
    auto row = [&](std::size_t s, std::size_t k) { return s * seq_len + (rev ? seq_len - 1 - k : k); };
    auto val = [&](const ad::Tensor& t, std::size_t r, std::size_t m) { return cplx(t[r * w + m], t[r * w + p + m]); };
    scan_lanes(
        seqs, seq_len, p,
        [&](std::size_t s, std::size_t m, std::size_t j) {
          const std::size_t k = seq_len - 1 - j;
          const cplx next_a = k + 1 < seq_len ? std::conj(val(at, row(s, k + 1), m)) : cplx(0.0);
          return Pair{next_a, val(g, row(s, k), m)};
        },
        [&](std::size_t s, std::size_t m, std::size_t j, cplx adj) {
          const std::size_t k = seq_len - 1 - j;
          const std::size_t r = row(s, k);
          if (gin[1]) {
            (*gin[1])[r * w + m] += adj.real();
            (*gin[1])[r * w + p + m] += adj.imag();
          }
          if (gin[0] && k > 0) {
            const cplx ga = adj * std::conj(val(x, row(s, k - 1), m));
            (*gin[0])[r * w + m] += ga.real();
            (*gin[0])[r * w + p + m] += ga.imag();
          }
        });
  };

  return a.tape->apply(rev ? "linear_scan_reverse" : "linear_scan", {a, b}, forward, backward);
}

ad::Var previous_states(ad::Var x, std::size_t seq_len, ScanDirection direction) {
  if (!x.valid() || x.value().rank() != 2 || seq_len == 0 || x.value().rows() % seq_len != 0) {
    throw std::invalid_argument("primitive 'previous_states': bad shape or sequence length");
  }
  const bool rev = direction == ScanDirection::reverse;
  // Source row for row r, or -1 when r starts its sequence.
  auto source = [seq_len, rev](std::size_t r) -> long {
    const std::size_t k = r % seq_len;
    if (!rev) return k == 0 ? -1 : static_cast<long>(r - 1);
    return k + 1 == seq_len ? -1 : static_cast<long>(r + 1);
  };
  return x.tape->apply(
      "previous_states", {x},
      [source](ad::Tape::Inputs in) {
        const ad::Tensor& v = *in[0];
        const std::size_t w = v.cols();
        ad::Tensor out(v.shape());
        for (std::size_t r = 0; r < v.rows(); ++r) {
          const long s = source(r);
          if (s < 0) continue;
          for (std::size_t j = 0; j < w; ++j) out[r * w + j] = v[static_cast<std::size_t>(s) * w + j];
        }
        return out;
      },
      [source](ad::Tape::Inputs in, const ad::Tensor&, const ad::Tensor& g, std::span<ad::Tensor* const> gin) {
        if (!gin[0]) return;
        const std::size_t w = in[0]->cols();
        for (std::size_t r = 0; r < in[0]->rows(); ++r) {
          const long s = source(r);
          if (s < 0) continue;
          for (std::size_t j = 0; j < w; ++j) (*gin[0])[static_cast<std::size_t>(s) * w + j] += g[r * w + j];
        }
      });
}

}  // namespace tides::ssm
