#include "tides/autodiff/ops.hpp"

#include <Eigen/Core>
#include <cmath>
#include <complex>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>

namespace tides::ad {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;
using cplx = std::complex<double>;
using Inputs = Tape::Inputs;
using GradIn = std::span<Tensor* const>;

Tape& tape_of(Var a, const char* op) {
  if (!a.valid()) throw std::invalid_argument(std::string(op) + ": unbound variable");
  return *a.tape;
}

[[noreturn]] void shape_error(const char* op, const Shape& a, const Shape& b) {
  throw std::invalid_argument(std::string("primitive '") + op + "': shapes " + shape_str(a) + " and " +
                              shape_str(b) + " are not conformable");
}

[[noreturn]] void shape_error(const char* op, const Shape& a, const std::string& why) {
  throw std::invalid_argument(std::string("primitive '") + op + "': shape " + shape_str(a) + " " + why);
}

enum class Bcast { same, row, scalar };

Bcast classify(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() == b.shape()) return Bcast::same;
  if (b.rank() == 1 && a.rank() >= 2 && b.size() == a.cols()) return Bcast::row;
  if (b.size() == 1) return Bcast::scalar;
  shape_error(op, a.shape(), b.shape());
}

inline std::size_t bidx(Bcast m, std::size_t i, std::size_t cols) {
  switch (m) {
    case Bcast::same: return i;
    case Bcast::row: return i % cols;
    case Bcast::scalar: return 0;
  }
  return i;
}

template <class F, class DF>
Var unary(const char* name, Var a, F f, DF df) {
  Tape& t = tape_of(a, name);
  return t.apply(
      name, {a},
      [f](Inputs in) {
        Tensor out(in[0]->shape());
        const auto x = in[0]->data();
        auto y = out.data();
        for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
        return out;
      },
      [df](Inputs in, const Tensor& out, const Tensor& g, GradIn gin) {
        if (!gin[0]) return;
        const auto x = in[0]->data();
        const auto y = out.data();
        auto gx = gin[0]->data();
        for (std::size_t i = 0; i < x.size(); ++i) gx[i] += g[i] * df(x[i], y[i]);
      });
}

template <class F, class DA, class DB>
Var binary(const char* name, Var a, Var b, F f, DA da, DB db) {
  Tape& t = tape_of(a, name);
  classify(a.value(), b.value(), name);
  return t.apply(
      name, {a, b},
      [f, name](Inputs in) {
        const Tensor& x = *in[0];
        const Tensor& y = *in[1];
        const Bcast m = classify(x, y, name);
        Tensor out(x.shape());
        const std::size_t c = x.cols();
        for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i], y[bidx(m, i, c)]);
        return out;
      },
      [da, db, name](Inputs in, const Tensor&, const Tensor& g, GradIn gin) {
        const Tensor& x = *in[0];
        const Tensor& y = *in[1];
        const Bcast m = classify(x, y, name);
        const std::size_t c = x.cols();
        for (std::size_t i = 0; i < x.size(); ++i) {
          const std::size_t j = bidx(m, i, c);
          if (gin[0]) (*gin[0])[i] += g[i] * da(x[i], y[j]);
          if (gin[1]) (*gin[1])[j] += g[i] * db(x[i], y[j]);
        }
      });
}

void require_rank2(const char* op, const Tensor& a) {
  if (a.rank() != 2) shape_error(op, a.shape(), "must be 2-D");
}

std::size_t complex_modes(const char* op, const Tensor& z) {
  if (z.rank() == 0 || z.cols() % 2 != 0) shape_error(op, z.shape(), "needs an even last extent [re | im]");
  return z.cols() / 2;
}

template <class F>
void for_each_complex(const Tensor& z, F&& f) {
  const std::size_t p = z.cols() / 2;
  const std::size_t rows = z.rows();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t k = 0; k < p; ++k) f(r * 2 * p + k, r * 2 * p + p + k);
  }
}

// Holomorphic map w = f(z) applied per mode; df returns f'(z) given z and w.
template <class F, class DF>
Var complex_unary(const char* name, Var z, F f, DF df) {
  Tape& t = tape_of(z, name);
  complex_modes(name, z.value());
  return t.apply(
      name, {z},
      [f](Inputs in) {
        const Tensor& x = *in[0];
        Tensor out(x.shape());
        for_each_complex(x, [&](std::size_t re, std::size_t im) {
          const cplx w = f(cplx(x[re], x[im]));
          out[re] = w.real();
          out[im] = w.imag();
        });
        return out;
      },
      [df](Inputs in, const Tensor& out, const Tensor& g, GradIn gin) {
        if (!gin[0]) return;
        const Tensor& x = *in[0];
        Tensor& gx = *gin[0];
        for_each_complex(x, [&](std::size_t re, std::size_t im) {
          const cplx d = df(cplx(x[re], x[im]), cplx(out[re], out[im]));
          const cplx gz = std::conj(d) * cplx(g[re], g[im]);
          gx[re] += gz.real();
          gx[im] += gz.imag();
        });
      });
}

cplx expm1_complex(cplx z) {
  const double x = z.real();
  const double y = z.imag();
  const double s = std::sin(0.5 * y);
  return {std::expm1(x) * std::cos(y) - 2.0 * s * s, std::exp(x) * std::sin(y)};
}

cplx expm1_over(cplx z) {
  if (std::abs(z) < 1e-8) return 1.0 + 0.5 * z;
  return expm1_complex(z) / z;
}

cplx expm1_over_derivative(cplx z, cplx phi) {
  if (std::abs(z) < 1e-3) return 0.5 + z * (1.0 / 3.0 + z * (1.0 / 8.0 + z / 30.0));
  return (std::exp(z) - phi) / z;
}

}  // namespace

Var add(Var a, Var b) {
  return binary(
      "add", a, b, [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Var sub(Var a, Var b) {
  return binary(
      "sub", a, b, [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Var mul(Var a, Var b) {
  return binary(
      "mul", a, b, [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Var scale(Var a, double c) {
  return unary("scale", a, [c](double x) { return c * x; }, [c](double, double) { return c; });
}

Var add_scalar(Var a, double c) {
  return unary("add_scalar", a, [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

Var neg(Var a) {
  return unary("neg", a, [](double x) { return -x; }, [](double, double) { return -1.0; });
}

Var exp(Var a) {
  return unary("exp", a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(Var a) {
  return unary("log", a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var reciprocal(Var a) {
  return unary(
      "reciprocal", a, [](double x) { return 1.0 / x; }, [](double, double y) { return -y * y; });
}

Var square(Var a) {
  return unary("square", a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var sigmoid(Var a) {
  return unary(
      "sigmoid", a,
      [](double x) {
        if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Var softplus(Var a) {
  return unary(
      "softplus", a,
      [](double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); },
      [](double x, double) {
        if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      });
}

Var tanh(Var a) {
  return unary("tanh", a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var gelu(Var a) {
  static constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
  static constexpr double kA = 0.044715;
  return unary(
      "gelu", a,
      [](double x) { return 0.5 * x * (1.0 + std::tanh(kC * (x + kA * x * x * x))); },
      [](double x, double) {
        const double t = std::tanh(kC * (x + kA * x * x * x));
        return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * kC * (1.0 + 3.0 * kA * x * x);
      });
}

Var clamp(Var a, double lo, double hi) {
  if (!(lo <= hi)) throw std::invalid_argument("primitive 'clamp': lo > hi");
  return unary(
      "clamp", a, [lo, hi](double x) { return std::min(std::max(x, lo), hi); },
      [lo, hi](double x, double) { return (x < lo || x > hi) ? 0.0 : 1.0; });
}

Var sum(Var a) {
  Tape& t = tape_of(a, "sum");
  return t.apply(
      "sum", {a},
      [](Inputs in) {
        double s = 0.0;
        for (double v : in[0]->data()) s += v;
        return Tensor::scalar(s);
      },
      [](Inputs, const Tensor&, const Tensor& g, GradIn gin) {
        if (!gin[0]) return;
        const double gv = g.item();
        for (double& v : gin[0]->data()) v += gv;
      });
}

Var mean(Var a) {
  Tape& t = tape_of(a, "mean");
  if (a.value().size() == 0) shape_error("mean", a.shape(), "is empty");
  return t.apply(
      "mean", {a},
      [](Inputs in) {
        double s = 0.0;
        for (double v : in[0]->data()) s += v;
        return Tensor::scalar(s / static_cast<double>(in[0]->size()));
      },
      [](Inputs in, const Tensor&, const Tensor& g, GradIn gin) {
        if (!gin[0]) return;
        const double gv = g.item() / static_cast<double>(in[0]->size());
        for (double& v : gin[0]->data()) v += gv;
      });
}

Var matmul(Var a, Var b) {
  Tape& t = tape_of(a, "matmul");
  require_rank2("matmul", a.value());
  require_rank2("matmul", b.value());
  if (a.shape()[1] != b.shape()[0]) shape_error("matmul", a.shape(), b.shape());
  return t.apply(
      "matmul", {a, b},
      [](Inputs in) {
        const Tensor& x = *in[0];
        const Tensor& y = *in[1];
        const auto m = static_cast<Eigen::Index>(x.shape()[0]);
        const auto k = static_cast<Eigen::Index>(x.shape()[1]);
        const auto n = static_cast<Eigen::Index>(y.shape()[1]);
        Tensor out({x.shape()[0], y.shape()[1]});
        MutMap(out.data().data(), m, n).noalias() = ConstMap(x.data().data(), m, k) * ConstMap(y.data().data(), k, n);
        return out;
      },
      [](Inputs in, const Tensor&, const Tensor& g, GradIn gin) {
        const Tensor& x = *in[0];
        const Tensor& y = *in[1];
        const auto m = static_cast<Eigen::Index>(x.shape()[0]);
        const auto k = static_cast<Eigen::Index>(x.shape()[1]);
        const auto n = static_cast<Eigen::Index>(y.shape()[1]);
        ConstMap gm(g.data().data(), m, n);
        if (gin[0]) MutMap(gin[0]->data().data(), m, k).noalias() += gm * ConstMap(y.data().data(), k, n).transpose();
        if (gin[1]) MutMap(gin[1]->data().data(), k, n).noalias() += ConstMap(x.data().data(), m, k).transpose() * gm;
      });
}

Var transpose(Var a) {
  Tape& t = tape_of(a, "transpose");
  require_rank2("transpose", a.value());
  return t.apply(
      "transpose", {a},
      [](Inputs in) {
        const Tensor& x = *in[0];
        const std::size_t r = x.shape()[0], c = x.shape()[1];
        Tensor out({c, r});
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < c; ++j) out[j * r + i] = x[i * c + j];
        return out;
      },
      [](Inputs in, const Tensor&, const Tensor& g, GradIn gin) {
        if (!gin[0]) return;
        const std::size_t r = in[0]->shape()[0], c = in[0]->shape()[1];
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < c; ++j) (*gin[0])[i * c + j] += g[j * r + i];
      });
}

Var reshape(Var a, Shape shape) {
  Tape& t = tape_of(a, "reshape");
  if (shape_numel(shape) != a.value().size()) shape_error("reshape", a.shape(), shape);
  return t.apply(
      "reshape", {a}, [shape](Inputs in) { return in[0]->reshaped(shape); },
      [](Inputs, const Tensor&, const Tensor& g, GradIn gin) {
        if (gin[0]) gin[0]->accumulate(g);
      });
}

Var concat(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("primitive 'concat': no operands");
  Tape& t = tape_of(parts[0], "concat");
  const Tensor& first = parts[0].value();
  if (first.rank() < 1 || first.rank() > 2) shape_error("concat", first.shape(), "must be 1-D or 2-D");
  for (const Var& p : parts) {
    const Tensor& v = p.value();
    if (v.rank() != first.rank() || (v.rank() == 2 && v.shape()[0] != first.shape()[0])) {
      shape_error("concat", first.shape(), v.shape());
    }
  }
  return t.apply(
      "concat", parts,
      [](Inputs in) {
        const std::size_t rows = in[0]->rows();
        std::size_t total = 0;
        for (const Tensor* p : in) total += p->cols();
        Tensor out(in[0]->rank() == 1 ? Shape{total} : Shape{rows, total});
        std::size_t off = 0;
        for (const Tensor* p : in) {
          const std::size_t c = p->cols();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < c; ++j) out[r * total + off + j] = (*p)[r * c + j];
          off += c;
        }
        return out;
      },
      [](Inputs in, const Tensor& out, const Tensor& g, GradIn gin) {
        const std::size_t rows = out.rows();
        const std::size_t total = out.cols();
        std::size_t off = 0;
        for (std::size_t i = 0; i < in.size(); ++i) {
          const std::size_t c = in[i]->cols();
          if (gin[i]) {
            for (std::size_t r = 0; r < rows; ++r)
              for (std::size_t j = 0; j < c; ++j) (*gin[i])[r * c + j] += g[r * total + off + j];
          }
          off += c;
        }
      });
}

Var slice(Var a, std::size_t begin, std::size_t end) {
  Tape& t = tape_of(a, "slice");
  const Tensor& v = a.value();
  if (v.rank() < 1 || v.rank() > 2 || begin > end || end > v.cols()) {
    shape_error("slice", v.shape(), "cannot take columns [" + std::to_string(begin) + ", " + std::to_string(end) + ")");
  }
  return t.apply(
      "slice", {a},
      [begin, end](Inputs in) {
        const Tensor& x = *in[0];
        const std::size_t rows = x.rows(), c = x.cols(), w = end - begin;
        Tensor out(x.rank() == 1 ? Shape{w} : Shape{rows, w});
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < w; ++j) out[r * w + j] = x[r * c + begin + j];
        return out;
      },
      [begin, end](Inputs in, const Tensor&, const Tensor& g, GradIn gin) {
        if (!gin[0]) return;
        const std::size_t rows = in[0]->rows(), c = in[0]->cols(), w = end - begin;
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < w; ++j) (*gin[0])[r * c + begin + j] += g[r * w + j];
      });
}

Var broadcast_rows(Var v, std::size_t rows) {
  Tape& t = tape_of(v, "broadcast_rows");
  if (v.value().rank() != 1) shape_error("broadcast_rows", v.shape(), "must be 1-D");
  return t.apply(
      "broadcast_rows", {v},
      [rows](Inputs in) {
        const std::size_t c = in[0]->size();
        Tensor out({rows, c});
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < c; ++j) out[r * c + j] = (*in[0])[j];
        return out;
      },
      [rows](Inputs in, const Tensor&, const Tensor& g, GradIn gin) {
        if (!gin[0]) return;
        const std::size_t c = in[0]->size();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < c; ++j) (*gin[0])[j] += g[r * c + j];
      });
}

Var group_mean_rows(Var a, std::size_t group) {
  Tape& t = tape_of(a, "group_mean_rows");
  const Tensor& v = a.value();
  if (v.rank() != 2 || group == 0 || v.shape()[0] % group != 0) {
    shape_error("group_mean_rows", v.shape(), "cannot be split into groups of " + std::to_string(group) + " rows");
  }
  return t.apply(
      "group_mean_rows", {a},
      [group](Inputs in) {
        const Tensor& x = *in[0];
        const std::size_t c = x.cols(), g = x.rows() / group;
        Tensor out({g, c});
        const double inv = 1.0 / static_cast<double>(group);
        for (std::size_t r = 0; r < x.rows(); ++r)
          for (std::size_t j = 0; j < c; ++j) out[(r / group) * c + j] += x[r * c + j] * inv;
        return out;
      },
      [group](Inputs in, const Tensor&, const Tensor& g, GradIn gin) {
        if (!gin[0]) return;
        const std::size_t c = in[0]->cols();
        const double inv = 1.0 / static_cast<double>(group);
        for (std::size_t r = 0; r < in[0]->rows(); ++r)
          for (std::size_t j = 0; j < c; ++j) (*gin[0])[r * c + j] += g[(r / group) * c + j] * inv;
      });
}

Var row_matvec(Var m, Var v) {
  Tape& t = tape_of(m, "row_matvec");
  const Tensor& mv = m.value();
  const Tensor& vv = v.value();
  if (mv.rank() != 2 || vv.rank() != 2 || mv.shape()[0] != vv.shape()[0] || vv.cols() == 0 ||
      mv.cols() % vv.cols() != 0) {
    shape_error("row_matvec", mv.shape(), vv.shape());
  }
  return t.apply(
      "row_matvec", {m, v},
      [](Inputs in) {
        const Tensor& x = *in[0];
        const Tensor& y = *in[1];
        const std::size_t rows = x.rows(), k = y.cols(), q = x.cols() / k;
        Tensor out({rows, q});
        for (std::size_t r = 0; r < rows; ++r) {
          const double* mr = x.data().data() + r * q * k;
          const double* vr = y.data().data() + r * k;
          for (std::size_t i = 0; i < q; ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < k; ++j) s += mr[i * k + j] * vr[j];
            out[r * q + i] = s;
          }
        }
        return out;
      },
      [](Inputs in, const Tensor&, const Tensor& g, GradIn gin) {
        const Tensor& x = *in[0];
        const Tensor& y = *in[1];
        const std::size_t rows = x.rows(), k = y.cols(), q = x.cols() / k;
        for (std::size_t r = 0; r < rows; ++r) {
          const double* mr = x.data().data() + r * q * k;
          const double* vr = y.data().data() + r * k;
          for (std::size_t i = 0; i < q; ++i) {
            const double gi = g[r * q + i];
            if (gin[0]) {
              double* gm = gin[0]->data().data() + r * q * k + i * k;
              for (std::size_t j = 0; j < k; ++j) gm[j] += gi * vr[j];
            }
            if (gin[1]) {
              double* gv = gin[1]->data().data() + r * k;
              for (std::size_t j = 0; j < k; ++j) gv[j] += gi * mr[i * k + j];
            }
          }
        }
      });
}

Var row_combine(Var v, Var c) {
  Tape& t = tape_of(v, "row_combine");
  const Tensor& vv = v.value();
  const Tensor& cv = c.value();
  if (vv.rank() != 2 || cv.rank() != 2 || vv.rows() != cv.rows() || cv.cols() == 0 || vv.cols() % cv.cols() != 0) {
    shape_error("row_combine", vv.shape(), cv.shape());
  }
  return t.apply(
      "row_combine", {v, c},
      [](Inputs in) {
        const Tensor& x = *in[0];
        const Tensor& w = *in[1];
        const std::size_t rows = x.rows(), k = w.cols(), q = x.cols() / k;
        Tensor out({rows, q});
        for (std::size_t r = 0; r < rows; ++r) {
          const double* xr = x.data().data() + r * k * q;
          double* o = out.data().data() + r * q;
          for (std::size_t j = 0; j < k; ++j) {
            const double wj = w[r * k + j];
            for (std::size_t i = 0; i < q; ++i) o[i] += wj * xr[j * q + i];
          }
        }
        return out;
      },
      [](Inputs in, const Tensor&, const Tensor& g, GradIn gin) {
        const Tensor& x = *in[0];
        const Tensor& w = *in[1];
        const std::size_t rows = x.rows(), k = w.cols(), q = x.cols() / k;
        for (std::size_t r = 0; r < rows; ++r) {
          const double* xr = x.data().data() + r * k * q;
          const double* gr = g.data().data() + r * q;
          for (std::size_t j = 0; j < k; ++j) {
            if (gin[0]) {
              double* gx = gin[0]->data().data() + r * k * q + j * q;
              const double wj = w[r * k + j];
              for (std::size_t i = 0; i < q; ++i) gx[i] += wj * gr[i];
            }
            if (gin[1]) {
              double s = 0.0;
              for (std::size_t i = 0; i < q; ++i) s += gr[i] * xr[j * q + i];
              (*gin[1])[r * k + j] += s;
            }
          }
        }
      });
}

Var complex_mul(Var a, Var b) {
  Tape& t = tape_of(a, "complex_mul");
  complex_modes("complex_mul", a.value());
  if (a.shape() != b.shape()) shape_error("complex_mul", a.shape(), b.shape());
  return t.apply(
      "complex_mul", {a, b},
      [](Inputs in) {
        const Tensor& x = *in[0];
        const Tensor& y = *in[1];
        Tensor out(x.shape());
        for_each_complex(x, [&](std::size_t re, std::size_t im) {
          const cplx w = cplx(x[re], x[im]) * cplx(y[re], y[im]);
          out[re] = w.real();
          out[im] = w.imag();
        });
        return out;
      },
      [](Inputs in, const Tensor&, const Tensor& g, GradIn gin) {
        const Tensor& x = *in[0];
        const Tensor& y = *in[1];
        for_each_complex(x, [&](std::size_t re, std::size_t im) {
          const cplx gw(g[re], g[im]);
          if (gin[0]) {
            const cplx ga = std::conj(cplx(y[re], y[im])) * gw;
            (*gin[0])[re] += ga.real();
            (*gin[0])[im] += ga.imag();
          }
          if (gin[1]) {
            const cplx gb = std::conj(cplx(x[re], x[im])) * gw;
            (*gin[1])[re] += gb.real();
            (*gin[1])[im] += gb.imag();
          }
        });
      });
}

Var complex_exp(Var z) {
  return complex_unary(
      "complex_exp", z, [](cplx x) { return std::exp(x); }, [](cplx, cplx w) { return w; });
}

Var complex_expm1_over(Var z) {
  return complex_unary(
      "complex_expm1_over", z, [](cplx x) { return expm1_over(x); },
      [](cplx x, cplx w) { return expm1_over_derivative(x, w); });
}

Var complex_reciprocal(Var z) {
  return complex_unary(
      "complex_reciprocal", z, [](cplx x) { return 1.0 / x; }, [](cplx, cplx w) { return -w * w; });
}

Var complex_conj(Var z) {
  Tape& t = tape_of(z, "complex_conj");
  complex_modes("complex_conj", z.value());
  return t.apply(
      "complex_conj", {z},
      [](Inputs in) {
        Tensor out = *in[0];
        for_each_complex(out, [&](std::size_t, std::size_t im) { out[im] = -out[im]; });
        return out;
      },
      [](Inputs in, const Tensor&, const Tensor& g, GradIn gin) {
        if (!gin[0]) return;
        for_each_complex(*in[0], [&](std::size_t re, std::size_t im) {
          (*gin[0])[re] += g[re];
          (*gin[0])[im] -= g[im];
        });
      });
}

Var complex_scale(Var z, Var r) {
  Tape& t = tape_of(z, "complex_scale");
  const std::size_t p = complex_modes("complex_scale", z.value());
  if (r.value().rows() != z.value().rows() || r.value().cols() != p || r.value().rank() != z.value().rank()) {
    shape_error("complex_scale", z.shape(), r.shape());
  }
  return t.apply(
      "complex_scale", {z, r},
      [](Inputs in) {
        const Tensor& x = *in[0];
        const Tensor& s = *in[1];
        const std::size_t p = x.cols() / 2;
        Tensor out(x.shape());
        for_each_complex(x, [&](std::size_t re, std::size_t im) {
          const double f = s[(re / (2 * p)) * p + re % (2 * p)];
          out[re] = x[re] * f;
          out[im] = x[im] * f;
        });
        return out;
      },
      [](Inputs in, const Tensor&, const Tensor& g, GradIn gin) {
        const Tensor& x = *in[0];
        const Tensor& s = *in[1];
        const std::size_t p = x.cols() / 2;
        for_each_complex(x, [&](std::size_t re, std::size_t im) {
          const std::size_t si = (re / (2 * p)) * p + re % (2 * p);
          if (gin[0]) {
            (*gin[0])[re] += g[re] * s[si];
            (*gin[0])[im] += g[im] * s[si];
          }
          if (gin[1]) (*gin[1])[si] += g[re] * x[re] + g[im] * x[im];
        });
      });
}

Var complex_from_real(Var r) {
  Tape& t = tape_of(r, "complex_from_real");
  return t.apply(
      "complex_from_real", {r},
      [](Inputs in) {
        const Tensor& x = *in[0];
        const std::size_t rows = x.rows(), p = x.cols();
        Tensor out(x.rank() == 1 ? Shape{2 * p} : Shape{rows, 2 * p});
        for (std::size_t i = 0; i < rows; ++i)
          for (std::size_t k = 0; k < p; ++k) out[i * 2 * p + k] = x[i * p + k];
        return out;
      },
      [](Inputs in, const Tensor&, const Tensor& g, GradIn gin) {
        if (!gin[0]) return;
        const std::size_t rows = in[0]->rows(), p = in[0]->cols();
        for (std::size_t i = 0; i < rows; ++i)
          for (std::size_t k = 0; k < p; ++k) (*gin[0])[i * p + k] += g[i * 2 * p + k];
      });
}

Var complex_from_parts(Var re, Var im) {
  if (re.shape() != im.shape()) shape_error("complex_from_parts", re.shape(), im.shape());
  return concat({re, im});
}

Var complex_real(Var z) {
  const std::size_t p = complex_modes("complex_real", z.value());
  return slice(z, 0, p);
}

Var complex_imag(Var z) {
  const std::size_t p = complex_modes("complex_imag", z.value());
  return slice(z, p, 2 * p);
}

Var batchnorm_train(Var x, double eps) {
  Tape& t = tape_of(x, "batchnorm_train");
  require_rank2("batchnorm_train", x.value());
  if (x.shape()[0] < 2) shape_error("batchnorm_train", x.shape(), "needs at least two batch-time rows");
  return t.apply(
      "batchnorm_train", {x},
      [eps](Inputs in) {
        const Tensor& v = *in[0];
        const std::size_t n = v.rows(), c = v.cols();
        Tensor out(v.shape());
        for (std::size_t j = 0; j < c; ++j) {
          double m = 0.0;
          for (std::size_t i = 0; i < n; ++i) m += v[i * c + j];
          m /= static_cast<double>(n);
          double var = 0.0;
          for (std::size_t i = 0; i < n; ++i) var += (v[i * c + j] - m) * (v[i * c + j] - m);
          var /= static_cast<double>(n);
          const double inv = 1.0 / std::sqrt(var + eps);
          for (std::size_t i = 0; i < n; ++i) out[i * c + j] = (v[i * c + j] - m) * inv;
        }
        return out;
      },
      [eps](Inputs in, const Tensor& out, const Tensor& g, GradIn gin) {
        if (!gin[0]) return;
        const Tensor& v = *in[0];
        const std::size_t n = v.rows(), c = v.cols();
        const double dn = static_cast<double>(n);
        for (std::size_t j = 0; j < c; ++j) {
          double m = 0.0;
          for (std::size_t i = 0; i < n; ++i) m += v[i * c + j];
          m /= dn;
          double var = 0.0;
          for (std::size_t i = 0; i < n; ++i) var += (v[i * c + j] - m) * (v[i * c + j] - m);
          var /= dn;
          const double inv = 1.0 / std::sqrt(var + eps);
          double gm = 0.0, gy = 0.0;
          for (std::size_t i = 0; i < n; ++i) {
            gm += g[i * c + j];
            gy += g[i * c + j] * out[i * c + j];
          }
          gm /= dn;
          gy /= dn;
          for (std::size_t i = 0; i < n; ++i) (*gin[0])[i * c + j] += inv * (g[i * c + j] - gm - out[i * c + j] * gy);
        }
      });
}

Var rms_normalize(Var x, std::size_t entries, double eps) {
  Tape& t = tape_of(x, "rms_normalize");
  if (entries == 0) throw std::invalid_argument("primitive 'rms_normalize': zero entries");
  const double n = static_cast<double>(entries);
  return t.apply(
      "rms_normalize", {x},
      [n, eps](Inputs in) {
        const Tensor& v = *in[0];
        const std::size_t rows = v.rows(), c = v.cols();
        Tensor out(v.shape());
        for (std::size_t r = 0; r < rows; ++r) {
          double ss = 0.0;
          for (std::size_t j = 0; j < c; ++j) ss += v[r * c + j] * v[r * c + j];
          const double inv = 1.0 / std::sqrt(ss / n + eps);
          for (std::size_t j = 0; j < c; ++j) out[r * c + j] = v[r * c + j] * inv;
        }
        return out;
      },
      [n, eps](Inputs in, const Tensor&, const Tensor& g, GradIn gin) {
        if (!gin[0]) return;
        const Tensor& v = *in[0];
        const std::size_t rows = v.rows(), c = v.cols();
        for (std::size_t r = 0; r < rows; ++r) {
          double ss = 0.0, gx = 0.0;
          for (std::size_t j = 0; j < c; ++j) {
            ss += v[r * c + j] * v[r * c + j];
            gx += g[r * c + j] * v[r * c + j];
          }
          const double s = std::sqrt(ss / n + eps);
          const double k = gx / (n * s * s * s);
          for (std::size_t j = 0; j < c; ++j) (*gin[0])[r * c + j] += g[r * c + j] / s - v[r * c + j] * k;
        }
      });
}

Var cross_entropy(Var logits, const std::vector<std::size_t>& labels) {
  Tape& t = tape_of(logits, "cross_entropy");
  require_rank2("cross_entropy", logits.value());
  const std::size_t b = logits.shape()[0], k = logits.shape()[1];
  if (labels.size() != b) shape_error("cross_entropy", logits.shape(), "does not match label count");
  for (std::size_t y : labels) {
    if (y >= k) throw std::invalid_argument("primitive 'cross_entropy': label out of range");
  }
  auto log_softmax = [](const Tensor& z, std::size_t r, std::vector<double>& out) {
    const std::size_t k = z.cols();
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < k; ++j) mx = std::max(mx, z[r * k + j]);
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j) s += std::exp(z[r * k + j] - mx);
    const double lse = mx + std::log(s);
    out.resize(k);
    for (std::size_t j = 0; j < k; ++j) out[j] = z[r * k + j] - lse;
  };
  return t.apply(
      "cross_entropy", {logits},
      [labels, log_softmax](Inputs in) {
        std::vector<double> ls;
        double loss = 0.0;
        for (std::size_t r = 0; r < labels.size(); ++r) {
          log_softmax(*in[0], r, ls);
          loss -= ls[labels[r]];
        }
        return Tensor::scalar(loss / static_cast<double>(labels.size()));
      },
      [labels, log_softmax](Inputs in, const Tensor&, const Tensor& g, GradIn gin) {
        if (!gin[0]) return;
        std::vector<double> ls;
        const std::size_t k = in[0]->cols();
        const double scale = g.item() / static_cast<double>(labels.size());
        for (std::size_t r = 0; r < labels.size(); ++r) {
          log_softmax(*in[0], r, ls);
          for (std::size_t j = 0; j < k; ++j) {
            (*gin[0])[r * k + j] += scale * (std::exp(ls[j]) - (j == labels[r] ? 1.0 : 0.0));
          }
        }
      });
}

Var mse(Var prediction, Var target) {
  if (prediction.shape() != target.shape()) shape_error("mse", prediction.shape(), target.shape());
  return mean(square(sub(prediction, target)));
}

}  // namespace tides::ad
