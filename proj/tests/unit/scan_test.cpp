#include <gtest/gtest.h>

#include <cmath>

#include "test_util.hpp"
#include "tides/autodiff/ops.hpp"
#include "tides/ssm/scan.hpp"

namespace ad = tides::ad;
using namespace tides::ssm;
using tides::Rng;

namespace {

std::vector<ScanElement> random_elements(std::size_t len, std::size_t p, Rng& rng) {
  std::vector<ScanElement> out(len);
  for (ScanElement& e : out) {
    for (std::size_t i = 0; i < p; ++i) {
      e.a.push_back(std::polar(rng.uniform(0.0, 0.999), rng.uniform(-3.14, 3.14)));
      e.b.emplace_back(rng.normal(), rng.normal());
    }
  }
  return out;
}

double max_rel(const std::vector<std::vector<cplx>>& a, const std::vector<std::vector<cplx>>& b) {
  double m = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    for (std::size_t i = 0; i < a[k].size(); ++i) {
      m = std::max(m, std::abs(a[k][i] - b[k][i]) / std::max(std::abs(b[k][i]), 1e-12));
    }
  }
  return m;
}

}  // namespace

TEST(ScanCombine, IdentityAndExample) {
  ScanElement id{{1.0}, {0.0}}, e{{cplx(0.3, 0.2)}, {cplx(-1.0, 4.0)}};
  ScanElement r = scan_combine(id, e);
  EXPECT_EQ(r.a[0], e.a[0]);
  EXPECT_EQ(r.b[0], e.b[0]);

  ScanElement x{{0.5}, {1.0}}, y{{0.25}, {2.0}};
  ScanElement xy = scan_combine(x, y);
  EXPECT_DOUBLE_EQ(xy.a[0].real(), 0.125);
  EXPECT_DOUBLE_EQ(xy.b[0].real(), 2.25);
}

TEST(ScanCombine, Associative) {
  Rng rng(1);
  for (int i = 0; i < 100; ++i) {
    auto es = random_elements(3, 4, rng);
    ScanElement l = scan_combine(scan_combine(es[0], es[1]), es[2]);
    ScanElement r = scan_combine(es[0], scan_combine(es[1], es[2]));
    for (std::size_t p = 0; p < 4; ++p) {
      EXPECT_NEAR(std::abs(l.a[p] - r.a[p]), 0.0, 1e-12);
      EXPECT_NEAR(std::abs(l.b[p] - r.b[p]), 0.0, 1e-12);
    }
  }
}

TEST(ScanCombine, LengthMismatchFails) {
  EXPECT_THROW(scan_combine({{1.0}, {0.0}}, {{1.0, 1.0}, {0.0, 0.0}}), std::invalid_argument);
}

TEST(ParallelScan, SingleElementAndAccumulation) {
  std::vector<ScanElement> one{{{0.5}, {cplx(3.0, 1.0)}}};
  EXPECT_EQ(parallel_scan(one)[0][0], cplx(3.0, 1.0));

  std::vector<ScanElement> acc;
  for (int k = 1; k <= 9; ++k) acc.push_back({{1.0}, {static_cast<double>(k)}});
  auto s = parallel_scan(acc);
  for (int k = 1; k <= 9; ++k) EXPECT_DOUBLE_EQ(s[k - 1][0].real(), k * (k + 1) / 2.0);

  EXPECT_THROW(parallel_scan(std::vector<ScanElement>{}), std::invalid_argument);
}

class ScanLength : public ::testing::TestWithParam<std::size_t> {};

TEST_P(ScanLength, MatchesSequentialLoop) {
  Rng rng(GetParam());
  auto es = random_elements(GetParam(), 3, rng);
  EXPECT_LT(max_rel(parallel_scan(es), sequential_scan(es)), 1e-6);
}

INSTANTIATE_TEST_SUITE_P(Lengths, ScanLength, ::testing::Values(1, 2, 3, 5, 17, 64, 1000, 1024, 4096));

TEST(ParallelScan, FlippedCombineIsWrong) {
  Rng rng(2);
  auto es = random_elements(17, 2, rng);
  EXPECT_GT(max_rel(parallel_scan(es, CombineOrder::flipped), sequential_scan(es)), 1e-3);
}

TEST(TreeScan, UsesLinearWorkAndLogDepth) {
  for (std::size_t n : {1u, 2u, 7u, 16u, 1000u, 4096u}) {
    std::vector<std::pair<int, int>> xs(n, {1, 0});  // (count, depth)
    std::size_t combines = 0;
    tree_inclusive_scan(std::span<std::pair<int, int>>(xs), [&](auto a, auto b) {
      ++combines;
      return std::make_pair(a.first + b.first, std::max(a.second, b.second) + 1);
    });
    int depth = 0;
    for (std::size_t i = 0; i < n; ++i) {
      ASSERT_EQ(xs[i].first, static_cast<int>(i + 1));
      depth = std::max(depth, xs[i].second);
    }
    EXPECT_LE(combines, 2 * n);
    EXPECT_LE(depth, 2 * static_cast<int>(std::ceil(std::log2(std::max<std::size_t>(n, 2)))));
  }
}

namespace {

// Builds [B*L, 2P] tensors for `linear_scan` from per-sequence elements.
std::pair<ad::Tensor, ad::Tensor> pack(const std::vector<std::vector<ScanElement>>& seqs) {
  const std::size_t len = seqs[0].size(), p = seqs[0][0].a.size();
  ad::Tensor a({seqs.size() * len, 2 * p}), b({seqs.size() * len, 2 * p});
  for (std::size_t s = 0; s < seqs.size(); ++s) {
    for (std::size_t k = 0; k < len; ++k) {
      for (std::size_t i = 0; i < p; ++i) {
        a.at(s * len + k, i) = seqs[s][k].a[i].real();
        a.at(s * len + k, p + i) = seqs[s][k].a[i].imag();
        b.at(s * len + k, i) = seqs[s][k].b[i].real();
        b.at(s * len + k, p + i) = seqs[s][k].b[i].imag();
      }
    }
  }
  return {a, b};
}

}  // namespace

TEST(LinearScan, MatchesSequentialPerSequenceBothDirections) {
  Rng rng(5);
  const std::size_t len = 13, p = 3;
  std::vector<std::vector<ScanElement>> seqs{random_elements(len, p, rng), random_elements(len, p, rng)};
  auto [a, b] = pack(seqs);
  ad::Tape tape;
  const ad::Tensor fwd = linear_scan(tape.constant(a), tape.constant(b), len).value();
  const ad::Tensor rev = linear_scan(tape.constant(a), tape.constant(b), len, ScanDirection::reverse).value();
  for (std::size_t s = 0; s < 2; ++s) {
    auto want = sequential_scan(seqs[s]);
    std::vector<ScanElement> reversed(seqs[s].rbegin(), seqs[s].rend());
    auto want_rev = sequential_scan(reversed);
    for (std::size_t k = 0; k < len; ++k) {
      for (std::size_t i = 0; i < p; ++i) {
        EXPECT_NEAR(fwd.at(s * len + k, i), want[k][i].real(), 1e-12);
        EXPECT_NEAR(fwd.at(s * len + k, p + i), want[k][i].imag(), 1e-12);
        EXPECT_NEAR(rev.at(s * len + k, i), want_rev[len - 1 - k][i].real(), 1e-12);
        EXPECT_NEAR(rev.at(s * len + k, p + i), want_rev[len - 1 - k][i].imag(), 1e-12);
      }
    }
  }
}

TEST(LinearScan, GradientMatchesFiniteDifferences) {
  Rng rng(6);
  const std::size_t len = 7, p = 2;
  auto [a, b] = pack({random_elements(len, p, rng), random_elements(len, p, rng)});
  for (ScanDirection dir : {ScanDirection::forward, ScanDirection::reverse}) {
    auto r = tides::testing::check_graph({a, b}, [&](std::vector<ad::Var>& v) {
      ad::Var x = linear_scan(v[0], v[1], len, dir);
      Rng wr(9);
      return ad::sum(ad::mul(x, v[0].tape->constant(tides::testing::random_tensor(x.shape(), wr))));
    });
    EXPECT_LT(r.max_rel_error, 1e-6);
  }
}

TEST(LinearScan, RejectsBadShapes) {
  ad::Tape tape;
  ad::Var a = tape.constant(ad::Tensor({6, 4})), b = tape.constant(ad::Tensor({6, 4}));
  EXPECT_THROW(linear_scan(a, b, 4), std::invalid_argument);
  EXPECT_THROW(linear_scan(a, tape.constant(ad::Tensor({6, 2})), 3), std::invalid_argument);
  EXPECT_THROW(linear_scan(tape.constant(ad::Tensor({6, 3})), tape.constant(ad::Tensor({6, 3})), 3),
               std::invalid_argument);
}

TEST(PreviousStates, ShiftsWithinSequences) {
  ad::Tape tape;
  ad::Var x = tape.constant(ad::Tensor::matrix(4, 1, {1, 2, 3, 4}));
  EXPECT_EQ(previous_states(x, 2).value().vec(), (std::vector<double>{0, 1, 0, 3}));
  EXPECT_EQ(previous_states(x, 2, ScanDirection::reverse).value().vec(), (std::vector<double>{2, 0, 4, 0}));
  auto r = tides::testing::check_graph({ad::Tensor::matrix(4, 2, {1, 2, 3, 4, 5, 6, 7, 8})},
                                       [](std::vector<ad::Var>& v) {
                                         return ad::sum(ad::square(previous_states(v[0], 4)));
                                       });
  EXPECT_LT(r.max_rel_error, 1e-8);
}
