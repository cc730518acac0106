#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "lti_oracle.hpp"
#include "test_util.hpp"
#include "tides/autodiff/ops.hpp"
#include "tides/drop/drop_harness.hpp"

namespace ad = tides::ad;
namespace block = tides::block;
namespace ssm = tides::ssm;
using namespace tides::drop;
using tides::Rng;

namespace {

TimestampedSeries unit_series(std::size_t len, std::size_t channels = 1) {
  TimestampedSeries s;
  s.channels = channels;
  for (std::size_t k = 0; k < len; ++k) {
    s.timestamps.push_back(static_cast<double>(k));
    for (std::size_t c = 0; c < channels; ++c) s.values.push_back(static_cast<double>(10 * k + c));
  }
  return s;
}

std::string write_temp(const std::string& name, const std::string& body) {
  const auto path = std::filesystem::temp_directory_path() / ("tides_drop_" + name + ".csv");
  std::ofstream(path) << body;
  return path.string();
}

std::string error_of(const std::string& path) {
  try {
    ingest_csv(path);
  } catch (const std::exception& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(SampleDrop, ZeroRateKeepsEverything) {
  Rng rng(3);
  const DropPlan p = sample_drop(rng, 0.0, 17);
  ASSERT_EQ(p.kept.size(), 17u);
  for (std::size_t i = 0; i < 17; ++i) EXPECT_EQ(p.kept[i], i);
}

TEST(SampleDrop, HalfOfFortyKeepsTwenty) {
  Rng rng(4);
  for (int rep = 0; rep < 20; ++rep) {
    const DropPlan p = sample_drop(rng, 0.5, 40);
    ASSERT_EQ(p.kept.size(), 20u);
    EXPECT_TRUE(std::is_sorted(p.kept.begin(), p.kept.end()));
    EXPECT_EQ(std::set<std::size_t>(p.kept.begin(), p.kept.end()).size(), 20u);
    EXPECT_LT(p.kept.back(), 40u);
  }
}

TEST(SampleDrop, KeptCountRoundsHalvesAway) {
  EXPECT_EQ(kept_count(0.5, 41), 21u);  // 20.5
  EXPECT_EQ(kept_count(0.9, 200), 20u);
  EXPECT_EQ(kept_count(0.3, 10), 7u);
  EXPECT_THROW(kept_count(1.0, 10), std::invalid_argument);
  EXPECT_THROW(kept_count(-0.1, 10), std::invalid_argument);
}

TEST(SampleDrop, RejectsPlansKeepingFewerThanTwo) {
  Rng rng(1);
  EXPECT_THROW(sample_drop(rng, 0.9, 10), std::invalid_argument);
  EXPECT_THROW(sample_drop(rng, 0.0, 3), std::invalid_argument);
}

TEST(SampleDrop, FreshModeDrawsNewPlansEachCall) {
  Rng rng(5);
  const DropPlan a = sample_drop(rng, 0.5, 200), b = sample_drop(rng, 0.5, 200);
  EXPECT_NE(a.kept, b.kept);
}

TEST(SampleDrop, FixedPlansArePureFunctions) {
  const DropPlan a = fixed_drop(2, 7, 0.7, 200), b = fixed_drop(2, 7, 0.7, 200);
  EXPECT_EQ(a.kept, b.kept);
  EXPECT_EQ(a.mode, DropMode::fixed_per_seed);
  EXPECT_NE(a.kept, fixed_drop(2, 7, 0.5, 200).kept);
  EXPECT_NE(a.kept, fixed_drop(2, 8, 0.7, 200).kept);
  EXPECT_NE(a.kept, fixed_drop(3, 7, 0.7, 200).kept);

  // Fixed mode through sample_drop ignores the state of the generator.
  Rng r1(9), r2(9);
  r2.uniform();
  EXPECT_EQ(sample_drop(r1, 0.3, 50, DropMode::fixed_per_seed).kept,
            sample_drop(r2, 0.3, 50, DropMode::fixed_per_seed).kept);
}

TEST(ApplyDrop, FullPlanIsIdentity) {
  const TimestampedSeries s = unit_series(9, 2);
  Rng rng(0);
  const TimestampedSeries out = apply_drop(s, sample_drop(rng, 0.0, 9));
  EXPECT_EQ(out.timestamps, s.timestamps);
  EXPECT_EQ(out.values, s.values);
}

TEST(ApplyDrop, EveryOtherIndexGivesGapsOfTwo) {
  const TimestampedSeries s = unit_series(12);
  DropPlan p;
  for (std::size_t k = 0; k < 12; k += 2) p.kept.push_back(k);
  const TimestampedSeries out = apply_drop(s, p);
  ASSERT_EQ(out.length(), 6u);
  for (double g : gaps(out)) EXPECT_EQ(g, 2.0);
  for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(out.value(i, 0), s.value(2 * i, 0));
}

TEST(ApplyDrop, TimestampsStayASubsequenceAndGapsTelescope) {
  Rng rng(11);
  TimestampedSeries s;
  double t = 0.0;
  for (int k = 0; k < 300; ++k) {
    t += rng.uniform(0.01, 2.0);
    s.timestamps.push_back(t);
    s.values.push_back(rng.normal());
  }
  for (double r : {0.1, 0.5, 0.9}) {
    const DropPlan p = sample_drop(rng, r, s.length());
    const TimestampedSeries out = apply_drop(s, p);
    for (std::size_t i = 0; i < out.length(); ++i) EXPECT_EQ(out.timestamps[i], s.timestamps[p.kept[i]]);
    const std::vector<double> g = gaps(out);
    double sum = 0.0;
    for (double x : g) sum += x;
    EXPECT_NEAR(sum, out.timestamps.back() - out.timestamps.front(), 1e-12);
    const std::vector<double> d = step_sizes(out);
    ASSERT_EQ(d.size(), out.length());
    EXPECT_EQ(d.back(), g.back());
  }
}

TEST(ApplyDrop, OutOfRangeIndexThrows) {
  const TimestampedSeries s = unit_series(5);
  DropPlan p;
  p.kept = {0, 2, 5};
  EXPECT_THROW(apply_drop(s, p), std::out_of_range);
  p.kept = {2, 1};
  EXPECT_THROW(apply_drop(s, p), std::invalid_argument);
}

TEST(Variants, TableMatchesTheSixRows) {
  const auto& t = variant_table();
  ASSERT_EQ(t.size(), 6u);
  EXPECT_EQ(find_variant("s5").hidden, 80u);
  EXPECT_EQ(find_variant("tides_lambda").hidden, 80u);
  for (const char* n : {"mamba", "tides", "tides_bc", "tides_full"}) EXPECT_EQ(find_variant(n).hidden, 16u) << n;
  const VariantSpec& m = find_variant("mamba");
  EXPECT_TRUE(m.id_bc && m.id_delta && !m.id_re_lambda && !m.id_im_lambda);
  const VariantSpec& td = find_variant("tides");
  EXPECT_TRUE(td.id_bc && td.id_re_lambda && !td.id_im_lambda && !td.id_delta);
  EXPECT_THROW(find_variant("s4"), std::invalid_argument);
}

TEST(Variants, UnsupportedCombinationFails) {
  VariantSpec v{"odd", true, false, false, true, 16};
  EXPECT_THROW(v.validate(), std::invalid_argument);
  EXPECT_THROW(variant_model_config(v, 1, 3), std::invalid_argument);
}

TEST(Variants, ParameterCountsAreMatched) {
  std::size_t s5 = 0;
  for (const VariantSpec& v : variant_table()) {
    Rng rng(0);
    block::Model m = build_variant(v, 1, 3, rng);
    const std::size_t n = m.parameter_count();
    EXPECT_EQ(n, block::analytic_parameter_count(variant_model_config(v, 1, 3))) << v.name;
    if (v.name == "s5") s5 = n;
  }
  for (const VariantSpec& v : variant_table()) {
    Rng rng(0);
    const double n = static_cast<double>(build_variant(v, 1, 3, rng).parameter_count());
    EXPECT_NEAR(n / static_cast<double>(s5), 1.0, 0.10) << v.name;
  }
}

TEST(Variants, DeltaChannelOnlyForLearnedGate) {
  TimestampedSeries s = unit_series(8);
  DropPlan p;
  p.kept = {0, 1, 3, 6, 7};
  const TimestampedSeries d = apply_drop(s, p);
  const std::vector<const TimestampedSeries*> batch = {&d, &d};
  const std::vector<double> steps = step_sizes(d);
  for (const VariantSpec& v : variant_table()) {
    const VariantInputs in = variant_inputs(v, batch);
    EXPECT_EQ(in.delta_channel, v.id_delta) << v.name;
    EXPECT_EQ(in.u.cols(), 1u + (v.id_delta ? 1u : 0u)) << v.name;
    for (std::size_t r = 0; r < in.u.rows(); ++r) {
      EXPECT_EQ(in.delta[r], steps[r % d.length()]);
      EXPECT_EQ(in.u.at(r, 0), d.value(r % d.length(), 0));
      if (v.id_delta) {
        EXPECT_EQ(in.u.at(r, 1), steps[r % d.length()]);
      }
    }
  }
}

TEST(Variants, RaggedBatchIsRejected) {
  const TimestampedSeries a = unit_series(6), b = unit_series(7);
  EXPECT_THROW(variant_inputs(find_variant("s5"), {&a, &b}), std::invalid_argument);
}

TEST(Variants, LtiVariantMatchesIndependentRecurrence) {
  Rng rng(21);
  for (const char* name : {"s5", "tides"}) {
    VariantSpec v = find_variant(name);
    v.hidden = 6;
    block::Model m = build_variant(v, 1, 3, rng, 4);
    const ssm::SsmLayer& layer = m.blocks.at(0).ssm;
    TimestampedSeries s;
    double t = 0.0;
    for (int k = 0; k < 30; ++k) {
      t += rng.uniform(0.2, 3.0);
      s.timestamps.push_back(t);
      s.values.push_back(rng.normal());
    }
    const VariantInputs in = variant_inputs(v, {&s});
    const ad::Tensor x = tides::testing::random_tensor({s.length(), v.hidden}, rng);
    ad::Tape tape;
    ad::ParamBinder bind(tape);
    const ad::Tensor got = ssm::ssm_forward(bind, layer, tape.constant(x), tape.constant(in.delta), s.length()).value();
    const ad::Tensor want = tides::testing::lti_oracle(layer, x, in.delta, s.length());
    ASSERT_EQ(got.size(), want.size());
    for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], want[i], 1e-12) << name;
  }
}

TEST(Csv, HeaderOnlyGivesEmptyDataset) {
  EXPECT_TRUE(ingest_csv(write_temp("empty", "series_id,timestamp,label,c0\n")).empty());
}

TEST(Csv, TwoSeriesOfThreeRows) {
  const Dataset d = ingest_csv(write_temp("two", "series_id,timestamp,label,c0,c1\n"
                                                  "a,0,1,1,2\na,1,1,3,4\na,2.5,1,5,6\n"
                                                  "b,0,0,7,8\nb,2,0,9,10\nb,3,0,11,12\n"));
  ASSERT_EQ(d.size(), 2u);
  EXPECT_EQ(d[0].length(), 3u);
  EXPECT_EQ(d[0].channels, 2u);
  EXPECT_EQ(d[0].label, 1u);
  EXPECT_EQ(d[1].label, 0u);
  EXPECT_EQ(d[0].value(2, 1), 6.0);
  EXPECT_EQ(d[1].timestamps, (std::vector<double>{0, 2, 3}));
}

TEST(Csv, UnsortedRowsMatchSortedInput) {
  const Dataset sorted = ingest_csv(write_temp("sorted", "series_id,timestamp,label,c0\n"
                                                         "x,0,2,1\nx,1,2,2\nx,4,2,3\ny,0.5,1,4\ny,0.7,1,5\n"));
  const Dataset shuffled = ingest_csv(write_temp("shuffled", "series_id,timestamp,label,c0\n"
                                                             "y,0.7,1,5\nx,4,2,3\nx,0,2,1\ny,0.5,1,4\nx,1,2,2\n"));
  ASSERT_EQ(sorted.size(), shuffled.size());
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    EXPECT_EQ(sorted[i].timestamps, shuffled[i].timestamps);
    EXPECT_EQ(sorted[i].values, shuffled[i].values);
    EXPECT_EQ(sorted[i].label, shuffled[i].label);
  }
}

TEST(Csv, ErrorsNameTheLineOrSeries) {
  EXPECT_NE(error_of(write_temp("dup", "series_id,timestamp,label,c0\ns1,0,0,1\ns1,0,0,2\n")).find("s1"),
            std::string::npos);
  EXPECT_NE(error_of(write_temp("ragged", "series_id,timestamp,label,c0\ns,0,0,1\ns,1,0\n")).find("line 3"),
            std::string::npos);
  EXPECT_NE(error_of(write_temp("bad", "series_id,timestamp,label,c0\ns,0,0,1\ns,1,0,x\n")).find("line 3"),
            std::string::npos);
  EXPECT_NE(error_of(write_temp("hdr", "id,t,label,c0\n")).find("line 1"), std::string::npos);
  EXPECT_THROW(ingest_csv("/nonexistent/tides.csv"), std::runtime_error);
}

TEST(Synth, BalancedLabelsAndShape) {
  Rng rng(0);
  const Dataset d = synth_classification(rng, 31);
  ASSERT_EQ(d.size(), 31u);
  std::map<std::size_t, int> count;
  for (const TimestampedSeries& s : d) {
    ++count[s.label];
    EXPECT_EQ(s.length(), kSynthLength);
    EXPECT_EQ(s.timestamps.front(), 0.0);
    EXPECT_EQ(s.timestamps.back(), static_cast<double>(kSynthLength - 1));
    EXPECT_NO_THROW(s.validate());
  }
  ASSERT_EQ(count.size(), 3u);
  for (const auto& [label, n] : count) {
    EXPECT_LT(label, 3u);
    EXPECT_LE(std::abs(n - 31 / 3), 1);
  }
  EXPECT_THROW(synth_classification(rng, 2), std::invalid_argument);
}

TEST(Synth, DeterministicForSeed) {
  Rng a(8), b(8);
  const Dataset x = synth_classification(a, 12), y = synth_classification(b, 12);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(x[i].values, y[i].values);
}

TEST(Synth, DecayOracleRecoversLabels) {
  Rng rng(1);
  const Dataset d = synth_classification(rng, 3000);
  std::size_t correct = 0;
  for (const TimestampedSeries& s : d) correct += oracle_classify(s) == s.label;
  EXPECT_GE(static_cast<double>(correct) / static_cast<double>(d.size()), 0.99);
}

TEST(Sweep, ProducesOneRowPerCell) {
  Rng rng(2);
  Dataset all = synth_classification(rng, 20), train, test;
  split_dataset(all, 0.3, train, test);
  EXPECT_EQ(test.size(), 6u);
  EXPECT_EQ(train.size(), 14u);
  for (TimestampedSeries& s : train) s = apply_drop(s, fixed_drop(0, 0, 0.8, s.length()));
  for (TimestampedSeries& s : test) s = apply_drop(s, fixed_drop(0, 0, 0.8, s.length()));

  SweepConfig c;
  c.specs = {find_variant("s5"), find_variant("mamba")};
  for (VariantSpec& v : c.specs) v.hidden = 4;
  c.seeds = {0, 1};
  c.r_test = {0.1, 0.5};
  c.epochs = 1;
  std::size_t cells = 0;
  const SweepResult r = run_sweep(train, test, c, [&](const VariantSpec&, std::uint64_t) { ++cells; });
  EXPECT_EQ(cells, 4u);
  ASSERT_EQ(r.rows.size(), 8u);
  for (const SweepRow& row : r.rows) {
    EXPECT_GE(row.accuracy, 0.0);
    EXPECT_LE(row.accuracy, 1.0);
    EXPECT_EQ(row.r_train, 0.5);
  }
  EXPECT_NO_THROW(r.mean_accuracy("mamba", 0.5));
  EXPECT_THROW(r.mean_accuracy("tides", 0.5), std::out_of_range);

  const SweepResult again = run_sweep(train, test, c);
  for (std::size_t i = 0; i < r.rows.size(); ++i) EXPECT_EQ(r.rows[i].accuracy, again.rows[i].accuracy);
}

TEST(Sweep, RejectsMixedLengths) {
  Dataset train = {unit_series(10), unit_series(11)}, test = {unit_series(10)};
  EXPECT_THROW(run_sweep(train, test, SweepConfig{}), std::invalid_argument);
}
