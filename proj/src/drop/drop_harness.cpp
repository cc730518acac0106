#include "tides/drop/drop_harness.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "tides/autodiff/adam.hpp"
#include "tides/autodiff/ops.hpp"

namespace tides::drop {

void TimestampedSeries::validate() const {
  if (length() < 2) throw std::invalid_argument("series: need at least two observations");
  if (channels == 0 || values.size() != length() * channels) {
    throw std::invalid_argument("series: values do not match " + std::to_string(length()) + " x " +
                                std::to_string(channels));
  }
  for (std::size_t k = 1; k < length(); ++k) {
    if (!(timestamps[k] > timestamps[k - 1])) {
      throw std::invalid_argument("series: timestamps not strictly increasing at index " + std::to_string(k));
    }
  }
}

std::size_t kept_count(double rate, std::size_t length) {
  if (!(rate >= 0.0 && rate < 1.0)) throw std::invalid_argument("drop: rate must lie in [0, 1)");
  return static_cast<std::size_t>(std::lround((1.0 - rate) * static_cast<double>(length)));
}

namespace {

DropPlan draw_plan(Rng& rng, double rate, std::size_t length, DropMode mode) {
  if (length < 4) throw std::invalid_argument("drop: sequences must have at least 4 steps");
  const std::size_t keep = kept_count(rate, length);
  if (keep < 2) {
    throw std::invalid_argument("drop: rate " + std::to_string(rate) + " keeps " + std::to_string(keep) + " of " +
                                std::to_string(length) + " steps");
  }
  DropPlan plan{rng.sample_without_replacement(length, keep), rate, mode};
  std::sort(plan.kept.begin(), plan.kept.end());
  return plan;
}

}  // namespace

DropPlan sample_drop(Rng& rng, double rate, std::size_t length, DropMode mode) {
  if (mode == DropMode::fixed_per_seed) return fixed_drop(rng.seed(), 0, rate, length);
  return draw_plan(rng, rate, length, mode);
}

DropPlan fixed_drop(std::uint64_t seed, std::size_t sequence_id, double rate, std::size_t length) {
  const std::uint64_t rate_key = static_cast<std::uint64_t>(std::llround(rate * 1e9));
  Rng rng = Rng(seed).split("eval-plan").split(sequence_id).split(rate_key);
  return draw_plan(rng, rate, length, DropMode::fixed_per_seed);
}

TimestampedSeries apply_drop(const TimestampedSeries& series, const DropPlan& plan) {
  TimestampedSeries out;
  out.channels = series.channels;
  out.label = series.label;
  for (std::size_t i = 0; i < plan.kept.size(); ++i) {
    const std::size_t k = plan.kept[i];
    if (k >= series.length()) {
      throw std::out_of_range("drop: index " + std::to_string(k) + " outside series of length " +
                              std::to_string(series.length()));
    }
    if (i > 0 && k <= plan.kept[i - 1]) throw std::invalid_argument("drop: plan indices must be strictly increasing");
    out.timestamps.push_back(series.timestamps[k]);
    for (std::size_t c = 0; c < series.channels; ++c) out.values.push_back(series.value(k, c));
  }
  return out;
}

std::vector<double> gaps(const TimestampedSeries& series) {
  std::vector<double> g;
  for (std::size_t k = 0; k + 1 < series.length(); ++k) g.push_back(series.timestamps[k + 1] - series.timestamps[k]);
  return g;
}

std::vector<double> step_sizes(const TimestampedSeries& series) {
  std::vector<double> d = gaps(series);
  if (d.empty()) throw std::invalid_argument("series: need at least two observations for step sizes");
  d.push_back(d.back());
  return d;
}

const std::vector<VariantSpec>& variant_table() {
  static const std::vector<VariantSpec> table = {
      {"s5", false, false, false, false, 80},        {"mamba", false, false, true, true, 16},
      {"tides", true, false, true, false, 16},       {"tides_lambda", true, false, false, false, 80},
      {"tides_bc", false, false, true, false, 16},   {"tides_full", true, true, true, false, 16},
  };
  return table;
}

const VariantSpec& find_variant(std::string_view name) {
  for (const VariantSpec& v : variant_table()) {
    if (v.name == name) return v;
  }
  throw std::invalid_argument("unknown variant '" + std::string(name) + "'");
}

void VariantSpec::validate() const {
  if (hidden == 0) throw std::invalid_argument("variant " + name + ": hidden width must be positive");
  for (const VariantSpec& v : variant_table()) {
    if (v.id_re_lambda == id_re_lambda && v.id_im_lambda == id_im_lambda && v.id_bc == id_bc && v.id_delta == id_delta) {
      return;
    }
  }
  throw std::invalid_argument("variant " + name + ": unsupported combination of input-dependent components");
}

block::ModelConfig variant_model_config(const VariantSpec& spec, std::size_t channels, std::size_t classes,
                                        std::size_t states) {
  spec.validate();
  if (channels == 0 || classes < 2) throw std::invalid_argument("variant: need channels >= 1 and classes >= 2");
  block::ModelConfig c;
  c.input_dim = channels + (spec.id_delta ? 1 : 0);
  c.hidden = spec.hidden;
  c.layers = 1;
  c.ssm_b = 1;
  c.ssm_mult = states;
  c.bc_rank = kVariantBcRank;
  c.bidirectional = true;
  c.disc = ssm::Discretization::zoh;
  c.selectivity = {spec.id_re_lambda, spec.id_im_lambda, spec.id_bc};
  c.delta_mode = spec.id_delta ? ssm::DeltaMode::learned_gate : ssm::DeltaMode::physical;
  c.task = block::Task::classification;
  c.output_dim = classes;
  return c;
}

block::Model build_variant(const VariantSpec& spec, std::size_t channels, std::size_t classes, Rng& rng,
                           std::size_t states) {
  return block::Model::init(variant_model_config(spec, channels, classes, states), rng);
}

VariantInputs variant_inputs(const VariantSpec& spec, const std::vector<const TimestampedSeries*>& batch) {
  if (batch.empty()) throw std::invalid_argument("variant inputs: empty batch");
  const std::size_t len = batch.front()->length(), ch = batch.front()->channels;
  const std::size_t width = ch + (spec.id_delta ? 1 : 0);
  VariantInputs in{ad::Tensor({batch.size() * len, width}), ad::Tensor({batch.size() * len, 1}), ch, spec.id_delta};
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const TimestampedSeries& s = *batch[b];
    if (s.length() != len || s.channels != ch) {
      throw std::invalid_argument("variant inputs: series in a batch must share length and channel count");
    }
    const std::vector<double> d = step_sizes(s);
    for (std::size_t k = 0; k < len; ++k) {
      const std::size_t row = b * len + k;
      for (std::size_t c = 0; c < ch; ++c) in.u.at(row, c) = s.value(k, c);
      if (spec.id_delta) in.u.at(row, ch) = d[k];
      in.delta[row] = d[k];
    }
  }
  return in;
}

double SweepResult::mean_accuracy(std::string_view spec, double r_test) const {
  double sum = 0.0;
  std::size_t n = 0;
  for (const SweepRow& r : rows) {
    if (r.spec == spec && r.r_test == r_test) {
      sum += r.accuracy;
      ++n;
    }
  }
  if (n == 0) throw std::out_of_range("sweep: no rows for " + std::string(spec));
  return sum / static_cast<double>(n);
}

namespace {

std::size_t class_count(const Dataset& train, const Dataset& test) {
  std::size_t k = 0;
  for (const Dataset* d : {&train, &test}) {
    for (const TimestampedSeries& s : *d) k = std::max(k, s.label + 1);
  }
  return std::max<std::size_t>(k, 2);
}

std::vector<std::size_t> predict(const VariantSpec& spec, block::Model& model,
                                 const std::vector<TimestampedSeries>& series) {
  std::vector<const TimestampedSeries*> batch;
  for (const TimestampedSeries& s : series) batch.push_back(&s);
  const VariantInputs in = variant_inputs(spec, batch);
  ad::Tape tape;
  ad::ParamBinder bind(tape);
  const ad::Tensor logits = block::model_forward(bind, model, tape.constant(in.u), tape.constant(in.delta),
                                                 series.front().length())
                                .value();
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < logits.cols(); ++c) {
      if (logits.at(i, c) > logits.at(i, best)) best = c;
    }
    out.push_back(best);
  }
  return out;
}

}  // namespace

SweepResult run_sweep(const Dataset& train, const Dataset& test, const SweepConfig& config,
                      const SweepProgress& progress) {
  if (train.empty() || test.empty()) throw std::invalid_argument("sweep: train and test sets must be nonempty");
  if (config.batch == 0) throw std::invalid_argument("sweep: batch must be positive");
  const std::size_t len = train.front().length(), ch = train.front().channels;
  for (const Dataset* d : {&train, &test}) {
    for (const TimestampedSeries& s : *d) {
      s.validate();
      if (s.length() != len || s.channels != ch) {
        throw std::invalid_argument("sweep: all series must share length and channel count");
      }
    }
  }
  kept_count(config.r_train, len);
  for (double r : config.r_test) kept_count(r, len);
  const std::size_t classes = class_count(train, test);

  SweepResult result;
  for (const VariantSpec& spec : config.specs) {
    for (std::uint64_t seed : config.seeds) {
      const Rng root = Rng(seed).split("sweep");
      Rng init_rng = root.split("init").split(spec.name);
      Rng order_rng = root.split("order").split(spec.name);
      Rng drop_rng = root.split("train-drops").split(spec.name);
      block::Model model = build_variant(spec, ch, classes, init_rng, config.states);
      std::vector<ad::Tensor*> params;
      model.visit_params([&params](const std::string&, ad::Tensor& t) { params.push_back(&t); });
      ad::AdamState adam;
      adam.config.lr = config.lr;
      adam.config.weight_decay = config.weight_decay;
      std::vector<ad::Tensor> grads(params.size());

      std::vector<std::size_t> order(train.size());
      std::iota(order.begin(), order.end(), 0);
      for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[order_rng.index(i)]);
        for (std::size_t start = 0; start < order.size(); start += config.batch) {
          const std::size_t end = std::min(order.size(), start + config.batch);
          std::vector<TimestampedSeries> kept;
          std::vector<std::size_t> labels;
          for (std::size_t i = start; i < end; ++i) {
            const TimestampedSeries& s = train[order[i]];
            kept.push_back(apply_drop(s, sample_drop(drop_rng, config.r_train, len)));
            labels.push_back(s.label);
          }
          std::vector<const TimestampedSeries*> batch;
          for (const TimestampedSeries& s : kept) batch.push_back(&s);
          const VariantInputs in = variant_inputs(spec, batch);
          ad::Tape tape;
          ad::ParamBinder bind(tape);
          const block::ForwardContext ctx{true, nullptr, nullptr};
          ad::Var logits = block::model_forward(bind, model, tape.constant(in.u), tape.constant(in.delta),
                                                kept.front().length(), ctx);
          ad::Var loss = ad::cross_entropy(logits, labels);
          if (!std::isfinite(loss.value().item())) {
            throw std::runtime_error("sweep " + spec.name + " seed " + std::to_string(seed) +
                                     ": non-finite loss in epoch " + std::to_string(epoch + 1));
          }
          const ad::Gradients g = tape.backward(loss);
          for (std::size_t i = 0; i < params.size(); ++i) {
            const ad::Var leaf = bind.find(*params[i]);
            grads[i] = leaf.valid() ? g[leaf] : ad::Tensor(params[i]->shape());
          }
          ad::adam_step(params, grads, adam);
        }
      }

      for (double r : config.r_test) {
        std::size_t correct = 0;
        for (std::size_t start = 0; start < test.size(); start += 64) {
          std::vector<TimestampedSeries> kept;
          for (std::size_t i = start; i < std::min(test.size(), start + 64); ++i) {
            kept.push_back(apply_drop(test[i], fixed_drop(seed, i, r, len)));
          }
          const std::vector<std::size_t> pred = predict(spec, model, kept);
          for (std::size_t i = 0; i < kept.size(); ++i) correct += pred[i] == kept[i].label;
        }
        result.rows.push_back(
            {spec.name, seed, config.r_train, r, static_cast<double>(correct) / static_cast<double>(test.size())});
      }
      if (progress) progress(spec, seed);
    }
  }
  return result;
}

void split_dataset(const Dataset& all, double test_fraction, Dataset& train, Dataset& test) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw std::invalid_argument("split: fraction must lie in (0, 1)");
  const long held = std::lround(10.0 * test_fraction);
  train.clear();
  test.clear();
  for (std::size_t i = 0; i < all.size(); ++i) (static_cast<long>(i % 10) < held ? test : train).push_back(all[i]);
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_number(const std::string& cell, std::size_t line_no, const char* what) {
  try {
    std::size_t used = 0;
    const double v = std::stod(cell, &used);
    if (used != cell.size() || !std::isfinite(v)) throw std::invalid_argument(cell);
    return v;
  } catch (const std::exception&) {
    throw std::invalid_argument("csv line " + std::to_string(line_no) + ": bad " + what + " '" + cell + "'");
  }
}

}  // namespace

Dataset ingest_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("csv: cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw std::invalid_argument("csv line 1: missing header");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const std::vector<std::string> header = split_csv_line(line);
  if (header.size() < 4 || header[0] != "series_id" || header[1] != "timestamp" || header[2] != "label") {
    throw std::invalid_argument("csv line 1: header must be series_id,timestamp,label,c0,...");
  }
  const std::size_t channels = header.size() - 3;

  struct Row {
    double t;
    std::vector<double> v;
  };
  std::map<std::string, std::vector<Row>> rows;
  std::map<std::string, std::size_t> labels;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::vector<std::string> cells = split_csv_line(line);
    if (cells.size() != header.size()) {
      throw std::invalid_argument("csv line " + std::to_string(line_no) + ": expected " +
                                  std::to_string(header.size()) + " fields, got " + std::to_string(cells.size()));
    }
    const std::string& id = cells[0];
    if (id.empty()) throw std::invalid_argument("csv line " + std::to_string(line_no) + ": empty series_id");
    Row r{parse_number(cells[1], line_no, "timestamp"), {}};
    const double label = parse_number(cells[2], line_no, "label");
    if (label < 0 || label != std::floor(label)) {
      throw std::invalid_argument("csv line " + std::to_string(line_no) + ": label must be a nonnegative integer");
    }
    for (std::size_t c = 0; c < channels; ++c) r.v.push_back(parse_number(cells[3 + c], line_no, "value"));
    const auto [it, inserted] = labels.emplace(id, static_cast<std::size_t>(label));
    if (!inserted && it->second != static_cast<std::size_t>(label)) {
      throw std::invalid_argument("csv line " + std::to_string(line_no) + ": series " + id + " changes label");
    }
    rows[id].push_back(std::move(r));
  }

  Dataset out;
  for (auto& [id, series_rows] : rows) {
    std::stable_sort(series_rows.begin(), series_rows.end(), [](const Row& a, const Row& b) { return a.t < b.t; });
    TimestampedSeries s;
    s.channels = channels;
    s.label = labels.at(id);
    for (std::size_t k = 0; k < series_rows.size(); ++k) {
      if (k > 0 && series_rows[k].t == series_rows[k - 1].t) {
        throw std::invalid_argument("csv: series " + id + " has duplicate timestamp " +
                                    std::to_string(series_rows[k].t));
      }
      s.timestamps.push_back(series_rows[k].t);
      s.values.insert(s.values.end(), series_rows[k].v.begin(), series_rows[k].v.end());
    }
    if (s.length() < 2) throw std::invalid_argument("csv: series " + id + " has fewer than two rows");
    out.push_back(std::move(s));
  }
  return out;
}

namespace {

inline constexpr std::array<double, 3> kSynthRates = {1.0, 1.5, 2.0};
// The first zone covers at least 70% of the series so its rate dominates
// the glow level even after heavy dropping.
inline constexpr std::size_t kSynthMinBoundary = 140;
inline constexpr std::size_t kSynthMaxBoundary = 185;
inline constexpr std::size_t kSynthMinSpan = 15;
inline constexpr double kSynthFlashProb = 0.8;

}  // namespace

Dataset synth_classification(Rng& rng, std::size_t n, std::size_t classes) {
  if (classes < 2 || classes > kSynthRates.size()) throw std::invalid_argument("synth: classes must be 2 or 3");
  if (n < classes) throw std::invalid_argument("synth: need at least one series per class");
  Dataset out;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t label = i % classes;
    const std::size_t n_zones = 2 + rng.index(2);
    std::vector<std::size_t> starts;
    for (;;) {
      std::vector<std::size_t> b = rng.sample_without_replacement(kSynthMaxBoundary - kSynthMinBoundary + 1,
                                                                  n_zones - 1);
      for (std::size_t& x : b) x += kSynthMinBoundary;
      std::sort(b.begin(), b.end());
      starts = {0};
      starts.insert(starts.end(), b.begin(), b.end());
      bool ok = true;
      for (std::size_t z = 0; z + 1 < n_zones; ++z) ok = ok && starts[z + 1] - starts[z] >= kSynthMinSpan;
      ok = ok && kSynthLength - starts.back() >= kSynthMinSpan;
      if (ok) break;
    }
    std::vector<std::size_t> rate(n_zones);
    rate[0] = label;
    for (std::size_t z = 1; z < n_zones; ++z) rate[z] = (rate[z - 1] + 1 + rng.index(kSynthRates.size() - 1)) % 3;

    std::vector<double> flash(kSynthLength, 0.0);
    for (double& p : flash) p = rng.bernoulli(kSynthFlashProb) ? 1.0 : 0.0;

    TimestampedSeries s;
    s.label = label;
    double h = 0.0;
    std::size_t zone = 0;
    for (std::size_t k = 0; k < kSynthLength; ++k) {
      if (zone + 1 < n_zones && k == starts[zone + 1]) ++zone;
      const double lambda = kSynthRates[rate[zone]];
      const double a = std::exp(-lambda * kSynthTimeScale);
      h = a * h + (1.0 - a) / lambda * flash[k];
      s.timestamps.push_back(static_cast<double>(k));
      s.values.push_back(h / kSynthTimeScale);
    }
    out.push_back(std::move(s));
  }
  return out;
}

TrainTest synth_benchmark(std::uint64_t seed, std::size_t n_train, std::size_t n_test) {
  const Rng root = Rng(seed).split("synth");
  Rng train_rng = root.split("train"), test_rng = root.split("test");
  return {synth_classification(train_rng, n_train), synth_classification(test_rng, n_test)};
}

std::size_t oracle_classify(const TimestampedSeries& series, std::size_t classes) {
  // A falling step carries no flash, so its ratio is exactly exp(-lambda dt tau).
  std::size_t k = 1;
  while (k < series.length() && !(series.value(k, 0) < series.value(k - 1, 0) && series.value(k, 0) > 0.0)) ++k;
  if (k >= series.length()) throw std::invalid_argument("oracle: no flash-free step");
  const double dt = series.timestamps[k] - series.timestamps[k - 1];
  const double rate = std::log(series.value(k - 1, 0) / series.value(k, 0)) / (dt * kSynthTimeScale);
  std::size_t best = 0;
  for (std::size_t c = 1; c < classes; ++c) {
    if (std::abs(kSynthRates[c] - rate) < std::abs(kSynthRates[best] - rate)) best = c;
  }
  return best;
}

}  // namespace tides::drop
