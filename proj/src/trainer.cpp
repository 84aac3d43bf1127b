#include "tractcloud/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "tractcloud/errors.hpp"
#include "tractcloud/metrics.hpp"
#include "tractcloud/nn/adamax.hpp"
#include "tractcloud/nn/ops.hpp"

namespace tractcloud {

using nn::Tensor;

namespace {

constexpr std::size_t kMaxInferenceRows = 16384;

void check_lengths(std::span<const double> y1, std::span<const double> y2, std::span<const double> p1,
                   std::span<const double> p2) {
  const auto b = y1.size();
  if (b == 0 || y2.size() != b || p1.size() != b || p2.size() != b) {
    throw ShapeError("paired loss needs four equal nonempty lengths, got " + std::to_string(y1.size()) + "/" +
                     std::to_string(y2.size()) + "/" + std::to_string(p1.size()) + "/" +
                     std::to_string(p2.size()));
  }
}

struct TargetScaling {
  TargetMode mode = TargetMode::raw;
  double mean = 0.0;
  double std = 1.0;

  double to_model(double score) const { return mode == TargetMode::raw ? score : (score - mean) / std; }
  double to_score(double value) const { return mode == TargetMode::raw ? value : value * std + mean; }
};

// Averages `repeats` eval-mode predictions over independent seeded samplings.
double predict_table(const PointNet& model, const InputStats& input, const TargetScaling& scaling,
                     std::size_t sample_points, const PointTable& table, const std::string& subject_id,
                     std::size_t repeats, std::uint64_t seed) {
  if (repeats == 0) throw ConfigError("repeats must be at least 1");
  if (table.rows() == 0) throw ValidationError("cannot predict from an empty tract");
  const std::size_t per_chunk = std::max<std::size_t>(1, kMaxInferenceRows / sample_points);
  double total = 0.0;
  for (std::size_t first = 0; first < repeats; first += per_chunk) {
    const std::size_t count = std::min(per_chunk, repeats - first);
    std::vector<double> batch;
    batch.reserve(count * sample_points * kPointChannels);
    for (std::size_t r = first; r < first + count; ++r) {
      Rng rng(derive_seed(seed, hash_string(subject_id), r));
      auto cloud = sample_point_cloud(table, sample_points, rng);
      batch.insert(batch.end(), cloud.values.begin(), cloud.values.end());
    }
    standardize(batch, input);
    const auto trace = model.infer(Tensor({count, sample_points, kPointChannels}, std::move(batch)));
    for (double v : trace.prediction.data()) total += scaling.to_score(v);
  }
  return total / static_cast<double>(repeats);
}

}  // namespace

std::vector<SubjectPair> make_pairs(std::size_t n, Rng& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  rng.shuffle(std::span<std::size_t>(order));
  std::vector<SubjectPair> pairs;
  for (std::size_t k = 0; k + 1 < n; k += 2) pairs.push_back({order[k], order[k + 1], true});
  if (n % 2 == 1) {
    const auto partner = order[static_cast<std::size_t>(rng.below(n - 1))];
    pairs.push_back({order[n - 1], partner, false});
  }
  return pairs;
}

// Chunks of batch_pairs; a trailing single pair joins the previous chunk so
// the head's batch norm never sees a batch of one.
std::vector<std::pair<std::size_t, std::size_t>> make_steps(std::size_t pairs, std::size_t batch_pairs) {
  std::vector<std::pair<std::size_t, std::size_t>> steps;
  for (std::size_t start = 0; start < pairs; start += batch_pairs) {
    steps.emplace_back(start, std::min(pairs, start + batch_pairs));
  }
  if (steps.size() > 1 && steps.back().second - steps.back().first == 1) {
    steps[steps.size() - 2].second = steps.back().second;
    steps.pop_back();
  }
  return steps;
}

namespace {

std::string optional_field(const std::optional<double>& v) { return v ? format_double(*v) : std::string(); }

}  // namespace

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be at least 1");
  if (!(lr >= 0.0)) throw ConfigError("learning rate must be nonnegative");
  if (batch_pairs < 1) throw ConfigError("batch_pairs must be at least 1");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight decay must be nonnegative");
  if (!(loss_weight >= 0.0)) throw ConfigError("loss weight w must be nonnegative");
  if (sample_points < 1) throw ConfigError("sample_points must be at least 1");
  if (eval_every < 1) throw ConfigError("eval_every must be at least 1");
  model.validate();
}

nlohmann::ordered_json TrainConfig::to_json() const {
  return {{"epochs", epochs},
          {"lr", lr},
          {"batch_pairs", batch_pairs},
          {"weight_decay", weight_decay},
          {"loss_weight", loss_weight},
          {"sample_points", sample_points},
          {"seed", seed},
          {"eval_every", eval_every},
          {"target_mode", to_string(target_mode)},
          {"mlp_widths", model.mlp_widths},
          {"head_widths", model.head_widths},
          {"bn_momentum", model.bn_momentum},
          {"bn_eps", model.bn_eps}};
}

SampledCloud sample_point_cloud(const PointTable& table, std::size_t n, Rng& rng) {
  const std::size_t p = table.rows();
  if (p == 0) throw ValidationError("cannot sample from an empty point table");
  SampledCloud cloud;
  cloud.rows.reserve(n);
  if (p >= n) {
    std::vector<std::size_t> idx(p);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    for (std::size_t i = 0; i < n; ++i) {
      const auto j = i + static_cast<std::size_t>(rng.below(p - i));
      std::swap(idx[i], idx[j]);
      cloud.rows.push_back(idx[i]);
    }
  } else {
    for (std::size_t i = 0; i < p; ++i) cloud.rows.push_back(i);
    for (std::size_t i = p; i < n; ++i) cloud.rows.push_back(static_cast<std::size_t>(rng.below(p)));
  }
  cloud.values.reserve(n * kPointChannels);
  for (auto r : cloud.rows) cloud.values.insert(cloud.values.end(), table.row(r), table.row(r) + kPointChannels);
  return cloud;
}

double paired_siamese_loss(std::span<const double> y1, std::span<const double> y2, std::span<const double> p1,
                           std::span<const double> p2) {
  check_lengths(y1, y2, p1, p2);
  double sum = 0.0;
  for (std::size_t i = 0; i < y1.size(); ++i) {
    const double d = (y1[i] - y2[i]) - (p1[i] - p2[i]);
    sum += d * d;
  }
  return sum / static_cast<double>(y1.size());
}

LossTerms total_loss(std::span<const double> y1, std::span<const double> y2, std::span<const double> p1,
                     std::span<const double> p2, double w) {
  check_lengths(y1, y2, p1, p2);
  double s1 = 0.0, s2 = 0.0;
  for (std::size_t i = 0; i < y1.size(); ++i) {
    s1 += (p1[i] - y1[i]) * (p1[i] - y1[i]);
    s2 += (p2[i] - y2[i]) * (p2[i] - y2[i]);
  }
  const auto b = static_cast<double>(y1.size());
  LossTerms terms;
  terms.pre = 0.5 * (s1 / b + s2 / b);
  terms.ps = paired_siamese_loss(y1, y2, p1, p2);
  terms.total = terms.pre + w * terms.ps;
  return terms;
}

LossGraph total_loss_graph(const Tensor& y1, const Tensor& y2, const Tensor& p1, const Tensor& p2, double w,
                           std::span<const double> count2) {
  check_lengths(y1.data(), y2.data(), p1.data(), p2.data());
  const Tensor pre1 = nn::mean(nn::square(nn::sub(p1, y1)));
  Tensor pre2;
  if (count2.empty()) {
    pre2 = nn::mean(nn::square(nn::sub(p2, y2)));
  } else {
    if (count2.size() != y1.numel()) throw ShapeError("count mask length differs from pair count");
    const double counted = std::accumulate(count2.begin(), count2.end(), 0.0);
    if (counted <= 0.0) throw ShapeError("count mask excludes every second member");
    const Tensor mask(y2.shape(), {count2.begin(), count2.end()});
    pre2 = nn::scale(nn::sum(nn::mul(nn::square(nn::sub(p2, y2)), mask)), 1.0 / counted);
  }
  LossGraph loss;
  loss.pre = nn::scale(nn::add(pre1, pre2), 0.5);
  loss.ps = nn::mean(nn::square(nn::sub(nn::sub(y1, y2), nn::sub(p1, p2))));
  loss.total = nn::add(loss.pre, nn::scale(loss.ps, w));
  return loss;
}

std::vector<Subject> load_subjects(const Manifest& manifest, Split split) {
  std::vector<Subject> subjects;
  for (const auto& row : manifest.rows) {
    if (row.split != split) continue;
    auto tract = read_tract(row.tract_path);
    tract.subject_id = row.subject_id;
    subjects.push_back({row.subject_id, flatten_points(tract), row.score});
  }
  return subjects;
}

std::string log_csv_header() { return "epoch,L_total,L_pre,L_ps,train_mae,test_mae,test_r\n"; }

std::string log_csv_row(const EpochLog& row) {
  return std::to_string(row.epoch) + "," + format_double(row.total) + "," + format_double(row.pre) + "," +
         format_double(row.ps) + "," + format_double(row.train_mae) + "," + optional_field(row.test_mae) + "," +
         optional_field(row.test_r) + "\n";
}

TrainResult train(std::span<const Subject> train_set, std::span<const Subject> eval, const TrainConfig& config,
                  const EpochCallback& on_epoch) {
  config.validate();
  if (train_set.size() < 2) {
    throw ConfigError("training needs at least 2 subjects, got " + std::to_string(train_set.size()));
  }
  for (const auto& s : train_set) {
    if (s.points.rows() == 0) throw ValidationError("subject '" + s.id + "' has no points");
  }

  std::vector<const PointTable*> tables;
  for (const auto& s : train_set) tables.push_back(&s.points);
  const InputStats input = estimate_input_stats(tables);

  TargetScaling scaling;
  scaling.mode = config.target_mode;
  {
    std::vector<double> scores;
    for (const auto& s : train_set) scores.push_back(s.score);
    scaling.mean = std::accumulate(scores.begin(), scores.end(), 0.0) / static_cast<double>(scores.size());
    double sq = 0.0;
    for (double y : scores) sq += (y - scaling.mean) * (y - scaling.mean);
    scaling.std = std::max(std::sqrt(sq / static_cast<double>(scores.size())), 1e-8);
  }

  PointNet model(config.model, config.seed);
  // Raw-unit targets start at the training mean instead of 0.
  if (scaling.mode == TargetMode::raw) model.set_output_bias(scaling.mean);
  auto params = model.parameters();
  nn::AdamaxState optimizer;
  optimizer.config = {config.lr, 0.9, 0.999, 1e-8, config.weight_decay};

  const std::uint64_t eval_seed = derive_seed(config.seed, hash_string("eval"));
  const std::size_t n_points = config.sample_points;
  std::vector<EpochLog> log;

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    Rng rng(derive_seed(config.seed, hash_string("epoch"), epoch));
    const auto pairs = make_pairs(train_set.size(), rng);
    const auto steps = make_steps(pairs.size(), config.batch_pairs);

    EpochLog entry;
    entry.epoch = epoch;
    double abs_err = 0.0;
    std::size_t counted = 0;
    for (const auto& [begin, end] : steps) {
      const std::size_t b = end - begin;
      std::vector<double> x1, x2, y1, y2, count2;
      x1.reserve(b * n_points * kPointChannels);
      x2.reserve(b * n_points * kPointChannels);
      for (std::size_t i = begin; i < end; ++i) {
        const auto& pair = pairs[i];
        auto c1 = sample_point_cloud(train_set[pair.first].points, n_points, rng);
        auto c2 = sample_point_cloud(train_set[pair.second].points, n_points, rng);
        x1.insert(x1.end(), c1.values.begin(), c1.values.end());
        x2.insert(x2.end(), c2.values.begin(), c2.values.end());
        y1.push_back(scaling.to_model(train_set[pair.first].score));
        y2.push_back(scaling.to_model(train_set[pair.second].score));
        count2.push_back(pair.count_second ? 1.0 : 0.0);
      }
      standardize(x1, input);
      standardize(x2, input);
      const auto t1 = model.forward(Tensor({b, n_points, kPointChannels}, std::move(x1)), nn::Mode::train);
      const auto t2 = model.forward(Tensor({b, n_points, kPointChannels}, std::move(x2)), nn::Mode::train);
      const Tensor ty1({b}, y1), ty2({b}, y2);
      const auto loss = total_loss_graph(ty1, ty2, t1.prediction, t2.prediction, config.loss_weight, count2);
      loss.total.backward();
      nn::adamax_step(params, optimizer);
      model.zero_grad();

      entry.total += loss.total.item();
      entry.pre += loss.pre.item();
      entry.ps += loss.ps.item();
      for (std::size_t i = 0; i < b; ++i) {
        abs_err += std::abs(scaling.to_score(t1.prediction.data()[i]) - scaling.to_score(y1[i]));
        ++counted;
        if (count2[i] > 0.0) {
          abs_err += std::abs(scaling.to_score(t2.prediction.data()[i]) - scaling.to_score(y2[i]));
          ++counted;
        }
      }
    }
    const auto n_steps = static_cast<double>(steps.size());
    entry.total /= n_steps;
    entry.pre /= n_steps;
    entry.ps /= n_steps;
    entry.train_mae = abs_err / static_cast<double>(counted);

    if (!eval.empty() && (epoch % config.eval_every == 0 || epoch == config.epochs)) {
      std::vector<double> pred, truth;
      for (const auto& s : eval) {
        pred.push_back(predict_table(model, input, scaling, n_points, s.points, s.id, 1, eval_seed));
        truth.push_back(s.score);
      }
      const auto report = evaluate(pred, truth);
      entry.test_mae = report.mae;
      if (report.n >= 2) entry.test_r = report.pearson_r;
    }
    log.push_back(entry);
    if (on_epoch) on_epoch(entry);
  }

  TrainResult result;
  auto& ckpt = result.checkpoint;
  ckpt.layers = model.layers();
  ckpt.tensors = model.state();
  ckpt.input = input;
  ckpt.target_mode = scaling.mode;
  ckpt.target_mean = scaling.mean;
  ckpt.target_std = scaling.std;
  ckpt.seed = config.seed;
  ckpt.eval_seed = eval_seed;
  ckpt.config = config.to_json();
  result.log = std::move(log);
  return result;
}

TrainResult train(const Manifest& manifest, const TrainConfig& config, const EpochCallback& on_epoch) {
  const auto train_set = load_subjects(manifest, Split::train);
  const auto test_set = load_subjects(manifest, Split::test);
  return train(train_set, test_set, config, on_epoch);
}

Predictor::Predictor(const Checkpoint& ckpt)
    : model_(PointNet::from_checkpoint(ckpt)),
      input_(ckpt.input),
      target_mode_(ckpt.target_mode),
      target_mean_(ckpt.target_mean),
      target_std_(ckpt.target_std),
      sample_points_(ckpt.config.value("sample_points", std::size_t{2048})),
      eval_seed_(ckpt.eval_seed) {}

double Predictor::predict(const Tract& tract, std::size_t repeats, std::optional<std::uint64_t> seed) const {
  return predict(flatten_points(tract), tract.subject_id, repeats, seed);
}

double Predictor::predict(const PointTable& table, const std::string& subject_id, std::size_t repeats,
                          std::optional<std::uint64_t> seed) const {
  const TargetScaling scaling{target_mode_, target_mean_, target_std_};
  return predict_table(model_, input_, scaling, sample_points_, table, subject_id, repeats,
                       seed.value_or(eval_seed_));
}

}  // namespace tractcloud
