#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tractcloud/checkpoint.hpp"
#include "tractcloud/nn/tensor.hpp"
#include "tractcloud/pointnet.hpp"
#include "tractcloud/rng.hpp"
#include "tractcloud/tract.hpp"
#include "tractcloud/tract_io.hpp"

namespace tractcloud {

struct TrainConfig {
  std::size_t epochs = 500;
  double lr = 1e-3;
  std::size_t batch_pairs = 16;  // 16 pairs = 32 subjects per optimizer step
  double weight_decay = 5e-3;
  double loss_weight = 0.1;  // w on the paired-siamese term
  std::size_t sample_points = 2048;
  std::uint64_t seed = 0;
  std::size_t eval_every = 10;
  TargetMode target_mode = TargetMode::raw;
  ModelConfig model;

  void validate() const;
  nlohmann::ordered_json to_json() const;
};

struct SampledCloud {
  std::vector<double> values;    // N x 5, row-major, unstandardized
  std::vector<std::size_t> rows;  // source row of every sample
};

/// N uniform draws without replacement when P >= N (in random order);
/// otherwise all P rows followed by N - P uniform draws with replacement.
SampledCloud sample_point_cloud(const PointTable& table, std::size_t n, Rng& rng);

struct LossTerms {
  double total = 0.0;
  double pre = 0.0;  // mean of the two branch MSEs
  double ps = 0.0;   // paired-siamese term
};

/// (1/B) sum_i ((y1_i - y2_i) - (p1_i - p2_i))^2
double paired_siamese_loss(std::span<const double> y1, std::span<const double> y2,
                           std::span<const double> p1, std::span<const double> p2);

/// pre = (mse(p1, y1) + mse(p2, y2)) / 2, total = pre + w * ps.
LossTerms total_loss(std::span<const double> y1, std::span<const double> y2, std::span<const double> p1,
                     std::span<const double> p2, double w);

struct LossGraph {
  nn::Tensor total;
  nn::Tensor pre;
  nn::Tensor ps;
};

/// Differentiable form used in training. `count2` (0/1 per pair) drops a
/// second member from the prediction term when it was already counted this
/// epoch; an empty span counts every member.
LossGraph total_loss_graph(const nn::Tensor& y1, const nn::Tensor& y2, const nn::Tensor& p1,
                           const nn::Tensor& p2, double w, std::span<const double> count2 = {});

struct SubjectPair {
  std::size_t first = 0;
  std::size_t second = 0;
  bool count_second = true;  // false when `second` already has its own pair
};

/// Shuffle, pair neighbours; with an odd count the leftover is paired with a
/// uniformly chosen other subject.
std::vector<SubjectPair> make_pairs(std::size_t n, Rng& rng);

/// [begin, end) ranges of at most batch_pairs pairs; a trailing single pair
/// joins the previous range.
std::vector<std::pair<std::size_t, std::size_t>> make_steps(std::size_t pairs, std::size_t batch_pairs);

struct Subject {
  std::string id;
  PointTable points;
  double score = 0.0;
};

/// Reads and flattens the tracts of one split.
std::vector<Subject> load_subjects(const Manifest& manifest, Split split);

struct EpochLog {
  std::size_t epoch = 0;
  double total = 0.0;
  double pre = 0.0;
  double ps = 0.0;
  double train_mae = 0.0;
  std::optional<double> test_mae;
  std::optional<double> test_r;
};

std::string log_csv_header();
std::string log_csv_row(const EpochLog& row);

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<EpochLog> log;
};

using EpochCallback = std::function<void(const EpochLog&)>;

/// Siamese training: each epoch shuffles the training subjects, pairs
/// neighbours (an odd leftover joins a random earlier subject), draws fresh
/// point samples and takes one Adamax step per batch of pairs. Deterministic
/// given config, seed and data. `eval` may be empty.
TrainResult train(std::span<const Subject> train_set, std::span<const Subject> eval,
                  const TrainConfig& config, const EpochCallback& on_epoch = {});

TrainResult train(const Manifest& manifest, const TrainConfig& config, const EpochCallback& on_epoch = {});

/// Single-branch inference from a checkpoint.
class Predictor {
 public:
  explicit Predictor(const Checkpoint& ckpt);

  /// Eval-mode prediction in score units. Point sampling is seeded from
  /// (seed, subject id, repeat); repeats > 1 average independent samplings.
  /// The default seed is the checkpoint's evaluation seed.
  double predict(const Tract& tract, std::size_t repeats = 1, std::optional<std::uint64_t> seed = {}) const;
  double predict(const PointTable& table, const std::string& subject_id, std::size_t repeats = 1,
                 std::optional<std::uint64_t> seed = {}) const;

  const PointNet& model() const { return model_; }
  const InputStats& input_stats() const { return input_; }
  std::size_t sample_points() const { return sample_points_; }

 private:
  PointNet model_;
  InputStats input_;
  TargetMode target_mode_;
  double target_mean_;
  double target_std_;
  std::size_t sample_points_;
  std::uint64_t eval_seed_;
};

}  // namespace tractcloud
