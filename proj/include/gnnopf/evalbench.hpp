#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "gnnopf/checkpoint.hpp"
#include "gnnopf/datagen.hpp"
#include "gnnopf/models.hpp"
#include "gnnopf/training.hpp"

namespace gnnopf {

struct RelativeErrors {
  /// Mean over samples of sqrt(|p* - p_hat| / |p*|).
  double sqrt_ratio = 0.0;
  /// Mean over samples of |p* - p_hat| / |p*|.
  double ratio = 0.0;
  int samples = 0;
  /// Samples with |p*| = 0, left out of both means.
  int skipped = 0;
};

/// Rows of `predicted` and `target` are samples.
RelativeErrors relative_errors(const Eigen::Ref<const RowMatrix>& predicted,
                               const Eigen::Ref<const RowMatrix>& target);

/// Both error forms of a model over the given samples of a dataset.
RelativeErrors relative_rmse(const ModelSpec& spec, const ModelParams& params,
                             const Standardizer& stats, const Gso& gso, const Dataset& dataset,
                             const std::vector<std::size_t>& indices);

struct TimingSummary {
  int repetitions = 0;
  double median = 0.0;  ///< seconds
  double q1 = 0.0;
  double q3 = 0.0;

  double iqr() const { return q3 - q1; }
};

/// Median and quartiles (linear interpolation between order statistics).
TimingSummary summarize_timings(std::vector<double> seconds);

struct BenchResult {
  TimingSummary model;
  TimingSummary oracle;
  double speedup = 0.0;
};

/// Times `model(i)` and `oracle(i)` call by call on inputs i = r mod n_inputs
/// for r < repetitions, after one untimed warm-up call each.
BenchResult timing_bench(const std::function<void(std::size_t)>& model,
                         const std::function<void(std::size_t)>& oracle, std::size_t n_inputs,
                         int repetitions);

/// Model inference through Predictor against DCOPF + ACOPF on the loads of
/// the same samples.
BenchResult bench_checkpoint(const Checkpoint& ckpt, const Dataset& dataset,
                             const std::vector<std::size_t>& indices, int repetitions);

struct ArchitectureRow {
  Architecture architecture = Architecture::local_gnn;
  std::size_t parameters = 0;
  double metric_sqrt = 0.0;
  double metric_linear = 0.0;
  double initial_train_loss = 0.0;
  double final_train_loss = 0.0;
  /// Timing columns stay zero unless a benchmark was run.
  double inference_median_s = 0.0;
  double speedup = 0.0;

  bool operator==(const ArchitectureRow&) const = default;
};

struct EvalReport {
  std::string case_id;
  std::uint64_t seed = 0;
  std::size_t n_train = 0;
  std::size_t n_test = 0;
  double oracle_median_s = 0.0;
  std::vector<ArchitectureRow> rows;

  const ArchitectureRow& row(Architecture arch) const;
  std::string to_json() const;
  static EvalReport from_json(std::string_view text);
  /// Aligned table: one row per architecture, both metric forms.
  std::string to_table() const;

  bool operator==(const EvalReport&) const = default;
};

struct ComparisonConfig {
  TrainConfig train;
  std::vector<Architecture> architectures{kAllArchitectures.begin(), kAllArchitectures.end()};
  /// Timing repetitions per architecture; 0 skips benchmarking.
  int bench_repetitions = 0;
};

/// Row for an already trained model (test split taken from its checkpoint).
ArchitectureRow evaluate_checkpoint(const Checkpoint& ckpt, const Dataset& dataset,
                                    const TrainHistory* history = nullptr);

using ComparisonProgress = std::function<void(Architecture, const EpochRecord&)>;

/// Trains every listed architecture with the same seed (hence the same split)
/// and collects their rows. Training failures are rethrown tagged with the
/// architecture name. Trained checkpoints are returned through `trained`
/// when given.
EvalReport run_comparison(const Dataset& dataset, const ComparisonConfig& config,
                          const ComparisonProgress& progress = {},
                          std::vector<Checkpoint>* trained = nullptr);

/// Packs a finished training run into a checkpoint.
Checkpoint make_checkpoint(const Dataset& dataset, const ModelSpec& spec,
                           const TrainConfig& config, const TrainResult& result);

}  // namespace gnnopf
