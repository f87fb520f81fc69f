#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "gnnopf/datagen.hpp"
#include "gnnopf/graph_signal.hpp"
#include "gnnopf/models.hpp"

namespace gnnopf {

struct TrainConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  int epochs = 100;
  int batch_size = 128;
  double split_fraction = 0.8;
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

struct LossValue {
  double loss = 0.0;
  Eigen::VectorXd gradient;
};

/// (1/M) sum (p_hat - p_star)^2 and its gradient (2/M)(p_hat - p_star).
LossValue mse_loss(const Eigen::Ref<const Eigen::VectorXd>& p_hat,
                   const Eigen::Ref<const Eigen::VectorXd>& p_star);

struct DatasetSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

/// Seeded Fisher-Yates permutation of 0..n-1 (uses unit_draw, so the result
/// is identical on every platform).
std::vector<std::size_t> seeded_permutation(std::size_t n, std::mt19937_64& rng);

/// First floor(fraction * n) entries of a seeded permutation train, the rest test.
DatasetSplit split_indices(std::size_t n, double fraction, std::uint64_t seed);
DatasetSplit split_dataset(const Dataset& dataset, double fraction, std::uint64_t seed);

struct AdamState {
  std::vector<RowMatrix> m;
  std::vector<RowMatrix> v;
  std::int64_t step = 0;

  static AdamState zeros_like(const ModelParams& params);
};

/// One bias-corrected ADAM update. Throws TrainingError on a non-finite gradient.
void adam_step(ModelParams& params, const ModelParams& grads, AdamState& state,
               const TrainConfig& config);

struct EpochRecord {
  int epoch = 0;
  /// Mean squared error over the training split in standardized units.
  double train_loss = 0.0;
  /// Relative RMSE (headline form) of the de-standardized predictions on the test split.
  double test_metric = 0.0;
  /// Wall-clock seconds; the only field that varies between identical runs.
  double seconds = 0.0;
};

struct TrainHistory {
  double initial_train_loss = 0.0;
  std::vector<EpochRecord> epochs;

  double final_train_loss() const {
    return epochs.empty() ? initial_train_loss : epochs.back().train_loss;
  }
  /// epoch,train_loss,test_metric,seconds; epoch 0 is the initialization.
  std::string to_csv() const;
  /// Equality of every field except the timings.
  bool same_values(const TrainHistory& other) const;
};

/// Standardized tensors for one subset of a dataset.
struct TrainingTensors {
  RowMatrix inputs;          ///< (S*N) x 4, standardized
  RowMatrix targets;         ///< S x M, standardized
  RowMatrix raw_targets;     ///< S x M, per-unit
};

TrainingTensors make_tensors(const Dataset& dataset, const std::vector<std::size_t>& indices,
                             const Standardizer& stats);

Standardizer fit_standardizer(const Dataset& dataset, const std::vector<std::size_t>& indices);

/// GSO for the dataset's case with the parameters recorded at generation.
Gso dataset_gso(const Dataset& dataset);

/// Model spec with default widths for the dataset's case.
ModelSpec spec_for(const Dataset& dataset, Architecture arch);

/// Batched predictions in per-unit (S x M) for standardized inputs.
RowMatrix predict_tensors(const ModelSpec& spec, const ModelParams& params, const Gso& gso,
                          const RowMatrix& inputs, const Standardizer& stats,
                          int chunk = 256);

/// Mean over samples and outputs of the squared error in standardized units.
double mean_squared_error(const ModelSpec& spec, const ModelParams& params, const Gso& gso,
                          const TrainingTensors& data, int chunk = 256);

/// Parameters train() starts from for this spec and seed.
ModelParams initial_params(const ModelSpec& spec, const TrainConfig& config);

struct TrainResult {
  ModelParams params;
  TrainHistory history;
  Standardizer stats;
  DatasetSplit split;
};

using EpochFn = std::function<void(const EpochRecord&)>;

/// ADAM over seeded minibatches (last partial batch kept) for config.epochs
/// epochs. Initialization, split and shuffling draw from separate streams
/// derived from config.seed, so the run is a pure function of its inputs.
TrainResult train(const Dataset& dataset, const ModelSpec& spec, const TrainConfig& config,
                  const EpochFn& on_epoch = {});

}  // namespace gnnopf
