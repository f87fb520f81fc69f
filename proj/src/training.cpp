#include "gnnopf/training.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "gnnopf/errors.hpp"
#include "gnnopf/evalbench.hpp"
#include "gnnopf/rng.hpp"

namespace gnnopf {

namespace {

enum Stream : std::uint64_t { kSplitStream = 1, kInitStream = 2, kShuffleStream = 3 };

bool all_finite(const ModelParams& p) {
  for (const auto& t : p.tensors) {
    if (!t.allFinite()) return false;
  }
  return true;
}

}  // namespace

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ContractError("learning_rate must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) throw ContractError("beta1 must lie in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ContractError("beta2 must lie in [0, 1)");
  if (!(epsilon > 0.0)) throw ContractError("epsilon must be positive");
  if (epochs < 0) throw ContractError("epochs must be nonnegative");
  if (batch_size < 1) throw ContractError("batch_size must be positive");
  if (!(split_fraction > 0.0 && split_fraction < 1.0)) {
    throw ContractError("split_fraction must lie in (0, 1)");
  }
}

LossValue mse_loss(const Eigen::Ref<const Eigen::VectorXd>& p_hat,
                   const Eigen::Ref<const Eigen::VectorXd>& p_star) {
  if (p_hat.size() != p_star.size() || p_hat.size() == 0) {
    throw ContractError("mse_loss: vectors must have the same nonzero length");
  }
  const Eigen::VectorXd diff = p_hat - p_star;
  const auto m = static_cast<double>(diff.size());
  return {diff.squaredNorm() / m, (2.0 / m) * diff};
}

std::vector<std::size_t> seeded_permutation(std::size_t n, std::mt19937_64& rng) {
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  for (std::size_t i = n; i > 1; --i) {
    const auto j = static_cast<std::size_t>(unit_draw(rng) * static_cast<double>(i));
    std::swap(perm[i - 1], perm[std::min(j, i - 1)]);
  }
  return perm;
}

DatasetSplit split_indices(std::size_t n, double fraction, std::uint64_t seed) {
  if (n == 0) throw ContractError("split: dataset is empty");
  if (!(fraction > 0.0 && fraction < 1.0)) throw ContractError("split fraction must lie in (0, 1)");
  std::mt19937_64 rng(derive_seed(seed, kSplitStream));
  const auto perm = seeded_permutation(n, rng);
  const auto n_train = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n)));
  DatasetSplit s;
  s.train.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.test.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_train), perm.end());
  return s;
}

DatasetSplit split_dataset(const Dataset& dataset, double fraction, std::uint64_t seed) {
  return split_indices(dataset.size(), fraction, seed);
}

AdamState AdamState::zeros_like(const ModelParams& params) {
  AdamState s;
  for (const auto& t : params.tensors) {
    s.m.push_back(RowMatrix::Zero(t.rows(), t.cols()));
    s.v.push_back(RowMatrix::Zero(t.rows(), t.cols()));
  }
  return s;
}

void adam_step(ModelParams& params, const ModelParams& grads, AdamState& state,
               const TrainConfig& config) {
  if (grads.tensors.size() != params.tensors.size() || state.m.size() != params.tensors.size()) {
    throw ContractError("adam_step: parameter, gradient and state shapes differ");
  }
  if (!all_finite(grads)) throw TrainingError("non-finite gradient");
  ++state.step;
  const double b1 = config.beta1;
  const double b2 = config.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.tensors.size(); ++i) {
    auto& m = state.m[i];
    auto& v = state.v[i];
    const auto& g = grads.tensors[i];
    if (g.rows() != m.rows() || g.cols() != m.cols()) {
      throw ContractError("adam_step: gradient '" + grads.names[i] + "' has the wrong shape");
    }
    m = b1 * m + (1.0 - b1) * g;
    v = b2 * v + (1.0 - b2) * g.cwiseProduct(g);
    params.tensors[i].array() -=
        config.learning_rate * (m.array() / c1) / ((v.array() / c2).sqrt() + config.epsilon);
  }
}

std::string TrainHistory::to_csv() const {
  std::string out = "epoch,train_loss,test_metric,seconds\n";
  char buf[128];
  std::snprintf(buf, sizeof buf, "0,%.17g,,0\n", initial_train_loss);
  out += buf;
  for (const auto& e : epochs) {
    std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.6f\n", e.epoch, e.train_loss, e.test_metric,
                  e.seconds);
    out += buf;
  }
  return out;
}

bool TrainHistory::same_values(const TrainHistory& other) const {
  if (initial_train_loss != other.initial_train_loss || epochs.size() != other.epochs.size()) {
    return false;
  }
  for (std::size_t i = 0; i < epochs.size(); ++i) {
    const auto& a = epochs[i];
    const auto& b = other.epochs[i];
    if (a.epoch != b.epoch || a.train_loss != b.train_loss || a.test_metric != b.test_metric) {
      return false;
    }
  }
  return true;
}

Standardizer fit_standardizer(const Dataset& dataset, const std::vector<std::size_t>& indices) {
  std::vector<Eigen::MatrixXd> states;
  std::vector<Eigen::VectorXd> targets;
  states.reserve(indices.size());
  targets.reserve(indices.size());
  for (std::size_t i : indices) {
    states.push_back(dataset.samples.at(i).x.as_matrix());
    targets.push_back(dataset.samples.at(i).p_star);
  }
  return Standardizer::fit(states, targets);
}

TrainingTensors make_tensors(const Dataset& dataset, const std::vector<std::size_t>& indices,
                             const Standardizer& stats) {
  const int n = dataset.n_buses();
  const int m = dataset.n_generators();
  const auto s = static_cast<Eigen::Index>(indices.size());
  TrainingTensors t;
  t.inputs.resize(s * n, 4);
  t.targets.resize(s, m);
  t.raw_targets.resize(s, m);
  for (Eigen::Index k = 0; k < s; ++k) {
    const Sample& sample = dataset.samples.at(indices[static_cast<std::size_t>(k)]);
    t.inputs.middleRows(k * n, n) = sample.x.as_matrix();
    t.raw_targets.row(k) = sample.p_star.transpose();
  }
  stats.normalize_inputs(t.inputs);
  t.targets = ((t.raw_targets.array() - stats.target_mean) / stats.target_std).matrix();
  return t;
}

Gso dataset_gso(const Dataset& dataset) {
  const double k = dataset.config.kernel_k > 0.0 ? dataset.config.kernel_k
                                                 : default_kernel_k(dataset.grid);
  return build_gso(dataset.grid, k, dataset.config.threshold_omega, dataset.config.normalize_gso);
}

ModelSpec spec_for(const Dataset& dataset, Architecture arch) {
  std::vector<int> gens;
  for (const auto& g : dataset.grid.generators) gens.push_back(g.bus);
  return ModelSpec::defaults(arch, dataset.n_buses(), std::move(gens));
}

RowMatrix predict_tensors(const ModelSpec& spec, const ModelParams& params, const Gso& gso,
                          const RowMatrix& inputs, const Standardizer& stats, int chunk) {
  const int n = spec.n_buses;
  const Eigen::Index samples = inputs.rows() / n;
  RowMatrix out(samples, spec.n_generators());
  for (Eigen::Index start = 0; start < samples; start += chunk) {
    const Eigen::Index len = std::min<Eigen::Index>(chunk, samples - start);
    out.middleRows(start, len) = forward_batch(spec, params, inputs.middleRows(start * n, len * n), gso);
  }
  return ((out.array() * stats.target_std) + stats.target_mean).matrix();
}

double mean_squared_error(const ModelSpec& spec, const ModelParams& params, const Gso& gso,
                          const TrainingTensors& data, int chunk) {
  const int n = spec.n_buses;
  const Eigen::Index samples = data.targets.rows();
  if (samples == 0) return 0.0;
  double total = 0.0;
  for (Eigen::Index start = 0; start < samples; start += chunk) {
    const Eigen::Index len = std::min<Eigen::Index>(chunk, samples - start);
    const RowMatrix out = forward_batch(spec, params, data.inputs.middleRows(start * n, len * n), gso);
    total += (out - data.targets.middleRows(start, len)).squaredNorm();
  }
  return total / static_cast<double>(samples * data.targets.cols());
}

ModelParams initial_params(const ModelSpec& spec, const TrainConfig& config) {
  return init_params(spec, derive_seed(config.seed, kInitStream));
}

TrainResult train(const Dataset& dataset, const ModelSpec& spec, const TrainConfig& config,
                  const EpochFn& on_epoch) {
  config.validate();
  spec.validate();
  if (spec.n_buses != dataset.n_buses() || spec.n_generators() != dataset.n_generators()) {
    throw ContractError("train: model expects N=" + std::to_string(spec.n_buses) + ", M=" +
                        std::to_string(spec.n_generators()) + " but the dataset has N=" +
                        std::to_string(dataset.n_buses()) + ", M=" +
                        std::to_string(dataset.n_generators()));
  }
  for (int g = 0; g < spec.n_generators(); ++g) {
    if (spec.generator_buses[static_cast<std::size_t>(g)] !=
        dataset.grid.generators[static_cast<std::size_t>(g)].bus) {
      throw ContractError("train: model generator buses differ from the dataset case");
    }
  }
  if (dataset.size() < 2) throw ContractError("train: need at least two samples");

  TrainResult result;
  result.split = split_dataset(dataset, config.split_fraction, config.seed);
  if (result.split.train.empty()) throw ContractError("train: training split is empty");
  result.stats = fit_standardizer(dataset, result.split.train);
  const TrainingTensors train_set = make_tensors(dataset, result.split.train, result.stats);
  const TrainingTensors test_set = make_tensors(dataset, result.split.test, result.stats);
  const Gso gso = dataset_gso(dataset);
  const int n = spec.n_buses;
  const int m = spec.n_generators();

  result.params = initial_params(spec, config);
  result.history.initial_train_loss = mean_squared_error(spec, result.params, gso, train_set);
  AdamState adam = AdamState::zeros_like(result.params);
  std::mt19937_64 shuffle_rng(derive_seed(config.seed, kShuffleStream));

  const auto n_train = static_cast<Eigen::Index>(result.split.train.size());
  RowMatrix batch_x;
  RowMatrix batch_y;
  ForwardTrace trace;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto order = seeded_permutation(static_cast<std::size_t>(n_train), shuffle_rng);
    int batch_index = 0;
    for (Eigen::Index start = 0; start < n_train; start += config.batch_size, ++batch_index) {
      const Eigen::Index len = std::min<Eigen::Index>(config.batch_size, n_train - start);
      batch_x.resize(len * n, 4);
      batch_y.resize(len, m);
      for (Eigen::Index k = 0; k < len; ++k) {
        const auto src = static_cast<Eigen::Index>(order[static_cast<std::size_t>(start + k)]);
        batch_x.middleRows(k * n, n) = train_set.inputs.middleRows(src * n, n);
        batch_y.row(k) = train_set.targets.row(src);
      }
      const RowMatrix out = forward_batch(spec, result.params, batch_x, gso, &trace);
      const RowMatrix d_out = (2.0 / static_cast<double>(len * m)) * (out - batch_y);
      const ModelParams grads = backward(spec, result.params, trace, d_out, gso);
      try {
        adam_step(result.params, grads, adam, config);
      } catch (const TrainingError& e) {
        throw TrainingError(std::string(e.what()) + " at epoch " + std::to_string(epoch) +
                            ", batch " + std::to_string(batch_index));
      }
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = mean_squared_error(spec, result.params, gso, train_set);
    if (!std::isfinite(rec.train_loss)) {
      throw TrainingError("training loss became non-finite at epoch " + std::to_string(epoch));
    }
    if (test_set.targets.rows() > 0) {
      const RowMatrix pred = predict_tensors(spec, result.params, gso, test_set.inputs, result.stats);
      rec.test_metric = relative_errors(pred, test_set.raw_targets).sqrt_ratio;
    }
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.history.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  return result;
}

}  // namespace gnnopf
