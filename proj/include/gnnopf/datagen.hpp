#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "gnnopf/electrical.hpp"
#include "gnnopf/graph_signal.hpp"
#include "gnnopf/grid_case.hpp"
#include "gnnopf/opf.hpp"

namespace gnnopf {

struct DatagenConfig {
  /// Each load component is drawn uniformly from [low, high] times its reference.
  double load_low = 0.9;
  double load_high = 1.1;
  /// Voltage magnitude held at every generator bus during the power flow.
  double gen_v_setpoint = 1.0;
  PowerFlowOptions power_flow;
  AcopfOptions acopf;
  /// Graph shift operator parameters recorded for training. A nonpositive
  /// kernel_k means the case default (1 / mean |z|^2).
  double kernel_k = 0.0;
  double threshold_omega = 0.01;
  bool normalize_gso = false;

  bool operator==(const DatagenConfig&) const = default;
};

struct SampleMeta {
  double dc_cost = 0.0;
  double ac_cost = 0.0;
  int pf_iterations = 0;
  int acopf_iterations = 0;
  Eigen::VectorXd gen_v_setpoints;
  /// Optimal reactive generation; kept for inspection, not a training target.
  Eigen::VectorXd q_star;
  /// Voltage magnitudes and angles at the ACOPF optimum.
  Eigen::VectorXd ac_v;
  Eigen::VectorXd ac_delta;
};

struct Sample {
  /// Steady state reached with the DCOPF dispatch (the network input).
  StateMatrix x;
  Eigen::VectorXd p_star;
  Eigen::VectorXd p_load;
  Eigen::VectorXd q_load;
  SampleMeta meta;
};

enum class RejectStage { none, dcopf, power_flow, acopf };

std::string_view to_string(RejectStage stage);

struct SampleOutcome {
  std::optional<Sample> sample;
  RejectStage stage = RejectStage::none;
  std::string detail;
};

struct GenerationStats {
  std::int64_t attempts = 0;
  std::int64_t accepted = 0;
  std::int64_t rejected_dcopf = 0;
  std::int64_t rejected_power_flow = 0;
  std::int64_t rejected_acopf = 0;

  double acceptance_rate() const {
    return attempts > 0 ? static_cast<double>(accepted) / static_cast<double>(attempts) : 0.0;
  }
  bool operator==(const GenerationStats&) const = default;
};

struct Dataset {
  std::string case_id;
  GridCase grid;
  std::uint64_t seed = 0;
  DatagenConfig config;
  GenerationStats stats;
  std::vector<Sample> samples;

  int n_buses() const { return grid.n_buses(); }
  int n_generators() const { return grid.n_generators(); }
  std::size_t size() const { return samples.size(); }
};

/// Random stream for attempt `index` of a run seeded with `seed`. Streams
/// depend only on (seed, index), never on scheduling.
std::mt19937_64 attempt_stream(std::uint64_t seed, std::uint64_t index);

struct LoadDraw {
  Eigen::VectorXd p_load;
  Eigen::VectorXd q_load;
};

/// Independent uniform draws around the case reference loads (all p first,
/// then all q). A zero reference stays exactly zero.
LoadDraw sample_loads(const GridCase& grid, std::mt19937_64& rng, double low = 0.9,
                      double high = 1.1);

/// Loads, DCOPF dispatch, power flow at that dispatch, then ACOPF warm
/// started from the DCOPF. A failing stage yields a rejection naming it.
SampleOutcome generate_sample(const GridCase& grid, std::mt19937_64& rng,
                              const DatagenConfig& config = {});

/// Same pipeline for loads chosen by the caller.
SampleOutcome generate_sample_for_loads(const GridCase& grid, const AdmittanceMatrix& y,
                                        const Eigen::VectorXd& p_load,
                                        const Eigen::VectorXd& q_load,
                                        const DatagenConfig& config);

using ProgressFn = std::function<void(const GenerationStats&)>;

/// Runs attempts 0, 1, 2, ... on `workers` threads and keeps the first
/// n_samples accepted ones in attempt order, so the result does not depend on
/// the worker count. Throws GenerationError if 10 * n_samples attempts do not
/// suffice.
Dataset generate_dataset(const GridCase& grid, std::string case_id, int n_samples,
                         std::uint64_t seed, int workers, const DatagenConfig& config = {},
                         const ProgressFn& progress = {});

std::string encode_dataset(const Dataset& dataset);
Dataset decode_dataset(std::string_view bytes);
void save_dataset(const Dataset& dataset, const std::filesystem::path& path);
/// Throws FormatError for foreign, truncated, corrupted or newer files.
Dataset load_dataset(const std::filesystem::path& path);

/// One row per sample: loads, state, targets and meta, full precision.
void export_dataset_csv(const Dataset& dataset, const std::filesystem::path& path);

}  // namespace gnnopf
