#include "gnnopf/evalbench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>

#include <json.hpp>

#include "gnnopf/errors.hpp"
#include "gnnopf/opf.hpp"

namespace gnnopf {

using json = nlohmann::json;

RelativeErrors relative_errors(const Eigen::Ref<const RowMatrix>& predicted,
                               const Eigen::Ref<const RowMatrix>& target) {
  if (predicted.rows() != target.rows() || predicted.cols() != target.cols()) {
    throw ContractError("relative_errors: prediction and target shapes differ");
  }
  RelativeErrors e;
  for (Eigen::Index s = 0; s < target.rows(); ++s) {
    const double scale = target.row(s).norm();
    if (scale == 0.0) {
      ++e.skipped;
      continue;
    }
    const double ratio = (target.row(s) - predicted.row(s)).norm() / scale;
    e.sqrt_ratio += std::sqrt(ratio);
    e.ratio += ratio;
    ++e.samples;
  }
  if (e.samples > 0) {
    e.sqrt_ratio /= e.samples;
    e.ratio /= e.samples;
  }
  return e;
}

RelativeErrors relative_rmse(const ModelSpec& spec, const ModelParams& params,
                             const Standardizer& stats, const Gso& gso, const Dataset& dataset,
                             const std::vector<std::size_t>& indices) {
  if (indices.empty()) throw ContractError("relative_rmse: no samples to evaluate");
  const TrainingTensors t = make_tensors(dataset, indices, stats);
  const RowMatrix pred = predict_tensors(spec, params, gso, t.inputs, stats);
  return relative_errors(pred, t.raw_targets);
}

TimingSummary summarize_timings(std::vector<double> seconds) {
  TimingSummary s;
  s.repetitions = static_cast<int>(seconds.size());
  if (seconds.empty()) return s;
  std::sort(seconds.begin(), seconds.end());
  auto quantile = [&](double q) {
    const double pos = q * static_cast<double>(seconds.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, seconds.size() - 1);
    return seconds[lo] + (pos - static_cast<double>(lo)) * (seconds[hi] - seconds[lo]);
  };
  s.median = quantile(0.5);
  s.q1 = quantile(0.25);
  s.q3 = quantile(0.75);
  return s;
}

BenchResult timing_bench(const std::function<void(std::size_t)>& model,
                         const std::function<void(std::size_t)>& oracle, std::size_t n_inputs,
                         int repetitions) {
  if (repetitions < 10) throw ContractError("timing_bench: need at least 10 repetitions");
  if (n_inputs == 0) throw ContractError("timing_bench: no inputs");
  using clock = std::chrono::steady_clock;
  auto time_calls = [&](const std::function<void(std::size_t)>& fn) {
    fn(0);
    std::vector<double> seconds;
    seconds.reserve(static_cast<std::size_t>(repetitions));
    for (int r = 0; r < repetitions; ++r) {
      const std::size_t i = static_cast<std::size_t>(r) % n_inputs;
      const auto t0 = clock::now();
      fn(i);
      seconds.push_back(std::chrono::duration<double>(clock::now() - t0).count());
    }
    return summarize_timings(std::move(seconds));
  };
  BenchResult out;
  out.model = time_calls(model);
  out.oracle = time_calls(oracle);
  out.speedup = out.model.median > 0.0 ? out.oracle.median / out.model.median : 0.0;
  return out;
}

BenchResult bench_checkpoint(const Checkpoint& ckpt, const Dataset& dataset,
                             const std::vector<std::size_t>& indices, int repetitions) {
  if (indices.empty()) throw ContractError("bench: no samples");
  Predictor predictor(ckpt.spec, ckpt.params, ckpt.stats, ckpt.gso);
  std::vector<Eigen::MatrixXd> states;
  for (std::size_t i : indices) states.push_back(dataset.samples.at(i).x.as_matrix());
  volatile double sink = 0.0;
  auto model = [&](std::size_t i) { sink = sink + predictor.predict(states[i])[0]; };
  auto oracle = [&](std::size_t i) {
    const Sample& s = dataset.samples.at(indices[i]);
    const DcSolution dc = solve_dcopf(dataset.grid, s.p_load);
    const OpfSolution ac = solve_acopf(dataset.grid, s.p_load, s.q_load, dc);
    sink = sink + ac.cost;
  };
  return timing_bench(model, oracle, indices.size(), repetitions);
}

const ArchitectureRow& EvalReport::row(Architecture arch) const {
  for (const auto& r : rows) {
    if (r.architecture == arch) return r;
  }
  throw ContractError("report has no row for " + std::string(to_string(arch)));
}

std::string EvalReport::to_json() const {
  json j = {{"case_id", case_id},
            {"seed", seed},
            {"n_train", n_train},
            {"n_test", n_test},
            {"oracle_median_s", oracle_median_s}};
  json arr = json::array();
  for (const auto& r : rows) {
    arr.push_back({{"architecture", std::string(to_string(r.architecture))},
                   {"parameters", r.parameters},
                   {"metric_sqrt", r.metric_sqrt},
                   {"metric_linear", r.metric_linear},
                   {"initial_train_loss", r.initial_train_loss},
                   {"final_train_loss", r.final_train_loss},
                   {"inference_median_s", r.inference_median_s},
                   {"speedup", r.speedup}});
  }
  j["rows"] = std::move(arr);
  return j.dump(2);
}

EvalReport EvalReport::from_json(std::string_view text) {
  EvalReport rep;
  try {
    const json j = json::parse(text);
    rep.case_id = j.at("case_id").get<std::string>();
    rep.seed = j.at("seed").get<std::uint64_t>();
    rep.n_train = j.at("n_train").get<std::size_t>();
    rep.n_test = j.at("n_test").get<std::size_t>();
    rep.oracle_median_s = j.at("oracle_median_s").get<double>();
    for (const auto& r : j.at("rows")) {
      ArchitectureRow row;
      row.architecture = parse_architecture(r.at("architecture").get<std::string>());
      row.parameters = r.at("parameters").get<std::size_t>();
      row.metric_sqrt = r.at("metric_sqrt").get<double>();
      row.metric_linear = r.at("metric_linear").get<double>();
      row.initial_train_loss = r.at("initial_train_loss").get<double>();
      row.final_train_loss = r.at("final_train_loss").get<double>();
      row.inference_median_s = r.at("inference_median_s").get<double>();
      row.speedup = r.at("speedup").get<double>();
      rep.rows.push_back(row);
    }
  } catch (const json::exception& e) {
    throw ParseError(std::string("report: ") + e.what());
  }
  return rep;
}

std::string EvalReport::to_table() const {
  std::string out;
  char line[256];
  std::snprintf(line, sizeof line, "case %s, %zu train / %zu test samples, seed %llu\n",
                case_id.c_str(), n_train, n_test, static_cast<unsigned long long>(seed));
  out += line;
  std::snprintf(line, sizeof line, "%-12s %10s %14s %14s %12s %12s %10s\n", "architecture",
                "params", "rel_rmse", "rel_err", "loss_ratio", "infer_us", "speedup");
  out += line;
  for (const auto& r : rows) {
    const double ratio = r.initial_train_loss > 0.0 ? r.final_train_loss / r.initial_train_loss : 0.0;
    std::snprintf(line, sizeof line, "%-12s %10zu %14.6f %14.6f %12.4g %12.2f %10.0f\n",
                  std::string(to_string(r.architecture)).c_str(), r.parameters, r.metric_sqrt,
                  r.metric_linear, ratio, r.inference_median_s * 1e6, r.speedup);
    out += line;
  }
  if (oracle_median_s > 0.0) {
    std::snprintf(line, sizeof line, "ACOPF oracle median: %.3f ms\n", oracle_median_s * 1e3);
    out += line;
  }
  return out;
}

Checkpoint make_checkpoint(const Dataset& dataset, const ModelSpec& spec,
                           const TrainConfig& config, const TrainResult& result) {
  Checkpoint ckpt;
  ckpt.spec = spec;
  ckpt.params = result.params;
  ckpt.stats = result.stats;
  ckpt.gso = dataset_gso(dataset);
  ckpt.train = config;
  ckpt.case_id = dataset.case_id;
  ckpt.dataset_seed = dataset.seed;
  ckpt.dataset_size = dataset.size();
  return ckpt;
}

ArchitectureRow evaluate_checkpoint(const Checkpoint& ckpt, const Dataset& dataset,
                                    const TrainHistory* history) {
  check_compatible(ckpt, dataset);
  const DatasetSplit split = split_dataset(dataset, ckpt.train.split_fraction, ckpt.train.seed);
  ArchitectureRow row;
  row.architecture = ckpt.spec.architecture;
  row.parameters = ckpt.params.parameter_count();
  if (!split.test.empty()) {
    const RelativeErrors e =
        relative_rmse(ckpt.spec, ckpt.params, ckpt.stats, ckpt.gso, dataset, split.test);
    row.metric_sqrt = e.sqrt_ratio;
    row.metric_linear = e.ratio;
  }
  if (history) {
    row.initial_train_loss = history->initial_train_loss;
    row.final_train_loss = history->final_train_loss();
  } else {
    const TrainingTensors t = make_tensors(dataset, split.train, ckpt.stats);
    row.final_train_loss = mean_squared_error(ckpt.spec, ckpt.params, ckpt.gso, t);
    row.initial_train_loss =
        mean_squared_error(ckpt.spec, initial_params(ckpt.spec, ckpt.train), ckpt.gso, t);
  }
  return row;
}

EvalReport run_comparison(const Dataset& dataset, const ComparisonConfig& config,
                          const ComparisonProgress& progress, std::vector<Checkpoint>* trained) {
  EvalReport report;
  report.case_id = dataset.case_id;
  report.seed = config.train.seed;
  const DatasetSplit split = split_dataset(dataset, config.train.split_fraction, config.train.seed);
  report.n_train = split.train.size();
  report.n_test = split.test.size();
  for (Architecture arch : config.architectures) {
    const ModelSpec spec = spec_for(dataset, arch);
    TrainResult result;
    try {
      result = train(dataset, spec, config.train, [&](const EpochRecord& rec) {
        if (progress) progress(arch, rec);
      });
    } catch (const TrainingError& e) {
      throw TrainingError(std::string(to_string(arch)) + ": " + e.what());
    }
    Checkpoint ckpt = make_checkpoint(dataset, spec, config.train, result);
    ArchitectureRow row = evaluate_checkpoint(ckpt, dataset, &result.history);
    if (config.bench_repetitions > 0 && !split.test.empty()) {
      const BenchResult bench = bench_checkpoint(ckpt, dataset, split.test, config.bench_repetitions);
      row.inference_median_s = bench.model.median;
      row.speedup = bench.speedup;
      if (report.oracle_median_s == 0.0) report.oracle_median_s = bench.oracle.median;
    }
    report.rows.push_back(row);
    if (trained) trained->push_back(std::move(ckpt));
  }
  return report;
}

}  // namespace gnnopf
