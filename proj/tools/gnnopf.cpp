// Command-line front end: dataset generation, training, evaluation and
// benchmarking. Exit codes: 0 success, 2 input error, 3 state/compatibility
// error, 4 numerical failure.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "gnnopf/binary_io.hpp"
#include "gnnopf/checkpoint.hpp"
#include "gnnopf/datagen.hpp"
#include "gnnopf/errors.hpp"
#include "gnnopf/evalbench.hpp"
#include "gnnopf/training.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace gnnopf;

namespace {

constexpr int kExitInput = 2;
constexpr int kExitState = 3;
constexpr int kExitNumeric = 4;

class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class StateError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Every setting a command may read. Values come from defaults, then the
/// --config file, then flags.
struct RunConfig {
  std::string case_path;
  std::string dataset_path;
  std::string arch = "local_gnn";
  std::vector<std::string> checkpoints;
  std::string output_dir = ".";
  std::string out;
  std::string csv;
  std::string history;
  std::string table;
  std::uint64_t seed = 0;
  int n_samples = 2000;
  int workers = 1;
  int repetitions = 100;
  double load_low = 0.9;
  double load_high = 1.1;
  double kernel_k = 0.0;
  double threshold_omega = 0.01;
  bool normalize_gso = false;
  TrainConfig train;
  bool quiet = false;
  bool identity = false;
};

void apply_config_file(RunConfig& rc, const fs::path& path) {
  if (!fs::exists(path)) throw InputError("config file not found: " + path.string());
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw InputError("config " + path.string() + ": " + e.what());
  }
  if (!j.is_object()) throw InputError("config " + path.string() + ": expected a JSON object");
  try {
    for (auto it = j.begin(); it != j.end(); ++it) {
      const std::string& key = it.key();
      const json& v = it.value();
      if (key == "case") rc.case_path = v.get<std::string>();
      else if (key == "dataset") rc.dataset_path = v.get<std::string>();
      else if (key == "arch") rc.arch = v.get<std::string>();
      else if (key == "checkpoints") rc.checkpoints = v.get<std::vector<std::string>>();
      else if (key == "output_dir") rc.output_dir = v.get<std::string>();
      else if (key == "seed") rc.seed = v.get<std::uint64_t>();
      else if (key == "n_samples") rc.n_samples = v.get<int>();
      else if (key == "workers") rc.workers = v.get<int>();
      else if (key == "repetitions") rc.repetitions = v.get<int>();
      else if (key == "load_low") rc.load_low = v.get<double>();
      else if (key == "load_high") rc.load_high = v.get<double>();
      else if (key == "kernel_k") rc.kernel_k = v.get<double>();
      else if (key == "threshold_omega") rc.threshold_omega = v.get<double>();
      else if (key == "normalize_gso") rc.normalize_gso = v.get<bool>();
      else if (key == "epochs") rc.train.epochs = v.get<int>();
      else if (key == "batch_size") rc.train.batch_size = v.get<int>();
      else if (key == "learning_rate") rc.train.learning_rate = v.get<double>();
      else if (key == "beta1") rc.train.beta1 = v.get<double>();
      else if (key == "beta2") rc.train.beta2 = v.get<double>();
      else if (key == "epsilon") rc.train.epsilon = v.get<double>();
      else if (key == "split_fraction") rc.train.split_fraction = v.get<double>();
      else throw InputError("config " + path.string() + ": unknown key '" + key + "'");
    }
  } catch (const json::exception& e) {
    throw InputError("config " + path.string() + ": " + e.what());
  }
}

/// The config file has to be read before flags are bound, so its path is
/// located by a plain scan of argv.
std::optional<std::string> find_config_arg(int argc, char** argv) {
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--config" && i + 1 < argc) return std::string(argv[i + 1]);
    if (a.rfind("--config=", 0) == 0) return a.substr(9);
  }
  return std::nullopt;
}

fs::path in_output_dir(const RunConfig& rc, const std::string& explicit_path,
                       const std::string& fallback_name) {
  if (!explicit_path.empty()) return explicit_path;
  return fs::path(rc.output_dir) / fallback_name;
}

void log(const RunConfig& rc, const std::string& line) {
  if (!rc.quiet) std::cerr << line << "\n";
}

GridCase read_case(const std::string& path) {
  if (path.empty()) throw InputError("no case file given (use --case)");
  if (!fs::exists(path)) throw InputError("case file not found: " + path);
  return load_case(path);
}

Dataset read_dataset(const std::string& path) {
  if (path.empty()) throw InputError("no dataset given (use --dataset)");
  if (!fs::exists(path)) throw InputError("dataset file not found: " + path);
  try {
    return load_dataset(path);
  } catch (const FormatError& e) {
    throw StateError("dataset " + path + ": " + e.what());
  }
}

Checkpoint read_checkpoint(const std::string& path) {
  if (!fs::exists(path)) throw StateError("checkpoint not found: " + path);
  try {
    return load_checkpoint(path);
  } catch (const FormatError& e) {
    throw StateError("checkpoint " + path + ": " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) { write_file_atomic(path, text); }

std::string stem_of(const std::string& path) { return fs::path(path).stem().string(); }

int cmd_datagen(const RunConfig& rc) {
  const GridCase grid = read_case(rc.case_path);
  if (rc.n_samples < 1) throw InputError("--n must be at least 1");
  DatagenConfig cfg;
  cfg.load_low = rc.load_low;
  cfg.load_high = rc.load_high;
  cfg.kernel_k = rc.kernel_k;
  cfg.threshold_omega = rc.threshold_omega;
  cfg.normalize_gso = rc.normalize_gso;
  const std::string case_id = stem_of(rc.case_path);
  const fs::path out = in_output_dir(
      rc, rc.out, case_id + "_n" + std::to_string(rc.n_samples) + "_s" + std::to_string(rc.seed) + ".bin");
  log(rc, "generating " + std::to_string(rc.n_samples) + " samples for " + case_id + " with " +
              std::to_string(rc.workers) + " worker(s)");
  const Dataset ds = generate_dataset(grid, case_id, rc.n_samples, rc.seed, rc.workers, cfg,
                                      [&](const GenerationStats& s) {
                                        log(rc, "  accepted " + std::to_string(s.accepted) + " / " +
                                                    std::to_string(s.attempts) + " attempts");
                                      });
  save_dataset(ds, out);
  const auto& s = ds.stats;
  char rate[32];
  std::snprintf(rate, sizeof rate, "%.4f", s.acceptance_rate());
  const std::string summary = "dataset " + out.string() + "\nsamples " + std::to_string(ds.size()) +
                              "\nattempts " + std::to_string(s.attempts) + "\nacceptance_rate " +
                              rate + "\nrejected_dcopf " + std::to_string(s.rejected_dcopf) +
                              "\nrejected_power_flow " + std::to_string(s.rejected_power_flow) +
                              "\nrejected_acopf " + std::to_string(s.rejected_acopf) + "\n";
  fs::path log_path = out;
  log_path += ".log";
  write_text(log_path, summary);
  std::cout << summary;
  if (!rc.csv.empty()) export_dataset_csv(ds, rc.csv);
  return 0;
}

Architecture parse_arch_or_throw(const std::string& name) {
  try {
    return parse_architecture(name);
  } catch (const ContractError& e) {
    throw InputError(e.what());
  }
}

void validate_train(const TrainConfig& t) {
  try {
    t.validate();
  } catch (const ContractError& e) {
    throw InputError(e.what());
  }
}

int cmd_train(const RunConfig& rc) {
  const Architecture arch = parse_arch_or_throw(rc.arch);
  validate_train(rc.train);
  const Dataset ds = read_dataset(rc.dataset_path);
  TrainConfig tc = rc.train;
  tc.seed = rc.seed;
  const ModelSpec spec = spec_for(ds, arch);
  log(rc, "training " + rc.arch + " on " + ds.case_id + " (" + std::to_string(ds.size()) +
              " samples, " + std::to_string(tc.epochs) + " epochs)");
  TrainResult result;
  try {
    result = train(ds, spec, tc, [&](const EpochRecord& e) {
      char line[128];
      std::snprintf(line, sizeof line, "  epoch %4d  train_loss %.6g  test_metric %.6g  %.2fs", e.epoch,
                    e.train_loss, e.test_metric, e.seconds);
      log(rc, line);
    });
  } catch (const ContractError& e) {
    throw StateError(e.what());
  }
  const Checkpoint ckpt = make_checkpoint(ds, spec, tc, result);
  const fs::path out = in_output_dir(rc, rc.out, rc.arch + ".ckpt");
  save_checkpoint(ckpt, out);
  const fs::path hist = in_output_dir(rc, rc.history, rc.arch + "_history.csv");
  write_text(hist, result.history.to_csv());
  std::cout << "checkpoint " << out.string() << "\nhistory " << hist.string() << "\n";
  return 0;
}

void write_report(const RunConfig& rc, const EvalReport& report, const std::string& name) {
  const fs::path json_path = in_output_dir(rc, rc.out, name + ".json");
  const fs::path table_path = in_output_dir(rc, rc.table, name + ".txt");
  write_text(json_path, report.to_json() + "\n");
  write_text(table_path, report.to_table());
  std::cout << report.to_table() << "report " << json_path.string() << "\ntable " << table_path.string()
            << "\n";
}

EvalReport report_header(const Dataset& ds, const TrainConfig& train) {
  EvalReport report;
  report.case_id = ds.case_id;
  report.seed = train.seed;
  const DatasetSplit split = split_dataset(ds, train.split_fraction, train.seed);
  report.n_train = split.train.size();
  report.n_test = split.test.size();
  return report;
}

int cmd_eval(const RunConfig& rc, bool bench) {
  const Dataset ds = read_dataset(rc.dataset_path);
  if (rc.identity) {
    // Harness mode: the stored targets stand in for predictions.
    TrainConfig t = rc.train;
    t.seed = rc.seed;
    EvalReport report = report_header(ds, t);
    const DatasetSplit split = split_dataset(ds, t.split_fraction, t.seed);
    RowMatrix target(static_cast<Eigen::Index>(split.test.size()), ds.n_generators());
    for (std::size_t i = 0; i < split.test.size(); ++i) {
      target.row(static_cast<Eigen::Index>(i)) = ds.samples[split.test[i]].p_star.transpose();
    }
    const RelativeErrors e = relative_errors(target, target);
    ArchitectureRow row;
    row.metric_sqrt = e.sqrt_ratio;
    row.metric_linear = e.ratio;
    report.rows.push_back(row);
    write_report(rc, report, "identity_report");
    return 0;
  }
  if (rc.checkpoints.empty()) throw InputError("no checkpoint given (use --checkpoint)");
  std::optional<EvalReport> report;
  for (const auto& path : rc.checkpoints) {
    const Checkpoint ckpt = read_checkpoint(path);
    try {
      check_compatible(ckpt, ds);
    } catch (const ContractError& e) {
      throw StateError(path + ": " + e.what());
    }
    if (!report) report = report_header(ds, ckpt.train);
    ArchitectureRow row = evaluate_checkpoint(ckpt, ds);
    if (bench) {
      if (rc.repetitions < 10) throw InputError("--repetitions must be at least 10");
      const DatasetSplit split = split_dataset(ds, ckpt.train.split_fraction, ckpt.train.seed);
      const BenchResult b = bench_checkpoint(ckpt, ds, split.test.empty() ? split.train : split.test,
                                             rc.repetitions);
      row.inference_median_s = b.model.median;
      row.speedup = b.speedup;
      if (report->oracle_median_s == 0.0) report->oracle_median_s = b.oracle.median;
      char line[256];
      std::snprintf(line, sizeof line,
                    "%s: model median %.2f us (IQR %.2f us), oracle median %.3f ms (IQR %.3f ms), "
                    "speedup %.0fx",
                    std::string(to_string(ckpt.spec.architecture)).c_str(), b.model.median * 1e6,
                    b.model.iqr() * 1e6, b.oracle.median * 1e3, b.oracle.iqr() * 1e3, b.speedup);
      log(rc, line);
    }
    report->rows.push_back(row);
  }
  write_report(rc, *report, bench ? "bench_report" : "eval_report");
  return 0;
}

int cmd_compare(const RunConfig& rc) {
  validate_train(rc.train);
  const Dataset ds = read_dataset(rc.dataset_path);
  ComparisonConfig cfg;
  cfg.train = rc.train;
  cfg.train.seed = rc.seed;
  cfg.bench_repetitions = rc.repetitions;
  std::vector<Checkpoint> trained;
  const EvalReport report = run_comparison(
      ds, cfg,
      [&](Architecture a, const EpochRecord& e) {
        char line[160];
        std::snprintf(line, sizeof line, "  %-10s epoch %4d  train_loss %.6g  test_metric %.6g",
                      std::string(to_string(a)).c_str(), e.epoch, e.train_loss, e.test_metric);
        log(rc, line);
      },
      &trained);
  for (const auto& ckpt : trained) {
    save_checkpoint(ckpt, fs::path(rc.output_dir) / (std::string(to_string(ckpt.spec.architecture)) + ".ckpt"));
  }
  write_report(rc, report, "comparison_report");
  return 0;
}

int cmd_case_validate(const RunConfig& rc) {
  const GridCase grid = read_case(rc.case_path);
  std::cout << rc.case_path << ": valid (" << grid.n_buses() << " buses, " << grid.branches.size()
            << " branches, " << grid.n_generators() << " generators, slack bus " << grid.slack_bus()
            << ")\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  RunConfig rc;
  if (const char* env = std::getenv("GNNOPF_OUTPUT_DIR")) rc.output_dir = env;

  CLI::App app{"gnnopf: OPF imitation-learning toolkit (datagen, train, eval, bench)"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_config();  // disable CLI11's own config handling; --config is ours
  std::string config_path;
  app.add_option("--config", config_path, "JSON run config; flags override its values");
  app.add_option("--output-dir", rc.output_dir,
                 "Directory for default output paths (env GNNOPF_OUTPUT_DIR)");
  app.add_flag("--quiet", rc.quiet, "Suppress progress output");

  try {
    if (auto cfg = find_config_arg(argc, argv)) {
      apply_config_file(rc, *cfg);
      if (const char* env = std::getenv("GNNOPF_OUTPUT_DIR")) rc.output_dir = env;
    }
  } catch (const InputError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInput;
  }

  const std::vector<std::string> arch_names{"global_gnn", "local_gnn", "global_mlp", "local_mlp"};

  auto* datagen = app.add_subcommand("datagen", "Generate an imitation dataset from a case");
  datagen->add_option("--case", rc.case_path, "Case JSON file");
  datagen->add_option("--n", rc.n_samples, "Number of accepted samples");
  datagen->add_option("--seed", rc.seed, "Random seed");
  datagen->add_option("--workers", rc.workers, "Worker threads (output does not depend on it)");
  datagen->add_option("--out", rc.out, "Dataset file (default <output-dir>/<case>_n<N>_s<seed>.bin)");
  datagen->add_option("--csv", rc.csv, "Also export the dataset as CSV");
  datagen->add_option("--load-low", rc.load_low, "Lower load factor");
  datagen->add_option("--load-high", rc.load_high, "Upper load factor");
  datagen->add_option("--kernel-k", rc.kernel_k, "GSO kernel scale (<= 0: 1/mean|z|^2)");
  datagen->add_option("--omega", rc.threshold_omega, "GSO edge threshold");
  datagen->add_flag("--normalize-gso", rc.normalize_gso, "Divide W by its spectral radius");

  auto* train_cmd = app.add_subcommand("train", "Train one architecture");
  train_cmd->add_option("--arch", rc.arch, "Architecture")->check(CLI::IsMember(arch_names));
  train_cmd->add_option("--dataset", rc.dataset_path, "Dataset file");
  train_cmd->add_option("--epochs", rc.train.epochs, "Epochs");
  train_cmd->add_option("--batch-size", rc.train.batch_size, "Minibatch size");
  train_cmd->add_option("--lr", rc.train.learning_rate, "ADAM learning rate");
  train_cmd->add_option("--beta1", rc.train.beta1, "ADAM beta1");
  train_cmd->add_option("--beta2", rc.train.beta2, "ADAM beta2");
  train_cmd->add_option("--split", rc.train.split_fraction, "Training fraction");
  train_cmd->add_option("--seed", rc.seed, "Seed for split, init and shuffling");
  train_cmd->add_option("--out", rc.out, "Checkpoint file (default <output-dir>/<arch>.ckpt)");
  train_cmd->add_option("--history", rc.history, "History CSV (default <output-dir>/<arch>_history.csv)");

  auto* eval_cmd = app.add_subcommand("eval", "Relative RMSE of checkpoints on their test split");
  eval_cmd->add_option("--dataset", rc.dataset_path, "Dataset file");
  eval_cmd->add_option("--checkpoint", rc.checkpoints, "Checkpoint file (repeatable)");
  eval_cmd->add_option("--out", rc.out, "Report JSON (default <output-dir>/eval_report.json)");
  eval_cmd->add_option("--table", rc.table, "Report table (default <output-dir>/eval_report.txt)");
  eval_cmd->add_flag("--identity", rc.identity, "Use the targets as predictions (harness check)");
  eval_cmd->add_option("--seed", rc.seed, "Split seed for --identity");

  auto* bench_cmd = app.add_subcommand("bench", "Evaluate and time checkpoints against ACOPF");
  bench_cmd->add_option("--dataset", rc.dataset_path, "Dataset file");
  bench_cmd->add_option("--checkpoint", rc.checkpoints, "Checkpoint file (repeatable)");
  bench_cmd->add_option("--repetitions", rc.repetitions, "Timed calls per side (>= 10)");
  bench_cmd->add_option("--out", rc.out, "Report JSON (default <output-dir>/bench_report.json)");
  bench_cmd->add_option("--table", rc.table, "Report table (default <output-dir>/bench_report.txt)");

  auto* compare_cmd = app.add_subcommand("compare", "Train, evaluate and time all four architectures");
  compare_cmd->add_option("--dataset", rc.dataset_path, "Dataset file");
  compare_cmd->add_option("--epochs", rc.train.epochs, "Epochs");
  compare_cmd->add_option("--batch-size", rc.train.batch_size, "Minibatch size");
  compare_cmd->add_option("--lr", rc.train.learning_rate, "ADAM learning rate");
  compare_cmd->add_option("--split", rc.train.split_fraction, "Training fraction");
  compare_cmd->add_option("--seed", rc.seed, "Seed");
  compare_cmd->add_option("--repetitions", rc.repetitions, "Timed calls per side (0 skips timing)");
  compare_cmd->add_option("--out", rc.out, "Report JSON (default <output-dir>/comparison_report.json)");
  compare_cmd->add_option("--table", rc.table, "Report table");

  auto* case_cmd = app.add_subcommand("case", "Case file utilities");
  case_cmd->require_subcommand(1);
  auto* validate_cmd = case_cmd->add_subcommand("validate", "Parse and validate a case file");
  validate_cmd->add_option("path", rc.case_path, "Case JSON file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitInput;
  }

  try {
    if (*datagen) return cmd_datagen(rc);
    if (*train_cmd) return cmd_train(rc);
    if (*eval_cmd) return cmd_eval(rc, false);
    if (*bench_cmd) return cmd_eval(rc, true);
    if (*compare_cmd) return cmd_compare(rc);
    if (*validate_cmd) return cmd_case_validate(rc);
  } catch (const InputError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInput;
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInput;
  } catch (const ValidationError& e) {
    std::cerr << "error: invalid case: " << e.what() << "\n";
    return kExitInput;
  } catch (const StateError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitState;
  } catch (const FormatError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitState;
  } catch (const ContractError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitState;
  } catch (const GenerationError& e) {
    std::cerr << "error: dataset generation failed: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const TrainingError& e) {
    std::cerr << "error: training failed: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInput;
  }
  return 0;
}
