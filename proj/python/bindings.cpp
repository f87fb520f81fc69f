#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "gnnopf/checkpoint.hpp"
#include "gnnopf/datagen.hpp"
#include "gnnopf/electrical.hpp"
#include "gnnopf/errors.hpp"
#include "gnnopf/evalbench.hpp"
#include "gnnopf/graph_signal.hpp"
#include "gnnopf/grid_case.hpp"
#include "gnnopf/models.hpp"
#include "gnnopf/opf.hpp"
#include "gnnopf/training.hpp"

namespace py = pybind11;
using namespace gnnopf;

namespace {

py::dict state_dict(const StateMatrix& s) {
  py::dict d;
  d["v"] = s.v;
  d["delta"] = s.delta;
  d["p"] = s.p;
  d["q"] = s.q;
  return d;
}

py::dict row_dict(const ArchitectureRow& row) {
  py::dict d;
  d["architecture"] = std::string(to_string(row.architecture));
  d["parameters"] = row.parameters;
  d["metric_sqrt"] = row.metric_sqrt;
  d["metric_linear"] = row.metric_linear;
  d["initial_train_loss"] = row.initial_train_loss;
  d["final_train_loss"] = row.final_train_loss;
  d["inference_median_s"] = row.inference_median_s;
  d["speedup"] = row.speedup;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Optimal power flow imitation with graph neural networks";

  py::register_exception<ParseError>(m, "ParseError", PyExc_ValueError);
  py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
  py::register_exception<ContractError>(m, "ContractError", PyExc_ValueError);
  py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);
  py::register_exception<TrainingError>(m, "TrainingError", PyExc_RuntimeError);
  py::register_exception<GenerationError>(m, "GenerationError", PyExc_RuntimeError);

  py::class_<GridCase>(m, "GridCase")
      .def_property_readonly("n_buses", &GridCase::n_buses)
      .def_property_readonly("n_generators", &GridCase::n_generators)
      .def_property_readonly("slack_bus", &GridCase::slack_bus)
      .def_readonly("base_mva", &GridCase::base_mva)
      .def_readonly("p_load_ref", &GridCase::p_load_ref)
      .def_readonly("q_load_ref", &GridCase::q_load_ref)
      .def_property_readonly("generator_buses",
                             [](const GridCase& g) {
                               std::vector<int> buses;
                               for (const auto& gen : g.generators) buses.push_back(gen.bus);
                               return buses;
                             })
      .def("to_json", &serialize_case);

  m.def("load_case", &load_case, py::arg("path"));
  m.def("parse_case", [](const std::string& text) { return parse_case(text); }, py::arg("text"));

  m.def(
      "solve_power_flow",
      [](const GridCase& g, const Eigen::VectorXd& p_load, const Eigen::VectorXd& q_load,
         const Eigen::VectorXd& gen_p, const Eigen::VectorXd& gen_v) {
        const auto r = solve_power_flow(g, p_load, q_load, gen_p, gen_v);
        py::dict d = state_dict(r.state);
        d["converged"] = r.converged;
        d["iterations"] = r.iterations;
        d["max_mismatch"] = r.max_mismatch;
        return d;
      },
      py::arg("grid"), py::arg("p_load"), py::arg("q_load"), py::arg("gen_p"), py::arg("gen_v"));

  m.def(
      "solve_dcopf",
      [](const GridCase& g, const Eigen::VectorXd& p_load) {
        const auto r = solve_dcopf(g, p_load);
        py::dict d;
        d["gen_p"] = r.gen_p;
        d["angles"] = r.angles;
        d["cost"] = r.cost;
        d["status"] = std::string(to_string(r.status));
        return d;
      },
      py::arg("grid"), py::arg("p_load"));

  m.def(
      "solve_acopf",
      [](const GridCase& g, const Eigen::VectorXd& p_load, const Eigen::VectorXd& q_load) {
        const auto warm = solve_dcopf(g, p_load);
        const auto r = solve_acopf(g, p_load, q_load, warm);
        py::dict d = state_dict(r.state);
        d["p_star"] = r.p_star;
        d["q_gen"] = r.q_gen;
        d["cost"] = r.cost;
        d["status"] = std::string(to_string(r.status));
        d["iterations"] = r.iterations;
        d["kkt_residual"] = r.kkt_residual;
        d["equality_residual"] = r.equality_residual;
        return d;
      },
      py::arg("grid"), py::arg("p_load"), py::arg("q_load"));

  m.def(
      "gso",
      [](const GridCase& g, double kernel_k, double omega, bool normalize) {
        if (kernel_k <= 0.0) kernel_k = default_kernel_k(g);
        return Eigen::MatrixXd(build_gso(g, kernel_k, omega, normalize).w);
      },
      py::arg("grid"), py::arg("kernel_k") = 0.0, py::arg("threshold_omega") = 0.01,
      py::arg("normalize") = false, "Dense GSO weights; kernel_k <= 0 picks the case default.");

  py::class_<Dataset>(m, "Dataset")
      .def("__len__", &Dataset::size)
      .def_readonly("case_id", &Dataset::case_id)
      .def_readonly("seed", &Dataset::seed)
      .def_readonly("grid", &Dataset::grid)
      .def_property_readonly("n_buses", &Dataset::n_buses)
      .def_property_readonly("n_generators", &Dataset::n_generators)
      .def("state", [](const Dataset& d, std::size_t i) { return d.samples.at(i).x.as_matrix(); })
      .def("target", [](const Dataset& d, std::size_t i) { return d.samples.at(i).p_star; })
      .def("p_load", [](const Dataset& d, std::size_t i) { return d.samples.at(i).p_load; })
      .def("q_load", [](const Dataset& d, std::size_t i) { return d.samples.at(i).q_load; })
      .def("save", [](const Dataset& d, const std::filesystem::path& p) { save_dataset(d, p); })
      .def("export_csv",
           [](const Dataset& d, const std::filesystem::path& p) { export_dataset_csv(d, p); });

  m.def(
      "generate_dataset",
      [](const GridCase& g, std::string case_id, int n, std::uint64_t seed, int workers) {
        py::gil_scoped_release release;
        return generate_dataset(g, std::move(case_id), n, seed, workers);
      },
      py::arg("grid"), py::arg("case_id"), py::arg("n_samples"), py::arg("seed"),
      py::arg("workers") = 1);
  m.def("load_dataset", &load_dataset, py::arg("path"));

  py::class_<Checkpoint>(m, "Checkpoint")
      .def_property_readonly("architecture",
                             [](const Checkpoint& c) { return std::string(to_string(c.spec.architecture)); })
      .def_property_readonly("parameter_count",
                             [](const Checkpoint& c) { return c.params.parameter_count(); })
      .def_readonly("case_id", &Checkpoint::case_id)
      .def("save", [](const Checkpoint& c, const std::filesystem::path& p) { save_checkpoint(c, p); })
      .def("predict",
           [](const Checkpoint& c, const Eigen::MatrixXd& x) {
             Predictor pred(c.spec, c.params, c.stats, c.gso);
             return pred.predict(x);
           },
           py::arg("state"), "Generation (per-unit) predicted from an N x 4 state.");
  m.def("load_checkpoint", &load_checkpoint, py::arg("path"));

  m.def(
      "train",
      [](const Dataset& d, const std::string& arch, int epochs, int batch_size, double learning_rate,
         std::uint64_t seed, double split_fraction) {
        TrainConfig cfg;
        cfg.epochs = epochs;
        cfg.batch_size = batch_size;
        cfg.learning_rate = learning_rate;
        cfg.seed = seed;
        cfg.split_fraction = split_fraction;
        const ModelSpec spec = spec_for(d, parse_architecture(arch));
        TrainResult result;
        {
          py::gil_scoped_release release;
          result = train(d, spec, cfg);
        }
        py::list history;
        for (const auto& e : result.history.epochs) {
          py::dict rec;
          rec["epoch"] = e.epoch;
          rec["train_loss"] = e.train_loss;
          rec["test_metric"] = e.test_metric;
          history.append(rec);
        }
        return py::make_tuple(make_checkpoint(d, spec, cfg, result), history);
      },
      py::arg("dataset"), py::arg("architecture"), py::arg("epochs") = 100,
      py::arg("batch_size") = 128, py::arg("learning_rate") = 1e-3, py::arg("seed") = 0,
      py::arg("split_fraction") = 0.8, "Returns (checkpoint, per-epoch history).");

  m.def(
      "evaluate",
      [](const Checkpoint& c, const Dataset& d) { return row_dict(evaluate_checkpoint(c, d)); },
      py::arg("checkpoint"), py::arg("dataset"));

  m.def("architectures", []() {
    return std::vector<std::string>{"global_gnn", "local_gnn", "global_mlp", "local_mlp"};
  });
}
