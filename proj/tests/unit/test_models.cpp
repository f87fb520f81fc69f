#include <cmath>
#include <filesystem>
#include <random>

#include <doctest.h>

#include "gnnopf/checkpoint.hpp"
#include "gnnopf/errors.hpp"
#include "gnnopf/models.hpp"
#include "test_support.hpp"

using namespace gnnopf;

namespace {

struct Fixture {
  ModelSpec spec;
  ModelParams params;
  Gso gso;
};

Fixture small_model(Architecture arch, Activation act, bool bias, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const int n = 8;
  Fixture f;
  f.spec.architecture = arch;
  f.spec.layer_features = {4, 5, 3};
  f.spec.taps_per_layer = arch == Architecture::local_mlp || arch == Architecture::global_mlp
                              ? std::vector<int>{1, 1}
                              : std::vector<int>{3, 2};
  f.spec.activation = act;
  f.spec.use_bias = bias;
  f.spec.n_buses = n;
  f.spec.generator_buses = {5, 1, 6};
  f.params = init_params(f.spec, seed);
  if (bias) {
    for (std::size_t t = 0; t < f.params.tensors.size(); ++t) {
      if (f.params.names[t].find("bias") != std::string::npos) {
        f.params.tensors[t] = testing::random_matrix(static_cast<int>(f.params.tensors[t].rows()),
                                                     static_cast<int>(f.params.tensors[t].cols()), rng, 0.3);
      }
    }
  }
  f.gso = Gso::from_weights(testing::random_weights(n, 0.3, rng));
  return f;
}

RowMatrix random_batch(int b, int n, std::mt19937_64& rng) {
  return testing::random_matrix(b * n, 4, rng);
}

double weighted_output(const Fixture& f, const ModelParams& p, const RowMatrix& x, const RowMatrix& w) {
  return (forward_batch(f.spec, p, x, f.gso).array() * w.array()).sum();
}

}  // namespace

TEST_SUITE("models") {

TEST_CASE("architecture names round-trip") {
  for (Architecture a : kAllArchitectures) CHECK(parse_architecture(to_string(a)) == a);
  try {
    parse_architecture("deep_thing");
    FAIL("expected a throw");
  } catch (const ContractError& e) {
    CHECK(std::string(e.what()).find("local_gnn") != std::string::npos);
  }
  CHECK(parse_activation("tanh") == Activation::tanh);
  CHECK_THROWS_AS(parse_activation("gelu"), ContractError);
}

TEST_CASE("default local GNN on IEEE-30 has 34,880 parameters") {
  const GridCase g = load_case(testing::data_path("ieee30.json"));
  const SelectionIndex sel = SelectionIndex::from_case(g);
  const std::vector<int> buses(sel.generator_buses().begin(), sel.generator_buses().end());
  const ModelSpec local = ModelSpec::defaults(Architecture::local_gnn, 30, buses);
  CHECK(init_params(local, 1).parameter_count() == 34880);
  const ModelSpec global = ModelSpec::defaults(Architecture::global_gnn, 30, buses);
  const ModelParams gp = init_params(global, 1);
  CHECK(gp.at("readout.weight").size() == 64 * 30 * 6);
  CHECK(gp.parameter_count() == 2048 + 32768 + 64 * 30 * 6);
  const ModelSpec lmlp = ModelSpec::defaults(Architecture::local_mlp, 30, buses);
  CHECK(init_params(lmlp, 1).parameter_count() == 4 * 128 + 128 * 64 + 64);
  const ModelSpec gmlp = ModelSpec::defaults(Architecture::global_mlp, 30, buses);
  CHECK(init_params(gmlp, 1).parameter_count() ==
        static_cast<std::size_t>(120) * 3840 + 3840 * 1920 + 1920 * 6);
}

TEST_CASE("tensor order and init ranges") {
  const Fixture f = small_model(Architecture::local_gnn, Activation::relu, true, 3);
  const std::vector<std::string> want{"conv1.tap0", "conv1.tap1", "conv1.tap2", "conv1.bias",
                                      "conv2.tap0", "conv2.tap1", "conv2.bias",
                                      "readout.weight", "readout.bias"};
  CHECK(f.params.names == want);
  const ModelParams fresh = init_params(f.spec, 3);
  const auto shapes = parameter_shapes(f.spec);
  for (std::size_t t = 0; t < shapes.size(); ++t) {
    if (shapes[t].is_bias) {
      CHECK(fresh.tensors[t].isZero(0.0));
    } else {
      CHECK(fresh.tensors[t].cwiseAbs().maxCoeff() <= std::sqrt(1.0 / shapes[t].fan_in));
    }
  }
  CHECK(shapes[0].fan_in == 4 * 3);
  CHECK(shapes[4].fan_in == 5 * 2);
  CHECK(init_params(f.spec, 3) == fresh);
  CHECK_FALSE(init_params(f.spec, 4) == fresh);
}

TEST_CASE("zero parameters give zero output and zero gradients") {
  std::mt19937_64 rng(9);
  for (Architecture a : kAllArchitectures) {
    const Fixture f = small_model(a, Activation::relu, false, 5);
    const ModelParams zero = f.params.zeros_like();
    const RowMatrix x = random_batch(3, 8, rng);
    ForwardTrace trace;
    const RowMatrix out = forward_batch(f.spec, zero, x, f.gso, &trace);
    CHECK(out.rows() == 3);
    CHECK(out.cols() == 3);
    CHECK(out.isZero(0.0));
    const ModelParams g = backward(f.spec, zero, trace, RowMatrix::Zero(3, 3), f.gso);
    for (const auto& t : g.tensors) CHECK(t.isZero(0.0));
  }
}

TEST_CASE("batched forward matches the naive per-sample oracle") {
  std::mt19937_64 rng(10);
  for (Architecture a : kAllArchitectures) {
    for (bool bias : {false, true}) {
      for (Activation act : {Activation::relu, Activation::tanh}) {
        CAPTURE(to_string(a));
        CAPTURE(bias);
        CAPTURE(to_string(act));
        const Fixture f = small_model(a, act, bias, 17);
        const int b = 4;
        const RowMatrix x = random_batch(b, 8, rng);
        const RowMatrix out = forward_batch(f.spec, f.params, x, f.gso);
        for (int s = 0; s < b; ++s) {
          const Eigen::MatrixXd xs = x.middleRows(s * 8, 8);
          const Eigen::VectorXd want = testing::naive_forward(f.spec, f.params, xs, f.gso.w);
          CHECK((out.row(s).transpose() - want).cwiseAbs().maxCoeff() < 1e-12);
          CHECK((forward(f.spec, f.params, xs, f.gso) - want).cwiseAbs().maxCoeff() < 1e-12);
        }
      }
    }
  }
}

TEST_CASE("local GNN with only the zeroth tap equals the local MLP") {
  std::mt19937_64 rng(11);
  Fixture gnn = small_model(Architecture::local_gnn, Activation::relu, true, 21);
  Fixture mlp = small_model(Architecture::local_mlp, Activation::relu, true, 22);
  mlp.gso = gnn.gso;
  for (std::size_t t = 0; t < gnn.params.names.size(); ++t) {
    const std::string& name = gnn.params.names[t];
    if (name.find(".tap") != std::string::npos && name.find(".tap0") == std::string::npos) {
      gnn.params.tensors[t].setZero();
    } else {
      mlp.params.at(name) = gnn.params.tensors[t];
    }
  }
  const RowMatrix x = random_batch(5, 8, rng);
  const RowMatrix a = forward_batch(gnn.spec, gnn.params, x, gnn.gso);
  const RowMatrix b = forward_batch(mlp.spec, mlp.params, x, mlp.gso);
  CHECK((a - b).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("backward matches central differences") {
  std::mt19937_64 rng(12);
  for (Architecture a : kAllArchitectures) {
    for (Activation act : {Activation::tanh, Activation::relu}) {
      CAPTURE(to_string(a));
      CAPTURE(to_string(act));
      const Fixture f = small_model(a, act, true, 31);
      const int b = 3;
      const RowMatrix x = random_batch(b, 8, rng);
      const RowMatrix w = testing::random_matrix(b, 3, rng);
      ForwardTrace trace;
      forward_batch(f.spec, f.params, x, f.gso, &trace);
      const ModelParams grad = backward(f.spec, f.params, trace, w, f.gso);
      int checked = 0;
      for (std::size_t t = 0; t < f.params.tensors.size(); ++t) {
        const auto& tensor = f.params.tensors[t];
        std::uniform_int_distribution<Eigen::Index> pick(0, tensor.size() - 1);
        for (int s = 0; s < 6; ++s) {
          const Eigen::Index e = pick(rng);
          auto fd = [&](double h) {
            ModelParams p = f.params, m = f.params;
            p.tensors[t].data()[e] += h;
            m.tensors[t].data()[e] -= h;
            return (weighted_output(f, p, x, w) - weighted_output(f, m, x, w)) / (2 * h);
          };
          const double d1 = fd(1e-6);
          const double d2 = fd(1e-7);
          // A ReLU crossing inside the stencil makes the two estimates disagree.
          if (std::abs(d1 - d2) > 1e-5 * std::max(1.0, std::abs(d1))) continue;
          const double got = grad.tensors[t].data()[e];
          CHECK(std::abs(got - d1) <= 1e-6 + 1e-5 * std::abs(d1));
          ++checked;
        }
      }
      CHECK(checked > 20);
    }
  }
}

TEST_CASE("local GNN output at a generator only sees its receptive field") {
  std::mt19937_64 rng(13);
  const Fixture f = small_model(Architecture::local_gnn, Activation::tanh, true, 41);
  const Eigen::MatrixXd x = testing::random_matrix(8, 4, rng);
  const Eigen::VectorXd base = forward(f.spec, f.params, x, f.gso);
  // Two layers with 3 and 2 taps reach (3 - 1) + (2 - 1) = 3 hops.
  for (int g = 0; g < f.spec.n_generators(); ++g) {
    const auto hood = k_hop_set(f.gso, f.spec.generator_buses[static_cast<std::size_t>(g)], 3);
    Eigen::MatrixXd x2 = x;
    for (int i = 0; i < 8; ++i) {
      if (!std::binary_search(hood.begin(), hood.end(), i)) x2.row(i).setConstant(7.0);
    }
    CHECK(std::abs(forward(f.spec, f.params, x2, f.gso)[g] - base[g]) < 1e-13);
  }
}

TEST_CASE("local models are equivariant to bus relabelling") {
  std::mt19937_64 rng(14);
  for (Architecture a : {Architecture::local_gnn, Architecture::local_mlp}) {
    const Fixture f = small_model(a, Activation::relu, true, 51);
    std::vector<int> perm(8);
    for (int i = 0; i < 8; ++i) perm[static_cast<std::size_t>(i)] = i;
    std::shuffle(perm.begin(), perm.end(), rng);
    // Bus i moves to position perm[i].
    Eigen::MatrixXd p = Eigen::MatrixXd::Zero(8, 8);
    for (int i = 0; i < 8; ++i) p(perm[static_cast<std::size_t>(i)], i) = 1.0;
    ModelSpec moved = f.spec;
    for (int& bus : moved.generator_buses) bus = perm[static_cast<std::size_t>(bus)];
    const Gso moved_gso = Gso::from_weights(p * f.gso.w * p.transpose());
    const Eigen::MatrixXd x = testing::random_matrix(8, 4, rng);
    const Eigen::VectorXd out = forward(f.spec, f.params, x, f.gso);
    const Eigen::VectorXd out2 = forward(moved, f.params, p * x, moved_gso);
    CHECK((out - out2).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("predictor matches standardized forward evaluation") {
  std::mt19937_64 rng(15);
  for (Architecture a : kAllArchitectures) {
    const Fixture f = small_model(a, Activation::relu, true, 61);
    Standardizer stats;
    stats.input_mean = Eigen::Vector4d(1.0, 0.1, -0.2, 0.05);
    stats.input_std = Eigen::Vector4d(0.05, 0.2, 0.5, 0.3);
    stats.target_mean = 0.4;
    stats.target_std = 0.7;
    Predictor pred(f.spec, f.params, stats, f.gso);
    for (int trial = 0; trial < 5; ++trial) {
      const Eigen::MatrixXd x = testing::random_matrix(8, 4, rng);
      RowMatrix z = x;
      stats.normalize_inputs(z);
      const Eigen::VectorXd y = forward(f.spec, f.params, Eigen::MatrixXd(z), f.gso);
      const Eigen::VectorXd want = (y.array() * stats.target_std + stats.target_mean).matrix();
      CHECK((pred.predict(x) - want).cwiseAbs().maxCoeff() < 1e-12);
    }
  }
}

TEST_CASE("default-size local GNN predictor agrees with the batched path") {
  const GridCase g = load_case(testing::data_path("ieee30.json"));
  const SelectionIndex sel = SelectionIndex::from_case(g);
  const ModelSpec spec = ModelSpec::defaults(Architecture::local_gnn, 30,
                                             {sel.generator_buses().begin(), sel.generator_buses().end()});
  const ModelParams params = init_params(spec, 77);
  const Gso gso = build_gso(g);
  Predictor pred(spec, params, Standardizer{}, gso);
  std::mt19937_64 rng(16);
  for (int trial = 0; trial < 3; ++trial) {
    const Eigen::MatrixXd x = testing::random_matrix(30, 4, rng);
    CHECK((pred.predict(x) - forward(spec, params, x, gso)).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("standardizer statistics") {
  std::vector<Eigen::MatrixXd> states{Eigen::MatrixXd::Constant(2, 4, 1.0), Eigen::MatrixXd::Constant(2, 4, 3.0)};
  states[1](0, 2) = 1.0;
  std::vector<Eigen::VectorXd> targets{Eigen::Vector2d(1.0, 3.0), Eigen::Vector2d(1.0, 3.0)};
  const Standardizer s = Standardizer::fit(states, targets);
  CHECK(s.input_mean[0] == doctest::Approx(2.0));
  CHECK(s.input_std[0] == doctest::Approx(1.0));
  CHECK(s.input_mean[2] == doctest::Approx(1.5));
  CHECK(s.target_mean == doctest::Approx(2.0));
  CHECK(s.target_std == doctest::Approx(1.0));
  CHECK(s.restore_target(s.normalize_target(0.37)) == doctest::Approx(0.37));
  const Standardizer flat = Standardizer::fit({Eigen::MatrixXd::Ones(2, 4)}, {Eigen::Vector2d(5.0, 5.0)});
  CHECK(flat.input_std.isApproxToConstant(1.0));
  CHECK(flat.target_std == 1.0);
}

TEST_CASE("forward rejects mismatched inputs") {
  const Fixture f = small_model(Architecture::local_gnn, Activation::relu, false, 71);
  CHECK_THROWS_AS(forward_batch(f.spec, f.params, RowMatrix::Zero(7, 4), f.gso), ContractError);
  CHECK_THROWS_AS(forward_batch(f.spec, f.params, RowMatrix::Zero(8, 3), f.gso), ContractError);
  ModelParams broken = f.params;
  broken.tensors.pop_back();
  CHECK_THROWS_AS(check_params(f.spec, broken), ContractError);
  ModelSpec bad = f.spec;
  bad.layer_features[0] = 5;
  CHECK_THROWS_AS(bad.validate(), ContractError);
  bad = f.spec;
  bad.generator_buses = {1, 1};
  CHECK_THROWS_AS(bad.validate(), ContractError);
}

TEST_CASE("checkpoint round-trip and corruption") {
  const Fixture f = small_model(Architecture::global_gnn, Activation::tanh, true, 81);
  Checkpoint ckpt;
  ckpt.spec = f.spec;
  ckpt.params = f.params;
  ckpt.stats.target_mean = 0.25;
  ckpt.stats.input_std = Eigen::Vector4d(0.1, 0.2, 0.3, 0.4);
  ckpt.gso = f.gso;
  ckpt.train.seed = 99;
  ckpt.train.epochs = 7;
  ckpt.case_id = "toy";
  ckpt.dataset_seed = 5;
  ckpt.dataset_size = 100;
  const std::string bytes = encode_checkpoint(ckpt);
  const Checkpoint back = decode_checkpoint(bytes);
  CHECK(back.spec == ckpt.spec);
  CHECK(back.params == ckpt.params);
  CHECK(back.stats == ckpt.stats);
  CHECK((back.gso.w - ckpt.gso.w).norm() == 0.0);
  CHECK(back.train == ckpt.train);
  CHECK(back.case_id == "toy");
  CHECK(back.dataset_seed == 5);
  CHECK(back.dataset_size == 100);

  std::string flipped = bytes;
  flipped[flipped.size() / 2] ^= 0x10;
  CHECK_THROWS_AS(decode_checkpoint(flipped), FormatError);
  CHECK_THROWS_AS(decode_checkpoint(bytes.substr(0, bytes.size() - 9)), FormatError);
  CHECK_THROWS_AS(decode_checkpoint("GNNOPFDS" + bytes.substr(8)), FormatError);

  const auto path = std::filesystem::temp_directory_path() / "gnnopf_models_test.ckpt";
  save_checkpoint(ckpt, path);
  CHECK(load_checkpoint(path).params == ckpt.params);
  std::filesystem::remove(path);
}

}
