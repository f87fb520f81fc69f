#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "gnnopf/graph_signal.hpp"

namespace gnnopf {

/// Row-major so that a stacked batch (B*N x F) can be viewed as B x (N*F)
/// without copying.
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class Architecture { global_gnn, local_gnn, global_mlp, local_mlp };

inline constexpr std::array<Architecture, 4> kAllArchitectures{
    Architecture::global_gnn, Architecture::global_mlp, Architecture::local_gnn,
    Architecture::local_mlp};

std::string_view to_string(Architecture arch);
/// Throws ContractError listing the accepted names.
Architecture parse_architecture(std::string_view name);

enum class Activation { relu, tanh };

std::string_view to_string(Activation act);
Activation parse_activation(std::string_view name);

struct ModelSpec {
  Architecture architecture = Architecture::local_gnn;
  /// F_0 .. F_L; F_0 is the number of state features and must be 4.
  std::vector<int> layer_features{4, 128, 64};
  /// K_1 .. K_L. Ignored by global_mlp.
  std::vector<int> taps_per_layer{4, 4};
  Activation activation = Activation::relu;
  bool use_bias = false;
  int n_buses = 0;
  std::vector<int> generator_buses;

  int n_generators() const { return static_cast<int>(generator_buses.size()); }
  int hidden_layers() const { return static_cast<int>(taps_per_layer.size()); }
  bool is_local() const;
  /// True for the two graph-convolutional variants (they need a GSO).
  bool uses_graph() const;

  void validate() const;

  /// Widths 4/128/64 with K = 4 per layer for the GNNs and K = 1 for local_mlp.
  static ModelSpec defaults(Architecture arch, int n_buses, std::vector<int> generator_buses);

  bool operator==(const ModelSpec&) const = default;
};

struct TensorShape {
  std::string name;
  int rows = 0;
  int cols = 0;
  /// Number of inputs feeding one output unit; sets the init range.
  int fan_in = 0;
  bool is_bias = false;
};

/// Tensors in storage order: per hidden layer its taps (or dense weight) and
/// optional bias, then the readout weight and optional bias.
std::vector<TensorShape> parameter_shapes(const ModelSpec& spec);

struct ModelParams {
  std::vector<std::string> names;
  std::vector<RowMatrix> tensors;

  std::size_t parameter_count() const;
  const RowMatrix& at(std::string_view name) const;
  RowMatrix& at(std::string_view name);

  /// Same names and shapes, all zeros.
  ModelParams zeros_like() const;

  bool operator==(const ModelParams& other) const;
};

/// Weights uniform in [-a, a] with a = sqrt(1 / fan_in); biases zero.
ModelParams init_params(const ModelSpec& spec, std::uint64_t seed);

/// Throws ContractError if names or shapes disagree with the spec.
void check_params(const ModelSpec& spec, const ModelParams& params);

struct ForwardTrace {
  Architecture architecture = Architecture::local_gnn;
  int batch = 0;
  /// inputs[l][k] is W^k A_{l-1} (B*N x F_{l-1}) for convolutional layers;
  /// for global_mlp inputs[l] holds the single flattened B x (N*F_{l-1}) input.
  std::vector<std::vector<RowMatrix>> inputs;
  std::vector<RowMatrix> pre;
  std::vector<RowMatrix> post;
  /// B x M predictions.
  RowMatrix output;
};

/// Evaluates a batch. `x` stacks B state matrices (B*N x 4, sample-major).
/// The GSO is only read by the graph-convolutional variants.
RowMatrix forward_batch(const ModelSpec& spec, const ModelParams& params,
                        const Eigen::Ref<const RowMatrix>& x, const Gso& gso,
                        ForwardTrace* trace = nullptr);

/// Single sample, N x 4 input, length-M output.
Eigen::VectorXd forward(const ModelSpec& spec, const ModelParams& params,
                        const Eigen::Ref<const Eigen::MatrixXd>& x, const Gso& gso);

/// Gradient of sum_b <d_out[b], output[b]> with respect to every tensor.
ModelParams backward(const ModelSpec& spec, const ModelParams& params, const ForwardTrace& trace,
                     const Eigen::Ref<const RowMatrix>& d_out, const Gso& gso);

/// Affine maps applied around the network: per-feature input statistics and a
/// single scalar pair shared by all generator outputs.
struct Standardizer {
  Eigen::Vector4d input_mean = Eigen::Vector4d::Zero();
  Eigen::Vector4d input_std = Eigen::Vector4d::Ones();
  double target_mean = 0.0;
  double target_std = 1.0;

  /// Statistics of the given samples; zero spreads are replaced by 1.
  static Standardizer fit(const std::vector<Eigen::MatrixXd>& states,
                          const std::vector<Eigen::VectorXd>& targets);

  /// Standardizes a stacked (B*N x 4) input in place.
  void normalize_inputs(Eigen::Ref<RowMatrix> x) const;
  double normalize_target(double p) const { return (p - target_mean) / target_std; }
  double restore_target(double y) const { return y * target_std + target_mean; }

  bool operator==(const Standardizer&) const = default;
};

/// Single-sample inference on raw (unstandardized) states. The local GNN uses
/// a plan that evaluates the last convolution only at generator rows, with
/// the selected shift powers G W^k precomputed. Holds scratch buffers, so one
/// instance must not be shared between threads.
class Predictor {
 public:
  Predictor(ModelSpec spec, ModelParams params, Standardizer stats, Gso gso);

  /// N x 4 raw state to length-M generation in per-unit.
  Eigen::VectorXd predict(const Eigen::Ref<const Eigen::MatrixXd>& x);

  const ModelSpec& spec() const { return spec_; }

 private:
  void build_local_plan();
  Eigen::VectorXd predict_local_gnn(const Eigen::Ref<const Eigen::MatrixXd>& x);

  ModelSpec spec_;
  ModelParams params_;
  Standardizer stats_;
  Gso gso_;

  bool fast_ = false;
  std::vector<RowMatrix> stacked_taps_;
  std::vector<RowMatrix> stacked_bias_;
  RowMatrix selected_powers_;
  RowMatrix readout_;
  double readout_bias_ = 0.0;
  std::vector<RowMatrix> scratch_;
  RowMatrix input_;
};

}  // namespace gnnopf
