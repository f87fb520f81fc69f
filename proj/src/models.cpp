#include "gnnopf/models.hpp"

#include <cmath>
#include <random>

#include "gnnopf/errors.hpp"
#include "gnnopf/rng.hpp"

namespace gnnopf {

namespace {

std::string joined_architectures() {
  std::string out;
  for (Architecture a : kAllArchitectures) {
    if (!out.empty()) out += ", ";
    out += to_string(a);
  }
  return out;
}

struct Slots {
  /// Per hidden layer: tap indices (conv) or the single dense weight index.
  std::vector<std::vector<int>> weight;
  std::vector<int> bias;
  int readout = -1;
  int readout_bias = -1;
};

Slots slots_for(const ModelSpec& spec) {
  Slots s;
  int next = 0;
  for (int l = 0; l < spec.hidden_layers(); ++l) {
    const int taps = spec.architecture == Architecture::global_mlp
                         ? 1
                         : spec.taps_per_layer[static_cast<std::size_t>(l)];
    std::vector<int> idx;
    for (int k = 0; k < taps; ++k) idx.push_back(next++);
    s.weight.push_back(std::move(idx));
    s.bias.push_back(spec.use_bias ? next++ : -1);
  }
  s.readout = next++;
  if (spec.use_bias) s.readout_bias = next++;
  return s;
}

RowMatrix activate(const RowMatrix& z, Activation act) {
  if (act == Activation::relu) return z.cwiseMax(0.0);
  return z.array().tanh().matrix();
}

/// dZ = dA * sigma'(Z), written into `da`.
void activation_backward(RowMatrix& da, const RowMatrix& pre, const RowMatrix& post,
                         Activation act) {
  if (act == Activation::relu) {
    da.array() *= (pre.array() > 0.0).cast<double>();
  } else {
    da.array() *= 1.0 - post.array().square();
  }
}

/// Applies W to each sample block of a stacked (B*N x F) signal.
RowMatrix shift_batch(const Gso& gso, const RowMatrix& in, int batch) {
  const int n = gso.size();
  RowMatrix out(in.rows(), in.cols());
  for (int b = 0; b < batch; ++b) {
    out.middleRows(static_cast<Eigen::Index>(b) * n, n).noalias() =
        gso.sparse * in.middleRows(static_cast<Eigen::Index>(b) * n, n);
  }
  return out;
}

const RowMatrix& tensor(const ModelParams& p, int idx) {
  return p.tensors[static_cast<std::size_t>(idx)];
}

RowMatrix& tensor(ModelParams& p, int idx) { return p.tensors[static_cast<std::size_t>(idx)]; }

// z (R x G) = u (R x K) * h (K x G) for a handful of rows, 32 output columns
// at a time so the accumulators stay in registers. Zero entries of u (common
// after a ReLU) are skipped.
template <int R>
void few_rows_product(const double* u, int ldu, const double* h, int k_dim, int g_dim, double* z) {
  int c0 = 0;
  for (; c0 + 32 <= g_dim; c0 += 32) {
    double acc[R][32] = {};
    for (int k = 0; k < k_dim; ++k) {
      const double* hr = h + static_cast<std::ptrdiff_t>(k) * g_dim + c0;
      for (int r = 0; r < R; ++r) {
        const double a = u[static_cast<std::ptrdiff_t>(r) * ldu + k];
        if (a == 0.0) continue;
        for (int c = 0; c < 32; ++c) acc[r][c] += a * hr[c];
      }
    }
    for (int r = 0; r < R; ++r) {
      for (int c = 0; c < 32; ++c) z[static_cast<std::ptrdiff_t>(r) * g_dim + c0 + c] = acc[r][c];
    }
  }
  for (; c0 < g_dim; ++c0) {
    for (int r = 0; r < R; ++r) {
      double acc = 0.0;
      for (int k = 0; k < k_dim; ++k) {
        acc += u[static_cast<std::ptrdiff_t>(r) * ldu + k] * h[static_cast<std::ptrdiff_t>(k) * g_dim + c0];
      }
      z[static_cast<std::ptrdiff_t>(r) * g_dim + c0] = acc;
    }
  }
}

void small_product(const Eigen::Ref<const RowMatrix>& u, const RowMatrix& h, RowMatrix& z) {
  const int rows = static_cast<int>(u.rows());
  const int k_dim = static_cast<int>(u.cols());
  const int g_dim = static_cast<int>(h.cols());
  z.resize(rows, g_dim);
  const int ldu = static_cast<int>(u.outerStride());
  int r = 0;
  for (; r + 6 <= rows; r += 6) {
    few_rows_product<6>(u.data() + static_cast<std::ptrdiff_t>(r) * ldu, ldu, h.data(), k_dim, g_dim, z.row(r).data());
  }
  for (; r + 4 <= rows; r += 4) {
    few_rows_product<4>(u.data() + static_cast<std::ptrdiff_t>(r) * ldu, ldu, h.data(), k_dim, g_dim, z.row(r).data());
  }
  const double* ur = u.data() + static_cast<std::ptrdiff_t>(r) * ldu;
  switch (rows - r) {
    case 5: few_rows_product<5>(ur, ldu, h.data(), k_dim, g_dim, z.row(r).data()); break;
    case 3: few_rows_product<3>(ur, ldu, h.data(), k_dim, g_dim, z.row(r).data()); break;
    case 2: few_rows_product<2>(ur, ldu, h.data(), k_dim, g_dim, z.row(r).data()); break;
    case 1: few_rows_product<1>(ur, ldu, h.data(), k_dim, g_dim, z.row(r).data()); break;
    default: break;
  }
}

}  // namespace

std::string_view to_string(Architecture arch) {
  switch (arch) {
    case Architecture::global_gnn: return "global_gnn";
    case Architecture::local_gnn: return "local_gnn";
    case Architecture::global_mlp: return "global_mlp";
    case Architecture::local_mlp: return "local_mlp";
  }
  return "local_gnn";
}

Architecture parse_architecture(std::string_view name) {
  for (Architecture a : kAllArchitectures) {
    if (to_string(a) == name) return a;
  }
  throw ContractError("unknown architecture '" + std::string(name) + "'; expected one of " +
                      joined_architectures());
}

std::string_view to_string(Activation act) { return act == Activation::relu ? "relu" : "tanh"; }

Activation parse_activation(std::string_view name) {
  if (name == "relu") return Activation::relu;
  if (name == "tanh") return Activation::tanh;
  throw ContractError("unknown activation '" + std::string(name) + "'; expected relu or tanh");
}

bool ModelSpec::is_local() const {
  return architecture == Architecture::local_gnn || architecture == Architecture::local_mlp;
}

bool ModelSpec::uses_graph() const {
  return architecture == Architecture::global_gnn || architecture == Architecture::local_gnn;
}

void ModelSpec::validate() const {
  if (layer_features.size() < 2) throw ContractError("model needs at least one hidden layer");
  if (layer_features.front() != 4) throw ContractError("first layer width must be 4 (v, delta, p, q)");
  for (int f : layer_features) {
    if (f < 1) throw ContractError("layer widths must be positive");
  }
  if (taps_per_layer.size() + 1 != layer_features.size()) {
    throw ContractError("taps_per_layer needs one entry per hidden layer");
  }
  for (int k : taps_per_layer) {
    if (k < 1) throw ContractError("each layer needs at least one tap");
  }
  if (architecture == Architecture::local_mlp) {
    for (int k : taps_per_layer) {
      if (k != 1) throw ContractError("local_mlp requires one tap per layer");
    }
  }
  if (n_buses < 1) throw ContractError("n_buses must be positive");
  if (generator_buses.empty()) throw ContractError("model needs at least one generator");
  SelectionIndex check(generator_buses, n_buses);
  (void)check;
}

ModelSpec ModelSpec::defaults(Architecture arch, int n_buses, std::vector<int> generator_buses) {
  ModelSpec spec;
  spec.architecture = arch;
  spec.n_buses = n_buses;
  spec.generator_buses = std::move(generator_buses);
  if (arch == Architecture::local_mlp || arch == Architecture::global_mlp) {
    spec.taps_per_layer = {1, 1};
  }
  return spec;
}

std::vector<TensorShape> parameter_shapes(const ModelSpec& spec) {
  spec.validate();
  const int n = spec.n_buses;
  const int m = spec.n_generators();
  const int last = spec.layer_features.back();
  std::vector<TensorShape> shapes;
  for (int l = 0; l < spec.hidden_layers(); ++l) {
    const int f_in = spec.layer_features[static_cast<std::size_t>(l)];
    const int f_out = spec.layer_features[static_cast<std::size_t>(l) + 1];
    const std::string layer = std::to_string(l + 1);
    if (spec.architecture == Architecture::global_mlp) {
      shapes.push_back({"dense" + layer + ".weight", n * f_in, n * f_out, n * f_in, false});
      if (spec.use_bias) shapes.push_back({"dense" + layer + ".bias", 1, n * f_out, 0, true});
    } else {
      const int taps = spec.taps_per_layer[static_cast<std::size_t>(l)];
      for (int k = 0; k < taps; ++k) {
        shapes.push_back({"conv" + layer + ".tap" + std::to_string(k), f_in, f_out, f_in * taps,
                          false});
      }
      if (spec.use_bias) shapes.push_back({"conv" + layer + ".bias", 1, f_out, 0, true});
    }
  }
  if (spec.is_local()) {
    shapes.push_back({"readout.weight", last, 1, last, false});
    if (spec.use_bias) shapes.push_back({"readout.bias", 1, 1, 0, true});
  } else {
    shapes.push_back({"readout.weight", n * last, m, n * last, false});
    if (spec.use_bias) shapes.push_back({"readout.bias", 1, m, 0, true});
  }
  return shapes;
}

std::size_t ModelParams::parameter_count() const {
  std::size_t total = 0;
  for (const auto& t : tensors) total += static_cast<std::size_t>(t.size());
  return total;
}

const RowMatrix& ModelParams::at(std::string_view name) const {
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (names[i] == name) return tensors[i];
  }
  throw ContractError("no parameter tensor named '" + std::string(name) + "'");
}

RowMatrix& ModelParams::at(std::string_view name) {
  return const_cast<RowMatrix&>(static_cast<const ModelParams&>(*this).at(name));
}

ModelParams ModelParams::zeros_like() const {
  ModelParams out;
  out.names = names;
  for (const auto& t : tensors) out.tensors.push_back(RowMatrix::Zero(t.rows(), t.cols()));
  return out;
}

bool ModelParams::operator==(const ModelParams& other) const {
  if (names != other.names || tensors.size() != other.tensors.size()) return false;
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    if (tensors[i].rows() != other.tensors[i].rows() ||
        tensors[i].cols() != other.tensors[i].cols() || tensors[i] != other.tensors[i]) {
      return false;
    }
  }
  return true;
}

ModelParams init_params(const ModelSpec& spec, std::uint64_t seed) {
  ModelParams params;
  std::mt19937_64 rng(splitmix64(seed));
  for (const auto& shape : parameter_shapes(spec)) {
    RowMatrix t = RowMatrix::Zero(shape.rows, shape.cols);
    if (!shape.is_bias) {
      const double a = std::sqrt(1.0 / shape.fan_in);
      for (Eigen::Index i = 0; i < t.size(); ++i) {
        t.data()[i] = a * (2.0 * unit_draw(rng) - 1.0);
      }
    }
    params.names.push_back(shape.name);
    params.tensors.push_back(std::move(t));
  }
  return params;
}

void check_params(const ModelSpec& spec, const ModelParams& params) {
  const auto shapes = parameter_shapes(spec);
  if (shapes.size() != params.tensors.size() || params.names.size() != params.tensors.size()) {
    throw ContractError("parameter set has " + std::to_string(params.tensors.size()) +
                        " tensors, " + std::string(to_string(spec.architecture)) + " needs " +
                        std::to_string(shapes.size()));
  }
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    const auto& t = params.tensors[i];
    if (params.names[i] != shapes[i].name || t.rows() != shapes[i].rows ||
        t.cols() != shapes[i].cols) {
      throw ContractError("parameter '" + params.names[i] + "' does not match expected '" +
                          shapes[i].name + "' (" + std::to_string(shapes[i].rows) + "x" +
                          std::to_string(shapes[i].cols) + ")");
    }
  }
}

RowMatrix forward_batch(const ModelSpec& spec, const ModelParams& params,
                        const Eigen::Ref<const RowMatrix>& x, const Gso& gso,
                        ForwardTrace* trace) {
  check_params(spec, params);
  const int n = spec.n_buses;
  const int m = spec.n_generators();
  if (x.cols() != 4 || x.rows() % n != 0 || x.rows() == 0) {
    throw ContractError("forward: input must stack B blocks of N x 4 rows");
  }
  if (spec.uses_graph() && gso.size() != n) {
    throw ContractError("forward: GSO has " + std::to_string(gso.size()) + " nodes, model expects " +
                        std::to_string(n));
  }
  const int batch = static_cast<int>(x.rows() / n);
  const Slots slots = slots_for(spec);
  const int layers = spec.hidden_layers();

  ForwardTrace local;
  ForwardTrace& tr = trace ? *trace : local;
  tr = ForwardTrace{};
  tr.architecture = spec.architecture;
  tr.batch = batch;

  RowMatrix act = x;
  for (int l = 0; l < layers; ++l) {
    const auto& w_idx = slots.weight[static_cast<std::size_t>(l)];
    RowMatrix z;
    std::vector<RowMatrix> inputs;
    if (spec.architecture == Architecture::global_mlp) {
      const Eigen::Index width = act.size() / batch;
      RowMatrix flat = Eigen::Map<const RowMatrix>(act.data(), batch, width);
      z.noalias() = flat * tensor(params, w_idx[0]);
      inputs.push_back(std::move(flat));
    } else {
      inputs.push_back(act);
      z.noalias() = act * tensor(params, w_idx[0]);
      for (std::size_t k = 1; k < w_idx.size(); ++k) {
        inputs.push_back(shift_batch(gso, inputs.back(), batch));
        z.noalias() += inputs.back() * tensor(params, w_idx[k]);
      }
    }
    const int b_idx = slots.bias[static_cast<std::size_t>(l)];
    if (b_idx >= 0) z.rowwise() += tensor(params, b_idx).row(0);
    act = activate(z, spec.activation);
    if (trace) {
      tr.inputs.push_back(std::move(inputs));
      tr.pre.push_back(std::move(z));
      tr.post.push_back(act);
    }
  }

  RowMatrix out(batch, m);
  const RowMatrix& r = tensor(params, slots.readout);
  if (spec.is_local()) {
    const Eigen::VectorXd node_out = act * r.col(0);
    for (int b = 0; b < batch; ++b) {
      for (int g = 0; g < m; ++g) {
        out(b, g) = node_out[static_cast<Eigen::Index>(b) * n + spec.generator_buses[static_cast<std::size_t>(g)]];
      }
    }
  } else {
    const Eigen::Index width = act.size() / batch;
    out.noalias() = Eigen::Map<const RowMatrix>(act.data(), batch, width) * r;
  }
  if (slots.readout_bias >= 0) {
    const RowMatrix& bias = tensor(params, slots.readout_bias);
    if (spec.is_local()) {
      out.array() += bias(0, 0);
    } else {
      out.rowwise() += bias.row(0);
    }
  }
  if (trace) tr.output = out;
  return out;
}

Eigen::VectorXd forward(const ModelSpec& spec, const ModelParams& params,
                        const Eigen::Ref<const Eigen::MatrixXd>& x, const Gso& gso) {
  const RowMatrix stacked = x;
  return forward_batch(spec, params, stacked, gso).row(0).transpose();
}

ModelParams backward(const ModelSpec& spec, const ModelParams& params, const ForwardTrace& trace,
                     const Eigen::Ref<const RowMatrix>& d_out, const Gso& gso) {
  check_params(spec, params);
  const int n = spec.n_buses;
  const int m = spec.n_generators();
  const int layers = spec.hidden_layers();
  const int batch = trace.batch;
  if (trace.architecture != spec.architecture || static_cast<int>(trace.pre.size()) != layers ||
      static_cast<int>(trace.inputs.size()) != layers) {
    throw ContractError("backward: trace was not produced by this model");
  }
  if (d_out.rows() != batch || d_out.cols() != m) {
    throw ContractError("backward: output gradient must be B x M");
  }
  const Slots slots = slots_for(spec);
  ModelParams grads = params.zeros_like();

  const RowMatrix& last = trace.post.back();
  const RowMatrix& r = tensor(params, slots.readout);
  RowMatrix d_act;
  if (spec.is_local()) {
    RowMatrix d_node = RowMatrix::Zero(last.rows(), 1);
    for (int b = 0; b < batch; ++b) {
      for (int g = 0; g < m; ++g) {
        d_node(static_cast<Eigen::Index>(b) * n + spec.generator_buses[static_cast<std::size_t>(g)], 0) +=
            d_out(b, g);
      }
    }
    tensor(grads, slots.readout).noalias() = last.transpose() * d_node;
    d_act.noalias() = d_node * r.transpose();
  } else {
    const Eigen::Index width = last.size() / batch;
    Eigen::Map<const RowMatrix> flat(last.data(), batch, width);
    tensor(grads, slots.readout).noalias() = flat.transpose() * d_out;
    RowMatrix d_flat = d_out * r.transpose();
    d_act = Eigen::Map<const RowMatrix>(d_flat.data(), last.rows(), last.cols());
  }
  if (slots.readout_bias >= 0) {
    if (spec.is_local()) {
      tensor(grads, slots.readout_bias)(0, 0) = d_out.sum();
    } else {
      tensor(grads, slots.readout_bias) = d_out.colwise().sum();
    }
  }

  for (int l = layers - 1; l >= 0; --l) {
    const auto li = static_cast<std::size_t>(l);
    activation_backward(d_act, trace.pre[li], trace.post[li], spec.activation);
    const RowMatrix& dz = d_act;
    const auto& w_idx = slots.weight[li];
    if (slots.bias[li] >= 0) tensor(grads, slots.bias[li]) = dz.colwise().sum();
    const auto& inputs = trace.inputs[li];
    if (spec.architecture == Architecture::global_mlp) {
      tensor(grads, w_idx[0]).noalias() = inputs[0].transpose() * dz;
      if (l > 0) {
        RowMatrix d_flat = dz * tensor(params, w_idx[0]).transpose();
        const RowMatrix& prev = trace.post[li - 1];
        d_act = Eigen::Map<const RowMatrix>(d_flat.data(), prev.rows(), prev.cols());
      }
      continue;
    }
    for (std::size_t k = 0; k < w_idx.size(); ++k) {
      tensor(grads, w_idx[k]).noalias() = inputs[k].transpose() * dz;
    }
    if (l > 0) {
      // Horner form of sum_k W^k dZ H_k^T (W is symmetric).
      const int taps = static_cast<int>(w_idx.size());
      RowMatrix acc = dz * tensor(params, w_idx[static_cast<std::size_t>(taps - 1)]).transpose();
      for (int k = taps - 2; k >= 0; --k) {
        acc = shift_batch(gso, acc, batch);
        acc.noalias() += dz * tensor(params, w_idx[static_cast<std::size_t>(k)]).transpose();
      }
      d_act = std::move(acc);
    }
  }
  return grads;
}

Standardizer Standardizer::fit(const std::vector<Eigen::MatrixXd>& states,
                               const std::vector<Eigen::VectorXd>& targets) {
  Standardizer s;
  double rows = 0.0;
  Eigen::Vector4d sum = Eigen::Vector4d::Zero();
  for (const auto& x : states) {
    if (x.cols() != 4) throw ContractError("Standardizer::fit: states must be N x 4");
    sum += x.colwise().sum().transpose();
    rows += static_cast<double>(x.rows());
  }
  if (rows > 0.0) {
    s.input_mean = sum / rows;
    Eigen::Vector4d sq = Eigen::Vector4d::Zero();
    for (const auto& x : states) {
      sq += (x.rowwise() - s.input_mean.transpose()).array().square().colwise().sum().matrix().transpose();
    }
    s.input_std = (sq / rows).cwiseSqrt();
    for (int f = 0; f < 4; ++f) {
      if (!(s.input_std[f] > 1e-12)) s.input_std[f] = 1.0;
    }
  }
  double count = 0.0;
  double tsum = 0.0;
  for (const auto& y : targets) {
    tsum += y.sum();
    count += static_cast<double>(y.size());
  }
  if (count > 0.0) {
    s.target_mean = tsum / count;
    double sq = 0.0;
    for (const auto& y : targets) sq += (y.array() - s.target_mean).square().sum();
    s.target_std = std::sqrt(sq / count);
    if (!(s.target_std > 1e-12)) s.target_std = 1.0;
  }
  return s;
}

void Standardizer::normalize_inputs(Eigen::Ref<RowMatrix> x) const {
  if (x.cols() != 4) throw ContractError("normalize_inputs: expected 4 columns");
  for (int f = 0; f < 4; ++f) {
    x.col(f) = (x.col(f).array() - input_mean[f]) / input_std[f];
  }
}

Predictor::Predictor(ModelSpec spec, ModelParams params, Standardizer stats, Gso gso)
    : spec_(std::move(spec)), params_(std::move(params)), stats_(stats), gso_(std::move(gso)) {
  check_params(spec_, params_);
  if (spec_.uses_graph() && gso_.size() != spec_.n_buses) {
    throw ContractError("Predictor: GSO size does not match the model");
  }
  if (spec_.architecture == Architecture::local_gnn) build_local_plan();
}

void Predictor::build_local_plan() {
  const Slots slots = slots_for(spec_);
  const int layers = spec_.hidden_layers();
  const int n = spec_.n_buses;
  for (int l = 0; l < layers; ++l) {
    const auto& idx = slots.weight[static_cast<std::size_t>(l)];
    const int f_in = spec_.layer_features[static_cast<std::size_t>(l)];
    const int f_out = spec_.layer_features[static_cast<std::size_t>(l) + 1];
    RowMatrix stacked(static_cast<Eigen::Index>(idx.size()) * f_in, f_out);
    for (std::size_t k = 0; k < idx.size(); ++k) {
      stacked.middleRows(static_cast<Eigen::Index>(k) * f_in, f_in) = tensor(params_, idx[k]);
    }
    stacked_taps_.push_back(std::move(stacked));
    const int b = slots.bias[static_cast<std::size_t>(l)];
    stacked_bias_.push_back(b >= 0 ? tensor(params_, b) : RowMatrix::Zero(1, f_out));
  }
  // Row g*K + k holds row gen_g of W^k, so (P A) viewed row-major is the
  // M x (K*F) matrix [W^0 A | W^1 A | ...] restricted to generator rows.
  const int m = spec_.n_generators();
  const int taps = spec_.taps_per_layer.back();
  selected_powers_ = RowMatrix::Zero(static_cast<Eigen::Index>(m) * taps, n);
  Eigen::MatrixXd power = Eigen::MatrixXd::Identity(n, n);
  for (int k = 0; k < taps; ++k) {
    for (int g = 0; g < m; ++g) {
      selected_powers_.row(static_cast<Eigen::Index>(g) * taps + k) =
          power.row(spec_.generator_buses[static_cast<std::size_t>(g)]);
    }
    power = (gso_.sparse * power).eval();
  }
  readout_ = tensor(params_, slots.readout);
  readout_bias_ = slots.readout_bias >= 0 ? tensor(params_, slots.readout_bias)(0, 0) : 0.0;
  scratch_.resize(4);
  fast_ = true;
}

Eigen::VectorXd Predictor::predict_local_gnn(const Eigen::Ref<const Eigen::MatrixXd>& x) {
  const int n = spec_.n_buses;
  const int layers = spec_.hidden_layers();
  input_ = x;
  stats_.normalize_inputs(input_);
  RowMatrix& shifted = scratch_[0];
  RowMatrix& act = scratch_[1];
  RowMatrix& z = scratch_[2];
  RowMatrix& gathered = scratch_[3];
  act = input_;
  for (int l = 0; l + 1 < layers; ++l) {
    const int f = static_cast<int>(act.cols());
    const int taps = spec_.taps_per_layer[static_cast<std::size_t>(l)];
    shifted.resize(n, static_cast<Eigen::Index>(f) * taps);
    shifted.leftCols(f) = act;
    for (int k = 1; k < taps; ++k) {
      shifted.middleCols(static_cast<Eigen::Index>(k) * f, f).noalias() =
          gso_.sparse * shifted.middleCols(static_cast<Eigen::Index>(k - 1) * f, f);
    }
    small_product(shifted, stacked_taps_[static_cast<std::size_t>(l)], z);
    z.rowwise() += stacked_bias_[static_cast<std::size_t>(l)].row(0);
    act = activate(z, spec_.activation);
  }
  const int m = spec_.n_generators();
  const int taps = spec_.taps_per_layer.back();
  small_product(selected_powers_, act, gathered);
  Eigen::Map<const RowMatrix> u(gathered.data(), m, static_cast<Eigen::Index>(taps) * act.cols());
  small_product(u, stacked_taps_.back(), z);
  z.rowwise() += stacked_bias_.back().row(0);
  if (spec_.activation == Activation::relu) {
    z = z.cwiseMax(0.0);
  } else {
    z = z.array().tanh().matrix();
  }
  Eigen::VectorXd out = z * readout_.col(0);
  for (int g = 0; g < m; ++g) out[g] = stats_.restore_target(out[g] + readout_bias_);
  return out;
}

Eigen::VectorXd Predictor::predict(const Eigen::Ref<const Eigen::MatrixXd>& x) {
  if (x.rows() != spec_.n_buses || x.cols() != 4) {
    throw ContractError("predict: state must be N x 4");
  }
  if (fast_) return predict_local_gnn(x);
  input_ = x;
  stats_.normalize_inputs(input_);
  Eigen::VectorXd out = forward_batch(spec_, params_, input_, gso_).row(0).transpose();
  for (Eigen::Index g = 0; g < out.size(); ++g) out[g] = stats_.restore_target(out[g]);
  return out;
}

}  // namespace gnnopf
