#include "gnnopf/checkpoint.hpp"

#include <json.hpp>

#include "gnnopf/binary_io.hpp"
#include "gnnopf/errors.hpp"

namespace gnnopf {

using json = nlohmann::json;

namespace {

constexpr char kMagic[] = "GNNOPFCK";
constexpr std::uint32_t kVersion = 1;

json vec4(const Eigen::Vector4d& v) { return {v[0], v[1], v[2], v[3]}; }

Eigen::Vector4d vec4(const json& j) {
  if (!j.is_array() || j.size() != 4) throw FormatError("expected 4 standardization values");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
}

}  // namespace

std::string encode_checkpoint(const Checkpoint& ckpt) {
  check_params(ckpt.spec, ckpt.params);
  const int n = ckpt.gso.size();
  json tensors = json::array();
  for (std::size_t i = 0; i < ckpt.params.tensors.size(); ++i) {
    tensors.push_back({{"name", ckpt.params.names[i]},
                       {"rows", ckpt.params.tensors[i].rows()},
                       {"cols", ckpt.params.tensors[i].cols()}});
  }
  const json header = {
      {"spec",
       {{"architecture", std::string(to_string(ckpt.spec.architecture))},
        {"layer_features", ckpt.spec.layer_features},
        {"taps_per_layer", ckpt.spec.taps_per_layer},
        {"activation", std::string(to_string(ckpt.spec.activation))},
        {"use_bias", ckpt.spec.use_bias},
        {"n_buses", ckpt.spec.n_buses},
        {"generator_buses", ckpt.spec.generator_buses}}},
      {"tensors", tensors},
      {"standardization",
       {{"input_mean", vec4(ckpt.stats.input_mean)},
        {"input_std", vec4(ckpt.stats.input_std)},
        {"target_mean", ckpt.stats.target_mean},
        {"target_std", ckpt.stats.target_std}}},
      {"gso",
       {{"n", n},
        {"kernel_k", ckpt.gso.kernel_k},
        {"threshold_omega", ckpt.gso.threshold_omega},
        {"normalized", ckpt.gso.normalized}}},
      {"train",
       {{"learning_rate", ckpt.train.learning_rate},
        {"beta1", ckpt.train.beta1},
        {"beta2", ckpt.train.beta2},
        {"epsilon", ckpt.train.epsilon},
        {"epochs", ckpt.train.epochs},
        {"batch_size", ckpt.train.batch_size},
        {"split_fraction", ckpt.train.split_fraction},
        {"seed", ckpt.train.seed}}},
      {"dataset",
       {{"case_id", ckpt.case_id}, {"seed", ckpt.dataset_seed}, {"size", ckpt.dataset_size}}}};

  BinaryContainer c;
  c.version = kVersion;
  c.header = header.dump();
  c.values.assign(ckpt.gso.w.data(), ckpt.gso.w.data() + ckpt.gso.w.size());
  for (const auto& t : ckpt.params.tensors) c.values.insert(c.values.end(), t.data(), t.data() + t.size());
  return encode_container(kMagic, c);
}

Checkpoint decode_checkpoint(std::string_view bytes) {
  const BinaryContainer c = decode_container(bytes, kMagic, kVersion);
  Checkpoint ckpt;
  try {
    const json h = json::parse(c.header);
    const auto& s = h.at("spec");
    ckpt.spec.architecture = parse_architecture(s.at("architecture").get<std::string>());
    ckpt.spec.layer_features = s.at("layer_features").get<std::vector<int>>();
    ckpt.spec.taps_per_layer = s.at("taps_per_layer").get<std::vector<int>>();
    ckpt.spec.activation = parse_activation(s.at("activation").get<std::string>());
    ckpt.spec.use_bias = s.at("use_bias").get<bool>();
    ckpt.spec.n_buses = s.at("n_buses").get<int>();
    ckpt.spec.generator_buses = s.at("generator_buses").get<std::vector<int>>();
    ckpt.spec.validate();

    const auto& st = h.at("standardization");
    ckpt.stats.input_mean = vec4(st.at("input_mean"));
    ckpt.stats.input_std = vec4(st.at("input_std"));
    ckpt.stats.target_mean = st.at("target_mean").get<double>();
    ckpt.stats.target_std = st.at("target_std").get<double>();

    const auto& t = h.at("train");
    ckpt.train.learning_rate = t.at("learning_rate").get<double>();
    ckpt.train.beta1 = t.at("beta1").get<double>();
    ckpt.train.beta2 = t.at("beta2").get<double>();
    ckpt.train.epsilon = t.at("epsilon").get<double>();
    ckpt.train.epochs = t.at("epochs").get<int>();
    ckpt.train.batch_size = t.at("batch_size").get<int>();
    ckpt.train.split_fraction = t.at("split_fraction").get<double>();
    ckpt.train.seed = t.at("seed").get<std::uint64_t>();

    const auto& d = h.at("dataset");
    ckpt.case_id = d.at("case_id").get<std::string>();
    ckpt.dataset_seed = d.at("seed").get<std::uint64_t>();
    ckpt.dataset_size = d.at("size").get<std::uint64_t>();

    const auto& g = h.at("gso");
    const int n = g.at("n").get<int>();
    std::size_t expected = static_cast<std::size_t>(n) * static_cast<std::size_t>(n);
    const auto shapes = parameter_shapes(ckpt.spec);
    const auto& tensors = h.at("tensors");
    if (tensors.size() != shapes.size()) throw FormatError("checkpoint tensor list does not match its spec");
    for (std::size_t i = 0; i < shapes.size(); ++i) {
      if (tensors[i].at("name").get<std::string>() != shapes[i].name ||
          tensors[i].at("rows").get<int>() != shapes[i].rows ||
          tensors[i].at("cols").get<int>() != shapes[i].cols) {
        throw FormatError("checkpoint tensor '" + tensors[i].at("name").get<std::string>() +
                          "' does not match its spec");
      }
      expected += static_cast<std::size_t>(shapes[i].rows) * static_cast<std::size_t>(shapes[i].cols);
    }
    if (c.values.size() != expected) throw FormatError("checkpoint payload size does not match its header");

    std::size_t pos = 0;
    const Eigen::MatrixXd w = Eigen::Map<const Eigen::MatrixXd>(c.values.data(), n, n);
    pos += static_cast<std::size_t>(n) * static_cast<std::size_t>(n);
    ckpt.gso = Gso::from_weights(w);
    ckpt.gso.kernel_k = g.at("kernel_k").get<double>();
    ckpt.gso.threshold_omega = g.at("threshold_omega").get<double>();
    ckpt.gso.normalized = g.at("normalized").get<bool>();
    for (const auto& shape : shapes) {
      ckpt.params.names.push_back(shape.name);
      ckpt.params.tensors.push_back(
          Eigen::Map<const RowMatrix>(c.values.data() + pos, shape.rows, shape.cols));
      pos += static_cast<std::size_t>(shape.rows) * static_cast<std::size_t>(shape.cols);
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint header: ") + e.what());
  } catch (const ContractError& e) {
    throw FormatError(std::string("checkpoint: ") + e.what());
  }
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  write_file_atomic(path, encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(read_file(path));
}

void check_compatible(const Checkpoint& ckpt, const Dataset& dataset) {
  if (ckpt.spec.n_buses != dataset.n_buses() || ckpt.spec.n_generators() != dataset.n_generators()) {
    throw ContractError("checkpoint model (N=" + std::to_string(ckpt.spec.n_buses) + ", M=" +
                        std::to_string(ckpt.spec.n_generators()) + ") does not fit dataset (N=" +
                        std::to_string(dataset.n_buses()) + ", M=" +
                        std::to_string(dataset.n_generators()) + ")");
  }
  if (ckpt.case_id != dataset.case_id || ckpt.dataset_seed != dataset.seed ||
      ckpt.dataset_size != dataset.size()) {
    throw ContractError("checkpoint was trained on dataset '" + ckpt.case_id + "' (seed " +
                        std::to_string(ckpt.dataset_seed) + ", " + std::to_string(ckpt.dataset_size) +
                        " samples), not on '" + dataset.case_id + "' (seed " +
                        std::to_string(dataset.seed) + ", " + std::to_string(dataset.size()) +
                        " samples)");
  }
}

}  // namespace gnnopf
