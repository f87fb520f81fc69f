#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace gnnopf {

enum class BusKind { slack, generator, load };

std::string_view to_string(BusKind kind);

struct BusRecord {
  int id = 0;
  BusKind kind = BusKind::load;
  double v_min = 0.0;
  double v_max = 0.0;
  double delta_min = 0.0;
  double delta_max = 0.0;

  bool operator==(const BusRecord&) const = default;
};

struct BranchRecord {
  int from = 0;
  int to = 0;
  double r = 0.0;
  double x = 0.0;
  double b_shunt = 0.0;

  bool operator==(const BranchRecord&) const = default;
};

struct GeneratorRecord {
  int bus = 0;
  double p_min = 0.0;
  double p_max = 0.0;
  double q_min = 0.0;
  double q_max = 0.0;
  double cost_c2 = 0.0;
  double cost_c1 = 0.0;
  double cost_c0 = 0.0;

  bool operator==(const GeneratorRecord&) const = default;
};

/// Static description of a power network, everything in per-unit on base_mva.
struct GridCase {
  double base_mva = 100.0;
  std::vector<BusRecord> buses;
  std::vector<BranchRecord> branches;
  std::vector<GeneratorRecord> generators;
  Eigen::VectorXd p_load_ref;
  Eigen::VectorXd q_load_ref;

  int n_buses() const { return static_cast<int>(buses.size()); }
  int n_generators() const { return static_cast<int>(generators.size()); }
  int slack_bus() const;

  bool operator==(const GridCase& other) const;
};

/// Ordered generator bus indices; the selection matrix G as an index list.
class SelectionIndex {
 public:
  SelectionIndex() = default;
  SelectionIndex(std::vector<int> generator_buses, int n_buses);

  static SelectionIndex from_case(const GridCase& grid);

  std::span<const int> generator_buses() const { return buses_; }
  int size() const { return static_cast<int>(buses_.size()); }
  int n_buses() const { return n_buses_; }
  int operator[](int m) const { return buses_[static_cast<std::size_t>(m)]; }

 private:
  std::vector<int> buses_;
  int n_buses_ = 0;
};

/// Parses the JSON case schema. Powers may be given per-unit or, with an
/// `_mva` suffix, in MW/MVAr; they are stored per-unit. Parallel branches
/// are merged by admittance addition. Throws ParseError or ValidationError.
GridCase parse_case(std::string_view text);

GridCase load_case(const std::filesystem::path& path);

/// Emits the per-unit JSON form accepted by parse_case.
std::string serialize_case(const GridCase& grid);

/// Throws ValidationError naming the first violated invariant.
void validate_case(const GridCase& grid);

/// Rows of X at the generator buses (G X).
Eigen::MatrixXd select_generators(const Eigen::Ref<const Eigen::MatrixXd>& x,
                                  const SelectionIndex& idx);

/// Places row m of Y at bus idx[m], zeros elsewhere (G^T Y).
Eigen::MatrixXd scatter_generators(const Eigen::Ref<const Eigen::MatrixXd>& y,
                                   const SelectionIndex& idx, int n_buses);

}  // namespace gnnopf
