#include "gnnopf/grid_case.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <fstream>
#include <map>
#include <numbers>
#include <set>
#include <sstream>

#include <json.hpp>

#include "gnnopf/errors.hpp"

namespace gnnopf {

using nlohmann::json;

std::string_view to_string(BusKind kind) {
  switch (kind) {
    case BusKind::slack: return "slack";
    case BusKind::generator: return "generator";
    case BusKind::load: return "load";
  }
  return "load";
}

int GridCase::slack_bus() const {
  for (const auto& bus : buses) {
    if (bus.kind == BusKind::slack) return bus.id;
  }
  throw ValidationError("case has no slack bus");
}

bool GridCase::operator==(const GridCase& other) const {
  return base_mva == other.base_mva && buses == other.buses && branches == other.branches &&
         generators == other.generators && p_load_ref == other.p_load_ref &&
         q_load_ref == other.q_load_ref;
}

SelectionIndex::SelectionIndex(std::vector<int> generator_buses, int n_buses)
    : buses_(std::move(generator_buses)), n_buses_(n_buses) {
  std::set<int> seen;
  for (int b : buses_) {
    if (b < 0 || b >= n_buses) {
      throw ContractError("selection index " + std::to_string(b) + " out of range for " +
                          std::to_string(n_buses) + " buses");
    }
    if (!seen.insert(b).second) {
      throw ContractError("selection index " + std::to_string(b) + " repeated");
    }
  }
}

SelectionIndex SelectionIndex::from_case(const GridCase& grid) {
  std::vector<int> buses;
  buses.reserve(grid.generators.size());
  for (const auto& g : grid.generators) buses.push_back(g.bus);
  return SelectionIndex(std::move(buses), grid.n_buses());
}

namespace {

const std::set<std::string> kTopKeys = {"base_mva", "buses", "branches", "generators"};
const std::set<std::string> kBusKeys = {"id",         "kind",           "v_min",
                                        "v_max",      "p_load_ref",     "q_load_ref",
                                        "delta_min",  "delta_max",      "p_load_ref_mva",
                                        "q_load_ref_mva"};
const std::set<std::string> kBranchKeys = {"from", "to", "r", "x", "b_shunt"};
const std::set<std::string> kGenKeys = {"bus",       "p_min",     "p_max",     "q_min",
                                        "q_max",     "cost",      "p_min_mva", "p_max_mva",
                                        "q_min_mva", "q_max_mva"};

void reject_unknown(const json& obj, const std::set<std::string>& allowed,
                    const std::string& path) {
  if (!obj.is_object()) throw ParseError(path + ": expected object");
  for (const auto& [key, _] : obj.items()) {
    if (!allowed.contains(key)) throw ParseError(path + "." + key + ": unknown key");
  }
}

double number_at(const json& obj, const std::string& key, const std::string& path) {
  auto it = obj.find(key);
  if (it == obj.end()) throw ParseError(path + "." + key + ": missing");
  if (!it->is_number()) throw ParseError(path + "." + key + ": expected number");
  return it->get<double>();
}

int index_at(const json& obj, const std::string& key, const std::string& path) {
  auto it = obj.find(key);
  if (it == obj.end()) throw ParseError(path + "." + key + ": missing");
  if (!it->is_number_integer()) throw ParseError(path + "." + key + ": expected integer");
  return it->get<int>();
}

// A power field given either per-unit under `key` or in MVA under `key_mva`.
double power_at(const json& obj, const std::string& key, const std::string& path,
                double base_mva) {
  const bool pu = obj.contains(key);
  const bool mva = obj.contains(key + "_mva");
  if (pu && mva) throw ParseError(path + "." + key + ": given both per-unit and _mva forms");
  if (mva) return number_at(obj, key + "_mva", path) / base_mva;
  return number_at(obj, key, path);
}

const json& array_at(const json& obj, const std::string& key) {
  auto it = obj.find(key);
  if (it == obj.end()) throw ParseError(key + ": missing");
  if (!it->is_array()) throw ParseError(key + ": expected array");
  return *it;
}

BusKind parse_kind(const json& obj, const std::string& path) {
  auto it = obj.find("kind");
  if (it == obj.end()) throw ParseError(path + ".kind: missing");
  if (!it->is_string()) throw ParseError(path + ".kind: expected string");
  const auto s = it->get<std::string>();
  if (s == "slack") return BusKind::slack;
  if (s == "generator") return BusKind::generator;
  if (s == "load") return BusKind::load;
  throw ParseError(path + ".kind: expected one of slack, generator, load");
}

// Parallel branches collapse into one edge whose series admittance is the sum.
std::vector<BranchRecord> merge_parallel(const std::vector<BranchRecord>& raw) {
  std::vector<BranchRecord> merged;
  std::map<std::pair<int, int>, std::size_t> slot;
  for (const auto& br : raw) {
    const auto key = std::minmax(br.from, br.to);
    auto it = slot.find(key);
    if (it == slot.end()) {
      slot.emplace(key, merged.size());
      merged.push_back(br);
      continue;
    }
    auto& acc = merged[it->second];
    const std::complex<double> y = 1.0 / std::complex<double>(acc.r, acc.x) +
                                   1.0 / std::complex<double>(br.r, br.x);
    const std::complex<double> z = 1.0 / y;
    acc.r = z.real();
    acc.x = z.imag();
    acc.b_shunt += br.b_shunt;
  }
  return merged;
}

}  // namespace

GridCase parse_case(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("case: invalid JSON: ") + e.what());
  }
  reject_unknown(doc, kTopKeys, "case");

  GridCase grid;
  grid.base_mva = number_at(doc, "base_mva", "case");
  if (!(grid.base_mva > 0.0)) throw ValidationError("base_mva must be positive");

  const auto& buses = array_at(doc, "buses");
  const auto n = buses.size();
  grid.buses.resize(n);
  grid.p_load_ref = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
  grid.q_load_ref = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
  std::vector<bool> filled(n, false);
  for (std::size_t i = 0; i < n; ++i) {
    const std::string path = "buses[" + std::to_string(i) + "]";
    const auto& b = buses[i];
    reject_unknown(b, kBusKeys, path);
    const int id = index_at(b, "id", path);
    if (id < 0 || static_cast<std::size_t>(id) >= n) {
      throw ValidationError(path + ".id: bus ids must be 0..N-1");
    }
    if (filled[static_cast<std::size_t>(id)]) {
      throw ValidationError(path + ".id: duplicate bus id " + std::to_string(id));
    }
    filled[static_cast<std::size_t>(id)] = true;
    BusRecord rec;
    rec.id = id;
    rec.kind = parse_kind(b, path);
    rec.v_min = number_at(b, "v_min", path);
    rec.v_max = number_at(b, "v_max", path);
    rec.delta_min = b.contains("delta_min") ? number_at(b, "delta_min", path)
                                            : -std::numbers::pi / 2.0;
    rec.delta_max = b.contains("delta_max") ? number_at(b, "delta_max", path)
                                            : std::numbers::pi / 2.0;
    grid.buses[static_cast<std::size_t>(id)] = rec;
    grid.p_load_ref[id] = power_at(b, "p_load_ref", path, grid.base_mva);
    grid.q_load_ref[id] = power_at(b, "q_load_ref", path, grid.base_mva);
  }

  std::vector<BranchRecord> raw;
  const auto& branches = array_at(doc, "branches");
  for (std::size_t i = 0; i < branches.size(); ++i) {
    const std::string path = "branches[" + std::to_string(i) + "]";
    const auto& br = branches[i];
    reject_unknown(br, kBranchKeys, path);
    BranchRecord rec;
    rec.from = index_at(br, "from", path);
    rec.to = index_at(br, "to", path);
    rec.r = number_at(br, "r", path);
    rec.x = number_at(br, "x", path);
    rec.b_shunt = number_at(br, "b_shunt", path);
    if (rec.r == 0.0 && rec.x == 0.0) {
      throw ValidationError(path + ": zero series impedance");
    }
    raw.push_back(rec);
  }
  grid.branches = merge_parallel(raw);

  const auto& gens = array_at(doc, "generators");
  for (std::size_t i = 0; i < gens.size(); ++i) {
    const std::string path = "generators[" + std::to_string(i) + "]";
    const auto& g = gens[i];
    reject_unknown(g, kGenKeys, path);
    GeneratorRecord rec;
    rec.bus = index_at(g, "bus", path);
    rec.p_min = power_at(g, "p_min", path, grid.base_mva);
    rec.p_max = power_at(g, "p_max", path, grid.base_mva);
    rec.q_min = power_at(g, "q_min", path, grid.base_mva);
    rec.q_max = power_at(g, "q_max", path, grid.base_mva);
    auto it = g.find("cost");
    if (it == g.end()) throw ParseError(path + ".cost: missing");
    if (!it->is_array() || it->size() != 3) {
      throw ParseError(path + ".cost: expected [c2, c1, c0]");
    }
    for (std::size_t k = 0; k < 3; ++k) {
      if (!(*it)[k].is_number()) {
        throw ParseError(path + ".cost[" + std::to_string(k) + "]: expected number");
      }
    }
    rec.cost_c2 = (*it)[0].get<double>();
    rec.cost_c1 = (*it)[1].get<double>();
    rec.cost_c0 = (*it)[2].get<double>();
    grid.generators.push_back(rec);
  }

  validate_case(grid);
  return grid;
}

GridCase load_case(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError(path.string() + ": cannot open case file");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_case(buf.str());
}

std::string serialize_case(const GridCase& grid) {
  json doc;
  doc["base_mva"] = grid.base_mva;
  json buses = json::array();
  for (const auto& b : grid.buses) {
    buses.push_back({{"id", b.id},
                     {"kind", std::string(to_string(b.kind))},
                     {"v_min", b.v_min},
                     {"v_max", b.v_max},
                     {"delta_min", b.delta_min},
                     {"delta_max", b.delta_max},
                     {"p_load_ref", grid.p_load_ref[b.id]},
                     {"q_load_ref", grid.q_load_ref[b.id]}});
  }
  doc["buses"] = std::move(buses);
  json branches = json::array();
  for (const auto& br : grid.branches) {
    branches.push_back(
        {{"from", br.from}, {"to", br.to}, {"r", br.r}, {"x", br.x}, {"b_shunt", br.b_shunt}});
  }
  doc["branches"] = std::move(branches);
  json gens = json::array();
  for (const auto& g : grid.generators) {
    gens.push_back({{"bus", g.bus},
                    {"p_min", g.p_min},
                    {"p_max", g.p_max},
                    {"q_min", g.q_min},
                    {"q_max", g.q_max},
                    {"cost", {g.cost_c2, g.cost_c1, g.cost_c0}}});
  }
  doc["generators"] = std::move(gens);
  return doc.dump(1);
}

void validate_case(const GridCase& grid) {
  const int n = grid.n_buses();
  if (n < 2) throw ValidationError("case needs at least 2 buses");
  if (grid.generators.empty()) throw ValidationError("case needs at least 1 generator");
  if (grid.p_load_ref.size() != n || grid.q_load_ref.size() != n) {
    throw ValidationError("reference load vectors must have one entry per bus");
  }

  int slack_count = 0;
  for (int i = 0; i < n; ++i) {
    const auto& b = grid.buses[static_cast<std::size_t>(i)];
    const std::string path = "buses[" + std::to_string(i) + "]";
    if (b.id != i) throw ValidationError(path + ": bus ids must equal their position");
    if (b.kind == BusKind::slack) ++slack_count;
    for (double v : {b.v_min, b.v_max, b.delta_min, b.delta_max}) {
      if (!std::isfinite(v)) throw ValidationError(path + ": bounds must be finite");
    }
    if (b.v_min > b.v_max) throw ValidationError(path + ": v_min > v_max");
    if (b.delta_min > b.delta_max) throw ValidationError(path + ": delta_min > delta_max");
    if (!(grid.p_load_ref[i] >= 0.0) || !(grid.q_load_ref[i] >= 0.0)) {
      throw ValidationError(path + ": reference loads must be nonnegative");
    }
  }
  if (slack_count != 1) {
    throw ValidationError("exactly one slack bus required, found " + std::to_string(slack_count));
  }

  std::set<std::pair<int, int>> pairs;
  for (std::size_t k = 0; k < grid.branches.size(); ++k) {
    const auto& br = grid.branches[k];
    const std::string path = "branches[" + std::to_string(k) + "]";
    if (br.from < 0 || br.from >= n || br.to < 0 || br.to >= n) {
      throw ValidationError(path + ": bus index out of range");
    }
    if (br.from == br.to) throw ValidationError(path + ": from == to");
    if (br.r == 0.0 && br.x == 0.0) throw ValidationError(path + ": zero series impedance");
    if (!std::isfinite(br.r) || !std::isfinite(br.x) || !std::isfinite(br.b_shunt)) {
      throw ValidationError(path + ": parameters must be finite");
    }
    if (!pairs.insert(std::minmax(br.from, br.to)).second) {
      throw ValidationError(path + ": duplicate branch between the same buses");
    }
  }

  std::vector<int> gens_at(static_cast<std::size_t>(n), 0);
  for (std::size_t m = 0; m < grid.generators.size(); ++m) {
    const auto& g = grid.generators[m];
    const std::string path = "generators[" + std::to_string(m) + "]";
    if (g.bus < 0 || g.bus >= n) throw ValidationError(path + ": bus index out of range");
    if (++gens_at[static_cast<std::size_t>(g.bus)] > 1) {
      throw ValidationError(path + ": generator buses must be distinct");
    }
    if (grid.buses[static_cast<std::size_t>(g.bus)].kind == BusKind::load) {
      throw ValidationError(path + ": generator attached to a bus of kind load");
    }
    if (g.p_min > g.p_max) throw ValidationError(path + ": p_min > p_max");
    if (g.q_min > g.q_max) throw ValidationError(path + ": q_min > q_max");
    if (g.cost_c2 < 0.0) throw ValidationError(path + ": cost_c2 must be nonnegative");
  }
  for (int i = 0; i < n; ++i) {
    if (grid.buses[static_cast<std::size_t>(i)].kind != BusKind::load &&
        gens_at[static_cast<std::size_t>(i)] == 0) {
      throw ValidationError("buses[" + std::to_string(i) + "]: " +
                            std::string(to_string(grid.buses[static_cast<std::size_t>(i)].kind)) +
                            " bus without a generator");
    }
  }
}

Eigen::MatrixXd select_generators(const Eigen::Ref<const Eigen::MatrixXd>& x,
                                  const SelectionIndex& idx) {
  if (x.rows() != idx.n_buses()) {
    throw ContractError("select_generators: X has " + std::to_string(x.rows()) +
                        " rows, selection expects " + std::to_string(idx.n_buses()));
  }
  Eigen::MatrixXd out(idx.size(), x.cols());
  for (int m = 0; m < idx.size(); ++m) out.row(m) = x.row(idx[m]);
  return out;
}

Eigen::MatrixXd scatter_generators(const Eigen::Ref<const Eigen::MatrixXd>& y,
                                   const SelectionIndex& idx, int n_buses) {
  if (y.rows() != idx.size()) {
    throw ContractError("scatter_generators: Y has " + std::to_string(y.rows()) +
                        " rows, selection has " + std::to_string(idx.size()));
  }
  if (n_buses != idx.n_buses()) {
    throw ContractError("scatter_generators: selection built for a different bus count");
  }
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(n_buses, y.cols());
  for (int m = 0; m < idx.size(); ++m) out.row(idx[m]) = y.row(m);
  return out;
}

}  // namespace gnnopf
