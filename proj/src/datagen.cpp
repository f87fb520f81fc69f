#include "gnnopf/datagen.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <exception>
#include <fstream>
#include <thread>

#include <json.hpp>

#include "gnnopf/binary_io.hpp"
#include "gnnopf/errors.hpp"
#include "gnnopf/rng.hpp"

namespace gnnopf {

using json = nlohmann::json;

namespace {

constexpr char kMagic[] = "GNNOPFDS";
constexpr std::uint32_t kVersion = 1;

json config_to_json(const DatagenConfig& c) {
  return {{"load_low", c.load_low},
          {"load_high", c.load_high},
          {"gen_v_setpoint", c.gen_v_setpoint},
          {"power_flow",
           {{"tolerance", c.power_flow.tolerance},
            {"max_iterations", c.power_flow.max_iterations},
            {"max_halvings", c.power_flow.max_halvings}}},
          {"acopf",
           {{"feas_tol", c.acopf.feas_tol},
            {"opt_tol", c.acopf.opt_tol},
            {"mu_initial", c.acopf.mu_initial},
            {"mu_factor", c.acopf.mu_factor},
            {"mu_final", c.acopf.mu_final},
            {"tau", c.acopf.tau},
            {"max_iterations", c.acopf.max_iterations},
            {"kappa_epsilon", c.acopf.kappa_epsilon}}},
          {"kernel_k", c.kernel_k},
          {"threshold_omega", c.threshold_omega},
          {"normalize_gso", c.normalize_gso}};
}

DatagenConfig config_from_json(const json& j) {
  DatagenConfig c;
  c.load_low = j.at("load_low").get<double>();
  c.load_high = j.at("load_high").get<double>();
  c.gen_v_setpoint = j.at("gen_v_setpoint").get<double>();
  const auto& pf = j.at("power_flow");
  c.power_flow.tolerance = pf.at("tolerance").get<double>();
  c.power_flow.max_iterations = pf.at("max_iterations").get<int>();
  c.power_flow.max_halvings = pf.at("max_halvings").get<int>();
  const auto& ac = j.at("acopf");
  c.acopf.feas_tol = ac.at("feas_tol").get<double>();
  c.acopf.opt_tol = ac.at("opt_tol").get<double>();
  c.acopf.mu_initial = ac.at("mu_initial").get<double>();
  c.acopf.mu_factor = ac.at("mu_factor").get<double>();
  c.acopf.mu_final = ac.at("mu_final").get<double>();
  c.acopf.tau = ac.at("tau").get<double>();
  c.acopf.max_iterations = ac.at("max_iterations").get<int>();
  c.acopf.kappa_epsilon = ac.at("kappa_epsilon").get<double>();
  c.kernel_k = j.at("kernel_k").get<double>();
  c.threshold_omega = j.at("threshold_omega").get<double>();
  c.normalize_gso = j.at("normalize_gso").get<bool>();
  return c;
}

std::size_t record_width(int n, int m) {
  return static_cast<std::size_t>(8 * n + 3 * m + 4);
}

void append(std::vector<double>& out, const Eigen::VectorXd& v) {
  out.insert(out.end(), v.data(), v.data() + v.size());
}

Eigen::VectorXd take(const std::vector<double>& in, std::size_t& pos, int len) {
  Eigen::VectorXd v = Eigen::Map<const Eigen::VectorXd>(in.data() + pos, len);
  pos += static_cast<std::size_t>(len);
  return v;
}

}  // namespace

std::string_view to_string(RejectStage stage) {
  switch (stage) {
    case RejectStage::none: return "none";
    case RejectStage::dcopf: return "dcopf";
    case RejectStage::power_flow: return "power_flow";
    case RejectStage::acopf: return "acopf";
  }
  return "none";
}

std::mt19937_64 attempt_stream(std::uint64_t seed, std::uint64_t index) {
  return std::mt19937_64(derive_seed(seed, index));
}

LoadDraw sample_loads(const GridCase& grid, std::mt19937_64& rng, double low, double high) {
  if (!(low <= high)) throw ContractError("sample_loads: low must not exceed high");
  const int n = grid.n_buses();
  LoadDraw d{Eigen::VectorXd(n), Eigen::VectorXd(n)};
  for (int i = 0; i < n; ++i) {
    const double u = unit_draw(rng);
    d.p_load[i] = grid.p_load_ref[i] == 0.0 ? 0.0 : grid.p_load_ref[i] * (low + (high - low) * u);
  }
  for (int i = 0; i < n; ++i) {
    const double u = unit_draw(rng);
    d.q_load[i] = grid.q_load_ref[i] == 0.0 ? 0.0 : grid.q_load_ref[i] * (low + (high - low) * u);
  }
  return d;
}

SampleOutcome generate_sample_for_loads(const GridCase& grid, const AdmittanceMatrix& y,
                                        const Eigen::VectorXd& p_load,
                                        const Eigen::VectorXd& q_load,
                                        const DatagenConfig& config) {
  SampleOutcome out;
  const DcSolution dc = solve_dcopf(grid, p_load);
  if (dc.status != OpfStatus::optimal) {
    out.stage = RejectStage::dcopf;
    out.detail = "DCOPF infeasible: total load outside generation capacity";
    return out;
  }
  const int m = grid.n_generators();
  const Eigen::VectorXd gen_v = Eigen::VectorXd::Constant(m, config.gen_v_setpoint);
  const PowerFlowResult pf =
      solve_power_flow(grid, y, p_load, q_load, dc.gen_p, gen_v, config.power_flow);
  if (!pf.converged) {
    out.stage = RejectStage::power_flow;
    out.detail = "power flow did not converge (mismatch " + std::to_string(pf.max_mismatch) + ")";
    return out;
  }
  const OpfSolution ac = solve_acopf(grid, p_load, q_load, dc, config.acopf);
  if (ac.status != OpfStatus::optimal) {
    out.stage = RejectStage::acopf;
    out.detail = "ACOPF ended with status " + std::string(to_string(ac.status));
    return out;
  }

  Sample s;
  s.x = pf.state;
  // Specified injections are stored exactly; only the slack row and the
  // reactive rows of generator buses carry solved values.
  const int slack = grid.slack_bus();
  for (int i = 0; i < grid.n_buses(); ++i) {
    if (i == slack) continue;
    s.x.p[i] = -p_load[i];
    if (grid.buses[static_cast<std::size_t>(i)].kind == BusKind::load) s.x.q[i] = -q_load[i];
  }
  for (int g = 0; g < m; ++g) {
    const int bus = grid.generators[static_cast<std::size_t>(g)].bus;
    if (bus != slack) s.x.p[bus] = dc.gen_p[g] - p_load[bus];
  }
  s.p_star = ac.p_star;
  s.p_load = p_load;
  s.q_load = q_load;
  s.meta.dc_cost = dc.cost;
  s.meta.ac_cost = ac.cost;
  s.meta.pf_iterations = pf.iterations;
  s.meta.acopf_iterations = ac.iterations;
  s.meta.gen_v_setpoints = gen_v;
  s.meta.q_star = ac.q_gen;
  s.meta.ac_v = ac.state.v;
  s.meta.ac_delta = ac.state.delta;
  out.sample = std::move(s);
  return out;
}

SampleOutcome generate_sample(const GridCase& grid, std::mt19937_64& rng,
                              const DatagenConfig& config) {
  const LoadDraw loads = sample_loads(grid, rng, config.load_low, config.load_high);
  return generate_sample_for_loads(grid, build_admittance(grid), loads.p_load, loads.q_load,
                                   config);
}

Dataset generate_dataset(const GridCase& grid, std::string case_id, int n_samples,
                         std::uint64_t seed, int workers, const DatagenConfig& config,
                         const ProgressFn& progress) {
  if (n_samples < 1) throw ContractError("generate_dataset: n_samples must be at least 1");
  workers = std::max(1, workers);
  Dataset ds;
  ds.case_id = std::move(case_id);
  ds.grid = grid;
  ds.seed = seed;
  ds.config = config;
  if (ds.config.kernel_k <= 0.0) ds.config.kernel_k = default_kernel_k(grid);

  const AdmittanceMatrix y = build_admittance(grid);
  const std::int64_t cap = 10LL * n_samples;
  std::int64_t next = 0;
  while (static_cast<int>(ds.samples.size()) < n_samples) {
    if (next >= cap) {
      throw GenerationError("acceptance rate " + std::to_string(ds.stats.acceptance_rate()) +
                            " after " + std::to_string(ds.stats.attempts) +
                            " attempts (rejected: dcopf " + std::to_string(ds.stats.rejected_dcopf) +
                            ", power_flow " + std::to_string(ds.stats.rejected_power_flow) +
                            ", acopf " + std::to_string(ds.stats.rejected_acopf) + ")");
    }
    const std::int64_t remaining = n_samples - static_cast<std::int64_t>(ds.samples.size());
    const std::int64_t chunk =
        std::min(cap - next, std::max<std::int64_t>(remaining + remaining / 4 + 1, workers));
    std::vector<SampleOutcome> outcomes(static_cast<std::size_t>(chunk));
    std::atomic<std::int64_t> cursor{0};
    std::exception_ptr failure;
    std::atomic<bool> failed{false};
    auto run = [&]() {
      for (;;) {
        const std::int64_t i = cursor.fetch_add(1);
        if (i >= chunk || failed.load()) return;
        try {
          auto rng = attempt_stream(seed, static_cast<std::uint64_t>(next + i));
          const LoadDraw loads = sample_loads(grid, rng, config.load_low, config.load_high);
          outcomes[static_cast<std::size_t>(i)] =
              generate_sample_for_loads(grid, y, loads.p_load, loads.q_load, config);
        } catch (...) {
          if (!failed.exchange(true)) failure = std::current_exception();
          return;
        }
      }
    };
    if (workers == 1) {
      run();
    } else {
      std::vector<std::thread> pool;
      for (int w = 0; w < workers; ++w) pool.emplace_back(run);
      for (auto& t : pool) t.join();
    }
    if (failure) std::rethrow_exception(failure);

    for (auto& o : outcomes) {
      ++ds.stats.attempts;
      if (o.sample) {
        ds.samples.push_back(std::move(*o.sample));
        ++ds.stats.accepted;
        if (static_cast<int>(ds.samples.size()) == n_samples) break;
      } else if (o.stage == RejectStage::dcopf) {
        ++ds.stats.rejected_dcopf;
      } else if (o.stage == RejectStage::power_flow) {
        ++ds.stats.rejected_power_flow;
      } else {
        ++ds.stats.rejected_acopf;
      }
    }
    next += chunk;
    if (progress) progress(ds.stats);
  }
  return ds;
}

std::string encode_dataset(const Dataset& ds) {
  const int n = ds.n_buses();
  const int m = ds.n_generators();
  json header = {{"case_id", ds.case_id},
                 {"n_buses", n},
                 {"n_generators", m},
                 {"n_samples", ds.samples.size()},
                 {"seed", ds.seed},
                 {"config", config_to_json(ds.config)},
                 {"stats",
                  {{"attempts", ds.stats.attempts},
                   {"accepted", ds.stats.accepted},
                   {"rejected_dcopf", ds.stats.rejected_dcopf},
                   {"rejected_power_flow", ds.stats.rejected_power_flow},
                   {"rejected_acopf", ds.stats.rejected_acopf}}},
                 {"record_layout",
                  "v[N] delta[N] p[N] q[N] p_star[M] p_load[N] q_load[N] q_star[M] "
                  "gen_v[M] ac_v[N] ac_delta[N] dc_cost ac_cost pf_iterations acopf_iterations"},
                 {"case", json::parse(serialize_case(ds.grid))}};
  BinaryContainer c;
  c.version = kVersion;
  c.header = header.dump();
  c.values.reserve(record_width(n, m) * ds.samples.size());
  for (const auto& s : ds.samples) {
    if (s.x.size() != n || s.p_star.size() != m || s.meta.ac_v.size() != n ||
        s.meta.ac_delta.size() != n || s.meta.q_star.size() != m ||
        s.meta.gen_v_setpoints.size() != m) {
      throw ContractError("encode_dataset: sample shape does not match the case");
    }
    append(c.values, s.x.v);
    append(c.values, s.x.delta);
    append(c.values, s.x.p);
    append(c.values, s.x.q);
    append(c.values, s.p_star);
    append(c.values, s.p_load);
    append(c.values, s.q_load);
    append(c.values, s.meta.q_star);
    append(c.values, s.meta.gen_v_setpoints);
    append(c.values, s.meta.ac_v);
    append(c.values, s.meta.ac_delta);
    c.values.push_back(s.meta.dc_cost);
    c.values.push_back(s.meta.ac_cost);
    c.values.push_back(s.meta.pf_iterations);
    c.values.push_back(s.meta.acopf_iterations);
  }
  return encode_container(kMagic, c);
}

Dataset decode_dataset(std::string_view bytes) {
  const BinaryContainer c = decode_container(bytes, kMagic, kVersion);
  Dataset ds;
  try {
    const json header = json::parse(c.header);
    ds.case_id = header.at("case_id").get<std::string>();
    ds.seed = header.at("seed").get<std::uint64_t>();
    ds.config = config_from_json(header.at("config"));
    const auto& st = header.at("stats");
    ds.stats.attempts = st.at("attempts").get<std::int64_t>();
    ds.stats.accepted = st.at("accepted").get<std::int64_t>();
    ds.stats.rejected_dcopf = st.at("rejected_dcopf").get<std::int64_t>();
    ds.stats.rejected_power_flow = st.at("rejected_power_flow").get<std::int64_t>();
    ds.stats.rejected_acopf = st.at("rejected_acopf").get<std::int64_t>();
    ds.grid = parse_case(header.at("case").dump());
    const int n = header.at("n_buses").get<int>();
    const int m = header.at("n_generators").get<int>();
    const auto count = header.at("n_samples").get<std::size_t>();
    if (n != ds.grid.n_buses() || m != ds.grid.n_generators()) {
      throw FormatError("dataset header dimensions disagree with the embedded case");
    }
    if (c.values.size() != count * record_width(n, m)) {
      throw FormatError("dataset payload size does not match its header");
    }
    std::size_t pos = 0;
    ds.samples.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
      Sample s;
      s.x.v = take(c.values, pos, n);
      s.x.delta = take(c.values, pos, n);
      s.x.p = take(c.values, pos, n);
      s.x.q = take(c.values, pos, n);
      s.p_star = take(c.values, pos, m);
      s.p_load = take(c.values, pos, n);
      s.q_load = take(c.values, pos, n);
      s.meta.q_star = take(c.values, pos, m);
      s.meta.gen_v_setpoints = take(c.values, pos, m);
      s.meta.ac_v = take(c.values, pos, n);
      s.meta.ac_delta = take(c.values, pos, n);
      s.meta.dc_cost = c.values[pos++];
      s.meta.ac_cost = c.values[pos++];
      s.meta.pf_iterations = static_cast<int>(c.values[pos++]);
      s.meta.acopf_iterations = static_cast<int>(c.values[pos++]);
      ds.samples.push_back(std::move(s));
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("dataset header: ") + e.what());
  } catch (const ParseError& e) {
    throw FormatError(std::string("dataset embedded case: ") + e.what());
  } catch (const ValidationError& e) {
    throw FormatError(std::string("dataset embedded case: ") + e.what());
  }
  return ds;
}

void save_dataset(const Dataset& dataset, const std::filesystem::path& path) {
  write_file_atomic(path, encode_dataset(dataset));
}

Dataset load_dataset(const std::filesystem::path& path) { return decode_dataset(read_file(path)); }

void export_dataset_csv(const Dataset& ds, const std::filesystem::path& path) {
  const int n = ds.n_buses();
  const int m = ds.n_generators();
  std::string out = "sample";
  auto columns = [&](const char* name, int len) {
    for (int i = 0; i < len; ++i) out += "," + std::string(name) + "_" + std::to_string(i);
  };
  columns("p_load", n);
  columns("q_load", n);
  columns("v", n);
  columns("delta", n);
  columns("p", n);
  columns("q", n);
  columns("p_star", m);
  columns("q_star", m);
  out += ",dc_cost,ac_cost,pf_iterations,acopf_iterations\n";
  char buf[32];
  auto put = [&](double v) {
    std::snprintf(buf, sizeof buf, ",%.17g", v);
    out += buf;
  };
  auto put_vec = [&](const Eigen::VectorXd& v) {
    for (Eigen::Index i = 0; i < v.size(); ++i) put(v[i]);
  };
  for (std::size_t k = 0; k < ds.samples.size(); ++k) {
    const auto& s = ds.samples[k];
    out += std::to_string(k);
    put_vec(s.p_load);
    put_vec(s.q_load);
    put_vec(s.x.v);
    put_vec(s.x.delta);
    put_vec(s.x.p);
    put_vec(s.x.q);
    put_vec(s.p_star);
    put_vec(s.meta.q_star);
    put(s.meta.dc_cost);
    put(s.meta.ac_cost);
    out += "," + std::to_string(s.meta.pf_iterations) + "," + std::to_string(s.meta.acopf_iterations);
    out += "\n";
  }
  write_file_atomic(path, out);
}

}  // namespace gnnopf
