// Copyright (c) 2026 The EAR Attention Authors.
// SPDX-License-Identifier: Apache-2.0

#include "ear/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "ear/error.hpp"
#include "json.hpp"

namespace ear {
namespace {

using nlohmann::json;
using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point start) {
  return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

// Loads the tensor file and adopts its shapes into the config.
Instance load_instance(const std::string& path, RunConfig& config) {
  Instance in = read_tensor_file(path).instance;
  config.n_q = in.q.rows();
  config.n_k = in.k.rows();
  config.d = in.q.cols();
  config.validate();
  return in;
}

void require_oracle(const RunConfig& config, const char* command) {
  const std::uint64_t entries = static_cast<std::uint64_t>(config.n_q) * config.n_k;
  if (entries > config.oracle_max_entries)
    throw CapabilityError(std::string(command) + " needs the full-attention oracle, but " + std::to_string(entries) +
                          " entries exceed oracleMaxEntries = " + std::to_string(config.oracle_max_entries));
}

json flops_json(const FlopCounters& f) {
  return {{"exact_block", f.exact_block},
          {"compensation", f.compensation},
          {"estimation", f.estimation},
          {"clustering", f.clustering}};
}

std::string format_real(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.data().size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

double max_abs(const Matrix& a) {
  double m = 0.0;
  for (double x : a.data()) m = std::max(m, std::abs(x));
  return m;
}

// Direct per-entry value-aware error sums, using the given stabilizers.
Matrix naive_value_aware(const ClusterModel& qm, const ClusterModel& km, const Matrix& k, const Matrix& v,
                         const std::vector<double>& stabilizers) {
  const Matrix vbar = cluster_means(km, v);
  const double scale = 1.0 / std::sqrt(static_cast<double>(k.cols()));
  Matrix sums(qm.num_clusters, km.num_clusters);
  for (std::size_t qc = 0; qc < qm.num_clusters; ++qc) {
    const auto qbar = qm.centroids.row(qc);
    for (std::size_t j = 0; j < k.rows(); ++j) {
      const std::size_t kc = km.assignments[j];
      const double wc = std::exp(dot(qbar, km.centroids.row(kc)) * scale - stabilizers[qc]);
      const double wj = std::exp(dot(qbar, k.row(j)) * scale - stabilizers[qc]);
      double e = 0.0;
      for (std::size_t c = 0; c < v.cols(); ++c) {
        const double r = wc * vbar(kc, c) - wj * v(j, c);
        e += r * r;
      }
      sums(qc, kc) += e;
    }
    for (std::size_t kc = 0; kc < km.num_clusters; ++kc) sums(qc, kc) *= static_cast<double>(qm.sizes[qc]);
  }
  return sums;
}

bool table_invariants_hold(const BlockErrorTable& t, std::size_t n_q, std::size_t n_k) {
  if (t.layout.total_entries() != static_cast<std::int64_t>(n_q * n_k)) return false;
  for (std::size_t qc = 0; qc < t.q_clusters(); ++qc) {
    for (std::size_t kc = 0; kc < t.k_clusters(); ++kc) {
      const double e = t.error_sum(qc, kc);
      const auto size = static_cast<double>(t.layout.block_size(qc, kc));
      if (!(e >= 0.0) || size < 1.0) return false;
      if (std::abs(t.ratios(qc, kc) - e / size) > 1e-12 * std::max(1.0, std::abs(e / size))) return false;
    }
  }
  return true;
}

json check_json(double diff, double gate, bool relative) {
  return {{"max_diff", diff}, {"gate", gate}, {"relative", relative}, {"passed", diff <= gate}};
}

}  // namespace

void cmd_gen(const RunConfig& config, const std::string& output_path) {
  config.validate();
  write_tensor_file(output_path, generate_blobs(config.blob_spec(config.seeds.front())), config.dtype);
}

void cmd_run(const std::string& tensor_path, const RunConfig& base, const CommandOptions& options,
             std::ostream& out) {
  RunConfig config = base;
  const Instance in = load_instance(tensor_path, config);
  const PipelineOptions pipeline = config.pipeline();
  const bool with_oracle = static_cast<std::uint64_t>(config.n_q) * config.n_k <= config.oracle_max_entries;
  const json echo = json::parse(config.to_json());

  const auto t0 = Clock::now();
  std::optional<FullAttention> full;
  if (with_oracle) full = full_attention(in.q, in.k, in.v);
  const double oracle_ms = ms_since(t0);

  for (std::uint64_t seed : config.seeds) {
    const auto t1 = Clock::now();
    const Prepared prep = prepare(in, pipeline, seed);
    const double prepare_ms = ms_since(t1);

    const auto t2 = Clock::now();
    json rec;
    if (full) {
      const SweepRecord r = evaluate_cell(in, prep, *full, config.policy, config.budget(), pipeline, seed);
      rec["policy"] = to_string(r.policy);
      rec["density"] = r.density;
      rec["relaxed_objective"] = r.relaxed_objective;
      rec["map_mse"] = r.map_mse;
      rec["output_mse"] = r.output_mse;
      rec["flops"] = r.flops_total;
      rec["flops_breakdown"] = flops_json(r.flops);
    } else {
      const PolicyOutcome o = run_policy(in, prep, config.policy, config.budget(), pipeline, seed);
      rec["policy"] = to_string(config.policy);
      rec["density"] = o.mask.density();
      rec["relaxed_objective"] = relaxed_objective(prep.table, o.mask);
      rec["map_mse"] = nullptr;
      rec["output_mse"] = nullptr;
      rec["flops"] = o.result.flops.total();
      rec["flops_breakdown"] = flops_json(o.result.flops);
    }
    const double route_ms = ms_since(t2);
    rec["seed"] = seed;
    rec["c_q"] = prep.q_model.num_clusters;
    rec["c_k"] = prep.k_model.num_clusters;
    rec["config"] = echo;
    if (options.timing)
      rec["timing_ms"] = {{"oracle", oracle_ms}, {"prepare", prepare_ms}, {"route_and_attend", route_ms}};
    out << rec.dump() << '\n';
  }
}

void cmd_sweep(const std::string& tensor_path, const RunConfig& base, const CommandOptions& options,
               std::ostream& out) {
  RunConfig config = base;
  const Instance in = load_instance(tensor_path, config);
  if (config.density_grid.empty()) throw ConfigError("densityGrid: the density grid is empty");
  require_oracle(config, "sweep");
  const auto records =
      policy_sweep(in, config.sweep_policies, config.density_grid, config.seeds, config.pipeline(), options.workers);
  out << kSweepCsvHeader << '\n';
  for (const auto& r : records) {
    out << to_string(r.policy) << ',' << format_real(r.density) << ',' << format_real(r.relaxed_objective) << ','
        << format_real(r.map_mse) << ',' << format_real(r.output_mse) << ',' << r.flops_total << ',' << r.seed << ','
        << r.c_q << ',' << r.c_k << '\n';
  }
}

bool cmd_verify(const std::string& tensor_path, const RunConfig& base, const CommandOptions& options,
                std::ostream& out) {
  RunConfig config = base;
  const Instance in = load_instance(tensor_path, config);
  require_oracle(config, "verify");
  const PipelineOptions pipeline = config.pipeline();
  const bool single = config.precision == Precision::kSingle;
  const double exec_gate = single ? 1e-4 : 1e-9;
  const double est_gate = single ? 1e-4 : 1e-10;

  bool all_passed = true;
  for (std::uint64_t seed : config.seeds) {
    const auto t0 = Clock::now();
    const Prepared prep = prepare(in, pipeline, seed);
    const BlockMask mask = run_policy(in, prep, config.policy, config.budget(), pipeline, seed).mask;

    const Matrix reference = reference_sparse_output(in.q, in.k, in.v, prep.q_model, prep.k_model, mask);
    const AttentionResult fast =
        sparse_attend(in.q, in.k, in.v, prep.q_model, prep.k_model, mask, ExecutorOptions{config.precision});
    double exec_diff = max_abs_diff(fast.output, reference);
    if (single) exec_diff /= std::max(max_abs(reference), 1e-300);

    EstimatorOptions est;
    est.tile_size = config.tile_size;
    est.precision = config.precision;
    const BlockErrorTable streamed = estimate_errors_streaming(prep.q_model, prep.k_model, in.k, in.v, est);
    const Matrix naive = naive_value_aware(prep.q_model, prep.k_model, in.k, in.v, streamed.stabilizers);
    const double est_diff = max_abs_diff(streamed.error_sum, naive) / std::max(1.0, max_abs(naive));

    const bool table_ok = table_invariants_hold(prep.table, config.n_q, config.n_k) &&
                          mask.density_entries() * 1.0 / (config.n_q * config.n_k) == mask.density();

    const BoundReport bound = verify_bound(in, prep.q_model, prep.k_model, mask);

    json rec;
    rec["seed"] = seed;
    rec["c_q"] = prep.q_model.num_clusters;
    rec["c_k"] = prep.k_model.num_clusters;
    rec["policy"] = to_string(config.policy);
    rec["density"] = mask.density();
    rec["precision"] = to_string(config.precision);
    rec["checks"] = {{"executor_reference", check_json(exec_diff, exec_gate, single)},
                     {"streaming_estimator", check_json(est_diff, est_gate, true)},
                     {"table_invariants", {{"passed", table_ok}}}};
    rec["bound"] = {{"lhs_mse", bound.lhs_mse},
                    {"estimated_term", bound.estimated_term},
                    {"residual_term", bound.residual_term},
                    {"rhs", bound.rhs},
                    {"holds", bound.holds},
                    {"slack", bound.slack},
                    {"delta_sq", bound.delta_sq},
                    {"k_max", bound.k_max},
                    {"normalizer_perturbation", bound.normalizer_perturbation}};
    const bool passed = exec_diff <= exec_gate && est_diff <= est_gate && table_ok;
    rec["passed"] = passed;
    if (options.timing) rec["timing_ms"] = ms_since(t0);
    out << rec.dump() << '\n';
    all_passed = all_passed && passed;
  }
  return all_passed;
}

int harness_main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Error-aware block-sparse attention harness", "ear_harness"};
  app.require_subcommand(1);

  std::string config_path;
  std::string preset;
  std::string policy;
  std::string precision;
  std::string output;
  std::string tensor;
  std::uint64_t seed = 0;
  std::vector<double> grid;
  bool no_timing = false;
  std::size_t workers = std::max(1u, std::thread::hardware_concurrency());

  std::vector<CLI::Option*> seed_opts;
  std::vector<CLI::Option*> grid_opts;
  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "RunConfig JSON file")->check(CLI::ExistingFile);
    sub->add_option("--preset", preset, "Named configuration preset")->check(CLI::IsMember({"paper"}));
    seed_opts.push_back(sub->add_option("--seed", seed, "Run a single seed instead of the configured list"));
    sub->add_option("--policy", policy, "Routing policy");
    sub->add_option("--precision", precision, "double or single-executor");
    sub->add_option("-o,--output", output, "Output file (default stdout)");
  };

  auto* gen = app.add_subcommand("gen", "Write a synthetic blob instance as a tensor file");
  common(gen);
  gen->get_option("--output")->required();

  auto* run = app.add_subcommand("run", "Run the pipeline and print one JSON line per seed");
  auto* sweep = app.add_subcommand("sweep", "Sweep policies and densities, print CSV");
  auto* verify = app.add_subcommand("verify", "Check executor and estimator invariants and the error bound");
  for (auto* sub : {run, sweep, verify}) {
    common(sub);
    sub->add_option("tensor", tensor, "Tensor file")->required();
    sub->add_flag("--no-timing", no_timing, "Omit timing fields");
  }
  sweep->add_option("--workers", workers, "Worker threads")->check(CLI::PositiveNumber);
  grid_opts.push_back(sweep->add_option("--density-grid", grid, "Comma-separated densities")->delimiter(','));

  std::vector<std::string> argv_store{"ear_harness"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& a : argv_store) argv.push_back(a.data());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? kExitOk : kExitConfig;
  }

  try {
    RunConfig config;
    if (!config_path.empty()) {
      std::ifstream in(config_path);
      std::stringstream text;
      text << in.rdbuf();
      config.merge_json(text.str());
    }
    if (preset == "paper") config.apply_paper_preset();
    for (auto* o : seed_opts)
      if (o->count()) config.seeds = {seed};
    if (!policy.empty()) {
      config.policy = policy_from_string(policy);
      config.sweep_policies = {config.policy};
    }
    if (!precision.empty()) config.precision = precision_from_string(precision);
    for (auto* o : grid_opts)
      if (o->count()) config.density_grid = grid;
    config.validate();

    CommandOptions options{!no_timing, workers};
    std::ofstream file;
    if (!output.empty() && !gen->parsed()) {
      file.open(output);
      if (!file) throw InputError("cannot open '" + output + "' for writing");
    }
    std::ostream& sink = file.is_open() ? file : out;

    if (gen->parsed()) {
      cmd_gen(config, output);
    } else if (run->parsed()) {
      cmd_run(tensor, config, options, sink);
    } else if (sweep->parsed()) {
      cmd_sweep(tensor, config, options, sink);
    } else if (!cmd_verify(tensor, config, options, sink)) {
      err << "error: verification failed\n";
      return kExitCheckFailed;
    }
    return kExitOk;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const CapabilityError& e) {
    err << "error: " << e.what() << '\n';
    return kExitCapability;
  } catch (const InputError& e) {
    err << "error: " << e.what() << '\n';
    return kExitInput;
  } catch (const ShapeError& e) {
    err << "error: " << e.what() << '\n';
    return kExitInput;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitCheckFailed;
  }
}

}  // namespace ear
