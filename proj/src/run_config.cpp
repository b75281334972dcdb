// Copyright (c) 2026 The EAR Attention Authors.
// SPDX-License-Identifier: Apache-2.0

#include "ear/run_config.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>

#include "ear/error.hpp"
#include "json.hpp"

namespace ear {
namespace {

using nlohmann::json;

struct FieldErrors {
  std::vector<std::string> items;
  void add(const std::string& field, const std::string& msg) { items.push_back(field + ": " + msg); }
  void raise_if_any(const std::string& prefix) const {
    if (items.empty()) return;
    std::string text = prefix;
    for (std::size_t i = 0; i < items.size(); ++i) text += (i ? "; " : "") + items[i];
    throw ConfigError(text);
  }
};

std::size_t as_count(const json& v) {
  if (!v.is_number_integer() && !v.is_number_unsigned()) throw ConfigError("expected an integer");
  if (v.is_number_integer() && v.get<std::int64_t>() < 0) throw ConfigError("must be >= 0");
  return v.get<std::size_t>();
}

double as_real(const json& v) {
  if (!v.is_number()) throw ConfigError("expected a number");
  return v.get<double>();
}

std::string as_text(const json& v) {
  if (!v.is_string()) throw ConfigError("expected a string");
  return v.get<std::string>();
}

template <typename T, typename F>
std::vector<T> as_list(const json& v, F&& item) {
  if (!v.is_array()) throw ConfigError("expected an array");
  std::vector<T> out;
  for (const auto& x : v) out.push_back(item(x));
  return out;
}

}  // namespace

std::string to_string(DType dtype) { return dtype == DType::kFloat64 ? "float64" : "float32"; }

DType dtype_from_string(const std::string& name) {
  if (name == "float64") return DType::kFloat64;
  if (name == "float32") return DType::kFloat32;
  throw ConfigError("unknown dtype '" + name + "' (expected float64 or float32)");
}

std::size_t default_q_clusters(std::size_t n_q) { return std::min(n_q, std::max<std::size_t>(4, n_q / 12)); }

std::size_t default_k_clusters(std::size_t n_k) {
  const auto scaled = static_cast<std::size_t>(std::floor(static_cast<double>(n_k) / 3.6));
  return std::min(n_k, std::max<std::size_t>(8, scaled));
}

void RunConfig::merge_json(const std::string& json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!doc.is_object()) throw ConfigError("config must be a JSON object");

  using Setter = std::function<void(const json&)>;
  const std::map<std::string, Setter> setters{
      {"nQ", [&](const json& v) { n_q = as_count(v); }},
      {"nK", [&](const json& v) { n_k = as_count(v); }},
      {"d", [&](const json& v) { d = as_count(v); }},
      {"cQ", [&](const json& v) { c_q = as_count(v); }},
      {"cK", [&](const json& v) { c_k = as_count(v); }},
      {"budgetMode", [&](const json& v) { budget_mode = budget_mode_from_string(as_text(v)); }},
      {"rho", [&](const json& v) { rho = as_real(v); }},
      {"p", [&](const json& v) { p = as_real(v); }},
      {"estimatorMode", [&](const json& v) { estimator_mode = estimator_mode_from_string(as_text(v)); }},
      {"policy", [&](const json& v) { policy = policy_from_string(as_text(v)); }},
      {"seeds", [&](const json& v) {
         seeds = as_list<std::uint64_t>(v, [](const json& x) { return static_cast<std::uint64_t>(as_count(x)); });
       }},
      {"precision", [&](const json& v) { precision = precision_from_string(as_text(v)); }},
      {"kmeansRestarts", [&](const json& v) { kmeans_restarts = as_count(v); }},
      {"kmeansIters", [&](const json& v) { kmeans_iters = as_count(v); }},
      {"tileSize", [&](const json& v) { tile_size = as_count(v); }},
      {"qBlobs", [&](const json& v) { q_blobs = as_count(v); }},
      {"kBlobs", [&](const json& v) { k_blobs = as_count(v); }},
      {"sigma", [&](const json& v) { sigma = as_real(v); }},
      {"centerScale", [&](const json& v) { center_scale = as_real(v); }},
      {"dtype", [&](const json& v) { dtype = dtype_from_string(as_text(v)); }},
      {"densityGrid", [&](const json& v) { density_grid = as_list<double>(v, as_real); }},
      {"sweepPolicies", [&](const json& v) {
         sweep_policies = as_list<Policy>(v, [](const json& x) { return policy_from_string(as_text(x)); });
       }},
      {"oracleMaxBlocks", [&](const json& v) { oracle_max_blocks = as_count(v); }},
      {"oracleMaxCapacity", [&](const json& v) { oracle_max_capacity = static_cast<std::int64_t>(as_count(v)); }},
      {"oracleMaxEntries", [&](const json& v) { oracle_max_entries = as_count(v); }},
  };

  FieldErrors errors;
  for (const auto& [key, value] : doc.items()) {
    const auto it = setters.find(key);
    if (it == setters.end()) {
      errors.add(key, "unknown field");
      continue;
    }
    try {
      it->second(value);
    } catch (const ConfigError& e) {
      errors.add(key, e.what());
    } catch (const json::exception& e) {
      errors.add(key, e.what());
    }
  }
  errors.raise_if_any("invalid config: ");
}

void RunConfig::apply_paper_preset() {
  budget_mode = BudgetMode::kPerClusterTopP;
  p = 0.85;
  estimator_mode = EstimatorMode::kValueAware;
  policy = Policy::kErrorAwareCompensated;
  c_q.reset();
  c_k.reset();
}

void RunConfig::validate() const {
  FieldErrors errors;
  const std::pair<const char*, std::size_t> counts[] = {{"nQ", n_q},
                                                        {"nK", n_k},
                                                        {"d", d},
                                                        {"kmeansRestarts", kmeans_restarts},
                                                        {"kmeansIters", kmeans_iters},
                                                        {"tileSize", tile_size},
                                                        {"qBlobs", q_blobs},
                                                        {"kBlobs", k_blobs}};
  for (const auto& [name, value] : counts)
    if (value < 1) errors.add(name, "must be >= 1");
  if (c_q && *c_q < 1) errors.add("cQ", "must be >= 1");
  if (c_q && *c_q > n_q) errors.add("cQ", "must be <= nQ (" + std::to_string(*c_q) + " > " + std::to_string(n_q) + ")");
  if (c_k && *c_k < 1) errors.add("cK", "must be >= 1");
  if (c_k && *c_k > n_k) errors.add("cK", "must be <= nK (" + std::to_string(*c_k) + " > " + std::to_string(n_k) + ")");
  if (!(rho >= 0.0 && rho <= 1.0)) errors.add("rho", "must lie in [0, 1]");
  if (!(p > 0.0 && p <= 1.0)) errors.add("p", "must lie in (0, 1]");
  if (seeds.empty()) errors.add("seeds", "must list at least one seed");
  if (!(sigma >= 0.0 && std::isfinite(sigma))) errors.add("sigma", "must be finite and >= 0");
  if (!(center_scale >= 0.0 && std::isfinite(center_scale))) errors.add("centerScale", "must be finite and >= 0");
  for (double x : density_grid)
    if (!(x >= 0.0 && x <= 1.0)) errors.add("densityGrid", "values must lie in [0, 1]");
  if (sweep_policies.empty()) errors.add("sweepPolicies", "must list at least one policy");
  errors.raise_if_any("invalid config: ");
}

std::size_t RunConfig::resolved_c_q() const { return c_q.value_or(default_q_clusters(n_q)); }
std::size_t RunConfig::resolved_c_k() const { return c_k.value_or(default_k_clusters(n_k)); }

DensityBudget RunConfig::budget() const {
  return budget_mode == BudgetMode::kGlobalDensity ? DensityBudget::global(rho) : DensityBudget::per_cluster_top_p(p);
}

PipelineOptions RunConfig::pipeline() const {
  PipelineOptions o;
  o.q_clusters = resolved_c_q();
  o.k_clusters = resolved_c_k();
  o.kmeans_restarts = kmeans_restarts;
  o.kmeans_iters = kmeans_iters;
  o.estimator = estimator_mode;
  o.tile_size = tile_size;
  o.precision = precision;
  o.budget = budget();
  o.knapsack.max_exhaustive_blocks = oracle_max_blocks;
  o.knapsack.max_dp_capacity = oracle_max_capacity;
  return o;
}

BlobSpec RunConfig::blob_spec(std::uint64_t seed) const {
  BlobSpec s;
  s.n_q = n_q;
  s.n_k = n_k;
  s.d = d;
  s.q_blobs = q_blobs;
  s.k_blobs = k_blobs;
  s.sigma = sigma;
  s.center_scale = center_scale;
  s.seed = seed;
  return s;
}

std::string RunConfig::to_json() const {
  json j;
  j["nQ"] = n_q;
  j["nK"] = n_k;
  j["d"] = d;
  j["cQ"] = resolved_c_q();
  j["cK"] = resolved_c_k();
  j["budgetMode"] = to_string(budget_mode);
  j["rho"] = rho;
  j["p"] = p;
  j["estimatorMode"] = to_string(estimator_mode);
  j["policy"] = to_string(policy);
  j["seeds"] = seeds;
  j["precision"] = to_string(precision);
  j["kmeansRestarts"] = kmeans_restarts;
  j["kmeansIters"] = kmeans_iters;
  j["tileSize"] = tile_size;
  j["qBlobs"] = q_blobs;
  j["kBlobs"] = k_blobs;
  j["sigma"] = sigma;
  j["centerScale"] = center_scale;
  j["dtype"] = to_string(dtype);
  j["densityGrid"] = density_grid;
  std::vector<std::string> names;
  for (Policy pol : sweep_policies) names.push_back(to_string(pol));
  j["sweepPolicies"] = names;
  j["oracleMaxBlocks"] = oracle_max_blocks;
  j["oracleMaxCapacity"] = oracle_max_capacity;
  j["oracleMaxEntries"] = oracle_max_entries;
  return j.dump();
}

}  // namespace ear
