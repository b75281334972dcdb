// Copyright (c) 2026 The EAR Attention Authors.
// SPDX-License-Identifier: Apache-2.0

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "ear/analysis.hpp"
#include "ear/error.hpp"
#include "ear/harness.hpp"
#include "ear/run_config.hpp"
#include "ear/tensor_file.hpp"

namespace py = pybind11;
using namespace ear;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;
using IndexArray = py::array_t<std::int64_t, py::array::c_style | py::array::forcecast>;

Matrix to_matrix(const Array& a, const char* name) {
  if (a.ndim() != 2) throw ShapeError(std::string(name) + " must be a 2-D array");
  const auto rows = static_cast<std::size_t>(a.shape(0));
  const auto cols = static_cast<std::size_t>(a.shape(1));
  return Matrix(rows, cols, std::vector<double>(a.data(), a.data() + rows * cols));
}

Array to_array(const Matrix& m) {
  Array out({m.rows(), m.cols()});
  std::copy(m.data().begin(), m.data().end(), out.mutable_data());
  return out;
}

Array to_array(const std::vector<double>& v) {
  Array out(static_cast<py::ssize_t>(v.size()));
  std::copy(v.begin(), v.end(), out.mutable_data());
  return out;
}

std::vector<std::size_t> to_labels(const IndexArray& a, const char* name) {
  if (a.ndim() != 1) throw ShapeError(std::string(name) + " must be a 1-D array");
  std::vector<std::size_t> out(static_cast<std::size_t>(a.shape(0)));
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (a.data()[i] < 0) throw ConfigError(std::string(name) + " contains a negative cluster index");
    out[i] = static_cast<std::size_t>(a.data()[i]);
  }
  return out;
}

std::size_t count_of(const std::vector<std::size_t>& labels) {
  return labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end()) + 1;
}

py::array_t<bool> mask_array(const BlockMask& mask) {
  py::array_t<bool> out({mask.q_clusters(), mask.k_clusters()});
  auto w = out.mutable_unchecked<2>();
  for (std::size_t qc = 0; qc < mask.q_clusters(); ++qc)
    for (std::size_t kc = 0; kc < mask.k_clusters(); ++kc) w(qc, kc) = mask.selected(qc, kc);
  return out;
}

BlockMask mask_from(const py::array_t<bool, py::array::c_style | py::array::forcecast>& m, BlockLayout layout) {
  if (m.ndim() != 2 || static_cast<std::size_t>(m.shape(0)) != layout.q_sizes.size() ||
      static_cast<std::size_t>(m.shape(1)) != layout.k_sizes.size())
    throw ShapeError("mask must have shape (query clusters, key clusters)");
  std::vector<std::uint8_t> bits(m.data(), m.data() + m.size());
  return BlockMask(std::move(layout), std::move(bits));
}

py::dict flops_dict(const FlopCounters& f) {
  py::dict d;
  d["exact_block"] = f.exact_block;
  d["compensation"] = f.compensation;
  d["estimation"] = f.estimation;
  d["clustering"] = f.clustering;
  d["total"] = f.total();
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Error-aware block-sparse attention with centroid compensation";

  auto base = py::register_exception<Error>(m, "EarError", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<InputError>(m, "InputError", base.ptr());
  py::register_exception<ShapeError>(m, "ShapeError", base.ptr());
  py::register_exception<CapabilityError>(m, "CapabilityError", base.ptr());

  m.def(
      "full_attention",
      [](const Array& q, const Array& k, const Array& v) {
        const FullAttention f = full_attention(to_matrix(q, "q"), to_matrix(k, "k"), to_matrix(v, "v"));
        return py::make_tuple(to_array(f.output), to_array(f.map.probs));
      },
      py::arg("q"), py::arg("k"), py::arg("v"), "Dense softmax attention. Returns (output, probabilities).");

  m.def(
      "kmeans",
      [](const Array& tokens, std::size_t clusters, std::uint64_t seed, std::size_t iters, std::size_t restarts) {
        const ClusterModel cm = kmeans_best_of(to_matrix(tokens, "tokens"), clusters, restarts, {iters, seed});
        IndexArray labels(static_cast<py::ssize_t>(cm.assignments.size()));
        std::copy(cm.assignments.begin(), cm.assignments.end(), labels.mutable_data());
        return py::make_tuple(labels, to_array(cm.centroids));
      },
      py::arg("tokens"), py::arg("clusters"), py::arg("seed") = 0, py::arg("iters") = 25, py::arg("restarts") = 1,
      "k-means++ clustering. Returns (assignments, centroids).");

  m.def(
      "estimate_errors",
      [](const Array& q, const Array& k, const Array& v, const IndexArray& qa, const IndexArray& ka,
         const std::string& mode) {
        const Matrix qm_ = to_matrix(q, "q"), km_ = to_matrix(k, "k");
        const auto ql = to_labels(qa, "q_assignments"), kl = to_labels(ka, "k_assignments");
        const auto qm = ClusterModel::from_assignments(qm_, ql, count_of(ql));
        const auto km = ClusterModel::from_assignments(km_, kl, count_of(kl));
        const BlockErrorTable t = estimator_mode_from_string(mode) == EstimatorMode::kPlain
                                      ? estimate_errors(qm, km, km_)
                                      : estimate_errors_streaming(qm, km, km_, to_matrix(v, "v"));
        return to_array(t.error_sum);
      },
      py::arg("q"), py::arg("k"), py::arg("v"), py::arg("q_assignments"), py::arg("k_assignments"),
      py::arg("mode") = "valueAware", "Estimated compensation error per (query cluster, key cluster) block.");

  m.def(
      "sparse_attention",
      [](const Array& q, const Array& k, const Array& v, const IndexArray& qa, const IndexArray& ka,
         const py::array_t<bool, py::array::c_style | py::array::forcecast>& mask, const std::string& precision) {
        const Matrix qm_ = to_matrix(q, "q"), km_ = to_matrix(k, "k");
        const auto ql = to_labels(qa, "q_assignments"), kl = to_labels(ka, "k_assignments");
        const auto qm = ClusterModel::from_assignments(qm_, ql, count_of(ql));
        const auto km = ClusterModel::from_assignments(km_, kl, count_of(kl));
        const BlockMask bm = mask_from(mask, BlockLayout::from_models(qm, km));
        const AttentionResult r =
            sparse_attend(qm_, km_, to_matrix(v, "v"), qm, km, bm, {precision_from_string(precision)});
        return py::make_tuple(to_array(r.output), to_array(r.lse), flops_dict(r.flops));
      },
      py::arg("q"), py::arg("k"), py::arg("v"), py::arg("q_assignments"), py::arg("k_assignments"), py::arg("mask"),
      py::arg("precision") = "double",
      "Exact attention on selected blocks, centroid compensation elsewhere. Returns (output, lse, flops).");

  m.def(
      "run_pipeline",
      [](const Array& q, const Array& k, const Array& v, const std::string& config_json, std::uint64_t seed) {
        RunConfig cfg;
        const Instance in{to_matrix(q, "q"), to_matrix(k, "k"), to_matrix(v, "v")};
        if (!config_json.empty()) cfg.merge_json(config_json);
        // Array shapes take precedence over any sizes in the config.
        cfg.n_q = in.q.rows();
        cfg.n_k = in.k.rows();
        cfg.d = in.q.cols();
        cfg.validate();
        const PipelineOptions opts = cfg.pipeline();
        const Prepared prep = prepare(in, opts, seed);
        const PolicyOutcome out = run_policy(in, prep, cfg.policy, cfg.budget(), opts, seed);
        py::dict d;
        d["output"] = to_array(out.result.output);
        d["mask"] = mask_array(out.mask);
        d["density"] = out.mask.density();
        d["relaxed_objective"] = relaxed_objective(prep.table, out.mask);
        d["flops"] = flops_dict(out.result.flops);
        d["c_q"] = prep.q_model.num_clusters;
        d["c_k"] = prep.k_model.num_clusters;
        return d;
      },
      py::arg("q"), py::arg("k"), py::arg("v"), py::arg("config_json") = "", py::arg("seed") = 0,
      "Cluster, estimate, route and execute with a JSON run configuration.");

  m.def(
      "write_tensor_file",
      [](const std::string& path, const Array& q, const Array& k, const Array& v, const std::string& dtype) {
        write_tensor_file(path, {to_matrix(q, "q"), to_matrix(k, "k"), to_matrix(v, "v")}, dtype_from_string(dtype));
      },
      py::arg("path"), py::arg("q"), py::arg("k"), py::arg("v"), py::arg("dtype") = "float64");

  m.def(
      "read_tensor_file",
      [](const std::string& path) {
        const TensorBundle b = read_tensor_file(path);
        return py::make_tuple(to_array(b.instance.q), to_array(b.instance.k), to_array(b.instance.v),
                              to_string(b.dtype));
      },
      py::arg("path"), "Returns (q, k, v, dtype).");

  m.def(
      "harness",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        const int code = harness_main(args, out, err);
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Runs the command line harness in-process. Returns (exit_code, stdout, stderr).");
}
