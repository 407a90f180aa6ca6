// Copyright (c) 2026, The MaskApprox Authors
// SPDX-License-Identifier: Apache-2.0

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <optional>
#include <string>
#include <vector>

#include "maskapprox/diffusion.hpp"
#include "maskapprox/error.hpp"
#include "maskapprox/fgcf.hpp"
#include "maskapprox/metrics.hpp"
#include "maskapprox/pipeline.hpp"
#include "maskapprox/synth_data.hpp"

namespace py = pybind11;
using namespace maskapprox;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor::from(std::move(shape), std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  Array out(shape);
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

py::object to_py(const nlohmann::json& j) {
  return py::module_::import("json").attr("loads")(j.dump());
}

nlohmann::json from_py(const py::object& o) {
  return nlohmann::json::parse(py::module_::import("json").attr("dumps")(o).cast<std::string>());
}

Corpus make_corpus(const std::vector<std::string>& candidates,
                   const std::vector<std::vector<std::string>>& references) {
  if (candidates.size() != references.size()) {
    throw ContractError("got " + std::to_string(candidates.size()) + " candidates and " +
                        std::to_string(references.size()) + " reference lists");
  }
  Corpus corpus;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    TokenizedPair p{tokenize(candidates[i]), {}};
    for (const auto& r : references[i]) p.references.push_back(tokenize(r));
    corpus.push_back(std::move(p));
  }
  return corpus;
}

py::dict sample_dict(const BiTemporalSample& s) {
  py::dict d;
  d["id"] = s.id;
  d["split"] = s.split;
  d["pre"] = to_array(s.ipre);
  d["post"] = to_array(s.ipost);
  d["mask"] = to_array(s.mask);
  d["captions"] = s.captions;
  d["change_log"] = to_py(change_log_to_json(s.change_log));
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Diffusion-approximated change masks and change captioning";

  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<DimensionError>(m, "DimensionError", base.ptr());
  py::register_exception<ShapeError>(m, "ShapeError", base.ptr());
  py::register_exception<IndexError>(m, "IndexError", base.ptr());
  py::register_exception<ContractError>(m, "ContractError", base.ptr());
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<InputError>(m, "InputError", base.ptr());
  py::register_exception<DataError>(m, "DataError", base.ptr());
  py::register_exception<VocabError>(m, "VocabError", base.ptr());
  py::register_exception<NumericError>(m, "NumericError", base.ptr());

  // Metrics.
  m.def("tokenize", [](const std::string& s) { return tokenize(s); });
  m.def("stem", &stem);
  m.def(
      "bleu",
      [](const std::vector<std::string>& c, const std::vector<std::vector<std::string>>& r, int n,
         bool smooth) { return bleu_n(make_corpus(c, r), n, smooth); },
      py::arg("candidates"), py::arg("references"), py::arg("n") = 4, py::arg("smooth") = false);
  m.def(
      "rouge_l",
      [](const std::vector<std::string>& c, const std::vector<std::vector<std::string>>& r) {
        return rouge_l(make_corpus(c, r));
      },
      py::arg("candidates"), py::arg("references"));
  m.def(
      "meteor",
      [](const std::vector<std::string>& c, const std::vector<std::vector<std::string>>& r) {
        return meteor_lite(make_corpus(c, r));
      },
      py::arg("candidates"), py::arg("references"));
  m.def(
      "cider_d",
      [](const std::vector<std::string>& c, const std::vector<std::vector<std::string>>& r) {
        return cider_d(make_corpus(c, r));
      },
      py::arg("candidates"), py::arg("references"));
  m.def(
      "score",
      [](const std::vector<std::string>& c, const std::vector<std::vector<std::string>>& r) {
        return to_py(score_corpus(make_corpus(c, r)).to_json());
      },
      py::arg("candidates"), py::arg("references"), "All seven metrics as a dict.");

  // Diffusion schedule and forward process.
  m.def(
      "build_schedule",
      [](std::size_t T, double beta_start, double beta_end) {
        const auto s = build_schedule("linear", T, beta_start, beta_end);
        py::dict d;
        d["beta"] = s.beta;
        d["alpha"] = s.alpha;
        d["alpha_bar"] = s.alpha_bar;
        d["beta_tilde"] = s.beta_tilde;
        return d;
      },
      py::arg("timesteps") = 50, py::arg("beta_start") = 1e-4, py::arg("beta_end") = 0.2);
  m.def(
      "q_sample",
      [](const Array& x0, std::size_t t, const Array& eps, std::size_t T, double bs, double be) {
        return to_array(q_sample(to_tensor(x0), t, to_tensor(eps), build_schedule("linear", T, bs, be)));
      },
      py::arg("x0"), py::arg("t"), py::arg("eps"), py::arg("timesteps") = 50,
      py::arg("beta_start") = 1e-4, py::arg("beta_end") = 0.2);

  // Frequency filtering.
  m.def(
      "spectral_filter",
      [](const Array& x, const Array& weights) {
        return to_array(spectral_filter(to_tensor(x), to_tensor(weights)));
      },
      py::arg("x"), py::arg("weights"),
      "Real inverse DFT of weights * DFT(x) per channel; weights are C x H x (W/2 + 1).");
  m.def(
      "spectral_weights",
      [](const Array& filter, double alpha) {
        return to_array(spectral_weights(to_tensor(filter), alpha));
      },
      py::arg("filter"), py::arg("alpha") = 1.0);

  // Synthetic data.
  m.def("derive_seed", &derive_seed);
  m.def(
      "generate_dataset",
      [](std::uint64_t seed, std::size_t count, std::size_t size, double density) {
        DatasetConfig cfg{seed, count, size, size, density};
        py::list out;
        for (const auto& s : generate_dataset(cfg)) out.append(sample_dict(s));
        return out;
      },
      py::arg("seed") = 7, py::arg("count") = 200, py::arg("size") = 64,
      py::arg("density") = 0.5);
  m.def(
      "write_dataset",
      [](const std::filesystem::path& dir, std::uint64_t seed, std::size_t count, std::size_t size,
         double density) {
        write_dataset(generate_dataset({seed, count, size, size, density}), dir);
      },
      py::arg("dir"), py::arg("seed") = 7, py::arg("count") = 200, py::arg("size") = 64,
      py::arg("density") = 0.5);
  m.def(
      "read_dataset",
      [](const std::filesystem::path& dir) {
        py::list out;
        for (const auto& s : read_dataset(dir)) out.append(sample_dict(s));
        return out;
      },
      py::arg("dir"));
  m.def("parse_caption", [](const std::string& caption) -> py::object {
    const auto log = parse_caption(caption);
    return log ? to_py(change_log_to_json(*log)) : py::none();
  });

  // Pipeline.
  m.def("default_config", [] { return to_py(RunConfig{}.to_json()); });
  m.def(
      "train",
      [](const py::dict& config, const std::filesystem::path& data,
         const std::filesystem::path& out) {
        const RunConfig c = RunConfig::from_json(from_py(config));
        c.validate();
        TrainResult r;
        {
          py::gil_scoped_release release;
          r = train_model(c, data, out);
        }
        py::list epochs;
        for (const auto& e : r.epochs) epochs.append(to_py(e.to_json()));
        return py::make_tuple(epochs, r.checkpoint);
      },
      py::arg("config"), py::arg("data"), py::arg("out"),
      "Returns (epoch logs, checkpoint path).");
  m.def(
      "caption",
      [](const std::filesystem::path& checkpoint, const std::filesystem::path& data,
         const std::string& split, const std::filesystem::path& out, std::uint64_t seed) {
        std::vector<CaptionRecord> recs;
        {
          py::gil_scoped_release release;
          recs = caption_split(checkpoint, data, split, out, seed);
        }
        py::list rows;
        for (const auto& r : recs) {
          py::dict d;
          d["id"] = r.id;
          d["candidate"] = r.candidate;
          d["references"] = r.references;
          rows.append(d);
        }
        return rows;
      },
      py::arg("checkpoint"), py::arg("data"), py::arg("split") = "test", py::arg("out"),
      py::arg("seed") = 7);
  m.def(
      "evaluate",
      [](const std::filesystem::path& cands, const std::optional<std::filesystem::path>& refs,
         const std::filesystem::path& out, std::uint64_t seed) {
        return to_py(evaluate_captions(cands, refs.value_or(""), out, seed).to_json());
      },
      py::arg("cands"), py::arg("refs") = py::none(), py::arg("out"),
      py::arg("seed") = 7);
  m.def(
      "filter_demo",
      [](std::uint64_t seed, const std::filesystem::path& out) {
        return to_py(filter_demo(seed, out).to_json());
      },
      py::arg("seed") = 7, py::arg("out"));
}
