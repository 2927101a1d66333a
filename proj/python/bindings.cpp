#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "villa/pipeline.hpp"

namespace py = pybind11;
using namespace villa;

namespace {

py::array_t<std::uint8_t> image_array(const Image& img) {
  py::array_t<std::uint8_t> out({img.height, img.width, 3});
  std::copy(img.rgb.begin(), img.rgb.end(), out.mutable_data());
  return out;
}

Image image_from(py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast> a) {
  if (a.ndim() != 3 || a.shape(2) != 3) throw Error(ErrorKind::ShapeMismatch, "expected an H x W x 3 uint8 array");
  Image img;
  img.height = static_cast<int>(a.shape(0));
  img.width = static_cast<int>(a.shape(1));
  img.rgb.assign(a.data(), a.data() + a.size());
  return img;
}

std::vector<VlmVariant> variants_from(const std::vector<std::string>& names) {
  std::vector<VlmVariant> out;
  for (const auto& n : names) out.push_back(vlm_variant_from_string(n));
  return out;
}

}  // namespace

PYBIND11_MODULE(_villa, m) {
  m.doc() = "DocMNIST generation, region-attribute mapping and VLM evaluation";

  py::register_exception<Error>(m, "VillaError", PyExc_RuntimeError);

  py::class_<Sample>(m, "Sample")
      .def_property_readonly("image", [](const Sample& s) { return image_array(s.image); })
      .def_readonly("text", &Sample::text)
      .def_readonly("sentences", &Sample::sentences)
      .def_readonly("gt_pairs", &Sample::gt_pairs)
      .def_readonly("complexity", &Sample::complexity_m)
      .def("regions", &Sample::regions);

  py::class_<Dataset>(m, "Dataset")
      .def("__len__", [](const Dataset& d) { return d.samples.size(); })
      .def("__getitem__",
           [](const Dataset& d, std::size_t i) {
             if (i >= d.samples.size()) throw py::index_error();
             return d.samples[i];
           })
      .def_readonly("realized_s", &Dataset::realized_s)
      .def("total_pairs", &Dataset::total_pairs);

  m.def(
      "generate",
      [](double c, long b, std::uint64_t seed, int threads) {
        GenConfig cfg;
        cfg.c = c;
        cfg.b = b;
        cfg.seed = seed;
        return generate_dataset(cfg, AttributeCatalog::docmnist(), resolve_threads(threads));
      },
      py::arg("c") = 29.4, py::arg("b") = 10000, py::arg("seed") = 7, py::arg("threads") = 0);
  m.def("complexity_score", &complexity_score);
  m.def("save_dataset", &save_dataset, py::arg("dataset"), py::arg("dir"), py::arg("config_hash") = "");
  m.def("load_dataset", [](const std::filesystem::path& dir) { return load_dataset(dir); });
  m.def("attribute_names", [] {
    std::vector<std::string> out;
    const auto cat = AttributeCatalog::docmnist();
    for (std::size_t k = 0; k < cat.size(); ++k) out.push_back(cat.at(static_cast<AttrId>(k)).name);
    return out;
  });

  m.def(
      "encode_region", [](py::array_t<std::uint8_t> a, int d) {
        EncoderConfig enc;
        enc.d = d;
        return encode_region(image_from(a), enc).values;
      },
      py::arg("region"), py::arg("d") = 64);
  m.def(
      "encode_sentence", [](const std::string& s, int d) {
        EncoderConfig enc;
        enc.d = d;
        return encode_sentence(s, enc).values;
      },
      py::arg("sentence"), py::arg("d") = 64);

  m.def("precision_at_k", &precision_at_k);
  m.def("r_precision", &r_precision_t2r);
  m.def("region_to_text", [](const Vec& scores, const std::vector<AttrId>& gt) {
    return region_to_text(scores, AttributeCatalog::docmnist(), gt);
  });
  m.def("mapping_quality", [](const std::vector<std::tuple<std::size_t, int, AttrId>>& generated,
                              const std::vector<std::tuple<std::size_t, int, AttrId>>& gt) {
    const auto keys = [](const auto& v) {
      std::vector<PairKey> out;
      for (const auto& [s, r, a] : v) out.push_back({s, r, a});
      return out;
    };
    const auto q = mapping_quality(keys(generated), keys(gt));
    return py::make_tuple(q.precision, q.recall, q.f1);
  });
  m.def("assign_attribute", &assign_attribute, py::arg("scores"), py::arg("epsilon"));
  m.def("bidir_contrastive_loss", &bidir_contrastive_loss, py::arg("image_embs"), py::arg("text_embs"),
        py::arg("tau") = 0.07, py::arg("groups") = std::vector<long>{});

  py::class_<RunConfig>(m, "RunConfig")
      .def(py::init<>())
      .def_static("parse", py::overload_cast<const std::string&>(&RunConfig::parse))
      .def("set", &RunConfig::set)
      .def("serialize", &RunConfig::serialize)
      .def("to_dict", &RunConfig::to_map)
      .def("data_hash", &RunConfig::data_hash);

  m.def("variants", [] {
    std::vector<std::string> out;
    for (auto v : kAllVariants) out.push_back(to_string(v));
    return out;
  });

  // Pipeline stages over a run directory; these mirror the CLI subcommands.
  m.def("init_run", [](const std::filesystem::path& dir, const RunConfig& cfg) { init_run({dir}, cfg); });
  m.def("load_run_config", [](const std::filesystem::path& dir) { return load_run_config({dir}); });
  m.def(
      "generate_run", [](const std::filesystem::path& dir, const RunConfig& cfg, int threads) {
        stage_generate({dir}, cfg, resolve_threads(threads));
      },
      py::arg("dir"), py::arg("config"), py::arg("threads") = 0);
  m.def(
      "train_map", [](const std::filesystem::path& dir, const RunConfig& cfg, int threads) {
        stage_train_map({dir}, cfg, resolve_threads(threads));
      },
      py::arg("dir"), py::arg("config"), py::arg("threads") = 0);
  m.def(
      "assign", [](const std::filesystem::path& dir, const RunConfig& cfg, int threads) {
        stage_assign({dir}, cfg, resolve_threads(threads));
      },
      py::arg("dir"), py::arg("config"), py::arg("threads") = 0);
  m.def(
      "train_vlm",
      [](const std::filesystem::path& dir, const RunConfig& cfg, const std::vector<std::string>& variants, int threads) {
        stage_train_vlm({dir}, cfg, variants_from(variants), resolve_threads(threads));
      },
      py::arg("dir"), py::arg("config"), py::arg("variants"), py::arg("threads") = 0);
  m.def(
      "evaluate",
      [](const std::filesystem::path& dir, const RunConfig& cfg, const std::vector<std::string>& variants, int threads) {
        return stage_evaluate({dir}, cfg, variants_from(variants), resolve_threads(threads)).to_csv();
      },
      py::arg("dir"), py::arg("config"), py::arg("variants"), py::arg("threads") = 0);
  m.def("report", [](const std::filesystem::path& dir) { return stage_report({dir}); });
  m.def(
      "sweep",
      [](const RunConfig& cfg, const std::vector<double>& cs, const std::string& variant, int threads) {
        std::vector<std::tuple<double, double, double>> out;
        for (const auto& r : sweep_complexity(cfg, cs, vlm_variant_from_string(variant), resolve_threads(threads)))
          out.emplace_back(r.c, r.t2r_rprec, r.r2t_rprec);
        return out;
      },
      py::arg("config"), py::arg("cs"), py::arg("variant") = "ft_img", py::arg("threads") = 0);
}
