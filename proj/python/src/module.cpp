#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "json.hpp"
#include "painexpr/commands.hpp"
#include "painexpr/errors.hpp"
#include "painexpr/forcing.hpp"
#include "painexpr/metrics.hpp"

namespace py = pybind11;
using namespace painexpr;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

LatentSequence to_sequence(const Array& a) {
  if (a.ndim() != 2) throw ConfigError("expected a [frames, dim] array");
  const auto frames = static_cast<int>(a.shape(0)), dim = static_cast<int>(a.shape(1));
  return LatentSequence(frames, dim, std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const LatentSequence& x) {
  Array out({x.frames(), x.dim()});
  std::copy(x.data().begin(), x.data().end(), out.mutable_data());
  return out;
}

std::vector<double> to_vector(const Array& a) { return {a.data(), a.data() + a.size()}; }

RunConfig make_config(const std::optional<std::string>& path, const std::map<std::string, std::string>& overrides) {
  RunConfig cfg = path ? RunConfig::load(*path) : RunConfig{};
  for (const auto& [k, v] : overrides) cfg.set(k, v);
  cfg.check_known_keys();
  return cfg;
}

py::list reports_to_list(const std::vector<MetricsReport>& reports) {
  py::list out;
  const auto loads = py::module_::import("json").attr("loads");
  for (const auto& r : reports) out.append(loads(r.to_json()));
  return out;
}

}  // namespace

PYBIND11_MODULE(_painexpr, m) {
  m.doc() = "Latent pain-expression sequence generation";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<DataError>(m, "DataError", PyExc_RuntimeError);
  py::register_exception<NumericFault>(m, "NumericFault", PyExc_ArithmeticError);

  m.def("dtw", [](const Array& a, const Array& b) { return dtw(to_vector(a), to_vector(b)); }, py::arg("a"),
        py::arg("b"), "Dynamic time warping cost with |a - b| local cost");
  m.def("pain_dist", [](const Array& gen, const Array& gt) { return pain_dist(to_sequence(gen), to_sequence(gt)); });
  m.def("pain_var", [](const Array& gen) { return pain_var(to_sequence(gen)); });
  m.def("pain_divrs", [](const std::vector<Array>& samples) {
    std::vector<LatentSequence> seqs;
    for (const auto& s : samples) seqs.push_back(to_sequence(s));
    return pain_divrs(seqs);
  });

  m.def(
      "karras_grid",
      [](int steps, double sigma_min, double sigma_max, double rho) {
        EdmParams p;
        p.sigma_min = sigma_min;
        p.sigma_max = sigma_max;
        p.rho = rho;
        return karras_grid(steps, p).levels;
      },
      py::arg("steps"), py::arg("sigma_min") = 0.002, py::arg("sigma_max") = 80.0, py::arg("rho") = 7.0,
      "Noise levels from sigma_max down to sigma_min, then 0");
  m.def(
      "precondition",
      [](double sigma, double sigma_data) {
        EdmParams p;
        p.sigma_data = sigma_data;
        const Precond c = precondition_coeffs(sigma, p);
        return py::dict(py::arg("c_skip") = c.c_skip, py::arg("c_out") = c.c_out, py::arg("c_in") = c.c_in,
                        py::arg("c_noise") = c.c_noise);
      },
      py::arg("sigma"), py::arg("sigma_data") = 0.5);
  m.def(
      "scheduling_matrix",
      [](int window, int horizon, int levels, double uncertainty) {
        const SchedulingMatrix s = build_scheduling_matrix(window, horizon, levels, uncertainty);
        py::array_t<int> out({s.sweeps(), s.width()});
        std::copy(s.entries().begin(), s.entries().end(), out.mutable_data());
        return out;
      },
      py::arg("window"), py::arg("horizon"), py::arg("levels"), py::arg("uncertainty") = 1.0,
      "Noise-level index per sweep (rows) and window step (columns)");

  m.def("read_sequence", [](const std::filesystem::path& p) { return to_array(read_sequence_file(p, 0, 25.0)); });

  using Overrides = std::map<std::string, std::string>;
  m.def(
      "datagen",
      [](const std::filesystem::path& out, std::optional<std::string> config, const Overrides& overrides) {
        return static_cast<int>(cmd_datagen(make_config(config, overrides), out).sequences.size());
      },
      py::arg("out"), py::arg("config") = py::none(), py::arg("overrides") = Overrides{},
      "Writes a synthetic dataset; returns the number of sequences");
  m.def(
      "train",
      [](const std::filesystem::path& data, const std::filesystem::path& checkpoint, std::optional<std::string> config,
         const Overrides& overrides, std::optional<std::filesystem::path> resume) {
        py::gil_scoped_release release;
        return cmd_train(make_config(config, overrides), TrainArgs{data, checkpoint, std::nullopt, resume}).step;
      },
      py::arg("data"), py::arg("checkpoint"), py::arg("config") = py::none(), py::arg("overrides") = Overrides{},
      py::arg("resume") = py::none(), "Trains and writes a checkpoint; returns the final step");
  m.def(
      "generate",
      [](const std::filesystem::path& checkpoint, const std::filesystem::path& data, const std::filesystem::path& out,
         int sequence, std::optional<std::string> config, const Overrides& overrides) {
        GenerateArgs g;
        g.checkpoint = checkpoint;
        g.data_dir = data;
        g.out_dir = out;
        g.sequence = sequence;
        std::vector<LatentSequence> gen;
        {
          py::gil_scoped_release release;
          gen = cmd_generate(make_config(config, overrides), g);
        }
        py::list arrays;
        for (const auto& x : gen) arrays.append(to_array(x));
        return arrays;
      },
      py::arg("checkpoint"), py::arg("data"), py::arg("out"), py::arg("sequence"), py::arg("config") = py::none(),
      py::arg("overrides") = Overrides{}, "Raw latents ([frames, dim] arrays) for one dataset sequence");
  m.def(
      "evaluate",
      [](const std::filesystem::path& data, const std::filesystem::path& out,
         std::optional<std::filesystem::path> checkpoint, std::optional<std::string> config, const Overrides& overrides) {
        std::vector<MetricsReport> reports;
        {
          py::gil_scoped_release release;
          reports = cmd_evaluate(make_config(config, overrides), EvaluateArgs{checkpoint, data, out});
        }
        return reports_to_list(reports);
      },
      py::arg("data"), py::arg("out"), py::arg("checkpoint") = py::none(), py::arg("config") = py::none(),
      py::arg("overrides") = Overrides{}, "Metric rows as dictionaries");
}
