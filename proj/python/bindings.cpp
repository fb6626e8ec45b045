#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <nlohmann/json.hpp>

#include "hvsobs/error.hpp"
#include "hvsobs/hvs.hpp"
#include "hvsobs/observer.hpp"
#include "hvsobs/runner.hpp"
#include "hvsobs/spectral.hpp"
#include "hvsobs/synth.hpp"

namespace py = pybind11;
using namespace hvsobs;

namespace {

// Arrays are (nz, ny, nx), C order, matching the on-disk voxel layout.
using F32 = py::array_t<float, py::array::c_style | py::array::forcecast>;
using F64 = py::array_t<double, py::array::c_style | py::array::forcecast>;
using C128 = py::array_t<std::complex<double>, py::array::c_style | py::array::forcecast>;

Dims dims_of(const py::buffer_info& b) {
  if (b.ndim != 3) throw Error(ErrorCode::invalid_argument, "expected a 3-D array shaped (nz, ny, nx)");
  return {static_cast<std::size_t>(b.shape[2]), static_cast<std::size_t>(b.shape[1]),
          static_cast<std::size_t>(b.shape[0])};
}

template <class T>
py::array_t<T> to_array(const Dims& d, const std::vector<T>& data) {
  py::array_t<T> out({d.nz, d.ny, d.nx});
  std::copy(data.begin(), data.end(), out.mutable_data());
  return out;
}

Volume volume_from(const F64& a) {
  const auto b = a.request();
  Volume v(dims_of(b));
  std::copy(a.data(), a.data() + v.data.size(), v.data.begin());
  return v;
}

ImageStack stack_from(const F32& a, const std::string& id) {
  const auto b = a.request();
  ImageStack s;
  s.dims = dims_of(b);
  s.voxels.assign(a.data(), a.data() + s.dims.size());
  s.id = id;
  return s;
}

ViewingConfig viewing_from(const py::dict& d) {
  ViewingConfig v;
  if (!d.empty()) from_json(nlohmann::json::parse(py::str(py::module_::import("json").attr("dumps")(d)).cast<std::string>()), v);
  return v;
}

HvsConfig hvs_from(const std::string& method, bool masking, double k, const std::string& mn_semantics,
                   std::uint64_t mc_seed) {
  HvsConfig c;
  c.method = parse_method(method);
  c.masking = masking;
  c.k = k;
  if (mn_semantics != "amplitude" && mn_semantics != "power")
    throw Error(ErrorCode::invalid_argument, "mn_semantics must be 'amplitude' or 'power'");
  c.mn_semantics = mn_semantics == "power" ? MnSemantics::power : MnSemantics::amplitude;
  c.mc_seed = mc_seed;
  return c;
}

py::dict row_dict(const ResultRow& r) {
  py::dict d;
  d["model"] = r.model;
  d["method"] = r.method;
  d["complexity"] = r.complexity;
  d["auc"] = r.auc;
  d["ci_low"] = r.ci_low;
  d["ci_high"] = r.ci_high;
  d["n_train"] = r.n_train;
  d["n_test"] = r.n_test;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "HVS-modeled numerical observer: synthesis, perception, observer and experiment runner";

  static py::exception<Error> error(m, "HvsobsError", PyExc_RuntimeError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      PyErr_SetObject(error.ptr(), py::make_tuple(std::string(to_string(e.code())), e.what()).ptr());
    }
  });

  m.def("stcsf", [](double rho, double velocity) { return stcsf(rho, velocity, CsfParams{}); }, py::arg("rho_cpd"),
        py::arg("velocity"));
  m.def("psychometric", &psychometric, py::arg("x"), py::arg("beta") = 3.5);
  m.def("masked_threshold", &masked_threshold, py::arg("m_t"), py::arg("m_n"), py::arg("k"));
  m.def(
      "mask_weight",
      [](double u, double v, double u2, double v2, double alpha_max_deg, double decay) {
        HvsConfig c;
        c.alpha_max_deg = alpha_max_deg;
        c.decay = decay;
        return mask_weight(u, v, u2, v2, c);
      },
      py::arg("u"), py::arg("v"), py::arg("u2"), py::arg("v2"), py::arg("alpha_max_deg") = 5.0,
      py::arg("decay") = 2.2);

  m.def("fft3", [](const F64& a) {
    const auto f = fft3(volume_from(a));
    return to_array(f.dims, f.bins);
  });
  m.def("ifft3", [](const C128& a) {
    FrequencyStack f;
    f.dims = dims_of(a.request());
    f.bins.assign(a.data(), a.data() + f.dims.size());
    const auto v = ifft3(f);
    return to_array(v.dims, v.data);
  });

  m.def(
      "background",
      [](std::size_t nz, std::size_t ny, std::size_t nx, std::uint64_t seed, bool lumpy) {
        BackgroundSpec spec;
        spec.kind = lumpy ? BackgroundKind::lumpy : BackgroundKind::flat;
        const auto s = gen_background({nx, ny, nz}, spec, seed);
        return to_array(s.dims, s.voxels);
      },
      py::arg("nz"), py::arg("ny"), py::arg("nx"), py::arg("seed"), py::arg("lumpy") = true);
  m.def(
      "noise_field",
      [](std::size_t nz, std::size_t ny, std::size_t nx, int level, std::uint64_t seed) {
        const auto v = gen_noise_field({nx, ny, nz}, NoiseSpec{}, level, seed);
        return to_array(v.dims, v.data);
      },
      py::arg("nz"), py::arg("ny"), py::arg("nx"), py::arg("level"), py::arg("seed"));
  m.def(
      "insert_lesion",
      [](const F32& stack, double amplitude, double sigma_xy, double sigma_z) {
        LesionSpec spec;
        spec.amplitude = amplitude;
        spec.sigma_xy = sigma_xy;
        spec.sigma_z = sigma_z;
        const auto out = insert_lesion(stack_from(stack, "stack"), spec);
        return to_array(out.dims, out.voxels);
      },
      py::arg("stack"), py::arg("amplitude") = 0.10, py::arg("sigma_xy") = 2.5, py::arg("sigma_z") = 1.5);

  m.def(
      "perceive",
      [](const F32& stack, const std::string& method, bool masking, double k, const std::string& mn_semantics,
         std::uint64_t mc_seed, const std::string& stack_id, const py::dict& viewing) {
        const auto s = stack_from(stack, stack_id);
        const auto hvs = hvs_from(method, masking, k, mn_semantics, mc_seed);
        const auto view = viewing_from(viewing);
        Volume v;
        {
          py::gil_scoped_release release;
          v = perceive(s, view, hvs);
        }
        return to_array(v.dims, v.data);
      },
      py::arg("stack"), py::arg("method") = "PM", py::arg("masking") = true, py::arg("k") = 3.0,
      py::arg("mn_semantics") = "amplitude", py::arg("mc_seed") = 0, py::arg("stack_id") = "stack",
      py::arg("viewing") = py::dict(),
      "Perceived luminance of a drive-unit stack shaped (nz, ny, nx).");

  m.def("auc_statistic", [](const F64& h, const F64& l) {
    return auc_statistic({h.data(), static_cast<std::size_t>(h.size())}, {l.data(), static_cast<std::size_t>(l.size())});
  });
  m.def(
      "auc",
      [](const F64& h, const F64& l, std::size_t resamples, std::uint64_t seed) {
        const auto r = auc({h.data(), static_cast<std::size_t>(h.size())},
                           {l.data(), static_cast<std::size_t>(l.size())}, resamples, seed);
        return py::make_tuple(r.auc, r.ci_low, r.ci_high);
      },
      py::arg("healthy"), py::arg("lesion"), py::arg("resamples") = 2000, py::arg("seed") = 0);

  m.def(
      "lg_channels",
      [](std::size_t count, double width, std::size_t nx, std::size_t ny) {
        const auto cs = lg_channels(count, width, nx, ny);
        py::array_t<double> out({count, ny, nx});
        std::copy(cs.matrix.begin(), cs.matrix.end(), out.mutable_data());
        return out;
      },
      py::arg("count"), py::arg("width"), py::arg("nx"), py::arg("ny"));
  m.def(
      "train_mscho",
      [](const F64& features, const py::array_t<bool>& lesion, double shrinkage) {
        const auto b = features.request();
        if (b.ndim != 2) throw Error(ErrorCode::invalid_argument, "features must be (samples, dims)");
        const auto n = static_cast<std::size_t>(b.shape[0]), d = static_cast<std::size_t>(b.shape[1]);
        if (static_cast<std::size_t>(lesion.size()) != n)
          throw Error(ErrorCode::length_mismatch, "one label per feature row is required");
        std::vector<std::vector<double>> x(n);
        std::vector<Label> y(n);
        for (std::size_t i = 0; i < n; ++i) {
          x[i].assign(features.data() + i * d, features.data() + (i + 1) * d);
          y[i] = lesion.data()[i] ? Label::lesion : Label::healthy;
        }
        const auto t = train_mscho(x, y, shrinkage);
        return py::array_t<double>(static_cast<py::ssize_t>(t.weights.size()), t.weights.data());
      },
      py::arg("features"), py::arg("lesion"), py::arg("shrinkage") = 0.2);

  m.def(
      "run_experiment",
      [](const std::filesystem::path& config, std::size_t threads) {
        auto c = load_experiment_config(config);
        if (threads) c.threads = threads;
        ResultsTable t;
        {
          py::gil_scoped_release release;
          t = run_experiment(c);
        }
        py::list rows;
        for (const auto& r : t.rows) rows.append(row_dict(r));
        return rows;
      },
      py::arg("config"), py::arg("threads") = 0, "Runs an experiment config file; returns result rows as dicts.");
}
