#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <optional>
#include <sstream>

#include "mambarate/commands.hpp"
#include "mambarate/data_io.hpp"
#include "mambarate/error.hpp"
#include "mambarate/metrics.hpp"
#include "mambarate/model.hpp"
#include "mambarate/rbf_codec.hpp"
#include "mambarate/rng.hpp"
#include "mambarate/trainer.hpp"

namespace py = pybind11;
using namespace mambarate;

namespace {

Tensor tensor_from_array(const py::array_t<double, py::array::c_style | py::array::forcecast>& arr) {
  if (arr.ndim() != 2) throw py::value_error("embedding must be a 2-d array (frames, dim)");
  Tensor t({arr.shape(0), arr.shape(1)});
  std::copy_n(arr.data(), t.data.size(), t.data.begin());
  return t;
}

RbfConfig rbf_from_kwargs(int64_t num_centers, double range_min, double range_max,
                          std::optional<double> sigma, double noise_scale, uint64_t seed) {
  RbfConfig cfg;
  cfg.num_centers = num_centers;
  cfg.range_min = range_min;
  cfg.range_max = range_max;
  cfg.sigma = sigma;
  cfg.noise_scale = noise_scale;
  cfg.seed = seed;
  cfg.validate();
  return cfg;
}

ModelConfig model_config_from_dict(const py::dict& d) {
  ModelConfig cfg;
  for (const auto& item : d) {
    const std::string key = py::cast<std::string>(item.first);
    const int64_t value = py::cast<int64_t>(item.second);
    if (key == "input_dim") cfg.input_dim = value;
    else if (key == "d_model") cfg.d_model = value;
    else if (key == "conv_kernel") cfg.conv_kernel = value;
    else if (key == "conv_stride") cfg.conv_stride = value;
    else if (key == "num_blocks") cfg.num_blocks = value;
    else if (key == "d_state") cfg.d_state = value;
    else if (key == "d_conv") cfg.d_conv = value;
    else if (key == "expand") cfg.expand = value;
    else if (key == "head_dim") cfg.head_dim = value;
    else if (key == "ffn_expansion") cfg.ffn_expansion = value;
    else if (key == "mlp_hidden") cfg.mlp_hidden = value;
    else if (key == "output_dim") cfg.output_dim = value;
    else throw py::value_error("unknown model config key: " + key);
  }
  cfg.validate();
  return cfg;
}

py::dict model_config_to_dict(const ModelConfig& cfg) {
  py::dict d;
  d["input_dim"] = cfg.input_dim;
  d["d_model"] = cfg.d_model;
  d["conv_kernel"] = cfg.conv_kernel;
  d["conv_stride"] = cfg.conv_stride;
  d["num_blocks"] = cfg.num_blocks;
  d["d_state"] = cfg.d_state;
  d["d_conv"] = cfg.d_conv;
  d["expand"] = cfg.expand;
  d["head_dim"] = cfg.head_dim;
  d["ffn_expansion"] = cfg.ffn_expansion;
  d["mlp_hidden"] = cfg.mlp_hidden;
  d["output_dim"] = cfg.output_dim;
  return d;
}

std::vector<ScorePair> pairs_from_arrays(const std::vector<double>& predicted,
                                         const std::vector<double>& reference) {
  if (predicted.size() != reference.size()) {
    throw py::value_error("predicted and reference must have the same length");
  }
  std::vector<ScorePair> pairs(predicted.size());
  for (size_t i = 0; i < pairs.size(); ++i) {
    pairs[i].utterance_id = std::to_string(i);
    pairs[i].predicted = predicted[i];
    pairs[i].reference = reference[i];
  }
  return pairs;
}

// python-facing model handle: owns the model plus the codec config used to
// decode its outputs
class PyModel {
 public:
  PyModel(const py::dict& config, uint64_t seed)
      : rbf_(), model_(model_config_from_dict(config), seed) {}

  explicit PyModel(const std::string& checkpoint_path)
      : rbf_(), model_(ModelConfig{}, 0) {
    const Checkpoint ck = load_checkpoint(checkpoint_path);
    rbf_ = ck.rbf;
    model_ = model_from_checkpoint(ck);
  }

  py::array_t<double> predict_vector(
      const py::array_t<double, py::array::c_style | py::array::forcecast>& emb) const {
    const Tensor out = model_.predict_vector(tensor_from_array(emb));
    return py::array_t<double>(static_cast<py::ssize_t>(out.data.size()), out.data.data());
  }

  double predict_mos(
      const py::array_t<double, py::array::c_style | py::array::forcecast>& emb) const {
    return model_.predict_mos(tensor_from_array(emb), rbf_);
  }

  void save(const std::string& path) const {
    Checkpoint ck;
    ck.model = model_.config();
    ck.rbf = rbf_;
    for (const auto& [name, node] : model_.named_parameters()) {
      ck.tensors.emplace_back("param." + name, node->value);
    }
    save_checkpoint(path, ck);
  }

  py::dict config() const { return model_config_to_dict(model_.config()); }
  int64_t parameter_count() const { return model_.parameter_count(); }

 private:
  RbfConfig rbf_;
  Model model_;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "MOS prediction over precomputed speech embeddings";

  py::register_exception<Error>(m, "MambarateError");

  // --- rating codec ---------------------------------------------------------
  m.def(
      "centers",
      [](int64_t num_centers, double range_min, double range_max) {
        RbfConfig cfg;
        cfg.num_centers = num_centers;
        cfg.range_min = range_min;
        cfg.range_max = range_max;
        return centers(cfg);
      },
      py::arg("num_centers") = 16, py::arg("range_min") = 1.0, py::arg("range_max") = 5.0,
      "Evenly spaced RBF centers over the rating range");

  m.def(
      "encode",
      [](double x, int64_t num_centers, double range_min, double range_max,
         std::optional<double> sigma, bool noise, double noise_scale, uint64_t seed) {
        const RbfConfig cfg =
            rbf_from_kwargs(num_centers, range_min, range_max, sigma, noise_scale, seed);
        Rng rng(seed);
        return encode(x, cfg, noise, &rng).values;
      },
      py::arg("x"), py::arg("num_centers") = 16, py::arg("range_min") = 1.0,
      py::arg("range_max") = 5.0, py::arg("sigma") = py::none(), py::arg("noise") = false,
      py::arg("noise_scale") = 1e-4, py::arg("seed") = 0,
      "Encode a rating into its Gaussian RBF responses");

  m.def(
      "decode",
      [](const std::vector<double>& values, int64_t num_centers, double range_min,
         double range_max, std::optional<double> sigma) {
        const RbfConfig cfg = rbf_from_kwargs(num_centers, range_min, range_max, sigma, 0.0, 0);
        return decode(values, cfg);
      },
      py::arg("values"), py::arg("num_centers") = 16, py::arg("range_min") = 1.0,
      py::arg("range_max") = 5.0, py::arg("sigma") = py::none(),
      "Decode an RBF response vector back to the nearest center");

  // --- embedding io ---------------------------------------------------------
  m.def(
      "load_embedding",
      [](const std::string& path) {
        const EmbeddingSequence emb = load_embedding(path);
        py::array_t<float> arr({emb.frames, emb.dim});
        std::copy_n(emb.data.data(), emb.data.size(), arr.mutable_data());
        return py::make_tuple(emb.utterance_id, arr);
      },
      py::arg("path"), "Read an EMB1 file; returns (utterance_id, array of shape (frames, dim))");

  m.def(
      "write_embedding",
      [](const std::string& path,
         const py::array_t<float, py::array::c_style | py::array::forcecast>& arr) {
        if (arr.ndim() != 2) throw py::value_error("embedding must be 2-d (frames, dim)");
        EmbeddingSequence emb;
        emb.frames = arr.shape(0);
        emb.dim = arr.shape(1);
        emb.data.assign(arr.data(), arr.data() + arr.size());
        write_embedding(path, emb);
      },
      py::arg("path"), py::arg("embedding"), "Write a float32 matrix as an EMB1 file");

  // --- metrics ---------------------------------------------------------------
  m.def(
      "mse",
      [](const std::vector<double>& p, const std::vector<double>& r) {
        return mse(pairs_from_arrays(p, r));
      },
      py::arg("predicted"), py::arg("reference"));
  m.def(
      "pearson",
      [](const std::vector<double>& p, const std::vector<double>& r) {
        return pearson(pairs_from_arrays(p, r));
      },
      py::arg("predicted"), py::arg("reference"));
  m.def(
      "spearman",
      [](const std::vector<double>& p, const std::vector<double>& r) {
        return spearman(pairs_from_arrays(p, r));
      },
      py::arg("predicted"), py::arg("reference"));
  m.def(
      "kendall_tau",
      [](const std::vector<double>& p, const std::vector<double>& r, const std::string& variant) {
        return kendall_tau(pairs_from_arrays(p, r),
                           variant == "a" ? TauVariant::TauA : TauVariant::TauB);
      },
      py::arg("predicted"), py::arg("reference"), py::arg("variant") = "b");

  // --- model -----------------------------------------------------------------
  py::class_<PyModel>(m, "Model")
      .def(py::init<const py::dict&, uint64_t>(), py::arg("config") = py::dict(),
           py::arg("seed") = 0)
      .def_static("load", [](const std::string& path) { return PyModel(path); }, py::arg("path"))
      .def("predict_vector", &PyModel::predict_vector, py::arg("embedding"),
           "Sigmoid response vector, one value per RBF center")
      .def("predict_mos", &PyModel::predict_mos, py::arg("embedding"),
           "Decoded MOS for one embedding matrix")
      .def("save", &PyModel::save, py::arg("path"))
      .def("config", &PyModel::config)
      .def("parameter_count", &PyModel::parameter_count);

  m.def(
      "parameter_count",
      [](const py::dict& config) { return parameter_count(model_config_from_dict(config)); },
      py::arg("config") = py::dict(), "Learnable scalar count implied by a model config");

  // --- training --------------------------------------------------------------
  m.def(
      "train_from_config",
      [](const std::string& config_path) {
        std::ostringstream out, err;
        const int rc = cli::cmd_train(config_path, out, err);
        if (rc != 0) fail(ErrorCode::DataError, "training failed (" + err.str() + ")");
        return out.str();
      },
      py::arg("config_path"), "Run the full training pipeline from a JSON run config");
}
