#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <algorithm>
#include <cstring>
#include <vector>

#include "ntl/attacks.hpp"
#include "ntl/domains.hpp"
#include "ntl/errors.hpp"
#include "ntl/kernels.hpp"
#include "ntl/mi_probe.hpp"
#include "ntl/models.hpp"
#include "ntl/objective.hpp"
#include "ntl/protection.hpp"

namespace py = pybind11;
using namespace ntl;

namespace {

Tensor matrix_from_array(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
  if (a.ndim() != 2) throw ConfigError("expected a 2-D float array");
  Tensor t({a.shape(0), a.shape(1)});
  std::copy(a.data(), a.data() + a.size(), t.data());
  return t;
}

std::vector<std::uint16_t> labels_from_list(const std::vector<int>& labels) {
  std::vector<std::uint16_t> out;
  out.reserve(labels.size());
  for (const int v : labels) {
    if (v < 0) throw ConfigError("labels must be nonnegative");
    out.push_back(static_cast<std::uint16_t>(v));
  }
  return out;
}

py::array_t<std::uint8_t> dataset_images(const domains::DomainDataset& ds) {
  py::array_t<std::uint8_t> out({ds.count(), ds.channels, ds.height, ds.width});
  std::memcpy(out.mutable_data(), ds.pixels.data(), ds.pixels.size());
  return out;
}

domains::DomainDataset dataset_from_arrays(
    const py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>& images,
    const std::vector<int>& labels, std::int64_t num_classes, const std::string& name) {
  if (images.ndim() != 4) throw ConfigError("images must be (N, C, H, W) uint8");
  domains::DomainDataset ds;
  ds.name = name;
  ds.num_classes = num_classes;
  ds.channels = images.shape(1);
  ds.height = images.shape(2);
  ds.width = images.shape(3);
  ds.pixels.assign(images.data(), images.data() + images.size());
  for (const int v : labels) ds.labels.push_back(static_cast<std::uint16_t>(v));
  ds.validate();
  return ds;
}

objective::NtlConfig ntl_config(double alpha, double beta, double alpha_prime, double beta_prime,
                                double learning_rate, std::int64_t batch_size, std::int64_t epochs,
                                std::uint64_t seed) {
  objective::NtlConfig cfg;
  cfg.alpha = alpha;
  cfg.beta = beta;
  cfg.alpha_prime = alpha_prime;
  cfg.beta_prime = beta_prime;
  cfg.learning_rate = learning_rate;
  cfg.batch_size = batch_size;
  cfg.epochs = epochs;
  cfg.seed = seed;
  return cfg;
}

py::dict verification_dict(const protection::VerificationReport& r) {
  py::dict d;
  d["acc_without_patch"] = r.acc_without_patch;
  d["acc_with_patch"] = r.acc_with_patch;
  d["gap"] = r.gap;
  d["threshold"] = r.threshold;
  d["verified"] = r.verified;
  return d;
}

}  // namespace

PYBIND11_MODULE(ntlpy, m) {
  m.doc() = "non-transferable learning core: datasets, MMD, losses, training, verification";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);

  py::class_<domains::DomainDataset>(m, "Dataset")
      .def_property_readonly("count", &domains::DomainDataset::count)
      .def_readonly("name", &domains::DomainDataset::name)
      .def_readonly("num_classes", &domains::DomainDataset::num_classes)
      .def_readonly("channels", &domains::DomainDataset::channels)
      .def_readonly("height", &domains::DomainDataset::height)
      .def_readonly("width", &domains::DomainDataset::width)
      .def("images", &dataset_images)
      .def("labels", [](const domains::DomainDataset& ds) {
        return std::vector<int>(ds.labels.begin(), ds.labels.end());
      });

  m.def("dataset_from_arrays", &dataset_from_arrays, py::arg("images"), py::arg("labels"),
        py::arg("num_classes"), py::arg("name") = "python");

  m.def(
      "synthetic_pair",
      [](std::uint64_t seed, std::int64_t count, std::int64_t num_classes) {
        domains::ShiftSpec shift;
        auto pair = domains::make_synthetic_domain_pair(seed, shift, count, num_classes);
        return py::make_tuple(std::move(pair.first), std::move(pair.second));
      },
      py::arg("seed") = 2021, py::arg("count") = 100, py::arg("num_classes") = 10,
      "seven-segment source domain plus its background-tinted counterpart");

  m.def(
      "apply_patch",
      [](const domains::DomainDataset& ds, int v, int channel) {
        domains::PatchSpec patch;
        patch.v = v;
        patch.channel = channel;
        return domains::apply_patch(ds, patch);
      },
      py::arg("dataset"), py::arg("v") = 20, py::arg("channel") = 0);

  m.def(
      "bandwidths",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& joint, double mul,
         std::int64_t num) {
        return kernels::bandwidths(matrix_from_array(joint), {mul, num});
      },
      py::arg("joint"), py::arg("mul") = 2.0, py::arg("num") = 5);

  m.def(
      "mmd",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& a,
         const py::array_t<double, py::array::c_style | py::array::forcecast>& b, double mul,
         std::int64_t num) {
        return kernels::mmd(matrix_from_array(a), matrix_from_array(b), {mul, num});
      },
      py::arg("a"), py::arg("b"), py::arg("mul") = 2.0, py::arg("num") = 5);

  m.def(
      "mmd_fixed",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& a,
         const py::array_t<double, py::array::c_style | py::array::forcecast>& b,
         const std::vector<double>& bw) {
        return kernels::mmd_fixed(matrix_from_array(a), matrix_from_array(b), bw);
      },
      py::arg("a"), py::arg("b"), py::arg("bandwidths"));

  m.def(
      "kl_class_loss",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& probs,
         const std::vector<int>& labels) {
        return objective::kl_class_loss(matrix_from_array(probs), labels_from_list(labels));
      },
      py::arg("probs"), py::arg("labels"));

  m.def(
      "ntl_star_loss",
      [](double l_s, double l_a, double alpha, double beta) {
        return objective::ntl_star_loss(l_s, l_a, ntl_config(alpha, beta, 0.1, 1.0, 1e-4, 32, 0, 0));
      },
      py::arg("l_s"), py::arg("l_a"), py::arg("alpha") = 0.1, py::arg("beta") = 1.0);

  m.def(
      "ntl_compose",
      [](double l_s, double l_a, double raw_mmd, double alpha, double beta, double alpha_prime,
         double beta_prime) {
        const auto parts = objective::ntl_compose(
            l_s, l_a, raw_mmd, ntl_config(alpha, beta, alpha_prime, beta_prime, 1e-4, 32, 0, 0));
        py::dict d;
        d["l_s"] = parts.l_s;
        d["l_a"] = parts.l_a;
        d["l_dis"] = parts.l_dis;
        d["total"] = parts.total;
        return d;
      },
      py::arg("l_s"), py::arg("l_a"), py::arg("raw_mmd"), py::arg("alpha") = 0.1,
      py::arg("beta") = 1.0, py::arg("alpha_prime") = 0.1, py::arg("beta_prime") = 1.0);

  py::class_<models::ModelBundle>(m, "Model")
      .def_property_readonly("init_seed",
                             [](const models::ModelBundle& mb) { return mb.init_seed; })
      .def("clone", &models::ModelBundle::clone);

  m.def(
      "build_model",
      [](std::int64_t num_classes, std::uint64_t seed) {
        return models::build_model(models::ArchitectureSpec::tiny(num_classes), seed);
      },
      py::arg("num_classes") = 10, py::arg("seed") = 2021,
      "tiny four-stage convolutional backbone plus softmax classifier");

  m.def("save_checkpoint", &models::save_checkpoint, py::arg("model"), py::arg("path"));
  m.def("load_checkpoint", &models::load_checkpoint, py::arg("path"));

  m.def(
      "train_supervised",
      [](models::ModelBundle& model, const domains::DomainDataset& data, double learning_rate,
         std::int64_t batch_size, std::int64_t epochs, std::uint64_t seed) {
        objective::SupervisedOptions opt;
        opt.learning_rate = learning_rate;
        opt.batch_size = batch_size;
        opt.epochs = epochs;
        opt.seed = seed;
        const auto result = objective::train_supervised(model, data, opt);
        std::vector<double> accs;
        for (const auto& rec : result.history) accs.push_back(rec.source_acc);
        return accs;
      },
      py::arg("model"), py::arg("data"), py::arg("learning_rate") = 1e-4,
      py::arg("batch_size") = 32, py::arg("epochs") = 5, py::arg("seed") = 2021,
      "KL-loss training; returns per-epoch train accuracy");

  m.def(
      "train_target_specified",
      [](models::ModelBundle& model, const domains::DomainDataset& source,
         const domains::DomainDataset& aux, double alpha, double beta, double alpha_prime,
         double beta_prime, double learning_rate, std::int64_t batch_size, std::int64_t epochs,
         std::uint64_t seed) {
        const auto cfg = ntl_config(alpha, beta, alpha_prime, beta_prime, learning_rate,
                                    batch_size, epochs, seed);
        const auto result = objective::train_target_specified(model, source, aux, cfg);
        py::list history;
        for (const auto& rec : result.history) {
          py::dict d;
          d["epoch"] = rec.epoch;
          d["l_s"] = rec.l_s;
          d["l_a"] = rec.l_a;
          d["l_dis"] = rec.l_dis;
          d["total"] = rec.total;
          d["source_acc"] = rec.source_acc;
          d["aux_acc"] = rec.aux_acc;
          history.append(std::move(d));
        }
        return history;
      },
      py::arg("model"), py::arg("source"), py::arg("aux"), py::arg("alpha") = 0.1,
      py::arg("beta") = 1.0, py::arg("alpha_prime") = 0.1, py::arg("beta_prime") = 1.0,
      py::arg("learning_rate") = 1e-4, py::arg("batch_size") = 32, py::arg("epochs") = 10,
      py::arg("seed") = 2021);

  m.def(
      "evaluate_accuracy",
      [](models::ModelBundle& model, const domains::DomainDataset& data) {
        return objective::evaluate_accuracy(model, data);
      },
      py::arg("model"), py::arg("data"));

  m.def(
      "verify_ownership",
      [](models::ModelBundle& model, const domains::DomainDataset& test, int v, int channel,
         double threshold) {
        domains::PatchSpec patch;
        patch.v = v;
        patch.channel = channel;
        return verification_dict(protection::verify_ownership(model, test, patch, threshold));
      },
      py::arg("model"), py::arg("test"), py::arg("v") = 20, py::arg("channel") = 0,
      py::arg("threshold") = 0.5);

  m.def(
      "probe_domain_mi",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& z0,
         const py::array_t<double, py::array::c_style | py::array::forcecast>& z1,
         std::uint64_t seed) {
        const auto est = probe::probe_domain_mi(matrix_from_array(z0), matrix_from_array(z1), seed);
        py::dict d;
        d["value"] = est.value;
        d["clipped"] = est.clipped;
        return d;
      },
      py::arg("z0"), py::arg("z1"), py::arg("seed") = 2021);
}
