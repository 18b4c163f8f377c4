#include "ntl/models.hpp"

#include <memory>
#include <sstream>

#include <nlohmann/json.hpp>

#include "ntl/errors.hpp"
#include "ntl/serial.hpp"

using json = nlohmann::ordered_json;

namespace ntl::models {

namespace {

json layer_to_json(const LayerDesc& l) {
  json j;
  j["kind"] = l.kind;
  if (l.kind == "conv") {
    j["channels"] = l.channels;
    j["kernel"] = l.kernel;
    j["stride"] = l.stride;
    j["pad"] = l.pad;
  } else if (l.kind == "maxpool") {
    j["kernel"] = l.kernel;
    j["stride"] = l.stride;
  } else if (l.kind == "dropout" || l.kind == "leakyrelu") {
    j["p"] = l.p;
  }
  return j;
}

LayerDesc layer_from_json(const json& j) {
  LayerDesc l;
  l.kind = j.at("kind").get<std::string>();
  l.channels = j.value("channels", static_cast<std::int64_t>(0));
  l.kernel = j.value("kernel", static_cast<std::int64_t>(0));
  l.stride = j.value("stride", static_cast<std::int64_t>(1));
  l.pad = j.value("pad", static_cast<std::int64_t>(0));
  l.p = j.value("p", 0.0);
  return l;
}

// Walks the extractor descriptors tracking activation geometry; returns the
// flattened dimension. Throws ConfigError on malformed descriptors.
std::int64_t extractor_output_dim(const ArchitectureSpec& s) {
  std::int64_t c = s.input_channels, h = s.input_height, w = s.input_width;
  for (const auto& l : s.extractor_layers) {
    if (l.kind == "conv") {
      if (l.channels < 1 || l.kernel < 1) throw ConfigError("arch: conv needs channels and kernel");
      h = nn::conv_out_size(h, l.kernel, l.stride, l.pad);
      w = nn::conv_out_size(w, l.kernel, l.stride, l.pad);
      c = l.channels;
    } else if (l.kind == "maxpool") {
      h = nn::conv_out_size(h, l.kernel, l.stride, 0);
      w = nn::conv_out_size(w, l.kernel, l.stride, 0);
    } else if (l.kind != "relu" && l.kind != "leakyrelu" && l.kind != "batchnorm" &&
               l.kind != "dropout") {
      throw ConfigError("arch: unknown extractor layer kind '" + l.kind + "'");
    }
  }
  return c * h * w;
}

}  // namespace

void ArchitectureSpec::validate() const {
  std::string bad;
  if (input_channels < 1 || input_height < 1 || input_width < 1) bad += "input_shape ";
  if (extractor_layers.empty()) bad += "extractor_layers ";
  if (classifier_layers.empty()) bad += "classifier_layers ";
  if (repr_dim < 1) bad += "repr_dim ";
  if (!classifier_layers.empty() && classifier_layers.back() < 2) bad += "num_classes ";
  if (classifier_dropout < 0.0 || classifier_dropout >= 1.0) bad += "classifier_dropout ";
  if (!bad.empty()) throw ConfigError("architecture spec: invalid fields: " + bad);
  const std::int64_t flat = extractor_output_dim(*this);
  if (flat != repr_dim) {
    throw ConfigError("architecture spec: repr_dim is " + std::to_string(repr_dim) +
                      " but the extractor produces " + std::to_string(flat));
  }
}

std::string ArchitectureSpec::to_json_text() const {
  json j;
  j["input_channels"] = input_channels;
  j["input_height"] = input_height;
  j["input_width"] = input_width;
  j["extractor_layers"] = json::array();
  for (const auto& l : extractor_layers) j["extractor_layers"].push_back(layer_to_json(l));
  j["classifier_layers"] = classifier_layers;
  j["repr_dim"] = repr_dim;
  j["classifier_dropout"] = classifier_dropout;
  j["stage_split"] = stage_split;
  return j.dump();
}

ArchitectureSpec ArchitectureSpec::from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError("architecture spec: parse error: " + std::string(e.what()));
  }
  ArchitectureSpec s;
  s.input_channels = j.at("input_channels").get<std::int64_t>();
  s.input_height = j.at("input_height").get<std::int64_t>();
  s.input_width = j.at("input_width").get<std::int64_t>();
  for (const auto& lj : j.at("extractor_layers")) s.extractor_layers.push_back(layer_from_json(lj));
  s.classifier_layers = j.at("classifier_layers").get<std::vector<std::int64_t>>();
  s.repr_dim = j.at("repr_dim").get<std::int64_t>();
  s.classifier_dropout = j.value("classifier_dropout", 0.5);
  s.stage_split = j.value("stage_split", static_cast<std::int64_t>(2));
  s.validate();
  return s;
}

ArchitectureSpec ArchitectureSpec::tiny(std::int64_t num_classes) {
  ArchitectureSpec s;
  for (const std::int64_t ch : {16, 32, 64, 64}) {
    s.extractor_layers.push_back({.kind = "conv", .channels = ch, .kernel = 4, .stride = 2, .pad = 1});
    s.extractor_layers.push_back({.kind = "relu"});
  }
  s.classifier_layers = {256, 256, num_classes};
  s.repr_dim = 64 * 2 * 2;
  s.classifier_dropout = 0.5;
  s.stage_split = 2;
  return s;
}

ModelBundle build_model(const ArchitectureSpec& spec, std::uint64_t seed) {
  spec.validate();
  ModelBundle m;
  m.spec = spec;
  m.init_seed = seed;
  std::int64_t c = spec.input_channels;
  for (const auto& l : spec.extractor_layers) {
    if (l.kind == "conv") {
      m.extractor.add(std::make_unique<nn::Conv2d>(c, l.channels, l.kernel, l.stride, l.pad));
      c = l.channels;
    } else if (l.kind == "relu") {
      m.extractor.add(std::make_unique<nn::ReLU>());
    } else if (l.kind == "leakyrelu") {
      m.extractor.add(std::make_unique<nn::LeakyReLU>(l.p));
    } else if (l.kind == "maxpool") {
      m.extractor.add(std::make_unique<nn::MaxPool2d>(l.kernel, l.stride));
    } else if (l.kind == "batchnorm") {
      m.extractor.add(std::make_unique<nn::BatchNorm2d>(c));
    } else if (l.kind == "dropout") {
      m.extractor.add(std::make_unique<nn::Dropout>(l.p));
    }
  }
  m.extractor.add(std::make_unique<nn::Flatten>());
  std::int64_t in = spec.repr_dim;
  for (std::size_t i = 0; i < spec.classifier_layers.size(); ++i) {
    const std::int64_t out = spec.classifier_layers[i];
    m.classifier.add(std::make_unique<nn::Linear>(in, out));
    if (i + 1 < spec.classifier_layers.size()) {
      m.classifier.add(std::make_unique<nn::ReLU>());
      m.classifier.add(std::make_unique<nn::Dropout>(spec.classifier_dropout));
    } else {
      m.classifier.add(std::make_unique<nn::Softmax>());
    }
    in = out;
  }
  Rng rng(Rng::derive(seed, 0xA11));
  m.extractor.init(rng);
  m.classifier.init(rng);
  return m;
}

ModelBundle ModelBundle::clone() const {
  ModelBundle m;
  m.spec = spec;
  m.extractor = extractor.clone();
  m.classifier = classifier.clone();
  m.init_seed = init_seed;
  m.train_step_count = train_step_count;
  return m;
}

std::pair<Tensor, Tensor> ModelBundle::forward(const Tensor& batch) {
  if (batch.ndim() != 4 || batch.dim(1) != spec.input_channels ||
      batch.dim(2) != spec.input_height || batch.dim(3) != spec.input_width) {
    throw DimensionError("model forward: batch geometry does not match spec");
  }
  Tensor z = extractor.forward(batch, nullptr, nn::Mode::kEval);
  Tensor probs = classifier.forward(z, nullptr, nn::Mode::kEval);
  return {std::move(z), std::move(probs)};
}

ModelBundle::TrainFwd ModelBundle::forward_train(const Tensor& batch, Rng* rng, nn::Mode mode) {
  TrainFwd f;
  f.z = extractor.forward(batch, &f.ext_tape, mode, rng);
  f.probs = classifier.forward(f.z, &f.cls_tape, mode, rng);
  return f;
}

void ModelBundle::backward(const Tensor& gprobs, TrainFwd& fwd) {
  Tensor gz = classifier.backward(gprobs, fwd.cls_tape);
  extractor.backward(gz, fwd.ext_tape);
}

std::vector<nn::Param*> ModelBundle::params() {
  auto p = extractor.params();
  for (auto* q : classifier.params()) p.push_back(q);
  return p;
}

void ModelBundle::zero_grad() {
  extractor.zero_grad();
  classifier.zero_grad();
}

ModelBundle freeze(ModelBundle model, FreezePart part) {
  if (part == FreezePart::kExtractor) model.extractor.set_trainable(false);
  if (part == FreezePart::kClassifier) model.classifier.set_trainable(false);
  return model;
}

void save_checkpoint(const ModelBundle& model, const std::string& path) {
  json meta;
  meta["arch"] = json::parse(model.spec.to_json_text());
  meta["seed"] = model.init_seed;
  meta["train_step_count"] = model.train_step_count;
  std::vector<std::pair<std::string, const Tensor*>> tensors;
  auto& m = const_cast<ModelBundle&>(model);
  for (auto& [name, t] : m.extractor.state()) tensors.emplace_back("ext." + name, t);
  for (auto& [name, t] : m.classifier.state()) tensors.emplace_back("cls." + name, t);
  serial::write_container(path, "model", meta.dump(), tensors);
}

ModelBundle load_checkpoint(const std::string& path) {
  auto c = serial::read_container(path);
  if (c.kind != "model") throw IoError("checkpoint kind is '" + c.kind + "', expected 'model'");
  json meta;
  try {
    meta = json::parse(c.meta_json);
  } catch (const json::exception& e) {
    throw IoError("checkpoint metadata parse error: " + std::string(e.what()));
  }
  ArchitectureSpec spec = ArchitectureSpec::from_json_text(meta.at("arch").dump());
  ModelBundle m = build_model(spec, meta.at("seed").get<std::uint64_t>());
  m.train_step_count = meta.at("train_step_count").get<std::int64_t>();
  auto fill = [&c](const std::string& prefix, nn::Sequential& s) {
    for (auto& [name, t] : s.state()) {
      auto it = c.tensors.find(prefix + name);
      if (it == c.tensors.end()) throw IoError("checkpoint missing tensor " + prefix + name);
      if (!it->second.same_shape(*t)) throw IoError("checkpoint tensor shape mismatch: " + name);
      *t = it->second;
    }
  };
  fill("ext.", m.extractor);
  fill("cls.", m.classifier);
  return m;
}

}  // namespace ntl::models
