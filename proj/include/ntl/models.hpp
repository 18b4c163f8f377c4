#pragma once

#include <string>
#include <utility>
#include <vector>

#include "ntl/nn/adam.hpp"
#include "ntl/nn/sequential.hpp"
#include "ntl/rng.hpp"
#include "ntl/tensor.hpp"

namespace ntl::models {

// One extractor layer. Kinds: conv (channels/kernel/stride/pad), relu,
// leakyrelu (p = slope), maxpool (kernel/stride), batchnorm, dropout (p).
// A trailing flatten is implicit.
struct LayerDesc {
  std::string kind;
  std::int64_t channels = 0;
  std::int64_t kernel = 0;
  std::int64_t stride = 1;
  std::int64_t pad = 0;
  double p = 0.0;
};

struct ArchitectureSpec {
  std::int64_t input_channels = 3;
  std::int64_t input_height = 32;
  std::int64_t input_width = 32;
  std::vector<LayerDesc> extractor_layers;
  // Linear widths; the last entry is the class count K. Hidden linears are
  // followed by ReLU + Dropout, the final one by Softmax.
  std::vector<std::int64_t> classifier_layers;
  std::int64_t repr_dim = 0;
  double classifier_dropout = 0.5;
  // Boundary between the two extractor stages, counted in conv layers.
  // Recorded in checkpoints; nothing at desk scale consumes it.
  std::int64_t stage_split = 2;

  std::int64_t num_classes() const { return classifier_layers.back(); }
  void validate() const;  // throws ConfigError listing violations
  std::string to_json_text() const;
  static ArchitectureSpec from_json_text(const std::string& text);

  // 4 stride-2 conv blocks (16, 32, 64, 64) + ReLU, then 256-256-K linears.
  static ArchitectureSpec tiny(std::int64_t num_classes);
};

// Feature extractor Phi plus classifier Omega. The classifier output is a
// probability vector (softmax is its last layer).
struct ModelBundle {
  ArchitectureSpec spec;
  nn::Sequential extractor;
  nn::Sequential classifier;
  std::uint64_t init_seed = 0;
  std::int64_t train_step_count = 0;

  ModelBundle clone() const;

  // Evaluation-mode forward (no caching, no dropout): (z, probs).
  std::pair<Tensor, Tensor> forward(const Tensor& batch);
  // Forward with tapes recorded for backward. Train mode by default; eval
  // mode gives a deterministic differentiable path (dropout disabled).
  struct TrainFwd {
    Tensor z, probs;
    nn::Tape ext_tape, cls_tape;
  };
  TrainFwd forward_train(const Tensor& batch, Rng* rng, nn::Mode mode = nn::Mode::kTrain);
  // Backprop dL/dprobs through classifier and extractor, accumulating grads.
  void backward(const Tensor& gprobs, TrainFwd& fwd);

  std::vector<nn::Param*> params();
  void zero_grad();
};

ModelBundle build_model(const ArchitectureSpec& spec, std::uint64_t seed);

enum class FreezePart { kExtractor, kClassifier, kNone };
ModelBundle freeze(ModelBundle model, FreezePart part);

void save_checkpoint(const ModelBundle& model, const std::string& path);
ModelBundle load_checkpoint(const std::string& path);

}  // namespace ntl::models
