#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "cocoon/tensor.hpp"

namespace cocoon {

// Multilayer perceptron encoder description. Inputs are flattened feature
// vectors; full-scale reference values (64x96 spectrogram patches, 128x128x3
// images, 128-dim embeddings) are kept much smaller in the shipped configs.
struct EncoderConfig {
  std::size_t input_dim = 0;
  std::vector<std::size_t> hidden;
  std::size_t embed_dim = 0;

  void validate(const char* name) const;
};

struct MlpParams {
  std::vector<Tensor> weights;  // [in, out] per layer
  std::vector<Tensor> biases;   // [out] per layer
};

// Binary coincidence predictor on a concatenated embedding pair: one hidden
// ReLU layer (512 units at full scale) into a logistic output.
struct CoincidenceHeadParams {
  Tensor hidden_weight;  // [2d, h]
  Tensor hidden_bias;    // [h]
  Tensor output_weight;  // [h, 1]
  Tensor output_bias;    // [1]
};

// Cosine-similarity cluster assignment head. Rows of `weight` are kept at
// unit norm by the trainer after every optimizer step; the forward pass does
// not renormalize them.
struct ClusterHeadParams {
  Tensor weight;  // [K, d], unit-norm rows
  double logit_scale = 60.0;
  std::size_t clusters() const { return weight.shape()[0]; }
};

struct ClassifierHeadParams {
  Tensor hidden_weight;  // [d, h]
  Tensor hidden_bias;    // [h]
  Tensor output_weight;  // [h, C]
  Tensor output_bias;    // [C]
  std::size_t classes() const { return output_bias.shape()[0]; }
};

struct ModelConfig {
  EncoderConfig audio;
  EncoderConfig image;
  std::size_t head_hidden = 512;
  std::size_t classifier_hidden = 512;
  std::size_t clusters = 64;
  double logit_scale = 60.0;
  std::size_t classes = 8;

  void validate() const;
};

struct ModelParams {
  MlpParams audio_encoder;  // f
  MlpParams image_encoder;  // g
  CoincidenceHeadParams coincidence_aa;
  CoincidenceHeadParams coincidence_av;
  ClusterHeadParams cluster_head;
  ClassifierHeadParams classifier;

  // Stable (name, tensor) listing; ordering defines checkpoint layout.
  std::vector<std::pair<std::string, Tensor>> named() const;
  std::vector<Tensor> all() const;
  // Value copies outside any graph, for inference passes.
  ModelParams detached() const;
};

// Reproducible initialization: uniform fan-in weights, zero biases, zeroed
// head output layers (so fresh coincidence heads score 0.5 and fresh
// classifiers are uniform), unit-normalized cluster rows.
ModelParams init_params(const ModelConfig& config, std::uint64_t seed);

// Encoder forward passes. Batch inputs are [B, input_dim]; single inputs are
// flat [input_dim] vectors returning [d].
Tensor embed_batch(const MlpParams& params, const Tensor& x);
Tensor embed_audio(const ModelParams& params, const Tensor& x);
Tensor embed_image(const ModelParams& params, const Tensor& x);

// Probability that an ordered embedding pair is coinciding, clamped into
// (0, 1). Single-pair form returns a scalar; the matrix form scores all
// ordered cross pairs of two batches, entry (i, j) = p([e1_i | e2_j]).
Tensor coincidence_prob(const CoincidenceHeadParams& head, const Tensor& e1,
                        const Tensor& e2);
Tensor coincidence_probability_matrix(const CoincidenceHeadParams& head,
                                      const Tensor& e1, const Tensor& e2);

// softmax(scale * cosine(e, row_k)) over cluster rows; invariant to positive
// rescaling of the input embedding.
Tensor cluster_distribution(const ClusterHeadParams& head, const Tensor& e);
Tensor cluster_distribution_rows(const ClusterHeadParams& head,
                                 const Tensor& embeddings);

Tensor class_distribution(const ClassifierHeadParams& head, const Tensor& e);
Tensor class_distribution_rows(const ClassifierHeadParams& head,
                               const Tensor& embeddings);

// Restores unit norm on every cluster row in place (trainer post-step hook).
void renormalize_cluster_rows(ClusterHeadParams& head);

}  // namespace cocoon
