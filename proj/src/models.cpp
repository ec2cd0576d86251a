#include "cocoon/models.hpp"

#include <cmath>

namespace cocoon {

void EncoderConfig::validate(const char* name) const {
  if (input_dim < 2) {
    throw ContractError(std::string(name) + ": input_dim must be >= 2");
  }
  if (embed_dim < 2) {
    throw ContractError(std::string(name) + ": embed_dim must be >= 2");
  }
  for (std::size_t w : hidden) {
    if (w == 0) throw ContractError(std::string(name) + ": zero hidden width");
  }
}

void ModelConfig::validate() const {
  audio.validate("audio encoder");
  image.validate("image encoder");
  if (audio.embed_dim != image.embed_dim) {
    throw ContractError("encoders must share the embedding dimension");
  }
  if (head_hidden == 0 || classifier_hidden == 0) {
    throw ContractError("head widths must be positive");
  }
  if (clusters < 2) throw ContractError("cluster count must be >= 2");
  if (logit_scale <= 0.0) throw ContractError("logit_scale must be > 0");
  if (classes < 2) throw ContractError("class count must be >= 2");
}

namespace {

Tensor uniform_fan_in(std::size_t rows, std::size_t cols, SplitRng rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(rows));
  std::vector<double> v(rows * cols);
  for (double& x : v) x = rng.uniform(-bound, bound);
  return Tensor::from_values({rows, cols}, std::move(v), true);
}

MlpParams init_mlp(const EncoderConfig& cfg, const SplitRng& rng,
                   const std::string& prefix) {
  MlpParams params;
  std::vector<std::size_t> widths;
  widths.push_back(cfg.input_dim);
  for (std::size_t h : cfg.hidden) widths.push_back(h);
  widths.push_back(cfg.embed_dim);
  for (std::size_t layer = 0; layer + 1 < widths.size(); ++layer) {
    const std::string tag = prefix + ".w" + std::to_string(layer);
    params.weights.push_back(
        uniform_fan_in(widths[layer], widths[layer + 1], rng.fork(tag)));
    params.biases.push_back(Tensor::zeros({widths[layer + 1]}, true));
  }
  return params;
}

CoincidenceHeadParams init_coincidence_head(std::size_t embed_dim,
                                            std::size_t hidden,
                                            const SplitRng& rng,
                                            const std::string& prefix) {
  CoincidenceHeadParams head;
  head.hidden_weight =
      uniform_fan_in(2 * embed_dim, hidden, rng.fork(prefix + ".w1"));
  head.hidden_bias = Tensor::zeros({hidden}, true);
  head.output_weight = Tensor::zeros({hidden, 1}, true);
  head.output_bias = Tensor::zeros({1}, true);
  return head;
}

}  // namespace

ModelParams init_params(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  SplitRng rng(seed);
  ModelParams params;
  params.audio_encoder = init_mlp(config.audio, rng, "f");
  params.image_encoder = init_mlp(config.image, rng, "g");
  params.coincidence_aa = init_coincidence_head(config.audio.embed_dim,
                                                config.head_hidden, rng, "aa");
  params.coincidence_av = init_coincidence_head(config.audio.embed_dim,
                                                config.head_hidden, rng, "av");

  SplitRng cluster_rng = rng.fork("clust.w");
  std::vector<double> rows(config.clusters * config.audio.embed_dim);
  for (double& x : rows) x = cluster_rng.normal();
  params.cluster_head.weight = Tensor::from_values(
      {config.clusters, config.audio.embed_dim}, std::move(rows), true);
  params.cluster_head.logit_scale = config.logit_scale;
  renormalize_cluster_rows(params.cluster_head);

  params.classifier.hidden_weight = uniform_fan_in(
      config.audio.embed_dim, config.classifier_hidden, rng.fork("class.w1"));
  params.classifier.hidden_bias = Tensor::zeros({config.classifier_hidden}, true);
  params.classifier.output_weight =
      Tensor::zeros({config.classifier_hidden, config.classes}, true);
  params.classifier.output_bias = Tensor::zeros({config.classes}, true);
  return params;
}

std::vector<std::pair<std::string, Tensor>> ModelParams::named() const {
  std::vector<std::pair<std::string, Tensor>> out;
  auto add_mlp = [&out](const std::string& prefix, const MlpParams& mlp) {
    for (std::size_t i = 0; i < mlp.weights.size(); ++i) {
      out.emplace_back(prefix + ".w" + std::to_string(i), mlp.weights[i]);
      out.emplace_back(prefix + ".b" + std::to_string(i), mlp.biases[i]);
    }
  };
  auto add_head = [&out](const std::string& prefix,
                         const CoincidenceHeadParams& head) {
    out.emplace_back(prefix + ".w1", head.hidden_weight);
    out.emplace_back(prefix + ".b1", head.hidden_bias);
    out.emplace_back(prefix + ".w2", head.output_weight);
    out.emplace_back(prefix + ".b2", head.output_bias);
  };
  add_mlp("f", audio_encoder);
  add_mlp("g", image_encoder);
  add_head("aa", coincidence_aa);
  add_head("av", coincidence_av);
  out.emplace_back("clust.w", cluster_head.weight);
  out.emplace_back("class.w1", classifier.hidden_weight);
  out.emplace_back("class.b1", classifier.hidden_bias);
  out.emplace_back("class.w2", classifier.output_weight);
  out.emplace_back("class.b2", classifier.output_bias);
  return out;
}

std::vector<Tensor> ModelParams::all() const {
  std::vector<Tensor> out;
  for (auto& [name, tensor] : named()) out.push_back(tensor);
  return out;
}

ModelParams ModelParams::detached() const {
  ModelParams copy;
  auto det_mlp = [](const MlpParams& mlp) {
    MlpParams d;
    for (const Tensor& w : mlp.weights) d.weights.push_back(w.detach());
    for (const Tensor& b : mlp.biases) d.biases.push_back(b.detach());
    return d;
  };
  auto det_head = [](const CoincidenceHeadParams& h) {
    return CoincidenceHeadParams{h.hidden_weight.detach(),
                                 h.hidden_bias.detach(),
                                 h.output_weight.detach(),
                                 h.output_bias.detach()};
  };
  copy.audio_encoder = det_mlp(audio_encoder);
  copy.image_encoder = det_mlp(image_encoder);
  copy.coincidence_aa = det_head(coincidence_aa);
  copy.coincidence_av = det_head(coincidence_av);
  copy.cluster_head =
      ClusterHeadParams{cluster_head.weight.detach(), cluster_head.logit_scale};
  copy.classifier = ClassifierHeadParams{
      classifier.hidden_weight.detach(), classifier.hidden_bias.detach(),
      classifier.output_weight.detach(), classifier.output_bias.detach()};
  return copy;
}

Tensor embed_batch(const MlpParams& params, const Tensor& x) {
  if (x.rank() != 2) {
    throw DimensionError("embed_batch: expected [B, input_dim], got " +
                         shape_str(x.shape()));
  }
  Tensor h = x;
  const std::size_t layers = params.weights.size();
  for (std::size_t i = 0; i < layers; ++i) {
    h = add(matmul(h, params.weights[i]), params.biases[i]);
    if (i + 1 < layers) h = relu(h);  // linear output layer
  }
  return h;
}

namespace {

Tensor embed_single(const MlpParams& params, const Tensor& x,
                    const char* name) {
  if (x.rank() != 1) {
    throw DimensionError(std::string(name) + ": expected flat input, got " +
                         shape_str(x.shape()));
  }
  const std::size_t n = x.shape()[0];
  if (params.weights.empty() || params.weights[0].shape()[0] != n) {
    throw DimensionError(std::string(name) + ": input width " +
                         std::to_string(n) + " does not match encoder");
  }
  Tensor row = embed_batch(params, reshape(x, {1, n}));
  return reshape(row, {row.shape()[1]});
}

}  // namespace

Tensor embed_audio(const ModelParams& params, const Tensor& x) {
  return embed_single(params.audio_encoder, x, "embed_audio");
}

Tensor embed_image(const ModelParams& params, const Tensor& x) {
  return embed_single(params.image_encoder, x, "embed_image");
}

Tensor coincidence_probability_matrix(const CoincidenceHeadParams& head,
                                      const Tensor& e1, const Tensor& e2) {
  if (e1.rank() != 2 || e2.rank() != 2 ||
      e1.shape()[1] != e2.shape()[1]) {
    throw DimensionError("coincidence_probability_matrix: embedding batches "
                         "must be [B, d] with a shared d");
  }
  const std::size_t batch = e1.shape()[0];
  const std::size_t pair_width = head.hidden_weight.shape()[0];
  if (e1.shape()[1] * 2 != pair_width) {
    throw DimensionError(
        "coincidence head expects concatenated width " +
        std::to_string(pair_width) + ", got 2x" +
        std::to_string(e1.shape()[1]));
  }
  Tensor z = pair_cross_concat(e1, e2);                    // [B*B, 2d]
  Tensor h = relu(add(matmul(z, head.hidden_weight), head.hidden_bias));
  Tensor logits = add(matmul(h, head.output_weight), head.output_bias);
  Tensor probs = clamp_probability(sigmoid(logits));       // [B*B, 1]
  return reshape(probs, {batch, batch});
}

Tensor coincidence_prob(const CoincidenceHeadParams& head, const Tensor& e1,
                        const Tensor& e2) {
  if (e1.rank() != 1 || e2.rank() != 1 || e1.shape() != e2.shape()) {
    throw DimensionError("coincidence_prob: expected two [d] embeddings");
  }
  const std::size_t d = e1.shape()[0];
  Tensor m = coincidence_probability_matrix(head, reshape(e1, {1, d}),
                                            reshape(e2, {1, d}));
  return reshape(m, {});
}

Tensor cluster_distribution_rows(const ClusterHeadParams& head,
                                 const Tensor& embeddings) {
  if (embeddings.rank() != 2 ||
      embeddings.shape()[1] != head.weight.shape()[1]) {
    throw DimensionError("cluster_distribution_rows: expected [B, d] matching "
                         "the cluster head");
  }
  Tensor unit = l2_normalize(embeddings);
  Tensor cos = matmul(unit, transpose(head.weight));  // [B, K]
  return softmax_scaled(cos, head.logit_scale);
}

Tensor cluster_distribution(const ClusterHeadParams& head, const Tensor& e) {
  if (e.rank() != 1) {
    throw DimensionError("cluster_distribution: expected [d] embedding");
  }
  Tensor rows =
      cluster_distribution_rows(head, reshape(e, {1, e.shape()[0]}));
  return reshape(rows, {rows.shape()[1]});
}

Tensor class_distribution_rows(const ClassifierHeadParams& head,
                               const Tensor& embeddings) {
  if (embeddings.rank() != 2 ||
      embeddings.shape()[1] != head.hidden_weight.shape()[0]) {
    throw DimensionError("class_distribution_rows: expected [B, d] matching "
                         "the classifier head");
  }
  Tensor h = relu(add(matmul(embeddings, head.hidden_weight), head.hidden_bias));
  Tensor logits = add(matmul(h, head.output_weight), head.output_bias);
  return softmax_scaled(logits, 1.0);
}

Tensor class_distribution(const ClassifierHeadParams& head, const Tensor& e) {
  if (e.rank() != 1) {
    throw DimensionError("class_distribution: expected [d] embedding");
  }
  Tensor rows = class_distribution_rows(head, reshape(e, {1, e.shape()[0]}));
  return reshape(rows, {rows.shape()[1]});
}

void renormalize_cluster_rows(ClusterHeadParams& head) {
  const std::size_t k = head.weight.shape()[0];
  const std::size_t d = head.weight.shape()[1];
  std::vector<double>& w = head.weight.values_mut();
  for (std::size_t r = 0; r < k; ++r) {
    double sq = 0.0;
    for (std::size_t j = 0; j < d; ++j) sq += w[r * d + j] * w[r * d + j];
    const double norm = std::sqrt(sq);
    if (norm < kNormFloor) {
      throw DegenerateInputError("cluster row " + std::to_string(r) +
                                 " collapsed to zero norm");
    }
    for (std::size_t j = 0; j < d; ++j) w[r * d + j] /= norm;
  }
}

}  // namespace cocoon
