#include "ldam/model.hpp"

#include <cmath>
#include <map>
#include <random>
#include <stdexcept>

namespace ldam {

using numerics::Index;
using numerics::Shape;

std::string to_string(Modality m) {
  switch (m) {
    case Modality::multimodal: return "multimodal";
    case Modality::text_only: return "text_only";
    case Modality::timeseries_only: return "timeseries_only";
  }
  return "?";
}

std::string to_string(AttentionKind a) { return a == AttentionKind::cross ? "cross" : "self"; }

Modality parse_modality(const std::string& s) {
  if (s == "multimodal") return Modality::multimodal;
  if (s == "text_only") return Modality::text_only;
  if (s == "timeseries_only") return Modality::timeseries_only;
  throw std::invalid_argument("unknown mode '" + s + "' (expected multimodal, text_only or timeseries_only)");
}

AttentionKind parse_attention(const std::string& s) {
  if (s == "cross") return AttentionKind::cross;
  if (s == "self") return AttentionKind::self;
  throw std::invalid_argument("unknown attention '" + s + "' (expected cross or self)");
}

void ModelConfig::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw std::invalid_argument("model config: " + what);
  };
  require(embed_dim >= 1, "embed_dim must be >= 1");
  require(hidden >= 2 && hidden % 2 == 0, "hidden must be even and >= 2");
  require(max_note_len >= 1, "max_note_len must be >= 1");
  require(num_indicators >= 1 && num_labels >= 1 && time_steps >= 1, "N_S, N_Y and T must be >= 1");
  require(ngram >= 1 && ngram % 2 == 1, "ngram must be odd");
  require(ts_ngram >= 1 && ts_ngram % 2 == 1, "ts_ngram must be odd");
  require(conv_channels >= 0, "conv_channels must be >= 0");
  require(std::isfinite(lambda_label) && lambda_label >= 0.0, "lambda_label must be finite and >= 0");
}

Tensor Linear::operator()(const Tensor& x) const { return add_bias(matmul(weight, x), bias); }

namespace {

Linear make_linear(Index in, Index out, std::mt19937_64& rng) {
  Linear l{Tensor::zeros({out, in}, true), Tensor::zeros({out}, true)};
  numerics::fill_fan_in_uniform(l.weight, in, rng);
  return l;
}

Conv1d make_conv(Index c_in, Index c_out, Index width, std::mt19937_64& rng) {
  Conv1d c{Tensor::zeros({c_out, c_in, width}, true), Tensor::zeros({c_out}, true)};
  numerics::fill_fan_in_uniform(c.kernels, c_in * width, rng);
  return c;
}

Tensor deep_copy(const Tensor& t) { return Tensor(t.shape(), t.value(), t.requires_grad()); }

Linear copy(const Linear& l) { return {deep_copy(l.weight), deep_copy(l.bias)}; }
Conv1d copy(const Conv1d& c) { return {deep_copy(c.kernels), deep_copy(c.bias)}; }
GruCell copy(const GruCell& g) {
  return {deep_copy(g.w_z), deep_copy(g.w_r), deep_copy(g.w_h), deep_copy(g.u_z), deep_copy(g.u_r),
          deep_copy(g.u_h), deep_copy(g.b_z), deep_copy(g.b_r), deep_copy(g.b_h)};
}

// Shared tail of both attention variants: G {n, m} -> softmax over n.
Tensor attention_from_similarity(const Tensor& similarity, const Conv1d& conv) {
  const Index channels = similarity.extent(1);
  const Index available = conv.kernels.extent(1);
  Tensor kernels = conv.kernels;
  if (channels != available) {
    if (channels > available) {
      throw numerics::DimensionError("attention conv expects " + std::to_string(available) +
                                     " input channels, similarity has " + std::to_string(channels));
    }
    const Index c_out = conv.kernels.extent(0);
    const Index width = conv.kernels.extent(2);
    kernels = reshape(slice_cols(reshape(conv.kernels, {c_out, available * width}), 0, channels * width),
                      {c_out, channels, width});
  }
  return softmax(maxpool_channels(relu(conv1d_same(transpose(similarity), kernels, conv.bias))));
}

Tensor scaled_dot(const Tensor& projected_a, const Tensor& projected_b) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(projected_a.extent(0)));
  return affine(matmul(transpose(projected_a), projected_b), scale);
}

Tensor cross_from_projected(const Tensor& projected_features, const Tensor& projected_labels, const Conv1d& conv) {
  if (projected_features.extent(0) != projected_labels.extent(0)) {
    throw numerics::DimensionError("cross attention: projected dimensions differ");
  }
  return attention_from_similarity(scaled_dot(projected_features, projected_labels), conv);
}

Tensor self_from_projected(const Tensor& projected_features, const Conv1d& conv) {
  return attention_from_similarity(scaled_dot(projected_features, projected_features), conv);
}

Tensor branch_attention(const Tensor& projected_features, const Tensor& projected_labels, const Conv1d& conv,
                        AttentionKind kind) {
  return kind == AttentionKind::cross ? cross_from_projected(projected_features, projected_labels, conv)
                                      : self_from_projected(projected_features, conv);
}

TextOutput text_forward_projected(const Tensor& note, const Tensor& projected_labels, const ModelParams& params,
                                  const ModelConfig& config) {
  if (note.dim() != 2) throw numerics::DimensionError("text_forward: note must be {D, L}");
  Tensor beta = branch_attention(params.f1(note), projected_labels, params.text_conv, config.attention);
  Tensor pooled = matmul(note, beta);
  return {params.f1(pooled), beta};
}

}  // namespace

ModelParams ModelParams::init(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  const Index d = config.embed_dim;
  const Index f = config.hidden;
  const Index half = f / 2;
  ModelParams p;
  p.f1 = make_linear(d, f, rng);
  p.text_conv = make_conv(config.text_conv_inputs(), config.out_channels(), config.ngram, rng);
  p.ts_conv = make_conv(config.ts_conv_inputs(), config.out_channels(), config.ts_ngram, rng);
  p.gru_channel_fwd = GruCell::random(1, half, rng);
  p.gru_channel_bwd = GruCell::random(1, half, rng);
  p.gru_integrate_fwd = GruCell::random(f, half, rng);
  p.gru_integrate_bwd = GruCell::random(f, half, rng);
  p.f6 = make_linear(2 * f, f, rng);
  p.f7 = make_linear(f, config.num_labels, rng);
  return p;
}

std::vector<std::pair<std::string, Tensor*>> ModelParams::named() {
  std::vector<std::pair<std::string, Tensor*>> out{
      {"f1.weight", &f1.weight},         {"f1.bias", &f1.bias},
      {"text_conv.kernels", &text_conv.kernels}, {"text_conv.bias", &text_conv.bias},
      {"ts_conv.kernels", &ts_conv.kernels},     {"ts_conv.bias", &ts_conv.bias},
  };
  for (auto [prefix, cell] : {std::pair<const char*, GruCell*>{"gru_channel_fwd", &gru_channel_fwd},
                              {"gru_channel_bwd", &gru_channel_bwd},
                              {"gru_integrate_fwd", &gru_integrate_fwd},
                              {"gru_integrate_bwd", &gru_integrate_bwd}}) {
    for (auto& [name, t] : cell->named()) out.emplace_back(std::string(prefix) + "." + name, t);
  }
  out.emplace_back("f6.weight", &f6.weight);
  out.emplace_back("f6.bias", &f6.bias);
  out.emplace_back("f7.weight", &f7.weight);
  out.emplace_back("f7.bias", &f7.bias);
  return out;
}

std::vector<Tensor*> ModelParams::tensors() {
  std::vector<Tensor*> out;
  for (auto& [name, t] : named()) out.push_back(t);
  return out;
}

ModelParams ModelParams::clone() const {
  return {copy(f1),
          copy(text_conv),
          copy(ts_conv),
          copy(gru_channel_fwd),
          copy(gru_channel_bwd),
          copy(gru_integrate_fwd),
          copy(gru_integrate_bwd),
          copy(f6),
          copy(f7)};
}

void ModelParams::check_shapes(const ModelConfig& config) const {
  const ModelParams reference = init(config, 0);
  auto mine = const_cast<ModelParams*>(this)->named();
  auto expected = const_cast<ModelParams&>(reference).named();
  for (std::size_t i = 0; i < mine.size(); ++i) {
    if (mine[i].second->shape() != expected[i].second->shape()) {
      throw numerics::DimensionError("parameter " + mine[i].first + " has shape " +
                                     numerics::shape_string(mine[i].second->shape()) + ", config requires " +
                                     numerics::shape_string(expected[i].second->shape()));
    }
  }
}

NameEmbeddings encode_names(const TaskSchema& schema, const EmbeddingProvider& provider) {
  return {embed_names(provider, schema.indicator_names), embed_names(provider, schema.label_names)};
}

EncodedSample encode_sample(const EhrSample& sample, const EmbeddingProvider& provider, const ModelConfig& config) {
  if (provider.dim() != config.embed_dim) {
    throw std::invalid_argument("embedding dim " + std::to_string(provider.dim()) + " != model D " +
                                std::to_string(config.embed_dim));
  }
  if (sample.timeseries.rows() != config.num_indicators || sample.timeseries.cols() != config.time_steps) {
    throw numerics::DimensionError("sample '" + sample.id + "' time series does not match N_S x T of the model");
  }
  if (sample.labels.size() != config.num_labels) {
    throw numerics::DimensionError("sample '" + sample.id + "' label count does not match N_Y of the model");
  }
  const std::size_t keep = std::min<std::size_t>(sample.note_tokens.size(), static_cast<std::size_t>(config.max_note_len));
  std::vector<std::string> tokens(sample.note_tokens.begin(), sample.note_tokens.begin() + static_cast<std::ptrdiff_t>(keep));
  return {embed_note(provider, tokens), Matrix(sample.timeseries), Matrix(sample.labels)};
}

std::vector<EncodedSample> encode_dataset(const std::vector<EhrSample>& samples, const EmbeddingProvider& provider,
                                          const ModelConfig& config) {
  std::map<std::string, Eigen::VectorXd> cache;
  std::vector<EncodedSample> out;
  out.reserve(samples.size());
  for (const auto& s : samples) {
    if (s.note_tokens.empty()) throw EmbeddingError("sample '" + s.id + "' has an empty note");
    if (s.timeseries.rows() != config.num_indicators || s.timeseries.cols() != config.time_steps ||
        s.labels.size() != config.num_labels) {
      throw numerics::DimensionError("sample '" + s.id + "' does not match the model's N_S, T or N_Y");
    }
    const auto len = static_cast<Index>(std::min<std::size_t>(s.note_tokens.size(),
                                                              static_cast<std::size_t>(config.max_note_len)));
    Matrix note(config.embed_dim, len);
    for (Index l = 0; l < len; ++l) {
      const auto& tok = s.note_tokens[static_cast<std::size_t>(l)];
      auto it = cache.find(tok);
      if (it == cache.end()) it = cache.emplace(tok, provider.token(tok)).first;
      note.col(l) = it->second;
    }
    out.push_back({std::move(note), Matrix(s.timeseries), Matrix(s.labels)});
  }
  return out;
}

Tensor cross_attention_scores(const Tensor& features, const Tensor& labels, const Conv1d& conv, const Linear& f1) {
  return cross_from_projected(f1(features), f1(labels), conv);
}

Tensor self_attention_scores(const Tensor& features, const Conv1d& conv, const Linear& f1) {
  return self_from_projected(f1(features), conv);
}

TextOutput text_forward(const Tensor& note, const Tensor& label_embeddings, const ModelParams& params,
                        const ModelConfig& config) {
  return text_forward_projected(note, params.f1(label_embeddings), params, config);
}

SeriesOutput timeseries_forward(std::span<const Tensor> series, const Tensor& indicator_embeddings,
                                const Tensor& label_embeddings, const ModelParams& params, const ModelConfig& config) {
  if (series.empty()) throw std::invalid_argument("timeseries_forward: empty batch");
  const Index channels = series[0].extent(0);
  if (channels == 0 || indicator_embeddings.extent(1) != channels) {
    throw numerics::DimensionError("timeseries_forward: indicator embeddings do not match N_S");
  }
  for (const auto& s : series) {
    if (s.shape() != series[0].shape()) throw numerics::DimensionError("timeseries_forward: ragged batch");
  }
  const Index steps = series[0].extent(1);
  const Index batch = static_cast<Index>(series.size());

  // {B*N_S, T}: channel i of sample b is row b*N_S + i; GRU batch columns follow the same order.
  Tensor stacked = vconcat<double>(series);
  std::vector<Tensor> inputs;
  inputs.reserve(static_cast<std::size_t>(steps));
  for (Index t = 0; t < steps; ++t) inputs.push_back(transpose(slice_cols(stacked, t, 1)));

  auto local = numerics::bigru_sequence<double>(params.gru_channel_fwd, params.gru_channel_bwd, inputs);
  auto global = numerics::bigru_sequence<double>(params.gru_integrate_fwd, params.gru_integrate_bwd, local.states);

  Tensor alpha = branch_attention(params.f1(indicator_embeddings), params.f1(label_embeddings), params.ts_conv,
                                  config.attention);
  std::vector<Tensor> columns;
  columns.reserve(series.size());
  for (Index b = 0; b < batch; ++b) columns.push_back(matmul(slice_cols(global.last, b * channels, channels), alpha));
  return {hconcat<double>(columns), alpha};
}

Tensor fuse_predict(const Tensor& z_m, const Tensor& z_s, const ModelParams& params) {
  const std::vector<Tensor> parts{z_m, z_s};
  return sigmoid(params.f7(params.f6(vconcat<double>(parts))));
}

LossTerms ldam_loss(const Tensor& y_hat, const Matrix& targets, const Tensor& label_embeddings,
                    const ModelParams& params, double lambda_label) {
  Tensor term1 = binary_cross_entropy(y_hat, targets);
  const Index labels = label_embeddings.extent(1);
  std::vector<Index> classes(static_cast<std::size_t>(labels));
  for (Index j = 0; j < labels; ++j) classes[static_cast<std::size_t>(j)] = j;
  Tensor term2 = softmax_cross_entropy_cols(params.f7(params.f1(label_embeddings)), std::move(classes));
  return {add(term1, affine(term2, lambda_label)), term1, term2};
}

BatchForward forward_tensors(std::span<const Tensor> notes, std::span<const Tensor> series,
                             const Tensor& indicator_embeddings, const Tensor& label_embeddings,
                             const ModelParams& params, const ModelConfig& config) {
  if (notes.size() != series.size() || notes.empty()) {
    throw std::invalid_argument("forward: need one note and one series per sample");
  }
  if (label_embeddings.extent(0) != config.embed_dim || indicator_embeddings.extent(0) != config.embed_dim) {
    throw numerics::DimensionError("forward: name embeddings do not have dimension D");
  }
  const Index batch = static_cast<Index>(notes.size());
  BatchForward out;

  if (config.mode != Modality::timeseries_only) {
    Tensor projected_labels = params.f1(label_embeddings);
    std::vector<Tensor> z_cols;
    for (const auto& note : notes) {
      if (note.extent(0) != config.embed_dim) throw numerics::DimensionError("forward: note embeddings are not {D, L}");
      auto text = text_forward_projected(note, projected_labels, params, config);
      z_cols.push_back(text.z_m);
      out.beta.push_back(text.beta);
    }
    out.z_m = hconcat<double>(z_cols);
  } else {
    out.z_m = Tensor::zeros({config.hidden, batch});
  }

  if (config.mode != Modality::text_only) {
    auto ts = timeseries_forward(series, indicator_embeddings, label_embeddings, params, config);
    out.z_s = ts.z_s;
    out.alpha = ts.alpha;
  } else {
    out.z_s = Tensor::zeros({config.hidden, batch});
  }

  out.y_hat = fuse_predict(out.z_m, out.z_s, params);
  return out;
}

BatchForward forward_batch(std::span<const EncodedSample* const> batch, const NameEmbeddings& names,
                           const ModelParams& params, const ModelConfig& config) {
  std::vector<Tensor> notes, series;
  notes.reserve(batch.size());
  series.reserve(batch.size());
  for (const auto* s : batch) {
    notes.emplace_back(Shape{s->note.rows(), s->note.cols()}, s->note);
    series.emplace_back(Shape{s->timeseries.rows(), s->timeseries.cols()}, s->timeseries);
  }
  Tensor e_s(Shape{names.indicators.rows(), names.indicators.cols()}, names.indicators);
  Tensor e_y(Shape{names.labels.rows(), names.labels.cols()}, names.labels);
  return forward_tensors(notes, series, e_s, e_y, params, config);
}

ForwardOutput forward(const EncodedSample& sample, const NameEmbeddings& names, const ModelParams& params,
                      const ModelConfig& config) {
  numerics::NoGradGuard guard;
  const EncodedSample* batch[] = {&sample};
  auto out = forward_batch(batch, names, params, config);
  ForwardOutput r;
  r.y_hat = out.y_hat.value().col(0);
  if (!out.beta.empty()) r.beta = out.beta[0].value().col(0);
  if (out.alpha.defined()) r.alpha = out.alpha.value().col(0);
  r.z_m = out.z_m.value().col(0);
  r.z_s = out.z_s.value().col(0);
  return r;
}

ForwardOutput forward(const EhrSample& sample, const EmbeddingProvider& provider, const TaskSchema& schema,
                      const ModelParams& params, const ModelConfig& config) {
  return forward(encode_sample(sample, provider, config), encode_names(schema, provider), params, config);
}

Eigen::MatrixXd predict(const std::vector<EncodedSample>& samples, const NameEmbeddings& names,
                        const ModelParams& params, const ModelConfig& config, std::size_t batch_size) {
  numerics::NoGradGuard guard;
  Eigen::MatrixXd scores(static_cast<Index>(samples.size()), config.num_labels);
  for (std::size_t start = 0; start < samples.size(); start += batch_size) {
    const std::size_t end = std::min(samples.size(), start + batch_size);
    std::vector<const EncodedSample*> batch;
    for (std::size_t i = start; i < end; ++i) batch.push_back(&samples[i]);
    auto out = forward_batch(batch, names, params, config);
    scores.middleRows(static_cast<Index>(start), static_cast<Index>(end - start)) = out.y_hat.value().transpose();
  }
  return scores;
}

}  // namespace ldam
