#pragma once

#include "ldam/data.hpp"
#include "ldam/embeddings.hpp"
#include "ldam/numerics.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace ldam {

enum class Modality { multimodal, text_only, timeseries_only };
enum class AttentionKind { cross, self };

std::string to_string(Modality m);
std::string to_string(AttentionKind a);
Modality parse_modality(const std::string& s);
AttentionKind parse_attention(const std::string& s);

struct ModelConfig {
  Eigen::Index embed_dim = 64;     // D
  Eigen::Index hidden = 32;        // F, split evenly between GRU directions
  Eigen::Index max_note_len = 512; // notes are truncated to this many tokens
  Eigen::Index num_indicators = 17;
  Eigen::Index num_labels = 25;
  Eigen::Index time_steps = 48;
  Eigen::Index ngram = 3;          // text attention conv width
  Eigen::Index ts_ngram = 1;       // indicator attention conv width
  Eigen::Index conv_channels = 0;  // 0 -> num_labels
  Modality mode = Modality::multimodal;
  AttentionKind attention = AttentionKind::cross;
  double lambda_label = 1.0;

  void validate() const;
  Eigen::Index out_channels() const { return conv_channels > 0 ? conv_channels : num_labels; }
  /// Conv input channels: label count for cross attention, feature count for self attention.
  Eigen::Index text_conv_inputs() const { return attention == AttentionKind::cross ? num_labels : max_note_len; }
  Eigen::Index ts_conv_inputs() const { return attention == AttentionKind::cross ? num_labels : num_indicators; }
};

/// y = W x + b, applied column-wise.
struct Linear {
  Tensor weight;  // {out, in}
  Tensor bias;    // {out}
  Tensor operator()(const Tensor& x) const;
};

struct Conv1d {
  Tensor kernels;  // {C_out, C_in, k}
  Tensor bias;     // {C_out}
};

struct ModelParams {
  Linear f1;  // D -> F, shared by both branches and the label embeddings
  Conv1d text_conv;
  Conv1d ts_conv;
  GruCell gru_channel_fwd, gru_channel_bwd;      // input 1, hidden F/2
  GruCell gru_integrate_fwd, gru_integrate_bwd;  // input F, hidden F/2
  Linear f6;  // 2F -> F
  Linear f7;  // F -> N_Y

  static ModelParams init(const ModelConfig& config, std::uint64_t seed);

  /// Stable order; names are used in checkpoints and diagnostics.
  std::vector<std::pair<std::string, Tensor*>> named();
  std::vector<Tensor*> tensors();
  /// Deep copy of all values into fresh leaves.
  ModelParams clone() const;
  void check_shapes(const ModelConfig& config) const;
};

/// Frozen E^S {D, N_S} and E^Y {D, N_Y}.
struct NameEmbeddings {
  Matrix indicators;
  Matrix labels;
};

NameEmbeddings encode_names(const TaskSchema& schema, const EmbeddingProvider& provider);

/// A sample with its note already mapped to E^M {D, L<=L_max}.
struct EncodedSample {
  Matrix note;
  Matrix timeseries;  // {N_S, T}
  Matrix labels;      // {N_Y, 1}
};

EncodedSample encode_sample(const EhrSample& sample, const EmbeddingProvider& provider, const ModelConfig& config);
std::vector<EncodedSample> encode_dataset(const std::vector<EhrSample>& samples, const EmbeddingProvider& provider,
                                          const ModelConfig& config);

/// softmax(maxpool(relu(conv(G^T)))) with G = f1(feat)^T f1(labels) / sqrt(F). feat {D, n} -> {n}.
Tensor cross_attention_scores(const Tensor& features, const Tensor& labels, const Conv1d& conv, const Linear& f1);
/// Same pipeline with G = f1(feat)^T f1(feat) / sqrt(F). Conv kernels may carry more
/// input channels than n; only the first n are used.
Tensor self_attention_scores(const Tensor& features, const Conv1d& conv, const Linear& f1);

struct TextOutput {
  Tensor z_m;   // {F}
  Tensor beta;  // {L}
};

TextOutput text_forward(const Tensor& note, const Tensor& label_embeddings, const ModelParams& params,
                        const ModelConfig& config);

struct SeriesOutput {
  Tensor z_s;    // {F, B}
  Tensor alpha;  // {N_S}
};

/// Channel-wise BiGRU, a second BiGRU over time per channel, then alpha-weighted sum
/// of the per-channel final states. `series` holds one {N_S, T} tensor per sample.
SeriesOutput timeseries_forward(std::span<const Tensor> series, const Tensor& indicator_embeddings,
                                const Tensor& label_embeddings, const ModelParams& params, const ModelConfig& config);

/// sigmoid(f7(f6(z_m (+) z_s))) for column-batched {F, B} inputs -> {N_Y, B}.
Tensor fuse_predict(const Tensor& z_m, const Tensor& z_s, const ModelParams& params);

struct LossTerms {
  Tensor total;
  Tensor term1;  // mean binary cross-entropy
  Tensor term2;  // label-name discrimination cross-entropy
};

LossTerms ldam_loss(const Tensor& y_hat, const Matrix& targets, const Tensor& label_embeddings,
                    const ModelParams& params, double lambda_label);

struct BatchForward {
  Tensor y_hat;               // {N_Y, B}
  std::vector<Tensor> beta;   // per sample {L_b}; empty in timeseries_only mode
  Tensor alpha;               // {N_S}; undefined in text_only mode
  Tensor z_m;                 // {F, B}
  Tensor z_s;                 // {F, B}
};

/// Differentiable forward over tensor inputs (notes {D, L_b}, series {N_S, T}).
BatchForward forward_tensors(std::span<const Tensor> notes, std::span<const Tensor> series,
                             const Tensor& indicator_embeddings, const Tensor& label_embeddings,
                             const ModelParams& params, const ModelConfig& config);

BatchForward forward_batch(std::span<const EncodedSample* const> batch, const NameEmbeddings& names,
                           const ModelParams& params, const ModelConfig& config);

struct ForwardOutput {
  Eigen::VectorXd y_hat;
  Eigen::VectorXd beta;
  Eigen::VectorXd alpha;
  Eigen::VectorXd z_m;
  Eigen::VectorXd z_s;
};

ForwardOutput forward(const EncodedSample& sample, const NameEmbeddings& names, const ModelParams& params,
                      const ModelConfig& config);
ForwardOutput forward(const EhrSample& sample, const EmbeddingProvider& provider, const TaskSchema& schema,
                      const ModelParams& params, const ModelConfig& config);

/// Scores {samples, N_Y} from value-only forward passes.
Eigen::MatrixXd predict(const std::vector<EncodedSample>& samples, const NameEmbeddings& names,
                        const ModelParams& params, const ModelConfig& config, std::size_t batch_size = 64);

}  // namespace ldam
