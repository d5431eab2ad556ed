#pragma once

#include "ldam/model.hpp"

#include <random>
#include <vector>

namespace ldam::testing {

inline Matrix gaussian(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> dist(0.0, scale);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

inline Tensor leaf(const Matrix& m, bool grad = false) { return Tensor({m.rows(), m.cols()}, m, grad); }

/// Small model with random inputs; notes in a batch may differ in length.
struct TinyInstance {
  ModelConfig config;
  ModelParams params;
  std::vector<Matrix> notes;   // {D, L_b}
  std::vector<Matrix> series;  // {N_S, T}
  Matrix e_s;                  // {D, N_S}
  Matrix e_y;                  // {D, N_Y}
  Matrix targets;              // {N_Y, B}

  std::vector<Tensor> note_tensors(bool grad = false) const {
    std::vector<Tensor> out;
    for (const auto& n : notes) out.push_back(leaf(n, grad));
    return out;
  }
  std::vector<Tensor> series_tensors(bool grad = false) const {
    std::vector<Tensor> out;
    for (const auto& s : series) out.push_back(leaf(s, grad));
    return out;
  }
  BatchForward run() const {
    const auto n = note_tensors();
    const auto s = series_tensors();
    return forward_tensors(n, s, leaf(e_s), leaf(e_y), params, config);
  }
};

/// Defaults follow the gradient-fidelity instance: L=6, N_S=3, N_Y=4, T=5, D=8, F=4.
inline ModelConfig tiny_config(Modality mode = Modality::multimodal, AttentionKind attention = AttentionKind::cross) {
  ModelConfig c;
  c.embed_dim = 8;
  c.hidden = 4;
  c.max_note_len = 6;
  c.num_indicators = 3;
  c.num_labels = 4;
  c.time_steps = 5;
  c.mode = mode;
  c.attention = attention;
  return c;
}

inline TinyInstance make_tiny(std::uint64_t seed, ModelConfig config, std::vector<Eigen::Index> note_lengths = {6}) {
  std::mt19937_64 rng(seed * 7919 + 11);
  TinyInstance t{config, ModelParams::init(config, seed), {}, {}, {}, {}, {}};
  for (auto len : note_lengths) {
    t.notes.push_back(gaussian(config.embed_dim, len, rng));
    t.series.push_back(gaussian(config.num_indicators, config.time_steps, rng));
  }
  t.e_s = gaussian(config.embed_dim, config.num_indicators, rng);
  t.e_y = gaussian(config.embed_dim, config.num_labels, rng);
  t.targets.resize(config.num_labels, static_cast<Eigen::Index>(note_lengths.size()));
  std::bernoulli_distribution coin(0.5);
  for (Eigen::Index i = 0; i < t.targets.size(); ++i) t.targets.data()[i] = coin(rng) ? 1.0 : 0.0;
  return t;
}

}  // namespace ldam::testing
