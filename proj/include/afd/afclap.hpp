#pragma once

#include <cstddef>
#include <span>

#include "afd/tensor.hpp"

namespace afd::afclap {

inline constexpr double kDefaultTau = 0.07;

/// One contrastive batch. Rows are expected to be unit vectors (the towers
/// normalize their outputs); `contrastive_loss` does not renormalize.
///
///   audio      B x d         row i is A(x_i)
///   positives  (B*M) x d     row i*M + m is T(P(x_i)_m)
///   negatives  (B*M*N) x d   row (i*M + m)*N + n is T(N(x_i)_{m,n}); undefined when N = 0
struct ContrastiveBatch {
  Tensor audio;
  Tensor positives;
  Tensor negatives;
  std::size_t batch = 0;
  std::size_t positives_per_item = 0;  // M
  std::size_t negatives_per_positive = 0;  // N
  double tau = kDefaultTau;

  /// Throws ShapeError/Error when counts, widths or tau are inconsistent.
  void validate() const;
  std::size_t dim() const { return audio.cols(); }
};

/// Builds a batch from raw (unnormalized) embeddings, L2-normalizing each row
/// on the tape.
ContrastiveBatch make_batch(const Tensor& audio, const Tensor& positives, const Tensor& negatives,
                            std::size_t positives_per_item, std::size_t negatives_per_positive,
                            double tau = kDefaultTau);

/// s(u, v) = exp(u.v / tau)
double similarity(std::span<const double> u, std::span<const double> v, double tau);

/// S(j, i): sum over m of s(T(P(x_j)_m), A(x_i)). Zero-based indices.
double positive_mass(const ContrastiveBatch& batch, std::size_t j, std::size_t i);

/// S_neg(i): sum over (m, n) of s(T(N(x_i)_{m,n}), A(x_i)). Zero when N = 0.
double negative_mass(const ContrastiveBatch& batch, std::size_t i);

/// L = -(1/B) sum_i log[ S(i,i) / (S_neg(i) + sum_j S(j,i)) ], evaluated with
/// log-sum-exp over the logits so small tau cannot overflow.
Tensor contrastive_loss(const ContrastiveBatch& batch);

/// Same objective with a learnable temperature: logits are scaled by
/// exp(log_inv_tau) instead of 1/batch.tau.
Tensor contrastive_loss(const ContrastiveBatch& batch, const Tensor& log_inv_tau);

}  // namespace afd::afclap
