#include "afd/afclap.hpp"

#include <cmath>
#include <string>

#include "afd/ops.hpp"

namespace afd::afclap {

void ContrastiveBatch::validate() const {
  if (batch == 0) throw Error("contrastive batch: B must be at least 1");
  if (positives_per_item == 0) throw Error("contrastive batch: M must be at least 1");
  if (!(tau > 0.0) || !std::isfinite(tau)) throw Error("contrastive batch: tau must be positive, got " + std::to_string(tau));
  if (!audio.defined() || audio.rank() != 2 || audio.rows() != batch) {
    throw ShapeError("contrastive batch: audio must be B x d with B=" + std::to_string(batch));
  }
  const std::size_t d = audio.cols();
  if (!positives.defined() || positives.rank() != 2 || positives.rows() != batch * positives_per_item ||
      positives.cols() != d) {
    throw ShapeError("contrastive batch: positives must be (B*M) x d, got " +
                     (positives.defined() ? shape_str(positives.shape()) : std::string("undefined")));
  }
  if (negatives_per_positive > 0) {
    const std::size_t rows = batch * positives_per_item * negatives_per_positive;
    if (!negatives.defined() || negatives.rank() != 2 || negatives.rows() != rows || negatives.cols() != d) {
      throw ShapeError("contrastive batch: negatives must be (B*M*N) x d, got " +
                       (negatives.defined() ? shape_str(negatives.shape()) : std::string("undefined")));
    }
  }
}

ContrastiveBatch make_batch(const Tensor& audio, const Tensor& positives, const Tensor& negatives,
                            std::size_t positives_per_item, std::size_t negatives_per_positive, double tau) {
  ContrastiveBatch b;
  b.audio = ops::l2_normalize(audio, 1);
  b.positives = ops::l2_normalize(positives, 1);
  if (negatives_per_positive > 0) b.negatives = ops::l2_normalize(negatives, 1);
  b.batch = audio.rows();
  b.positives_per_item = positives_per_item;
  b.negatives_per_positive = negatives_per_positive;
  b.tau = tau;
  b.validate();
  return b;
}

double similarity(std::span<const double> u, std::span<const double> v, double tau) {
  if (!(tau > 0.0)) throw Error("similarity: tau must be positive");
  if (u.size() != v.size()) throw ShapeError("similarity: dimension mismatch " + std::to_string(u.size()) + " vs " + std::to_string(v.size()));
  double dot = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) dot += u[i] * v[i];
  return std::exp(dot / tau);
}

namespace {

std::span<const double> row(const Tensor& t, std::size_t r) { return t.values().subspan(r * t.cols(), t.cols()); }

void check_index(const ContrastiveBatch& b, std::size_t idx, const char* what) {
  if (idx >= b.batch) {
    throw Error(std::string(what) + ": index " + std::to_string(idx) + " out of range for batch of " + std::to_string(b.batch));
  }
}

Tensor loss_impl(const ContrastiveBatch& batch, const Tensor* log_inv_tau) {
  batch.validate();
  const std::size_t B = batch.batch, M = batch.positives_per_item, N = batch.negatives_per_positive;
  auto scale_logits = [&](const Tensor& raw) {
    return log_inv_tau ? ops::mul(raw, ops::exp(*log_inv_tau)) : ops::scale(raw, 1.0 / batch.tau);
  };
  Tensor total;
  for (std::size_t i = 0; i < B; ++i) {
    try {
      const Tensor anchor = ops::transpose(ops::slice(batch.audio, 0, i, i + 1));  // d x 1
      // Row (j*M + m) is log s(T(P(x_j)_m), A(x_i)).
      const Tensor column = scale_logits(ops::matmul(batch.positives, anchor));
      const Tensor numerator = ops::logsumexp(ops::slice(column, 0, i * M, (i + 1) * M), 0);
      Tensor pool = column;
      if (N > 0) {
        const Tensor negs = ops::slice(batch.negatives, 0, i * M * N, (i + 1) * M * N);
        const Tensor neg_logits = scale_logits(ops::matmul(negs, anchor));
        pool = ops::concat({column, neg_logits}, 0);
      }
      const Tensor denominator = ops::logsumexp(pool, 0);
      const Tensor term = ops::sub(denominator, numerator);
      total = total.defined() ? ops::add(total, term) : term;
    } catch (const NonFiniteError& e) {
      throw NonFiniteError("contrastive_loss: non-finite term at index " + std::to_string(i) + ": " + e.what());
    }
  }
  return ops::reshape(ops::scale(total, 1.0 / static_cast<double>(B)), {1});
}

}  // namespace

double positive_mass(const ContrastiveBatch& batch, std::size_t j, std::size_t i) {
  batch.validate();
  check_index(batch, j, "positive_mass");
  check_index(batch, i, "positive_mass");
  const auto a = row(batch.audio, i);
  double s = 0.0;
  for (std::size_t m = 0; m < batch.positives_per_item; ++m)
    s += similarity(row(batch.positives, j * batch.positives_per_item + m), a, batch.tau);
  return s;
}

double negative_mass(const ContrastiveBatch& batch, std::size_t i) {
  batch.validate();
  check_index(batch, i, "negative_mass");
  const std::size_t M = batch.positives_per_item, N = batch.negatives_per_positive;
  if (N == 0) return 0.0;
  const auto a = row(batch.audio, i);
  double s = 0.0;
  for (std::size_t m = 0; m < M; ++m)
    for (std::size_t n = 0; n < N; ++n) s += similarity(row(batch.negatives, (i * M + m) * N + n), a, batch.tau);
  return s;
}

Tensor contrastive_loss(const ContrastiveBatch& batch) { return loss_impl(batch, nullptr); }

Tensor contrastive_loss(const ContrastiveBatch& batch, const Tensor& log_inv_tau) {
  if (log_inv_tau.numel() != 1) throw ShapeError("contrastive_loss: log_inv_tau must be a scalar");
  return loss_impl(batch, &log_inv_tau);
}

}  // namespace afd::afclap
