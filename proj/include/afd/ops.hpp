#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "afd/tensor.hpp"

namespace afd::ops {

// Elementwise ops require equal shapes, except that either side may be a
// single-element tensor (scalar broadcast). No other broadcasting exists.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double value);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor gelu(const Tensor& x);  // tanh approximation

// 2-D only.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& x);
// x[r, :] + bias and x[r, :] * gain for every row; bias/gain have `cols` elements.
Tensor add_bias(const Tensor& x, const Tensor& bias);
Tensor mul_columns(const Tensor& x, const Tensor& gain);
// Rows of `table` selected by `ids`, in order.
Tensor gather_rows(const Tensor& table, std::span<const std::size_t> ids);
// Element x[r, cols[r]] for every row r, as a vector of length rows.
Tensor pick(const Tensor& x, std::span<const std::size_t> cols);

Tensor reshape(const Tensor& x, Shape shape);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end);

Tensor sum(const Tensor& x);  // all elements -> scalar
Tensor sum(const Tensor& x, std::size_t axis);
Tensor mean(const Tensor& x);
Tensor mean(const Tensor& x, std::size_t axis);

// Reductions over `axis` keep the axis with extent 1 out of the result shape.
Tensor softmax(const Tensor& x, std::size_t axis);
Tensor log_softmax(const Tensor& x, std::size_t axis);
Tensor logsumexp(const Tensor& x, std::size_t axis);
Tensor logsumexp(const Tensor& x);
Tensor layer_norm(const Tensor& x, std::size_t axis, double eps = 1e-5);
// Zero slices map to zero and raise a warning.
Tensor l2_normalize(const Tensor& x, std::size_t axis);

/// Scores evaluated by attention kernels, split by kind.
struct AttentionCounter {
  std::uint64_t self_scores = 0;
  std::uint64_t cross_scores = 0;
  std::uint64_t self_calls = 0;
  std::uint64_t cross_calls = 0;
};

struct AttentionOptions {
  std::size_t heads = 1;
  bool causal = false;
  bool cross = false;  // only affects which counter is bumped
  AttentionCounter* counter = nullptr;
};

/// Fused multi-head scaled dot-product attention. q: l1 x d, k/v: l2 x d;
/// heads split d into equal contiguous column blocks.
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, const AttentionOptions& opts);

// Mean cross-entropy of rows of `logits` against integer targets.
Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> targets);

}  // namespace afd::ops
