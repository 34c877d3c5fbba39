#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "afd/error.hpp"

namespace afd {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);

namespace detail {

// One recorded forward op. Leaves have no parents and no backward function.
struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into the parents' grads.
  std::function<void(Node&)> backward;

  bool is_leaf() const { return parents.empty(); }
  std::vector<double>& ensure_grad();
};

}  // namespace detail

/// Dense double-precision tensor with reverse-mode differentiation.
///
/// A Tensor is a cheap handle; copies alias the same storage. Results of ops on
/// inputs that require grad keep their parents alive, so the tape lives exactly
/// as long as the tensors that reference it.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows,
                       bool requires_grad = false);
  static Tensor vector(std::initializer_list<double> values, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;
  // 2-D helpers; a rank-1 tensor is treated as a single row.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> values() const;
  // Direct write access, intended for parameter updates on leaves.
  std::span<double> mutable_values();
  double item() const;
  double at(std::size_t i) const { return values()[i]; }
  double at(std::size_t r, std::size_t c) const { return values()[r * cols() + c]; }

  bool requires_grad() const;
  void set_requires_grad(bool on);
  bool has_grad() const;
  std::span<const double> grad() const;
  void zero_grad();

  const char* op_name() const;
  Tensor detach() const;
  Tensor clone() const;

  const std::shared_ptr<detail::Node>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Creates an op result. When any parent requires grad the result is recorded
/// with `backward`; otherwise the parents are dropped and no tape entry is made.
/// Modules outside the core use this to define fused ops.
Tensor make_op(const char* op, Shape shape, std::vector<double> value,
               std::vector<Tensor> parents, std::function<void(detail::Node&)> backward);

/// Runs reverse-mode differentiation from a scalar loss. Leaf gradients
/// accumulate across calls; call zero_grad() between steps.
void backward(const Tensor& loss);

/// Topologically ordered nodes reachable from `root` that require grad
/// (parents before children). Each node appears once.
std::vector<detail::Node*> tape_order(const Tensor& root);

}  // namespace afd
