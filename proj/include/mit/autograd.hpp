#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "mit/tensor.hpp"

namespace mit {

/// One vertex of the reverse-mode graph. The value is fixed once the node is
/// built; the gradient buffer is allocated by backward().
struct Node {
  Tensor value;
  std::vector<double> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;
};

/// Shared handle to a graph node. Copies alias the same node.
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Var constant(Tensor value);
  static Var leaf(Tensor value);

  bool defined() const { return static_cast<bool>(node_); }
  const Tensor& value() const { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t rows() const { return node_->value.rows(); }
  std::size_t cols() const { return node_->value.cols(); }
  bool requires_grad() const { return node_->requires_grad; }
  /// Scalar value of a 1x1 result.
  double item() const;
  /// Accumulated gradient, zeros when backward never reached this node.
  Tensor grad() const;

  Node& node() const { return *node_; }
  const std::shared_ptr<Node>& ptr() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

/// Seeds d(root)/d(root) = 1 and propagates to every reachable node that
/// requires a gradient. Gradients accumulate across calls until reset.
void backward(const Var& root);

// Builds a result node; the backward closure is attached only when at least
// one parent requires a gradient.
Var make_result(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backward_fn);

// ---- differentiable operations on rank-2 tensors ----

Var matmul(const Var& a, const Var& b);
/// a · bᵀ
Var matmul_nt(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);
/// Adds a 1×n row to every row of an m×n matrix.
Var add_row(const Var& a, const Var& row);
Var scale(const Var& a, double s);
Var hadamard(const Var& a, const Var& b);
Var relu(const Var& a);
Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps = 1e-5);
/// Mean of the rows sharing a group index; output row g is the mean of group g.
Var segment_mean(const Var& x, std::span<const std::size_t> group_of_row, std::size_t groups);
/// n×m → n×1
Var row_means(const Var& x);
/// n×m → 1×m
Var col_means(const Var& x);
Var slice_rows(const Var& x, std::size_t begin, std::size_t end);
Var concat_rows(const Var& a, const Var& b);
/// Mean of every element, as 1×1.
Var mean_all(const Var& x);
Var sum_scalars(std::span<const Var> terms);

/// Patch extraction for a stack of `images` feature maps stored as
/// (images·height·width) × channels rows. Valid convolution (no padding).
/// Output rows are (image, out_y, out_x); columns are (ky, kx, channel).
Var im2col(const Var& x, std::size_t images, std::size_t height, std::size_t width, std::size_t kernel,
           std::size_t stride);
std::size_t conv_out_extent(std::size_t in, std::size_t kernel, std::size_t stride);

/// Mean over elements of binary cross-entropy with logits.
Var bce_with_logits_mean(const Var& logits, std::span<const double> targets);

/// Symmetric diagonal cross-entropy over a square logit block:
/// Σ_i −log softmax_row(L)_ii + Σ_j −log softmax_col(L)_jj.
Var diagonal_cross_entropy(const Var& logits);

}  // namespace mit
