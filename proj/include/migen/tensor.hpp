// SPDX-License-Identifier: Apache-2.0
//
// Minimal dense-tensor engine with reverse-mode automatic differentiation.
// A Tensor is a shared handle to a graph node; every differentiable op
// records its inputs and a backward rule, and backward() walks the graph
// once in reverse topological order. Double precision throughout, no
// broadcasting beyond bias-add over the last axis.

#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

namespace migen {

struct TensorNode;

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorNode> node) : node_(std::move(node)) {}

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
  static Tensor constant(std::vector<int> shape, double value);
  static Tensor from_data(std::vector<int> shape, std::vector<double> data,
                          bool requires_grad = false);
  static Tensor scalar(double value);
  static Tensor randn(std::vector<int> shape, std::mt19937_64& rng,
                      double stddev = 1.0, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const std::vector<int>& shape() const;
  int rank() const;
  int dim(int axis) const;
  std::size_t numel() const;

  std::vector<double>& data();
  const std::vector<double>& data() const;
  double value() const;  // requires numel() == 1

  bool requires_grad() const;
  // Gradient buffer, allocated as zeros on first access.
  std::vector<double>& grad();
  void zero_grad();

  TensorNode* node() const { return node_.get(); }

 private:
  std::shared_ptr<TensorNode> node_;
};

struct TensorNode {
  std::vector<int> shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until touched
  bool requires_grad = false;
  std::vector<Tensor> parents;
  std::function<void(TensorNode&)> backward;
};

inline const std::vector<int>& Tensor::shape() const { return node_->shape; }
inline int Tensor::rank() const { return static_cast<int>(node_->shape.size()); }
inline int Tensor::dim(int axis) const { return node_->shape[axis]; }
inline std::vector<double>& Tensor::data() { return node_->data; }
inline const std::vector<double>& Tensor::data() const { return node_->data; }
inline bool Tensor::requires_grad() const { return node_->requires_grad; }

// While alive, ops on this thread record no graph (used by decoding and
// evaluation, where gradients are never needed).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

std::string shape_str(const std::vector<int>& shape);

// ---- differentiable operations ----

// Elementwise sum; `b` may also be a rank-1 bias broadcast over the last axis.
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);  // elementwise, same shape
Tensor scale(const Tensor& a, double c);
Tensor relu(const Tensor& x);
Tensor matmul(const Tensor& a, const Tensor& b);  // [m,k] x [k,n]
Tensor transpose(const Tensor& x);                // rank-2
Tensor softmax(const Tensor& x, int axis);
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps);

// Same-padded 2-D convolution on a [H,W,C] grid. Depthwise kernels are
// [k,k,C] (one spatial filter per channel), full kernels [k,k,C_in,C_out].
// Kernel side must be odd; zero padding of width (k-1)/2 on each border.
Tensor conv2d_same(const Tensor& x, const Tensor& kernel, bool depthwise);

Tensor embedding(const Tensor& table, const std::vector<int>& ids);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor slice_rows(const Tensor& x, int start, int count);
Tensor slice_cols(const Tensor& x, int start, int count);  // rank-2
Tensor pad_rows(const Tensor& x, int new_rows);  // appends zero rows
Tensor reshape(const Tensor& x, std::vector<int> shape);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor dropout(const Tensor& x, double rate, std::mt19937_64& rng);

// Mean negative log-likelihood over non-pad target positions.
// logits [n, vocab]; targets.size() == n; positions equal to pad_id are
// excluded from both sum and count. All-pad targets are a contract error.
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets,
                     int pad_id);

// Reverse-mode sweep from a scalar loss. Accumulates (sums) into the grad
// buffers of every reachable requires_grad tensor.
void backward(const Tensor& loss);

// Central-finite-difference check of backward(). `f` must rebuild its graph
// from the current contents of `wrt` on every call. Returns the max over all
// coordinates of |analytic - numeric| / max(1, |analytic|).
double grad_check(const std::function<Tensor()>& f,
                  const std::vector<Tensor>& wrt, double h);

bool all_finite(const Tensor& t);

}  // namespace migen
