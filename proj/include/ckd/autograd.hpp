#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <vector>

#include "ckd/rng.hpp"
#include "ckd/tensor.hpp"

/// Minimal reverse-mode automatic differentiation over ckd::Tensor.
///
/// Every op returns a fresh node. When gradients are enabled and at least one
/// input requires a gradient, the node keeps its inputs and a closure that
/// pushes its gradient upstream; otherwise it is a plain constant, so a
/// forward pass under NoGradGuard builds no graph at all.
namespace ckd::nn {

struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward_fn;

  // Zero-initialised on first use.
  Tensor& grad_buffer();
};

using Var = std::shared_ptr<Node>;

Var constant(Tensor value);
Var leaf(Tensor value);

bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Seeds d(root)/d(root) = 1 and propagates to every reachable node.
void backward(const Var& root);

enum class Padding { Same, Valid };
enum class PoolKind { Max, Average };

// x (..., D) times w (D, O) plus optional b (O).
Var dense(const Var& x, const Var& w, const Var& b);

// x (N, H, W, C); w (kh, kw, C / groups, O); b (O) or null.
Var conv2d(const Var& x, const Var& w, const Var& b, std::size_t stride, Padding padding,
           std::size_t groups = 1);

Var pool2d(const Var& x, PoolKind kind, std::size_t window, std::size_t stride, Padding padding);
Var global_avg_pool(const Var& x);

Var relu(const Var& x);
Var relu6(const Var& x);
Var silu(const Var& x);
Var gelu(const Var& x);
Var tanh(const Var& x);
Var sigmoid(const Var& x);

Var add(const Var& a, const Var& b);
// p's shape equals the trailing dims of x.
Var add_broadcast(const Var& x, const Var& p);
// x (N, ..., C) scaled per (sample, channel) by s (N, C).
Var scale_channels(const Var& x, const Var& s);
Var concat_last(const std::vector<Var>& parts);
Var reshape(const Var& x, Shape shape);

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-6);

// x (N, T, D), token (1, D) -> (N, T + 1, D) with the token first.
Var prepend_token(const Var& x, const Var& token);
// x (N, T, D) -> (N, D).
Var select_token(const Var& x, std::size_t index);
// Multi-head scaled dot-product self attention; qkv (N, T, 3D) -> (N, T, D).
Var self_attention(const Var& qkv, std::size_t heads);

Var softmax(const Var& logits);
Var dropout(const Var& x, double rate, Rng& rng);

// Mean over rows of -sum_c y_c log(max(p_c, 1e-12)) with p = softmax(logits).
Var softmax_cross_entropy(const Var& logits, const Tensor& targets);
// sum_i x_i * weights_i; a scalar probe for gradient checks.
Var weighted_sum(const Var& x, const Tensor& weights);

// Row-wise softmax over the last axis, no graph.
Tensor softmax_rows(const Tensor& logits);

}  // namespace ckd::nn
