#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "uio/tensor.hpp"

namespace uio {

// One additive positional-bias contribution: score[i][j] gets
// table[buckets[i*n+j]][head], with bucket -1 meaning no contribution for
// that pair (cross-modal blocks stay at exactly zero).
struct AttentionBias {
  std::vector<int> buckets;  // m*n entries, row-major over (query, key)
  int table = -1;            // node id of a [num_buckets, num_heads] tensor
};

// Multi-head attention wiring. Several bias contributions can stack (text
// 1-D plus per-axis patch biases); none means unbiased (cross-attention).
struct AttentionSpec {
  int num_heads = 1;
  int head_dim = 1;
  bool causal = false;
  std::vector<AttentionBias> biases;
};

// Tape-based reverse-mode autodiff over 64-bit tensors. Nodes are created in
// topological order; backward walks the tape in reverse. One Graph per
// forward pass; weights live outside and enter as leaves.
class Graph {
 public:
  int leaf(Tensor value, bool needs_grad = false);

  int add(int a, int b);           // same shape
  int add_row_broadcast(int a, int bias);  // a [m,n], bias [1,n]
  int scale(int a, double s);
  int mul(int a, int b);           // elementwise, same shape
  int matmul(int a, int b);        // [m,k] x [k,n]
  int matmul_nt(int a, int b);     // [m,k] x [n,k]^T
  int gelu(int a);                 // tanh approximation
  int rmsnorm(int a, int gain);    // rows of a normalized, gain [1,n]
  int gather_rows(int table, std::vector<int> indices);
  int concat_rows(int a, int b);   // same column count
  int slice_rows(int a, int begin, int count);
  // out[i] = mask[i] ? single_row : a[i]; the learned mask-patch embedding.
  int replace_rows(int a, int single_row, std::vector<uint8_t> mask);
  int attention(int q, int k, int v, AttentionSpec spec);
  // Mean token cross-entropy over positions whose target != ignore_id.
  int cross_entropy_mean(int logits, std::vector<int> targets, int ignore_id = -1);
  int mse(int a, int b);           // mean squared error, scalar
  // Forward takes `value`, backward passes the incoming gradient to src
  // unchanged. The quantizer bypass.
  int straight_through(int src, Tensor value);
  int stop_gradient(int a);

  void backward(int loss);

  const Tensor& value(int id) const { return nodes_[static_cast<size_t>(id)].value; }
  Tensor& grad(int id);  // allocates zeros on first touch
  bool has_grad(int id) const { return !nodes_[static_cast<size_t>(id)].grad.data.empty(); }
  bool wants_grad(int id) const { return nodes_[static_cast<size_t>(id)].needs_grad; }
  size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;  // empty until first accumulation
    bool needs_grad = false;
    std::function<void(Graph&)> back;
  };

  int push(Tensor value, bool needs_grad, std::function<void(Graph&)> back);
  std::vector<Node> nodes_;
};

}  // namespace uio
