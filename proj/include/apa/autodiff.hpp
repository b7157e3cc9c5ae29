#pragma once

#include <functional>
#include <vector>

#include "apa/tensor.hpp"

namespace apa::ad {

// Handle into a Tape. Plain index; cheap to copy.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

// Reverse-mode tape. Nodes are appended in evaluation order; backward()
// walks the tape in reverse. Tapes are short-lived: one per training step,
// denoising step or reward evaluation, so memory stays bounded.
class Tape {
 public:
  Var leaf(Tensor value, bool requires_grad);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  const Tensor& value(Var v) const { return nodes_[v.id].value; }
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }

  // Gradient accumulated on v after backward(); zeros if nothing flowed.
  Tensor grad(Var v) const;

  // Seeds d(out)/d(out) = 1 and propagates. `out` must be scalar.
  void backward(Var out);

  size_t size() const { return nodes_.size(); }

  // --- internals used by op implementations ---
  struct Node {
    Tensor value;
    Tensor grad;  // empty until first accumulation
    bool requires_grad = false;
    std::function<void(Tape&, const Node&)> backprop;
  };
  Var emit(Tensor value, bool requires_grad,
           std::function<void(Tape&, const Node&)> backprop);
  void accum(Var v, const Tensor& g);
  void accum_scaled(Var v, const Tensor& g, double s);
  Tensor& grad_buffer(Var v);  // allocates zeros on demand
  const Node& node(Var v) const { return nodes_[v.id]; }

 private:
  std::vector<Node> nodes_;
};

// ----- elementwise / scalar -----
Var add(Tape& t, Var a, Var b);
Var sub(Tape& t, Var a, Var b);
Var mul(Tape& t, Var a, Var b);
Var scale(Tape& t, Var a, double s);
// alpha*a + beta*b
Var lincomb(Tape& t, double alpha, Var a, double beta, Var b);
Var add_scalar(Tape& t, Var a, double s);
Var silu(Tape& t, Var a);
Var detach(Tape& t, Var a);

// ----- reductions -----
Var sum(Tape& t, Var a);
Var mean(Tape& t, Var a);
Var sum_squares(Tape& t, Var a);
Var l2_norm(Tape& t, Var a);
Var mean_scalars(Tape& t, const std::vector<Var>& xs);
Var add_scalars(Tape& t, Var a, Var b);  // scalar + scalar

// ----- shape -----
Var reshape(Tape& t, Var a, std::vector<int> shape);
Var concat_ch(Tape& t, Var a, Var b);
// (C,H,W) -> (num_patches, C*p*p), row-major over patch grid
Var patchify(Tape& t, Var a, int p);

// ----- linear algebra -----
Var linear(Tape& t, Var x, Var w, Var b);  // x:(N) w:(M,N) b:(M) -> (M)
Var matmul(Tape& t, Var a, Var b);         // (M,K)x(K,N) -> (M,N)
Var transpose(Tape& t, Var a);             // (M,N) -> (N,M)
Var add_row_bias(Tape& t, Var a, Var b);   // (M,N) + broadcast (N)
Var mean_rows(Tape& t, Var a);             // (M,N) -> (N), mean over rows

// ----- conv / spatial -----
Var conv2d(Tape& t, Var x, Var w, Var b, int stride, int pad);
Var add_channel_bias(Tape& t, Var x, Var bias);
Var upsample2x(Tape& t, Var x);
Var avg_pool2(Tape& t, Var x);
Var global_avg_pool(Tape& t, Var x);
Var pad2d_zero(Tape& t, Var x, int p);
Var bilinear_resize(Tape& t, Var x, int out_h, int out_w);

// ----- classification -----
Var softmax_rows(Tape& t, Var a);
Var softmax_cross_entropy(Tape& t, Var logits, int label);

}  // namespace apa::ad
