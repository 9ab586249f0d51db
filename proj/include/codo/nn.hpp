#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "codo/geometry.hpp"
#include "codo/tensor.hpp"

namespace codo::nn {

struct Node;
using Var = std::shared_ptr<Node>;

// Parameter gradients are routed here instead of into the shared parameter
// nodes, so several sample tapes can run against one parameter set at once.
class GradSink {
 public:
  GradSink() = default;
  explicit GradSink(int n_params) : grads_(static_cast<std::size_t>(n_params)) {}

  void resize(int n_params) { grads_.assign(static_cast<std::size_t>(n_params), {}); }
  void accumulate(int param_id, const Tensor& g);
  // Sums all slots of `other` into this sink.
  void merge(const GradSink& other);
  void clear();
  Tensor* slot(int param_id);
  const Tensor* slot(int param_id) const;
  int size() const { return static_cast<int>(grads_.size()); }

 private:
  std::vector<Tensor> grads_;  // empty tensor = nothing accumulated
};

struct Node {
  Tensor value;
  Tensor grad;  // allocated on demand during backward
  bool requires_grad = false;
  int param_id = -1;  // >= 0 marks a parameter leaf
  std::vector<Var> parents;
  std::function<void(Node&, GradSink&)> backward_fn;
};

bool grad_enabled();

// RAII scope that disables tape construction (key encoder, evaluation).
struct NoGradGuard {
  NoGradGuard();
  ~NoGradGuard();
  bool prev;
};

Var constant(Tensor value);
Var leaf(Tensor value, bool requires_grad);
Var parameter(Tensor value, int param_id);

// Reverse-mode sweep from a scalar root. Parameter gradients land in the
// sink; intermediate node grads stay on the tape.
void backward(const Var& root, GradSink& sink);

// --- ops ------------------------------------------------------------------

// x: (Cin,H,W); w: (Cout, Cin*k*k); b: (Cout). Same-stride square kernel.
Var conv2d(const Var& x, const Var& w, const Var& b, int ksize, int stride,
           int pad);

// Per-sample group normalization with per-channel affine params.
Var group_norm(const Var& x, const Var& gamma, const Var& beta, int groups,
               double eps = 1e-5);

Var relu(const Var& x);
Var add(const Var& a, const Var& b);
Var upsample_nearest2x(const Var& x);

// x: (N) vector; w: (out, in); b: (out).
Var linear(const Var& x, const Var& w, const Var& b);

Var flatten(const Var& x);

Var reshape(const Var& x, std::vector<std::int64_t> shape);

// Vector L2 normalization; output has unit norm.
Var l2_normalize(const Var& x, double eps = 1e-12);

// Pools `box` (image coordinates) from a (C,H,W) feature map at the given
// stride into (C, out_size, out_size). Each bin averages a regular 2x2 grid
// of bilinear samples; coordinates are divided by stride without rounding.
// Differentiable in the feature map only.
Var roi_align(const Var& fmap, const BoundingBox& box, double stride,
              int out_size);

// InfoNCE: -log softmax over [q.k_pos, q.negatives...] at temperature tau.
// `negatives` is a row-major (n_neg, D) block that must outlive backward.
Var info_nce_loss(const Var& q, const Tensor& k_pos, const double* negatives,
                  int n_neg, double tau);

// Scalar combination: sum_i weights[i] * terms[i]; all terms scalar.
Var weighted_sum(const std::vector<Var>& terms,
                 const std::vector<double>& weights);

Var scale(const Var& x, double factor);

}  // namespace codo::nn
