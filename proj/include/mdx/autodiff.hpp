#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "mdx/tensor.hpp"

namespace mdx {

namespace detail {
struct Node;
}

// Handle to a node in a define-by-run computation graph. Graphs are built
// fresh per forward pass; nodes are immutable after creation except for the
// gradient buffer populated by run_backward. One graph is single-threaded;
// independent graphs may live on different threads.
class Var {
  public:
    Var() = default;
    explicit Var(std::shared_ptr<detail::Node> n) : n_(std::move(n)) {}

    bool defined() const { return n_ != nullptr; }
    const Tensor& value() const;
    bool requires_grad() const;
    std::uint64_t id() const;

    // Gradient accumulated by the most recent run_backward over this graph.
    // Zero tensor if the node was not reached.
    Tensor grad() const;
    bool grad_populated() const;

    detail::Node* node() const { return n_.get(); }
    const std::shared_ptr<detail::Node>& ptr() const { return n_; }

  private:
    std::shared_ptr<detail::Node> n_;
};

// ∂output/∂wrt for one tensor. `disconnected` marks a wrt that is not an
// ancestor of the output; the values are then all zero.
struct Gradient {
    Tensor values;
    std::uint64_t wrt_id = 0;
    bool disconnected = false;
};

Var make_leaf(Tensor value, bool requires_grad = false);
Var make_constant(Tensor value);

// Elementwise; shapes must match exactly.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);

Var scale(const Var& a, double factor);
Var add_bias(const Var& mat, const Var& bias);  // (r,c) + (c)

Var matmul(const Var& a, const Var& b);  // (m,k) x (k,n)
Var transpose(const Var& a);             // 2-D

// 2-D convolution, stride 1, zero padding. x: (H,W,Ci), w: (K,K,Ci,Co),
// bias: (Co) or undefined Var for none. Output (H,W,Co) when pad=(K-1)/2.
Var conv2d(const Var& x, const Var& w, const Var& bias, std::int64_t pad);

Var relu(const Var& a);
Var softplus(const Var& a);
Var softmax_last(const Var& a);  // softmax over the last axis

Var mean_all(const Var& a);  // rank-0 scalar
Var sum_all(const Var& a);   // rank-0 scalar

Var reshape(const Var& a, std::vector<std::int64_t> shape);

// (H,W,C) -> (n, p*p*C) with n = (H/p)*(W/p); patches ordered row-major over
// the patch grid, features ordered (py, px, c) within a patch.
Var patchify(const Var& image, std::int64_t patch);

// Nearest-neighbor upsample of a 2-D grid by an integer factor.
Var upsample_nearest(const Var& grid, std::int64_t factor);

// Reverse-mode sweep from a scalar output; populates grad() on every
// reachable node that requires a gradient. Deterministic: repeated runs on
// the same graph produce bit-identical gradients.
void run_backward(const Var& output);

// ∂output/∂wrt via a fresh backward sweep. Non-scalar output throws; a wrt
// that is not an ancestor yields a zero gradient flagged disconnected.
Gradient backward(const Var& output, const Var& wrt);

// Central finite differences, (f(x+h·e_i) - f(x-h·e_i)) / (2h) per
// coordinate. Independent gradient oracle; f must be pure and thread-safe.
Gradient finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x, double h);

}  // namespace mdx
