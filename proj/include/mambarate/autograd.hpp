#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "mambarate/tensor.hpp"

namespace mambarate::ag {

// Tape-style reverse-mode autograd over dense f64 tensors. A forward pass
// builds a DAG of Nodes; backward() walks it once in reverse topological
// order and accumulates gradients additively across fan-out.
struct Node;
using NodePtr = std::shared_ptr<Node>;

struct Node {
  Tensor value;
  Tensor grad;  // allocated lazily, same shape as value
  bool requires_grad = false;
  bool grad_alloc = false;
  std::vector<NodePtr> parents;
  // Reads this->grad and accumulates into parents' grads.
  std::function<void(Node&)> backprop;

  Tensor& ensure_grad() {
    if (!grad_alloc) {
      grad.shape = value.shape;
      grad.data.assign(value.data.size(), 0.0);
      grad_alloc = true;
    }
    return grad;
  }

  void zero_grad() {
    if (grad_alloc) std::fill(grad.data.begin(), grad.data.end(), 0.0);
  }
};

NodePtr constant(Tensor v);
NodePtr parameter(Tensor v);

// --- primitives -----------------------------------------------------------

NodePtr add(const NodePtr& a, const NodePtr& b);
NodePtr sub(const NodePtr& a, const NodePtr& b);
NodePtr mul(const NodePtr& a, const NodePtr& b);  // elementwise
NodePtr matmul(const NodePtr& a, const NodePtr& b);
NodePtr transpose(const NodePtr& a);
// x (..., C) + bias (C), broadcast over leading axes
NodePtr broadcast_add(const NodePtr& x, const NodePtr& bias);
// x (T, Cin), w (Cout, Cin/groups, K), b (Cout)
NodePtr conv1d(const NodePtr& x, const NodePtr& w, const NodePtr& b, int64_t stride,
               int64_t pad_left, int64_t pad_right, int64_t groups = 1);
// normalize over the last axis
NodePtr layer_norm(const NodePtr& x, const NodePtr& gain, const NodePtr& bias, double eps);
NodePtr rms_norm(const NodePtr& x, const NodePtr& gain, double eps);
NodePtr mish(const NodePtr& x);
NodePtr silu(const NodePtr& x);
NodePtr sigmoid(const NodePtr& x);
NodePtr softplus(const NodePtr& x);
NodePtr exp(const NodePtr& x);
NodePtr tanh(const NodePtr& x);
NodePtr mean_over_axis(const NodePtr& x, int axis);
NodePtr slice(const NodePtr& x, int axis, int64_t start, int64_t len);
NodePtr concat(const std::vector<NodePtr>& xs, int axis);
NodePtr reshape(const NodePtr& x, std::vector<int64_t> new_shape);

// Selective state space scan (the Mamba-2 recurrence), one sequence,
// H heads of width P over N state channels, B/C shared across heads:
//
//   S_t = exp(dt_t[h] * a[h]) * S_{t-1} + dt_t[h] * outer(x_t[h], B_t)
//   y_t[h,p] = sum_n C_t[n] * S_t[h,p,n] + d[h] * x_t[h,p]
//
// xs (T,H,P), dt (T,H), a (H), b_in (T,N), c_in (T,N), d_skip (H) -> (T,H,P).
// The backward pass recomputes states from chunked snapshots instead of
// storing the full T x H x P x N history.
NodePtr selective_scan(const NodePtr& xs, const NodePtr& dt, const NodePtr& a,
                       const NodePtr& b_in, const NodePtr& c_in, const NodePtr& d_skip);

// --- backward --------------------------------------------------------------

struct BackwardStats {
  int64_t nodes_visited = 0;  // distinct nodes processed in the reverse pass
};

// loss must be scalar-shaped (one element). After the call every parameter
// reachable from loss holds d loss / d param in its grad.
BackwardStats backward(const NodePtr& loss);

}  // namespace mambarate::ag
