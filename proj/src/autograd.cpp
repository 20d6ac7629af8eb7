#include "mambarate/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <unordered_set>

namespace mambarate::ag {

namespace {

NodePtr make_node(Tensor value, std::vector<NodePtr> parents, std::function<void(Node&)> backprop,
                  const char* op_name) {
  if (!value.all_finite()) {
    fail(ErrorCode::NonFiniteResult, std::string(op_name) + " produced a non-finite value");
  }
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  for (const auto& p : parents) {
    if (p->requires_grad) {
      n->requires_grad = true;
      break;
    }
  }
  if (n->requires_grad) {
    n->parents = std::move(parents);
    n->backprop = std::move(backprop);
  }
  return n;
}

void check_same_shape(const NodePtr& a, const NodePtr& b, const char* op_name) {
  if (!a->value.same_shape(b->value)) {
    fail(ErrorCode::ShapeMismatch, std::string(op_name) + ": " + shape_str(a->value.shape) +
                                       " vs " + shape_str(b->value.shape));
  }
}

double sigmoid_scalar(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double softplus_scalar(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::fabs(x))); }

// elementwise unary op with local derivative computed from the input
NodePtr unary(const NodePtr& x, const char* name, double (*f)(double), double (*df)(double)) {
  Tensor out = x->value;
  for (double& v : out.data) v = f(v);
  auto xp = x;
  return make_node(
      std::move(out), {x},
      [xp, df](Node& n) {
        if (!xp->requires_grad) return;
        Tensor& gx = xp->ensure_grad();
        for (size_t i = 0; i < gx.data.size(); ++i) {
          gx.data[i] += n.grad.data[i] * df(xp->value.data[i]);
        }
      },
      name);
}

}  // namespace

NodePtr constant(Tensor v) {
  auto n = std::make_shared<Node>();
  n->value = std::move(v);
  n->requires_grad = false;
  return n;
}

NodePtr parameter(Tensor v) {
  auto n = std::make_shared<Node>();
  n->value = std::move(v);
  n->requires_grad = true;
  return n;
}

NodePtr add(const NodePtr& a, const NodePtr& b) {
  check_same_shape(a, b, "add");
  Tensor out = a->value;
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += b->value.data[i];
  auto ap = a, bp = b;
  return make_node(
      std::move(out), {a, b},
      [ap, bp](Node& n) {
        if (ap->requires_grad) {
          Tensor& ga = ap->ensure_grad();
          for (size_t i = 0; i < ga.data.size(); ++i) ga.data[i] += n.grad.data[i];
        }
        if (bp->requires_grad) {
          Tensor& gb = bp->ensure_grad();
          for (size_t i = 0; i < gb.data.size(); ++i) gb.data[i] += n.grad.data[i];
        }
      },
      "add");
}

NodePtr sub(const NodePtr& a, const NodePtr& b) {
  check_same_shape(a, b, "sub");
  Tensor out = a->value;
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] -= b->value.data[i];
  auto ap = a, bp = b;
  return make_node(
      std::move(out), {a, b},
      [ap, bp](Node& n) {
        if (ap->requires_grad) {
          Tensor& ga = ap->ensure_grad();
          for (size_t i = 0; i < ga.data.size(); ++i) ga.data[i] += n.grad.data[i];
        }
        if (bp->requires_grad) {
          Tensor& gb = bp->ensure_grad();
          for (size_t i = 0; i < gb.data.size(); ++i) gb.data[i] -= n.grad.data[i];
        }
      },
      "sub");
}

NodePtr mul(const NodePtr& a, const NodePtr& b) {
  check_same_shape(a, b, "mul");
  Tensor out = a->value;
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] *= b->value.data[i];
  auto ap = a, bp = b;
  return make_node(
      std::move(out), {a, b},
      [ap, bp](Node& n) {
        if (ap->requires_grad) {
          Tensor& ga = ap->ensure_grad();
          for (size_t i = 0; i < ga.data.size(); ++i) ga.data[i] += n.grad.data[i] * bp->value.data[i];
        }
        if (bp->requires_grad) {
          Tensor& gb = bp->ensure_grad();
          for (size_t i = 0; i < gb.data.size(); ++i) gb.data[i] += n.grad.data[i] * ap->value.data[i];
        }
      },
      "mul");
}

NodePtr matmul(const NodePtr& a, const NodePtr& b) {
  if (a->value.rank() != 2 || b->value.rank() != 2 || a->value.dim(1) != b->value.dim(0)) {
    fail(ErrorCode::ShapeMismatch,
         "matmul: " + shape_str(a->value.shape) + " x " + shape_str(b->value.shape));
  }
  const int64_t m = a->value.dim(0), k = a->value.dim(1), p = b->value.dim(1);
  Tensor out({m, p});
  for (int64_t i = 0; i < m; ++i) {
    for (int64_t l = 0; l < k; ++l) {
      const double av = a->value.at(i, l);
      if (av == 0.0) continue;
      for (int64_t j = 0; j < p; ++j) out.at(i, j) += av * b->value.at(l, j);
    }
  }
  auto ap = a, bp = b;
  return make_node(
      std::move(out), {a, b},
      [ap, bp, m, k, p](Node& n) {
        if (ap->requires_grad) {
          // gA = gY . B^T
          Tensor& ga = ap->ensure_grad();
          for (int64_t i = 0; i < m; ++i) {
            for (int64_t l = 0; l < k; ++l) {
              double acc = 0.0;
              for (int64_t j = 0; j < p; ++j) acc += n.grad.at(i, j) * bp->value.at(l, j);
              ga.at(i, l) += acc;
            }
          }
        }
        if (bp->requires_grad) {
          // gB = A^T . gY
          Tensor& gb = bp->ensure_grad();
          for (int64_t i = 0; i < m; ++i) {
            for (int64_t l = 0; l < k; ++l) {
              const double av = ap->value.at(i, l);
              if (av == 0.0) continue;
              for (int64_t j = 0; j < p; ++j) gb.at(l, j) += av * n.grad.at(i, j);
            }
          }
        }
      },
      "matmul");
}

NodePtr transpose(const NodePtr& a) {
  if (a->value.rank() != 2) {
    fail(ErrorCode::ShapeMismatch, "transpose expects rank 2, got " + shape_str(a->value.shape));
  }
  const int64_t m = a->value.dim(0), k = a->value.dim(1);
  Tensor out({k, m});
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < k; ++j) out.at(j, i) = a->value.at(i, j);
  auto ap = a;
  return make_node(
      std::move(out), {a},
      [ap, m, k](Node& n) {
        if (!ap->requires_grad) return;
        Tensor& ga = ap->ensure_grad();
        for (int64_t i = 0; i < m; ++i)
          for (int64_t j = 0; j < k; ++j) ga.at(i, j) += n.grad.at(j, i);
      },
      "transpose");
}

NodePtr broadcast_add(const NodePtr& x, const NodePtr& bias) {
  if (bias->value.rank() != 1 || x->value.rank() < 1 ||
      x->value.dim(x->value.rank() - 1) != bias->value.dim(0)) {
    fail(ErrorCode::ShapeMismatch, "broadcast_add: " + shape_str(x->value.shape) + " + " +
                                       shape_str(bias->value.shape));
  }
  const int64_t c = bias->value.dim(0);
  const int64_t rows = x->value.numel() / c;
  Tensor out = x->value;
  for (int64_t r = 0; r < rows; ++r)
    for (int64_t j = 0; j < c; ++j) out.data[static_cast<size_t>(r * c + j)] += bias->value.data[static_cast<size_t>(j)];
  auto xp = x, bp = bias;
  return make_node(
      std::move(out), {x, bias},
      [xp, bp, rows, c](Node& n) {
        if (xp->requires_grad) {
          Tensor& gx = xp->ensure_grad();
          for (size_t i = 0; i < gx.data.size(); ++i) gx.data[i] += n.grad.data[i];
        }
        if (bp->requires_grad) {
          Tensor& gb = bp->ensure_grad();
          for (int64_t r = 0; r < rows; ++r)
            for (int64_t j = 0; j < c; ++j) gb.data[static_cast<size_t>(j)] += n.grad.data[static_cast<size_t>(r * c + j)];
        }
      },
      "broadcast_add");
}

NodePtr conv1d(const NodePtr& x, const NodePtr& w, const NodePtr& b, int64_t stride,
               int64_t pad_left, int64_t pad_right, int64_t groups) {
  if (x->value.rank() != 2 || w->value.rank() != 3 || b->value.rank() != 1) {
    fail(ErrorCode::ShapeMismatch, "conv1d: x " + shape_str(x->value.shape) + ", w " +
                                       shape_str(w->value.shape) + ", b " + shape_str(b->value.shape));
  }
  const int64_t t_in = x->value.dim(0), c_in = x->value.dim(1);
  const int64_t c_out = w->value.dim(0), c_in_g = w->value.dim(1), kernel = w->value.dim(2);
  if (groups < 1 || c_in % groups != 0 || c_out % groups != 0 || c_in / groups != c_in_g ||
      b->value.dim(0) != c_out) {
    fail(ErrorCode::ShapeMismatch, "conv1d: incompatible channel grouping");
  }
  if (stride < 1 || pad_left < 0 || pad_right < 0) {
    fail(ErrorCode::ShapeMismatch, "conv1d: bad stride/padding");
  }
  const int64_t t_out = (t_in + pad_left + pad_right - kernel) / stride + 1;
  if (t_out < 1) fail(ErrorCode::ShapeMismatch, "conv1d: empty output");
  const int64_t c_out_g = c_out / groups;

  Tensor out({t_out, c_out});
  for (int64_t to = 0; to < t_out; ++to) {
    for (int64_t co = 0; co < c_out; ++co) {
      const int64_t g = co / c_out_g;
      double acc = b->value.data[static_cast<size_t>(co)];
      for (int64_t k = 0; k < kernel; ++k) {
        const int64_t ti = to * stride - pad_left + k;
        if (ti < 0 || ti >= t_in) continue;
        for (int64_t cl = 0; cl < c_in_g; ++cl) {
          acc += x->value.at(ti, g * c_in_g + cl) * w->value.at(co, cl, k);
        }
      }
      out.at(to, co) = acc;
    }
  }
  auto xp = x, wp = w, bp = b;
  return make_node(
      std::move(out), {x, w, b},
      [xp, wp, bp, t_in, c_in_g, c_out, c_out_g, kernel, stride, pad_left, t_out](Node& n) {
        for (int64_t to = 0; to < t_out; ++to) {
          for (int64_t co = 0; co < c_out; ++co) {
            const double gy = n.grad.at(to, co);
            if (gy == 0.0) continue;
            const int64_t g = co / c_out_g;
            if (bp->requires_grad) bp->ensure_grad().data[static_cast<size_t>(co)] += gy;
            for (int64_t k = 0; k < kernel; ++k) {
              const int64_t ti = to * stride - pad_left + k;
              if (ti < 0 || ti >= t_in) continue;
              for (int64_t cl = 0; cl < c_in_g; ++cl) {
                if (wp->requires_grad) {
                  wp->ensure_grad().at(co, cl, k) += gy * xp->value.at(ti, g * c_in_g + cl);
                }
                if (xp->requires_grad) {
                  xp->ensure_grad().at(ti, g * c_in_g + cl) += gy * wp->value.at(co, cl, k);
                }
              }
            }
          }
        }
      },
      "conv1d");
}

NodePtr layer_norm(const NodePtr& x, const NodePtr& gain, const NodePtr& bias, double eps) {
  if (x->value.rank() < 1 || gain->value.rank() != 1 || bias->value.rank() != 1) {
    fail(ErrorCode::ShapeMismatch, "layer_norm: bad ranks");
  }
  const int64_t c = x->value.dim(x->value.rank() - 1);
  if (gain->value.dim(0) != c || bias->value.dim(0) != c) {
    fail(ErrorCode::ShapeMismatch, "layer_norm: gain/bias length != channel dim");
  }
  const int64_t rows = x->value.numel() / c;
  Tensor out = x->value;
  // kept for backward: per-row inv std and normalized values
  std::vector<double> inv_std(static_cast<size_t>(rows));
  std::vector<double> xhat(static_cast<size_t>(rows * c));
  for (int64_t r = 0; r < rows; ++r) {
    const double* xr = &x->value.data[static_cast<size_t>(r * c)];
    double mean = 0.0;
    for (int64_t j = 0; j < c; ++j) mean += xr[j];
    mean /= static_cast<double>(c);
    double var = 0.0;
    for (int64_t j = 0; j < c; ++j) {
      const double d = xr[j] - mean;
      var += d * d;
    }
    var /= static_cast<double>(c);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[static_cast<size_t>(r)] = is;
    for (int64_t j = 0; j < c; ++j) {
      const double h = (xr[j] - mean) * is;
      xhat[static_cast<size_t>(r * c + j)] = h;
      out.data[static_cast<size_t>(r * c + j)] =
          gain->value.data[static_cast<size_t>(j)] * h + bias->value.data[static_cast<size_t>(j)];
    }
  }
  auto xp = x, gp = gain, bp = bias;
  return make_node(
      std::move(out), {x, gain, bias},
      [xp, gp, bp, rows, c, inv_std = std::move(inv_std), xhat = std::move(xhat)](Node& n) {
        for (int64_t r = 0; r < rows; ++r) {
          const double* gy = &n.grad.data[static_cast<size_t>(r * c)];
          const double* xh = &xhat[static_cast<size_t>(r * c)];
          if (gp->requires_grad || bp->requires_grad) {
            for (int64_t j = 0; j < c; ++j) {
              if (gp->requires_grad) gp->ensure_grad().data[static_cast<size_t>(j)] += gy[j] * xh[j];
              if (bp->requires_grad) bp->ensure_grad().data[static_cast<size_t>(j)] += gy[j];
            }
          }
          if (xp->requires_grad) {
            double sum_w = 0.0, sum_wx = 0.0;
            for (int64_t j = 0; j < c; ++j) {
              const double w = gy[j] * gp->value.data[static_cast<size_t>(j)];
              sum_w += w;
              sum_wx += w * xh[j];
            }
            const double inv_c = 1.0 / static_cast<double>(c);
            Tensor& gx = xp->ensure_grad();
            for (int64_t j = 0; j < c; ++j) {
              const double w = gy[j] * gp->value.data[static_cast<size_t>(j)];
              gx.data[static_cast<size_t>(r * c + j)] +=
                  (w - sum_w * inv_c - xh[j] * sum_wx * inv_c) * inv_std[static_cast<size_t>(r)];
            }
          }
        }
      },
      "layer_norm");
}

NodePtr rms_norm(const NodePtr& x, const NodePtr& gain, double eps) {
  if (x->value.rank() < 1 || gain->value.rank() != 1) {
    fail(ErrorCode::ShapeMismatch, "rms_norm: bad ranks");
  }
  const int64_t c = x->value.dim(x->value.rank() - 1);
  if (gain->value.dim(0) != c) fail(ErrorCode::ShapeMismatch, "rms_norm: gain length != channel dim");
  const int64_t rows = x->value.numel() / c;
  Tensor out = x->value;
  std::vector<double> inv_rms(static_cast<size_t>(rows));
  for (int64_t r = 0; r < rows; ++r) {
    const double* xr = &x->value.data[static_cast<size_t>(r * c)];
    double ms = 0.0;
    for (int64_t j = 0; j < c; ++j) ms += xr[j] * xr[j];
    ms /= static_cast<double>(c);
    const double ir = 1.0 / std::sqrt(ms + eps);
    inv_rms[static_cast<size_t>(r)] = ir;
    for (int64_t j = 0; j < c; ++j) {
      out.data[static_cast<size_t>(r * c + j)] = gain->value.data[static_cast<size_t>(j)] * xr[j] * ir;
    }
  }
  auto xp = x, gp = gain;
  return make_node(
      std::move(out), {x, gain},
      [xp, gp, rows, c, inv_rms = std::move(inv_rms)](Node& n) {
        for (int64_t r = 0; r < rows; ++r) {
          const double* gy = &n.grad.data[static_cast<size_t>(r * c)];
          const double* xr = &xp->value.data[static_cast<size_t>(r * c)];
          const double ir = inv_rms[static_cast<size_t>(r)];
          if (gp->requires_grad) {
            Tensor& gg = gp->ensure_grad();
            for (int64_t j = 0; j < c; ++j) gg.data[static_cast<size_t>(j)] += gy[j] * xr[j] * ir;
          }
          if (xp->requires_grad) {
            double sum_ux = 0.0;
            for (int64_t j = 0; j < c; ++j) sum_ux += gy[j] * gp->value.data[static_cast<size_t>(j)] * xr[j];
            const double inv_c = 1.0 / static_cast<double>(c);
            Tensor& gx = xp->ensure_grad();
            for (int64_t j = 0; j < c; ++j) {
              const double u = gy[j] * gp->value.data[static_cast<size_t>(j)];
              gx.data[static_cast<size_t>(r * c + j)] += u * ir - xr[j] * sum_ux * inv_c * ir * ir * ir;
            }
          }
        }
      },
      "rms_norm");
}

NodePtr mish(const NodePtr& x) {
  return unary(
      x, "mish", [](double v) { return v * std::tanh(softplus_scalar(v)); },
      [](double v) {
        const double t = std::tanh(softplus_scalar(v));
        return t + v * (1.0 - t * t) * sigmoid_scalar(v);
      });
}

NodePtr silu(const NodePtr& x) {
  return unary(
      x, "silu", [](double v) { return v * sigmoid_scalar(v); },
      [](double v) {
        const double s = sigmoid_scalar(v);
        return s * (1.0 + v * (1.0 - s));
      });
}

NodePtr sigmoid(const NodePtr& x) {
  return unary(
      x, "sigmoid", [](double v) { return sigmoid_scalar(v); },
      [](double v) {
        const double s = sigmoid_scalar(v);
        return s * (1.0 - s);
      });
}

NodePtr softplus(const NodePtr& x) {
  return unary(
      x, "softplus", [](double v) { return softplus_scalar(v); },
      [](double v) { return sigmoid_scalar(v); });
}

NodePtr exp(const NodePtr& x) {
  return unary(
      x, "exp", [](double v) { return std::exp(v); }, [](double v) { return std::exp(v); });
}

NodePtr tanh(const NodePtr& x) {
  return unary(
      x, "tanh", [](double v) { return std::tanh(v); },
      [](double v) {
        const double t = std::tanh(v);
        return 1.0 - t * t;
      });
}

NodePtr mean_over_axis(const NodePtr& x, int axis) {
  const int rank = x->value.rank();
  if (axis < 0 || axis >= rank) {
    fail(ErrorCode::ShapeMismatch, "mean_over_axis: axis " + std::to_string(axis) + " out of range");
  }
  const int64_t n_axis = x->value.dim(axis);
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= x->value.dim(i);
  for (int i = axis + 1; i < rank; ++i) inner *= x->value.dim(i);
  std::vector<int64_t> out_shape;
  for (int i = 0; i < rank; ++i) {
    if (i != axis) out_shape.push_back(x->value.dim(i));
  }
  Tensor out;
  out.shape = std::move(out_shape);
  out.data.assign(static_cast<size_t>(outer * inner), 0.0);
  const double inv = 1.0 / static_cast<double>(n_axis);
  for (int64_t o = 0; o < outer; ++o) {
    for (int64_t a = 0; a < n_axis; ++a) {
      const size_t base = static_cast<size_t>((o * n_axis + a) * inner);
      for (int64_t i = 0; i < inner; ++i) {
        out.data[static_cast<size_t>(o * inner + i)] += x->value.data[base + static_cast<size_t>(i)] * inv;
      }
    }
  }
  auto xp = x;
  return make_node(
      std::move(out), {x},
      [xp, outer, inner, n_axis, inv](Node& n) {
        if (!xp->requires_grad) return;
        Tensor& gx = xp->ensure_grad();
        for (int64_t o = 0; o < outer; ++o) {
          for (int64_t a = 0; a < n_axis; ++a) {
            const size_t base = static_cast<size_t>((o * n_axis + a) * inner);
            for (int64_t i = 0; i < inner; ++i) {
              gx.data[base + static_cast<size_t>(i)] += n.grad.data[static_cast<size_t>(o * inner + i)] * inv;
            }
          }
        }
      },
      "mean_over_axis");
}

NodePtr slice(const NodePtr& x, int axis, int64_t start, int64_t len) {
  const int rank = x->value.rank();
  if (axis < 0 || axis >= rank) fail(ErrorCode::ShapeMismatch, "slice: axis out of range");
  if (start < 0 || len < 1 || start + len > x->value.dim(axis)) {
    fail(ErrorCode::ShapeMismatch, "slice: window [" + std::to_string(start) + ", " +
                                       std::to_string(start + len) + ") out of bounds for " +
                                       shape_str(x->value.shape));
  }
  const int64_t n_axis = x->value.dim(axis);
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= x->value.dim(i);
  for (int i = axis + 1; i < rank; ++i) inner *= x->value.dim(i);
  std::vector<int64_t> out_shape = x->value.shape;
  out_shape[static_cast<size_t>(axis)] = len;
  Tensor out(out_shape);
  for (int64_t o = 0; o < outer; ++o) {
    for (int64_t a = 0; a < len; ++a) {
      const size_t src = static_cast<size_t>((o * n_axis + start + a) * inner);
      const size_t dst = static_cast<size_t>((o * len + a) * inner);
      std::copy_n(&x->value.data[src], inner, &out.data[dst]);
    }
  }
  auto xp = x;
  return make_node(
      std::move(out), {x},
      [xp, outer, inner, n_axis, start, len](Node& n) {
        if (!xp->requires_grad) return;
        Tensor& gx = xp->ensure_grad();
        for (int64_t o = 0; o < outer; ++o) {
          for (int64_t a = 0; a < len; ++a) {
            const size_t src = static_cast<size_t>((o * len + a) * inner);
            const size_t dst = static_cast<size_t>((o * n_axis + start + a) * inner);
            for (int64_t i = 0; i < inner; ++i) gx.data[dst + static_cast<size_t>(i)] += n.grad.data[src + static_cast<size_t>(i)];
          }
        }
      },
      "slice");
}

NodePtr concat(const std::vector<NodePtr>& xs, int axis) {
  if (xs.empty()) fail(ErrorCode::ShapeMismatch, "concat: no inputs");
  const int rank = xs[0]->value.rank();
  if (axis < 0 || axis >= rank) fail(ErrorCode::ShapeMismatch, "concat: axis out of range");
  int64_t total_axis = 0;
  for (const auto& x : xs) {
    if (x->value.rank() != rank) fail(ErrorCode::ShapeMismatch, "concat: rank mismatch");
    for (int i = 0; i < rank; ++i) {
      if (i != axis && x->value.dim(i) != xs[0]->value.dim(i)) {
        fail(ErrorCode::ShapeMismatch, "concat: shape mismatch off the concat axis");
      }
    }
    total_axis += x->value.dim(axis);
  }
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= xs[0]->value.dim(i);
  for (int i = axis + 1; i < rank; ++i) inner *= xs[0]->value.dim(i);
  std::vector<int64_t> out_shape = xs[0]->value.shape;
  out_shape[static_cast<size_t>(axis)] = total_axis;
  Tensor out(out_shape);
  int64_t offset = 0;
  for (const auto& x : xs) {
    const int64_t na = x->value.dim(axis);
    for (int64_t o = 0; o < outer; ++o) {
      const size_t src = static_cast<size_t>(o * na * inner);
      const size_t dst = static_cast<size_t>((o * total_axis + offset) * inner);
      std::copy_n(&x->value.data[src], na * inner, &out.data[dst]);
    }
    offset += na;
  }
  auto parts = xs;
  return make_node(
      std::move(out), xs,
      [parts, outer, inner, total_axis](Node& n) {
        int64_t offset = 0;
        for (const auto& x : parts) {
          const int64_t na = x->value.numel() / (outer * inner);
          if (x->requires_grad) {
            Tensor& gx = x->ensure_grad();
            for (int64_t o = 0; o < outer; ++o) {
              const size_t src = static_cast<size_t>((o * total_axis + offset) * inner);
              const size_t dst = static_cast<size_t>(o * na * inner);
              for (int64_t i = 0; i < na * inner; ++i) {
                gx.data[dst + static_cast<size_t>(i)] += n.grad.data[src + static_cast<size_t>(i)];
              }
            }
          }
          offset += na;
        }
      },
      "concat");
}

NodePtr reshape(const NodePtr& x, std::vector<int64_t> new_shape) {
  if (numel_of(new_shape) != x->value.numel()) {
    fail(ErrorCode::ShapeMismatch, "reshape: " + shape_str(x->value.shape) + " -> " + shape_str(new_shape));
  }
  Tensor out;
  out.shape = std::move(new_shape);
  out.data = x->value.data;
  auto xp = x;
  return make_node(
      std::move(out), {x},
      [xp](Node& n) {
        if (!xp->requires_grad) return;
        Tensor& gx = xp->ensure_grad();
        for (size_t i = 0; i < gx.data.size(); ++i) gx.data[i] += n.grad.data[i];
      },
      "reshape");
}

NodePtr selective_scan(const NodePtr& xs, const NodePtr& dt, const NodePtr& a,
                       const NodePtr& b_in, const NodePtr& c_in, const NodePtr& d_skip) {
  if (xs->value.rank() != 3 || dt->value.rank() != 2 || a->value.rank() != 1 ||
      b_in->value.rank() != 2 || c_in->value.rank() != 2 || d_skip->value.rank() != 1) {
    fail(ErrorCode::ShapeMismatch, "selective_scan: bad ranks");
  }
  const int64_t t_len = xs->value.dim(0), heads = xs->value.dim(1), width = xs->value.dim(2);
  const int64_t n_state = b_in->value.dim(1);
  if (dt->value.dim(0) != t_len || dt->value.dim(1) != heads || a->value.dim(0) != heads ||
      b_in->value.dim(0) != t_len || c_in->value.dim(0) != t_len || c_in->value.dim(1) != n_state ||
      d_skip->value.dim(0) != heads) {
    fail(ErrorCode::ShapeMismatch, "selective_scan: inconsistent shapes");
  }

  const int64_t chunk = 64;
  const int64_t state_sz = heads * width * n_state;
  const int64_t n_chunks = (t_len + chunk - 1) / chunk;

  // forward, snapshotting the state at each chunk boundary for backward
  std::vector<double> snapshots(static_cast<size_t>(n_chunks * state_sz));
  std::vector<double> state(static_cast<size_t>(state_sz), 0.0);
  Tensor out({t_len, heads, width});
  for (int64_t t = 0; t < t_len; ++t) {
    if (t % chunk == 0) {
      std::copy(state.begin(), state.end(), snapshots.begin() + static_cast<size_t>((t / chunk) * state_sz));
    }
    for (int64_t h = 0; h < heads; ++h) {
      const double delta = dt->value.at(t, h);
      const double alpha = std::exp(delta * a->value.data[static_cast<size_t>(h)]);
      const double dv = d_skip->value.data[static_cast<size_t>(h)];
      for (int64_t p = 0; p < width; ++p) {
        const double xv = xs->value.at(t, h, p);
        double* srow = &state[static_cast<size_t>((h * width + p) * n_state)];
        double acc = 0.0;
        for (int64_t n = 0; n < n_state; ++n) {
          srow[n] = alpha * srow[n] + delta * b_in->value.at(t, n) * xv;
          acc += c_in->value.at(t, n) * srow[n];
        }
        out.at(t, h, p) = acc + dv * xv;
      }
    }
  }

  auto xp = xs, dtp = dt, app = a, bp = b_in, cp = c_in, dp = d_skip;
  return make_node(
      std::move(out), {xs, dt, a, b_in, c_in, d_skip},
      [xp, dtp, app, bp, cp, dp, t_len, heads, width, n_state, chunk, state_sz,
       snapshots = std::move(snapshots)](Node& n) {
        // Adjoint of the recurrence, walked backward chunk by chunk. Within a
        // chunk the per-step states are recomputed from the chunk snapshot.
        std::vector<double> adj(static_cast<size_t>(state_sz), 0.0);  // dL/dS_t
        const int64_t n_chunks = (t_len + chunk - 1) / chunk;
        std::vector<double> local((static_cast<size_t>(chunk) + 1) * static_cast<size_t>(state_sz));
        for (int64_t c = n_chunks - 1; c >= 0; --c) {
          const int64_t t0 = c * chunk;
          const int64_t t1 = std::min(t_len, t0 + chunk);
          const int64_t steps = t1 - t0;
          // local[i] = state before step t0+i; local[steps] = state after t1-1
          std::copy_n(snapshots.begin() + static_cast<size_t>(c * state_sz), state_sz, local.begin());
          for (int64_t i = 0; i < steps; ++i) {
            const int64_t t = t0 + i;
            const double* prev = &local[static_cast<size_t>(i * state_sz)];
            double* next = &local[static_cast<size_t>((i + 1) * state_sz)];
            for (int64_t h = 0; h < heads; ++h) {
              const double delta = dtp->value.at(t, h);
              const double alpha = std::exp(delta * app->value.data[static_cast<size_t>(h)]);
              for (int64_t p = 0; p < width; ++p) {
                const double xv = xp->value.at(t, h, p);
                const size_t off = static_cast<size_t>((h * width + p) * n_state);
                for (int64_t s = 0; s < n_state; ++s) {
                  next[off + static_cast<size_t>(s)] =
                      alpha * prev[off + static_cast<size_t>(s)] + delta * bp->value.at(t, s) * xv;
                }
              }
            }
          }
          for (int64_t i = steps - 1; i >= 0; --i) {
            const int64_t t = t0 + i;
            const double* s_prev = &local[static_cast<size_t>(i * state_sz)];
            const double* s_cur = &local[static_cast<size_t>((i + 1) * state_sz)];
            for (int64_t h = 0; h < heads; ++h) {
              const double delta = dtp->value.at(t, h);
              const double av = app->value.data[static_cast<size_t>(h)];
              const double alpha = std::exp(delta * av);
              const double dv = dp->value.data[static_cast<size_t>(h)];
              double g_alpha = 0.0, g_delta = 0.0;
              for (int64_t p = 0; p < width; ++p) {
                const double gy = n.grad.at(t, h, p);
                const double xv = xp->value.at(t, h, p);
                const size_t off = static_cast<size_t>((h * width + p) * n_state);
                double gx_acc = (dp->requires_grad || xp->requires_grad) ? gy * dv : 0.0;
                if (dp->requires_grad) dp->ensure_grad().data[static_cast<size_t>(h)] += gy * xv;
                double* arow = &adj[off];
                for (int64_t s = 0; s < n_state; ++s) {
                  // y depends on S_t through C
                  arow[s] += gy * cp->value.at(t, s);
                  if (cp->requires_grad) cp->ensure_grad().at(t, s) += gy * s_cur[off + static_cast<size_t>(s)];
                  // S_t = alpha S_{t-1} + delta B x
                  const double g = arow[s];
                  g_alpha += g * s_prev[off + static_cast<size_t>(s)];
                  g_delta += g * bp->value.at(t, s) * xv;
                  if (bp->requires_grad) bp->ensure_grad().at(t, s) += g * delta * xv;
                  gx_acc += g * delta * bp->value.at(t, s);
                  // push adjoint one step back
                  arow[s] = g * alpha;
                }
                if (xp->requires_grad) xp->ensure_grad().at(t, h, p) += gx_acc;
              }
              if (dtp->requires_grad) dtp->ensure_grad().at(t, h) += g_delta + g_alpha * av * alpha;
              if (app->requires_grad) app->ensure_grad().data[static_cast<size_t>(h)] += g_alpha * delta * alpha;
            }
          }
        }
      },
      "selective_scan");
}

BackwardStats backward(const NodePtr& loss) {
  if (!loss) fail(ErrorCode::NotScalarLoss, "null loss");
  if (loss->value.numel() != 1) {
    fail(ErrorCode::NotScalarLoss, "loss has shape " + shape_str(loss->value.shape));
  }

  // reverse topological order over the requires_grad subgraph
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  struct Frame {
    Node* node;
    size_t next = 0;
  };
  std::vector<Frame> stack;
  if (loss->requires_grad) {
    stack.push_back({loss.get()});
    seen.insert(loss.get());
  }
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next < f.node->parents.size()) {
      Node* p = f.node->parents[f.next++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.push_back({p});
      }
    } else {
      order.push_back(f.node);
      stack.pop_back();
    }
  }

  loss->ensure_grad();
  loss->grad.data[0] = 1.0;

  BackwardStats stats;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    ++stats.nodes_visited;
    if (n->backprop) {
      n->ensure_grad();
      n->backprop(*n);
    }
  }
  return stats;
}

}  // namespace mambarate::ag
