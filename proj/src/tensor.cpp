// SPDX-License-Identifier: Apache-2.0

#include "migen/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace migen {

namespace {

thread_local int g_no_grad_depth = 0;

std::size_t shape_numel(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw std::invalid_argument("tensor dimensions must be positive");
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

std::vector<double>& ensure_grad(TensorNode& n) {
  if (n.grad.empty()) n.grad.assign(n.data.size(), 0.0);
  return n.grad;
}

Tensor make_op(std::vector<int> shape, std::vector<double> data,
               std::vector<Tensor> parents,
               std::function<void(TensorNode&)> backward_fn) {
  auto node = std::make_shared<TensorNode>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  bool rg = false;
  if (g_no_grad_depth == 0) {
    for (const auto& p : parents) rg = rg || p.requires_grad();
  }
  node->requires_grad = rg;
  if (rg) {
    node->parents = std::move(parents);
    node->backward = std::move(backward_fn);
  }
  return Tensor(std::move(node));
}

// Rows/width view of an arbitrary-rank tensor: first axis x everything else.
int leading_dim(const Tensor& t) { return t.rank() == 0 ? 1 : t.dim(0); }
std::size_t row_width(const Tensor& t) {
  return t.numel() / static_cast<std::size_t>(leading_dim(t));
}

}  // namespace

NoGradGuard::NoGradGuard() { ++g_no_grad_depth; }
NoGradGuard::~NoGradGuard() { --g_no_grad_depth; }

std::string shape_str(const std::vector<int>& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
  auto node = std::make_shared<TensorNode>();
  std::size_t n = shape_numel(shape);
  node->shape = std::move(shape);
  node->data.assign(n, 0.0);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::constant(std::vector<int> shape, double value) {
  Tensor t = zeros(std::move(shape), false);
  std::fill(t.data().begin(), t.data().end(), value);
  return t;
}

Tensor Tensor::from_data(std::vector<int> shape, std::vector<double> data,
                         bool requires_grad) {
  if (shape_numel(shape) != data.size()) {
    throw std::invalid_argument("from_data: shape " + shape_str(shape) +
                                " does not match data length " +
                                std::to_string(data.size()));
  }
  auto node = std::make_shared<TensorNode>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value) { return from_data({1}, {value}); }

Tensor Tensor::randn(std::vector<int> shape, std::mt19937_64& rng,
                     double stddev, bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  std::normal_distribution<double> dist(0.0, stddev);
  for (double& v : t.data()) v = dist(rng);
  return t;
}

std::size_t Tensor::numel() const { return node_->data.size(); }

double Tensor::value() const {
  if (numel() != 1) {
    throw std::logic_error("value(): tensor has " + std::to_string(numel()) +
                           " elements, expected 1");
  }
  return node_->data[0];
}

std::vector<double>& Tensor::grad() { return ensure_grad(*node_); }

void Tensor::zero_grad() { node_->grad.assign(node_->data.size(), 0.0); }

bool all_finite(const Tensor& t) {
  for (double v : t.data()) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

// ---- ops ----

Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() == b.shape()) {
    std::vector<double> out(a.numel());
    const auto& ad = a.data();
    const auto& bd = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] + bd[i];
    return make_op(a.shape(), std::move(out), {a, b}, [](TensorNode& n) {
      TensorNode* pa = n.parents[0].node();
      TensorNode* pb = n.parents[1].node();
      if (pa->requires_grad) {
        auto& ga = ensure_grad(*pa);
        for (std::size_t i = 0; i < n.grad.size(); ++i) ga[i] += n.grad[i];
      }
      if (pb->requires_grad) {
        auto& gb = ensure_grad(*pb);
        for (std::size_t i = 0; i < n.grad.size(); ++i) gb[i] += n.grad[i];
      }
    });
  }
  // bias broadcast over the last axis
  if (b.rank() == 1 && a.rank() >= 1 && a.dim(a.rank() - 1) == b.dim(0)) {
    const int width = b.dim(0);
    const std::size_t rows = a.numel() / width;
    std::vector<double> out(a.numel());
    const auto& ad = a.data();
    const auto& bd = b.data();
    for (std::size_t r = 0; r < rows; ++r) {
      for (int j = 0; j < width; ++j) out[r * width + j] = ad[r * width + j] + bd[j];
    }
    return make_op(a.shape(), std::move(out), {a, b}, [width](TensorNode& n) {
      TensorNode* pa = n.parents[0].node();
      TensorNode* pb = n.parents[1].node();
      const std::size_t rows = n.grad.size() / width;
      if (pa->requires_grad) {
        auto& ga = ensure_grad(*pa);
        for (std::size_t i = 0; i < n.grad.size(); ++i) ga[i] += n.grad[i];
      }
      if (pb->requires_grad) {
        auto& gb = ensure_grad(*pb);
        for (std::size_t r = 0; r < rows; ++r) {
          for (int j = 0; j < width; ++j) gb[j] += n.grad[r * width + j];
        }
      }
    });
  }
  throw std::invalid_argument("add: incompatible shapes " + shape_str(a.shape()) +
                              " and " + shape_str(b.shape()));
}

Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument("mul: shapes differ, " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
  }
  std::vector<double> out(a.numel());
  const auto& ad = a.data();
  const auto& bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] * bd[i];
  return make_op(a.shape(), std::move(out), {a, b}, [](TensorNode& n) {
    TensorNode* pa = n.parents[0].node();
    TensorNode* pb = n.parents[1].node();
    if (pa->requires_grad) {
      auto& ga = ensure_grad(*pa);
      for (std::size_t i = 0; i < n.grad.size(); ++i) ga[i] += n.grad[i] * pb->data[i];
    }
    if (pb->requires_grad) {
      auto& gb = ensure_grad(*pb);
      for (std::size_t i = 0; i < n.grad.size(); ++i) gb[i] += n.grad[i] * pa->data[i];
    }
  });
}

Tensor scale(const Tensor& a, double c) {
  std::vector<double> out(a.numel());
  const auto& ad = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] * c;
  return make_op(a.shape(), std::move(out), {a}, [c](TensorNode& n) {
    TensorNode* pa = n.parents[0].node();
    if (!pa->requires_grad) return;
    auto& ga = ensure_grad(*pa);
    for (std::size_t i = 0; i < n.grad.size(); ++i) ga[i] += c * n.grad[i];
  });
}

Tensor relu(const Tensor& x) {
  std::vector<double> out(x.numel());
  const auto& xd = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xd[i] > 0.0 ? xd[i] : 0.0;
  return make_op(x.shape(), std::move(out), {x}, [](TensorNode& n) {
    TensorNode* px = n.parents[0].node();
    if (!px->requires_grad) return;
    auto& gx = ensure_grad(*px);
    for (std::size_t i = 0; i < n.grad.size(); ++i) {
      if (px->data[i] > 0.0) gx[i] += n.grad[i];
    }
  });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw std::invalid_argument("matmul: incompatible shapes " +
                                shape_str(a.shape()) + " and " +
                                shape_str(b.shape()));
  }
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(static_cast<std::size_t>(m) * n, 0.0);
  const auto& ad = a.data();
  const auto& bd = b.data();
  for (int i = 0; i < m; ++i) {
    for (int p = 0; p < k; ++p) {
      const double aip = ad[static_cast<std::size_t>(i) * k + p];
      if (aip == 0.0) continue;
      const double* brow = &bd[static_cast<std::size_t>(p) * n];
      double* orow = &out[static_cast<std::size_t>(i) * n];
      for (int j = 0; j < n; ++j) orow[j] += aip * brow[j];
    }
  }
  return make_op({m, n}, std::move(out), {a, b}, [m, k, n](TensorNode& nd) {
    TensorNode* pa = nd.parents[0].node();
    TensorNode* pb = nd.parents[1].node();
    if (pa->requires_grad) {  // dA = dC * B^T
      auto& ga = ensure_grad(*pa);
      for (int i = 0; i < m; ++i) {
        for (int p = 0; p < k; ++p) {
          double acc = 0.0;
          const double* grow = &nd.grad[static_cast<std::size_t>(i) * n];
          const double* brow = &pb->data[static_cast<std::size_t>(p) * n];
          for (int j = 0; j < n; ++j) acc += grow[j] * brow[j];
          ga[static_cast<std::size_t>(i) * k + p] += acc;
        }
      }
    }
    if (pb->requires_grad) {  // dB = A^T * dC
      auto& gb = ensure_grad(*pb);
      for (int i = 0; i < m; ++i) {
        const double* arow = &pa->data[static_cast<std::size_t>(i) * k];
        const double* grow = &nd.grad[static_cast<std::size_t>(i) * n];
        for (int p = 0; p < k; ++p) {
          const double aip = arow[p];
          if (aip == 0.0) continue;
          double* gbrow = &gb[static_cast<std::size_t>(p) * n];
          for (int j = 0; j < n; ++j) gbrow[j] += aip * grow[j];
        }
      }
    }
  });
}

Tensor transpose(const Tensor& x) {
  if (x.rank() != 2) throw std::invalid_argument("transpose: rank-2 tensor expected");
  const int m = x.dim(0), n = x.dim(1);
  std::vector<double> out(x.numel());
  const auto& xd = x.data();
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) out[static_cast<std::size_t>(j) * m + i] = xd[static_cast<std::size_t>(i) * n + j];
  }
  return make_op({n, m}, std::move(out), {x}, [m, n](TensorNode& nd) {
    TensorNode* px = nd.parents[0].node();
    if (!px->requires_grad) return;
    auto& gx = ensure_grad(*px);
    for (int i = 0; i < m; ++i) {
      for (int j = 0; j < n; ++j) {
        gx[static_cast<std::size_t>(i) * n + j] += nd.grad[static_cast<std::size_t>(j) * m + i];
      }
    }
  });
}

namespace {

struct AxisView {
  std::size_t lines;   // number of 1-D lines along the axis
  int len;             // elements per line
  std::size_t stride;  // distance between consecutive line elements
  std::size_t outer_stride;
  std::size_t inner;   // lines per outer block
};

AxisView axis_view(const std::vector<int>& shape, int axis) {
  const int r = static_cast<int>(shape.size());
  if (axis < 0 || axis >= r) throw std::invalid_argument("axis out of range");
  std::size_t inner = 1;
  for (int i = axis + 1; i < r; ++i) inner *= shape[i];
  std::size_t outer = 1;
  for (int i = 0; i < axis; ++i) outer *= shape[i];
  AxisView v;
  v.len = shape[axis];
  v.stride = inner;
  v.inner = inner;
  v.outer_stride = inner * shape[axis];
  v.lines = outer * inner;
  return v;
}

// Base offset of line `li` (0 <= li < lines).
inline std::size_t line_base(const AxisView& v, std::size_t li) {
  const std::size_t o = li / v.inner, i = li % v.inner;
  return o * v.outer_stride + i;
}

}  // namespace

Tensor softmax(const Tensor& x, int axis) {
  const AxisView v = axis_view(x.shape(), axis);
  std::vector<double> out(x.numel());
  const auto& xd = x.data();
  for (std::size_t li = 0; li < v.lines; ++li) {
    const std::size_t base = line_base(v, li);
    double mx = xd[base];
    for (int t = 1; t < v.len; ++t) mx = std::max(mx, xd[base + t * v.stride]);
    double denom = 0.0;
    for (int t = 0; t < v.len; ++t) {
      const double e = std::exp(xd[base + t * v.stride] - mx);
      out[base + t * v.stride] = e;
      denom += e;
    }
    for (int t = 0; t < v.len; ++t) out[base + t * v.stride] /= denom;
  }
  return make_op(x.shape(), std::move(out), {x}, [v](TensorNode& nd) {
    TensorNode* px = nd.parents[0].node();
    if (!px->requires_grad) return;
    auto& gx = ensure_grad(*px);
    for (std::size_t li = 0; li < v.lines; ++li) {
      const std::size_t base = line_base(v, li);
      double dot = 0.0;
      for (int t = 0; t < v.len; ++t) {
        const std::size_t ix = base + t * v.stride;
        dot += nd.grad[ix] * nd.data[ix];
      }
      for (int t = 0; t < v.len; ++t) {
        const std::size_t ix = base + t * v.stride;
        gx[ix] += nd.data[ix] * (nd.grad[ix] - dot);
      }
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps) {
  const int width = x.dim(x.rank() - 1);
  if (gamma.rank() != 1 || beta.rank() != 1 || gamma.dim(0) != width ||
      beta.dim(0) != width) {
    throw std::invalid_argument("layer_norm: gamma/beta must match last axis " +
                                std::to_string(width));
  }
  const std::size_t rows = x.numel() / width;
  std::vector<double> out(x.numel());
  // saved for backward
  auto xhat = std::make_shared<std::vector<double>>(x.numel());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  const auto& xd = x.data();
  const auto& gd = gamma.data();
  const auto& bd = beta.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = &xd[r * width];
    double mean_v = 0.0;
    for (int j = 0; j < width; ++j) mean_v += xr[j];
    mean_v /= width;
    double var = 0.0;
    for (int j = 0; j < width; ++j) {
      const double d = xr[j] - mean_v;
      var += d * d;
    }
    var /= width;
    const double inv = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = inv;
    for (int j = 0; j < width; ++j) {
      const double xh = (xr[j] - mean_v) * inv;
      (*xhat)[r * width + j] = xh;
      out[r * width + j] = gd[j] * xh + bd[j];
    }
  }
  return make_op(x.shape(), std::move(out), {x, gamma, beta},
                 [width, rows, xhat, inv_std](TensorNode& nd) {
    TensorNode* px = nd.parents[0].node();
    TensorNode* pg = nd.parents[1].node();
    TensorNode* pb = nd.parents[2].node();
    for (std::size_t r = 0; r < rows; ++r) {
      const double* dy = &nd.grad[r * width];
      const double* xh = &(*xhat)[r * width];
      if (pg->requires_grad) {
        auto& gg = ensure_grad(*pg);
        for (int j = 0; j < width; ++j) gg[j] += dy[j] * xh[j];
      }
      if (pb->requires_grad) {
        auto& gb = ensure_grad(*pb);
        for (int j = 0; j < width; ++j) gb[j] += dy[j];
      }
      if (px->requires_grad) {
        auto& gx = ensure_grad(*px);
        double mean_dxh = 0.0, mean_dxh_xh = 0.0;
        for (int j = 0; j < width; ++j) {
          const double dxh = dy[j] * pg->data[j];
          mean_dxh += dxh;
          mean_dxh_xh += dxh * xh[j];
        }
        mean_dxh /= width;
        mean_dxh_xh /= width;
        const double inv = (*inv_std)[r];
        for (int j = 0; j < width; ++j) {
          const double dxh = dy[j] * pg->data[j];
          gx[r * width + j] += inv * (dxh - mean_dxh - xh[j] * mean_dxh_xh);
        }
      }
    }
  });
}

Tensor conv2d_same(const Tensor& x, const Tensor& kernel, bool depthwise) {
  if (x.rank() != 3) {
    throw std::invalid_argument("conv2d_same: input must be [H,W,C], got " +
                                shape_str(x.shape()));
  }
  const int h = x.dim(0), w = x.dim(1), c = x.dim(2);
  const int k = kernel.dim(0);
  if (k % 2 == 0) {
    throw std::invalid_argument("conv2d_same: kernel side must be odd, got " +
                                std::to_string(k));
  }
  int c_out = c;
  if (depthwise) {
    if (kernel.rank() != 3 || kernel.dim(1) != k || kernel.dim(2) != c) {
      throw std::invalid_argument("conv2d_same: depthwise kernel must be [k,k," +
                                  std::to_string(c) + "], got " +
                                  shape_str(kernel.shape()));
    }
  } else {
    if (kernel.rank() != 4 || kernel.dim(1) != k || kernel.dim(2) != c) {
      throw std::invalid_argument("conv2d_same: full kernel must be [k,k," +
                                  std::to_string(c) + ",C_out], got " +
                                  shape_str(kernel.shape()));
    }
    c_out = kernel.dim(3);
  }
  const int pad = (k - 1) / 2;
  std::vector<double> out(static_cast<std::size_t>(h) * w * c_out, 0.0);
  const auto& xd = x.data();
  const auto& kd = kernel.data();
  auto xidx = [w, c](int i, int j, int ch) {
    return (static_cast<std::size_t>(i) * w + j) * c + ch;
  };
  auto oidx = [w, c_out](int i, int j, int ch) {
    return (static_cast<std::size_t>(i) * w + j) * c_out + ch;
  };
  for (int i = 0; i < h; ++i) {
    for (int j = 0; j < w; ++j) {
      for (int di = 0; di < k; ++di) {
        const int si = i + di - pad;
        if (si < 0 || si >= h) continue;
        for (int dj = 0; dj < k; ++dj) {
          const int sj = j + dj - pad;
          if (sj < 0 || sj >= w) continue;
          if (depthwise) {
            const std::size_t kb = (static_cast<std::size_t>(di) * k + dj) * c;
            for (int ch = 0; ch < c; ++ch) {
              out[oidx(i, j, ch)] += xd[xidx(si, sj, ch)] * kd[kb + ch];
            }
          } else {
            const std::size_t kb =
                (static_cast<std::size_t>(di) * k + dj) * c * c_out;
            for (int ci = 0; ci < c; ++ci) {
              const double xv = xd[xidx(si, sj, ci)];
              if (xv == 0.0) continue;
              const double* kr = &kd[kb + static_cast<std::size_t>(ci) * c_out];
              double* orow = &out[oidx(i, j, 0)];
              for (int co = 0; co < c_out; ++co) orow[co] += xv * kr[co];
            }
          }
        }
      }
    }
  }
  return make_op({h, w, c_out}, std::move(out), {x, kernel},
                 [h, w, c, c_out, k, pad, depthwise](TensorNode& nd) {
    TensorNode* px = nd.parents[0].node();
    TensorNode* pk = nd.parents[1].node();
    auto xidx = [w, c](int i, int j, int ch) {
      return (static_cast<std::size_t>(i) * w + j) * c + ch;
    };
    auto oidx = [w, c_out](int i, int j, int ch) {
      return (static_cast<std::size_t>(i) * w + j) * c_out + ch;
    };
    std::vector<double>* gx = px->requires_grad ? &ensure_grad(*px) : nullptr;
    std::vector<double>* gk = pk->requires_grad ? &ensure_grad(*pk) : nullptr;
    for (int i = 0; i < h; ++i) {
      for (int j = 0; j < w; ++j) {
        for (int di = 0; di < k; ++di) {
          const int si = i + di - pad;
          if (si < 0 || si >= h) continue;
          for (int dj = 0; dj < k; ++dj) {
            const int sj = j + dj - pad;
            if (sj < 0 || sj >= w) continue;
            if (depthwise) {
              const std::size_t kb = (static_cast<std::size_t>(di) * k + dj) * c;
              for (int ch = 0; ch < c; ++ch) {
                const double g = nd.grad[oidx(i, j, ch)];
                if (gx) (*gx)[xidx(si, sj, ch)] += g * pk->data[kb + ch];
                if (gk) (*gk)[kb + ch] += g * px->data[xidx(si, sj, ch)];
              }
            } else {
              const std::size_t kb =
                  (static_cast<std::size_t>(di) * k + dj) * c * c_out;
              for (int ci = 0; ci < c; ++ci) {
                const std::size_t kr = kb + static_cast<std::size_t>(ci) * c_out;
                const double xv = px->data[xidx(si, sj, ci)];
                double acc = 0.0;
                for (int co = 0; co < c_out; ++co) {
                  const double g = nd.grad[oidx(i, j, co)];
                  acc += g * pk->data[kr + co];
                  if (gk) (*gk)[kr + co] += g * xv;
                }
                if (gx) (*gx)[xidx(si, sj, ci)] += acc;
              }
            }
          }
        }
      }
    }
  });
}

Tensor embedding(const Tensor& table, const std::vector<int>& ids) {
  if (table.rank() != 2) throw std::invalid_argument("embedding: table must be rank-2");
  const int v = table.dim(0), d = table.dim(1);
  for (int id : ids) {
    if (id < 0 || id >= v) {
      throw std::invalid_argument("embedding: id " + std::to_string(id) +
                                  " out of range [0," + std::to_string(v) + ")");
    }
  }
  const int n = static_cast<int>(ids.size());
  std::vector<double> out(static_cast<std::size_t>(n) * d);
  const auto& td = table.data();
  for (int i = 0; i < n; ++i) {
    std::copy_n(&td[static_cast<std::size_t>(ids[i]) * d], d,
                &out[static_cast<std::size_t>(i) * d]);
  }
  return make_op({n, d}, std::move(out), {table}, [ids, d](TensorNode& nd) {
    TensorNode* pt = nd.parents[0].node();
    if (!pt->requires_grad) return;
    auto& gt = ensure_grad(*pt);
    for (std::size_t i = 0; i < ids.size(); ++i) {
      const double* g = &nd.grad[i * d];
      double* grow = &gt[static_cast<std::size_t>(ids[i]) * d];
      for (int j = 0; j < d; ++j) grow[j] += g[j];
    }
  });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no parts");
  const std::size_t width = row_width(parts[0]);
  int rows = 0;
  for (const auto& p : parts) {
    if (row_width(p) != width) {
      throw std::invalid_argument("concat_rows: row width mismatch");
    }
    rows += leading_dim(p);
  }
  std::vector<int> shape = parts[0].shape();
  shape[0] = rows;
  std::vector<double> out;
  out.reserve(rows * width);
  for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  return make_op(std::move(shape), std::move(out), parts, [width](TensorNode& nd) {
    std::size_t off = 0;
    for (auto& parent : nd.parents) {
      TensorNode* pp = parent.node();
      const std::size_t len = pp->data.size();
      if (pp->requires_grad) {
        auto& gp = ensure_grad(*pp);
        for (std::size_t i = 0; i < len; ++i) gp[i] += nd.grad[off + i];
      }
      off += len;
    }
    (void)width;
  });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no parts");
  const int rows = parts[0].dim(0);
  int width = 0;
  for (const auto& p : parts) {
    if (p.rank() != 2 || p.dim(0) != rows) {
      throw std::invalid_argument("concat_cols: rank-2 parts with equal rows expected");
    }
    width += p.dim(1);
  }
  std::vector<double> out(static_cast<std::size_t>(rows) * width);
  int off = 0;
  for (const auto& p : parts) {
    const int w = p.dim(1);
    for (int r = 0; r < rows; ++r) {
      std::copy_n(&p.data()[static_cast<std::size_t>(r) * w], w,
                  &out[static_cast<std::size_t>(r) * width + off]);
    }
    off += w;
  }
  return make_op({rows, width}, std::move(out), parts, [rows, width](TensorNode& nd) {
    int off = 0;
    for (auto& parent : nd.parents) {
      TensorNode* pp = parent.node();
      const int w = pp->shape[1];
      if (pp->requires_grad) {
        auto& gp = ensure_grad(*pp);
        for (int r = 0; r < rows; ++r) {
          for (int j = 0; j < w; ++j) {
            gp[static_cast<std::size_t>(r) * w + j] +=
                nd.grad[static_cast<std::size_t>(r) * width + off + j];
          }
        }
      }
      off += w;
    }
  });
}

Tensor slice_rows(const Tensor& x, int start, int count) {
  const int rows = leading_dim(x);
  if (start < 0 || count < 1 || start + count > rows) {
    throw std::invalid_argument("slice_rows: range [" + std::to_string(start) +
                                "," + std::to_string(start + count) +
                                ") out of " + std::to_string(rows) + " rows");
  }
  const std::size_t width = row_width(x);
  std::vector<int> shape = x.shape();
  shape[0] = count;
  std::vector<double> out(count * width);
  std::copy_n(&x.data()[start * width], count * width, out.data());
  return make_op(std::move(shape), std::move(out), {x}, [start, width](TensorNode& nd) {
    TensorNode* px = nd.parents[0].node();
    if (!px->requires_grad) return;
    auto& gx = ensure_grad(*px);
    for (std::size_t i = 0; i < nd.grad.size(); ++i) gx[start * width + i] += nd.grad[i];
  });
}

Tensor slice_cols(const Tensor& x, int start, int count) {
  if (x.rank() != 2) throw std::invalid_argument("slice_cols: rank-2 tensor expected");
  const int rows = x.dim(0), cols = x.dim(1);
  if (start < 0 || count < 1 || start + count > cols) {
    throw std::invalid_argument("slice_cols: column range out of bounds");
  }
  std::vector<double> out(static_cast<std::size_t>(rows) * count);
  for (int r = 0; r < rows; ++r) {
    std::copy_n(&x.data()[static_cast<std::size_t>(r) * cols + start], count,
                &out[static_cast<std::size_t>(r) * count]);
  }
  return make_op({rows, count}, std::move(out), {x},
                 [rows, cols, start, count](TensorNode& nd) {
    TensorNode* px = nd.parents[0].node();
    if (!px->requires_grad) return;
    auto& gx = ensure_grad(*px);
    for (int r = 0; r < rows; ++r) {
      for (int j = 0; j < count; ++j) {
        gx[static_cast<std::size_t>(r) * cols + start + j] +=
            nd.grad[static_cast<std::size_t>(r) * count + j];
      }
    }
  });
}

Tensor pad_rows(const Tensor& x, int new_rows) {
  const int rows = leading_dim(x);
  if (new_rows < rows) {
    throw std::invalid_argument("pad_rows: target rows " + std::to_string(new_rows) +
                                " smaller than current " + std::to_string(rows));
  }
  const std::size_t width = row_width(x);
  std::vector<int> shape = x.shape();
  shape[0] = new_rows;
  std::vector<double> out(new_rows * width, 0.0);
  std::copy(x.data().begin(), x.data().end(), out.begin());
  return make_op(std::move(shape), std::move(out), {x}, [](TensorNode& nd) {
    TensorNode* px = nd.parents[0].node();
    if (!px->requires_grad) return;
    auto& gx = ensure_grad(*px);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += nd.grad[i];
  });
}

Tensor reshape(const Tensor& x, std::vector<int> shape) {
  if (shape_numel(shape) != x.numel()) {
    throw std::invalid_argument("reshape: " + shape_str(x.shape()) + " to " +
                                shape_str(shape) + " changes element count");
  }
  std::vector<double> out = x.data();
  return make_op(std::move(shape), std::move(out), {x}, [](TensorNode& nd) {
    TensorNode* px = nd.parents[0].node();
    if (!px->requires_grad) return;
    auto& gx = ensure_grad(*px);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += nd.grad[i];
  });
}

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  return make_op({1}, {acc}, {x}, [](TensorNode& nd) {
    TensorNode* px = nd.parents[0].node();
    if (!px->requires_grad) return;
    auto& gx = ensure_grad(*px);
    for (double& g : gx) g += nd.grad[0];
  });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor dropout(const Tensor& x, double rate, std::mt19937_64& rng) {
  if (rate < 0.0 || rate >= 1.0) throw std::invalid_argument("dropout: rate must be in [0,1)");
  if (rate == 0.0) return x;
  const double keep = 1.0 - rate;
  auto mask = std::make_shared<std::vector<double>>(x.numel());
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> out(x.numel());
  const auto& xd = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double m = u(rng) < keep ? 1.0 / keep : 0.0;
    (*mask)[i] = m;
    out[i] = xd[i] * m;
  }
  return make_op(x.shape(), std::move(out), {x}, [mask](TensorNode& nd) {
    TensorNode* px = nd.parents[0].node();
    if (!px->requires_grad) return;
    auto& gx = ensure_grad(*px);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += nd.grad[i] * (*mask)[i];
  });
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets,
                     int pad_id) {
  if (logits.rank() != 2) throw std::invalid_argument("cross_entropy: logits must be [n,vocab]");
  const int n = logits.dim(0), v = logits.dim(1);
  if (static_cast<int>(targets.size()) != n) {
    throw std::invalid_argument("cross_entropy: got " + std::to_string(targets.size()) +
                                " targets for " + std::to_string(n) + " logit rows");
  }
  int count = 0;
  for (int t : targets) {
    if (t == pad_id) continue;
    if (t < 0 || t >= v) {
      throw std::invalid_argument("cross_entropy: target " + std::to_string(t) +
                                  " out of range [0," + std::to_string(v) + ")");
    }
    ++count;
  }
  if (count == 0) throw std::logic_error("cross_entropy: all target positions are pad");
  // save softmax rows for backward
  auto probs = std::make_shared<std::vector<double>>(logits.numel());
  const auto& ld = logits.data();
  double loss = 0.0;
  for (int r = 0; r < n; ++r) {
    const double* row = &ld[static_cast<std::size_t>(r) * v];
    double mx = row[0];
    for (int j = 1; j < v; ++j) mx = std::max(mx, row[j]);
    double denom = 0.0;
    for (int j = 0; j < v; ++j) {
      const double e = std::exp(row[j] - mx);
      (*probs)[static_cast<std::size_t>(r) * v + j] = e;
      denom += e;
    }
    for (int j = 0; j < v; ++j) (*probs)[static_cast<std::size_t>(r) * v + j] /= denom;
    if (targets[r] != pad_id) {
      loss += std::log(denom) + mx - row[targets[r]];
    }
  }
  loss /= count;
  return make_op({1}, {loss}, {logits}, [targets, pad_id, n, v, count, probs](TensorNode& nd) {
    TensorNode* pl = nd.parents[0].node();
    if (!pl->requires_grad) return;
    auto& gl = ensure_grad(*pl);
    const double g = nd.grad[0] / count;
    for (int r = 0; r < n; ++r) {
      if (targets[r] == pad_id) continue;
      const std::size_t base = static_cast<std::size_t>(r) * v;
      for (int j = 0; j < v; ++j) gl[base + j] += g * (*probs)[base + j];
      gl[base + targets[r]] -= g;
    }
  });
}

void backward(const Tensor& loss) {
  if (loss.numel() != 1) {
    throw std::logic_error("backward: loss must be scalar, got " +
                           shape_str(loss.shape()));
  }
  if (!loss.requires_grad()) {
    throw std::logic_error("backward: loss does not depend on any requires_grad tensor");
  }
  // iterative post-order DFS over requires_grad ancestors
  std::vector<TensorNode*> order;
  std::unordered_set<TensorNode*> seen;
  struct Frame {
    TensorNode* n;
    std::size_t next;
  };
  std::vector<Frame> stack;
  stack.push_back({loss.node(), 0});
  seen.insert(loss.node());
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next < f.n->parents.size()) {
      TensorNode* p = f.n->parents[f.next++].node();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(f.n);
      stack.pop_back();
    }
  }
  ensure_grad(*loss.node())[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorNode* n = *it;
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
}

double grad_check(const std::function<Tensor()>& f,
                  const std::vector<Tensor>& wrt, double h) {
  if (h <= 0.0) throw std::invalid_argument("grad_check: h must be positive");
  for (const auto& t : wrt) {
    if (!t.requires_grad()) {
      throw std::invalid_argument("grad_check: all checked tensors must require grad");
    }
  }
  std::vector<Tensor> params = wrt;
  for (auto& t : params) t.zero_grad();
  Tensor loss = f();
  backward(loss);
  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (auto& t : params) analytic.push_back(t.grad());

  double max_err = 0.0;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto& data = params[pi].data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double orig = data[i];
      data[i] = orig + h;
      const double fp = f().value();
      data[i] = orig - h;
      const double fm = f().value();
      data[i] = orig;
      const double numeric = (fp - fm) / (2.0 * h);
      const double a = analytic[pi][i];
      const double err = std::abs(a - numeric) / std::max(1.0, std::abs(a));
      max_err = std::max(max_err, err);
    }
  }
  return max_err;
}

}  // namespace migen
