#include "s2a/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cassert>
#include <cmath>
#include <unordered_set>

#include "s2a/common.hpp"

namespace s2a {

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw ValidationError("tensor dimensions must be positive");
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

namespace detail {

void Node::ensure_grad() {
  if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
}

namespace {

std::atomic<std::uint64_t> next_id{1};

void check_finite(const std::vector<double>& v) {
#ifndef NDEBUG
  for (double x : v) assert(std::isfinite(x) && "non-finite value in forward op");
#else
  (void)v;
#endif
}

}  // namespace

std::shared_ptr<Node> make_node(Shape shape, std::vector<double> data,
                                std::vector<std::shared_ptr<Node>> parents,
                                std::function<void(Node&)> backward_fn) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  check_finite(node->data);
  node->requires_grad = false;
  for (const auto& p : parents)
    if (p && p->requires_grad) node->requires_grad = true;
  if (node->requires_grad) {
    node->parents = std::move(parents);
    node->backward_fn = std::move(backward_fn);
  }
  node->id = next_id.fetch_add(1);
  return node;
}

}  // namespace detail

using detail::Node;
using detail::make_node;

Tensor Tensor::zeros(const Shape& shape, bool requires_grad) {
  return from_data(shape, std::vector<double>(shape_size(shape), 0.0), requires_grad);
}

Tensor Tensor::full(const Shape& shape, double value, bool requires_grad) {
  return from_data(shape, std::vector<double>(shape_size(shape), value), requires_grad);
}

Tensor Tensor::from_data(const Shape& shape, std::vector<double> data,
                         bool requires_grad) {
  if (data.size() != shape_size(shape))
    throw ValidationError("tensor data length does not match shape");
  auto node = make_node(shape, std::move(data), {}, nullptr);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::randn(const Shape& shape, Rng& rng, double stddev, bool requires_grad) {
  std::vector<double> data(shape_size(shape));
  for (double& v : data) v = rng.normal() * stddev;
  return from_data(shape, std::move(data), requires_grad);
}

const Shape& Tensor::shape() const { return node_->shape; }
std::size_t Tensor::size() const { return node_->data.size(); }
bool Tensor::requires_grad() const { return node_->requires_grad; }
const std::vector<double>& Tensor::values() const { return node_->data; }
std::vector<double>& Tensor::values() { return node_->data; }

const std::vector<double>& Tensor::grad() const {
  node_->ensure_grad();
  return node_->grad;
}

void Tensor::zero_grad() { node_->grad.assign(node_->data.size(), 0.0); }

double Tensor::item() const {
  if (size() != 1) throw ValidationError("item() requires a scalar tensor");
  return node_->data[0];
}

Tape trace(const Tensor& root) {
  Tape tape;
  std::unordered_set<Node*> seen;
  std::vector<std::shared_ptr<Node>> stack{root.node()};
  while (!stack.empty()) {
    auto n = stack.back();
    stack.pop_back();
    if (!n || !seen.insert(n.get()).second) continue;
    tape.ops.push_back(n);
    for (const auto& p : n->parents) stack.push_back(p);
  }
  std::sort(tape.ops.begin(), tape.ops.end(),
            [](const auto& a, const auto& b) { return a->id < b->id; });
  return tape;
}

void backward(const Tensor& loss) {
  if (loss.size() != 1) throw ValidationError("backward() requires a scalar loss");
  Tape tape = trace(loss);
  for (const auto& n : tape.ops) n->ensure_grad();
  loss.node()->grad[0] += 1.0;
  for (auto it = tape.ops.rbegin(); it != tape.ops.rend(); ++it) {
    Node& n = **it;
    if (n.backward_fn) n.backward_fn(n);
  }
}

// ---------------------------------------------------------------- broadcast

namespace {

Shape broadcast_shape(const Shape& a, const Shape& b) {
  const int nd = std::max(a.size(), b.size());
  Shape out(nd);
  for (int i = 0; i < nd; ++i) {
    const int da = i < nd - static_cast<int>(a.size()) ? 1 : a[i - (nd - a.size())];
    const int db = i < nd - static_cast<int>(b.size()) ? 1 : b[i - (nd - b.size())];
    if (da != db && da != 1 && db != 1)
      throw ValidationError("shapes are not broadcast-compatible");
    out[i] = std::max(da, db);
  }
  return out;
}

// Strides of `shape` right-aligned inside `out`, 0 where broadcast.
std::vector<std::size_t> broadcast_strides(const Shape& shape, const Shape& out) {
  const int nd = static_cast<int>(out.size());
  const int off = nd - static_cast<int>(shape.size());
  std::vector<std::size_t> strides(nd, 0);
  std::size_t s = 1;
  for (int i = nd - 1; i >= 0; --i) {
    if (i >= off && shape[i - off] != 1) {
      strides[i] = s;
      s *= static_cast<std::size_t>(shape[i - off]);
    }
  }
  return strides;
}

struct BroadcastIter {
  Shape out;
  std::vector<std::size_t> sa, sb;
  std::size_t n;

  BroadcastIter(const Shape& a, const Shape& b)
      : out(broadcast_shape(a, b)),
        sa(broadcast_strides(a, out)),
        sb(broadcast_strides(b, out)),
        n(shape_size(out)) {}

  template <typename F>
  void each(F&& f) const {
    const int nd = static_cast<int>(out.size());
    std::vector<int> idx(nd, 0);
    std::size_t ia = 0, ib = 0;
    for (std::size_t i = 0; i < n; ++i) {
      f(i, ia, ib);
      for (int d = nd - 1; d >= 0; --d) {
        ++idx[d];
        ia += sa[d];
        ib += sb[d];
        if (idx[d] < out[d]) break;
        idx[d] = 0;
        ia -= sa[d] * static_cast<std::size_t>(out[d]);
        ib -= sb[d] * static_cast<std::size_t>(out[d]);
      }
    }
  }
};

template <typename FwdF, typename GradAF, typename GradBF>
Tensor binary_op(const Tensor& a, const Tensor& b, FwdF fwd, GradAF grad_a,
                 GradBF grad_b) {
  auto iter = std::make_shared<BroadcastIter>(a.shape(), b.shape());
  std::vector<double> out(iter->n);
  const auto& av = a.values();
  const auto& bv = b.values();
  iter->each([&](std::size_t i, std::size_t ia, std::size_t ib) {
    out[i] = fwd(av[ia], bv[ib]);
  });
  auto an = a.node();
  auto bn = b.node();
  return Tensor(make_node(iter->out, std::move(out), {an, bn}, [an, bn, iter, grad_a, grad_b](Node& n) {
    const bool need_a = an->requires_grad;
    const bool need_b = bn->requires_grad;
    if (need_a) an->ensure_grad();
    if (need_b) bn->ensure_grad();
    iter->each([&](std::size_t i, std::size_t ia, std::size_t ib) {
      const double g = n.grad[i];
      if (need_a) an->grad[ia] += grad_a(an->data[ia], bn->data[ib], g);
      if (need_b) bn->grad[ib] += grad_b(an->data[ia], bn->data[ib], g);
    });
  }));
}

template <typename FwdF, typename GradF>
Tensor unary_op(const Tensor& x, FwdF fwd, GradF grad) {
  std::vector<double> out(x.size());
  const auto& xv = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(xv[i]);
  auto xn = x.node();
  return Tensor(make_node(x.shape(), std::move(out), {xn}, [xn, grad](Node& n) {
    xn->ensure_grad();
    for (std::size_t i = 0; i < n.data.size(); ++i)
      xn->grad[i] += grad(xn->data[i], n.data[i], n.grad[i]);
  }));
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, [](double x, double y) { return x + y; },
      [](double, double, double g) { return g; },
      [](double, double, double g) { return g; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, [](double x, double y) { return x - y; },
      [](double, double, double g) { return g; },
      [](double, double, double g) { return -g; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, [](double x, double y) { return x * y; },
      [](double, double y, double g) { return g * y; },
      [](double x, double, double g) { return g * x; });
}

Tensor divide(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, [](double x, double y) { return x / y; },
      [](double, double y, double g) { return g / y; },
      [](double x, double y, double g) { return -g * x / (y * y); });
}

Tensor minimum(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, [](double x, double y) { return x <= y ? x : y; },
      [](double x, double y, double g) { return x <= y ? g : 0.0; },
      [](double x, double y, double g) { return x <= y ? 0.0 : g; });
}

Tensor maximum(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, [](double x, double y) { return x >= y ? x : y; },
      [](double x, double y, double g) { return x >= y ? g : 0.0; },
      [](double x, double y, double g) { return x >= y ? 0.0 : g; });
}

Tensor relu(const Tensor& x) {
  // Subgradient at 0 is 0.
  return unary_op(
      x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double, double g) { return v > 0.0 ? g : 0.0; });
}

Tensor sigmoid(const Tensor& x) {
  return unary_op(
      x,
      [](double v) {
        return v >= 0.0 ? 1.0 / (1.0 + std::exp(-v))
                        : std::exp(v) / (1.0 + std::exp(v));
      },
      [](double, double y, double g) { return g * y * (1.0 - y); });
}

Tensor exp_op(const Tensor& x) {
  return unary_op(x, [](double v) { return std::exp(v); },
                  [](double, double y, double g) { return g * y; });
}

Tensor log_op(const Tensor& x) {
  return unary_op(x, [](double v) { return std::log(v); },
                  [](double v, double, double g) { return g / v; });
}

Tensor neg(const Tensor& x) {
  return unary_op(x, [](double v) { return -v; },
                  [](double, double, double g) { return -g; });
}

Tensor scale(const Tensor& x, double c) {
  return unary_op(x, [c](double v) { return c * v; },
                  [c](double, double, double g) { return c * g; });
}

Tensor add_scalar(const Tensor& x, double c) {
  return unary_op(x, [c](double v) { return v + c; },
                  [](double, double, double g) { return g; });
}

Tensor clamp(const Tensor& x, double lo, double hi) {
  return unary_op(
      x, [lo, hi](double v) { return std::min(hi, std::max(lo, v)); },
      [lo, hi](double v, double, double g) { return (v > lo && v < hi) ? g : 0.0; });
}

Tensor sum_all(const Tensor& x) {
  double s = 0.0;
  for (double v : x.values()) s += v;
  auto xn = x.node();
  return Tensor(make_node({1}, {s}, {xn}, [xn](Node& n) {
    xn->ensure_grad();
    for (double& g : xn->grad) g += n.grad[0];
  }));
}

Tensor mean_all(const Tensor& x) {
  return scale(sum_all(x), 1.0 / static_cast<double>(x.size()));
}

namespace {

void axis_split(const Shape& shape, int axis, std::size_t& outer, std::size_t& n,
                std::size_t& inner) {
  if (axis < 0 || axis >= static_cast<int>(shape.size()))
    throw ValidationError("axis out of range");
  outer = 1;
  inner = 1;
  for (int i = 0; i < axis; ++i) outer *= shape[i];
  n = shape[axis];
  for (int i = axis + 1; i < static_cast<int>(shape.size()); ++i) inner *= shape[i];
}

Shape drop_axis(const Shape& shape, int axis) {
  Shape out;
  for (int i = 0; i < static_cast<int>(shape.size()); ++i)
    if (i != axis) out.push_back(shape[i]);
  if (out.empty()) out.push_back(1);
  return out;
}

}  // namespace

Tensor sum_axis(const Tensor& x, int axis) {
  std::size_t outer, n, inner;
  axis_split(x.shape(), axis, outer, n, inner);
  std::vector<double> out(outer * inner, 0.0);
  const auto& xv = x.values();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t k = 0; k < n; ++k)
      for (std::size_t i = 0; i < inner; ++i)
        out[o * inner + i] += xv[(o * n + k) * inner + i];
  auto xn = x.node();
  return Tensor(make_node(drop_axis(x.shape(), axis), std::move(out), {xn},
                          [xn, outer, n, inner](Node& nd) {
                            xn->ensure_grad();
                            for (std::size_t o = 0; o < outer; ++o)
                              for (std::size_t k = 0; k < n; ++k)
                                for (std::size_t i = 0; i < inner; ++i)
                                  xn->grad[(o * n + k) * inner + i] +=
                                      nd.grad[o * inner + i];
                          }));
}

Tensor mean_axis(const Tensor& x, int axis) {
  const double n = static_cast<double>(x.shape()[axis]);
  return scale(sum_axis(x, axis), 1.0 / n);
}

Tensor max_axis(const Tensor& x, int axis) {
  std::size_t outer, n, inner;
  axis_split(x.shape(), axis, outer, n, inner);
  std::vector<double> out(outer * inner);
  auto argmax = std::make_shared<std::vector<std::size_t>>(outer * inner);
  const auto& xv = x.values();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t i = 0; i < inner; ++i) {
      std::size_t best = (o * n) * inner + i;
      for (std::size_t k = 1; k < n; ++k) {
        const std::size_t idx = (o * n + k) * inner + i;
        if (xv[idx] > xv[best]) best = idx;
      }
      out[o * inner + i] = xv[best];
      (*argmax)[o * inner + i] = best;
    }
  auto xn = x.node();
  return Tensor(make_node(drop_axis(x.shape(), axis), std::move(out), {xn},
                          [xn, argmax](Node& nd) {
                            xn->ensure_grad();
                            for (std::size_t i = 0; i < nd.data.size(); ++i)
                              xn->grad[(*argmax)[i]] += nd.grad[i];
                          }));
}

Tensor reshape(const Tensor& x, const Shape& shape) {
  if (shape_size(shape) != x.size())
    throw ValidationError("reshape must preserve element count");
  auto xn = x.node();
  return Tensor(make_node(shape, x.values(), {xn}, [xn](Node& n) {
    xn->ensure_grad();
    for (std::size_t i = 0; i < n.data.size(); ++i) xn->grad[i] += n.grad[i];
  }));
}

Tensor transpose2d(const Tensor& x) {
  if (x.shape().size() != 2) throw ValidationError("transpose2d expects a matrix");
  const int r = x.dim(0), c = x.dim(1);
  std::vector<double> out(x.size());
  const auto& xv = x.values();
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) out[static_cast<std::size_t>(j) * r + i] = xv[static_cast<std::size_t>(i) * c + j];
  auto xn = x.node();
  return Tensor(make_node({c, r}, std::move(out), {xn}, [xn, r, c](Node& n) {
    xn->ensure_grad();
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j)
        xn->grad[static_cast<std::size_t>(i) * c + j] += n.grad[static_cast<std::size_t>(j) * r + i];
  }));
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw ValidationError("concat of nothing");
  const Shape& ref = parts[0].shape();
  Shape out_shape = ref;
  int total = 0;
  for (const Tensor& p : parts) {
    if (static_cast<int>(p.shape().size()) != static_cast<int>(ref.size()))
      throw ValidationError("concat rank mismatch");
    for (int i = 0; i < static_cast<int>(ref.size()); ++i)
      if (i != axis && p.shape()[i] != ref[i])
        throw ValidationError("concat shape mismatch off the concat axis");
    total += p.shape()[axis];
  }
  out_shape[axis] = total;

  std::size_t outer, n_out, inner;
  axis_split(out_shape, axis, outer, n_out, inner);
  std::vector<double> out(shape_size(out_shape));
  std::size_t offset = 0;
  for (const Tensor& p : parts) {
    const std::size_t np = p.shape()[axis];
    const auto& pv = p.values();
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t k = 0; k < np; ++k)
        for (std::size_t i = 0; i < inner; ++i)
          out[(o * n_out + offset + k) * inner + i] = pv[(o * np + k) * inner + i];
    offset += np;
  }

  std::vector<std::shared_ptr<Node>> parents;
  auto sizes = std::make_shared<std::vector<std::size_t>>();
  for (const Tensor& p : parts) {
    parents.push_back(p.node());
    sizes->push_back(p.shape()[axis]);
  }
  return Tensor(make_node(out_shape, std::move(out), parents,
                          [parents, sizes, outer, n_out, inner](Node& n) {
                            std::size_t off = 0;
                            for (std::size_t pi = 0; pi < parents.size(); ++pi) {
                              auto& par = parents[pi];
                              const std::size_t np = (*sizes)[pi];
                              if (par->requires_grad) {
                                par->ensure_grad();
                                for (std::size_t o = 0; o < outer; ++o)
                                  for (std::size_t k = 0; k < np; ++k)
                                    for (std::size_t i = 0; i < inner; ++i)
                                      par->grad[(o * np + k) * inner + i] +=
                                          n.grad[(o * n_out + off + k) * inner + i];
                              }
                              off += np;
                            }
                          }));
}

std::vector<Tensor> split(const Tensor& x, int axis, const std::vector<int>& sizes) {
  int total = 0;
  for (int s : sizes) total += s;
  if (total != x.shape()[axis])
    throw ValidationError("split sizes must sum to the axis length");
  std::size_t outer, n_in, inner;
  axis_split(x.shape(), axis, outer, n_in, inner);

  std::vector<Tensor> out;
  std::size_t offset = 0;
  auto xn = x.node();
  for (int s : sizes) {
    Shape shape = x.shape();
    shape[axis] = s;
    const std::size_t np = s;
    std::vector<double> data(shape_size(shape));
    const auto& xv = x.values();
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t k = 0; k < np; ++k)
        for (std::size_t i = 0; i < inner; ++i)
          data[(o * np + k) * inner + i] = xv[(o * n_in + offset + k) * inner + i];
    const std::size_t off_cap = offset;
    out.push_back(Tensor(make_node(shape, std::move(data), {xn},
                                   [xn, off_cap, np, outer, n_in, inner](Node& n) {
                                     xn->ensure_grad();
                                     for (std::size_t o = 0; o < outer; ++o)
                                       for (std::size_t k = 0; k < np; ++k)
                                         for (std::size_t i = 0; i < inner; ++i)
                                           xn->grad[(o * n_in + off_cap + k) * inner + i] +=
                                               n.grad[(o * np + k) * inner + i];
                                   })));
    offset += np;
  }
  return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.shape().size() != 2 || b.shape().size() != 2)
    throw ValidationError("matmul expects matrices");
  const int m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
  if (k != k2) throw ValidationError("matmul inner dimension mismatch");
  std::vector<double> out(static_cast<std::size_t>(m) * n, 0.0);
  const auto& av = a.values();
  const auto& bv = b.values();
  for (int i = 0; i < m; ++i)
    for (int p = 0; p < k; ++p) {
      const double aval = av[static_cast<std::size_t>(i) * k + p];
      const double* brow = bv.data() + static_cast<std::size_t>(p) * n;
      double* orow = out.data() + static_cast<std::size_t>(i) * n;
      for (int j = 0; j < n; ++j) orow[j] += aval * brow[j];
    }
  auto an = a.node();
  auto bn = b.node();
  return Tensor(make_node({m, n}, std::move(out), {an, bn}, [an, bn, m, k, n](Node& nd) {
    // dA = G B^T, dB = A^T G
    if (an->requires_grad) {
      an->ensure_grad();
      for (int i = 0; i < m; ++i)
        for (int p = 0; p < k; ++p) {
          double s = 0.0;
          const double* grow = nd.grad.data() + static_cast<std::size_t>(i) * n;
          const double* brow = bn->data.data() + static_cast<std::size_t>(p) * n;
          for (int j = 0; j < n; ++j) s += grow[j] * brow[j];
          an->grad[static_cast<std::size_t>(i) * k + p] += s;
        }
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (int i = 0; i < m; ++i)
        for (int p = 0; p < k; ++p) {
          const double aval = an->data[static_cast<std::size_t>(i) * k + p];
          const double* grow = nd.grad.data() + static_cast<std::size_t>(i) * n;
          double* brow = bn->grad.data() + static_cast<std::size_t>(p) * n;
          for (int j = 0; j < n; ++j) brow[j] += aval * grow[j];
        }
    }
  }));
}

Tensor softmax(const Tensor& x, int axis) {
  std::size_t outer, n, inner;
  axis_split(x.shape(), axis, outer, n, inner);
  std::vector<double> out(x.size());
  const auto& xv = x.values();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t i = 0; i < inner; ++i) {
      double mx = xv[(o * n) * inner + i];
      for (std::size_t k = 1; k < n; ++k)
        mx = std::max(mx, xv[(o * n + k) * inner + i]);
      double z = 0.0;
      for (std::size_t k = 0; k < n; ++k) {
        const double e = std::exp(xv[(o * n + k) * inner + i] - mx);
        out[(o * n + k) * inner + i] = e;
        z += e;
      }
      for (std::size_t k = 0; k < n; ++k) out[(o * n + k) * inner + i] /= z;
    }
  auto xn = x.node();
  return Tensor(make_node(x.shape(), std::move(out), {xn},
                          [xn, outer, n, inner](Node& nd) {
                            xn->ensure_grad();
                            for (std::size_t o = 0; o < outer; ++o)
                              for (std::size_t i = 0; i < inner; ++i) {
                                double dot = 0.0;
                                for (std::size_t k = 0; k < n; ++k) {
                                  const std::size_t idx = (o * n + k) * inner + i;
                                  dot += nd.grad[idx] * nd.data[idx];
                                }
                                for (std::size_t k = 0; k < n; ++k) {
                                  const std::size_t idx = (o * n + k) * inner + i;
                                  xn->grad[idx] += nd.data[idx] * (nd.grad[idx] - dot);
                                }
                              }
                          }));
}

namespace {

struct ConvDims {
  int n, c, h, w, cout, cin, kh, kw, oh, ow, stride, pad;
};

ConvDims conv_dims(const Shape& xs, const Shape& ws, int stride, int padding,
                   bool depthwise) {
  if (xs.size() != 4) throw ValidationError("conv input must be N,C,H,W");
  ConvDims d{};
  d.n = xs[0];
  d.c = xs[1];
  d.h = xs[2];
  d.w = xs[3];
  d.stride = stride;
  d.pad = padding;
  if (depthwise) {
    if (ws.size() != 3 || ws[0] != d.c)
      throw ValidationError("depthwise kernel must be C,kh,kw with one kernel per channel");
    d.cout = d.c;
    d.cin = 1;
    d.kh = ws[1];
    d.kw = ws[2];
  } else {
    if (ws.size() != 4 || ws[1] != d.c)
      throw ValidationError("conv kernel must be Cout,Cin,kh,kw with Cin = C");
    d.cout = ws[0];
    d.cin = ws[1];
    d.kh = ws[2];
    d.kw = ws[3];
  }
  if (stride < 1) throw ValidationError("conv stride must be positive");
  d.oh = (d.h + 2 * padding - d.kh) / stride + 1;
  d.ow = (d.w + 2 * padding - d.kw) / stride + 1;
  if (d.h + 2 * padding < d.kh || d.w + 2 * padding < d.kw || d.oh <= 0 || d.ow <= 0)
    throw ValidationError("conv output dimensions are non-positive");
  return d;
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, int stride, int padding) {
  const ConvDims d = conv_dims(x.shape(), w.shape(), stride, padding, false);
  std::vector<double> out(static_cast<std::size_t>(d.n) * d.cout * d.oh * d.ow, 0.0);
  const auto& xv = x.values();
  const auto& wv = w.values();

  auto xi = [d](int n, int c, int y, int xx) {
    return ((static_cast<std::size_t>(n) * d.c + c) * d.h + y) * d.w + xx;
  };
  auto oi = [d](int n, int c, int y, int xx) {
    return ((static_cast<std::size_t>(n) * d.cout + c) * d.oh + y) * d.ow + xx;
  };
  auto wi = [d](int co, int ci, int i, int j) {
    return ((static_cast<std::size_t>(co) * d.cin + ci) * d.kh + i) * d.kw + j;
  };

  for (int n = 0; n < d.n; ++n)
    for (int co = 0; co < d.cout; ++co)
      for (int ci = 0; ci < d.c; ++ci)
        for (int i = 0; i < d.kh; ++i)
          for (int j = 0; j < d.kw; ++j) {
            const double wval = wv[wi(co, ci, i, j)];
            if (wval == 0.0) continue;
            for (int oy = 0; oy < d.oh; ++oy) {
              const int y = oy * d.stride - d.pad + i;
              if (y < 0 || y >= d.h) continue;
              for (int ox = 0; ox < d.ow; ++ox) {
                const int xx = ox * d.stride - d.pad + j;
                if (xx < 0 || xx >= d.w) continue;
                out[oi(n, co, oy, ox)] += wval * xv[xi(n, ci, y, xx)];
              }
            }
          }

  auto xn = x.node();
  auto wn = w.node();
  return Tensor(make_node({d.n, d.cout, d.oh, d.ow}, std::move(out), {xn, wn},
                          [xn, wn, d, xi, oi, wi](Node& nd) {
                            const bool gx = xn->requires_grad;
                            const bool gw = wn->requires_grad;
                            if (gx) xn->ensure_grad();
                            if (gw) wn->ensure_grad();
                            for (int n = 0; n < d.n; ++n)
                              for (int co = 0; co < d.cout; ++co)
                                for (int ci = 0; ci < d.c; ++ci)
                                  for (int i = 0; i < d.kh; ++i)
                                    for (int j = 0; j < d.kw; ++j) {
                                      const std::size_t widx = wi(co, ci, i, j);
                                      const double wval = wn->data[widx];
                                      double wgrad = 0.0;
                                      for (int oy = 0; oy < d.oh; ++oy) {
                                        const int y = oy * d.stride - d.pad + i;
                                        if (y < 0 || y >= d.h) continue;
                                        for (int ox = 0; ox < d.ow; ++ox) {
                                          const int xx = ox * d.stride - d.pad + j;
                                          if (xx < 0 || xx >= d.w) continue;
                                          const double g = nd.grad[oi(n, co, oy, ox)];
                                          if (gx) xn->grad[xi(n, ci, y, xx)] += wval * g;
                                          if (gw) wgrad += g * xn->data[xi(n, ci, y, xx)];
                                        }
                                      }
                                      if (gw) wn->grad[widx] += wgrad;
                                    }
                          }));
}

Tensor depthwise_conv2d(const Tensor& x, const Tensor& w, int stride, int padding) {
  const ConvDims d = conv_dims(x.shape(), w.shape(), stride, padding, true);
  std::vector<double> out(static_cast<std::size_t>(d.n) * d.c * d.oh * d.ow, 0.0);
  const auto& xv = x.values();
  const auto& wv = w.values();

  auto xi = [d](int n, int c, int y, int xx) {
    return ((static_cast<std::size_t>(n) * d.c + c) * d.h + y) * d.w + xx;
  };
  auto oi = [d](int n, int c, int y, int xx) {
    return ((static_cast<std::size_t>(n) * d.c + c) * d.oh + y) * d.ow + xx;
  };
  auto wi = [d](int c, int i, int j) {
    return (static_cast<std::size_t>(c) * d.kh + i) * d.kw + j;
  };

  for (int n = 0; n < d.n; ++n)
    for (int c = 0; c < d.c; ++c)
      for (int i = 0; i < d.kh; ++i)
        for (int j = 0; j < d.kw; ++j) {
          const double wval = wv[wi(c, i, j)];
          for (int oy = 0; oy < d.oh; ++oy) {
            const int y = oy * d.stride - d.pad + i;
            if (y < 0 || y >= d.h) continue;
            for (int ox = 0; ox < d.ow; ++ox) {
              const int xx = ox * d.stride - d.pad + j;
              if (xx < 0 || xx >= d.w) continue;
              out[oi(n, c, oy, ox)] += wval * xv[xi(n, c, y, xx)];
            }
          }
        }

  auto xn = x.node();
  auto wn = w.node();
  return Tensor(make_node({d.n, d.c, d.oh, d.ow}, std::move(out), {xn, wn},
                          [xn, wn, d, xi, oi, wi](Node& nd) {
                            const bool gx = xn->requires_grad;
                            const bool gw = wn->requires_grad;
                            if (gx) xn->ensure_grad();
                            if (gw) wn->ensure_grad();
                            for (int n = 0; n < d.n; ++n)
                              for (int c = 0; c < d.c; ++c)
                                for (int i = 0; i < d.kh; ++i)
                                  for (int j = 0; j < d.kw; ++j) {
                                    const std::size_t widx = wi(c, i, j);
                                    const double wval = wn->data[widx];
                                    double wgrad = 0.0;
                                    for (int oy = 0; oy < d.oh; ++oy) {
                                      const int y = oy * d.stride - d.pad + i;
                                      if (y < 0 || y >= d.h) continue;
                                      for (int ox = 0; ox < d.ow; ++ox) {
                                        const int xx = ox * d.stride - d.pad + j;
                                        if (xx < 0 || xx >= d.w) continue;
                                        const double g = nd.grad[oi(n, c, oy, ox)];
                                        if (gx) xn->grad[xi(n, c, y, xx)] += wval * g;
                                        if (gw) wgrad += g * xn->data[xi(n, c, y, xx)];
                                      }
                                    }
                                    if (gw) wn->grad[widx] += wgrad;
                                  }
                          }));
}

Tensor upsample_nearest2x(const Tensor& x) {
  if (x.shape().size() != 4) throw ValidationError("upsample input must be N,C,H,W");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  std::vector<double> out(static_cast<std::size_t>(n) * c * 4 * h * w);
  const auto& xv = x.values();
  for (int b = 0; b < n * c; ++b)
    for (int y = 0; y < 2 * h; ++y)
      for (int xx = 0; xx < 2 * w; ++xx)
        out[(static_cast<std::size_t>(b) * 2 * h + y) * 2 * w + xx] =
            xv[(static_cast<std::size_t>(b) * h + y / 2) * w + xx / 2];
  auto xn = x.node();
  return Tensor(make_node({n, c, 2 * h, 2 * w}, std::move(out), {xn},
                          [xn, n, c, h, w](Node& nd) {
                            xn->ensure_grad();
                            for (int b = 0; b < n * c; ++b)
                              for (int y = 0; y < 2 * h; ++y)
                                for (int xx = 0; xx < 2 * w; ++xx)
                                  xn->grad[(static_cast<std::size_t>(b) * h + y / 2) * w + xx / 2] +=
                                      nd.grad[(static_cast<std::size_t>(b) * 2 * h + y) * 2 * w + xx];
                          }));
}

Tensor bce_with_logits(const Tensor& logits, const Tensor& targets) {
  if (logits.shape() != targets.shape())
    throw ValidationError("bce_with_logits shape mismatch");
  std::vector<double> out(logits.size());
  const auto& xv = logits.values();
  const auto& zv = targets.values();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double x = xv[i], z = zv[i];
    out[i] = std::max(x, 0.0) - x * z + std::log1p(std::exp(-std::abs(x)));
  }
  auto xn = logits.node();
  auto zn = targets.node();
  return Tensor(make_node(logits.shape(), std::move(out), {xn, zn}, [xn, zn](Node& nd) {
    if (xn->requires_grad) {
      xn->ensure_grad();
      for (std::size_t i = 0; i < nd.data.size(); ++i) {
        const double x = xn->data[i];
        const double s = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                                  : std::exp(x) / (1.0 + std::exp(x));
        xn->grad[i] += nd.grad[i] * (s - zn->data[i]);
      }
    }
    if (zn->requires_grad) {
      zn->ensure_grad();
      for (std::size_t i = 0; i < nd.data.size(); ++i)
        zn->grad[i] += nd.grad[i] * (-xn->data[i]);
    }
  }));
}

}  // namespace s2a
