#include "ctseg/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

#include "ctseg/kernels.hpp"

namespace ctseg {

namespace {
thread_local int64_t g_seq = 0;
thread_local bool g_grad_enabled = true;
thread_local ComputePrecision g_precision = ComputePrecision::f64;
}  // namespace

ComputePrecision compute_precision() { return g_precision; }
void set_compute_precision(ComputePrecision p) { g_precision = p; }

PrecisionGuard::PrecisionGuard(ComputePrecision p) : prev_(g_precision) {
  g_precision = p;
}
PrecisionGuard::~PrecisionGuard() { g_precision = prev_; }

int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int d : s) {
    if (d < 0) throw std::invalid_argument("shape extents must be non-negative");
    n *= d;
  }
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

void Node::ensure_grad() {
  if (grad.empty()) grad.assign(value.size(), 0.0);
}

void check_finite(const double* p, int64_t n, const char* what) {
  for (int64_t i = 0; i < n; ++i) {
    if (!std::isfinite(p[i])) {
      std::ostringstream os;
      os << "non-finite value in " << what << " at flat index " << i;
      throw std::runtime_error(os.str());
    }
  }
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  auto n = std::make_shared<Node>();
  const int64_t count = shape_numel(shape);
  n->shape = std::move(shape);
  n->value.assign(count, 0.0);
  n->requires_grad = requires_grad && g_grad_enabled;
  n->seq = ++g_seq;
  return Tensor(std::move(n));
}

Tensor Tensor::full(Shape shape, double v, bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  std::fill(t.node()->value.begin(), t.node()->value.end(), v);
  return t;
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data,
                         bool requires_grad) {
  const int64_t count = shape_numel(shape);
  if ((int64_t)data.size() != count)
    throw std::invalid_argument("from_data: " + shape_str(shape) + " needs " +
                                std::to_string(count) + " values, got " +
                                std::to_string(data.size()));
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(data);
  n->requires_grad = requires_grad && g_grad_enabled;
  n->seq = ++g_seq;
  return Tensor(std::move(n));
}

std::span<const double> Tensor::grad() const {
  if (node_->grad.empty())
    throw std::runtime_error("tensor has no gradient (backward not run?)");
  return node_->grad;
}

void Tensor::zero_grad() { node_->grad.clear(); }

double Tensor::item() const {
  if (numel() != 1) throw std::runtime_error("item(): tensor is not scalar");
  return node_->value[0];
}

double Tensor::at(std::initializer_list<int> idx) const {
  const Shape& s = node_->shape;
  if (idx.size() != s.size()) throw std::invalid_argument("at(): rank mismatch");
  int64_t flat = 0;
  int i = 0;
  for (int v : idx) {
    if (v < 0 || v >= s[i]) throw std::out_of_range("at(): index out of range");
    flat = flat * s[i] + v;
    ++i;
  }
  return node_->value[flat];
}

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

bool grad_enabled() { return g_grad_enabled; }

Tensor make_op_node(Shape shape, std::vector<Tensor> inputs,
                    std::function<void(Node&)> backprop) {
  auto n = std::make_shared<Node>();
  const int64_t count = shape_numel(shape);
  n->shape = std::move(shape);
  n->value.resize(count);
  n->seq = ++g_seq;
  bool req = false;
  if (g_grad_enabled) {
    for (const Tensor& t : inputs) req = req || t.requires_grad();
  }
  if (req) {
    n->requires_grad = true;
    n->parents.reserve(inputs.size());
    for (const Tensor& t : inputs) n->parents.push_back(t.node());
    n->backprop = std::move(backprop);
  }
  return Tensor(std::move(n));
}

// ---------------------------------------------------------------------------
// broadcasting

Shape broadcast_shape(const Shape& a, const Shape& b) {
  const size_t rank = std::max(a.size(), b.size());
  Shape out(rank);
  for (size_t i = 0; i < rank; ++i) {
    const int da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    const int db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (da != db && da != 1 && db != 1)
      throw std::invalid_argument("shapes " + shape_str(a) + " and " +
                                  shape_str(b) + " do not broadcast");
    out[i] = std::max(da, db);
  }
  return out;
}

namespace {

// Row-major strides of `s` aligned to the rank of `out`; 0 where broadcast.
std::vector<int64_t> aligned_strides(const Shape& s, const Shape& out) {
  std::vector<int64_t> st(out.size(), 0);
  int64_t stride = 1;
  for (int i = (int)s.size() - 1; i >= 0; --i) {
    const size_t oi = out.size() - s.size() + i;
    st[oi] = (s[i] == 1 && out[oi] != 1) ? 0 : stride;
    stride *= s[i];
  }
  return st;
}

struct BroadcastIter {
  Shape out;
  std::vector<int64_t> sa, sb;
  int64_t count;

  BroadcastIter(const Shape& a, const Shape& b) {
    out = broadcast_shape(a, b);
    sa = aligned_strides(a, out);
    sb = aligned_strides(b, out);
    count = shape_numel(out);
  }

  template <class F>
  void for_each(F&& f) const {
    const size_t rank = out.size();
    std::vector<int> coord(rank, 0);
    int64_t ia = 0, ib = 0;
    for (int64_t i = 0; i < count; ++i) {
      f(i, ia, ib);
      for (int d = (int)rank - 1; d >= 0; --d) {
        ++coord[d];
        ia += sa[d];
        ib += sb[d];
        if (coord[d] < out[d]) break;
        ia -= (int64_t)coord[d] * sa[d];
        ib -= (int64_t)coord[d] * sb[d];
        coord[d] = 0;
      }
    }
  }
};

bool same_shape(const Shape& a, const Shape& b) { return a == b; }

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  if (same_shape(a.shape(), b.shape())) {
    Tensor out = make_op_node(a.shape(), {a, b}, [](Node& self) {
      const auto& k = kern::active();
      for (int idx = 0; idx < 2; ++idx) {
        Node& p = *self.parents[idx];
        if (p.requires_grad)
          k.accumulate(self.numel(), self.grad.data(), p.grad.data());
      }
    });
    kern::active().add(a.numel(), a.data(), b.data(), out.data());
    check_finite(out.data(), out.numel(), "add output");
    return out;
  }
  BroadcastIter it(a.shape(), b.shape());
  Tensor out = make_op_node(it.out, {a, b}, [it](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    it.for_each([&](int64_t i, int64_t ia, int64_t ib) {
      if (pa.requires_grad) pa.grad[ia] += self.grad[i];
      if (pb.requires_grad) pb.grad[ib] += self.grad[i];
    });
  });
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
  it.for_each([&](int64_t i, int64_t ia, int64_t ib) { po[i] = pa[ia] + pb[ib]; });
  check_finite(po, out.numel(), "add output");
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  if (same_shape(a.shape(), b.shape())) {
    Tensor out = make_op_node(a.shape(), {a, b}, [](Node& self) {
      Node& pa = *self.parents[0];
      Node& pb = *self.parents[1];
      const int64_t n = self.numel();
      if (pa.requires_grad)
        for (int64_t i = 0; i < n; ++i) pa.grad[i] += self.grad[i] * pb.value[i];
      if (pb.requires_grad)
        for (int64_t i = 0; i < n; ++i) pb.grad[i] += self.grad[i] * pa.value[i];
    });
    kern::active().mul(a.numel(), a.data(), b.data(), out.data());
    check_finite(out.data(), out.numel(), "mul output");
    return out;
  }
  BroadcastIter it(a.shape(), b.shape());
  Tensor out = make_op_node(it.out, {a, b}, [it](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    it.for_each([&](int64_t i, int64_t ia, int64_t ib) {
      if (pa.requires_grad) pa.grad[ia] += self.grad[i] * pb.value[ib];
      if (pb.requires_grad) pb.grad[ib] += self.grad[i] * pa.value[ia];
    });
  });
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
  it.for_each([&](int64_t i, int64_t ia, int64_t ib) { po[i] = pa[ia] * pb[ib]; });
  check_finite(po, out.numel(), "mul output");
  return out;
}

Tensor relu(const Tensor& x) {
  Tensor out = make_op_node(x.shape(), {x}, [](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    kern::active().relu_backward(self.numel(), p.value.data(),
                                 self.grad.data(), p.grad.data());
  });
  kern::active().relu(x.numel(), x.data(), out.data());
  check_finite(out.data(), out.numel(), "relu output");
  return out;
}

Tensor sigmoid(const Tensor& x) {
  Tensor out = make_op_node(x.shape(), {x}, [](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    const int64_t n = self.numel();
    for (int64_t i = 0; i < n; ++i) {
      const double y = self.value[i];
      p.grad[i] += self.grad[i] * y * (1.0 - y);
    }
  });
  const int64_t n = x.numel();
  const double* px = x.data();
  double* po = out.data();
  for (int64_t i = 0; i < n; ++i) {
    const double v = px[i];
    if (v >= 0.0) {
      po[i] = 1.0 / (1.0 + std::exp(-v));
    } else {
      const double e = std::exp(v);
      po[i] = e / (1.0 + e);
    }
  }
  check_finite(po, n, "sigmoid output");
  return out;
}

Tensor scale(const Tensor& x, double alpha) {
  Tensor out = make_op_node(x.shape(), {x}, [alpha](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    kern::active().scale_accumulate(self.numel(), alpha, self.grad.data(),
                                    p.grad.data());
  });
  const int64_t n = x.numel();
  const double* px = x.data();
  double* po = out.data();
  for (int64_t i = 0; i < n; ++i) po[i] = alpha * px[i];
  check_finite(po, n, "scale output");
  return out;
}

namespace {
// [r][c] -> [c][r]
std::vector<double> transposed(const double* a, int rows, int cols) {
  std::vector<double> t((size_t)rows * cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) t[(size_t)j * rows + i] = a[(size_t)i * cols + j];
  return t;
}
}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2)
    throw std::invalid_argument("matmul expects rank-2 tensors");
  const int m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
  if (k != k2)
    throw std::invalid_argument("matmul inner extents differ: " +
                                shape_str(a.shape()) + " x " +
                                shape_str(b.shape()));
  Tensor out = make_op_node({m, n}, {a, b}, [m, k, n](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    const auto& kr = kern::active();
    if (pa.requires_grad) {
      // dA = dC * B^T
      std::vector<double> bt = transposed(pb.value.data(), k, n);
      std::vector<double> tmp((size_t)m * k);
      kr.matmul(m, n, k, self.grad.data(), bt.data(), tmp.data());
      kr.accumulate((int64_t)m * k, tmp.data(), pa.grad.data());
    }
    if (pb.requires_grad) {
      // dB = A^T * dC
      std::vector<double> at = transposed(pa.value.data(), m, k);
      std::vector<double> tmp((size_t)k * n);
      kr.matmul(k, m, n, at.data(), self.grad.data(), tmp.data());
      kr.accumulate((int64_t)k * n, tmp.data(), pb.grad.data());
    }
  });
  kern::active().matmul(m, k, n, a.data(), b.data(), out.data());
  check_finite(out.data(), out.numel(), "matmul output");
  return out;
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel())
    throw std::invalid_argument("reshape: element count mismatch " +
                                shape_str(x.shape()) + " -> " + shape_str(shape));
  Tensor out = make_op_node(std::move(shape), {x}, [](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    kern::active().accumulate(self.numel(), self.grad.data(), p.grad.data());
  });
  std::copy(x.data(), x.data() + x.numel(), out.data());
  return out;
}

Tensor concat_last(const std::vector<Tensor>& xs) {
  if (xs.empty()) throw std::invalid_argument("concat_last: no inputs");
  const Shape& s0 = xs[0].shape();
  int64_t rows = 1;
  for (size_t i = 0; i + 1 < s0.size(); ++i) rows *= s0[i];
  int total_c = 0;
  std::vector<int> widths;
  for (const Tensor& t : xs) {
    const Shape& s = t.shape();
    if (s.size() != s0.size() ||
        !std::equal(s.begin(), s.end() - 1, s0.begin()))
      throw std::invalid_argument("concat_last: leading extents differ");
    widths.push_back(s.back());
    total_c += s.back();
  }
  Shape out_shape = s0;
  out_shape.back() = total_c;
  std::vector<Tensor> inputs = xs;
  Tensor out = make_op_node(out_shape, inputs,
                            [rows, widths, total_c](Node& self) {
    int offset = 0;
    for (size_t idx = 0; idx < self.parents.size(); ++idx) {
      Node& p = *self.parents[idx];
      const int w = widths[idx];
      if (p.requires_grad) {
        for (int64_t r = 0; r < rows; ++r) {
          const double* g = self.grad.data() + r * total_c + offset;
          double* pg = p.grad.data() + r * w;
          for (int c = 0; c < w; ++c) pg[c] += g[c];
        }
      }
      offset += w;
    }
  });
  int offset = 0;
  for (size_t idx = 0; idx < xs.size(); ++idx) {
    const int w = widths[idx];
    const double* src = xs[idx].data();
    for (int64_t r = 0; r < rows; ++r)
      std::copy(src + r * w, src + (r + 1) * w,
                out.data() + r * total_c + offset);
    offset += w;
  }
  return out;
}

Tensor tile_hw(const Tensor& vec, int h, int w) {
  if (vec.rank() != 1) throw std::invalid_argument("tile_hw expects a vector");
  const int c = vec.dim(0);
  Tensor out = make_op_node({h, w, c}, {vec}, [h, w, c](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    for (int64_t i = 0; i < (int64_t)h * w; ++i) {
      const double* g = self.grad.data() + i * c;
      for (int j = 0; j < c; ++j) p.grad[j] += g[j];
    }
  });
  for (int64_t i = 0; i < (int64_t)h * w; ++i)
    std::copy(vec.data(), vec.data() + c, out.data() + i * c);
  return out;
}

Tensor slice_batch(const Tensor& x, int index) {
  if (x.rank() < 2) throw std::invalid_argument("slice_batch: rank must be >= 2");
  if (index < 0 || index >= x.dim(0))
    throw std::out_of_range("slice_batch: index out of range");
  Shape out_shape(x.shape().begin() + 1, x.shape().end());
  const int64_t count = shape_numel(out_shape);
  Tensor out = make_op_node(out_shape, {x}, [index, count](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    kern::active().accumulate(count, self.grad.data(),
                              p.grad.data() + (int64_t)index * count);
  });
  std::copy(x.data() + (int64_t)index * count,
            x.data() + (int64_t)(index + 1) * count, out.data());
  return out;
}

Tensor stack_batch(const std::vector<Tensor>& xs) {
  if (xs.empty()) throw std::invalid_argument("stack_batch: no inputs");
  const Shape& s0 = xs[0].shape();
  for (const Tensor& t : xs)
    if (t.shape() != s0)
      throw std::invalid_argument("stack_batch: shapes differ");
  Shape out_shape;
  out_shape.push_back((int)xs.size());
  out_shape.insert(out_shape.end(), s0.begin(), s0.end());
  const int64_t count = shape_numel(s0);
  Tensor out = make_op_node(out_shape, xs, [count](Node& self) {
    for (size_t i = 0; i < self.parents.size(); ++i) {
      Node& p = *self.parents[i];
      if (!p.requires_grad) continue;
      kern::active().accumulate(count, self.grad.data() + (int64_t)i * count,
                                p.grad.data());
    }
  });
  for (size_t i = 0; i < xs.size(); ++i)
    std::copy(xs[i].data(), xs[i].data() + count,
              out.data() + (int64_t)i * count);
  return out;
}

Tensor sum(const Tensor& x) {
  Tensor out = make_op_node({1}, {x}, [](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    const double g = self.grad[0];
    for (int64_t i = 0; i < p.numel(); ++i) p.grad[i] += g;
  });
  double acc = 0.0;
  const double* px = x.data();
  const int64_t n = x.numel();
  for (int64_t i = 0; i < n; ++i) acc += px[i];
  out.data()[0] = acc;
  check_finite(out.data(), 1, "sum output");
  return out;
}

void backward(const Tensor& loss) {
  if (!loss.defined()) throw std::invalid_argument("backward: empty tensor");
  Node* root = loss.node().get();
  if (root->numel() != 1)
    throw std::invalid_argument("backward: loss must be scalar, got " +
                                shape_str(root->shape));
  if (root->ran_backward)
    throw std::runtime_error(
        "backward: already run for this loss; build a fresh graph");
  if (!root->requires_grad)
    throw std::runtime_error("backward: loss is detached (no trainable input)");

  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<Node*> stack{root};
  while (!stack.empty()) {
    Node* n = stack.back();
    stack.pop_back();
    if (!seen.insert(n).second) continue;
    order.push_back(n);
    for (const auto& p : n->parents) stack.push_back(p.get());
  }
  // Creation order is topological; visit children before parents.
  std::sort(order.begin(), order.end(),
            [](Node* a, Node* b) { return a->seq > b->seq; });

  root->ensure_grad();
  root->grad[0] = 1.0;
  for (Node* n : order) {
    if (!n->backprop || n->grad.empty()) continue;
    for (const auto& p : n->parents)
      if (p->requires_grad) p->ensure_grad();
    n->backprop(*n);
  }
  for (Node* n : order)
    if (!n->grad.empty())
      check_finite(n->grad.data(), (int64_t)n->grad.size(), "gradient");
  root->ran_backward = true;
}

}  // namespace ctseg
