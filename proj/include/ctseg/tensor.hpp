#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace ctseg {

using Shape = std::vector<int>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

// One value in the autodiff graph. Nodes form a DAG through `parents`;
// `seq` is the creation index, which is a valid topological order because
// an op's inputs always exist before its output.
struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // allocated on first use during backward
  bool requires_grad = false;
  bool ran_backward = false;  // set on a loss node once backward() completes
  int64_t seq = 0;
  std::vector<std::shared_ptr<Node>> parents;
  // Scatters this node's grad into its parents' grads.
  std::function<void(Node&)> backprop;

  int64_t numel() const { return (int64_t)value.size(); }
  void ensure_grad();
};

// Value-semantic handle to a Node. Copies share the node.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> n) : node_(std::move(n)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double v, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<double> data,
                          bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int64_t numel() const { return node_->numel(); }
  int dim(int i) const { return node_->shape[i]; }
  int rank() const { return (int)node_->shape.size(); }

  double* data() { return node_->value.data(); }
  const double* data() const { return node_->value.data(); }
  std::span<const double> values() const { return node_->value; }

  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const double> grad() const;
  void zero_grad();

  double item() const;                        // scalar tensors only
  double at(std::initializer_list<int>) const;  // row-major index

  std::shared_ptr<Node> node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

// Arithmetic width of the heavy kernels on this thread. f64 is the default
// and the mode every oracle/property suite runs in; f32 is the training
// fast path (storage stays double, convolutions run single precision).
enum class ComputePrecision { f64, f32 };
ComputePrecision compute_precision();
void set_compute_precision(ComputePrecision p);

class PrecisionGuard {
 public:
  explicit PrecisionGuard(ComputePrecision p);
  ~PrecisionGuard();
  PrecisionGuard(const PrecisionGuard&) = delete;
  PrecisionGuard& operator=(const PrecisionGuard&) = delete;

 private:
  ComputePrecision prev_;
};

// While a guard is alive on a thread, ops on that thread do not record the
// graph (pure forward evaluation).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

bool grad_enabled();

// Graph-building helper used by every op implementation. Computes nothing;
// wires shape/req-grad/parents and assigns the creation index.
Tensor make_op_node(Shape shape, std::vector<Tensor> inputs,
                    std::function<void(Node&)> backprop);

// Throws if any value in [p, p+n) is NaN or infinite.
void check_finite(const double* p, int64_t n, const char* what);

// --- elementwise ops (trailing-dimension broadcasting: align shapes at the
// --- last axis; each pair of aligned extents must match or be 1)
Shape broadcast_shape(const Shape& a, const Shape& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor scale(const Tensor& x, double alpha);

// --- linear algebra
Tensor matmul(const Tensor& a, const Tensor& b);  // [M,K] x [K,N] -> [M,N]

// --- structure
Tensor reshape(const Tensor& x, Shape shape);
Tensor concat_last(const std::vector<Tensor>& xs);   // along the last axis
Tensor tile_hw(const Tensor& vec, int h, int w);     // [C] -> [h,w,C]
Tensor slice_batch(const Tensor& x, int index);      // [N,...] -> [...]
Tensor stack_batch(const std::vector<Tensor>& xs);   // k x [...] -> [k,...]
Tensor sum(const Tensor& x);                         // -> scalar [1]

// Reverse pass from a scalar loss. Every requires_grad leaf reachable from
// `loss` ends up holding d(loss)/d(leaf). A second call on the same loss
// node is an error; build a fresh graph instead.
void backward(const Tensor& loss);

}  // namespace ctseg
