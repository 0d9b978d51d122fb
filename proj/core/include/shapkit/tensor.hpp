#pragma once

// Minimal reverse-mode differentiation kernel over dense float64 tensors.
//
// A Tensor is a shared handle to an immutable-shape buffer. Operations run
// eagerly; when a Tape is active on the calling thread and any input requires
// gradients, the operation appends a node holding its backward rule. Reverse
// traversal of the tape then accumulates gradients into every tensor that
// requires them.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace shapkit::tk {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until the first accumulation
  bool requires_grad = false;
  bool leaf = true;

  void accumulate_grad(std::span<const double> g);
  std::vector<double>& grad_buffer();
};

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> data,
                     bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t dim() const { return impl_->shape.size(); }
  std::size_t size() const { return impl_->data.size(); }
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> data() const { return impl_->data; }
  // Writable view of the buffer. Only for leaves (parameters, inputs);
  // mutating a recorded intermediate invalidates its backward rule.
  std::span<double> mutable_data() { return impl_->data; }
  double item() const;
  double at(std::size_t r, std::size_t c) const {
    return impl_->data[r * cols() + c];
  }

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool value) { impl_->requires_grad = value; }
  bool is_leaf() const { return impl_->leaf; }

  // Gradient buffer (zeros of matching size when nothing has accumulated).
  std::vector<double> grad() const;
  bool has_grad() const { return !impl_->grad.empty(); }
  void zero_grad();

  // Deep copy as a fresh leaf with the same requires_grad flag.
  Tensor clone() const;
  // Same data, fresh leaf, never requires gradients.
  Tensor detach() const;

  TensorImpl* impl() const { return impl_.get(); }
  const std::shared_ptr<TensorImpl>& shared() const { return impl_; }

 private:
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<TensorImpl> impl_;

  friend Tensor make_result(Shape shape, std::vector<double> data);
};

// Internal constructor used by operations.
Tensor make_result(Shape shape, std::vector<double> data);

struct TapeNode {
  std::string tag;
  std::vector<std::shared_ptr<TensorImpl>> inputs;
  std::shared_ptr<TensorImpl> output;
  std::function<void()> backward;
};

// Ordered record of executed operations (the computation record). While
// alive it is the active recorder for the constructing thread; nesting
// restores the previous recorder on destruction.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* current();

  std::size_t size() const { return nodes_.size(); }
  const std::vector<TapeNode>& nodes() const { return nodes_; }
  void clear() { nodes_.clear(); }

  void record(TapeNode node) { nodes_.push_back(std::move(node)); }

 private:
  std::vector<TapeNode> nodes_;
  Tape* previous_;

  friend void backward(const Tensor& loss, Tape& tape);
};

// Suspends recording on this thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  Tape* saved_;
};

// Reverse pass from a scalar loss. Intermediate gradients are reset first;
// leaf gradients accumulate across calls until zero_grad().
void backward(const Tensor& loss, Tape& tape);

// ---------------------------------------------------------------------------
// Operations. Matrix operations take 2-D tensors; elementwise operations
// accept any shape but require both operands to match exactly.

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
// a[m x n] + row[n] broadcast over rows (bias add).
Tensor add_row(const Tensor& a, const Tensor& row);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);

Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t count);
Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t count);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor gather_rows(const Tensor& a, std::span<const std::size_t> rows);

Tensor softmax_rows(const Tensor& logits);
// Row softmax where columns with column_mask[j] == 0 receive an additive
// sentinel that underflows to exactly zero probability.
Tensor masked_softmax_rows(const Tensor& logits,
                           std::span<const std::uint8_t> column_mask);

// Per-row layer normalization with learnable gain and bias.
Tensor layer_norm_rows(const Tensor& x, const Tensor& gain, const Tensor& bias,
                       double eps = 1e-6);

Tensor gelu(const Tensor& a);
Tensor tanh(const Tensor& a);

// Elementwise op with caller-supplied value and derivative.
Tensor map_elementwise(const Tensor& a, const std::function<double(double)>& f,
                       const std::function<double(double)>& df,
                       const std::string& tag);

// axis 0 -> [1 x cols], axis 1 -> [rows x 1].
Tensor mean(const Tensor& a, std::size_t axis);
Tensor sum_all(const Tensor& a);
Tensor mean_all(const Tensor& a);

// Mean over rows of -log softmax(logits)[target].
Tensor cross_entropy_logits(const Tensor& logits,
                            std::span<const std::size_t> targets);
// Mean over rows of sum_j p_j log(p_j / q_j), logs clamped at 1e-12.
// p is treated as a constant.
Tensor kl_divergence(const Tensor& p, const Tensor& q);
// Mean of (a - b)^2 over all entries.
Tensor squared_error(const Tensor& a, const Tensor& b);

// ---------------------------------------------------------------------------

// Largest relative error max_i |analytic_i - central_i| / (|central_i| + 1e-8)
// between the taped gradient of fn at point and central differences with
// step h. fn must map a tensor to a scalar tensor.
double finite_difference_check(const std::function<Tensor(const Tensor&)>& fn,
                               const Tensor& point, double h = 1e-5);

}  // namespace shapkit::tk
