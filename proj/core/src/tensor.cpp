#include "shapkit/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>
#include <utility>

#include "shapkit/errors.hpp"

namespace shapkit::tk {

namespace {

thread_local Tape* g_recorder = nullptr;

// Added to masked logits before normalization; exp() of the shifted value
// underflows to exactly 0.0.
constexpr double kMaskSentinel = -1e300;

Tape* recorder_for(std::initializer_list<const Tensor*> inputs) {
  Tape* tape = g_recorder;
  if (tape == nullptr) return nullptr;
  for (const Tensor* in : inputs) {
    if (in->requires_grad()) return tape;
  }
  return nullptr;
}

Tape* recorder_for(const std::vector<Tensor>& inputs) {
  Tape* tape = g_recorder;
  if (tape == nullptr) return nullptr;
  for (const Tensor& in : inputs) {
    if (in.requires_grad()) return tape;
  }
  return nullptr;
}

void record(Tape* tape, std::string tag,
            std::vector<std::shared_ptr<TensorImpl>> inputs, Tensor& out,
            std::function<void()> rule) {
  out.impl()->requires_grad = true;
  out.impl()->leaf = false;
  tape->record(TapeNode{std::move(tag), std::move(inputs), out.shared(),
                        std::move(rule)});
}

void require_defined(const Tensor& t, const char* op) {
  if (!t.defined()) throw UsageError(std::string(op) + ": undefined tensor");
}

void require_matrix(const Tensor& t, const char* op) {
  require_defined(t, op);
  if (t.dim() != 2) {
    throw UsageError(std::string(op) + ": expected a 2-D tensor, got shape " +
                     shape_string(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  require_defined(a, op);
  require_defined(b, op);
  if (a.shape() != b.shape()) {
    throw UsageError(std::string(op) + ": shape mismatch " +
                     shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
}

}  // namespace

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t s : shape) n *= s;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

void TensorImpl::accumulate_grad(std::span<const double> g) {
  std::vector<double>& buf = grad_buffer();
  for (std::size_t i = 0; i < g.size(); ++i) buf[i] += g[i];
}

std::vector<double>& TensorImpl::grad_buffer() {
  if (grad.empty()) grad.assign(data.size(), 0.0);
  return grad;
}

Tensor make_result(Shape shape, std::vector<double> data) {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  return Tensor(std::move(impl));
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  for (std::size_t s : shape) {
    if (s == 0) throw UsageError("tensor dimensions must be positive");
  }
  const std::size_t n = shape_size(shape);
  Tensor t = make_result(std::move(shape), std::vector<double>(n, value));
  t.impl()->requires_grad = requires_grad;
  return t;
}

Tensor Tensor::from(Shape shape, std::vector<double> data, bool requires_grad) {
  for (std::size_t s : shape) {
    if (s == 0) throw UsageError("tensor dimensions must be positive");
  }
  if (shape_size(shape) != data.size()) {
    throw UsageError("tensor data length " + std::to_string(data.size()) +
                     " does not match shape " + shape_string(shape));
  }
  Tensor t = make_result(std::move(shape), std::move(data));
  t.impl()->requires_grad = requires_grad;
  return t;
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from({1}, {value}, requires_grad);
}

std::size_t Tensor::rows() const {
  return impl_->shape.size() == 2 ? impl_->shape[0] : 1;
}

std::size_t Tensor::cols() const {
  return impl_->shape.empty() ? 1 : impl_->shape.back();
}

double Tensor::item() const {
  if (size() != 1) {
    throw UsageError("item() on non-scalar tensor " + shape_string(shape()));
  }
  return impl_->data[0];
}

std::vector<double> Tensor::grad() const {
  if (impl_->grad.empty()) return std::vector<double>(size(), 0.0);
  return impl_->grad;
}

void Tensor::zero_grad() { impl_->grad.clear(); }

Tensor Tensor::clone() const {
  Tensor t = make_result(impl_->shape, impl_->data);
  t.impl()->requires_grad = impl_->requires_grad;
  return t;
}

Tensor Tensor::detach() const { return make_result(impl_->shape, impl_->data); }

Tape::Tape() : previous_(g_recorder) { g_recorder = this; }

Tape::~Tape() { g_recorder = previous_; }

Tape* Tape::current() { return g_recorder; }

NoGradGuard::NoGradGuard() : saved_(g_recorder) { g_recorder = nullptr; }

NoGradGuard::~NoGradGuard() { g_recorder = saved_; }

void backward(const Tensor& loss, Tape& tape) {
  require_defined(loss, "backward");
  if (loss.size() != 1) {
    throw UsageError("backward: loss must be scalar, got shape " +
                     shape_string(loss.shape()));
  }
  if (!loss.requires_grad()) return;
  for (TapeNode& node : tape.nodes_) node.output->grad.clear();
  if (loss.is_leaf()) {
    loss.impl()->grad_buffer()[0] += 1.0;
    return;
  }
  loss.impl()->grad_buffer()[0] = 1.0;
  for (auto it = tape.nodes_.rbegin(); it != tape.nodes_.rend(); ++it) {
    if (it->output->grad.empty()) continue;
    it->backward();
  }
}

// ---------------------------------------------------------------------------
// Elementwise arithmetic

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.size());
  const auto x = a.data();
  const auto y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
  Tensor result = make_result(a.shape(), std::move(out));
  if (Tape* tape = recorder_for({&a, &b})) {
    TensorImpl* pa = a.impl();
    TensorImpl* pb = b.impl();
    TensorImpl* po = result.impl();
    record(tape, "add", {a.shared(), b.shared()}, result, [pa, pb, po] {
      if (pa->requires_grad) pa->accumulate_grad(po->grad);
      if (pb->requires_grad) pb->accumulate_grad(po->grad);
    });
  }
  return result;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.size());
  const auto x = a.data();
  const auto y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
  Tensor result = make_result(a.shape(), std::move(out));
  if (Tape* tape = recorder_for({&a, &b})) {
    TensorImpl* pa = a.impl();
    TensorImpl* pb = b.impl();
    TensorImpl* po = result.impl();
    record(tape, "sub", {a.shared(), b.shared()}, result, [pa, pb, po] {
      if (pa->requires_grad) pa->accumulate_grad(po->grad);
      if (pb->requires_grad) {
        auto& g = pb->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] -= po->grad[i];
      }
    });
  }
  return result;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.size());
  const auto x = a.data();
  const auto y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
  Tensor result = make_result(a.shape(), std::move(out));
  if (Tape* tape = recorder_for({&a, &b})) {
    TensorImpl* pa = a.impl();
    TensorImpl* pb = b.impl();
    TensorImpl* po = result.impl();
    record(tape, "mul", {a.shared(), b.shared()}, result, [pa, pb, po] {
      const auto& g = po->grad;
      if (pa->requires_grad) {
        auto& ga = pa->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * pb->data[i];
      }
      if (pb->requires_grad) {
        auto& gb = pb->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * pa->data[i];
      }
    });
  }
  return result;
}

Tensor scale(const Tensor& a, double factor) {
  require_defined(a, "scale");
  std::vector<double> out(a.size());
  const auto x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * factor;
  Tensor result = make_result(a.shape(), std::move(out));
  if (Tape* tape = recorder_for({&a})) {
    TensorImpl* pa = a.impl();
    TensorImpl* po = result.impl();
    record(tape, "scale", {a.shared()}, result, [pa, po, factor] {
      auto& ga = pa->grad_buffer();
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += po->grad[i] * factor;
    });
  }
  return result;
}

Tensor add_row(const Tensor& a, const Tensor& row) {
  require_matrix(a, "add_row");
  require_defined(row, "add_row");
  const std::size_t m = a.rows();
  const std::size_t n = a.cols();
  if (row.size() != n) {
    throw UsageError("add_row: row length " + std::to_string(row.size()) +
                     " does not match " + std::to_string(n) + " columns");
  }
  std::vector<double> out(a.size());
  const auto x = a.data();
  const auto r = row.data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = x[i * n + j] + r[j];
  }
  Tensor result = make_result(a.shape(), std::move(out));
  if (Tape* tape = recorder_for({&a, &row})) {
    TensorImpl* pa = a.impl();
    TensorImpl* pr = row.impl();
    TensorImpl* po = result.impl();
    record(tape, "add_row", {a.shared(), row.shared()}, result,
           [pa, pr, po, m, n] {
             if (pa->requires_grad) pa->accumulate_grad(po->grad);
             if (pr->requires_grad) {
               auto& gr = pr->grad_buffer();
               for (std::size_t i = 0; i < m; ++i) {
                 for (std::size_t j = 0; j < n; ++j) gr[j] += po->grad[i * n + j];
               }
             }
           });
  }
  return result;
}

// ---------------------------------------------------------------------------
// Linear algebra and layout

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const std::size_t m = a.rows();
  const std::size_t k = a.cols();
  const std::size_t n = b.cols();
  if (b.rows() != k) {
    throw UsageError("matmul: inner dimensions differ " +
                     shape_string(a.shape()) + " x " + shape_string(b.shape()));
  }
  std::vector<double> out(m * n, 0.0);
  const double* x = a.data().data();
  const double* y = b.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    double* orow = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double xv = x[i * k + p];
      const double* yrow = y + p * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += xv * yrow[j];
    }
  }
  Tensor result = make_result({m, n}, std::move(out));
  if (Tape* tape = recorder_for({&a, &b})) {
    TensorImpl* pa = a.impl();
    TensorImpl* pb = b.impl();
    TensorImpl* po = result.impl();
    record(tape, "matmul", {a.shared(), b.shared()}, result,
           [pa, pb, po, m, k, n] {
             const double* g = po->grad.data();
             if (pa->requires_grad) {
               double* ga = pa->grad_buffer().data();
               const double* y = pb->data.data();
               for (std::size_t i = 0; i < m; ++i) {
                 for (std::size_t p = 0; p < k; ++p) {
                   double acc = 0.0;
                   for (std::size_t j = 0; j < n; ++j) {
                     acc += g[i * n + j] * y[p * n + j];
                   }
                   ga[i * k + p] += acc;
                 }
               }
             }
             if (pb->requires_grad) {
               double* gb = pb->grad_buffer().data();
               const double* x = pa->data.data();
               for (std::size_t i = 0; i < m; ++i) {
                 for (std::size_t p = 0; p < k; ++p) {
                   const double xv = x[i * k + p];
                   for (std::size_t j = 0; j < n; ++j) {
                     gb[p * n + j] += xv * g[i * n + j];
                   }
                 }
               }
             }
           });
  }
  return result;
}

Tensor transpose(const Tensor& a) {
  require_matrix(a, "transpose");
  const std::size_t m = a.rows();
  const std::size_t n = a.cols();
  std::vector<double> out(a.size());
  const auto x = a.data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = x[i * n + j];
  }
  Tensor result = make_result({n, m}, std::move(out));
  if (Tape* tape = recorder_for({&a})) {
    TensorImpl* pa = a.impl();
    TensorImpl* po = result.impl();
    record(tape, "transpose", {a.shared()}, result, [pa, po, m, n] {
      auto& ga = pa->grad_buffer();
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += po->grad[j * m + i];
      }
    });
  }
  return result;
}

Tensor reshape(const Tensor& a, Shape shape) {
  require_defined(a, "reshape");
  if (shape_size(shape) != a.size()) {
    throw UsageError("reshape: cannot view " + shape_string(a.shape()) +
                     " as " + shape_string(shape));
  }
  Tensor result = make_result(std::move(shape),
                              std::vector<double>(a.data().begin(), a.data().end()));
  if (Tape* tape = recorder_for({&a})) {
    TensorImpl* pa = a.impl();
    TensorImpl* po = result.impl();
    record(tape, "reshape", {a.shared()}, result,
           [pa, po] { pa->accumulate_grad(po->grad); });
  }
  return result;
}

Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t count) {
  require_matrix(a, "slice_rows");
  const std::size_t n = a.cols();
  if (count == 0 || begin + count > a.rows()) {
    throw UsageError("slice_rows: range out of bounds");
  }
  const auto x = a.data();
  std::vector<double> out(x.begin() + begin * n, x.begin() + (begin + count) * n);
  Tensor result = make_result({count, n}, std::move(out));
  if (Tape* tape = recorder_for({&a})) {
    TensorImpl* pa = a.impl();
    TensorImpl* po = result.impl();
    record(tape, "slice_rows", {a.shared()}, result, [pa, po, begin, n] {
      auto& ga = pa->grad_buffer();
      for (std::size_t i = 0; i < po->grad.size(); ++i) {
        ga[begin * n + i] += po->grad[i];
      }
    });
  }
  return result;
}

Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t count) {
  require_matrix(a, "slice_cols");
  const std::size_t m = a.rows();
  const std::size_t n = a.cols();
  if (count == 0 || begin + count > n) {
    throw UsageError("slice_cols: range out of bounds");
  }
  const auto x = a.data();
  std::vector<double> out(m * count);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < count; ++j) {
      out[i * count + j] = x[i * n + begin + j];
    }
  }
  Tensor result = make_result({m, count}, std::move(out));
  if (Tape* tape = recorder_for({&a})) {
    TensorImpl* pa = a.impl();
    TensorImpl* po = result.impl();
    record(tape, "slice_cols", {a.shared()}, result,
           [pa, po, m, n, begin, count] {
             auto& ga = pa->grad_buffer();
             for (std::size_t i = 0; i < m; ++i) {
               for (std::size_t j = 0; j < count; ++j) {
                 ga[i * n + begin + j] += po->grad[i * count + j];
               }
             }
           });
  }
  return result;
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw UsageError("concat_rows: no inputs");
  const std::size_t n = parts.front().cols();
  std::size_t m = 0;
  for (const Tensor& p : parts) {
    require_matrix(p, "concat_rows");
    if (p.cols() != n) throw UsageError("concat_rows: column count differs");
    m += p.rows();
  }
  std::vector<double> out;
  out.reserve(m * n);
  for (const Tensor& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  Tensor result = make_result({m, n}, std::move(out));
  if (Tape* tape = recorder_for(parts)) {
    std::vector<std::shared_ptr<TensorImpl>> inputs;
    std::vector<TensorImpl*> raw;
    for (const Tensor& p : parts) {
      inputs.push_back(p.shared());
      raw.push_back(p.impl());
    }
    TensorImpl* po = result.impl();
    record(tape, "concat_rows", std::move(inputs), result, [raw, po] {
      std::size_t offset = 0;
      for (TensorImpl* p : raw) {
        const std::size_t len = p->data.size();
        if (p->requires_grad) {
          p->accumulate_grad(std::span<const double>(po->grad).subspan(offset, len));
        }
        offset += len;
      }
    });
  }
  return result;
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw UsageError("concat_cols: no inputs");
  const std::size_t m = parts.front().rows();
  std::size_t n = 0;
  for (const Tensor& p : parts) {
    require_matrix(p, "concat_cols");
    if (p.rows() != m) throw UsageError("concat_cols: row count differs");
    n += p.cols();
  }
  std::vector<double> out(m * n);
  std::size_t offset = 0;
  for (const Tensor& p : parts) {
    const std::size_t c = p.cols();
    const auto x = p.data();
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < c; ++j) out[i * n + offset + j] = x[i * c + j];
    }
    offset += c;
  }
  Tensor result = make_result({m, n}, std::move(out));
  if (Tape* tape = recorder_for(parts)) {
    std::vector<std::shared_ptr<TensorImpl>> inputs;
    std::vector<TensorImpl*> raw;
    for (const Tensor& p : parts) {
      inputs.push_back(p.shared());
      raw.push_back(p.impl());
    }
    TensorImpl* po = result.impl();
    record(tape, "concat_cols", std::move(inputs), result, [raw, po, m, n] {
      std::size_t offset = 0;
      for (TensorImpl* p : raw) {
        const std::size_t c = p->shape.back();
        if (p->requires_grad) {
          auto& g = p->grad_buffer();
          for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < c; ++j) {
              g[i * c + j] += po->grad[i * n + offset + j];
            }
          }
        }
        offset += c;
      }
    });
  }
  return result;
}

Tensor gather_rows(const Tensor& a, std::span<const std::size_t> rows) {
  require_matrix(a, "gather_rows");
  if (rows.empty()) throw UsageError("gather_rows: empty row list");
  const std::size_t n = a.cols();
  const auto x = a.data();
  std::vector<double> out;
  out.reserve(rows.size() * n);
  for (std::size_t r : rows) {
    if (r >= a.rows()) throw UsageError("gather_rows: row index out of range");
    out.insert(out.end(), x.begin() + r * n, x.begin() + (r + 1) * n);
  }
  Tensor result = make_result({rows.size(), n}, std::move(out));
  if (Tape* tape = recorder_for({&a})) {
    TensorImpl* pa = a.impl();
    TensorImpl* po = result.impl();
    std::vector<std::size_t> index(rows.begin(), rows.end());
    record(tape, "gather_rows", {a.shared()}, result, [pa, po, index, n] {
      auto& ga = pa->grad_buffer();
      for (std::size_t i = 0; i < index.size(); ++i) {
        for (std::size_t j = 0; j < n; ++j) {
          ga[index[i] * n + j] += po->grad[i * n + j];
        }
      }
    });
  }
  return result;
}

// ---------------------------------------------------------------------------
// Softmax family

namespace {

Tensor softmax_impl(const Tensor& logits, std::span<const std::uint8_t> mask,
                    const char* tag) {
  require_matrix(logits, tag);
  const std::size_t m = logits.rows();
  const std::size_t n = logits.cols();
  if (!mask.empty() && mask.size() != n) {
    throw UsageError(std::string(tag) + ": mask length " +
                     std::to_string(mask.size()) + " does not match " +
                     std::to_string(n) + " columns");
  }
  const bool masked = !mask.empty();
  if (masked && std::none_of(mask.begin(), mask.end(),
                             [](std::uint8_t v) { return v != 0; })) {
    throw DomainError(std::string(tag) + ": every column is masked");
  }
  const auto x = logits.data();
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = x.data() + i * n;
    double peak = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) {
      if (std::isnan(row[j])) throw DomainError(std::string(tag) + ": NaN logit");
      if (!masked || mask[j]) peak = std::max(peak, row[j]);
    }
    if (!std::isfinite(peak)) throw DomainError(std::string(tag) + ": non-finite logits");
    double total = 0.0;
    double* orow = out.data() + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      const double shifted = (masked && !mask[j]) ? row[j] + kMaskSentinel - peak
                                                  : row[j] - peak;
      orow[j] = std::exp(shifted);
      total += orow[j];
    }
    for (std::size_t j = 0; j < n; ++j) orow[j] /= total;
  }
  Tensor result = make_result({m, n}, std::move(out));
  if (Tape* tape = recorder_for({&logits})) {
    TensorImpl* pa = logits.impl();
    TensorImpl* po = result.impl();
    record(tape, tag, {logits.shared()}, result, [pa, po, m, n] {
      auto& ga = pa->grad_buffer();
      const auto& y = po->data;
      const auto& g = po->grad;
      for (std::size_t i = 0; i < m; ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j < n; ++j) dot += g[i * n + j] * y[i * n + j];
        for (std::size_t j = 0; j < n; ++j) {
          ga[i * n + j] += y[i * n + j] * (g[i * n + j] - dot);
        }
      }
    });
  }
  return result;
}

}  // namespace

Tensor softmax_rows(const Tensor& logits) {
  return softmax_impl(logits, {}, "softmax_rows");
}

Tensor masked_softmax_rows(const Tensor& logits,
                           std::span<const std::uint8_t> column_mask) {
  require_matrix(logits, "masked_softmax_rows");
  if (column_mask.size() != logits.cols()) {
    throw UsageError("masked_softmax_rows: mask length " +
                     std::to_string(column_mask.size()) + " does not match " +
                     std::to_string(logits.cols()) + " columns");
  }
  return softmax_impl(logits, column_mask, "masked_softmax_rows");
}

// ---------------------------------------------------------------------------
// Normalization and nonlinearities

Tensor layer_norm_rows(const Tensor& x, const Tensor& gain, const Tensor& bias,
                       double eps) {
  require_matrix(x, "layer_norm_rows");
  const std::size_t m = x.rows();
  const std::size_t n = x.cols();
  if (gain.size() != n || bias.size() != n) {
    throw UsageError("layer_norm_rows: gain/bias length must equal columns");
  }
  const auto in = x.data();
  const auto g = gain.data();
  const auto b = bias.data();
  std::vector<double> normed(m * n);
  std::vector<double> inv_std(m);
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = in.data() + i * n;
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += row[j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(n);
    const double r = 1.0 / std::sqrt(var + eps);
    inv_std[i] = r;
    for (std::size_t j = 0; j < n; ++j) {
      normed[i * n + j] = (row[j] - mu) * r;
      out[i * n + j] = normed[i * n + j] * g[j] + b[j];
    }
  }
  Tensor result = make_result({m, n}, std::move(out));
  if (Tape* tape = recorder_for({&x, &gain, &bias})) {
    TensorImpl* px = x.impl();
    TensorImpl* pg = gain.impl();
    TensorImpl* pb = bias.impl();
    TensorImpl* po = result.impl();
    record(tape, "layer_norm_rows", {x.shared(), gain.shared(), bias.shared()},
           result,
           [px, pg, pb, po, m, n, normed = std::move(normed),
            inv_std = std::move(inv_std)] {
             const auto& g = po->grad;
             if (pg->requires_grad) {
               auto& gg = pg->grad_buffer();
               for (std::size_t i = 0; i < m; ++i) {
                 for (std::size_t j = 0; j < n; ++j) {
                   gg[j] += g[i * n + j] * normed[i * n + j];
                 }
               }
             }
             if (pb->requires_grad) {
               auto& gb = pb->grad_buffer();
               for (std::size_t i = 0; i < m; ++i) {
                 for (std::size_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
               }
             }
             if (px->requires_grad) {
               auto& gx = px->grad_buffer();
               const double inv_n = 1.0 / static_cast<double>(n);
               for (std::size_t i = 0; i < m; ++i) {
                 double mean_dh = 0.0;
                 double mean_dh_h = 0.0;
                 for (std::size_t j = 0; j < n; ++j) {
                   const double dh = g[i * n + j] * pg->data[j];
                   mean_dh += dh;
                   mean_dh_h += dh * normed[i * n + j];
                 }
                 mean_dh *= inv_n;
                 mean_dh_h *= inv_n;
                 for (std::size_t j = 0; j < n; ++j) {
                   const double dh = g[i * n + j] * pg->data[j];
                   gx[i * n + j] += inv_std[i] * (dh - mean_dh -
                                                  normed[i * n + j] * mean_dh_h);
                 }
               }
             }
           });
  }
  return result;
}

namespace {

template <typename Value, typename Deriv>
Tensor unary(const Tensor& a, Value value, Deriv deriv, const std::string& tag) {
  require_defined(a, tag.c_str());
  const auto x = a.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = value(x[i]);
  Tensor result = make_result(a.shape(), std::move(out));
  if (Tape* tape = recorder_for({&a})) {
    TensorImpl* pa = a.impl();
    TensorImpl* po = result.impl();
    record(tape, tag, {a.shared()}, result, [pa, po, deriv] {
      auto& ga = pa->grad_buffer();
      for (std::size_t i = 0; i < ga.size(); ++i) {
        ga[i] += po->grad[i] * deriv(pa->data[i], po->data[i]);
      }
    });
  }
  return result;
}

}  // namespace

Tensor gelu(const Tensor& a) {
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  constexpr double kInvSqrt2Pi = 0.39894228040143267794;
  return unary(
      a, [](double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); },
      [](double x, double) {
        return 0.5 * (1.0 + std::erf(x * kInvSqrt2)) +
               x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
      },
      "gelu");
}

Tensor tanh(const Tensor& a) {
  return unary(
      a, [](double x) { return std::tanh(x); },
      [](double, double y) { return 1.0 - y * y; }, "tanh");
}

Tensor map_elementwise(const Tensor& a, const std::function<double(double)>& f,
                       const std::function<double(double)>& df,
                       const std::string& tag) {
  return unary(
      a, [&f](double x) { return f(x); },
      [df](double x, double) { return df(x); }, tag);
}

// ---------------------------------------------------------------------------
// Reductions and losses

Tensor mean(const Tensor& a, std::size_t axis) {
  require_matrix(a, "mean");
  const std::size_t m = a.rows();
  const std::size_t n = a.cols();
  if (axis > 1) throw UsageError("mean: axis must be 0 or 1");
  const auto x = a.data();
  std::vector<double> out(axis == 0 ? n : m, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out[axis == 0 ? j : i] += x[i * n + j];
  }
  const double denom = static_cast<double>(axis == 0 ? m : n);
  for (double& v : out) v /= denom;
  Tensor result = axis == 0 ? make_result({1, n}, std::move(out))
                            : make_result({m, 1}, std::move(out));
  if (Tape* tape = recorder_for({&a})) {
    TensorImpl* pa = a.impl();
    TensorImpl* po = result.impl();
    record(tape, "mean", {a.shared()}, result, [pa, po, m, n, axis, denom] {
      auto& ga = pa->grad_buffer();
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
          ga[i * n + j] += po->grad[axis == 0 ? j : i] / denom;
        }
      }
    });
  }
  return result;
}

Tensor sum_all(const Tensor& a) {
  require_defined(a, "sum_all");
  double total = 0.0;
  for (double v : a.data()) total += v;
  Tensor result = make_result({1}, {total});
  if (Tape* tape = recorder_for({&a})) {
    TensorImpl* pa = a.impl();
    TensorImpl* po = result.impl();
    record(tape, "sum_all", {a.shared()}, result, [pa, po] {
      auto& ga = pa->grad_buffer();
      for (double& g : ga) g += po->grad[0];
    });
  }
  return result;
}

Tensor mean_all(const Tensor& a) {
  require_defined(a, "mean_all");
  return scale(sum_all(a), 1.0 / static_cast<double>(a.size()));
}

Tensor cross_entropy_logits(const Tensor& logits,
                            std::span<const std::size_t> targets) {
  require_matrix(logits, "cross_entropy_logits");
  const std::size_t m = logits.rows();
  const std::size_t n = logits.cols();
  if (targets.size() != m) {
    throw UsageError("cross_entropy_logits: one target per row required");
  }
  const auto x = logits.data();
  std::vector<double> probs(m * n);
  double total = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    if (targets[i] >= n) throw UsageError("cross_entropy_logits: target out of range");
    const double* row = x.data() + i * n;
    double peak = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) {
      if (std::isnan(row[j])) throw DomainError("cross_entropy_logits: NaN logit");
      peak = std::max(peak, row[j]);
    }
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      probs[i * n + j] = std::exp(row[j] - peak);
      z += probs[i * n + j];
    }
    for (std::size_t j = 0; j < n; ++j) probs[i * n + j] /= z;
    total += std::log(z) + peak - row[targets[i]];
  }
  Tensor result = make_result({1}, {total / static_cast<double>(m)});
  if (Tape* tape = recorder_for({&logits})) {
    TensorImpl* pa = logits.impl();
    TensorImpl* po = result.impl();
    std::vector<std::size_t> t(targets.begin(), targets.end());
    record(tape, "cross_entropy_logits", {logits.shared()}, result,
           [pa, po, m, n, t = std::move(t), probs = std::move(probs)] {
             auto& ga = pa->grad_buffer();
             const double scale = po->grad[0] / static_cast<double>(m);
             for (std::size_t i = 0; i < m; ++i) {
               for (std::size_t j = 0; j < n; ++j) {
                 const double onehot = j == t[i] ? 1.0 : 0.0;
                 ga[i * n + j] += scale * (probs[i * n + j] - onehot);
               }
             }
           });
  }
  return result;
}

Tensor kl_divergence(const Tensor& p, const Tensor& q) {
  require_same_shape(p, q, "kl_divergence");
  require_matrix(q, "kl_divergence");
  constexpr double kFloor = 1e-12;
  const std::size_t m = q.rows();
  const auto pv = p.data();
  const auto qv = q.data();
  double total = 0.0;
  for (std::size_t i = 0; i < pv.size(); ++i) {
    if (std::isnan(pv[i]) || std::isnan(qv[i])) {
      throw DomainError("kl_divergence: NaN probability");
    }
    if (pv[i] <= 0.0) continue;
    total += pv[i] * (std::log(std::max(pv[i], kFloor)) -
                      std::log(std::max(qv[i], kFloor)));
  }
  Tensor result = make_result({1}, {total / static_cast<double>(m)});
  if (Tape* tape = recorder_for({&q})) {
    TensorImpl* pp = p.impl();
    TensorImpl* pq = q.impl();
    TensorImpl* po = result.impl();
    record(tape, "kl_divergence", {p.shared(), q.shared()}, result,
           [pp, pq, po, m] {
             auto& gq = pq->grad_buffer();
             const double scale = po->grad[0] / static_cast<double>(m);
             for (std::size_t i = 0; i < gq.size(); ++i) {
               if (pp->data[i] <= 0.0 || pq->data[i] <= kFloor) continue;
               gq[i] -= scale * pp->data[i] / pq->data[i];
             }
           });
  }
  return result;
}

Tensor squared_error(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "squared_error");
  const auto x = a.data();
  const auto y = b.data();
  double total = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) total += (x[i] - y[i]) * (x[i] - y[i]);
  const double count = static_cast<double>(x.size());
  Tensor result = make_result({1}, {total / count});
  if (Tape* tape = recorder_for({&a, &b})) {
    TensorImpl* pa = a.impl();
    TensorImpl* pb = b.impl();
    TensorImpl* po = result.impl();
    record(tape, "squared_error", {a.shared(), b.shared()}, result,
           [pa, pb, po, count] {
             const double scale = 2.0 * po->grad[0] / count;
             if (pa->requires_grad) {
               auto& ga = pa->grad_buffer();
               for (std::size_t i = 0; i < ga.size(); ++i) {
                 ga[i] += scale * (pa->data[i] - pb->data[i]);
               }
             }
             if (pb->requires_grad) {
               auto& gb = pb->grad_buffer();
               for (std::size_t i = 0; i < gb.size(); ++i) {
                 gb[i] -= scale * (pa->data[i] - pb->data[i]);
               }
             }
           });
  }
  return result;
}

// ---------------------------------------------------------------------------

double finite_difference_check(const std::function<Tensor(const Tensor&)>& fn,
                               const Tensor& point, double h) {
  require_defined(point, "finite_difference_check");
  if (!(h > 0.0)) throw UsageError("finite_difference_check: h must be positive");

  Tensor x = point.clone();
  x.set_requires_grad(true);
  std::vector<double> analytic;
  {
    Tape tape;
    Tensor y = fn(x);
    if (y.size() != 1) throw UsageError("finite_difference_check: fn must return a scalar");
    if (!std::isfinite(y.item())) {
      throw DomainError("finite_difference_check: non-finite function value");
    }
    backward(y, tape);
    analytic = x.grad();
  }

  NoGradGuard no_grad;
  auto eval_at = [&](std::size_t i, double delta) {
    Tensor probe = point.detach();
    probe.mutable_data()[i] += delta;
    const double v = fn(probe).item();
    if (!std::isfinite(v)) {
      throw DomainError("finite_difference_check: non-finite function value");
    }
    return v;
  };
  double worst = 0.0;
  for (std::size_t i = 0; i < point.size(); ++i) {
    const double central = (eval_at(i, h) - eval_at(i, -h)) / (2.0 * h);
    const double err = std::abs(analytic[i] - central) / (std::abs(central) + 1e-8);
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace shapkit::tk
