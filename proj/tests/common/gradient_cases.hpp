#pragma once

// Differentiable-operation cases shared by the unit and acceptance suites.
// Each case maps one input tensor to a scalar through a single operation.

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "shapkit/rng.hpp"
#include "shapkit/tensor.hpp"

namespace shapkit::testing {

using tk::Shape;
using tk::Tensor;
using namespace shapkit::tk;

inline Tensor random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  std::vector<double> data(shape_size(shape));
  for (double& v : data) v = scale * rng.normal();
  return Tensor::from(std::move(shape), std::move(data));
}

// Contracts an arbitrary-shaped output with fixed random weights so every
// output entry contributes to the scalar.
inline Tensor contract(const Tensor& t, const Tensor& weights) { return sum_all(mul(t, weights)); }

struct OpCase {
  std::string name;
  Shape input;
  std::function<Tensor(const Tensor&, Rng&)> build;  // returns a scalar
};

inline std::vector<OpCase> op_cases() {
  std::vector<OpCase> cases;
  auto fixed = [](Shape s, Rng& rng) { return random_tensor(std::move(s), rng); };
  cases.push_back({"add", {3, 4}, [=](const Tensor& x, Rng& r) {
                     return contract(add(x, fixed({3, 4}, r)), fixed({3, 4}, r));
                   }});
  cases.push_back({"sub", {3, 4}, [=](const Tensor& x, Rng& r) {
                     return contract(sub(fixed({3, 4}, r), x), fixed({3, 4}, r));
                   }});
  cases.push_back({"mul", {3, 4}, [=](const Tensor& x, Rng& r) {
                     return contract(mul(x, x), fixed({3, 4}, r));
                   }});
  cases.push_back({"scale", {2, 3}, [=](const Tensor& x, Rng& r) {
                     return contract(scale(x, -1.7), fixed({2, 3}, r));
                   }});
  cases.push_back({"add_row", {4}, [=](const Tensor& x, Rng& r) {
                     return contract(add_row(fixed({3, 4}, r), x), fixed({3, 4}, r));
                   }});
  cases.push_back({"matmul_left", {3, 4}, [=](const Tensor& x, Rng& r) {
                     return contract(matmul(x, fixed({4, 2}, r)), fixed({3, 2}, r));
                   }});
  cases.push_back({"matmul_right", {4, 2}, [=](const Tensor& x, Rng& r) {
                     return contract(matmul(fixed({3, 4}, r), x), fixed({3, 2}, r));
                   }});
  cases.push_back({"transpose", {3, 4}, [=](const Tensor& x, Rng& r) {
                     return contract(transpose(x), fixed({4, 3}, r));
                   }});
  cases.push_back({"reshape", {3, 4}, [=](const Tensor& x, Rng& r) {
                     return contract(reshape(x, {2, 6}), fixed({2, 6}, r));
                   }});
  cases.push_back({"slice_rows", {4, 3}, [=](const Tensor& x, Rng& r) {
                     return contract(slice_rows(x, 1, 2), fixed({2, 3}, r));
                   }});
  cases.push_back({"slice_cols", {3, 5}, [=](const Tensor& x, Rng& r) {
                     return contract(slice_cols(x, 2, 3), fixed({3, 3}, r));
                   }});
  cases.push_back({"concat_rows", {2, 3}, [=](const Tensor& x, Rng& r) {
                     return contract(concat_rows({fixed({1, 3}, r), x, x}), fixed({5, 3}, r));
                   }});
  cases.push_back({"concat_cols", {3, 2}, [=](const Tensor& x, Rng& r) {
                     return contract(concat_cols({x, fixed({3, 1}, r), x}), fixed({3, 5}, r));
                   }});
  cases.push_back({"gather_rows", {4, 2}, [=](const Tensor& x, Rng& r) {
                     const std::size_t rows[] = {3, 0, 3};
                     return contract(gather_rows(x, rows), fixed({3, 2}, r));
                   }});
  cases.push_back({"softmax_rows", {3, 4}, [=](const Tensor& x, Rng& r) {
                     return contract(softmax_rows(x), fixed({3, 4}, r));
                   }});
  cases.push_back({"masked_softmax_rows", {3, 5}, [=](const Tensor& x, Rng& r) {
                     const std::uint8_t mask[] = {1, 0, 1, 1, 0};
                     return contract(masked_softmax_rows(x, mask), fixed({3, 5}, r));
                   }});
  cases.push_back({"layer_norm_input", {3, 6}, [=](const Tensor& x, Rng& r) {
                     return contract(layer_norm_rows(x, fixed({6}, r), fixed({6}, r)),
                                     fixed({3, 6}, r));
                   }});
  cases.push_back({"layer_norm_gain", {6}, [=](const Tensor& x, Rng& r) {
                     return contract(layer_norm_rows(fixed({3, 6}, r), x, fixed({6}, r)),
                                     fixed({3, 6}, r));
                   }});
  cases.push_back({"layer_norm_bias", {6}, [=](const Tensor& x, Rng& r) {
                     return contract(layer_norm_rows(fixed({3, 6}, r), fixed({6}, r), x),
                                     fixed({3, 6}, r));
                   }});
  cases.push_back({"gelu", {3, 4}, [=](const Tensor& x, Rng& r) {
                     return contract(gelu(x), fixed({3, 4}, r));
                   }});
  cases.push_back({"tanh", {3, 4}, [=](const Tensor& x, Rng& r) {
                     return contract(tanh(x), fixed({3, 4}, r));
                   }});
  cases.push_back({"mean_axis0", {3, 4}, [=](const Tensor& x, Rng& r) {
                     return contract(mean(x, 0), fixed({1, 4}, r));
                   }});
  cases.push_back({"mean_axis1", {3, 4}, [=](const Tensor& x, Rng& r) {
                     return contract(mean(x, 1), fixed({3, 1}, r));
                   }});
  cases.push_back({"sum_all", {3, 4}, [=](const Tensor& x, Rng& r) {
                     return scale(sum_all(mul(x, fixed({3, 4}, r))), 1.3);
                   }});
  cases.push_back({"mean_all", {3, 4}, [=](const Tensor& x, Rng& r) {
                     return mean_all(mul(x, fixed({3, 4}, r)));
                   }});
  cases.push_back({"cross_entropy_logits", {3, 4}, [=](const Tensor& x, Rng&) {
                     const std::size_t targets[] = {1, 3, 0};
                     return cross_entropy_logits(x, targets);
                   }});
  cases.push_back({"kl_divergence", {2, 4}, [=](const Tensor& x, Rng& r) {
                     const Tensor p = softmax_rows(fixed({2, 4}, r)).detach();
                     return kl_divergence(p, softmax_rows(x));
                   }});
  cases.push_back({"squared_error", {3, 4}, [=](const Tensor& x, Rng& r) {
                     return squared_error(x, fixed({3, 4}, r));
                   }});
  return cases;
}

}  // namespace shapkit::testing
