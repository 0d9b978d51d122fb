#pragma once

// Shared minibatch machinery for the three trainers (classifier, surrogate,
// explainer).

#include <cmath>
#include <cstddef>
#include <functional>
#include <vector>

#include "shapkit/errors.hpp"
#include "shapkit/parallel.hpp"
#include "shapkit/tensor.hpp"

namespace shapkit {

// Items per gradient chunk. Fixed so that summation order, and therefore
// the result, does not depend on the worker count.
inline constexpr std::size_t kGradientChunk = 4;

// Mean loss and mean gradient over `count` items. Model must provide
// clone() (a deep copy whose parameters require gradients) and
// parameters(). Each chunk works on its own replica; chunk gradients are
// summed in chunk order.
template <typename Model>
double batch_gradient(const Model& model, std::size_t count,
                      const std::function<tk::Tensor(const Model&, std::size_t)>& loss_fn,
                      std::vector<std::vector<double>>& grads, std::size_t step) {
  const std::size_t param_count = model.parameters().size();
  const std::size_t chunks = (count + kGradientChunk - 1) / kGradientChunk;
  std::vector<std::vector<std::vector<double>>> chunk_grads(chunks);
  std::vector<double> chunk_loss(chunks, 0.0);

  parallel_chunks(count, kGradientChunk,
                  [&](std::size_t c, std::size_t begin, std::size_t end) {
                    Model replica = model.clone();
                    const auto params = replica.parameters();
                    for (auto p : params) p.set_requires_grad(true);
                    double total = 0.0;
                    for (std::size_t i = begin; i < end; ++i) {
                      tk::Tape tape;
                      tk::Tensor loss = loss_fn(replica, i);
                      total += loss.item();
                      tk::backward(loss, tape);
                    }
                    chunk_loss[c] = total;
                    auto& out = chunk_grads[c];
                    out.reserve(params.size());
                    for (const auto& p : params) out.push_back(p.grad());
                  });

  grads.assign(param_count, {});
  double loss = 0.0;
  for (std::size_t c = 0; c < chunks; ++c) {
    loss += chunk_loss[c];
    for (std::size_t p = 0; p < param_count; ++p) {
      if (grads[p].empty()) {
        grads[p] = std::move(chunk_grads[c][p]);
      } else {
        for (std::size_t j = 0; j < grads[p].size(); ++j) grads[p][j] += chunk_grads[c][p][j];
      }
    }
  }
  const double inv = 1.0 / static_cast<double>(count);
  for (auto& g : grads) {
    for (double& v : g) v *= inv;
  }
  loss *= inv;
  if (!std::isfinite(loss)) throw TrainingError("non-finite training loss", step);
  return loss;
}

}  // namespace shapkit
