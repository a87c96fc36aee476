#pragma once

#include <cmath>
#include <cstring>
#include <functional>
#include <vector>

#include "ctseg/rng.hpp"
#include "ctseg/tensor.hpp"

namespace testutil {

inline void fill_uniform(ctseg::Tensor& t, ctseg::Rng& rng, double lo,
                         double hi) {
  for (int64_t i = 0; i < t.numel(); ++i) t.data()[i] = rng.uniform(lo, hi);
}

// Central finite differences against the analytic gradient of `leaf`.
// `loss_fn` must rebuild the graph from the leaf's current values.
// Returns the largest relative error over all leaf elements.
inline double max_rel_err_fd(const std::function<ctseg::Tensor()>& loss_fn,
                             ctseg::Tensor leaf, double h = 1e-5) {
  leaf.zero_grad();
  ctseg::Tensor loss = loss_fn();
  ctseg::backward(loss);
  std::vector<double> analytic(leaf.grad().begin(), leaf.grad().end());

  double worst = 0.0;
  for (int64_t i = 0; i < leaf.numel(); ++i) {
    const double saved = leaf.data()[i];
    leaf.data()[i] = saved + h;
    const double up = loss_fn().item();
    leaf.data()[i] = saved - h;
    const double down = loss_fn().item();
    leaf.data()[i] = saved;
    const double fd = (up - down) / (2.0 * h);
    const double denom = std::max({1e-6, std::fabs(analytic[i]), std::fabs(fd)});
    worst = std::max(worst, std::fabs(analytic[i] - fd) / denom);
  }
  leaf.zero_grad();
  return worst;
}

inline bool bits_equal(const double* a, const double* b, int64_t n) {
  return std::memcmp(a, b, (size_t)n * sizeof(double)) == 0;
}

}  // namespace testutil
