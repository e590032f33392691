#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "trajrec/autodiff.hpp"

namespace testutil {

// Compares reverse-mode gradients against central finite differences
// over every entry of every parameter in the store.
//
// `forward(sink)` must rebuild the computation from the store's current
// values; when sink != nullptr it wires a fresh Tape to it and runs
// backward with seed 1. It always returns the scalar loss.
//
// Returns max(|ad - fd| / max(1e-8, |ad| + |fd|)).
inline double check_gradients(
    trajrec::ad::ParamStore& store,
    const std::function<double(std::vector<trajrec::ad::Mat>*)>& forward,
    double h = 1e-5) {
  using trajrec::ad::Mat;
  std::vector<Mat> sink = store.make_grad_buffers();
  forward(&sink);

  double worst = 0.0;
  for (std::size_t pi = 0; pi < store.size(); ++pi) {
    auto& p = store[pi];
    for (std::size_t k = 0; k < p.value.size(); ++k) {
      const double orig = p.value.data[k];
      p.value.data[k] = orig + h;
      const double up = forward(nullptr);
      p.value.data[k] = orig - h;
      const double down = forward(nullptr);
      p.value.data[k] = orig;
      const double fd = (up - down) / (2.0 * h);
      const double ad = sink[pi].data[k];
      const double denom = std::max(1e-8, std::abs(fd) + std::abs(ad));
      worst = std::max(worst, std::abs(fd - ad) / denom);
    }
  }
  return worst;
}

// Fills a parameter with a deterministic, kink-avoiding pattern.
inline void fill_param(trajrec::ad::Param& p, double scale = 0.3,
                       double phase = 0.0) {
  for (std::size_t k = 0; k < p.value.size(); ++k) {
    p.value.data[k] = scale * std::sin(0.7 * static_cast<double>(k + 1) + phase);
  }
}

}  // namespace testutil
