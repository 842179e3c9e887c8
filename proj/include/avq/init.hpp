#pragma once

#include <cmath>

#include "avq/rng.hpp"
#include "avq/tensor.hpp"

namespace avq {

inline Tensor xavier_uniform(Rng& rng, std::size_t fan_in, std::size_t fan_out) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor t({fan_in, fan_out});
  for (auto& v : t.data()) v = static_cast<float>(rng.uniform(-limit, limit));
  return t;
}

inline Tensor normal_tensor(Rng& rng, Shape shape, double stddev) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<float>(rng.normal(0.0, stddev));
  return t;
}

}  // namespace avq
