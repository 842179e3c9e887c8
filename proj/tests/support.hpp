#pragma once

// Shared helpers for the test binaries: random tensors, bitwise comparison and
// a central-difference gradient checker.

#include <cmath>
#include <cstring>
#include <functional>
#include <vector>

#include "avq/avq.hpp"

// Expects `stmt` to throw avq::Error of the given kind.
#define EXPECT_ERROR_KIND(stmt, k)                                  \
  do {                                                              \
    try {                                                           \
      stmt;                                                         \
      ADD_FAILURE() << "no exception from " #stmt;                  \
    } catch (const ::avq::Error& e) {                               \
      EXPECT_EQ(e.kind(), ::avq::ErrorKind::k) << e.what();         \
    }                                                               \
  } while (0)

namespace avq::testing {

inline Tensor random_tensor(Shape shape, std::uint64_t seed, double scale = 1.0) {
  Rng rng(seed);
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<float>(rng.normal(0.0, scale));
  return t;
}

inline bool bit_equal(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() && std::memcmp(a.data().data(), b.data().data(), a.size() * sizeof(float)) == 0;
}

// Squared error summed over a row, averaged over rows.
inline double mean_sq_error(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::pow(double(a[i]) - b[i], 2);
  return s / static_cast<double>(a.rows());
}

// Norm-wise relative error between analytic and central-difference gradients
// of the scalar loss_fn() with respect to each leaf (worst leaf returned).
// The loss is re-evaluated in float32 and differenced in double.
inline double grad_check(const std::function<Var()>& loss_fn, std::vector<Var> leaves, double h = 1e-3) {
  for (auto& l : leaves) l.zero_grad();
  Var loss = loss_fn();
  backward(loss);
  double worst = 0.0;
  for (auto& leaf : leaves) {
    const Tensor analytic = leaf.grad();
    auto vals = leaf.mutable_value().data();
    double num2 = 0.0, ana2 = 0.0, diff2 = 0.0;
    for (std::size_t i = 0; i < vals.size(); ++i) {
      const float orig = vals[i];
      double fp, fm;
      {
        NoGradGuard ng;
        vals[i] = static_cast<float>(orig + h);
        fp = loss_fn().value()[0];
        vals[i] = static_cast<float>(orig - h);
        fm = loss_fn().value()[0];
      }
      vals[i] = orig;
      const double step = (static_cast<double>(static_cast<float>(orig + h)) -
                           static_cast<double>(static_cast<float>(orig - h)));
      const double numeric = (fp - fm) / step;
      num2 += numeric * numeric;
      ana2 += static_cast<double>(analytic[i]) * analytic[i];
      diff2 += (numeric - analytic[i]) * (numeric - analytic[i]);
    }
    const double denom = std::max({std::sqrt(num2), std::sqrt(ana2), 1e-8});
    worst = std::max(worst, std::sqrt(diff2) / denom);
  }
  return worst;
}

// sum(y * w) for a fixed random w, so every output element gets a distinct
// upstream gradient.
inline Var probe(const Var& y, std::uint64_t seed) {
  Tensor w = random_tensor(y.shape(), seed);
  const Tensor& out = y.value();
  double s = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) s += static_cast<double>(out[i]) * w[i];
  Node* yn = y.node();
  return detail::make_op(Tensor::scalar(static_cast<float>(s)), {y}, [yn, w](Node& self) {
    if (!yn->requires_grad) return;
    auto g = yn->grad_buffer().data();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[0] * w[i];
  });
}

inline SyntheticDataset small_dataset(std::size_t per_class = 20, double sigma = 0.05, std::uint64_t seed = 0) {
  DataConfig dc;
  dc.samples_per_class = per_class;
  dc.noise_sigma = sigma;
  dc.seed = seed;
  return generate(dc);
}

}  // namespace avq::testing
